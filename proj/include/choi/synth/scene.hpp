#pragma once

#include "choi/cascade/instance.hpp"

#include <string>
#include <vector>

namespace choi {

struct Vocabulary {
  std::vector<std::string> classes;
  std::vector<std::string> verbs;
  std::vector<bool> verb_geometric;  // relation group tag per verb

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_verbs() const { return verbs.size(); }

  void validate() const {
    if (classes.empty() || classes[std::size_t(kPersonClass)] != "person")
      throw std::invalid_argument("vocabulary: class 0 must be 'person'");
    if (verbs.size() < 2) throw std::invalid_argument("vocabulary: need at least two verbs");
    if (verb_geometric.size() != verbs.size()) throw std::invalid_argument("vocabulary: one group tag per verb");
  }
};

namespace world {
enum Class : int { person = 0, ball = 1, cup = 2, phone = 3, chair = 4 };
enum Verb : int { next_to = 0, on = 1, hold = 2, drink = 3, call = 4, kick = 5 };
}  // namespace world

inline Vocabulary default_vocabulary() {
  return {{"person", "ball", "cup", "phone", "chair"},
          {"next_to", "on", "hold", "drink", "call", "kick"},
          {true, true, false, false, false, false}};
}

struct Entity {
  int id = 0;
  int class_id = 0;
  Box box;
  BitMask mask;
  std::optional<Box> face;  // persons only
};

struct Triplet {
  int human = 0;  // entity ids
  int verb = 0;
  int object = 0;
  bool operator==(const Triplet&) const = default;
  auto operator<=>(const Triplet&) const = default;
};

/// Seed proposal: a jittered copy of an entity box (entity >= 0) or a
/// background box (entity == -1). `iou` is against the source entity.
struct Proposal {
  int class_id = 0;
  Box box;
  double iou = 0.0;
  int entity = -1;
};

struct Scene {
  std::string image_id;
  ImageSize size;
  std::vector<Entity> entities;
  std::vector<Triplet> triplets;
  std::vector<Proposal> proposals;

  const Entity& entity(int id) const {
    for (const auto& e : entities)
      if (e.id == id) return e;
    throw std::out_of_range("scene " + image_id + ": no entity with id " + std::to_string(id));
  }
};

/// A scene together with its feature grid.
struct Sample {
  Scene scene;
  Tensor grid;
};

}  // namespace choi
