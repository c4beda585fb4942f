#pragma once

#include "choi/numerics/conv.hpp"
#include "choi/numerics/layers.hpp"

#include <string>
#include <vector>

namespace choi {

/// Named, non-owning view over the parameter blocks of a model.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Param* param;
  };

  void add(std::string name, Param& p) {
    if (p.grad.shape() != p.value.shape())
      throw ShapeError("param " + name + ": grad " + shape_str(p.grad.shape()) + " vs value " +
                       shape_str(p.value.shape()));
    entries_.push_back({std::move(name), &p});
  }
  void add(const std::string& prefix, FCLayer& l) {
    add(prefix + ".weight", l.weight);
    add(prefix + ".bias", l.bias);
  }
  void add(const std::string& prefix, FCStack& s) {
    add(prefix + ".0", s.first);
    add(prefix + ".1", s.second);
  }
  void add(const std::string& prefix, ConvPoolEncoder& e) {
    add(prefix + ".conv1.kernel", e.conv1.kernel);
    add(prefix + ".conv1.bias", e.conv1.bias);
    add(prefix + ".conv2.kernel", e.conv2.kernel);
    add(prefix + ".conv2.bias", e.conv2.bias);
    add(prefix + ".fc", e.fc);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  Param* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.param;
    return nullptr;
  }
  std::size_t num_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.param->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.param->zero_grad();
  }

 private:
  std::vector<Entry> entries_;
};

/// p <- p - lr * grad for every block, then zero the gradients.
/// A non-finite gradient aborts the step before anything is modified.
inline void sgd_step(ParamStore& store, double lr) {
  for (const auto& e : store.entries())
    if (!e.param->grad.all_finite()) throw TrainingError("non-finite gradient in parameter block '" + e.name + "'");
  for (const auto& e : store.entries()) {
    auto g = e.param->grad.flat();
    e.param->value.flat() -= lr * g;
    g.setZero();
  }
}

/// Global L2 norm over every gradient block.
inline double grad_norm(const ParamStore& store) {
  double sq = 0.0;
  for (const auto& e : store.entries()) sq += e.param->grad.flat().squaredNorm();
  return std::sqrt(sq);
}

/// Scales every gradient so the global L2 norm is at most max_norm.
inline double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = grad_norm(store);
  if (norm > max_norm && norm > 0.0)
    for (const auto& e : store.entries()) e.param->grad.flat() *= max_norm / norm;
  return norm;
}

}  // namespace choi
