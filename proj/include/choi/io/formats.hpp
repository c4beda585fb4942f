#pragma once

#include "choi/interaction/infer.hpp"
#include "choi/numerics/checkpoint.hpp"
#include "choi/synth/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>

namespace choi::io {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Feature grids: "FGRD", u32 version, u32 C, H, W, then C*H*W float32 LE.
// ---------------------------------------------------------------------------

constexpr char kGridMagic[4] = {'F', 'G', 'R', 'D'};
constexpr std::uint32_t kGridVersion = 1;

inline void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline std::string encode_grid(const Tensor& g) {
  if (g.rank() != 3) throw ShapeError("encode_grid: expected a (C, H, W) grid");
  std::string out(kGridMagic, 4);
  append_u32_le(out, kGridVersion);
  for (std::size_t d : g.shape()) append_u32_le(out, std::uint32_t(d));
  for (double v : g.values()) append_f32_le(out, float(v));
  return out;
}

inline Tensor decode_grid(const std::string& bytes, const std::string& what = "grid") {
  if (bytes.size() < 20 || bytes.compare(0, 4, std::string(kGridMagic, 4)) != 0)
    throw FormatError(what + ": bad magic (expected FGRD)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (read_u32_le(p + 4) != kGridVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(read_u32_le(p + 4)));
  const std::size_t C = read_u32_le(p + 8), H = read_u32_le(p + 12), W = read_u32_le(p + 16);
  if (bytes.size() != 20 + 4 * C * H * W)
    throw FormatError(what + ": payload is " + std::to_string(bytes.size() - 20) + " bytes, header says " +
                      std::to_string(4 * C * H * W));
  Tensor g = Tensor::grid(C, H, W);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = read_f32_le(p + 20 + 4 * i);
  return g;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

inline void write_grid(const fs::path& path, const Tensor& g) { write_file(path, encode_grid(g)); }
inline Tensor read_grid(const fs::path& path) { return decode_grid(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// JSON helpers.
// ---------------------------------------------------------------------------

inline json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box parse_box(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw FormatError("box must have 4 numbers");
  return {v[0], v[1], v[2], v[3]};
}

inline json mask_json(const BitMask& m) { return rle_encode(m); }

inline BitMask parse_mask(const json& j, const ImageSize& img) {
  try {
    return rle_decode(j.get<std::vector<std::uint32_t>>(), img.width, img.height);
  } catch (const ShapeError& e) {
    throw FormatError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Annotations: NDJSON, one scene per line.
// ---------------------------------------------------------------------------

inline json scene_json(const Scene& s) {
  json j;
  j["image_id"] = s.image_id;
  j["width"] = s.size.width;
  j["height"] = s.size.height;
  j["entities"] = json::array();
  for (const auto& e : s.entities) {
    json je{{"id", e.id}, {"class", e.class_id}, {"box", box_json(e.box)}, {"mask", mask_json(e.mask)}};
    je["face"] = e.face ? box_json(*e.face) : json(nullptr);
    j["entities"].push_back(je);
  }
  j["triplets"] = json::array();
  for (const auto& t : s.triplets) j["triplets"].push_back({{"human", t.human}, {"verb", t.verb}, {"object", t.object}});
  j["proposals"] = json::array();
  for (const auto& p : s.proposals)
    j["proposals"].push_back({{"class", p.class_id}, {"box", box_json(p.box)}, {"iou", p.iou}, {"entity", p.entity}});
  return j;
}

inline Scene parse_scene(const json& j, const Vocabulary& vocab) {
  Scene s;
  s.image_id = j.at("image_id").get<std::string>();
  s.size = {j.at("width").get<std::size_t>(), j.at("height").get<std::size_t>()};
  for (const auto& je : j.at("entities")) {
    Entity e;
    e.id = je.at("id");
    e.class_id = je.at("class");
    if (e.class_id < 0 || std::size_t(e.class_id) >= vocab.num_classes())
      throw FormatError("entity " + std::to_string(e.id) + ": class " + std::to_string(e.class_id) + " not in vocabulary");
    e.box = parse_box(je.at("box"));
    e.mask = parse_mask(je.at("mask"), s.size);
    if (je.contains("face") && !je.at("face").is_null()) e.face = parse_box(je.at("face"));
    s.entities.push_back(std::move(e));
  }
  for (const auto& jt : j.at("triplets")) {
    Triplet t{jt.at("human"), jt.at("verb"), jt.at("object")};
    if (t.verb < 0 || std::size_t(t.verb) >= vocab.num_verbs())
      throw FormatError("triplet verb " + std::to_string(t.verb) + " not in vocabulary");
    try {
      if (s.entity(t.human).class_id != kPersonClass) throw FormatError("triplet human is not a person");
      s.entity(t.object);
    } catch (const std::out_of_range& e) {
      throw FormatError(std::string("triplet: ") + e.what());
    }
    s.triplets.push_back(t);
  }
  for (const auto& jp : j.at("proposals"))
    s.proposals.push_back({jp.at("class"), parse_box(jp.at("box")), jp.at("iou"), jp.at("entity")});
  return s;
}

/// Parses one NDJSON record per non-empty line, reporting the line on error.
template <typename F>
void for_each_line(const fs::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(no) + ": " + e.what());
    }
  }
}

inline void write_annotations(const fs::path& path, const std::vector<Scene>& scenes) {
  std::string out;
  for (const auto& s : scenes) out += scene_json(s).dump() + '\n';
  write_file(path, out);
}

inline std::vector<Scene> read_annotations(const fs::path& path, const Vocabulary& vocab) {
  std::vector<Scene> out;
  for_each_line(path, [&](const json& j) { out.push_back(parse_scene(j, vocab)); });
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary.
// ---------------------------------------------------------------------------

inline json vocab_json(const Vocabulary& v) {
  return {{"classes", v.classes}, {"verbs", v.verbs}, {"verb_geometric", v.verb_geometric}};
}

inline Vocabulary parse_vocab(const json& j) {
  Vocabulary v{j.at("classes").get<std::vector<std::string>>(), j.at("verbs").get<std::vector<std::string>>(),
               j.at("verb_geometric").get<std::vector<bool>>()};
  try {
    v.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return v;
}

// ---------------------------------------------------------------------------
// Dataset directory: annotations.ndjson, vocab.json, grids/<image_id>.fgrd.
// ---------------------------------------------------------------------------

inline void write_dataset(const fs::path& dir, const std::vector<Sample>& data, const Vocabulary& vocab) {
  fs::create_directories(dir / "grids");
  write_file(dir / "vocab.json", vocab_json(vocab).dump(1) + '\n');
  std::vector<Scene> scenes;
  for (const auto& s : data) {
    scenes.push_back(s.scene);
    write_grid(dir / "grids" / (s.scene.image_id + ".fgrd"), s.grid);
  }
  write_annotations(dir / "annotations.ndjson", scenes);
}

inline Vocabulary read_vocab(const fs::path& dir) {
  try {
    return parse_vocab(json::parse(read_file(dir / "vocab.json")));
  } catch (const json::exception& e) {
    throw FormatError((dir / "vocab.json").string() + ": " + e.what());
  }
}

inline std::vector<Sample> read_dataset(const fs::path& dir, Vocabulary* vocab_out = nullptr) {
  const Vocabulary vocab = read_vocab(dir);
  std::vector<Sample> out;
  for (auto& s : read_annotations(dir / "annotations.ndjson", vocab)) {
    Tensor g = read_grid(dir / "grids" / (s.image_id + ".fgrd"));
    out.push_back({std::move(s), std::move(g)});
  }
  if (vocab_out) *vocab_out = vocab;
  return out;
}

// ---------------------------------------------------------------------------
// Predictions: NDJSON, one image per line.
// ---------------------------------------------------------------------------

inline json prediction_json(const ImagePrediction& p, bool with_masks) {
  json j;
  j["image_id"] = p.image_id;
  j["instances"] = json::array();
  for (const auto& inst : p.instances) {
    json ji{{"class", inst.class_id}, {"confidence", inst.confidence}, {"box", box_json(inst.box)}, {"stage", inst.stage}};
    if (with_masks && inst.mask) ji["mask"] = mask_json(*inst.mask);
    j["instances"].push_back(ji);
  }
  j["triplets"] = json::array();
  for (const auto& t : p.triplets) {
    json jt{{"h_box", box_json(p.instances[t.human].box)},
            {"o_box", box_json(p.instances[t.object].box)},
            {"verb", t.verb},
            {"score", t.score}};
    if (with_masks) {
      jt["h_mask_ref"] = t.human;
      jt["o_mask_ref"] = t.object;
    }
    j["triplets"].push_back(jt);
  }
  return j;
}

inline void write_predictions(const fs::path& path, const std::vector<ImagePrediction>& preds, bool with_masks) {
  std::string out;
  for (const auto& p : preds) out += prediction_json(p, with_masks).dump() + '\n';
  write_file(path, out);
}

/// Reads predictions as metric records; mask refs resolve against the
/// image's instance list. `sizes` gives each image's dimensions for masks.
inline std::vector<ImageTriplets> read_prediction_records(const fs::path& path,
                                                          const std::map<std::string, ImageSize>& sizes) {
  std::vector<ImageTriplets> out;
  for_each_line(path, [&](const json& j) {
    ImageTriplets it;
    it.image_id = j.at("image_id").get<std::string>();
    std::vector<std::shared_ptr<const BitMask>> masks;
    if (j.contains("instances"))
      for (const auto& ji : j.at("instances")) {
        if (ji.contains("mask")) {
          auto sz = sizes.find(it.image_id);
          if (sz == sizes.end()) throw FormatError("prediction for unknown image '" + it.image_id + "'");
          masks.push_back(std::make_shared<const BitMask>(parse_mask(ji.at("mask"), sz->second)));
        } else {
          masks.push_back(nullptr);
        }
      }
    auto ref = [&](const json& jt, const char* key) -> std::shared_ptr<const BitMask> {
      if (!jt.contains(key)) return nullptr;
      const auto r = jt.at(key).get<std::size_t>();
      if (r >= masks.size()) throw FormatError(std::string(key) + " out of range");
      return masks[r];
    };
    for (const auto& jt : j.at("triplets"))
      it.triplets.push_back({parse_box(jt.at("h_box")), parse_box(jt.at("o_box")), ref(jt, "h_mask_ref"),
                             ref(jt, "o_mask_ref"), jt.at("verb").get<int>(), jt.at("score").get<double>()});
    out.push_back(std::move(it));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Config files: `key = value` lines, '#' comments.
// ---------------------------------------------------------------------------

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> parse_config(const std::string& text, const std::string& what = "config") {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw FormatError(what + ":" + std::to_string(no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError(what + ":" + std::to_string(no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::map<std::string, std::string> read_config(const fs::path& path) {
  return parse_config(read_file(path), path.string());
}

}  // namespace choi::io
