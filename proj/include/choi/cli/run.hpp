#pragma once

#include "choi/interaction/infer.hpp"
#include "choi/interaction/train.hpp"
#include "choi/io/formats.hpp"
#include "choi/metrics/evaluate.hpp"
#include "choi/synth/generate.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>

namespace choi {

/// Bad or contradictory configuration; the message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Narrower FC stacks for ablation sweeps that train several models in one
/// process.
inline ModelDims desk_dims() {
  ModelDims d;
  d.fuse_hidden = 256;
  d.efra_hidden = 64;
  return d;
}

struct RunConfig {
  PipelineMode mode = PipelineMode::detect;
  Representation rep = Representation::box;
  FusionRule fusion = FusionRule::hadamard;
  CascadeConfig cascade;
  ModelDims dims;
  TrainOptions train = default_train();
  std::uint64_t model_seed = 1;

  SceneSpec scene;
  std::size_t train_scenes = 300;
  std::size_t test_scenes = 100;
  std::size_t test_offset = 100000;  // scene index of the first test scene

  std::string data_dir, test_dir, model_path, predictions_path, report_path;

  static TrainOptions default_train() {
    TrainOptions t;
    t.lr = 0.01;
    t.loc_epochs = 30;
    t.joint_epochs = 6;
    t.clip_norm = 5.0;
    return t;
  }

  /// Cross-field checks; everything else is validated where it is parsed.
  void validate() const {
    cascade.validate();
    scene.validate();
    if (rep == Representation::mask && mode != PipelineMode::segment)
      throw ConfigError("representation = mask requires mode = segment");
    if (dims.num_classes != scene.vocab.num_classes() || dims.num_verbs != scene.vocab.num_verbs() ||
        dims.channels != scene.channels())
      throw ConfigError("model dims do not match the scene vocabulary");
    if (train.lr < 0) throw ConfigError("lr: must be non-negative");
    if (train.loc_epochs < 0 || train.joint_epochs < 0) throw ConfigError("epochs: must be non-negative");
  }

  MatchMode recall_mode() const { return mode == PipelineMode::segment ? MatchMode::mask : MatchMode::box; }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const long long i = to_int(key, v);
  if (i < 0) throw ConfigError(key + ": must be non-negative");
  return std::size_t(i);
}

inline std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, io::trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Applies `key = value` settings over the defaults. `stages` is applied first
/// so per-stage lists given alongside it override the derived schedule.
inline RunConfig apply_settings(RunConfig cfg, const std::map<std::string, std::string>& kv) {
  using namespace detail;
  if (auto it = kv.find("stages"); it != kv.end()) {
    const long long T = to_int("stages", it->second);
    try {
      const CascadeConfig base = cfg.cascade;
      cfg.cascade = CascadeConfig::with_stages(int(T));
      cfg.cascade.merge_threshold = base.merge_threshold;
      cfg.cascade.top_k = base.top_k;
      cfg.cascade.rank_margin = base.rank_margin;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("stages: ") + e.what());
    }
  }
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"stages", [](auto&, auto&) {}},
      {"mode",
       [&](auto& k, auto& v) {
         if (v != "detect" && v != "segment") throw ConfigError(k + ": expected detect or segment");
         cfg.mode = v == "segment" ? PipelineMode::segment : PipelineMode::detect;
       }},
      {"representation",
       [&](auto& k, auto& v) {
         if (v != "box" && v != "mask") throw ConfigError(k + ": expected box or mask");
         cfg.rep = v == "mask" ? Representation::mask : Representation::box;
       }},
      {"fusion",
       [&](auto& k, auto& v) {
         if (v != "hadamard" && v != "sum") throw ConfigError(k + ": expected hadamard or sum");
         cfg.fusion = v == "sum" ? FusionRule::sum : FusionRule::hadamard;
       }},
      {"iou_thresholds", [&](auto& k, auto& v) { cfg.cascade.iou_thresholds = to_list(k, v); }},
      {"loc_weights", [&](auto& k, auto& v) { cfg.cascade.loc_weights = to_list(k, v); }},
      {"relation_weights", [&](auto& k, auto& v) { cfg.cascade.relation_weights = to_list(k, v); }},
      {"seg_weights", [&](auto& k, auto& v) { cfg.cascade.seg_weights = to_list(k, v); }},
      {"merge_threshold", [&](auto& k, auto& v) { cfg.cascade.merge_threshold = to_double(k, v); }},
      {"top_k", [&](auto& k, auto& v) { cfg.cascade.top_k = int(to_int(k, v)); }},
      {"rank_margin", [&](auto& k, auto& v) { cfg.cascade.rank_margin = to_double(k, v); }},
      {"batch_pairs", [&](auto& k, auto& v) { cfg.train.batch.max_pairs = to_count(k, v); }},
      {"batch_pos_share", [&](auto& k, auto& v) { cfg.train.batch.pos_share = to_count(k, v); }},
      {"batch_neg_share", [&](auto& k, auto& v) { cfg.train.batch.neg_share = to_count(k, v); }},
      {"batch_include_gt", [&](auto& k, auto& v) { cfg.train.batch.include_gt_pairs = to_bool(k, v); }},
      {"lr", [&](auto& k, auto& v) { cfg.train.lr = to_double(k, v); }},
      {"clip_norm", [&](auto& k, auto& v) { cfg.train.clip_norm = to_double(k, v); }},
      {"loc_epochs", [&](auto& k, auto& v) { cfg.train.loc_epochs = int(to_int(k, v)); }},
      {"joint_epochs", [&](auto& k, auto& v) { cfg.train.joint_epochs = int(to_int(k, v)); }},
      {"train_seed", [&](auto& k, auto& v) { cfg.train.seed = std::uint64_t(to_count(k, v)); }},
      {"model_seed", [&](auto& k, auto& v) { cfg.model_seed = std::uint64_t(to_count(k, v)); }},
      {"fuse_hidden", [&](auto& k, auto& v) { cfg.dims.fuse_hidden = to_count(k, v); }},
      {"efra_hidden", [&](auto& k, auto& v) { cfg.dims.efra_hidden = to_count(k, v); }},
      {"scene_seed", [&](auto& k, auto& v) { cfg.scene.seed = std::uint64_t(to_count(k, v)); }},
      {"train_scenes", [&](auto& k, auto& v) { cfg.train_scenes = to_count(k, v); }},
      {"test_scenes", [&](auto& k, auto& v) { cfg.test_scenes = to_count(k, v); }},
      {"test_offset", [&](auto& k, auto& v) { cfg.test_offset = to_count(k, v); }},
      {"jitter", [&](auto& k, auto& v) { cfg.scene.jitter = to_double(k, v); }},
      {"noise", [&](auto& k, auto& v) { cfg.scene.noise = to_double(k, v); }},
      {"occlusion_rate", [&](auto& k, auto& v) { cfg.scene.occlusion_rate = to_double(k, v); }},
      {"free_object_rate", [&](auto& k, auto& v) { cfg.scene.free_object_rate = to_double(k, v); }},
      {"background_proposals", [&](auto& k, auto& v) { cfg.scene.background_proposals = int(to_int(k, v)); }},
      {"max_humans", [&](auto& k, auto& v) { cfg.scene.max_humans = int(to_int(k, v)); }},
      {"data_dir", [&](auto&, auto& v) { cfg.data_dir = v; }},
      {"test_dir", [&](auto&, auto& v) { cfg.test_dir = v; }},
      {"model", [&](auto&, auto& v) { cfg.model_path = v; }},
      {"predictions", [&](auto&, auto& v) { cfg.predictions_path = v; }},
      {"report", [&](auto&, auto& v) { cfg.report_path = v; }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline steps shared by the command-line tool and the experiment harness.
// ---------------------------------------------------------------------------

inline std::vector<Sample> synth_split(const RunConfig& cfg, bool test) {
  return test ? generate_dataset(cfg.scene, cfg.test_scenes, cfg.test_offset)
              : generate_dataset(cfg.scene, cfg.train_scenes, 0);
}

/// Data check for segment mode: every entity needs a non-empty mask.
inline void require_masks(const std::vector<Sample>& data) {
  for (const auto& s : data)
    for (const auto& e : s.scene.entities)
      if (e.mask.count() == 0)
        throw FormatError(s.scene.image_id + ": entity " + std::to_string(e.id) +
                              " has an empty mask (segment mode needs masks)");
}

inline CascadeModel train_run(const RunConfig& cfg, const std::vector<Sample>& data,
                              std::function<void(const std::string&)> log = {}) {
  if (cfg.mode == PipelineMode::segment) require_masks(data);
  auto cooc = build_cooccurrence(triplet_labels(data), cfg.dims.num_classes, cfg.dims.num_verbs);
  CascadeModel m = CascadeModel::create(cfg.dims, cfg.cascade, cfg.mode, cfg.rep, std::move(cooc), cfg.model_seed);
  TrainOptions opts = cfg.train;
  opts.log = std::move(log);
  train_model(m, data, opts);
  return m;
}

inline std::vector<ImagePrediction> predict_all(const CascadeModel& m, const std::vector<Sample>& data,
                                                FusionRule fusion) {
  std::vector<ImagePrediction> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(infer_sample(m, s, fusion));
  return out;
}

inline MetricReport evaluate_predictions(const std::vector<ImagePrediction>& preds, const std::vector<Sample>& data,
                                         const Vocabulary& vocab, MatchMode recall_mode) {
  std::vector<ImageTriplets> P, G;
  for (const auto& p : preds) P.push_back(to_records(p));
  for (const auto& s : data) G.push_back(ground_truth_records(s.scene));
  return evaluate(P, G, vocab.verbs, vocab.verb_geometric, MatchMode::box, recall_mode);
}

/// The blob sits next to the manifest: model.json -> model.bin.
inline std::string blob_path_for(const std::string& manifest) {
  return std::filesystem::path(manifest).replace_extension(".bin").string();
}

inline void save_model(CascadeModel& m, const std::string& manifest) {
  nlohmann::json extra{{"model", m.meta()}, {"cooccurrence", m.cooc.to_json()}};
  save_checkpoint(m.all_params(), manifest, blob_path_for(manifest), extra);
}

inline CascadeModel load_model(const std::string& manifest) {
  // Read the manifest once for the architecture, then fill the weights.
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot read " + manifest);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    const auto& extra = j.at("extra");
    CascadeModel m = CascadeModel::from_meta(extra.at("model"), CooccurrenceTable::from_json(extra.at("cooccurrence")));
    ParamStore ps = m.all_params();
    load_checkpoint(ps, manifest);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest + ": " + e.what());
  }
}

inline std::map<std::string, ImageSize> image_sizes(const std::vector<Sample>& data) {
  std::map<std::string, ImageSize> out;
  for (const auto& s : data) out[s.scene.image_id] = s.scene.size;
  return out;
}

}  // namespace choi
