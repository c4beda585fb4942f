// choi: synthesize data, train, infer, evaluate, and run the numeric checks.
//
// Exit codes: 0 ok, 1 usage/config, 2 data error, 3 check failure.

#include "choi/cli/run.hpp"
#include "choi/interaction/gradients.hpp"
#include "choi/synth/oracle.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

using namespace choi;

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kCheck = 3 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "override one config key (key=value), repeatable");
}

/// Config file first, then --set entries, then the subcommand's own flags.
RunConfig load_config(const Common& c, const std::map<std::string, std::string>& flags) {
  std::map<std::string, std::string> kv;
  if (!c.config.empty()) kv = io::read_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[io::trim(s.substr(0, eq))] = io::trim(s.substr(eq + 1));
  }
  for (const auto& [k, v] : flags)
    if (!v.empty()) kv[k] = v;
  return apply_settings(RunConfig{}, kv);
}

void require(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing ") + what);
}

void print_epoch(const std::string& line) { std::cerr << line << '\n'; }

int cmd_synth(const RunConfig& cfg, const std::string& split) {
  require(cfg.data_dir, "output directory (--out or data_dir)");
  const bool test = split == "test";
  const auto data = synth_split(cfg, test);
  io::write_dataset(cfg.data_dir, data, cfg.scene.vocab);
  std::size_t triplets = 0;
  for (const auto& s : data) triplets += s.scene.triplets.size();
  std::cout << "wrote " << data.size() << " " << split << " scenes (" << triplets << " triplets) to " << cfg.data_dir
            << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg) {
  require(cfg.data_dir, "training data (--data or data_dir)");
  require(cfg.model_path, "model path (--model or model)");
  Vocabulary vocab;
  const auto data = io::read_dataset(cfg.data_dir, &vocab);
  if (vocab.num_classes() != cfg.dims.num_classes || vocab.num_verbs() != cfg.dims.num_verbs)
    throw FormatError(cfg.data_dir + "/vocab.json: vocabulary does not match the model dims");
  CascadeModel m = train_run(cfg, data, print_epoch);
  save_model(m, cfg.model_path);
  std::cout << "saved " << cfg.model_path << '\n';
  return kOk;
}

int cmd_infer(const RunConfig& cfg) {
  require(cfg.model_path, "model (--model or model)");
  require(cfg.data_dir, "input data (--data or data_dir)");
  require(cfg.predictions_path, "output file (--out or predictions)");
  const CascadeModel m = load_model(cfg.model_path);
  const auto data = io::read_dataset(cfg.data_dir);
  const auto preds = predict_all(m, data, cfg.fusion);
  io::write_predictions(cfg.predictions_path, preds, m.mode == PipelineMode::segment);
  std::cout << "wrote predictions for " << preds.size() << " images to " << cfg.predictions_path << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& cfg, const std::string& match) {
  require(cfg.data_dir, "ground-truth data (--data or data_dir)");
  require(cfg.predictions_path, "predictions (--predictions)");
  Vocabulary vocab;
  const auto data = io::read_dataset(cfg.data_dir, &vocab);
  const auto preds = io::read_prediction_records(cfg.predictions_path, image_sizes(data));
  std::vector<ImageTriplets> gts;
  for (const auto& s : data) gts.push_back(ground_truth_records(s.scene));
  const MatchMode recall = match == "mask" ? MatchMode::mask : MatchMode::box;
  const MetricReport rep = evaluate(preds, gts, vocab.verbs, vocab.verb_geometric, MatchMode::box, recall);
  std::cout << rep.to_text();
  if (!cfg.report_path.empty()) io::write_file(cfg.report_path, rep.to_json().dump(1) + '\n');
  return kOk;
}

int cmd_gradcheck(int points, std::uint64_t seed) {
  GradSuiteOptions opt;
  opt.points = points;
  opt.seed = seed;
  bool ok = true;
  for (const auto& r : run_gradient_suite(opt)) {
    std::printf("%-10s max rel err %.3e over %zu entries  %s\n", r.name.c_str(), r.max_rel_error, r.checked,
                r.passed() ? "ok" : ("FAIL at " + r.worst_entry).c_str());
    ok = ok && r.passed();
  }
  return ok ? kOk : kCheck;
}

int cmd_oracle(std::size_t n, std::uint64_t seed) {
  constexpr double kTol = 1e-10;
  bool ok = true;
  for (const auto& r : oracle::run_oracle_suite(n, seed)) {
    std::printf("%-18s %zu instances  max |diff| %.3e  mismatches %zu  %s\n", r.name.c_str(), r.instances,
                r.max_abs_diff, r.mismatches, r.passed(kTol) ? "ok" : "FAIL");
    ok = ok && r.passed(kTol);
  }
  return ok ? kOk : kCheck;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded human-object interaction recognition on synthetic scenes"};
  app.require_subcommand(1);

  Common common;
  std::string out, data, model, predictions, split = "train", match = "box";
  int points = 10;
  std::size_t instances = 500;
  std::uint64_t seed = 11;

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset");
  add_common(synth, common);
  synth->add_option("--out", out, "dataset directory");
  synth->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* train = app.add_subcommand("train", "train a model (localization phase, then joint)");
  add_common(train, common);
  train->add_option("--data", data, "training dataset directory");
  train->add_option("--model", model, "output checkpoint manifest (.json)");

  auto* infer = app.add_subcommand("infer", "write predictions NDJSON");
  add_common(infer, common);
  infer->add_option("--model", model, "checkpoint manifest");
  infer->add_option("--data", data, "dataset directory");
  infer->add_option("--out", out, "predictions file");

  auto* eval = app.add_subcommand("eval", "score predictions against a dataset");
  add_common(eval, common);
  eval->add_option("--data", data, "ground-truth dataset directory");
  eval->add_option("--predictions", predictions, "predictions NDJSON");
  eval->add_option("--out", out, "metric report JSON");
  eval->add_option("--match", match, "IoU kind for R@K")->check(CLI::IsMember({"box", "mask"}));

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
  grad->add_option("--points", points, "seeded points per operation")->check(CLI::PositiveNumber);
  grad->add_option("--seed", seed, "seed");

  auto* oracle = app.add_subcommand("oracle", "compare against brute-force reference implementations");
  oracle->add_option("--instances", instances, "seeded instances per suite")->check(CLI::PositiveNumber);
  oracle->add_option("--seed", seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (grad->parsed()) return cmd_gradcheck(points, seed);
    if (oracle->parsed()) return cmd_oracle(instances, seed);
    if (synth->parsed()) return cmd_synth(load_config(common, {{"data_dir", out}}), split);
    if (train->parsed()) return cmd_train(load_config(common, {{"data_dir", data}, {"model", model}}));
    if (infer->parsed())
      return cmd_infer(load_config(common, {{"model", model}, {"data_dir", data}, {"predictions", out}}));
    if (eval->parsed())
      return cmd_eval(load_config(common, {{"data_dir", data}, {"predictions", predictions}, {"report", out}}), match);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
