// samcnet: spatial-configuration classification of multi-category point
// patterns. Subcommands: generate, train, eval, baseline, ablate, interpret,
// bench. All commands are deterministic given config + seed (timing fields
// aside); SAMCNET_SEED overrides any configured seed.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "samcnet/colocation.hpp"
#include "samcnet/interpret.hpp"
#include "samcnet/model.hpp"
#include "samcnet/pointset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace samcnet;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("SAMCNET_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::stoull(v);
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_text(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

void reject_unknown(const json& j, std::set<std::string> known, const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw std::invalid_argument(where + ": unknown key '" + key + "'");
}

SyntheticSpec spec_from_json(const json& j) {
  reject_unknown(j,
                 {"num_categories", "points_per_pattern", "patterns_per_class",
                  "planted_relationships", "background_intensity", "arena_extent", "seed"},
                 "synthetic spec");
  SyntheticSpec spec;
  if (j.contains("num_categories")) spec.num_categories = j["num_categories"].get<std::size_t>();
  if (j.contains("points_per_pattern"))
    spec.points_per_pattern = j["points_per_pattern"].get<std::size_t>();
  if (j.contains("patterns_per_class"))
    spec.patterns_per_class = j["patterns_per_class"].get<std::size_t>();
  if (j.contains("background_intensity"))
    spec.background_intensity = j["background_intensity"].get<double>();
  if (j.contains("arena_extent")) spec.arena_extent = j["arena_extent"].get<double>();
  if (j.contains("seed")) spec.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("planted_relationships")) {
    for (const auto& per_class : j["planted_relationships"]) {
      std::vector<PlantedRelationship> rels;
      for (const auto& r : per_class) {
        reject_unknown(r, {"categories", "radius", "participation"}, "planted relationship");
        PlantedRelationship rel;
        rel.categories = r.at("categories").get<std::vector<std::size_t>>();
        rel.radius = r.at("radius").get<double>();
        if (r.contains("participation")) rel.participation = r["participation"].get<double>();
        rels.push_back(rel);
      }
      spec.planted_relationships.push_back(rels);
    }
  }
  return spec;
}

json spec_to_json(const SyntheticSpec& spec) {
  json planted = json::array();
  for (const auto& per_class : spec.planted_relationships) {
    json rels = json::array();
    for (const auto& r : per_class)
      rels.push_back({{"categories", r.categories},
                      {"radius", r.radius},
                      {"participation", r.participation}});
    planted.push_back(rels);
  }
  return {{"num_categories", spec.num_categories},
          {"points_per_pattern", spec.points_per_pattern},
          {"patterns_per_class", spec.patterns_per_class},
          {"planted_relationships", planted},
          {"background_intensity", spec.background_intensity},
          {"arena_extent", spec.arena_extent},
          {"seed", spec.seed}};
}

Dataset load_data_dir(const std::string& dir) {
  return load_csv((fs::path(dir) / "points.csv").string(),
                  (fs::path(dir) / "labels.csv").string());
}

// Re-id categories and class labels by NAME against the checkpoint vocabulary.
Dataset remap_to_config(const Dataset& ds, const ModelConfig& cfg) {
  std::map<std::string, std::size_t> cat_id, class_id;
  for (std::size_t i = 0; i < cfg.category_names.size(); ++i)
    cat_id[cfg.category_names[i]] = i;
  for (std::size_t i = 0; i < cfg.class_names.size(); ++i) class_id[cfg.class_names[i]] = i;

  Dataset out;
  out.vocabulary = CategoryVocabulary(cfg.category_names);
  out.class_names = cfg.class_names;
  for (const PointPattern& p : ds.patterns) {
    PointPattern q = p;
    auto cit = class_id.find(ds.class_names.at(p.label));
    if (cit == class_id.end())
      throw std::invalid_argument("data class '" + ds.class_names.at(p.label) +
                                  "' unknown to the checkpoint");
    q.label = cit->second;
    for (Point& pt : q.points) {
      auto it = cat_id.find(ds.vocabulary.name(pt.category));
      if (it == cat_id.end())
        throw std::invalid_argument("data category '" + ds.vocabulary.name(pt.category) +
                                    "' unknown to the checkpoint");
      pt.category = it->second;
    }
    out.patterns.push_back(std::move(q));
  }
  return out;
}

json metrics_to_json(const Metrics& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"accuracy", m.accuracy},
          {"per_sample_seconds", m.per_sample_seconds},
          {"confusion", m.confusion}};
}

std::string history_csv(const TrainHistory& hist) {
  std::string out = "epoch,train_loss,val_accuracy\n";
  for (std::size_t e = 0; e < hist.epochs.size(); ++e)
    out += std::to_string(e + 1) + "," + detail::format_double(hist.epochs[e].train_loss) +
           "," + detail::format_double(hist.epochs[e].val_accuracy) + "\n";
  return out;
}

struct RunConfig {
  json data;
  ModelConfig model;
  std::string output_dir = ".";
};

RunConfig parse_run_config(const std::string& path) {
  json j = load_json(path);
  reject_unknown(j, {"data", "model", "train", "output"}, "run config");
  RunConfig rc;
  if (!j.contains("data")) throw std::invalid_argument("run config: missing data section");
  rc.data = j["data"];
  reject_unknown(rc.data, {"points", "labels", "synthetic"}, "data section");
  if (j.contains("model")) apply_model_json(rc.model, j["model"]);
  if (j.contains("train")) apply_train_json(rc.model, j["train"]);
  if (j.contains("output")) {
    reject_unknown(j["output"], {"dir"}, "output section");
    if (j["output"].contains("dir")) rc.output_dir = j["output"]["dir"].get<std::string>();
  }
  if (auto seed = env_seed()) rc.model.seed = *seed;
  return rc;
}

Dataset load_run_data(const RunConfig& rc) {
  if (rc.data.contains("synthetic")) {
    SyntheticSpec spec = spec_from_json(rc.data["synthetic"]);
    return generate_synthetic(spec);
  }
  if (!rc.data.contains("points") || !rc.data.contains("labels"))
    throw std::invalid_argument("data section needs points+labels paths or a synthetic spec");
  return load_csv(rc.data["points"].get<std::string>(), rc.data["labels"].get<std::string>());
}

void bind_dataset(ModelConfig& cfg, const Dataset& ds) {
  cfg.num_categories = ds.vocabulary.size();
  cfg.num_classes = ds.num_classes();
  cfg.category_names = ds.vocabulary.names();
  cfg.class_names = ds.class_names;
}

// ---------------------------------------------------------------------------

int cmd_generate(const std::string& spec_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_flag) {
  SyntheticSpec spec = spec_from_json(load_json(spec_path));
  if (seed_flag) spec.seed = *seed_flag;
  if (auto seed = env_seed()) spec.seed = *seed;
  Dataset ds = generate_synthetic(spec);
  fs::create_directories(out_dir);
  write_csv(ds, (fs::path(out_dir) / "points.csv").string(),
            (fs::path(out_dir) / "labels.csv").string());
  write_text((fs::path(out_dir) / "spec_resolved.json").string(), spec_to_json(spec).dump(2) + "\n");
  std::cout << "generated " << ds.patterns.size() << " patterns ("
            << spec.planted_relationships.size() << " classes) into " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = parse_run_config(config_path);
  Dataset ds = load_run_data(rc);
  bind_dataset(rc.model, ds);
  Split parts = split(ds, rc.model.seed);

  Model model(rc.model, rc.model.seed);
  TrainHistory hist = train(model, parts.train, parts.val);

  fs::create_directories(rc.output_dir);
  save_checkpoint(model, (fs::path(rc.output_dir) / "checkpoint.bin").string());
  write_text((fs::path(rc.output_dir) / "history.csv").string(), history_csv(hist));
  std::cout << "trained " << rc.model.epochs << " epochs on " << parts.train.patterns.size()
            << " samples; checkpoint + history.csv in " << rc.output_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split_name, const std::string& out_dir) {
  Model model = load_checkpoint(ckpt_path);
  Dataset ds = remap_to_config(load_data_dir(data_dir), model.config());
  Dataset target = ds;
  if (split_name != "all") {
    Split parts = split(ds, model.config().seed);
    if (split_name == "train")
      target = parts.train;
    else if (split_name == "val")
      target = parts.val;
    else if (split_name == "test")
      target = parts.test;
    else
      throw std::invalid_argument("unknown split '" + split_name + "'");
  }
  Metrics m = evaluate(model, target, model.config().seed ^ 0xE7A1ULL);
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "metrics.json").string(), metrics_to_json(m).dump(2) + "\n");
  std::cout << "eval[" << split_name << "] accuracy=" << m.accuracy << " f1=" << m.f1
            << " n=" << target.patterns.size() << "\n";
  return 0;
}

int cmd_baseline(const std::string& measure_name, const std::string& classifier,
                 const std::string& data_dir, std::vector<double> thresholds,
                 std::uint64_t seed, const std::string& out_dir, std::size_t nn_width,
                 std::size_t nn_epochs) {
  if (auto s = env_seed()) seed = *s;
  Dataset ds = load_data_dir(data_dir);
  Split parts = split(ds, seed);
  if (thresholds.empty()) thresholds = {50.0};
  ThresholdSet H{thresholds};
  const Measure measure =
      measure_name == "pi" ? Measure::kParticipationIndex : Measure::kCrossK;
  if (measure_name != "pi" && measure_name != "crossk")
    throw std::invalid_argument("unknown measure '" + measure_name + "'");

  const std::size_t g = ds.vocabulary.size();
  auto featurize = [&](const Dataset& part, double* seconds) {
    FeatureMatrix x;
    std::vector<std::size_t> y;
    const auto t0 = std::chrono::steady_clock::now();
    for (const PointPattern& p : part.patterns) {
      ColocFeatures f = features(p, g, measure, H, &ds.vocabulary);
      x.values.insert(x.values.end(), f.values.begin(), f.values.end());
      x.cols = f.values.size();
      y.push_back(p.label);
    }
    const auto t1 = std::chrono::steady_clock::now();
    if (seconds) *seconds = std::chrono::duration<double>(t1 - t0).count();
    x.rows = part.patterns.size();
    return std::make_pair(x, y);
  };

  // validation fold is unused by these classifiers; fold it into training
  Dataset train_all = parts.train;
  for (const auto& p : parts.val.patterns) train_all.patterns.push_back(p);
  auto [train_x, train_y] = featurize(train_all, nullptr);
  double feat_seconds = 0.0;
  auto [test_x, test_y] = featurize(parts.test, &feat_seconds);

  std::vector<std::size_t> pred;
  const auto t0 = std::chrono::steady_clock::now();
  if (classifier == "dt") {
    DepthTwoTree tree;
    tree.fit(train_x, train_y, ds.num_classes());
    pred = tree.predict(test_x);
  } else if (classifier == "rf") {
    BaggedForest forest(50, seed);
    forest.fit(train_x, train_y, ds.num_classes());
    pred = forest.predict(test_x);
  } else if (classifier == "nn") {
    MlpConfig mcfg;
    mcfg.hidden.assign(4, nn_width);
    mcfg.epochs = nn_epochs;
    mcfg.seed = seed;
    MlpClassifier mlp(mcfg);
    mlp.fit(train_x, train_y, ds.num_classes());
    pred = mlp.predict(test_x);
  } else {
    throw std::invalid_argument("unknown classifier '" + classifier + "'");
  }
  const auto t1 = std::chrono::steady_clock::now();

  std::vector<std::vector<std::size_t>> confusion(
      ds.num_classes(), std::vector<std::size_t>(ds.num_classes(), 0));
  for (std::size_t i = 0; i < pred.size(); ++i) confusion[test_y[i]][pred[i]]++;
  Metrics m = metrics_from_confusion(std::move(confusion));
  m.per_sample_seconds = (feat_seconds + std::chrono::duration<double>(t1 - t0).count()) /
                         static_cast<double>(parts.test.patterns.size());

  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "metrics.json").string(), metrics_to_json(m).dump(2) + "\n");
  std::cout << "baseline " << measure_name << "+" << classifier << " accuracy=" << m.accuracy
            << " f1=" << m.f1 << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  RunConfig rc = parse_run_config(config_path);
  Dataset ds = load_run_data(rc);
  bind_dataset(rc.model, ds);
  Split parts = split(ds, rc.model.seed);

  struct Row {
    const char* name;
    bool use_lrfc;
    PrioritizationMode mode;
  };
  const std::vector<Row> rows{
      {"only_lrfc", true, PrioritizationMode::kNone},
      {"only_self_prt", false, PrioritizationMode::kSelf},
      {"neighbor_prt", false, PrioritizationMode::kNeighbor},
      {"lrfc_self_prt", true, PrioritizationMode::kSelf},
      {"lrfc_neighbor_prt", true, PrioritizationMode::kNeighbor},
      {"self_prt_neighbor_prt", false, PrioritizationMode::kSelfNeighbor},
      {"entire_model", true, PrioritizationMode::kPair},
  };

  std::string csv = "name,precision,recall,f1,accuracy\n";
  for (const Row& row : rows) {
    ModelConfig cfg = rc.model;
    cfg.use_lrfc = row.use_lrfc;
    cfg.prioritization = row.mode;
    Model model(cfg, cfg.seed);
    train(model, parts.train, parts.val);
    Metrics m = evaluate(model, parts.test, cfg.seed ^ 0xE7A1ULL);
    csv += std::string(row.name) + "," + detail::format_double(m.precision) + "," +
           detail::format_double(m.recall) + "," + detail::format_double(m.f1) + "," +
           detail::format_double(m.accuracy) + "\n";
    std::cout << "ablate " << row.name << " accuracy=" << m.accuracy << "\n";
  }
  fs::create_directories(rc.output_dir);
  write_text((fs::path(rc.output_dir) / "ablation.csv").string(), csv);
  return 0;
}

int cmd_interpret(const std::string& ckpt_path, const std::string& data_dir,
                  std::uint64_t seed, const std::string& out_dir,
                  const std::string& grouping_name, const std::string& norm_name) {
  if (auto s = env_seed()) seed = *s;
  Model model = load_checkpoint(ckpt_path);
  Dataset ds = remap_to_config(load_data_dir(data_dir), model.config());

  const VectorNorm norm = norm_name == "l1" ? VectorNorm::kL1 : VectorNorm::kL2;
  const SignatureGraph grouping = grouping_name == "coords" ? SignatureGraph::kCoordinates
                                                            : SignatureGraph::kLastLayer;
  fs::create_directories(out_dir);
  write_pair_importance_csv(model, (fs::path(out_dir) / "pair_importance.csv").string(), norm);

  NWayFeatures f = nway_features(model, ds, grouping, seed);
  RelationshipRanking ranking = rank_by_permutation(f, seed);
  write_relationships_csv(ranking, model.config().category_names,
                          (fs::path(out_dir) / "relationships.csv").string(), 20);
  std::cout << "interpret: " << f.signatures.size() << " signatures ranked; artifacts in "
            << out_dir << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& data_dir,
              std::size_t num_points, std::size_t limit, const std::string& out_dir) {
  Model model = load_checkpoint(ckpt_path);
  Dataset ds = remap_to_config(load_data_dir(data_dir), model.config());
  if (limit > 0 && ds.patterns.size() > limit) ds.patterns.resize(limit);
  if (num_points == 0) num_points = model.config().num_points;

  NoGradGuard guard(model.tape());
  Rng dummy(0);
  Rng sampler = Rng(model.config().seed ^ 0xBE7CULL).split("bench");
  std::vector<PointPattern> sized;
  for (const PointPattern& p : ds.patterns)
    sized.push_back(sample_points(p, num_points, sampler.split(p.sample_id).next_u64()));

  std::vector<double> seconds;
  const std::size_t warmup = 3;
  for (std::size_t i = 0; i < sized.size() + warmup; ++i) {
    const PointPattern& p = sized[i % sized.size()];
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(p, false, dummy);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup) seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(seconds.begin(), seconds.end());
  double mean = 0;
  for (const double s : seconds) mean += s;
  mean /= static_cast<double>(seconds.size());
  const double median = seconds[seconds.size() / 2];

  json out = {{"mean_seconds", mean},
              {"median_seconds", median},
              {"num_points", num_points},
              {"samples", seconds.size()}};
  fs::create_directories(out_dir);
  write_text((fs::path(out_dir) / "bench.json").string(), out.dump(2) + "\n");
  std::cout << "bench n=" << num_points << " mean=" << mean << "s median=" << median << "s over "
            << seconds.size() << " samples\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial-configuration classification of multi-category point patterns"};
  app.require_subcommand(1);

  std::string spec_path, out_dir = ".", config_path, ckpt_path, data_dir;
  std::string split_name = "all", measure, classifier, grouping = "last_layer", norm = "l2";
  std::vector<double> thresholds;
  std::uint64_t seed = 42;
  std::size_t num_points = 0, limit = 0, nn_width = 2048, nn_epochs = 200;
  std::optional<std::uint64_t> seed_flag;

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed_flag, "override the spec seed");

  auto* tr = app.add_subcommand("train", "train a model from a run config");
  tr->add_option("--config", config_path, "run config JSON")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--data", data_dir, "directory with points.csv/labels.csv")->required();
  ev->add_option("--split", split_name, "all|train|val|test (splits use the checkpoint seed)");
  ev->add_option("--out", out_dir, "directory for metrics.json");

  auto* bl = app.add_subcommand("baseline", "co-location features + classical classifier");
  bl->add_option("--measure", measure, "pi|crossk")->required();
  bl->add_option("--classifier", classifier, "dt|rf|nn")->required();
  bl->add_option("--data", data_dir)->required();
  bl->add_option("--thresholds", thresholds, "distance thresholds in pixels (default 50)");
  bl->add_option("--seed", seed);
  bl->add_option("--out", out_dir, "directory for metrics.json");
  bl->add_option("--nn-width", nn_width, "hidden width for --classifier nn");
  bl->add_option("--nn-epochs", nn_epochs, "training epochs for --classifier nn");

  auto* ab = app.add_subcommand("ablate", "run the seven building-block configurations");
  ab->add_option("--config", config_path, "run config JSON")->required();

  auto* in = app.add_subcommand("interpret", "pair importances + N-way relationship ranking");
  in->add_option("--checkpoint", ckpt_path)->required();
  in->add_option("--data", data_dir)->required();
  in->add_option("--seed", seed);
  in->add_option("--out", out_dir);
  in->add_option("--grouping", grouping, "last_layer|coords");
  in->add_option("--norm", norm, "l2|l1");

  auto* be = app.add_subcommand("bench", "per-sample inference timing");
  be->add_option("--checkpoint", ckpt_path)->required();
  be->add_option("--data", data_dir)->required();
  be->add_option("--num-points", num_points, "points per pattern (default: config)");
  be->add_option("--limit", limit, "cap the number of benchmarked patterns");
  be->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate(spec_path, out_dir, seed_flag);
    if (tr->parsed()) return cmd_train(config_path);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, split_name, out_dir);
    if (bl->parsed())
      return cmd_baseline(measure, classifier, data_dir, thresholds, seed, out_dir, nn_width,
                          nn_epochs);
    if (ab->parsed()) return cmd_ablate(config_path);
    if (in->parsed()) return cmd_interpret(ckpt_path, data_dir, seed, out_dir, grouping, norm);
    if (be->parsed()) return cmd_bench(ckpt_path, data_dir, num_points, limit, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
