#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "stjla/bench.hpp"
#include "stjla/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stjla;

namespace {

#ifndef STJLA_VERSION
#define STJLA_VERSION "unknown"
#endif

enum ExitCode { kOk = 0, kFailure = 1, kConfigFailure = 2, kDiverged = 3 };

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw std::runtime_error(what + " '" + path.string() + "' does not exist");
}

// --- embed ---------------------------------------------------------------

struct EmbedArgs {
  std::string graph, out;
  double p = 1.0, q = 1.0;
  Index walks = 10, length = 80, window = 10, negatives = 5, epochs = 5;
  std::uint64_t seed = 0;
};

int cmd_embed(const EmbedArgs& a) {
  require_file(a.graph, "graph file");
  const RoadGraph graph = load_road_graph(a.graph);
  Node2VecOptions wo;
  wo.p = a.p;
  wo.q = a.q;
  wo.walks_per_node = a.walks;
  wo.walk_length = a.length;
  wo.seed = a.seed * 2 + 1;
  const std::vector<Walk> walks = node2vec_walks(graph, wo);
  std::size_t total = 0;
  for (const Walk& w : walks) total += w.size();
  SkipGramOptions so;
  so.window = a.window;
  so.negatives = a.negatives;
  so.epochs = a.epochs;
  so.seed = a.seed * 2 + 2;
  save_embeddings(a.out, skipgram_train(walks, graph.size(), so));
  std::cout << "nodes " << graph.size() << ", walks " << walks.size() << ", mean walk length "
            << (walks.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(walks.size())) << "\n"
            << "wrote " << graph.size() << " x " << kSpatialEmbeddingDim << " embeddings to " << a.out << "\n";
  return kOk;
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SyntheticOptions options;
};

int cmd_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  const SyntheticData s = make_synthetic(a.options);
  save_readings(fs::path(a.out) / "readings.csv", s.readings);
  save_road_graph(fs::path(a.out) / "graph.csv", s.graph);
  save_meta(fs::path(a.out) / "meta.txt", s.meta);
  std::cout << "wrote " << a.options.steps << " steps x " << a.options.nodes << " nodes to " << a.out
            << " (signal std " << s.signal_std << ")\n";
  return kOk;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, preset = "default", data, graph, meta, embeddings, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<Index> epochs;
  bool quiet = false;
};

ModelConfig preset_config(const std::string& name) {
  if (name == "default") return ModelConfig{};
  if (name == "toy") return ModelConfig::toy();
  if (name == "england") return ModelConfig::england();
  if (name == "pemsd7") return ModelConfig::pemsd7();
  throw ConfigError("unknown preset '" + name + "'");
}

ModelConfig resolve_config(const TrainArgs& a) {
  ModelConfig cfg = preset_config(a.preset);
  if (!a.config.empty()) {
    require_file(a.config, "config file");
    cfg.apply(read_key_values(a.config));
  }
  KeyValues overrides;
  for (const std::string& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.apply(overrides);
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const ModelConfig cfg = resolve_config(a);
  for (const auto& [path, what] : {std::pair{a.data, "readings file"}, {a.graph, "graph file"}, {a.meta, "meta file"}}) {
    require_file(path, what);
  }
  auto [data, graph] = load_dataset(a.data, a.graph, a.meta);
  if (data.channels() != cfg.channels) {
    throw ShapeError("config expects C=" + std::to_string(cfg.channels) + " channels, data has C=" +
                     std::to_string(data.channels()));
  }
  if (data.meta().slots_per_day() != cfg.slots_per_day) {
    std::cerr << "warning: config slots_per_day " << cfg.slots_per_day << " differs from the data's "
              << data.meta().slots_per_day() << "\n";
  }

  const fs::path out(a.out);
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.bin";
  const fs::path metrics = out / "metrics.csv";
  const fs::path manifest = out / "manifest.json";
  fs::path embeddings_path = a.embeddings;

  Tensor ssc;
  if (!a.embeddings.empty()) {
    require_file(a.embeddings, "embeddings file");
    ssc = load_embeddings(a.embeddings, graph.size());
  } else {
    ssc = compute_spatial_embeddings(graph, cfg);
    embeddings_path = out / "embeddings.csv";
    save_embeddings(embeddings_path, ssc);
  }

  json config_json = json::object();
  for (const auto& [k, v] : cfg.to_key_values()) config_json[k] = v;
  const json run = {
      {"command", "train"},
      {"version", STJLA_VERSION},
      {"seed", cfg.seed},
      {"config", config_json},
      {"inputs", {{"data", a.data}, {"graph", a.graph}, {"meta", a.meta}, {"embeddings", embeddings_path.string()}}},
      {"outputs", {{"checkpoint", ckpt.string()}, {"metrics", metrics.string()}, {"final", (out / "manifest.final.json").string()}}},
      {"start_time", utc_now()},
  };
  write_json(manifest, run);

  Stjla model(cfg, graph, ssc);
  if (!a.quiet) {
    std::cout << "model: " << model.parameters().size() << " tensors, " << model.parameters().element_count()
              << " parameters; " << make_windows(data.splits().train, cfg.history, cfg.horizon).size()
              << " training windows\n";
  }
  TrainOptions opts;
  opts.checkpoint = ckpt;
  opts.metrics_csv = metrics;
  opts.log = a.quiet ? nullptr : &std::cout;
  std::string status = "completed";
  int code = kOk;
  TrainResult result;
  try {
    result = train(model, data, opts);
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\nlast good checkpoint: " << e.last_good().string() << "\n";
    status = "diverged";
    code = kDiverged;
  }
  json fin = {{"end_time", utc_now()}, {"status", status}, {"best_epoch", result.best_epoch}};
  if (code == kOk) fin["best_selection_mae"] = result.best_val_mae;
  write_json(out / "manifest.final.json", fin);
  if (code == kOk && !a.quiet) {
    std::cout << "best epoch " << result.best_epoch << "; checkpoint " << ckpt.string() << "\n";
  }
  return code;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, graph, meta, split = "test", out, predictions;
  std::vector<Index> horizons;
  Index prediction_step = 0;
};

int cmd_eval(const EvalArgs& a) {
  for (const auto& [path, what] : {std::pair{a.checkpoint, "checkpoint"}, {a.data, "readings file"},
                                   {a.graph, "graph file"}, {a.meta, "meta file"}}) {
    require_file(path, what);
  }
  auto [data, graph] = load_dataset(a.data, a.graph, a.meta);
  LoadedModel loaded = load_model(read_checkpoint(a.checkpoint), graph);
  const ModelConfig& cfg = loaded.model.config();
  if (data.channels() != cfg.channels) {
    throw ShapeError("checkpoint expects C=" + std::to_string(cfg.channels) + " channels, data has C=" +
                     std::to_string(data.channels()));
  }
  data.set_normalizer(loaded.normalizer);

  RawRange range;
  if (a.split == "train") range = data.splits().train;
  else if (a.split == "val") range = data.splits().val;
  else if (a.split == "test") range = data.splits().test;
  else throw ConfigError("--split must be train, val or test");
  const std::vector<SampleWindow> windows = make_windows(range, cfg.history, cfg.horizon);

  EvaluationOptions eo;
  eo.horizon = cfg.horizon;
  eo.mask_eps = cfg.mape_mask;
  eo.prediction_step = a.prediction_step;
  if (a.horizons.empty()) {
    for (Index h : {3, 6, 12}) {
      if (h <= cfg.horizon) eo.horizons.push_back(h);
    }
  } else {
    eo.horizons = a.horizons;
  }
  std::ofstream pred_out;
  if (!a.predictions.empty()) {
    pred_out.open(a.predictions);
    if (!pred_out) throw std::runtime_error("cannot open '" + a.predictions + "' for writing");
    eo.predictions = &pred_out;
  }
  const EvaluationReport report = evaluate(model_predictor(loaded.model, data), data, windows, cfg.history, eo);

  std::cout << a.split << " split, " << windows.size() << " windows\n";
  std::cout << std::left << std::setw(10) << "horizon" << std::setw(12) << "MAE" << std::setw(12) << "RMSE"
            << "MAPE(%)\n";
  for (const HorizonMetrics& h : report.horizons) {
    std::cout << std::setw(10) << (std::to_string(h.steps * data.meta().window_minutes) + " min") << std::setw(12)
              << h.metrics.mae << std::setw(12) << h.metrics.rmse << h.metrics.mape << "\n";
  }
  std::cout << std::setw(10) << "Average" << std::setw(12) << report.average.mae << std::setw(12)
            << report.average.rmse << report.average.mape << "\n";
  if (!a.out.empty()) {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot open '" + a.out + "' for writing");
    write_evaluation_csv(csv, report, data.meta().window_minutes);
  }
  return kOk;
}

// --- bench ---------------------------------------------------------------

struct BenchArgs {
  std::vector<Index> sizes{1024, 4096};
  Index dim = 16, repeats = 5;
  double budget_mb = 1024;
  bool no_memory = false;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  BenchOptions o;
  o.sizes = a.sizes;
  o.dim = a.dim;
  o.repeats = a.repeats;
  o.budget_bytes = a.budget_mb * 1024.0 * 1024.0;
  o.measure_memory = !a.no_memory;
  o.seed = a.seed;
  o.log = &std::cerr;
  const std::vector<BenchRow> rows = run_bench(o);
  if (a.out.empty()) {
    write_bench_csv(std::cout, rows);
  } else {
    std::ofstream csv(a.out);
    if (!csv) throw std::runtime_error("cannot open '" + a.out + "' for writing");
    write_bench_csv(csv, rows);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal joint linear attention traffic forecaster"};
  app.set_version_flag("--version", std::string(STJLA_VERSION));
  app.require_subcommand(1);

  EmbedArgs ea;
  auto* embed = app.add_subcommand("embed", "Compute node2vec spatial embeddings for a graph");
  embed->add_option("--graph", ea.graph, "Adjacency file (src,dst,weight)")->required();
  embed->add_option("--out", ea.out, "Output embedding file")->required();
  embed->add_option("--p", ea.p, "Return parameter")->capture_default_str();
  embed->add_option("--q", ea.q, "In-out parameter")->capture_default_str();
  embed->add_option("--walks", ea.walks, "Walks per node")->capture_default_str();
  embed->add_option("--length", ea.length, "Walk length")->capture_default_str();
  embed->add_option("--window", ea.window, "Skip-gram window")->capture_default_str();
  embed->add_option("--negatives", ea.negatives, "Negative samples per pair")->capture_default_str();
  embed->add_option("--epochs", ea.epochs, "Skip-gram epochs")->capture_default_str();
  embed->add_option("--seed", ea.seed, "Random seed")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic ring-graph dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--nodes", sa.options.nodes)->capture_default_str();
  synth->add_option("--steps", sa.options.steps)->capture_default_str();
  synth->add_option("--slots", sa.options.slots_per_day, "Time slots per day")->capture_default_str();
  synth->add_option("--noise", sa.options.noise, "Noise std relative to signal std")->capture_default_str();
  synth->add_option("--seed", sa.options.seed)->capture_default_str();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", ta.config, "key = value config file");
  trn->add_option("--preset", ta.preset, "Base config: default, toy, england, pemsd7")->capture_default_str();
  trn->add_option("--data", ta.data, "Readings file")->required();
  trn->add_option("--graph", ta.graph, "Adjacency file")->required();
  trn->add_option("--meta", ta.meta, "Dataset meta file")->required();
  trn->add_option("--embeddings", ta.embeddings, "Precomputed spatial embeddings (computed if omitted)");
  trn->add_option("--out", ta.out, "Output directory")->required();
  trn->add_option("--set", ta.sets, "Config override key=value (repeatable)");
  trn->add_option("--seed", ta.seed, "Override the config seed");
  trn->add_option("--epochs", ta.epochs, "Override the epoch count");
  trn->add_flag("--quiet", ta.quiet, "Suppress per-epoch output");

  EvalArgs va;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", va.checkpoint)->required();
  ev->add_option("--data", va.data, "Readings file")->required();
  ev->add_option("--graph", va.graph, "Adjacency file")->required();
  ev->add_option("--meta", va.meta, "Dataset meta file")->required();
  ev->add_option("--split", va.split, "train, val or test")->capture_default_str();
  ev->add_option("--horizons", va.horizons, "Horizon steps, e.g. 3,6,12")->delimiter(',');
  ev->add_option("--out", va.out, "Metrics CSV");
  ev->add_option("--predictions", va.predictions, "Predictions CSV (t_abs,node,pred,truth)");
  ev->add_option("--prediction-step", va.prediction_step, "Horizon step exported to --predictions (default last)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time softmax against linear attention");
  bench->add_option("--sizes", ba.sizes, "Token counts M")->delimiter(',')->capture_default_str();
  bench->add_option("--dim", ba.dim)->capture_default_str();
  bench->add_option("--repeats", ba.repeats)->capture_default_str();
  bench->add_option("--budget-mb", ba.budget_mb, "Largest softmax score matrix to allocate")->capture_default_str();
  bench->add_flag("--no-memory", ba.no_memory, "Skip peak-memory measurement");
  bench->add_option("--seed", ba.seed)->capture_default_str();
  bench->add_option("--out", ba.out, "CSV output (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*embed) return cmd_embed(ea);
    if (*synth) return cmd_synth(sa);
    if (*trn) return cmd_train(ta);
    if (*ev) return cmd_eval(va);
    if (*bench) return cmd_bench(ba);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
