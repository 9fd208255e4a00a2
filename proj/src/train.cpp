#include "stjla/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "stjla/ops.hpp"

namespace stjla {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

constexpr const char* kConfigPrefix = "config.";

}  // namespace

Tensor compute_spatial_embeddings(const RoadGraph& graph, const ModelConfig& cfg) {
  Node2VecOptions walk;
  walk.p = cfg.node2vec_p;
  walk.q = cfg.node2vec_q;
  walk.walk_length = cfg.walk_length;
  walk.walks_per_node = cfg.walks_per_node;
  walk.seed = cfg.seed * 2 + 1;
  SkipGramOptions sg;
  sg.window = cfg.skipgram_window;
  sg.negatives = cfg.skipgram_negatives;
  sg.epochs = cfg.skipgram_epochs;
  sg.seed = cfg.seed * 2 + 2;
  return skipgram_train(node2vec_walks(graph, walk), graph.size(), sg);
}

Checkpoint model_checkpoint(const Stjla& model, const Normalizer& norm, const AdamState* optimizer,
                            const KeyValues& extra) {
  Checkpoint ckpt;
  ckpt.metadata.emplace_back("format", "stjla-model");
  for (const auto& [k, v] : model.config().to_key_values()) ckpt.metadata.emplace_back(kConfigPrefix + k, v);
  ckpt.metadata.emplace_back("norm.mean", format_double(norm.mean));
  ckpt.metadata.emplace_back("norm.std", format_double(norm.std));
  for (const auto& kv : extra) ckpt.metadata.push_back(kv);
  const Tensor& ssc = model.spatial_embeddings();
  ckpt.arrays.push_back({"static.ssc", ssc.shape(), ssc.data()});
  append_parameters(ckpt, model.parameters());
  if (optimizer) ckpt.optimizer = *optimizer;
  return ckpt;
}

LoadedModel load_model(const Checkpoint& ckpt, const RoadGraph& graph) {
  if (ckpt.meta("format") != "stjla-model") throw FormatError("checkpoint does not hold an STJLA model");
  ModelConfig cfg;
  KeyValues kv;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.starts_with(kConfigPrefix)) kv.emplace_back(k.substr(std::char_traits<char>::length(kConfigPrefix)), v);
  }
  cfg.apply(kv);
  const NamedArray* ssc = ckpt.find("static.ssc");
  if (!ssc || ssc->shape.size() != 2) throw FormatError("checkpoint has no spatial embeddings");
  if (ssc->shape[0] != graph.size()) {
    throw ShapeError("checkpoint expects N=" + std::to_string(ssc->shape[0]) + " nodes, graph has N=" +
                     std::to_string(graph.size()));
  }
  Normalizer norm;
  norm.mean = parse_double("norm.mean", ckpt.meta("norm.mean").value_or(""));
  norm.std = parse_double("norm.std", ckpt.meta("norm.std").value_or(""));
  LoadedModel out{Stjla(cfg, graph, Tensor(ssc->shape, ssc->data)), norm, ckpt.optimizer};
  load_parameters(ckpt, out.model.parameters());
  return out;
}

Scalar batch_loss_backward(const Stjla& model, const Dataset& data, std::span<const SampleWindow> batch,
                           MetricsAccumulator* train_metrics) {
  if (batch.empty()) throw ContractError("empty batch");
  const ModelConfig& cfg = model.config();
  Tensor total;
  for (const SampleWindow& w : batch) {
    const Tensor pred = model.forward(data.normalized(w.t0, cfg.history), w.t0);
    const Tensor target = data.normalized(w.t0 + cfg.history, cfg.horizon);
    const Tensor loss = l1_loss(pred, target);
    total = total.defined() ? add(total, loss) : loss;
    if (train_metrics) {
      train_metrics->add(data.normalizer().invert(pred.data()), data.raw(w.t0 + cfg.history, cfg.horizon).data());
    }
  }
  total = scale(total, Scalar(1) / static_cast<Scalar>(batch.size()));
  total.backward();
  return total.item();
}

TrainResult train(Stjla& model, const Dataset& data, const TrainOptions& options) {
  using Clock = std::chrono::steady_clock;
  const ModelConfig& cfg = model.config();
  if (data.nodes() != model.nodes() || data.channels() != cfg.channels) {
    throw ShapeError("model expects N=" + std::to_string(model.nodes()) + ", C=" + std::to_string(cfg.channels) +
                     "; dataset has N=" + std::to_string(data.nodes()) + ", C=" + std::to_string(data.channels()));
  }
  std::vector<SampleWindow> windows =
      options.train_windows ? *options.train_windows : make_windows(data.splits().train, cfg.history, cfg.horizon);
  if (windows.empty()) throw ContractError("no training windows fit in the training span");
  const std::vector<SampleWindow> val_windows = make_windows(data.splits().val, cfg.history, cfg.horizon);

  std::ofstream csv;
  if (!options.metrics_csv.empty()) {
    csv.open(options.metrics_csv);
    if (!csv) throw std::runtime_error("cannot open '" + options.metrics_csv.string() + "' for writing");
    csv << "epoch,split,mae,rmse,mape,lr,seconds\n";
  }
  auto write_row = [&](Index epoch, const char* split, const Metrics& m, double lr, double secs) {
    if (!csv) return;
    csv << epoch << ',' << split << ',' << format_double(m.mae) << ',' << format_double(m.rmse) << ','
        << format_double(m.mape) << ',' << format_double(lr) << ',' << secs << '\n';
    csv.flush();
  };

  AdamState adam = AdamState::for_parameters(model.parameters());
  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  auto save = [&](Index epoch) {
    if (options.checkpoint.empty()) return;
    write_checkpoint(options.checkpoint,
                     model_checkpoint(model, data.normalizer(), &adam, {{"epoch", std::to_string(epoch)}}));
  };
  // The initial parameters are the first "last good" state.
  save(0);

  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);
  const Index batch = cfg.batch_size;
  Index batches = (static_cast<Index>(windows.size()) + batch - 1) / batch;
  if (cfg.max_batches_per_epoch > 0) batches = std::min(batches, cfg.max_batches_per_epoch);

  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = learning_rate_at(cfg, epoch);
    std::shuffle(windows.begin(), windows.end(), rng);
    MetricsAccumulator train_acc(cfg.mape_mask);
    for (Index b = 0; b < batches; ++b) {
      const Index begin = b * batch;
      const Index len = std::min<Index>(batch, static_cast<Index>(windows.size()) - begin);
      model.parameters().zero_grad();
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
      Scalar loss = 0;
      try {
        loss = batch_loss_backward(
            model, data, std::span<const SampleWindow>(windows).subspan(static_cast<std::size_t>(begin),
                                                                        static_cast<std::size_t>(len)),
            &train_acc);
      } catch (const NumericError& e) {
        // e.g. attention denominators underflow once weights blow up
        throw DivergenceError(std::string(e.what()) + " at " + where, options.checkpoint);
      }
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at " + where, options.checkpoint);
      }
      try {
        adam_step(model.parameters(), adam, static_cast<Scalar>(lr));
      } catch (const NumericError& e) {
        throw DivergenceError(std::string(e.what()) + " at " + where, options.checkpoint);
      }
      result.step_losses.push_back(loss);
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train = train_acc.result();
    if (!val_windows.empty()) {
      EvaluationOptions eo;
      eo.horizon = cfg.horizon;
      eo.mask_eps = cfg.mape_mask;
      log.val = evaluate(model_predictor(model, data), data, val_windows, cfg.history, eo).average;
    }
    log.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    write_row(epoch, "train", log.train, lr, log.seconds);
    if (log.val) write_row(epoch, "val", *log.val, lr, log.seconds);
    if (options.log) {
      *options.log << "epoch " << epoch << "/" << cfg.epochs << " lr " << lr << " train MAE " << log.train.mae;
      if (log.val) *options.log << " val MAE " << log.val->mae;
      *options.log << " (" << log.seconds << " s)\n";
    }

    // Without a validation split the selection falls back to training MAE.
    const double score = log.val ? log.val->mae : log.train.mae;
    if (score < result.best_val_mae) {
      result.best_val_mae = score;
      result.best_epoch = epoch;
      save(epoch);
    }
    result.epochs.push_back(log);
  }
  return result;
}

Predictor model_predictor(const Stjla& model, const Dataset& data) {
  return [&model, &data](const SampleWindow& w) {
    const ModelConfig& cfg = model.config();
    const Tensor pred = model.forward(data.normalized(w.t0, cfg.history), w.t0);
    return data.normalizer().invert(pred);
  };
}

EvaluationReport evaluate(const Predictor& predictor, const Dataset& data, std::span<const SampleWindow> windows,
                          Index history, const EvaluationOptions& options) {
  const Index horizon = options.horizon;
  std::vector<Index> steps = options.horizons.empty() ? std::vector<Index>{horizon} : options.horizons;
  for (Index s : steps) {
    if (s < 1 || s > horizon) {
      throw ContractError("horizon " + std::to_string(s) + " outside 1.." + std::to_string(horizon));
    }
  }
  const Index export_step = options.prediction_step == 0 ? horizon : options.prediction_step;
  if (export_step < 1 || export_step > horizon) throw ContractError("prediction step outside the horizon");
  if (windows.empty()) throw ContractError("evaluation over zero windows");

  const Index n = data.nodes(), c = data.channels(), per_step = n * c;
  std::vector<MetricsAccumulator> accs(steps.size(), MetricsAccumulator(options.mask_eps));
  MetricsAccumulator avg(options.mask_eps);
  if (options.predictions) *options.predictions << "t_abs,node,pred,truth\n";
  for (const SampleWindow& w : windows) {
    const Tensor pred = predictor(w);
    const Tensor truth = data.raw(w.t0 + history, horizon);
    if (pred.shape() != truth.shape()) {
      throw ShapeError("prediction " + to_string(pred.shape()) + " does not match truth " + to_string(truth.shape()));
    }
    for (Index t = 0; t < horizon; ++t) {
      const auto p = pred.data().segment(t * per_step, per_step);
      const auto y = truth.data().segment(t * per_step, per_step);
      for (std::size_t i = 0; i < steps.size(); ++i) {
        if (t < steps[i]) accs[i].add(p, y);
      }
      avg.add(p, y);
      if (options.predictions && t + 1 == export_step) {
        for (Index node = 0; node < n; ++node) {
          *options.predictions << (w.t0 + history + t) << ',' << node << ',' << format_double(p[node * c]) << ','
                               << format_double(y[node * c]) << '\n';
        }
      }
    }
  }
  EvaluationReport report;
  for (std::size_t i = 0; i < steps.size(); ++i) report.horizons.push_back({steps[i], accs[i].result()});
  report.average = avg.result();
  return report;
}

void write_evaluation_csv(std::ostream& out, const EvaluationReport& report, Index window_minutes) {
  out << "horizon,minutes,mae,rmse,mape\n";
  for (const HorizonMetrics& h : report.horizons) {
    out << h.steps << ',' << h.steps * window_minutes << ',' << format_double(h.metrics.mae) << ','
        << format_double(h.metrics.rmse) << ',' << format_double(h.metrics.mape) << '\n';
  }
  out << "Average,," << format_double(report.average.mae) << ',' << format_double(report.average.rmse) << ','
      << format_double(report.average.mape) << '\n';
}

}  // namespace stjla
