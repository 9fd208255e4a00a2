#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "stjla/checkpoint.hpp"
#include "stjla/data.hpp"
#include "stjla/model.hpp"

namespace stjla {

/// Raised when a training loss goes non-finite. The checkpoint at
/// `last_good()` holds the best parameters seen before the failure.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::filesystem::path last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const std::filesystem::path& last_good() const { return last_good_; }

 private:
  std::filesystem::path last_good_;
};

/// node2vec walks plus skip-gram, seeded from cfg.seed.
Tensor compute_spatial_embeddings(const RoadGraph& graph, const ModelConfig& cfg);

// --- checkpoints ---------------------------------------------------------

Checkpoint model_checkpoint(const Stjla& model, const Normalizer& norm, const AdamState* optimizer,
                            const KeyValues& extra = {});

struct LoadedModel {
  Stjla model;
  Normalizer normalizer;
  std::optional<AdamState> optimizer;
};

/// Rebuilds a model from a checkpoint. Throws ShapeError naming expected and
/// found dimensions when the graph does not match the stored model.
LoadedModel load_model(const Checkpoint& ckpt, const RoadGraph& graph);

// --- training ------------------------------------------------------------

/// Mean over the batch of each sample's summed absolute error (normalized
/// units). Accumulates gradients on the model parameters; `train_metrics`,
/// if given, receives the de-normalized pre-update predictions.
Scalar batch_loss_backward(const Stjla& model, const Dataset& data, std::span<const SampleWindow> batch,
                           MetricsAccumulator* train_metrics = nullptr);

struct EpochLog {
  Index epoch = 0;  // 1-based
  Metrics train;
  std::optional<Metrics> val;
  double lr = 0;
  double seconds = 0;
};

struct TrainOptions {
  std::filesystem::path checkpoint;   // best-validation checkpoint; empty = do not write
  std::filesystem::path metrics_csv;  // empty = do not write
  std::ostream* log = nullptr;
  /// Training windows to draw batches from; defaults to the whole train split.
  std::optional<std::vector<SampleWindow>> train_windows;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::vector<Scalar> step_losses;
  Index best_epoch = 0;  // 0 = initial parameters
  double best_val_mae = 0;
};

/// Mini-batch Adam with the configured step schedule. Batches are shuffled
/// each epoch by a generator seeded from the config seed.
TrainResult train(Stjla& model, const Dataset& data, const TrainOptions& options);

// --- evaluation ----------------------------------------------------------

/// Maps a window start to a prediction [T_p x N x C] in raw units.
using Predictor = std::function<Tensor(const SampleWindow&)>;

Predictor model_predictor(const Stjla& model, const Dataset& data);

struct HorizonMetrics {
  Index steps = 0;  // metrics aggregate horizon steps 1..steps
  Metrics metrics;
};

struct EvaluationReport {
  std::vector<HorizonMetrics> horizons;
  Metrics average;
};

struct EvaluationOptions {
  Index horizon = 12;
  std::vector<Index> horizons;  // empty = {horizon}
  double mask_eps = 1e-3;
  std::ostream* predictions = nullptr;  // CSV rows t_abs,node,pred,truth
  Index prediction_step = 0;            // horizon step exported to `predictions`; 0 = last
};

EvaluationReport evaluate(const Predictor& predictor, const Dataset& data, std::span<const SampleWindow> windows,
                          Index history, const EvaluationOptions& options);

/// Header `horizon,minutes,mae,rmse,mape`; one row per horizon then `Average`.
void write_evaluation_csv(std::ostream& out, const EvaluationReport& report, Index window_minutes);

}  // namespace stjla
