#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "stjla/graph.hpp"
#include "stjla/tensor.hpp"

namespace stjla {

class DataFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetMeta {
  Index n_nodes = 0;
  Index channels = 1;
  Index window_minutes = 5;
  std::string start_time;  // informational, e.g. 2014-01-01T00:00
  Index start_weekday = 0; // Monday = 0

  Index slots_per_day() const { return 1440 / window_minutes; }
};

/// `key = value` lines: n_nodes, channels, window_minutes, start_time, start_weekday.
DatasetMeta load_meta(const std::filesystem::path& path);
void save_meta(const std::filesystem::path& path, const DatasetMeta& meta);

/// Headerless text, one row per time step holding `channels` blocks of
/// `n_nodes` comma-separated values. Returns [TS x N x C].
Tensor load_readings(const std::filesystem::path& path, Index n_nodes, Index channels);
void save_readings(const std::filesystem::path& path, const Tensor& readings);

struct Normalizer {
  Scalar mean = 0;
  Scalar std = 1;

  /// Population mean/std over time steps [begin, end) of [TS x N x C] readings.
  static Normalizer fit(const Tensor& readings, Index begin, Index end);

  template <typename Derived>
  auto apply(const Eigen::DenseBase<Derived>& x) const {
    return (x.derived().array() - mean) / std;
  }
  template <typename Derived>
  auto invert(const Eigen::DenseBase<Derived>& z) const {
    return z.derived().array() * std + mean;
  }
  Tensor apply(const Tensor& x) const;
  Tensor invert(const Tensor& z) const;
};

struct RawRange {
  Index begin = 0;
  Index end = 0;  // exclusive

  Index size() const { return end - begin; }
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

/// Contiguous chronological ranges of raw time steps; boundaries are
/// floor(0.7 TS) and floor(0.8 TS) for the default fractions.
struct RawSplits {
  RawRange train, val, test;
};

RawSplits chronological_split(Index steps, const SplitFractions& fractions = {});

struct SampleWindow {
  Index t0 = 0;  // absolute index of the first history step
};

/// Stride-1 windows whose history and horizon both fall inside `range`:
/// t0 = begin .. end - history - horizon.
std::vector<SampleWindow> make_windows(const RawRange& range, Index history, Index horizon);

struct WindowSplits {
  std::vector<SampleWindow> train, val, test;
};

WindowSplits split_windows(const RawSplits& splits, Index history, Index horizon);

class Dataset {
 public:
  Dataset(Tensor readings, DatasetMeta meta, SplitFractions fractions = {});

  const Tensor& readings() const { return raw_; }
  const DatasetMeta& meta() const { return meta_; }
  const Normalizer& normalizer() const { return norm_; }
  const RawSplits& splits() const { return splits_; }
  Index steps() const { return raw_.dim(0); }
  Index nodes() const { return raw_.dim(1); }
  Index channels() const { return raw_.dim(2); }

  /// Normalized [length x N x C] block starting at t.
  Tensor normalized(Index t, Index length) const;
  /// Raw [length x N x C] block starting at t.
  Tensor raw(Index t, Index length) const;

  void set_normalizer(const Normalizer& n);

 private:
  Tensor raw_;
  DatasetMeta meta_;
  RawSplits splits_;
  Normalizer norm_;
};

/// Loads readings, adjacency and meta; checks that the node counts agree.
std::pair<Dataset, RoadGraph> load_dataset(const std::filesystem::path& readings_path,
                                           const std::filesystem::path& adjacency_path,
                                           const std::filesystem::path& meta_path,
                                           const SplitFractions& fractions = {});

// --- synthetic data ------------------------------------------------------

struct SyntheticOptions {
  Index nodes = 8;
  Index steps = 2000;
  Index slots_per_day = 48;
  double noise = 0.05;  // noise std as a fraction of the clean signal's std
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Tensor readings;  // [steps x nodes x 1]
  RoadGraph graph;  // bidirectional ring
  DatasetMeta meta;
  double signal_std = 0;  // std of the clean signal
};

/// Daily sinusoids with per-node phases, smoothed by one step of ring
/// diffusion, plus Gaussian noise.
SyntheticData make_synthetic(const SyntheticOptions& options);

// --- metrics -------------------------------------------------------------

struct Metrics {
  double mae = 0;
  double rmse = 0;
  double mape = 0;  // percent
};

/// Streaming accumulator; MAPE skips entries with |truth| < mask_eps.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double mask_eps) : mask_eps_(mask_eps) {}

  template <typename DP, typename DT>
  void add(const Eigen::DenseBase<DP>& pred, const Eigen::DenseBase<DT>& truth) {
    if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) {
      throw ShapeError("metrics: prediction and truth shapes differ");
    }
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      for (Eigen::Index j = 0; j < pred.cols(); ++j) {
        add_one(static_cast<double>(pred(i, j)), static_cast<double>(truth(i, j)));
      }
    }
  }

  void add_one(double pred, double truth) {
    const double diff = pred - truth;
    abs_sum_ += std::abs(diff);
    sq_sum_ += diff * diff;
    ++count_;
    if (std::abs(truth) >= mask_eps_) {
      ape_sum_ += std::abs(diff / truth);
      ++ape_count_;
    }
  }

  long long count() const { return count_; }
  /// Throws DegenerateDataError when empty or when every entry is masked.
  Metrics result() const;

 private:
  double mask_eps_;
  double abs_sum_ = 0;
  double sq_sum_ = 0;
  double ape_sum_ = 0;
  long long count_ = 0;
  long long ape_count_ = 0;
};

/// MAE = mean |p - t|, RMSE = sqrt(mean (p - t)^2), MAPE = 100 mean |(p - t) / t|
/// over unmasked entries.
template <typename DP, typename DT>
Metrics metrics(const Eigen::DenseBase<DP>& pred, const Eigen::DenseBase<DT>& truth, double mask_eps) {
  MetricsAccumulator acc(mask_eps);
  acc.add(pred, truth);
  return acc.result();
}

}  // namespace stjla
