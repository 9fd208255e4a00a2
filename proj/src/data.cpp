#include "stjla/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "stjla/config.hpp"

namespace stjla {

DatasetMeta load_meta(const std::filesystem::path& path) {
  const KeyValues kv = read_key_values(path);
  DatasetMeta meta;
  bool have_nodes = false;
  for (const auto& [key, value] : kv) {
    if (key == "n_nodes") {
      meta.n_nodes = parse_index(key, value);
      have_nodes = true;
    } else if (key == "channels") {
      meta.channels = parse_index(key, value);
    } else if (key == "window_minutes") {
      meta.window_minutes = parse_index(key, value);
    } else if (key == "start_time") {
      meta.start_time = value;
    } else if (key == "start_weekday") {
      meta.start_weekday = parse_index(key, value);
    } else {
      throw ConfigError("unknown meta key '" + key + "' in " + path.string());
    }
  }
  if (!have_nodes || meta.n_nodes < 1) throw ConfigError(path.string() + ": n_nodes must be given and positive");
  if (meta.channels < 1) throw ConfigError(path.string() + ": channels must be positive");
  if (meta.window_minutes < 1 || 1440 % meta.window_minutes != 0) {
    throw ConfigError(path.string() + ": window_minutes must divide a day");
  }
  if (meta.start_weekday < 0 || meta.start_weekday > 6) throw ConfigError(path.string() + ": start_weekday in 0..6");
  return meta;
}

void save_meta(const std::filesystem::path& path, const DatasetMeta& meta) {
  write_key_values(path, {{"n_nodes", std::to_string(meta.n_nodes)},
                          {"channels", std::to_string(meta.channels)},
                          {"window_minutes", std::to_string(meta.window_minutes)},
                          {"start_time", meta.start_time},
                          {"start_weekday", std::to_string(meta.start_weekday)}});
}

Tensor load_readings(const std::filesystem::path& path, Index n_nodes, Index channels) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open readings file '" + path.string() + "'");
  const Index width = n_nodes * channels;
  std::vector<Scalar> values;
  std::string line;
  Index line_no = 0;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<Scalar> row;
    row.reserve(static_cast<std::size_t>(width));
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      const auto b = cell.find_first_not_of(" \t");
      const auto e = cell.find_last_not_of(" \t");
      cell = b == std::string::npos ? std::string() : cell.substr(b, e - b + 1);
      double v = 0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
      }
      row.push_back(static_cast<Scalar>(v));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (static_cast<Index>(row.size()) != width) {
      throw DataFormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                            " values (" + std::to_string(n_nodes) + " nodes x " + std::to_string(channels) +
                            " channels), found " + std::to_string(row.size()));
    }
    // File layout is channel-major within a row; tensor layout is [t][node][channel].
    for (Index i = 0; i < n_nodes; ++i) {
      for (Index c = 0; c < channels; ++c) values.push_back(row[static_cast<std::size_t>(c * n_nodes + i)]);
    }
    ++rows;
  }
  if (rows == 0) throw DataFormatError("readings file '" + path.string() + "' is empty");
  Vector data = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  return Tensor({rows, n_nodes, channels}, std::move(data));
}

void save_readings(const std::filesystem::path& path, const Tensor& readings) {
  if (readings.rank() != 3) throw ShapeError("readings must be [TS x N x C]");
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot open '" + path.string() + "' for writing");
  const Index steps = readings.dim(0), n = readings.dim(1), c = readings.dim(2);
  const Vector& d = readings.data();
  char buf[64];
  for (Index t = 0; t < steps; ++t) {
    for (Index ch = 0; ch < c; ++ch) {
      for (Index i = 0; i < n; ++i) {
        if (ch || i) out << ',';
        auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<double>(d[(t * n + i) * c + ch]));
        out.write(buf, ptr - buf);
      }
    }
    out << '\n';
  }
}

Normalizer Normalizer::fit(const Tensor& readings, Index begin, Index end) {
  if (readings.rank() != 3) throw ShapeError("Normalizer::fit expects [TS x N x C]");
  if (begin < 0 || end > readings.dim(0) || end <= begin) throw ContractError("Normalizer::fit: empty time range");
  const Index per_step = readings.dim(1) * readings.dim(2);
  const auto block = readings.data().segment(begin * per_step, (end - begin) * per_step).array();
  Normalizer n;
  n.mean = block.mean();
  n.std = std::sqrt((block - n.mean).square().mean());
  if (!(n.std > 0)) throw DegenerateDataError("readings have zero variance over the training span");
  return n;
}

Tensor Normalizer::apply(const Tensor& x) const {
  return Tensor(x.shape(), apply(x.data()).matrix());
}

Tensor Normalizer::invert(const Tensor& z) const {
  return Tensor(z.shape(), invert(z.data()).matrix());
}

RawSplits chronological_split(Index steps, const SplitFractions& f) {
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9 || f.train < 0 || f.val < 0 || f.test < 0) {
    throw ContractError("split fractions must be non-negative and sum to 1");
  }
  // The epsilon absorbs representation error such as 0.7 * 100 = 69.999...
  auto boundary = [steps](double frac) {
    return std::min<Index>(steps, static_cast<Index>(std::floor(frac * static_cast<double>(steps) + 1e-9)));
  };
  const Index a = boundary(f.train);
  const Index b = boundary(f.train + f.val);
  return {{0, a}, {a, b}, {b, steps}};
}

std::vector<SampleWindow> make_windows(const RawRange& range, Index history, Index horizon) {
  if (history < 1 || horizon < 1) throw ContractError("history and horizon must be >= 1");
  std::vector<SampleWindow> out;
  for (Index t0 = range.begin; t0 + history + horizon <= range.end; ++t0) out.push_back({t0});
  return out;
}

WindowSplits split_windows(const RawSplits& splits, Index history, Index horizon) {
  return {make_windows(splits.train, history, horizon), make_windows(splits.val, history, horizon),
          make_windows(splits.test, history, horizon)};
}

Dataset::Dataset(Tensor readings, DatasetMeta meta, SplitFractions fractions)
    : raw_(std::move(readings)), meta_(std::move(meta)) {
  if (raw_.rank() != 3) throw ShapeError("readings must be [TS x N x C], got " + to_string(raw_.shape()));
  if (!raw_.data().allFinite()) throw DataFormatError("readings contain non-finite values");
  splits_ = chronological_split(steps(), fractions);
  norm_ = Normalizer::fit(raw_, splits_.train.begin, splits_.train.end);
}

Tensor Dataset::raw(Index t, Index length) const {
  if (t < 0 || length < 1 || t + length > steps()) {
    throw ContractError("time block [" + std::to_string(t) + ", " + std::to_string(t + length) +
                        ") outside dataset of " + std::to_string(steps()) + " steps");
  }
  const Index per_step = nodes() * channels();
  return Tensor({length, nodes(), channels()}, raw_.data().segment(t * per_step, length * per_step));
}

Tensor Dataset::normalized(Index t, Index length) const { return norm_.apply(raw(t, length)); }

void Dataset::set_normalizer(const Normalizer& n) {
  if (!(n.std > 0)) throw DegenerateDataError("normalizer std must be positive");
  norm_ = n;
}

std::pair<Dataset, RoadGraph> load_dataset(const std::filesystem::path& readings_path,
                                           const std::filesystem::path& adjacency_path,
                                           const std::filesystem::path& meta_path, const SplitFractions& fractions) {
  DatasetMeta meta = load_meta(meta_path);
  RoadGraph graph = load_road_graph(adjacency_path);
  if (graph.size() != meta.n_nodes) {
    throw DataFormatError("graph has " + std::to_string(graph.size()) + " nodes but meta declares " +
                          std::to_string(meta.n_nodes));
  }
  Tensor readings = load_readings(readings_path, meta.n_nodes, meta.channels);
  return {Dataset(std::move(readings), std::move(meta), fractions), std::move(graph)};
}

SyntheticData make_synthetic(const SyntheticOptions& o) {
  if (o.nodes < 3 || o.steps < 1 || o.slots_per_day < 1 || 1440 % o.slots_per_day != 0 || o.noise < 0) {
    throw ContractError("synthetic: need >= 3 nodes, positive steps, slots dividing a day, noise >= 0");
  }
  std::vector<Edge> edges;
  for (Index i = 0; i < o.nodes; ++i) {
    edges.push_back({i, (i + 1) % o.nodes, 1.0});
    edges.push_back({(i + 1) % o.nodes, i, 1.0});
  }
  RoadGraph graph(o.nodes, edges);

  const double two_pi = 2 * std::numbers::pi;
  Matrix base(o.steps, o.nodes);
  for (Index t = 0; t < o.steps; ++t) {
    const double phase = two_pi * static_cast<double>(t % o.slots_per_day) / static_cast<double>(o.slots_per_day);
    for (Index i = 0; i < o.nodes; ++i) {
      const double shift = two_pi * static_cast<double>(i) / static_cast<double>(o.nodes);
      base(t, i) = 50 + 20 * std::sin(phase + shift) + 6 * std::sin(2 * phase + 0.5 * shift);
    }
  }
  // Half stays, half spreads to the two ring neighbours.
  Matrix clean(o.steps, o.nodes);
  for (Index i = 0; i < o.nodes; ++i) {
    clean.col(i) = 0.5 * base.col(i) + 0.25 * (base.col((i + 1) % o.nodes) + base.col((i + o.nodes - 1) % o.nodes));
  }
  const double mean = clean.mean();
  const double std = std::sqrt((clean.array() - mean).square().mean());

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, o.noise * std);
  Matrix noisy = clean;
  for (Index t = 0; t < o.steps; ++t) {
    for (Index i = 0; i < o.nodes; ++i) noisy(t, i) += gauss(rng);
  }
  DatasetMeta meta;
  meta.n_nodes = o.nodes;
  meta.window_minutes = 1440 / o.slots_per_day;
  meta.start_time = "synthetic";
  Vector data = Eigen::Map<const Vector>(noisy.data(), noisy.size());
  return {Tensor({o.steps, o.nodes, 1}, std::move(data)), std::move(graph), meta, std};
}

Metrics MetricsAccumulator::result() const {
  if (count_ == 0) throw DegenerateDataError("metrics over zero entries");
  if (ape_count_ == 0) throw DegenerateDataError("MAPE undefined: every truth entry is below the mask threshold");
  const double n = static_cast<double>(count_);
  return {abs_sum_ / n, std::sqrt(sq_sum_ / n), 100.0 * ape_sum_ / static_cast<double>(ape_count_)};
}

}  // namespace stjla
