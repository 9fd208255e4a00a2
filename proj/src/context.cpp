#include "stjla/context.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stjla/ops.hpp"

namespace stjla {

namespace {

std::vector<std::vector<Index>> undirected_neighbours(const RoadGraph& g) {
  std::vector<std::vector<Index>> adj(static_cast<std::size_t>(g.size()));
  for (const Edge& e : g.edges()) {
    if (e.src == e.dst) continue;
    adj[static_cast<std::size_t>(e.src)].push_back(e.dst);
    adj[static_cast<std::size_t>(e.dst)].push_back(e.src);
  }
  for (auto& list : adj) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adj;
}

}  // namespace

std::vector<Walk> node2vec_walks(const RoadGraph& g, const Node2VecOptions& opts) {
  if (!(opts.p > 0) || !(opts.q > 0)) throw ContractError("node2vec p and q must be positive");
  if (opts.walk_length < 2) throw ContractError("node2vec walk length must be >= 2");
  if (opts.walks_per_node < 1) throw ContractError("node2vec walks_per_node must be >= 1");

  const auto adj = undirected_neighbours(g);
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) total += w;
    double r = unit(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0) return i;
    }
    return weights.size() - 1;
  };

  std::vector<Index> order(static_cast<std::size_t>(g.size()));
  for (Index i = 0; i < g.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  std::vector<Walk> walks;
  walks.reserve(static_cast<std::size_t>(g.size() * opts.walks_per_node));
  std::vector<double> weights;
  for (Index round = 0; round < opts.walks_per_node; ++round) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start : order) {
      Walk walk{start};
      walk.reserve(static_cast<std::size_t>(opts.walk_length));
      while (static_cast<Index>(walk.size()) < opts.walk_length) {
        const Index cur = walk.back();
        const auto& nbrs = adj[static_cast<std::size_t>(cur)];
        if (nbrs.empty()) break;
        if (walk.size() == 1) {
          walk.push_back(nbrs[static_cast<std::size_t>(unit(rng) * static_cast<double>(nbrs.size())) % nbrs.size()]);
          continue;
        }
        const Index prev = walk[walk.size() - 2];
        const auto& prev_nbrs = adj[static_cast<std::size_t>(prev)];
        weights.clear();
        for (Index x : nbrs) {
          if (x == prev) {
            weights.push_back(1.0 / opts.p);
          } else if (std::binary_search(prev_nbrs.begin(), prev_nbrs.end(), x)) {
            weights.push_back(1.0);
          } else {
            weights.push_back(1.0 / opts.q);
          }
        }
        walk.push_back(nbrs[pick(weights)]);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

Tensor skipgram_train(const std::vector<Walk>& walks, Index n_nodes, const SkipGramOptions& opts) {
  if (walks.empty()) throw ContractError("skipgram_train: no walks given; run node2vec_walks first");
  if (opts.dim < 1 || opts.window < 1 || opts.negatives < 0 || opts.epochs < 1) {
    throw ContractError("skipgram_train: invalid options");
  }
  std::mt19937_64 rng(opts.seed);
  using Table = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Table input(n_nodes, opts.dim);
  {
    std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(opts.dim),
                                                0.5 / static_cast<double>(opts.dim));
    for (Index i = 0; i < input.size(); ++i) input.data()[i] = init(rng);
  }
  Table output = Table::Zero(n_nodes, opts.dim);

  std::vector<double> freq(static_cast<std::size_t>(n_nodes), 0.0);
  std::size_t tokens = 0;
  for (const Walk& w : walks) {
    for (Index v : w) {
      if (v < 0 || v >= n_nodes) throw ContractError("skipgram_train: walk node out of range");
      freq[static_cast<std::size_t>(v)] += 1;
    }
    tokens += w.size();
  }
  for (double& f : freq) f = std::pow(f, 0.75);
  std::discrete_distribution<Index> negative(freq.begin(), freq.end());

  const double total_steps = static_cast<double>(opts.epochs) * static_cast<double>(tokens);
  double done = 0;
  Eigen::Matrix<double, 1, Eigen::Dynamic> grad_in(opts.dim);
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  for (Index epoch = 0; epoch < opts.epochs; ++epoch) {
    for (const Walk& w : walks) {
      const auto len = static_cast<Index>(w.size());
      for (Index i = 0; i < len; ++i, done += 1) {
        const double lr = opts.learning_rate * std::max(1e-4, 1.0 - done / total_steps);
        const Index center = w[static_cast<std::size_t>(i)];
        for (Index j = std::max<Index>(0, i - opts.window); j <= std::min(len - 1, i + opts.window); ++j) {
          if (j == i) continue;
          const Index context = w[static_cast<std::size_t>(j)];
          grad_in.setZero();
          for (Index s = 0; s <= opts.negatives; ++s) {
            Index target = context;
            double label = 1.0;
            if (s > 0) {
              target = negative(rng);
              if (target == context) continue;
              label = 0.0;
            }
            const double f = input.row(center).dot(output.row(target));
            const double g = (label - sigmoid(f)) * lr;
            grad_in += g * output.row(target);
            output.row(target) += g * input.row(center);
          }
          input.row(center) += grad_in;
        }
      }
    }
  }

  Vector data(input.size());
  for (Index i = 0; i < input.size(); ++i) data[i] = static_cast<Scalar>(input.data()[i]);
  if (!data.allFinite()) throw NumericError("skipgram_train produced non-finite embeddings");
  return Tensor({n_nodes, opts.dim}, std::move(data));
}

Tensor load_embeddings(const std::filesystem::path& path, Index n_nodes, Index dim) {
  std::ifstream in(path);
  if (!in) throw EmbeddingFormatError("cannot open embedding file '" + path.string() + "'");
  Vector data(n_nodes * dim);
  Index row = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (row >= n_nodes) {
      throw EmbeddingFormatError(path.string() + ": expected " + std::to_string(n_nodes) + " rows, found more");
    }
    std::istringstream ss(line);
    Index col = 0;
    for (std::string tok; ss >> tok;) {
      if (col >= dim) {
        throw EmbeddingFormatError(path.string() + ":" + std::to_string(row + 1) + ": expected " +
                                   std::to_string(dim) + " columns, found more");
      }
      double v = 0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw EmbeddingFormatError(path.string() + ":" + std::to_string(row + 1) + ": bad number '" + tok + "'");
      }
      data[row * dim + col++] = static_cast<Scalar>(v);
    }
    if (col != dim) {
      throw EmbeddingFormatError(path.string() + ":" + std::to_string(row + 1) + ": expected " + std::to_string(dim) +
                                 " columns, found " + std::to_string(col));
    }
    ++row;
  }
  if (row != n_nodes) {
    throw EmbeddingFormatError(path.string() + ": expected " + std::to_string(n_nodes) + " rows, found " +
                               std::to_string(row));
  }
  return Tensor({n_nodes, dim}, std::move(data));
}

void save_embeddings(const std::filesystem::path& path, const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("embeddings must be rank 2");
  std::ofstream out(path);
  if (!out) throw EmbeddingFormatError("cannot open '" + path.string() + "' for writing");
  char buf[64];
  const auto m = embeddings.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<double>(m(i, j)));
      if (j) out << ' ';
      out.write(buf, ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw EmbeddingFormatError("write to '" + path.string() + "' failed");
}

Vector temporal_onehot(Index time_index, Index slots_per_day, Index start_weekday) {
  if (slots_per_day < 1) throw ContractError("slots_per_day must be positive");
  if (time_index < 0) throw ContractError("time index must be non-negative");
  Vector v = Vector::Zero(slots_per_day + 7);
  v[time_index % slots_per_day] = 1;
  const Index weekday = ((start_weekday % 7 + 7) % 7 + time_index / slots_per_day) % 7;
  v[slots_per_day + weekday] = 1;
  return v;
}

Tensor temporal_context(Index t0, Index length, Index slots_per_day, Index start_weekday) {
  const Index width = slots_per_day + 7;
  Vector data(length * width);
  for (Index t = 0; t < length; ++t) {
    data.segment(t * width, width) = temporal_onehot(t0 + t, slots_per_day, start_weekday);
  }
  return Tensor({length, width}, std::move(data));
}

GruLayer make_gru_layer(ParameterSet& params, const std::string& prefix, Index width, std::mt19937_64& rng) {
  GruLayer l;
  l.w_xr = params.add(prefix + ".w_xr", init_weight(width, width, rng));
  l.w_hr = params.add(prefix + ".w_hr", init_weight(width, width, rng));
  l.w_xu = params.add(prefix + ".w_xu", init_weight(width, width, rng));
  l.w_hu = params.add(prefix + ".w_hu", init_weight(width, width, rng));
  l.w_xh = params.add(prefix + ".w_xh", init_weight(width, width, rng));
  l.w_hh = params.add(prefix + ".w_hh", init_weight(width, width, rng));
  l.b_r = params.add(prefix + ".b_r", init_bias(width));
  l.b_u = params.add(prefix + ".b_u", init_bias(width));
  l.b_h = params.add(prefix + ".b_h", init_bias(width));
  return l;
}

GruParams make_gru(ParameterSet& params, const std::string& prefix, Index width, Index layers, std::mt19937_64& rng) {
  if (layers < 1) throw ContractError("GRU needs at least one layer");
  GruParams out;
  for (Index i = 0; i < layers; ++i) out.push_back(make_gru_layer(params, prefix + "." + std::to_string(i), width, rng));
  return out;
}

Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruLayer& layer) {
  if (x.shape() != h_prev.shape() || x.rank() != 2) {
    throw ShapeError("gru_cell: input " + to_string(x.shape()) + " and state " + to_string(h_prev.shape()) +
                     " must be equal [N x F]");
  }
  const Tensor r = sigmoid(add(add(matmul(x, layer.w_xr), matmul(h_prev, layer.w_hr)), layer.b_r));
  const Tensor u = sigmoid(add(add(matmul(x, layer.w_xu), matmul(h_prev, layer.w_hu)), layer.b_u));
  const Tensor candidate = tanh(add(add(matmul(x, layer.w_xh), matmul(mul(r, h_prev), layer.w_hh)), layer.b_h));
  return add(mul(u, h_prev), mul(one_minus(u), candidate));
}

GruOutput gru_sequence(const Tensor& x, const std::vector<Tensor>& h0, const GruParams& layers) {
  if (x.rank() != 3) throw ShapeError("gru_sequence expects [T x N x F], got " + to_string(x.shape()));
  if (layers.empty()) throw ContractError("gru_sequence needs at least one layer");
  if (!h0.empty() && h0.size() != layers.size()) {
    throw ContractError("gru_sequence: " + std::to_string(h0.size()) + " initial states for " +
                        std::to_string(layers.size()) + " layers");
  }
  const Index steps = x.dim(0);
  std::vector<Tensor> inputs;
  inputs.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) inputs.push_back(select(x, 0, t));

  GruOutput out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Tensor h = h0.empty() ? Tensor::zeros({x.dim(1), x.dim(2)}) : h0[l];
    for (Index t = 0; t < steps; ++t) {
      h = gru_cell(inputs[static_cast<std::size_t>(t)], h, layers[l]);
      inputs[static_cast<std::size_t>(t)] = h;
    }
    out.final_states.push_back(h);
  }
  out.outputs = stack(inputs, 0);
  return out;
}

}  // namespace stjla
