#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stjla/graph.hpp"
#include "stjla/optim.hpp"
#include "stjla/tensor.hpp"

namespace stjla {

inline constexpr Index kSpatialEmbeddingDim = 64;

// --- static spatial context -----------------------------------------------

struct Node2VecOptions {
  double p = 1.0;  // return parameter
  double q = 1.0;  // in-out parameter
  Index walk_length = 80;
  Index walks_per_node = 10;
  std::uint64_t seed = 0;
};

using Walk = std::vector<Index>;

/// Second-order biased random walks over the undirected view of `g`
/// (edge weights are not used; self-loops are dropped). Every node starts
/// `walks_per_node` walks; a node without neighbours yields walks of length 1.
std::vector<Walk> node2vec_walks(const RoadGraph& g, const Node2VecOptions& opts);

struct SkipGramOptions {
  Index dim = kSpatialEmbeddingDim;
  Index window = 10;
  Index negatives = 5;
  Index epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 0;
};

/// Skip-gram with negative sampling over walk co-occurrences. Returns the
/// [n_nodes x dim] input-vector table; nodes absent from every walk keep their
/// random initialization.
Tensor skipgram_train(const std::vector<Walk>& walks, Index n_nodes, const SkipGramOptions& opts);

class EmbeddingFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text format: one line per node, `dim` space-separated decimals.
Tensor load_embeddings(const std::filesystem::path& path, Index n_nodes, Index dim = kSpatialEmbeddingDim);
/// Writes shortest round-trip decimals, so save -> load is bit-exact.
void save_embeddings(const std::filesystem::path& path, const Tensor& embeddings);

// --- static temporal context -----------------------------------------------

/// One-hot day slot concatenated with one-hot weekday (Monday = 0):
/// positions `t mod slots` and `slots + (start_weekday + t / slots) mod 7`.
Vector temporal_onehot(Index time_index, Index slots_per_day, Index start_weekday);

/// Rows t0 .. t0+length-1 of the temporal encoding, [length x (slots + 7)].
Tensor temporal_context(Index t0, Index length, Index slots_per_day, Index start_weekday);

// --- dynamic temporal context ------------------------------------------------

struct GruLayer {
  Tensor w_xr, w_hr, w_xu, w_hu, w_xh, w_hh;  // F x F
  Tensor b_r, b_u, b_h;                       // F
};

using GruParams = std::vector<GruLayer>;

GruLayer make_gru_layer(ParameterSet& params, const std::string& prefix, Index width, std::mt19937_64& rng);
GruParams make_gru(ParameterSet& params, const std::string& prefix, Index width, Index layers, std::mt19937_64& rng);

/// R = sigmoid(x W_xr + h W_hr + b_r), U = sigmoid(x W_xu + h W_hu + b_u),
/// H~ = tanh(x W_xh + (R * h) W_hh + b_h), H = U * h + (1 - U) * H~.
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruLayer& layer);

struct GruOutput {
  Tensor outputs;                   // [T x N x F], top layer
  std::vector<Tensor> final_states; // per layer, [N x F]
};

/// Stacked GRU over x [T x N x F]. `h0` holds one initial state per layer, or
/// is empty for zero states.
GruOutput gru_sequence(const Tensor& x, const std::vector<Tensor>& h0, const GruParams& layers);

}  // namespace stjla
