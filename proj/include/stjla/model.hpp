#pragma once

#include <span>
#include <vector>

#include "stjla/attention.hpp"
#include "stjla/config.hpp"
#include "stjla/context.hpp"
#include "stjla/graph.hpp"
#include "stjla/optim.hpp"

namespace stjla {

/// Learnable weights of one encoder or decoder block.
struct BlockParams {
  GruParams gru;
  MhdcnWeights mhdcn;
  Tensor fuse_w, fuse_b;  // (streams * F) -> F
  AttentionParams attention;
};

struct StjlaParams {
  Tensor input_w, input_b;    // C -> F
  Tensor output_w, output_b;  // F -> C
  Tensor ssc_w, ssc_b;        // 64 -> F
  Tensor tsc_w, tsc_b;        // (slots + 7) -> F
  BlockParams encoder;
  BlockParams decoder;
  GruParams transform_gru;
  Tensor query_fuse_w, query_fuse_b;  // generated future + statics -> F
  Tensor key_fuse_w, key_fuse_b;      // encoder tokens + statics -> F
  AttentionParams transform_attention;
};

enum class BlockSide { kEncoder, kDecoder };

struct ContextBlockOutput {
  Tensor tokens;                      // [(T N) x F]
  std::vector<Tensor> gru_final;      // per GRU layer, [N x F]; empty if DTC is disabled
};

struct EncoderOutput {
  Tensor tokens;                      // [(T_h N) x F]
  std::vector<Tensor> final_hidden;   // per GRU layer, [N x F]
};

/// Projected static context for a span of time steps.
struct StaticStreams {
  Tensor ssc;  // [T x N x F] (empty when disabled)
  Tensor tsc;  // [T x N x F] (empty when disabled)
};

/// Spatio-temporal joint linear attention forecaster.
///
/// The model owns its hop decomposition and static spatial embeddings; it is
/// immutable apart from parameter updates by an optimizer. Forward passes
/// build a fresh autodiff graph per call.
class Stjla {
 public:
  Stjla(const ModelConfig& cfg, const RoadGraph& graph, Tensor spatial_embeddings);

  const ModelConfig& config() const { return cfg_; }
  const ParameterSet& parameters() const { return params_set_; }
  const StjlaParams& params() const { return p_; }
  const HopMatrix& hops() const { return hops_; }
  const Tensor& spatial_embeddings() const { return ssc_embeddings_; }
  Index nodes() const { return n_; }

  /// x [T_h x N x C] normalized, t0 = absolute index of its first step.
  /// Returns normalized predictions [T_p x N x C].
  Tensor forward(const Tensor& x, Index t0) const;
  /// x [B x T_h x N x C]; one t0 per batch element. Returns [B x T_p x N x C].
  Tensor forward_batch(const Tensor& x, std::span<const Index> t0s) const;

  // Stages, exposed for testing.
  Tensor input_projection(const Tensor& x) const;
  Tensor output_projection(const Tensor& y) const;
  StaticStreams static_streams(Index t_start, Index length) const;
  ContextBlockOutput build_context_block(const Tensor& x, BlockSide side, const StaticStreams& statics,
                                         const std::vector<Tensor>& gru_h0) const;
  EncoderOutput encoder_forward(const Tensor& x_proj, Index t0) const;
  Tensor transform_layer(const EncoderOutput& enc, const Tensor& x_last, Index t0) const;
  Tensor decoder_forward(const Tensor& dec_tokens, const std::vector<Tensor>& enc_final_hidden, Index t0) const;

 private:
  const BlockParams& block(BlockSide side) const {
    return side == BlockSide::kEncoder ? p_.encoder : p_.decoder;
  }
  BlockParams make_block(const std::string& prefix, std::mt19937_64& rng);
  AttentionParams make_attention(const std::string& prefix, std::mt19937_64& rng);
  Index static_stream_count() const;

  ModelConfig cfg_;
  Index n_;
  HopMatrix hops_;
  Tensor ssc_embeddings_;
  ParameterSet params_set_;
  StjlaParams p_;
};

}  // namespace stjla
