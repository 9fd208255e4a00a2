#include "stjla/model.hpp"

#include "stjla/ops.hpp"

namespace stjla {

Stjla::Stjla(const ModelConfig& cfg, const RoadGraph& graph, Tensor spatial_embeddings)
    : cfg_(cfg), n_(graph.size()), hops_(hop_adjacency(shortest_path_hops(graph), cfg.hops)) {
  cfg_.validate();
  if (spatial_embeddings.rank() != 2 || spatial_embeddings.dim(0) != n_) {
    throw ShapeError("spatial embeddings " + to_string(spatial_embeddings.shape()) + " do not cover " +
                     std::to_string(n_) + " nodes");
  }
  ssc_embeddings_ = spatial_embeddings.detach();

  const Index f = cfg_.model_dim;
  std::mt19937_64 rng(cfg_.seed);
  auto& ps = params_set_;
  p_.input_w = ps.add("input.w", init_weight(cfg_.channels, f, rng));
  p_.input_b = ps.add("input.b", init_bias(f));
  p_.output_w = ps.add("output.w", init_weight(f, cfg_.channels, rng));
  p_.output_b = ps.add("output.b", init_bias(cfg_.channels));
  if (cfg_.use_ssc) {
    p_.ssc_w = ps.add("ssc.w", init_weight(ssc_embeddings_.dim(1), f, rng));
    p_.ssc_b = ps.add("ssc.b", init_bias(f));
  }
  if (cfg_.use_tsc) {
    p_.tsc_w = ps.add("tsc.w", init_weight(cfg_.slots_per_day + 7, f, rng));
    p_.tsc_b = ps.add("tsc.b", init_bias(f));
  }
  p_.encoder = make_block("encoder", rng);
  p_.decoder = make_block("decoder", rng);
  p_.transform_gru = make_gru(ps, "transform.gru", f, cfg_.gru_layers, rng);
  const Index fused = (1 + static_stream_count()) * f;
  p_.query_fuse_w = ps.add("transform.query_fuse.w", init_weight(fused, f, rng));
  p_.query_fuse_b = ps.add("transform.query_fuse.b", init_bias(f));
  p_.key_fuse_w = ps.add("transform.key_fuse.w", init_weight(fused, f, rng));
  p_.key_fuse_b = ps.add("transform.key_fuse.b", init_bias(f));
  p_.transform_attention = make_attention("transform.attn", rng);
}

Index Stjla::static_stream_count() const { return (cfg_.use_ssc ? 1 : 0) + (cfg_.use_tsc ? 1 : 0); }

AttentionParams Stjla::make_attention(const std::string& prefix, std::mt19937_64& rng) {
  const Index f = cfg_.model_dim;
  AttentionParams a;
  for (Index h = 0; h < cfg_.heads; ++h) {
    const std::string s = std::to_string(h);
    a.w_q.push_back(params_set_.add(prefix + ".w_q." + s, init_weight(f, cfg_.head_dim, rng)));
    a.w_k.push_back(params_set_.add(prefix + ".w_k." + s, init_weight(f, cfg_.head_dim, rng)));
    a.w_v.push_back(params_set_.add(prefix + ".w_v." + s, init_weight(f, cfg_.head_dim, rng)));
  }
  a.w_o = params_set_.add(prefix + ".w_o", init_weight(f, f, rng));
  return a;
}

BlockParams Stjla::make_block(const std::string& prefix, std::mt19937_64& rng) {
  const Index f = cfg_.model_dim;
  BlockParams b;
  if (cfg_.use_dtc) b.gru = make_gru(params_set_, prefix + ".gru", f, cfg_.gru_layers, rng);
  if (cfg_.use_dsc) {
    for (Index i = 0; i < cfg_.hops; ++i) {
      b.mhdcn.w_x.push_back(
          params_set_.add(prefix + ".mhdcn.w_x." + std::to_string(i), init_weight(f, f / cfg_.hops, rng)));
    }
    b.mhdcn.w_d = params_set_.add(prefix + ".mhdcn.w_d", init_weight(f, f, rng));
  }
  const Index streams = 1 + (cfg_.use_dsc ? 1 : 0) + (cfg_.use_dtc ? 1 : 0) + static_stream_count();
  b.fuse_w = params_set_.add(prefix + ".fuse.w", init_weight(streams * f, f, rng));
  b.fuse_b = params_set_.add(prefix + ".fuse.b", init_bias(f));
  b.attention = make_attention(prefix + ".attn", rng);
  return b;
}

Tensor Stjla::input_projection(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(2) != cfg_.channels) {
    throw ShapeError("input_projection: expected [T x N x " + std::to_string(cfg_.channels) + "], got " +
                     to_string(x.shape()));
  }
  return linear(x, p_.input_w, p_.input_b);
}

Tensor Stjla::output_projection(const Tensor& y) const { return linear(y, p_.output_w, p_.output_b); }

StaticStreams Stjla::static_streams(Index t_start, Index length) const {
  StaticStreams s;
  if (cfg_.use_ssc) {
    s.ssc = expand(linear(ssc_embeddings_, p_.ssc_w, p_.ssc_b), 0, length);
  }
  if (cfg_.use_tsc) {
    const Tensor onehot = temporal_context(t_start, length, cfg_.slots_per_day, cfg_.start_weekday);
    s.tsc = expand(linear(onehot, p_.tsc_w, p_.tsc_b), 1, n_);
  }
  return s;
}

ContextBlockOutput Stjla::build_context_block(const Tensor& x, BlockSide side, const StaticStreams& statics,
                                              const std::vector<Tensor>& gru_h0) const {
  if (x.rank() != 3 || x.dim(1) != n_ || x.dim(2) != cfg_.model_dim) {
    throw ShapeError("context block: expected [T x " + std::to_string(n_) + " x " + std::to_string(cfg_.model_dim) +
                     "], got " + to_string(x.shape()));
  }
  auto check_span = [&](const Tensor& s, const char* name) {
    if (s.defined() && s.shape() != x.shape()) {
      throw ContractError(std::string("context block: ") + name + " spans " + to_string(s.shape()) +
                          " but features are " + to_string(x.shape()));
    }
  };
  check_span(statics.ssc, "SSC");
  check_span(statics.tsc, "TSC");

  const BlockParams& b = block(side);
  ContextBlockOutput out;
  std::vector<Tensor> streams{x};
  if (cfg_.use_dsc) streams.push_back(mhdcn(x, hops_, b.mhdcn));
  if (cfg_.use_dtc) {
    GruOutput g = gru_sequence(x, gru_h0, b.gru);
    streams.push_back(g.outputs);
    out.gru_final = std::move(g.final_states);
  }
  if (cfg_.use_ssc) streams.push_back(statics.ssc);
  if (cfg_.use_tsc) streams.push_back(statics.tsc);
  const Tensor fused = add(linear(concat(streams, -1), b.fuse_w, b.fuse_b), x);
  out.tokens = st_joint_reshape(fused);
  return out;
}

EncoderOutput Stjla::encoder_forward(const Tensor& x_proj, Index t0) const {
  const StaticStreams statics = static_streams(t0, x_proj.dim(0));
  ContextBlockOutput ctx = build_context_block(x_proj, BlockSide::kEncoder, statics, {});
  const Tensor attended = multi_head_attention(ctx.tokens, std::nullopt, p_.encoder.attention,
                                               {cfg_.heads, cfg_.head_dim});
  return {add(ctx.tokens, attended), std::move(ctx.gru_final)};
}

Tensor Stjla::transform_layer(const EncoderOutput& enc, const Tensor& x_last, Index t0) const {
  const Index f = cfg_.model_dim;
  if (x_last.rank() != 2 || x_last.dim(0) != n_ || x_last.dim(1) != f) {
    throw ShapeError("transform_layer: last input must be [N x F], got " + to_string(x_last.shape()));
  }
  // Roll the transform GRU forward from the encoder state, feeding each
  // step's top hidden state back in as the next input.
  std::vector<Tensor> hidden = enc.final_hidden;
  if (hidden.empty()) {
    for (Index l = 0; l < cfg_.gru_layers; ++l) hidden.push_back(Tensor::zeros({n_, f}));
  }
  std::vector<Tensor> generated;
  Tensor input = x_last;
  for (Index t = 0; t < cfg_.horizon; ++t) {
    for (std::size_t l = 0; l < p_.transform_gru.size(); ++l) {
      hidden[l] = gru_cell(l == 0 ? input : hidden[l - 1], hidden[l], p_.transform_gru[l]);
    }
    input = hidden.back();
    generated.push_back(input);
  }
  const Tensor future = stack(generated, 0);  // [T_p x N x F]

  const StaticStreams fut = static_streams(t0 + cfg_.history, cfg_.horizon);
  const StaticStreams hist = static_streams(t0, cfg_.history);
  std::vector<Tensor> q_parts{future};
  std::vector<Tensor> k_parts{st_joint_unreshape(enc.tokens, n_)};
  if (cfg_.use_ssc) {
    q_parts.push_back(fut.ssc);
    k_parts.push_back(hist.ssc);
  }
  if (cfg_.use_tsc) {
    q_parts.push_back(fut.tsc);
    k_parts.push_back(hist.tsc);
  }
  const Tensor query = add(linear(concat(q_parts, -1), p_.query_fuse_w, p_.query_fuse_b), future);
  const Tensor keys = add(linear(concat(k_parts, -1), p_.key_fuse_w, p_.key_fuse_b), k_parts.front());
  return multi_head_attention(st_joint_reshape(query), st_joint_reshape(keys), p_.transform_attention,
                              {cfg_.heads, cfg_.head_dim});
}

Tensor Stjla::decoder_forward(const Tensor& dec_tokens, const std::vector<Tensor>& enc_final_hidden, Index t0) const {
  const Tensor x = st_joint_unreshape(dec_tokens, n_);
  if (x.dim(0) != cfg_.horizon) {
    throw ShapeError("decoder_forward: expected " + std::to_string(cfg_.horizon) + " future steps, got " +
                     std::to_string(x.dim(0)));
  }
  const StaticStreams statics = static_streams(t0 + cfg_.history, cfg_.horizon);
  ContextBlockOutput ctx = build_context_block(x, BlockSide::kDecoder, statics, enc_final_hidden);
  const Tensor attended = multi_head_attention(ctx.tokens, std::nullopt, p_.decoder.attention,
                                               {cfg_.heads, cfg_.head_dim});
  return st_joint_unreshape(add(ctx.tokens, attended), n_);
}

Tensor Stjla::forward(const Tensor& x, Index t0) const {
  if (x.rank() != 3 || x.dim(0) != cfg_.history || x.dim(1) != n_ || x.dim(2) != cfg_.channels) {
    throw ShapeError("forward: expected [" + std::to_string(cfg_.history) + " x " + std::to_string(n_) + " x " +
                     std::to_string(cfg_.channels) + "], got " + to_string(x.shape()));
  }
  if (t0 < 0) throw ContractError("forward: negative time index");
  const Tensor x_proj = input_projection(x);
  const EncoderOutput enc = encoder_forward(x_proj, t0);
  const Tensor x_last = select(x_proj, 0, cfg_.history - 1);
  const Tensor dec_in = transform_layer(enc, x_last, t0);
  std::vector<Tensor> dec_h0 = enc.final_hidden;
  if (cfg_.use_dtc && dec_h0.empty()) {
    for (Index l = 0; l < cfg_.gru_layers; ++l) dec_h0.push_back(Tensor::zeros({n_, cfg_.model_dim}));
  }
  return output_projection(decoder_forward(dec_in, dec_h0, t0));
}

Tensor Stjla::forward_batch(const Tensor& x, std::span<const Index> t0s) const {
  if (x.rank() != 4 || static_cast<std::size_t>(x.dim(0)) != t0s.size()) {
    throw ShapeError("forward_batch: expected [B x T_h x N x C] with one time index per sample, got " +
                     to_string(x.shape()));
  }
  const Index per_sample = x.size() / x.dim(0);
  for (Index b = 0; b < x.dim(0); ++b) {
    if (!x.data().segment(b * per_sample, per_sample).allFinite()) {
      throw NumericError("forward_batch: non-finite input in sample " + std::to_string(b));
    }
  }
  std::vector<Tensor> outs;
  outs.reserve(t0s.size());
  for (Index b = 0; b < x.dim(0); ++b) outs.push_back(forward(select(x, 0, b), t0s[static_cast<std::size_t>(b)]));
  return stack(outs, 0);
}

}  // namespace stjla
