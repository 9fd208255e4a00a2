#include "stjla/attention.hpp"

#include "stjla/ops.hpp"

namespace stjla {

Tensor st_joint_reshape(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("st_joint_reshape expects [T x N x F], got " + to_string(x.shape()));
  return reshape(x, {x.dim(0) * x.dim(1), x.dim(2)});
}

Tensor st_joint_unreshape(const Tensor& tokens, Index n_nodes) {
  if (tokens.rank() != 2 || n_nodes <= 0 || tokens.dim(0) % n_nodes != 0) {
    throw ShapeError("cannot split " + to_string(tokens.shape()) + " into time steps of " + std::to_string(n_nodes) +
                     " nodes");
  }
  return reshape(tokens, {tokens.dim(0) / n_nodes, n_nodes, tokens.dim(1)});
}

Tensor linear_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw ShapeError("linear_attention expects rank-2 q, k, v");
  }
  const Index m = q.dim(0), mk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  const auto qm = q.matrix();
  const auto km = k.matrix();
  const auto vm = v.matrix();
  detail::check_attention_shapes(qm, km, vm);

  struct Saved {
    Matrix phi_q, phi_k, kv, out;
    Vector z, den;
  };
  auto saved = std::make_shared<Saved>();
  saved->phi_q = feature_map_exp(qm, FeatureShift::kRowMax);
  saved->phi_k = feature_map_exp(km, FeatureShift::kGlobalMax);
  saved->kv = saved->phi_k.transpose() * vm;
  saved->z = saved->phi_k.colwise().sum().transpose();
  saved->den = saved->phi_q * saved->z;
  for (Index i = 0; i < m; ++i) {
    if (!(saved->den[i] >= static_cast<Scalar>(kMinAttentionDenominator))) {
      throw NumericError("linear attention denominator degenerate at query row " + std::to_string(i));
    }
  }
  saved->out = saved->phi_q * saved->kv;
  saved->out.array().colwise() /= saved->den.array();

  Vector value(m * dv);
  MatrixMap(value.data(), m, dv) = saved->out;
  return detail::make_result({m, dv}, std::move(value), {q, k, v}, [saved, m, mk, d, dv](detail::Node& self) {
    detail::Node& nq = *self.inputs[0];
    detail::Node& nk = *self.inputs[1];
    detail::Node& nv = *self.inputs[2];
    const ConstMatrixMap g(self.grad.data(), m, dv);
    // out_i = n_i / s_i with n_i = phi_q_i kv, s_i = phi_q_i . z
    Matrix dn = g.array().colwise() / saved->den.array();
    Vector ds = -(g.cwiseProduct(saved->out).rowwise().sum().array() / saved->den.array()).matrix();
    if (nq.requires_grad) {
      Matrix dphi_q = dn * saved->kv.transpose() + ds * saved->z.transpose();
      Vector gq(m * d);
      MatrixMap(gq.data(), m, d) = dphi_q.cwiseProduct(saved->phi_q);
      nq.accumulate(gq);
    }
    if (nk.requires_grad || nv.requires_grad) {
      const Matrix dkv = saved->phi_q.transpose() * dn;  // d x dv
      if (nk.requires_grad) {
        const Vector dz = saved->phi_q.transpose() * ds;  // d
        Matrix dphi_k = ConstMatrixMap(nv.value.data(), mk, dv) * dkv.transpose();
        dphi_k.rowwise() += dz.transpose();
        Vector gk(mk * d);
        MatrixMap(gk.data(), mk, d) = dphi_k.cwiseProduct(saved->phi_k);
        nk.accumulate(gk);
      }
      if (nv.requires_grad) {
        Vector gv(mk * dv);
        MatrixMap(gv.data(), mk, dv) = saved->phi_k * dkv;
        nv.accumulate(gv);
      }
    }
  });
}

Tensor multi_head_attention(const Tensor& x, const std::optional<Tensor>& cross_kv, const AttentionParams& params,
                            const AttentionConfig& cfg) {
  const Index f = cfg.model_dim();
  if (x.rank() != 2 || x.dim(1) != f) {
    throw ShapeError("multi_head_attention: input " + to_string(x.shape()) + " does not have model dim " +
                     std::to_string(f));
  }
  const Tensor& kv = cross_kv ? *cross_kv : x;
  if (kv.rank() != 2 || kv.dim(1) != f) {
    throw ShapeError("multi_head_attention: key/value source " + to_string(kv.shape()) + " does not have model dim " +
                     std::to_string(f));
  }
  const auto heads = static_cast<std::size_t>(cfg.heads);
  if (params.w_q.size() != heads || params.w_k.size() != heads || params.w_v.size() != heads) {
    throw ShapeError("multi_head_attention: parameter head count does not match config");
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(linear_attention(matmul(x, params.w_q[h]), matmul(kv, params.w_k[h]), matmul(kv, params.w_v[h])));
  }
  return matmul(heads == 1 ? outs.front() : concat(outs, 1), params.w_o);
}

}  // namespace stjla
