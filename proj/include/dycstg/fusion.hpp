#pragma once

#include "dycstg/ops.hpp"

namespace dycstg {

struct GateParams {
  Tensor w_g;  // [2D, D]
  Tensor b_g;  // [D]
};

struct HeadParams {
  Tensor w1, b1;  // [D, D/2], [D/2]
  Tensor w2, b2;  // [D/2, 1], [1]
};

// G = sigmoid([h_st || h_causal] W_g + b_g); out = G.h_st + (1-G).h_causal.
inline Tensor gated_fuse(const Tensor& h_st, const Tensor& h_causal, const GateParams& params,
                         Tape* tape) {
  detail::check_same_shape(h_st, h_causal, "gated_fuse");
  Tensor cat = concat_last_dim(h_st, h_causal, tape);
  Tensor g = sigmoid(linear(cat, params.w_g, params.b_g, tape), tape);
  // G.h_st + (1-G).h_causal = h_causal + G.(h_st - h_causal)
  return add(h_causal, mul(g, sub(h_st, h_causal, tape), tape), tape);
}

// Two-layer head with ELU hidden and a final sigmoid -> scores in (0,1).
inline Tensor predict_scores(const Tensor& h_fused, const HeadParams& params, Tape* tape) {
  Tensor hidden = linear_elu(h_fused, params.w1, params.b1, tape);
  return sigmoid(linear(hidden, params.w2, params.b2, tape), tape);
}

// Trustworthy (1) iff y > zeta; boundary goes to Untrustworthy (0).
inline Tensor decide(const Tensor& scores, double zeta) {
  if (!(zeta > 0.0 && zeta < 1.0))
    throw ContractError("decide: zeta must lie in (0,1), got " + std::to_string(zeta));
  Tensor out = Tensor::uninit(scores.shape());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out.data()[i] = scores.data()[i] > zeta ? 1.0 : 0.0;
  return out;
}

}  // namespace dycstg
