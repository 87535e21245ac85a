#pragma once

#include <cmath>
#include <vector>

#include "dycstg/ops.hpp"

namespace dycstg {

enum class MaskKind { Bidirectional, Causal };

struct TemporalMask {
  MaskKind kind = MaskKind::Bidirectional;
  std::int64_t T = 0;
  std::vector<double> matrix;  // T*T binary

  double at(std::int64_t i, std::int64_t j) const { return matrix[i * T + j]; }
};

inline TemporalMask build_temporal_mask(MaskKind kind, std::int64_t T) {
  if (T < 1) throw ContractError("build_temporal_mask: T must be >= 1");
  TemporalMask m;
  m.kind = kind;
  m.T = T;
  m.matrix.assign(static_cast<std::size_t>(T * T), 0.0);
  for (std::int64_t i = 0; i < T; ++i)
    for (std::int64_t j = 0; j < T; ++j)
      m.matrix[i * T + j] = (kind == MaskKind::Bidirectional || j <= i) ? 1.0 : 0.0;
  return m;
}

// One pre-norm encoder layer. The q/k/v matrices hold all heads side by side.
struct EncoderLayerParams {
  Tensor wq, bq, wk, bk, wv, bv;  // [D,D], [D]
  Tensor wo, bo;                  // [D,D], [D]
  Tensor w1, b1, w2, b2;          // FFN: [D,4D],[4D],[4D,D],[D]
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
};

struct TemporalConfig {
  std::int64_t heads = 4;
  double dropout = 0.1;
  bool ffn_in_causal = true;  // Open Question default: full encoder layer
};

// Sinusoidal encoding [T,D]; broadcast-added over the sequence batch.
inline Tensor positional_encoding(std::int64_t T, std::int64_t D) {
  Tensor pe = Tensor::zeros({T, D});
  for (std::int64_t t = 0; t < T; ++t)
    for (std::int64_t i = 0; i < D; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(D));
      pe.data()[t * D + i] = std::sin(static_cast<double>(t) * freq);
      if (i + 1 < D) pe.data()[t * D + i + 1] = std::cos(static_cast<double>(t) * freq);
    }
  return pe;
}

inline Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& p,
                                    const TemporalConfig& cfg, MaskKind mask,
                                    bool with_ffn, std::uint64_t seed, bool training,
                                    Tape* tape) {
  const bool causal = mask == MaskKind::Causal;
  Tensor a = layer_norm(x, p.ln1_g, p.ln1_b, tape);
  Tensor q = linear(a, p.wq, p.bq, tape);
  Tensor k = linear(a, p.wk, p.bk, tape);
  Tensor v = linear(a, p.wv, p.bv, tape);
  Tensor att = attention_core(q, k, v, cfg.heads, causal, cfg.dropout, mix64(seed), training,
                              tape);
  Tensor o = linear(att, p.wo, p.bo, tape);
  o = dropout(o, cfg.dropout, mix64(seed + 1), training, tape);
  Tensor h = add(x, o, tape);
  if (!with_ffn) return h;
  Tensor b = layer_norm(h, p.ln2_g, p.ln2_b, tape);
  Tensor f = linear(linear_elu(b, p.w1, p.b1, tape), p.w2, p.b2, tape);
  f = dropout(f, cfg.dropout, mix64(seed + 2), training, tape);
  return add(h, f, tape);
}

// x: [B,T,N,D] -> sequences [B*N,T,D] -> layers -> back to [B,T,N,D].
// Positional encoding is added once, controlled by add_pe (the causal
// refinement stage runs on already-encoded features and skips it).
inline Tensor encoder_forward(const Tensor& x, const std::vector<EncoderLayerParams>& layers,
                              const TemporalConfig& cfg, MaskKind mask, bool add_pe,
                              bool with_ffn, std::uint64_t seed, bool training, Tape* tape) {
  if (x.ndim() != 4)
    throw DimensionError("encoder_forward expects [B,T,N,D], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), T = x.dim(1), N = x.dim(2), D = x.dim(3);
  if (D % cfg.heads != 0)
    throw DimensionError("encoder_forward: D not divisible by head count");
  Tensor h = transpose_12(x, tape).reshape({B * N, T, D});
  if (add_pe) h = add(h, positional_encoding(T, D), tape);
  std::uint64_t s = seed;
  for (const auto& layer : layers) {
    h = encoder_layer_forward(h, layer, cfg, mask, with_ffn, s, training, tape);
    s = mix64(s + 17);
  }
  return transpose_12(h.reshape({B, N, T, D}), tape);
}

// Bidirectional stack producing the spatio-temporal representation H_st.
inline Tensor temporal_encode(const Tensor& h_spatial,
                              const std::vector<EncoderLayerParams>& layers,
                              const TemporalConfig& cfg, std::uint64_t seed, bool training,
                              Tape* tape) {
  return encoder_forward(h_spatial, layers, cfg, MaskKind::Bidirectional, true, true, seed,
                         training, tape);
}

// Causally-masked refinement of H_st with its own parameters.
inline Tensor causal_refine(const Tensor& h_st,
                            const std::vector<EncoderLayerParams>& layers,
                            const TemporalConfig& cfg, std::uint64_t seed, bool training,
                            Tape* tape) {
  return encoder_forward(h_st, layers, cfg, MaskKind::Causal, false, cfg.ffn_in_causal, seed,
                         training, tape);
}

}  // namespace dycstg
