#pragma once

#include <vector>

#include "dycstg/graph.hpp"
#include "dycstg/ops.hpp"

namespace dycstg {

// One GAT layer. attn_left/attn_right are the two halves of the 2*D_out
// scoring vector a: e_ij = LeakyReLU(a . [h_i W || h_j W]).
struct GATLayerParams {
  Tensor w;           // [D_in, D_out]
  Tensor attn_left;   // [D_out, 1]
  Tensor attn_right;  // [D_out, 1]
  double leaky_slope = 0.2;
};

struct SpatialStackParams {
  std::vector<GATLayerParams> layers;
};

// h_t: [B', N, D_in], mask: [B', N, N] binary data (diagonal all ones).
inline Tensor gat_layer_forward(const Tensor& h_t, const Tensor& mask,
                                const GATLayerParams& params, Tape* tape) {
  if (h_t.ndim() != 3)
    throw DimensionError("gat_layer_forward expects [B,N,D], got " + shape_str(h_t.shape()));
  const std::int64_t B = h_t.dim(0), N = h_t.dim(1);
  if (mask.ndim() != 3 || mask.dim(0) != B || mask.dim(1) != N || mask.dim(2) != N)
    throw DimensionError("gat_layer_forward: mask " + shape_str(mask.shape()) +
                         " does not match features " + shape_str(h_t.shape()));
  Tensor hw = matmul(h_t, params.w, tape);  // [B,N,Dout]
  const std::int64_t dout = hw.dim(2);
  Tensor sl = matmul(hw, params.attn_left, tape).reshape({B, N});
  Tensor sr = matmul(hw, params.attn_right, tape).reshape({B, N});
  Tensor scores = leaky_relu(pairwise_sum(sl, sr, tape), params.leaky_slope, tape);
  Tensor alpha = masked_softmax(scores, mask, tape);  // [B,N,N]
  Tensor agg = matmul(alpha, hw, tape);               // [B,N,Dout]
  (void)dout;
  return elu(agg, tape);
}

// Builds the [B*T, N, N] binary mask tensor for a batch of adjacency
// sequences, in the fold order used by spatial_encode (index = b*T + t).
inline Tensor batch_neighbor_masks(const std::vector<DynamicAdjacencySequence>& seqs) {
  if (seqs.empty()) throw ContractError("batch_neighbor_masks: empty batch");
  const std::int64_t B = static_cast<std::int64_t>(seqs.size());
  const std::int64_t T = seqs[0].T;
  const std::int64_t N = seqs[0].n_nodes;
  Tensor masks = Tensor::uninit({B * T, N, N});
  for (std::int64_t b = 0; b < B; ++b) {
    if (seqs[b].T != T || seqs[b].n_nodes != N)
      throw DimensionError("batch_neighbor_masks: inconsistent sequence dims");
    for (std::int64_t t = 0; t < T; ++t) {
      const auto m = neighbor_mask_at(seqs[static_cast<std::size_t>(b)], t);
      std::copy(m.begin(), m.end(), masks.data() + (b * T + t) * N * N);
    }
  }
  return masks;
}

// h0: [B,T,N,D]; masks: [B*T,N,N]. Residual connection per layer; L=0 is the
// identity. Time is folded into the batch so each snapshot sees its own mask.
inline Tensor spatial_encode(const Tensor& h0, const Tensor& masks,
                             const SpatialStackParams& params, Tape* tape) {
  if (h0.ndim() != 4)
    throw DimensionError("spatial_encode expects [B,T,N,D], got " + shape_str(h0.shape()));
  const std::int64_t B = h0.dim(0), T = h0.dim(1), N = h0.dim(2), D = h0.dim(3);
  if (masks.ndim() != 3 || masks.dim(0) != B * T || masks.dim(1) != N || masks.dim(2) != N)
    throw DimensionError("spatial_encode: masks " + shape_str(masks.shape()) +
                         " do not match features " + shape_str(h0.shape()));
  Tensor h = h0.reshape({B * T, N, D});
  for (const auto& layer : params.layers)
    h = add(h, gat_layer_forward(h, masks, layer, tape), tape);
  return h.reshape({B, T, N, D});
}

}  // namespace dycstg
