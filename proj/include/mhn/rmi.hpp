#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mhn/attention.hpp"
#include "mhn/errors.hpp"
#include "mhn/params.hpp"
#include "mhn/sampling.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Two linear maps around a GELU, inner width 4d, applied to a normalized
// input; the residual is added by the caller's block.
struct FfnParams {
  LayerNormParams ln;
  Tensor w1;  // [d, 4d]
  Tensor b1;
  Tensor w2;  // [4d, d]
  Tensor b2;
};

inline Tensor feed_forward(const Tensor& x, const FfnParams& p) {
  return linear(gelu(linear(apply_layer_norm(x, p.ln), {p.w1, p.b1})), {p.w2, p.b2});
}

// One vision-question interaction block. Blocks at different levels own
// distinct parameter sets.
struct InteractionBlockParams {
  McaParams mca;
  FfnParams ffn_x;
  FfnParams ffn_q;
};

struct LevelOutput {
  Tensor x_hat;  // [L_x, d]
  Tensor q_hat;  // [L_q, d]
};

inline LevelOutput interaction_block(const Tensor& x_in, const Tensor& q_in,
                                     const InteractionBlockParams& p) {
  Tensor x_mid = add(x_in, mca(x_in, q_in, p.mca));
  LevelOutput out;
  out.x_hat = add(x_mid, feed_forward(x_mid, p.ffn_x));
  // The question stream has no attention sublayer; feed-forward only.
  out.q_hat = add(q_in, feed_forward(q_in, p.ffn_q));
  return out;
}

// Attentional alignment between consecutive levels. The additive bypass
// keeps the current scale's raw features; a zero previous level leaves
// the input untouched.
struct AlignParams {
  Tensor w1;  // [d, d]
  Tensor w2;  // [d, d]
};

inline Tensor recurrent_align(const Tensor& x_cur, const Tensor& x_prev_hat,
                              const AlignParams& w) {
  if (x_cur.rank() != 2 || x_prev_hat.rank() != 2 || x_cur.dim(1) != x_prev_hat.dim(1))
    throw DimensionError("recurrent_align: " + detail::shape_str(x_cur.shape()) + " vs " +
                         detail::shape_str(x_prev_hat.shape()));
  const double temp = 1.0 / std::sqrt(static_cast<double>(x_cur.dim(1)));
  Tensor att =
      softmax_last(scale(matmul_nt(matmul(x_cur, w.w1), matmul(x_prev_hat, w.w2)), temp));
  return add(x_cur, matmul(att, x_prev_hat));
}

// Cross-level attention weights, for invariants on the distribution.
inline Tensor recurrent_align_attention(const Tensor& x_cur, const Tensor& x_prev_hat,
                                        const AlignParams& w) {
  const double temp = 1.0 / std::sqrt(static_cast<double>(x_cur.dim(1)));
  return softmax_last(scale(matmul_nt(matmul(x_cur, w.w1), matmul(x_prev_hat, w.w2)), temp));
}

struct RmiParams {
  std::vector<InteractionBlockParams> blocks;
  std::vector<AlignParams> aligns;  // one per transition, blocks.size() - 1
  bool recurrence = true;
};

// Runs the interaction blocks over the bundles in level order. With the
// recurrent connection enabled, level n receives the aligned mix of its
// own scale and the previous level's output, and the question stream is
// chained; disabled, every level sees only its own bundle and the raw
// question encoding.
inline std::vector<LevelOutput> rmi_forward(const std::vector<ScaleBundle>& bundles,
                                            const Tensor& q0, const RmiParams& p) {
  if (bundles.empty()) throw ConfigError("rmi_forward: no scale bundles");
  if (bundles.size() != p.blocks.size())
    throw ConfigError("rmi_forward: " + std::to_string(bundles.size()) + " bundles for " +
                      std::to_string(p.blocks.size()) + " blocks");
  if (p.recurrence && p.aligns.size() + 1 != p.blocks.size())
    throw ConfigError("rmi_forward: expected " + std::to_string(p.blocks.size() - 1) +
                      " alignment parameter pairs, got " + std::to_string(p.aligns.size()));

  std::vector<LevelOutput> outputs;
  outputs.reserve(bundles.size());
  for (std::size_t level = 0; level < bundles.size(); ++level) {
    Tensor x_in = bundles[level].x;
    Tensor q_in = q0;
    if (p.recurrence && level > 0) {
      x_in = recurrent_align(x_in, outputs[level - 1].x_hat, p.aligns[level - 1]);
      q_in = outputs[level - 1].q_hat;
    }
    outputs.push_back(interaction_block(x_in, q_in, p.blocks[level]));
  }
  return outputs;
}

}  // namespace mhn
