#pragma once

#include <cstddef>
#include <vector>

#include "mhn/attention.hpp"
#include "mhn/errors.hpp"
#include "mhn/rmi.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Transformer encoder layer used for level-wise visual reasoning. In the
// default weight-shared mode a single instance serves every level.
struct EncoderParams {
  McaParams mca;  // self-attention: ln_x and ln_q alias the same tensors
  FfnParams ffn;
};

inline Tensor encode_level(const Tensor& x_hat, const EncoderParams& p) {
  Tensor z = add(x_hat, mca(x_hat, x_hat, p.mca));
  return add(z, feed_forward(z, p.ffn));
}

struct FusionOutput {
  Tensor pooled;                // [d]
  Tensor alpha;                 // [1, N]
  std::vector<double> weights;  // copy of alpha values
};

// Question-guided convex fusion of the pooled level encodings: one scalar
// score per level (pooled question dot pooled visual cue), softmax across
// levels, weighted sum of the pooled cues.
inline FusionOutput fuse_levels(const std::vector<Tensor>& q_hats, const std::vector<Tensor>& rs) {
  if (rs.empty() || q_hats.size() != rs.size())
    throw ConfigError("fuse_levels: need matching non-empty level lists, got " +
                      std::to_string(q_hats.size()) + " and " + std::to_string(rs.size()));
  const std::size_t n = rs.size();
  std::vector<Tensor> scores;
  std::vector<Tensor> pooled_rows;
  scores.reserve(n);
  pooled_rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor qbar = reshape(mean_pool_time(q_hats[i]), {1, q_hats[i].dim(1)});
    Tensor rbar = reshape(mean_pool_time(rs[i]), {1, rs[i].dim(1)});
    scores.push_back(matmul_nt(qbar, rbar));  // [1, 1]
    pooled_rows.push_back(rbar);
  }
  FusionOutput out;
  out.alpha = softmax_last(concat_cols(scores));          // [1, N]
  Tensor stacked = concat_rows(pooled_rows);              // [N, d]
  out.pooled = reshape(matmul(out.alpha, stacked), {stacked.dim(1)});
  out.weights = out.alpha.value();
  return out;
}

}  // namespace mhn
