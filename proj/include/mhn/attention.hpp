#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/fused.hpp"
#include "mhn/params.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Multi-head crossmodal attention: queries from the visual stream, keys
// and values from the text stream. Passing the same tensor (and the same
// layer-norm parameters) on both sides gives self-attention.
struct McaParams {
  std::size_t heads = 1;
  Tensor wq;  // [d, d], column block h is head h's projection
  Tensor wk;
  Tensor wv;
  Tensor wo;  // applied after head concatenation
  LayerNormParams ln_x;
  LayerNormParams ln_q;
};

inline Tensor mca(const Tensor& x, const Tensor& q, const McaParams& w) {
  const std::size_t d = w.wq.dim(0);
  if (w.heads == 0 || d % w.heads != 0)
    throw ConfigError("mca: model width " + std::to_string(d) + " not divisible by " +
                      std::to_string(w.heads) + " heads");
  if (x.rank() != 2 || x.dim(1) != d || q.rank() != 2 || q.dim(1) != d)
    throw DimensionError("mca: inputs " + detail::shape_str(x.shape()) + ", " +
                         detail::shape_str(q.shape()) + " must have trailing width " +
                         std::to_string(d));
  const double temp = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor lx = apply_layer_norm(x, w.ln_x);
  Tensor lq = apply_layer_norm(q, w.ln_q);
  Tensor fq = matmul(lx, w.wq);
  Tensor fk = matmul(lq, w.wk);
  Tensor fv = matmul(lq, w.wv);
  return matmul(multi_head_attention(fq, fk, fv, w.heads, temp), w.wo);
}

// Attention rows of one head, exposed for invariants that inspect the
// distribution itself.
inline Tensor mca_attention_rows(const Tensor& x, const Tensor& q, const McaParams& w,
                                 std::size_t head) {
  const std::size_t d = w.wq.dim(0);
  const std::size_t dh = d / w.heads;
  const double temp = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor lx = apply_layer_norm(x, w.ln_x);
  Tensor lq = apply_layer_norm(q, w.ln_q);
  Tensor qh = slice_cols(matmul(lx, w.wq), head * dh, (head + 1) * dh);
  Tensor kh = slice_cols(matmul(lq, w.wk), head * dh, (head + 1) * dh);
  return softmax_last(scale(matmul_nt(qh, kh), temp));
}

}  // namespace mhn
