#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Fused kernels for the two hottest subgraphs. Each records a single
// graph node with a hand-derived backward; the finite-difference suite
// checks both against the forward path.

// All heads of softmax(temp * Q_h K_h^T) V_h, concatenated back to
// [L_q, d]. Inputs are the already-projected query/key/value matrices;
// column block h of each belongs to head h.
inline Tensor multi_head_attention(const Tensor& fq, const Tensor& fk, const Tensor& fv,
                                   std::size_t heads, double temp) {
  if (fq.rank() != 2 || fk.rank() != 2 || fv.rank() != 2 || fq.dim(1) != fk.dim(1) ||
      fk.shape() != fv.shape())
    throw DimensionError("multi_head_attention: bad shapes " + detail::shape_str(fq.shape()) +
                         ", " + detail::shape_str(fk.shape()) + ", " +
                         detail::shape_str(fv.shape()));
  const std::size_t d = fq.dim(1);
  if (heads == 0 || d % heads != 0)
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t m = fq.dim(0), n = fk.dim(0), dh = d / heads;

  std::vector<double> att(heads * m * n);  // saved row-softmax per head
  std::vector<double> out(m * d, 0.0);
  {
    const double* Q = fq.value().data();
    const double* K = fk.value().data();
    const double* V = fv.value().data();
    for (std::size_t h = 0; h < heads; ++h) {
      double* A = att.data() + h * m * n;
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < m; ++i) {
        double* Ai = A + i * n;
        const double* Qi = Q + i * d + off;
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          const double* Kj = K + j * d + off;
          double s = 0.0;
          for (std::size_t k = 0; k < dh; ++k) s += Qi[k] * Kj[k];
          Ai[j] = s * temp;
          mx = std::max(mx, Ai[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          Ai[j] = std::exp(Ai[j] - mx);
          sum += Ai[j];
        }
        double* Oi = out.data() + i * d + off;
        for (std::size_t j = 0; j < n; ++j) {
          Ai[j] /= sum;
          const double a = Ai[j];
          const double* Vj = V + j * d + off;
          for (std::size_t k = 0; k < dh; ++k) Oi[k] += a * Vj[k];
        }
      }
    }
  }
  return detail::make_result(
      {m, d}, std::move(out), {fq, fk, fv},
      [heads, m, n, d, dh, temp, att = std::move(att)](detail::Node& self) {
        detail::Node& pq = *self.parents[0];
        detail::Node& pk = *self.parents[1];
        detail::Node& pv = *self.parents[2];
        pq.ensure_grad();
        pk.ensure_grad();
        pv.ensure_grad();
        const double* G = self.grad.data();
        const double* Q = pq.value.data();
        const double* K = pk.value.data();
        const double* V = pv.value.data();
        std::vector<double> da(n);
        for (std::size_t h = 0; h < heads; ++h) {
          const double* A = att.data() + h * m * n;
          const std::size_t off = h * dh;
          for (std::size_t i = 0; i < m; ++i) {
            const double* Ai = A + i * n;
            const double* Gi = G + i * d + off;
            // dV += A^T dOut; dA = dOut V^T
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double* Vj = V + j * d + off;
              double* dVj = pv.grad.data() + j * d + off;
              double s = 0.0;
              for (std::size_t k = 0; k < dh; ++k) {
                s += Gi[k] * Vj[k];
                dVj[k] += Ai[j] * Gi[k];
              }
              da[j] = s;
              dot += s * Ai[j];
            }
            // softmax backward, then scores -> Q and K
            const double* Qi = Q + i * d + off;
            double* dQi = pq.grad.data() + i * d + off;
            for (std::size_t j = 0; j < n; ++j) {
              const double ds = temp * Ai[j] * (da[j] - dot);
              if (ds == 0.0) continue;
              const double* Kj = K + j * d + off;
              double* dKj = pk.grad.data() + j * d + off;
              for (std::size_t k = 0; k < dh; ++k) {
                dQi[k] += ds * Kj[k];
                dKj[k] += ds * Qi[k];
              }
            }
          }
        }
      });
}

// One LSTM direction over a projected input sequence; returns the hidden
// state per step, rows in the input's order. Gate layout in the 4h
// pre-activation: input, forget, cell, output.
inline Tensor lstm_sequence(const Tensor& x, const Tensor& wx, const Tensor& wh,
                            const Tensor& bias, std::size_t hidden, bool reverse) {
  if (x.rank() != 2 || wx.rank() != 2 || wh.rank() != 2 || bias.rank() != 1)
    throw DimensionError("lstm_sequence: expected matrices and a bias vector");
  const std::size_t L = x.dim(0), in = x.dim(1), h4 = 4 * hidden;
  if (wx.dim(0) != in || wx.dim(1) != h4 || wh.dim(0) != hidden || wh.dim(1) != h4 ||
      bias.dim(0) != h4)
    throw DimensionError("lstm_sequence: parameter shapes do not match width " +
                         std::to_string(hidden));
  if (L == 0) throw ContractError("lstm_sequence: empty sequence");

  std::vector<double> acts(L * h4);   // post-activation gates per step
  std::vector<double> cells(L * hidden);
  std::vector<double> tanh_c(L * hidden);
  std::vector<double> out(L * hidden, 0.0);
  {
    const double* X = x.value().data();
    const double* WX = wx.value().data();
    const double* WH = wh.value().data();
    const double* B = bias.value().data();
    std::vector<double> pre(h4);
    std::vector<double> c(hidden, 0.0);
    std::vector<double> hprev(hidden, 0.0);
    for (std::size_t s = 0; s < L; ++s) {
      const std::size_t t = reverse ? L - 1 - s : s;
      for (std::size_t j = 0; j < h4; ++j) pre[j] = B[j];
      const double* xt = X + t * in;
      for (std::size_t p = 0; p < in; ++p) {
        const double v = xt[p];
        const double* W = WX + p * h4;
        for (std::size_t j = 0; j < h4; ++j) pre[j] += v * W[j];
      }
      for (std::size_t p = 0; p < hidden; ++p) {
        const double v = hprev[p];
        const double* W = WH + p * h4;
        for (std::size_t j = 0; j < h4; ++j) pre[j] += v * W[j];
      }
      double* a = acts.data() + t * h4;
      for (std::size_t j = 0; j < hidden; ++j) {
        a[j] = 1.0 / (1.0 + std::exp(-pre[j]));                       // input
        a[hidden + j] = 1.0 / (1.0 + std::exp(-pre[hidden + j]));     // forget
        a[2 * hidden + j] = std::tanh(pre[2 * hidden + j]);           // cell
        a[3 * hidden + j] = 1.0 / (1.0 + std::exp(-pre[3 * hidden + j]));  // output
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        c[j] = a[hidden + j] * c[j] + a[j] * a[2 * hidden + j];
        cells[t * hidden + j] = c[j];
        const double tc = std::tanh(c[j]);
        tanh_c[t * hidden + j] = tc;
        const double hv = a[3 * hidden + j] * tc;
        out[t * hidden + j] = hv;
        hprev[j] = hv;
      }
    }
  }
  return detail::make_result(
      {L, hidden}, std::move(out), {x, wx, wh, bias},
      [L, in, hidden, h4, reverse, acts = std::move(acts), cells = std::move(cells),
       tanh_c = std::move(tanh_c)](detail::Node& self) {
        detail::Node& px = *self.parents[0];
        detail::Node& pwx = *self.parents[1];
        detail::Node& pwh = *self.parents[2];
        detail::Node& pb = *self.parents[3];
        px.ensure_grad();
        pwx.ensure_grad();
        pwh.ensure_grad();
        pb.ensure_grad();
        const double* G = self.grad.data();
        const double* H = self.value.data();
        const double* X = px.value.data();
        const double* WX = pwx.value.data();
        const double* WH = pwh.value.data();
        std::vector<double> dh(hidden, 0.0);
        std::vector<double> dc(hidden, 0.0);
        std::vector<double> dpre(h4);
        for (std::size_t s = L; s-- > 0;) {
          const std::size_t t = reverse ? L - 1 - s : s;
          const std::size_t tprev = reverse ? t + 1 : t - 1;
          const bool first = s == 0;
          const double* a = acts.data() + t * h4;
          const double* tc = tanh_c.data() + t * hidden;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double dhj = G[t * hidden + j] + dh[j];
            const double i_g = a[j];
            const double f_g = a[hidden + j];
            const double g_g = a[2 * hidden + j];
            const double o_g = a[3 * hidden + j];
            const double dcj = dc[j] + dhj * o_g * (1.0 - tc[j] * tc[j]);
            const double c_prev = first ? 0.0 : cells[tprev * hidden + j];
            dpre[j] = dcj * g_g * i_g * (1.0 - i_g);
            dpre[hidden + j] = dcj * c_prev * f_g * (1.0 - f_g);
            dpre[2 * hidden + j] = dcj * i_g * (1.0 - g_g * g_g);
            dpre[3 * hidden + j] = dhj * tc[j] * o_g * (1.0 - o_g);
            dc[j] = dcj * f_g;
          }
          // parameter and input gradients
          const double* xt = X + t * in;
          double* dxt = px.grad.data() + t * in;
          for (std::size_t p = 0; p < in; ++p) {
            const double* W = WX + p * h4;
            double* dW = pwx.grad.data() + p * h4;
            double acc = 0.0;
            const double v = xt[p];
            for (std::size_t j = 0; j < h4; ++j) {
              acc += dpre[j] * W[j];
              dW[j] += dpre[j] * v;
            }
            dxt[p] += acc;
          }
          for (std::size_t j = 0; j < h4; ++j) pb.grad[j] += dpre[j];
          for (std::size_t p = 0; p < hidden; ++p) {
            const double hp = first ? 0.0 : H[tprev * hidden + p];
            const double* W = WH + p * h4;
            double* dW = pwh.grad.data() + p * h4;
            double acc = 0.0;
            for (std::size_t j = 0; j < h4; ++j) {
              acc += dpre[j] * W[j];
              dW[j] += dpre[j] * hp;
            }
            dh[p] = acc;
          }
        }
      });
}

}  // namespace mhn
