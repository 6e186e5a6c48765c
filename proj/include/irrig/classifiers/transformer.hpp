#pragma once

// Transformer-style sequence classifier with an explicit backward pass.
//
//   x (T x L) -> linear embedding (L -> d) + sinusoidal positions
//             -> encoder block: multi-head self-attention, residual, layer norm,
//                               feed-forward d -> ff -> d (ReLU), residual, layer norm
//             -> mean over time -> dense (d -> dense, ReLU) -> dense (-> 1 logit)
//
// With dense == 0 the pooled encoder output feeds the logit directly; that variant
// backs the timestep saliency maps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "irrig/core/error.hpp"
#include "irrig/core/parallel.hpp"
#include "irrig/core/random.hpp"

namespace irrig {

struct TransformerConfig {
  int inputs = 1;      // feature layers per timestep
  int timesteps = 36;
  int d_model = 32;
  int heads = 4;
  int ff = 64;
  int dense = 32;      // penultimate width; 0 removes the layer

  void validate() const {
    if (inputs < 1 || timesteps < 1 || d_model < 1 || heads < 1 || ff < 1 || dense < 0)
      throw NumericError("transformer: invalid dimensions");
    if (d_model % heads != 0) throw NumericError("transformer: d_model must be divisible by heads");
  }
  int head_dim() const { return d_model / heads; }
  bool operator==(const TransformerConfig&) const = default;
};

/// Offsets of every parameter block inside the flat parameter vector.
struct TransformerLayout {
  std::size_t We, be, Wq, bq, Wk, bk, Wv, bv, Wo, bo, ln1g, ln1b, W1, b1, W2, b2, ln2g, ln2b, Wd, bd, wout, bout;
  std::size_t total;

  explicit TransformerLayout(const TransformerConfig& c) {
    const std::size_t L = c.inputs, d = c.d_model, f = c.ff, h = c.dense;
    std::size_t o = 0;
    auto take = [&](std::size_t n) {
      const std::size_t at = o;
      o += n;
      return at;
    };
    We = take(L * d);
    be = take(d);
    Wq = take(d * d);
    bq = take(d);
    Wk = take(d * d);
    bk = take(d);
    Wv = take(d * d);
    bv = take(d);
    Wo = take(d * d);
    bo = take(d);
    ln1g = take(d);
    ln1b = take(d);
    W1 = take(d * f);
    b1 = take(f);
    W2 = take(f * d);
    b2 = take(d);
    ln2g = take(d);
    ln2b = take(d);
    Wd = take(d * h);
    bd = take(h);
    wout = take(h > 0 ? h : d);
    bout = take(1);
    total = o;
  }

  /// Weight matrices (excluding biases and norms) as (offset, rows, cols).
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> blocks(const TransformerConfig& c) const {
    const std::size_t L = c.inputs, d = c.d_model, f = c.ff, h = c.dense;
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> out{
        {"embed", We, L * d}, {"query", Wq, d * d}, {"key", Wk, d * d}, {"value", Wv, d * d},
        {"attn_out", Wo, d * d}, {"ff1", W1, d * f}, {"ff2", W2, f * d}, {"output", wout, h > 0 ? h : d}};
    if (h > 0) out.insert(out.end() - 1, {"dense", Wd, d * h});
    return out;
  }
};

namespace nn {

// Row-major dense kernels on raw spans. C (m x n) [+]= A (m x k) * B (k x n).
inline void matmul(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n,
                   bool accumulate = false) {
  if (!accumulate) std::fill(C, C + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      const double* b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
  }
}

// C (k x n) += A^T * B where A is m x k and B is m x n.
inline void matmul_at_b(const double* A, const double* B, double* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double a = A[i * k + p];
      if (a == 0.0) continue;
      double* c = C + p * n;
      const double* b = B + i * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
    }
}

// C (m x k) [+]= A * B^T where A is m x n and B is k x n.
inline void matmul_a_bt(const double* A, const double* B, double* C, std::size_t m, std::size_t n, std::size_t k,
                        bool accumulate = false) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      const double* a = A + i * n;
      const double* b = B + j * n;
      for (std::size_t p = 0; p < n; ++p) s += a[p] * b[p];
      C[i * k + j] = accumulate ? C[i * k + j] + s : s;
    }
}

inline void add_bias(double* X, const double* b, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) X[i * n + j] += b[j];
}

inline void colsum_acc(const double* X, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += X[i * n + j];
}

inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace nn

/// Intermediate activations of one sample, reused across calls.
struct TransformerWorkspace {
  std::vector<double> x, e0, q, k, v, att, cat, ao, r1, a1, xh1, rs1, f1pre, f1, f2, r2, a2, xh2, rs2, pool, zpre, z;
  // gradients
  std::vector<double> de0, dq, dk, dv, datt, dcat, dr1, da1, df1, df2, dr2, da2, dpool, dz, tmp;

  void resize(const TransformerConfig& c) {
    const std::size_t T = c.timesteps, L = c.inputs, d = c.d_model, f = c.ff, H = c.heads;
    auto sz = [](std::vector<double>& v, std::size_t n) { v.assign(n, 0.0); };
    sz(x, T * L);
    for (auto* m : {&e0, &q, &k, &v, &cat, &ao, &r1, &a1, &xh1, &f2, &r2, &a2, &xh2, &de0, &dq, &dk, &dv, &dcat, &dr1,
                    &da1, &df2, &dr2, &da2})
      sz(*m, T * d);
    sz(att, H * T * T);
    sz(datt, T * T);
    sz(tmp, T * T);
    sz(rs1, T);
    sz(rs2, T);
    sz(f1pre, T * f);
    sz(f1, T * f);
    sz(df1, T * f);
    sz(pool, d);
    sz(dpool, d);
    sz(zpre, std::max(c.dense, 1));
    sz(z, std::max(c.dense, 1));
    sz(dz, std::max(c.dense, 1));
  }
};

class TransformerNet {
 public:
  TransformerNet() : TransformerNet(TransformerConfig{}) {}
  explicit TransformerNet(const TransformerConfig& cfg) : cfg_(cfg), layout_(cfg) {
    cfg_.validate();
    params_.assign(layout_.total, 0.0);
    build_positions();
  }

  /// Glorot-uniform weights, zero biases, unit layer-norm gains.
  void initialize(std::uint64_t seed) {
    Rng rng = make_stream(seed, 0x7A7);
    const std::size_t L = cfg_.inputs, d = cfg_.d_model, f = cfg_.ff, h = cfg_.dense;
    std::fill(params_.begin(), params_.end(), 0.0);
    auto glorot = [&](std::size_t off, std::size_t fan_in, std::size_t fan_out) {
      const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (std::size_t i = 0; i < fan_in * fan_out; ++i) params_[off + i] = (2.0 * uniform01(rng) - 1.0) * lim;
    };
    glorot(layout_.We, L, d);
    glorot(layout_.Wq, d, d);
    glorot(layout_.Wk, d, d);
    glorot(layout_.Wv, d, d);
    glorot(layout_.Wo, d, d);
    glorot(layout_.W1, d, f);
    glorot(layout_.W2, f, d);
    if (h > 0) glorot(layout_.Wd, d, h);
    glorot(layout_.wout, h > 0 ? h : d, 1);
    std::fill_n(params_.begin() + layout_.ln1g, d, 1.0);
    std::fill_n(params_.begin() + layout_.ln2g, d, 1.0);
  }

  const TransformerConfig& config() const { return cfg_; }
  const TransformerLayout& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  /// Logit for one standardized sample laid out layer-major (l * T + t).
  double forward(std::span<const double> sample, TransformerWorkspace& ws) const {
    const std::size_t T = cfg_.timesteps, L = cfg_.inputs, d = cfg_.d_model, f = cfg_.ff;
    const std::size_t H = cfg_.heads, dh = cfg_.head_dim();
    if (sample.size() != T * L) throw ShapeError("transformer: sample shape does not match the network");
    if (ws.e0.size() != T * d) ws.resize(cfg_);
    const double* P = params_.data();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t l = 0; l < L; ++l) ws.x[t * L + l] = sample[l * T + t];

    nn::matmul(ws.x.data(), P + layout_.We, ws.e0.data(), T, L, d);
    nn::add_bias(ws.e0.data(), P + layout_.be, T, d);
    for (std::size_t i = 0; i < T * d; ++i) ws.e0[i] += positions_[i];

    nn::matmul(ws.e0.data(), P + layout_.Wq, ws.q.data(), T, d, d);
    nn::add_bias(ws.q.data(), P + layout_.bq, T, d);
    nn::matmul(ws.e0.data(), P + layout_.Wk, ws.k.data(), T, d, d);
    nn::add_bias(ws.k.data(), P + layout_.bk, T, d);
    nn::matmul(ws.e0.data(), P + layout_.Wv, ws.v.data(), T, d, d);
    nn::add_bias(ws.v.data(), P + layout_.bv, T, d);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::fill(ws.cat.begin(), ws.cat.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      double* A = ws.att.data() + h * T * T;
      for (std::size_t i = 0; i < T; ++i) {
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += ws.q[i * d + h * dh + p] * ws.k[j * d + h * dh + p];
          A[i * T + j] = s * scale;
          top = std::max(top, A[i * T + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
          A[i * T + j] = std::exp(A[i * T + j] - top);
          z += A[i * T + j];
        }
        for (std::size_t j = 0; j < T; ++j) A[i * T + j] /= z;
        for (std::size_t j = 0; j < T; ++j) {
          const double a = A[i * T + j];
          for (std::size_t p = 0; p < dh; ++p) ws.cat[i * d + h * dh + p] += a * ws.v[j * d + h * dh + p];
        }
      }
    }
    nn::matmul(ws.cat.data(), P + layout_.Wo, ws.ao.data(), T, d, d);
    nn::add_bias(ws.ao.data(), P + layout_.bo, T, d);
    for (std::size_t i = 0; i < T * d; ++i) ws.r1[i] = ws.e0[i] + ws.ao[i];
    layer_norm(ws.r1, ws.a1, ws.xh1, ws.rs1, P + layout_.ln1g, P + layout_.ln1b);

    nn::matmul(ws.a1.data(), P + layout_.W1, ws.f1pre.data(), T, d, f);
    nn::add_bias(ws.f1pre.data(), P + layout_.b1, T, f);
    for (std::size_t i = 0; i < T * f; ++i) ws.f1[i] = ws.f1pre[i] > 0 ? ws.f1pre[i] : 0.0;
    nn::matmul(ws.f1.data(), P + layout_.W2, ws.f2.data(), T, f, d);
    nn::add_bias(ws.f2.data(), P + layout_.b2, T, d);
    for (std::size_t i = 0; i < T * d; ++i) ws.r2[i] = ws.a1[i] + ws.f2[i];
    layer_norm(ws.r2, ws.a2, ws.xh2, ws.rs2, P + layout_.ln2g, P + layout_.ln2b);

    std::fill(ws.pool.begin(), ws.pool.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) ws.pool[j] += ws.a2[t * d + j];
    for (auto& v : ws.pool) v /= static_cast<double>(T);

    double logit = P[layout_.bout];
    if (cfg_.dense > 0) {
      const std::size_t hd = cfg_.dense;
      nn::matmul(ws.pool.data(), P + layout_.Wd, ws.zpre.data(), 1, d, hd);
      nn::add_bias(ws.zpre.data(), P + layout_.bd, 1, hd);
      for (std::size_t j = 0; j < hd; ++j) {
        ws.z[j] = ws.zpre[j] > 0 ? ws.zpre[j] : 0.0;
        logit += ws.z[j] * P[layout_.wout + j];
      }
    } else {
      for (std::size_t j = 0; j < d; ++j) logit += ws.pool[j] * P[layout_.wout + j];
    }
    return logit;
  }

  /// Back-propagates dlogit through the activations left in `ws` by forward(), adding
  /// parameter gradients into `grad`. Stops at the encoder output when `grad` is empty,
  /// leaving d logit / d encoder in ws.da2.
  void backward(double dlogit, TransformerWorkspace& ws, std::span<double> grad) const {
    const std::size_t T = cfg_.timesteps, L = cfg_.inputs, d = cfg_.d_model, f = cfg_.ff;
    const std::size_t H = cfg_.heads, dh = cfg_.head_dim();
    const double* P = params_.data();
    const bool full = !grad.empty();
    double* G = full ? grad.data() : nullptr;

    if (cfg_.dense > 0) {
      const std::size_t hd = cfg_.dense;
      for (std::size_t j = 0; j < hd; ++j) {
        if (full) G[layout_.wout + j] += ws.z[j] * dlogit;
        ws.dz[j] = ws.zpre[j] > 0 ? P[layout_.wout + j] * dlogit : 0.0;
      }
      if (full) {
        nn::matmul_at_b(ws.pool.data(), ws.dz.data(), G + layout_.Wd, 1, d, hd);
        for (std::size_t j = 0; j < hd; ++j) G[layout_.bd + j] += ws.dz[j];
      }
      nn::matmul_a_bt(ws.dz.data(), P + layout_.Wd, ws.dpool.data(), 1, hd, d);
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        if (full) G[layout_.wout + j] += ws.pool[j] * dlogit;
        ws.dpool[j] = P[layout_.wout + j] * dlogit;
      }
    }
    if (full) G[layout_.bout] += dlogit;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j) ws.da2[t * d + j] = ws.dpool[j] / static_cast<double>(T);
    if (!full) return;

    layer_norm_backward(ws.da2, ws.xh2, ws.rs2, P + layout_.ln2g, G + layout_.ln2g, G + layout_.ln2b, ws.dr2);
    // r2 = a1 + f2
    nn::matmul_at_b(ws.f1.data(), ws.dr2.data(), G + layout_.W2, T, f, d);
    nn::colsum_acc(ws.dr2.data(), G + layout_.b2, T, d);
    nn::matmul_a_bt(ws.dr2.data(), P + layout_.W2, ws.df1.data(), T, d, f);
    for (std::size_t i = 0; i < T * f; ++i)
      if (!(ws.f1pre[i] > 0)) ws.df1[i] = 0.0;
    nn::matmul_at_b(ws.a1.data(), ws.df1.data(), G + layout_.W1, T, d, f);
    nn::colsum_acc(ws.df1.data(), G + layout_.b1, T, f);
    nn::matmul_a_bt(ws.df1.data(), P + layout_.W1, ws.da1.data(), T, f, d);
    for (std::size_t i = 0; i < T * d; ++i) ws.da1[i] += ws.dr2[i];

    layer_norm_backward(ws.da1, ws.xh1, ws.rs1, P + layout_.ln1g, G + layout_.ln1g, G + layout_.ln1b, ws.dr1);
    // r1 = e0 + ao
    nn::matmul_at_b(ws.cat.data(), ws.dr1.data(), G + layout_.Wo, T, d, d);
    nn::colsum_acc(ws.dr1.data(), G + layout_.bo, T, d);
    nn::matmul_a_bt(ws.dr1.data(), P + layout_.Wo, ws.dcat.data(), T, d, d);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::fill(ws.dq.begin(), ws.dq.end(), 0.0);
    std::fill(ws.dk.begin(), ws.dk.end(), 0.0);
    std::fill(ws.dv.begin(), ws.dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const double* A = ws.att.data() + h * T * T;
      // dA = dC_h V_h^T ; dV_h = A^T dC_h
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += ws.dcat[i * d + h * dh + p] * ws.v[j * d + h * dh + p];
          ws.datt[i * T + j] = s;
        }
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j) {
          const double a = A[i * T + j];
          for (std::size_t p = 0; p < dh; ++p) ws.dv[j * d + h * dh + p] += a * ws.dcat[i * d + h * dh + p];
        }
      // softmax backward, then the scaled dot product
      for (std::size_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) dot += ws.datt[i * T + j] * A[i * T + j];
        for (std::size_t j = 0; j < T; ++j) {
          const double ds = A[i * T + j] * (ws.datt[i * T + j] - dot) * scale;
          if (ds == 0.0) continue;
          for (std::size_t p = 0; p < dh; ++p) {
            ws.dq[i * d + h * dh + p] += ds * ws.k[j * d + h * dh + p];
            ws.dk[j * d + h * dh + p] += ds * ws.q[i * d + h * dh + p];
          }
        }
      }
    }
    std::copy(ws.dr1.begin(), ws.dr1.end(), ws.de0.begin());
    nn::matmul_at_b(ws.e0.data(), ws.dq.data(), G + layout_.Wq, T, d, d);
    nn::colsum_acc(ws.dq.data(), G + layout_.bq, T, d);
    nn::matmul_a_bt(ws.dq.data(), P + layout_.Wq, ws.de0.data(), T, d, d, true);
    nn::matmul_at_b(ws.e0.data(), ws.dk.data(), G + layout_.Wk, T, d, d);
    nn::colsum_acc(ws.dk.data(), G + layout_.bk, T, d);
    nn::matmul_a_bt(ws.dk.data(), P + layout_.Wk, ws.de0.data(), T, d, d, true);
    nn::matmul_at_b(ws.e0.data(), ws.dv.data(), G + layout_.Wv, T, d, d);
    nn::colsum_acc(ws.dv.data(), G + layout_.bv, T, d);
    nn::matmul_a_bt(ws.dv.data(), P + layout_.Wv, ws.de0.data(), T, d, d, true);

    nn::matmul_at_b(ws.x.data(), ws.de0.data(), G + layout_.We, T, L, d);
    nn::colsum_acc(ws.de0.data(), G + layout_.be, T, d);
  }

  double predict(std::span<const double> sample, TransformerWorkspace& ws) const {
    return nn::sigmoid(forward(sample, ws));
  }

 private:
  void build_positions() {
    const std::size_t T = cfg_.timesteps, d = cfg_.d_model;
    positions_.assign(T * d, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
        positions_[t * d + i] = i % 2 == 0 ? std::sin(t * rate) : std::cos(t * rate);
      }
  }

  void layer_norm(const std::vector<double>& in, std::vector<double>& out, std::vector<double>& xhat,
                  std::vector<double>& rstd, const double* gain, const double* bias) const {
    const std::size_t T = cfg_.timesteps, d = cfg_.d_model;
    constexpr double eps = 1e-5;
    for (std::size_t t = 0; t < T; ++t) {
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += in[t * d + j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (in[t * d + j] - mean) * (in[t * d + j] - mean);
      var /= static_cast<double>(d);
      rstd[t] = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) {
        xhat[t * d + j] = (in[t * d + j] - mean) * rstd[t];
        out[t * d + j] = gain[j] * xhat[t * d + j] + bias[j];
      }
    }
  }

  void layer_norm_backward(const std::vector<double>& dout, const std::vector<double>& xhat,
                           const std::vector<double>& rstd, const double* gain, double* dgain, double* dbias,
                           std::vector<double>& din) const {
    const std::size_t T = cfg_.timesteps, d = cfg_.d_model;
    for (std::size_t t = 0; t < T; ++t) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double g = dout[t * d + j];
        dgain[j] += g * xhat[t * d + j];
        dbias[j] += g;
        const double dx = g * gain[j];
        m1 += dx;
        m2 += dx * xhat[t * d + j];
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double dx = dout[t * d + j] * gain[j];
        din[t * d + j] = rstd[t] * (dx - m1 - xhat[t * d + j] * m2);
      }
    }
  }

  TransformerConfig cfg_;
  TransformerLayout layout_;
  std::vector<double> params_;
  std::vector<double> positions_;
};

/// Weighted binary cross-entropy on the sigmoid output, averaged over the batch:
/// (1/B) sum w_i [softplus(z_i) - y_i z_i].
struct BatchView {
  std::span<const double> features;  // B x (L*T), standardized
  std::span<const int> labels;
  std::span<const double> weights;
};

inline constexpr std::size_t kGradientChunk = 8;

/// Loss and (optionally) its gradient. Samples are processed in fixed chunks of 8 whose
/// partial gradients are summed in chunk order, so results do not depend on threads.
inline double loss_and_gradient(const TransformerNet& net, const BatchView& batch, std::vector<double>* grad,
                                std::size_t threads = default_threads()) {
  const std::size_t B = batch.labels.size();
  if (B == 0) return 0.0;
  const std::size_t width = batch.features.size() / B;
  const std::size_t chunks = (B + kGradientChunk - 1) / kGradientChunk;
  const std::size_t np = net.parameter_count();
  std::vector<std::vector<double>> partial(grad ? chunks : 0);
  std::vector<double> losses(chunks, 0.0);
  std::vector<char> bad(chunks, 0);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        TransformerWorkspace ws;
        ws.resize(net.config());
        if (grad) partial[c].assign(np, 0.0);
        const std::size_t lo = c * kGradientChunk, hi = std::min(B, lo + kGradientChunk);
        double loss = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
          const double z = net.forward(batch.features.subspan(i * width, width), ws);
          const double w = batch.weights[i];
          const int y = batch.labels[i];
          loss += w * (nn::softplus(z) - y * z);
          if (!std::isfinite(z)) bad[c] = 1;
          if (grad) net.backward(w * (nn::sigmoid(z) - y) / static_cast<double>(B), ws, partial[c]);
        }
        losses[c] = loss;
      },
      threads);
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) total += losses[c];
  for (char b : bad)
    if (b) throw NumericError("transformer: non-finite logit during training");
  if (grad) {
    grad->assign(np, 0.0);
    for (std::size_t c = 0; c < chunks; ++c)
      for (std::size_t j = 0; j < np; ++j) (*grad)[j] += partial[c][j];
  }
  return total / static_cast<double>(B);
}

struct AdamOptimizer {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> m, v;
  std::int64_t step = 0;

  void update(std::vector<double>& params, const std::vector<double>& grad) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + epsilon);
    }
  }
};

inline constexpr double kGradientCheckFloor = 1e-6;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central differences (step 1e-5) on every parameter against the analytic gradient.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6); below 1e-6 the comparison is absolute
/// because the differences carry roundoff near 1e-11. `corrupt` lets tests tamper with
/// the analytic gradient before comparison.
template <class Corrupt>
GradientCheckResult gradient_check(const TransformerNet& net, const BatchView& batch, Corrupt&& corrupt,
                                   double step = 1e-5) {
  GradientCheckResult res;
  loss_and_gradient(net, batch, &res.analytic, 1);
  corrupt(res.analytic);
  const std::size_t np = net.parameter_count();
  res.numeric.assign(np, 0.0);
  parallel_for(np, [&](std::size_t j) {
    TransformerNet probe = net;
    probe.params()[j] = net.params()[j] + step;
    const double up = loss_and_gradient(probe, batch, nullptr, 1);
    probe.params()[j] = net.params()[j] - step;
    const double down = loss_and_gradient(probe, batch, nullptr, 1);
    res.numeric[j] = (up - down) / (2.0 * step);
  });
  for (std::size_t j = 0; j < np; ++j) {
    const double a = res.analytic[j], n = res.numeric[j];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), kGradientCheckFloor});
    if (rel > res.max_relative_error) {
      res.max_relative_error = rel;
      res.worst_parameter = j;
    }
  }
  return res;
}

inline GradientCheckResult gradient_check(const TransformerNet& net, const BatchView& batch) {
  return gradient_check(net, batch, [](std::vector<double>&) {});
}

}  // namespace irrig
