#pragma once

// Minimal CPU neural-network core: NCHW tensors, conv/batchnorm/pool/linear
// layers with explicit backward passes, softmax cross-entropy, and Adam.
//
// Everything is templated on the scalar type so training runs in float while
// gradient checks instantiate the same code in double. Convolutions are
// im2col + Eigen GEMM. All loops run in a fixed order, so results are
// deterministic for a given seed.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

namespace evb::nn {

template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(c) * h * w; }

  T& at(int in, int ic, int iy, int ix) {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }
  T at(int in, int ic, int iy, int ix) const {
    return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
  }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
struct ParamRef {
  std::vector<T>* value;
  std::vector<T>* grad;
};

// ---------------------------------------------------------------------------

template <typename T>
struct Conv2d {
  int in_c, out_c, k, stride, pad;
  bool has_bias;
  std::vector<T> weight;  // [out_c][in_c*k*k]
  std::vector<T> bias;    // [out_c]
  std::vector<T> dweight, dbias;

  Conv2d(int in_c_, int out_c_, int k_, int stride_, int pad_, bool bias_ = false)
      : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_), has_bias(bias_),
        weight(static_cast<std::size_t>(out_c_) * in_c_ * k_ * k_),
        bias(bias_ ? out_c_ : 0),
        dweight(weight.size(), T(0)), dbias(bias.size(), T(0)) {}

  void init(std::mt19937_64& rng) {
    // He-normal, fan_in = in_c * k * k
    const double std_dev = std::sqrt(2.0 / (static_cast<double>(in_c) * k * k));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (T& w : weight) w = static_cast<T>(dist(rng));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({&weight, &dweight});
    if (has_bias) out.push_back({&bias, &dbias});
  }

  // caches
  std::vector<T> cols_;  // [n][K x P] im2col buffers, concatenated
  int in_h_ = 0, in_w_ = 0, batch_ = 0;

  void im2col(const T* x, T* col, int h, int w, int oh, int ow) const {
    const int K_row = k * k;
    for (int c = 0; c < in_c; ++c) {
      const T* plane = x + static_cast<std::size_t>(c) * h * w;
      for (int kk = 0; kk < K_row; ++kk) {
        const int ky = kk / k, kx = kk % k;
        T* dst = col + (static_cast<std::size_t>(c) * K_row + kk) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            dst += ow;
            continue;
          }
          const T* src_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }

  void col2im(const T* col, T* x, int h, int w, int oh, int ow) const {
    const int K_row = k * k;
    for (int c = 0; c < in_c; ++c) {
      T* plane = x + static_cast<std::size_t>(c) * h * w;
      for (int kk = 0; kk < K_row; ++kk) {
        const int ky = kk / k, kx = kk % k;
        const T* src = col + (static_cast<std::size_t>(c) * K_row + kk) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            src += ow;
            continue;
          }
          T* dst_row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += *src;
            ++src;
          }
        }
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
    const int oh = out_h(x.h), ow = out_w(x.w);
    const int K = in_c * k * k, P = oh * ow;
    in_h_ = x.h;
    in_w_ = x.w;
    batch_ = x.n;
    cols_.assign(static_cast<std::size_t>(x.n) * K * P, T(0));
    Tensor<T> y(x.n, out_c, oh, ow);
    ConstMatMap<T> W(weight.data(), out_c, K);
    for (int s = 0; s < x.n; ++s) {
      T* col = cols_.data() + static_cast<std::size_t>(s) * K * P;
      im2col(x.v.data() + s * x.plane(), col, x.h, x.w, oh, ow);
      MatMap<T> out(y.v.data() + s * y.plane(), out_c, P);
      ConstMatMap<T> colm(col, K, P);
      out.noalias() = W * colm;
      if (has_bias) {
        for (int oc = 0; oc < out_c; ++oc) out.row(oc).array() += bias[oc];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const int oh = dy.h, ow = dy.w;
    const int K = in_c * k * k, P = oh * ow;
    Tensor<T> dx(batch_, in_c, in_h_, in_w_);
    MatMap<T> dW(dweight.data(), out_c, K);
    ConstMatMap<T> W(weight.data(), out_c, K);
    std::vector<T> dcol(static_cast<std::size_t>(K) * P);
    for (int s = 0; s < batch_; ++s) {
      ConstMatMap<T> dYm(dy.v.data() + s * dy.plane(), out_c, P);
      ConstMatMap<T> colm(cols_.data() + static_cast<std::size_t>(s) * K * P, K, P);
      dW.noalias() += dYm * colm.transpose();
      if (has_bias) {
        for (int oc = 0; oc < out_c; ++oc) dbias[oc] += dYm.row(oc).sum();
      }
      MatMap<T> dcolm(dcol.data(), K, P);
      dcolm.noalias() = W.transpose() * dYm;
      col2im(dcol.data(), dx.v.data() + s * dx.plane(), in_h_, in_w_, oh, ow);
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct BatchNorm2d {
  int channels;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);
  std::vector<T> gamma, beta, dgamma, dbeta;
  std::vector<T> running_mean, running_var;

  explicit BatchNorm2d(int c)
      : channels(c), gamma(c, T(1)), beta(c, T(0)), dgamma(c, T(0)), dbeta(c, T(0)),
        running_mean(c, T(0)), running_var(c, T(1)) {}

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({&gamma, &dgamma});
    out.push_back({&beta, &dbeta});
  }

  // caches
  std::vector<T> xhat_;
  std::vector<T> inv_std_;
  int n_ = 0, h_ = 0, w_ = 0;

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    if (x.c != channels) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    Tensor<T> y(x.n, x.c, x.h, x.w);
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    n_ = x.n;
    h_ = x.h;
    w_ = x.w;
    if (train) {
      xhat_.resize(x.size());
      inv_std_.assign(channels, T(0));
      const double m = static_cast<double>(x.n) * hw;
      for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int s = 0; s < x.n; ++s) {
          const T* p = x.v.data() + s * x.plane() + c * hw;
          for (std::size_t i = 0; i < hw; ++i) sum += static_cast<double>(p[i]);
        }
        const double mean = sum / m;
        double sq = 0.0;
        for (int s = 0; s < x.n; ++s) {
          const T* p = x.v.data() + s * x.plane() + c * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double d = static_cast<double>(p[i]) - mean;
            sq += d * d;
          }
        }
        const double var = sq / m;
        const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std_[c] = inv;
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * static_cast<T>(mean);
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * static_cast<T>(var);
        for (int s = 0; s < x.n; ++s) {
          const T* p = x.v.data() + s * x.plane() + c * hw;
          T* xh = xhat_.data() + s * x.plane() + c * hw;
          T* out = y.v.data() + s * x.plane() + c * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            xh[i] = (p[i] - static_cast<T>(mean)) * inv;
            out[i] = gamma[c] * xh[i] + beta[c];
          }
        }
      }
    } else {
      for (int c = 0; c < channels; ++c) {
        const T inv = T(1) / static_cast<T>(
                                 std::sqrt(static_cast<double>(running_var[c]) +
                                           static_cast<double>(eps)));
        const T mean = running_mean[c];
        for (int s = 0; s < x.n; ++s) {
          const T* p = x.v.data() + s * x.plane() + c * hw;
          T* out = y.v.data() + s * x.plane() + c * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            out[i] = gamma[c] * ((p[i] - mean) * inv) + beta[c];
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t hw = static_cast<std::size_t>(h_) * w_;
    const double m = static_cast<double>(n_) * hw;
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int s = 0; s < n_; ++s) {
        const T* dyp = dy.v.data() + s * dy.plane() + c * hw;
        const T* xh = xhat_.data() + s * dy.plane() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy += static_cast<double>(dyp[i]);
          sum_dy_xhat += static_cast<double>(dyp[i]) * static_cast<double>(xh[i]);
        }
      }
      dbeta[c] += static_cast<T>(sum_dy);
      dgamma[c] += static_cast<T>(sum_dy_xhat);
      const T g_inv = gamma[c] * inv_std_[c];
      const T mean_dy = static_cast<T>(sum_dy / m);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
      for (int s = 0; s < n_; ++s) {
        const T* dyp = dy.v.data() + s * dy.plane() + c * hw;
        const T* xh = xhat_.data() + s * dy.plane() + c * hw;
        T* dxp = dx.v.data() + s * dx.plane() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          dxp[i] = g_inv * (dyp[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------

template <typename T>
struct ReLU {
  std::vector<std::uint8_t> mask_;

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = x;
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (y.v[i] > T(0)) {
        mask_[i] = 1;
      } else {
        y.v[i] = T(0);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (!mask_[i]) dx.v[i] = T(0);
    }
    return dx;
  }
};

template <typename T>
struct MaxPool2d {
  int k, stride, pad;
  MaxPool2d(int k_, int stride_, int pad_) : k(k_), stride(stride_), pad(pad_) {}

  std::vector<std::int32_t> argmax_;
  int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;

  Tensor<T> forward(const Tensor<T>& x) {
    const int oh = (x.h + 2 * pad - k) / stride + 1;
    const int ow = (x.w + 2 * pad - k) / stride + 1;
    n_ = x.n;
    c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor<T> y(x.n, x.c, oh, ow);
    argmax_.assign(y.size(), -1);
    std::size_t oi = 0;
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        const T* plane = x.v.data() + (static_cast<std::size_t>(s) * x.c + c) * x.h * x.w;
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            std::int32_t best_i = -1;
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= x.w) continue;
                const T v = plane[iy * x.w + ix];
                if (v > best) {
                  best = v;
                  best_i = iy * x.w + ix;
                }
              }
            }
            y.v[oi] = best_i >= 0 ? best : T(0);
            argmax_[oi] = best_i;
          }
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(n_, c_, in_h_, in_w_);
    std::size_t oi = 0;
    const std::size_t ohw = static_cast<std::size_t>(dy.h) * dy.w;
    for (int s = 0; s < n_; ++s) {
      for (int c = 0; c < c_; ++c) {
        T* plane = dx.v.data() + (static_cast<std::size_t>(s) * c_ + c) * in_h_ * in_w_;
        for (std::size_t i = 0; i < ohw; ++i, ++oi) {
          if (argmax_[oi] >= 0) plane[argmax_[oi]] += dy.v[oi];
        }
      }
    }
    return dx;
  }
};

// Adaptive average pooling to 1x1.
template <typename T>
struct GlobalAvgPool {
  int in_h_ = 0, in_w_ = 0;

  Tensor<T> forward(const Tensor<T>& x) {
    in_h_ = x.h;
    in_w_ = x.w;
    Tensor<T> y(x.n, x.c, 1, 1);
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        const T* p = x.v.data() + (static_cast<std::size_t>(s) * x.c + c) * hw;
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
        y.v[static_cast<std::size_t>(s) * x.c + c] = static_cast<T>(acc / hw);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.n, dy.c, in_h_, in_w_);
    const std::size_t hw = static_cast<std::size_t>(in_h_) * in_w_;
    const T scale = T(1) / static_cast<T>(hw);
    for (int s = 0; s < dy.n; ++s) {
      for (int c = 0; c < dy.c; ++c) {
        const T g = dy.v[static_cast<std::size_t>(s) * dy.c + c] * scale;
        T* p = dx.v.data() + (static_cast<std::size_t>(s) * dy.c + c) * hw;
        std::fill(p, p + hw, g);
      }
    }
    return dx;
  }
};

template <typename T>
struct Linear {
  int in_f, out_f;
  std::vector<T> weight, bias, dweight, dbias;  // weight [out_f][in_f]

  Linear(int in_f_, int out_f_)
      : in_f(in_f_), out_f(out_f_),
        weight(static_cast<std::size_t>(in_f_) * out_f_), bias(out_f_, T(0)),
        dweight(weight.size(), T(0)), dbias(out_f_, T(0)) {}

  void init(std::mt19937_64& rng) {
    const double std_dev = std::sqrt(2.0 / in_f);
    std::normal_distribution<double> dist(0.0, std_dev);
    for (T& w : weight) w = static_cast<T>(dist(rng));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  void collect(std::vector<ParamRef<T>>& out) {
    out.push_back({&weight, &dweight});
    out.push_back({&bias, &dbias});
  }

  Tensor<T> x_;

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c * x.h * x.w != in_f) throw std::invalid_argument("Linear: feature mismatch");
    x_ = x;
    Tensor<T> y(x.n, out_f, 1, 1);
    ConstMatMap<T> X(x.v.data(), x.n, in_f);
    ConstMatMap<T> W(weight.data(), out_f, in_f);
    MatMap<T> Y(y.v.data(), x.n, out_f);
    Y.noalias() = X * W.transpose();
    for (int s = 0; s < x.n; ++s) {
      for (int o = 0; o < out_f; ++o) Y(s, o) += bias[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(x_.n, x_.c, x_.h, x_.w);
    ConstMatMap<T> dY(dy.v.data(), dy.n, out_f);
    ConstMatMap<T> X(x_.v.data(), x_.n, in_f);
    ConstMatMap<T> W(weight.data(), out_f, in_f);
    MatMap<T> dW(dweight.data(), out_f, in_f);
    MatMap<T> dX(dx.v.data(), x_.n, in_f);
    dW.noalias() += dY.transpose() * X;
    for (int s = 0; s < dy.n; ++s) {
      for (int o = 0; o < out_f; ++o) dbias[o] += dY(s, o);
    }
    dX.noalias() = dY * W;
    return dx;
  }
};

template <typename T>
struct Dropout {
  T p;
  explicit Dropout(T p_) : p(p_) {}

  std::vector<T> mask_;

  Tensor<T> forward(const Tensor<T>& x, bool train, std::mt19937_64& rng) {
    if (!train || p <= T(0)) {
      mask_.clear();
      return x;
    }
    Tensor<T> y = x;
    mask_.assign(x.size(), T(0));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T scale = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (u(rng) >= static_cast<double>(p)) {
        mask_[i] = scale;
        y.v[i] *= scale;
      } else {
        y.v[i] = T(0);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (mask_.empty()) return dy;
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] *= mask_[i];
    return dx;
  }
};

// ---------------------------------------------------------------------------

// Mean softmax cross-entropy over the batch. Returns the loss and writes
// dlogits = (softmax - onehot) / N.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                             Tensor<T>* dlogits) {
  if (static_cast<int>(labels.size()) != logits.n) {
    throw std::invalid_argument("labels/batch size mismatch");
  }
  const int K = logits.c * logits.h * logits.w;
  if (dlogits) *dlogits = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  double loss = 0.0;
  for (int s = 0; s < logits.n; ++s) {
    const T* row = logits.v.data() + static_cast<std::size_t>(s) * K;
    const int label = labels[s];
    if (label < 0 || label >= K) throw std::invalid_argument("label out of range");
    double maxv = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < K; ++i) maxv = std::max(maxv, static_cast<double>(row[i]));
    double z = 0.0;
    for (int i = 0; i < K; ++i) z += std::exp(static_cast<double>(row[i]) - maxv);
    loss += -(static_cast<double>(row[label]) - maxv - std::log(z));
    if (dlogits) {
      T* drow = dlogits->v.data() + static_cast<std::size_t>(s) * K;
      for (int i = 0; i < K; ++i) {
        const double p = std::exp(static_cast<double>(row[i]) - maxv) / z;
        drow[i] = static_cast<T>((p - (i == label ? 1.0 : 0.0)) / logits.n);
      }
    }
  }
  return loss / logits.n;
}

template <typename T>
std::vector<double> softmax_row(const Tensor<T>& logits, int row_idx) {
  const int K = logits.c * logits.h * logits.w;
  const T* row = logits.v.data() + static_cast<std::size_t>(row_idx) * K;
  double maxv = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < K; ++i) maxv = std::max(maxv, static_cast<double>(row[i]));
  double z = 0.0;
  std::vector<double> p(K);
  for (int i = 0; i < K; ++i) {
    p[i] = std::exp(static_cast<double>(row[i]) - maxv);
    z += p[i];
  }
  for (double& q : p) q /= z;
  return p;
}

// ---------------------------------------------------------------------------

template <typename T>
struct Adam {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step_count = 0;
  std::vector<std::vector<double>> m_, v_;

  void step(std::vector<ParamRef<T>>& params) {
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.value->size(), 0.0);
        v_.emplace_back(p.value->size(), 0.0);
      }
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& value = *params[pi].value;
      auto& grad = *params[pi].grad;
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        value[i] -= static_cast<T>(lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps));
      }
    }
  }
};

template <typename T>
inline void zero_grads(std::vector<ParamRef<T>>& params) {
  for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), T(0));
}

// ---------------------------------------------------------------------------

// conv3x3-bn-relu-conv3x3-bn plus identity (or 1x1 conv + bn when the shape
// changes), then relu.
template <typename T>
struct BasicBlock {
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
  ReLU<T> relu1, relu2;
  bool has_projection;
  Conv2d<T> proj_conv;
  BatchNorm2d<T> proj_bn;

  BasicBlock(int in_c, int out_c, int stride)
      : conv1(in_c, out_c, 3, stride, 1), conv2(out_c, out_c, 3, 1, 1),
        bn1(out_c), bn2(out_c),
        has_projection(stride != 1 || in_c != out_c),
        proj_conv(in_c, out_c, 1, stride, 0), proj_bn(out_c) {}

  void init(std::mt19937_64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (has_projection) proj_conv.init(rng);
  }

  void collect(std::vector<ParamRef<T>>& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
    if (has_projection) {
      proj_conv.collect(out);
      proj_bn.collect(out);
    }
  }

  void collect_bn(std::vector<BatchNorm2d<T>*>& out) {
    out.push_back(&bn1);
    out.push_back(&bn2);
    if (has_projection) out.push_back(&proj_bn);
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> main = relu1.forward(bn1.forward(conv1.forward(x), train));
    main = bn2.forward(conv2.forward(main), train);
    Tensor<T> shortcut =
        has_projection ? proj_bn.forward(proj_conv.forward(x), train) : x;
    for (std::size_t i = 0; i < main.size(); ++i) main.v[i] += shortcut.v[i];
    return relu2.forward(main);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> d = relu2.backward(dy);
    Tensor<T> d_main = conv1.backward(bn1.backward(relu1.backward(
        conv2.backward(bn2.backward(d)))));
    Tensor<T> d_short = has_projection ? proj_conv.backward(proj_bn.backward(d)) : d;
    for (std::size_t i = 0; i < d_main.size(); ++i) d_main.v[i] += d_short.v[i];
    return d_main;
  }
};

}  // namespace evb::nn
