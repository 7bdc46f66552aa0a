#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rsdg/error.hpp"
#include "rsdg/rng.hpp"
#include "rsdg/tensor.hpp"

namespace rsdg {

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace nn_detail {

// Orthogonal init for a rows x cols matrix (row-major): Gaussian fill, then
// modified Gram-Schmidt over the smaller dimension, so either the rows or
// the columns come out orthonormal.
inline void orthogonal_init(std::span<double> w, int rows, int cols, Rng& rng) {
  require(static_cast<int>(w.size()) == rows * cols, "orthogonal_init: size mismatch");
  for (double& v : w) v = rng.normal();
  const bool by_rows = rows <= cols;
  const int nvec = by_rows ? rows : cols;
  const int dim = by_rows ? cols : rows;
  auto get = [&](int vec, int k) -> double& {
    return by_rows ? w[vec * cols + k] : w[k * cols + vec];
  };
  for (int v = 0; v < nvec; ++v) {
    for (int pass = 0; pass < 2; ++pass) {
      for (int u = 0; u < v; ++u) {
        double dot = 0.0;
        for (int k = 0; k < dim; ++k) dot += get(v, k) * get(u, k);
        for (int k = 0; k < dim; ++k) get(v, k) -= dot * get(u, k);
      }
    }
    double norm = 0.0;
    for (int k = 0; k < dim; ++k) norm += get(v, k) * get(v, k);
    norm = std::sqrt(norm);
    require(norm > 1e-12, "orthogonal_init: degenerate draw");
    for (int k = 0; k < dim; ++k) get(v, k) /= norm;
  }
}

// Effective weight-norm row: w_eff = g * v / ||v||. Shared by dense and conv.
struct WeightNormView {
  // Param layout: [v (units x fan_in)] [g (units)] [b (units)]
  int units = 0;
  int fan_in = 0;

  int count() const { return units * fan_in + 2 * units; }
  std::span<const double> v(std::span<const double> p) const { return p.subspan(0, units * fan_in); }
  std::span<const double> g(std::span<const double> p) const {
    return p.subspan(units * fan_in, units);
  }
  std::span<const double> b(std::span<const double> p) const {
    return p.subspan(units * fan_in + units, units);
  }

  double row_norm(std::span<const double> p, int u) const {
    double s = 0.0;
    for (int k = 0; k < fan_in; ++k) s += p[u * fan_in + k] * p[u * fan_in + k];
    return std::sqrt(s);
  }

  void effective(std::span<const double> p, int u, std::vector<double>& out) const {
    const double n = row_norm(p, u);
    const double scale = g(p)[u] / std::max(n, 1e-300);
    out.resize(static_cast<std::size_t>(fan_in));
    for (int k = 0; k < fan_in; ++k) out[k] = scale * p[u * fan_in + k];
  }

  // Maps d(loss)/d(effective row) into gradients for v and g.
  void backprop_row(std::span<const double> p, int u, const std::vector<double>& dw_eff,
                    std::span<double> grad) const {
    const double n = std::max(row_norm(p, u), 1e-300);
    const double gu = g(p)[u];
    double dot = 0.0;
    for (int k = 0; k < fan_in; ++k) dot += dw_eff[k] * p[u * fan_in + k];
    grad[units * fan_in + u] += dot / n;
    const double a = gu / n;
    const double c = gu * dot / (n * n * n);
    for (int k = 0; k < fan_in; ++k)
      grad[u * fan_in + k] += a * dw_eff[k] - c * p[u * fan_in + k];
  }

  void init(std::span<double> p, Rng& rng) const {
    orthogonal_init(p.subspan(0, units * fan_in), units, fan_in, rng);
    for (int u = 0; u < units; ++u) {
      p[units * fan_in + u] = row_norm(p, u);  // g = ||v||, so w_eff = v at start
      p[units * fan_in + units + u] = 0.0;
    }
  }

  void renormalize(std::span<double> p) const {
    for (int u = 0; u < units; ++u) {
      const double n = row_norm(p, u);
      if (n > 1e-300)
        for (int k = 0; k < fan_in; ++k) p[u * fan_in + k] /= n;
    }
  }
};

}  // namespace nn_detail

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  // Validates the input shape and returns the output shape.
  virtual Shape bind(const Shape& in) = 0;
  virtual int param_count() const = 0;
  virtual void init_params(std::span<double> p, Rng& rng) const = 0;
  virtual Tensor forward(const Tensor& x, std::span<const double> p) = 0;
  // x is the layer input of the matching forward call, y its output.
  virtual Tensor backward(const Tensor& up, const Tensor& x, const Tensor& y,
                          std::span<const double> p, std::span<double> grad) = 0;
  virtual void renormalize(std::span<double>) const {}
};

using LayerPtr = std::unique_ptr<Layer>;

class DenseLayer : public Layer {
 public:
  DenseLayer(int in_dim, int out_dim, bool weight_norm)
      : in_(in_dim), out_(out_dim), wn_(weight_norm) {
    view_.units = out_dim;
    view_.fan_in = in_dim;
  }

  std::string kind() const override { return wn_ ? "dense_wn" : "dense"; }

  Shape bind(const Shape& in) override {
    require(shape_numel(in) == in_, "dense: expected input of " + std::to_string(in_) +
                                        " values, got " + shape_str(in));
    return {out_};
  }

  int param_count() const override { return wn_ ? view_.count() : in_ * out_ + out_; }

  void init_params(std::span<double> p, Rng& rng) const override {
    if (wn_) {
      view_.init(p, rng);
    } else {
      nn_detail::orthogonal_init(p.subspan(0, static_cast<std::size_t>(in_) * out_), out_, in_,
                                 rng);
      for (int u = 0; u < out_; ++u) p[in_ * out_ + u] = 0.0;
    }
  }

  Tensor forward(const Tensor& x, std::span<const double> p) override {
    Tensor y = Tensor::zeros({out_});
    if (wn_) {
      for (int u = 0; u < out_; ++u) {
        view_.effective(p, u, row_buf_);
        double acc = view_.b(p)[u];
        for (int k = 0; k < in_; ++k) acc += row_buf_[k] * x.v[k];
        y.v[u] = acc;
      }
    } else {
      for (int u = 0; u < out_; ++u) {
        double acc = p[in_ * out_ + u];
        for (int k = 0; k < in_; ++k) acc += p[u * in_ + k] * x.v[k];
        y.v[u] = acc;
      }
    }
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor& x, const Tensor&, std::span<const double> p,
                  std::span<double> grad) override {
    Tensor dx = Tensor::zeros({in_});
    if (wn_) {
      std::vector<double> dw(static_cast<std::size_t>(in_));
      for (int u = 0; u < out_; ++u) {
        view_.effective(p, u, row_buf_);
        const double g_up = up.v[u];
        for (int k = 0; k < in_; ++k) {
          dx.v[k] += row_buf_[k] * g_up;
          dw[k] = g_up * x.v[k];
        }
        view_.backprop_row(p, u, dw, grad);
        grad[view_.units * view_.fan_in + view_.units + u] += g_up;
      }
    } else {
      for (int u = 0; u < out_; ++u) {
        const double g_up = up.v[u];
        for (int k = 0; k < in_; ++k) {
          dx.v[k] += p[u * in_ + k] * g_up;
          grad[u * in_ + k] += g_up * x.v[k];
        }
        grad[in_ * out_ + u] += g_up;
      }
    }
    return dx;
  }

  void renormalize(std::span<double> p) const override {
    if (wn_) view_.renormalize(p);
  }

  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  bool weight_normalized() const { return wn_; }
  // Offset of the per-unit scale parameters inside this layer's slice.
  int scale_offset() const { return view_.units * view_.fan_in; }

 private:
  int in_, out_;
  bool wn_;
  nn_detail::WeightNormView view_;
  std::vector<double> row_buf_;
};

// Same-padded 2-D convolution on (C,H,W) tensors. Even kernels pad one less
// on the leading side, mirroring the usual deep-learning convention.
class Conv2dLayer : public Layer {
 public:
  Conv2dLayer(int in_ch, int out_ch, int k, bool weight_norm)
      : in_ch_(in_ch), out_ch_(out_ch), k_(k), wn_(weight_norm) {
    view_.units = out_ch;
    view_.fan_in = in_ch * k * k;
  }

  std::string kind() const override { return wn_ ? "conv2d_wn" : "conv2d"; }

  Shape bind(const Shape& in) override {
    require(in.size() == 3 && in[0] == in_ch_,
            "conv2d: expected (" + std::to_string(in_ch_) + ",H,W) input, got " + shape_str(in));
    h_ = in[1];
    w_ = in[2];
    return {out_ch_, h_, w_};
  }

  int param_count() const override {
    return wn_ ? view_.count() : out_ch_ * in_ch_ * k_ * k_ + out_ch_;
  }

  void init_params(std::span<double> p, Rng& rng) const override {
    if (wn_) {
      view_.init(p, rng);
    } else {
      nn_detail::orthogonal_init(p.subspan(0, static_cast<std::size_t>(out_ch_) * in_ch_ * k_ * k_),
                                 out_ch_, in_ch_ * k_ * k_, rng);
      for (int u = 0; u < out_ch_; ++u) p[out_ch_ * in_ch_ * k_ * k_ + u] = 0.0;
    }
  }

  Tensor forward(const Tensor& x, std::span<const double> p) override {
    Tensor y = Tensor::zeros({out_ch_, h_, w_});
    const int pb = (k_ - 1) / 2;
    for (int o = 0; o < out_ch_; ++o) {
      const double* wrow = effective_row(p, o);
      const double bias = wn_ ? view_.b(p)[o] : p[out_ch_ * in_ch_ * k_ * k_ + o];
      for (int yy = 0; yy < h_; ++yy)
        for (int xx = 0; xx < w_; ++xx) {
          double acc = bias;
          for (int c = 0; c < in_ch_; ++c)
            for (int dy = 0; dy < k_; ++dy) {
              const int iy = yy + dy - pb;
              if (iy < 0 || iy >= h_) continue;
              for (int dx = 0; dx < k_; ++dx) {
                const int ix = xx + dx - pb;
                if (ix < 0 || ix >= w_) continue;
                acc += wrow[(c * k_ + dy) * k_ + dx] * x.v[(c * h_ + iy) * w_ + ix];
              }
            }
          y.v[(o * h_ + yy) * w_ + xx] = acc;
        }
    }
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor& x, const Tensor&, std::span<const double> p,
                  std::span<double> grad) override {
    Tensor dx = Tensor::zeros({in_ch_, h_, w_});
    const int pb = (k_ - 1) / 2;
    const int fan = in_ch_ * k_ * k_;
    std::vector<double> dw(static_cast<std::size_t>(fan));
    for (int o = 0; o < out_ch_; ++o) {
      const double* wrow = effective_row(p, o);
      std::fill(dw.begin(), dw.end(), 0.0);
      double db = 0.0;
      for (int yy = 0; yy < h_; ++yy)
        for (int xx = 0; xx < w_; ++xx) {
          const double u = up.v[(o * h_ + yy) * w_ + xx];
          if (u == 0.0) continue;
          db += u;
          for (int c = 0; c < in_ch_; ++c)
            for (int dy = 0; dy < k_; ++dy) {
              const int iy = yy + dy - pb;
              if (iy < 0 || iy >= h_) continue;
              for (int dxk = 0; dxk < k_; ++dxk) {
                const int ix = xx + dxk - pb;
                if (ix < 0 || ix >= w_) continue;
                dw[(c * k_ + dy) * k_ + dxk] += u * x.v[(c * h_ + iy) * w_ + ix];
                dx.v[(c * h_ + iy) * w_ + ix] += u * wrow[(c * k_ + dy) * k_ + dxk];
              }
            }
        }
      if (wn_) {
        view_.backprop_row(p, o, dw, grad);
        grad[view_.units * view_.fan_in + view_.units + o] += db;
      } else {
        for (int k = 0; k < fan; ++k) grad[o * fan + k] += dw[k];
        grad[out_ch_ * fan + o] += db;
      }
    }
    return dx;
  }

  void renormalize(std::span<double> p) const override {
    if (wn_) view_.renormalize(p);
  }

 private:
  const double* effective_row(std::span<const double> p, int o) {
    const int fan = in_ch_ * k_ * k_;
    if (!wn_) return p.data() + static_cast<std::size_t>(o) * fan;
    view_.effective(p, o, row_buf_);
    return row_buf_.data();
  }

  int in_ch_, out_ch_, k_;
  bool wn_;
  int h_ = 0, w_ = 0;
  nn_detail::WeightNormView view_;
  std::vector<double> row_buf_;
};

class TanhLayer : public Layer {
 public:
  std::string kind() const override { return "tanh"; }
  Shape bind(const Shape& in) override { return in; }
  int param_count() const override { return 0; }
  void init_params(std::span<double>, Rng&) const override {}

  Tensor forward(const Tensor& x, std::span<const double>) override {
    Tensor y = x;
    for (double& v : y.v) v = std::tanh(v);
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor&, const Tensor& y, std::span<const double>,
                  std::span<double>) override {
    Tensor dx = up;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] *= 1.0 - y.v[i] * y.v[i];
    return dx;
  }
};

class SoftmaxLayer : public Layer {
 public:
  std::string kind() const override { return "softmax"; }
  Shape bind(const Shape& in) override { return in; }
  int param_count() const override { return 0; }
  void init_params(std::span<double>, Rng&) const override {}

  Tensor forward(const Tensor& x, std::span<const double>) override {
    Tensor y = x;
    double mx = y.v[0];
    for (double v : y.v) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : y.v) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : y.v) v /= sum;
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor&, const Tensor& y, std::span<const double>,
                  std::span<double>) override {
    double dot = 0.0;
    for (std::size_t i = 0; i < y.v.size(); ++i) dot += up.v[i] * y.v[i];
    Tensor dx = up;
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] = y.v[i] * (up.v[i] - dot);
    return dx;
  }
};

class ReshapeLayer : public Layer {
 public:
  explicit ReshapeLayer(Shape target) : target_(std::move(target)) {}
  std::string kind() const override { return "reshape"; }

  Shape bind(const Shape& in) override {
    require(shape_numel(in) == shape_numel(target_),
            "reshape: cannot map " + shape_str(in) + " to " + shape_str(target_));
    in_ = in;
    return target_;
  }

  int param_count() const override { return 0; }
  void init_params(std::span<double>, Rng&) const override {}

  Tensor forward(const Tensor& x, std::span<const double>) override {
    Tensor y = x;
    y.shape = target_;
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor&, const Tensor&, std::span<const double>,
                  std::span<double>) override {
    Tensor dx = up;
    dx.shape = in_;
    return dx;
  }

 private:
  Shape target_;
  Shape in_;
};

// conv(k)-tanh-conv(k) plus shortcut; a 1x1 projection carries the shortcut
// when the channel count changes.
class ResidualBlock : public Layer {
 public:
  ResidualBlock(int in_ch, int out_ch, int k)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        conv1_(in_ch, out_ch, k, true),
        conv2_(out_ch, out_ch, k, true),
        shortcut_(in_ch, out_ch, 1, true) {}

  std::string kind() const override { return "residual"; }

  Shape bind(const Shape& in) override {
    const Shape mid = conv1_.bind(in);
    conv2_.bind(mid);
    if (in_ch_ != out_ch_) shortcut_.bind(in);
    return mid;
  }

  int param_count() const override {
    int n = conv1_.param_count() + conv2_.param_count();
    if (in_ch_ != out_ch_) n += shortcut_.param_count();
    return n;
  }

  void init_params(std::span<double> p, Rng& rng) const override {
    const int c1 = conv1_.param_count(), c2 = conv2_.param_count();
    conv1_.init_params(p.subspan(0, c1), rng);
    conv2_.init_params(p.subspan(c1, c2), rng);
    if (in_ch_ != out_ch_) shortcut_.init_params(p.subspan(c1 + c2), rng);
  }

  Tensor forward(const Tensor& x, std::span<const double> p) override {
    const int c1 = conv1_.param_count(), c2 = conv2_.param_count();
    h1_ = conv1_.forward(x, p.subspan(0, c1));
    a1_ = h1_;
    for (double& v : a1_.v) v = std::tanh(v);
    Tensor y = conv2_.forward(a1_, p.subspan(c1, c2));
    if (in_ch_ != out_ch_) {
      const Tensor s = shortcut_.forward(x, p.subspan(c1 + c2));
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
    } else {
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
    }
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor& x, const Tensor&, std::span<const double> p,
                  std::span<double> grad) override {
    const int c1 = conv1_.param_count(), c2 = conv2_.param_count();
    Tensor da1 = conv2_.backward(up, a1_, Tensor(), p.subspan(c1, c2), grad.subspan(c1, c2));
    for (std::size_t i = 0; i < da1.v.size(); ++i) da1.v[i] *= 1.0 - a1_.v[i] * a1_.v[i];
    Tensor dx = conv1_.backward(da1, x, Tensor(), p.subspan(0, c1), grad.subspan(0, c1));
    if (in_ch_ != out_ch_) {
      const Tensor ds =
          shortcut_.backward(up, x, Tensor(), p.subspan(c1 + c2), grad.subspan(c1 + c2));
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += up.v[i];
    }
    return dx;
  }

  void renormalize(std::span<double> p) const override {
    const int c1 = conv1_.param_count(), c2 = conv2_.param_count();
    conv1_.renormalize(p.subspan(0, c1));
    conv2_.renormalize(p.subspan(c1, c2));
    if (in_ch_ != out_ch_) shortcut_.renormalize(p.subspan(c1 + c2));
  }

 private:
  int in_ch_, out_ch_;
  Conv2dLayer conv1_, conv2_, shortcut_;
  Tensor h1_, a1_;
};

// Dot-product self-attention over spatial positions with 1x1 projections.
// Channel plan: in -> inner for the three projections, inner -> out for the
// output projection, plus an identity or 1x1 shortcut.
class NonLocalBlock : public Layer {
 public:
  NonLocalBlock(int in_ch, int inner_ch, int out_ch)
      : in_ch_(in_ch),
        inner_ch_(inner_ch),
        out_ch_(out_ch),
        theta_(in_ch, inner_ch, 1, true),
        phi_(in_ch, inner_ch, 1, true),
        gproj_(in_ch, inner_ch, 1, true),
        oproj_(inner_ch, out_ch, 1, true),
        shortcut_(in_ch, out_ch, 1, true) {}

  std::string kind() const override { return "non_local"; }

  Shape bind(const Shape& in) override {
    require(in.size() == 3 && in[0] == in_ch_,
            "non_local: expected (" + std::to_string(in_ch_) + ",H,W), got " + shape_str(in));
    h_ = in[1];
    w_ = in[2];
    theta_.bind(in);
    phi_.bind(in);
    gproj_.bind(in);
    oproj_.bind({inner_ch_, h_, w_});
    if (in_ch_ != out_ch_) shortcut_.bind(in);
    return {out_ch_, h_, w_};
  }

  int param_count() const override {
    int n = theta_.param_count() + phi_.param_count() + gproj_.param_count() +
            oproj_.param_count();
    if (in_ch_ != out_ch_) n += shortcut_.param_count();
    return n;
  }

  void init_params(std::span<double> p, Rng& rng) const override {
    int off = 0;
    for (const Conv2dLayer* c : {&theta_, &phi_, &gproj_, &oproj_}) {
      c->init_params(p.subspan(off, c->param_count()), rng);
      off += c->param_count();
    }
    if (in_ch_ != out_ch_) shortcut_.init_params(p.subspan(off), rng);
  }

  Tensor forward(const Tensor& x, std::span<const double> p) override {
    const int n = h_ * w_;
    int off = 0;
    th_ = theta_.forward(x, sub(p, off, theta_));
    ph_ = phi_.forward(x, sub(p, off, phi_));
    gp_ = gproj_.forward(x, sub(p, off, gproj_));

    // attn[i][j] = softmax_j( theta_i . phi_j )
    attn_.assign(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
      double mx = -1e300;
      for (int j = 0; j < n; ++j) {
        double dot = 0.0;
        for (int c = 0; c < inner_ch_; ++c) dot += th_.v[c * n + i] * ph_.v[c * n + j];
        attn_[i * n + j] = dot;
        mx = std::max(mx, dot);
      }
      double sum = 0.0;
      for (int j = 0; j < n; ++j) {
        attn_[i * n + j] = std::exp(attn_[i * n + j] - mx);
        sum += attn_[i * n + j];
      }
      for (int j = 0; j < n; ++j) attn_[i * n + j] /= sum;
    }

    agg_ = Tensor::zeros({inner_ch_, h_, w_});
    for (int c = 0; c < inner_ch_; ++c)
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += attn_[i * n + j] * gp_.v[c * n + j];
        agg_.v[c * n + i] = acc;
      }

    Tensor y = oproj_.forward(agg_, sub(p, off, oproj_));
    if (in_ch_ != out_ch_) {
      const Tensor s = shortcut_.forward(x, p.subspan(off));
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += s.v[i];
    } else {
      for (std::size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
    }
    return y;
  }

  Tensor backward(const Tensor& up, const Tensor& x, const Tensor&, std::span<const double> p,
                  std::span<double> grad) override {
    const int n = h_ * w_;
    const int ct = theta_.param_count(), cp = phi_.param_count(), cg = gproj_.param_count(),
              co = oproj_.param_count();

    Tensor dagg = oproj_.backward(up, agg_, Tensor(), p.subspan(ct + cp + cg, co),
                                  grad.subspan(ct + cp + cg, co));

    // Through the attention-weighted aggregation.
    std::vector<double> dattn(static_cast<std::size_t>(n) * n, 0.0);
    Tensor dgp = Tensor::zeros({inner_ch_, h_, w_});
    for (int c = 0; c < inner_ch_; ++c)
      for (int i = 0; i < n; ++i) {
        const double d = dagg.v[c * n + i];
        if (d == 0.0) continue;
        for (int j = 0; j < n; ++j) {
          dattn[i * n + j] += d * gp_.v[c * n + j];
          dgp.v[c * n + j] += d * attn_[i * n + j];
        }
      }

    // Softmax rows.
    std::vector<double> dlogit(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dattn[i * n + j] * attn_[i * n + j];
      for (int j = 0; j < n; ++j)
        dlogit[i * n + j] = attn_[i * n + j] * (dattn[i * n + j] - dot);
    }

    Tensor dth = Tensor::zeros({inner_ch_, h_, w_});
    Tensor dph = Tensor::zeros({inner_ch_, h_, w_});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d = dlogit[i * n + j];
        if (d == 0.0) continue;
        for (int c = 0; c < inner_ch_; ++c) {
          dth.v[c * n + i] += d * ph_.v[c * n + j];
          dph.v[c * n + j] += d * th_.v[c * n + i];
        }
      }

    Tensor dx = theta_.backward(dth, x, Tensor(), p.subspan(0, ct), grad.subspan(0, ct));
    const Tensor dx2 = phi_.backward(dph, x, Tensor(), p.subspan(ct, cp), grad.subspan(ct, cp));
    const Tensor dx3 =
        gproj_.backward(dgp, x, Tensor(), p.subspan(ct + cp, cg), grad.subspan(ct + cp, cg));
    for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dx2.v[i] + dx3.v[i];

    if (in_ch_ != out_ch_) {
      const Tensor ds = shortcut_.backward(up, x, Tensor(), p.subspan(ct + cp + cg + co),
                                           grad.subspan(ct + cp + cg + co));
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += ds.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += up.v[i];
    }
    return dx;
  }

  void renormalize(std::span<double> p) const override {
    int off = 0;
    for (const Conv2dLayer* c : {&theta_, &phi_, &gproj_, &oproj_}) {
      c->renormalize(p.subspan(off, c->param_count()));
      off += c->param_count();
    }
    if (in_ch_ != out_ch_) shortcut_.renormalize(p.subspan(off));
  }

 private:
  std::span<const double> sub(std::span<const double> p, int& off, const Conv2dLayer& c) const {
    const int cnt = c.param_count();
    auto s = p.subspan(off, cnt);
    off += cnt;
    return s;
  }

  int in_ch_, inner_ch_, out_ch_;
  int h_ = 0, w_ = 0;
  Conv2dLayer theta_, phi_, gproj_, oproj_, shortcut_;
  Tensor th_, ph_, gp_, agg_;
  std::vector<double> attn_;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

// Ordered layer stack over a flat parameter vector. A Network instance is
// single-writer: forward/backward/step must be serialized per instance;
// distinct instances are independent.
class Network {
 public:
  Network(Shape input_shape, std::vector<LayerPtr> layers, std::uint64_t seed)
      : in_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    Shape cur = in_shape_;
    int total = 0;
    offsets_.reserve(layers_.size() + 1);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      offsets_.push_back(total);
      try {
        cur = layers_[i]->bind(cur);
      } catch (const Error& e) {
        throw Error("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                    "): " + e.what());
      }
      total += layers_[i]->param_count();
    }
    offsets_.push_back(total);
    out_shape_ = cur;
    params_.assign(static_cast<std::size_t>(total), 0.0);
    grads_.assign(static_cast<std::size_t>(total), 0.0);
    Rng rng(mix_seed(seed, 0x4e7));
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->init_params(param_slice(i), rng);
  }

  int param_count() const { return static_cast<int>(params_.size()); }
  const Shape& input_shape() const { return in_shape_; }
  const Shape& output_shape() const { return out_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& grads() { return grads_; }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  Tensor forward(const Tensor& x) {
    require(same_shape(x.shape, in_shape_),
            "network forward: input shape " + shape_str(x.shape) + " does not match " +
                shape_str(in_shape_));
    acts_.assign(layers_.size() + 1, Tensor());
    acts_[0] = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      acts_[i + 1] = layers_[i]->forward(acts_[i], param_slice(i));
    forward_done_ = true;
    return acts_.back();
  }

  // Accumulates parameter gradients into grads() and returns the gradient
  // with respect to the network input.
  Tensor backward(const Tensor& upstream) {
    require(forward_done_, "backward before forward");
    require(same_shape(upstream.shape, out_shape_), "backward: upstream shape mismatch");
    Tensor d = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      d = layers_[i]->backward(d, acts_[i], acts_[i + 1], param_slice(i), grad_slice(i));
      // Layers may flatten; the input gradient carries the input's shape.
      require(d.numel() == acts_[i].numel(), "backward: gradient size mismatch");
      d.shape = acts_[i].shape;
    }
    return d;
  }

  // Activation entering the final layer of the most recent forward pass.
  const Tensor& features() const {
    require(forward_done_ && !layers_.empty(), "features before forward");
    return acts_[layers_.size() - 1];
  }

  // Backward pass starting from an upstream gradient on the penultimate
  // activation, covering layers [0, L-1).
  Tensor backward_from_features(const Tensor& upstream) {
    require(forward_done_, "backward before forward");
    require(layers_.size() >= 2, "backward_from_features needs at least two layers");
    Tensor d = upstream;
    for (std::size_t i = layers_.size() - 1; i-- > 0;) {
      d = layers_[i]->backward(d, acts_[i], acts_[i + 1], param_slice(i), grad_slice(i));
      require(d.numel() == acts_[i].numel(), "backward: gradient size mismatch");
      d.shape = acts_[i].shape;
    }
    return d;
  }

  void renormalize_weight_norm() {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->renormalize(param_slice(i));
  }

  // Index of the scale parameter of the final weight-normalized dense layer,
  // or -1 if the head is not of that form.
  int final_scale_param_index() const {
    if (layers_.empty()) return -1;
    const auto* dense = dynamic_cast<const DenseLayer*>(layers_.back().get());
    if (dense == nullptr || !dense->weight_normalized() || dense->out_dim() != 1) return -1;
    return offsets_[layers_.size() - 1] + dense->scale_offset();
  }

  std::span<double> param_slice(std::size_t i) {
    return std::span<double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }
  std::span<const double> param_slice(std::size_t i) const {
    return std::span<const double>(params_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }
  std::span<double> grad_slice(std::size_t i) {
    return std::span<double>(grads_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }

 private:
  Shape in_shape_, out_shape_;
  std::vector<LayerPtr> layers_;
  std::vector<int> offsets_;
  std::vector<double> params_, grads_;
  std::vector<Tensor> acts_;
  bool forward_done_ = false;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  require(params.size() == grads.size(), "adam_step: size mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
    st.t = 0;
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grads[i];
    st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------------------
// Architecture builders
// ---------------------------------------------------------------------------

// Generator plan: latent -> dense -> 4 residual blocks at 16 channels with
// 4x4 kernels -> non-local channel reduction 16 -> 4 -> 1, everything weight
// normalized, orthogonally initialized, tanh activated. Output is a
// (1, frames, bins) patch in (-1, 1).
struct GenSpec {
  int latent_dim = 64;
  int patch_frames = 32;
  int patch_bins = 32;
};

// Discriminator plan: two residual blocks at 2 channels with 4x4 kernels,
// two 3x3 single-channel convolutions, then one linear logit. The logit is
// the critic value; a softmaxed real/fake head would sit on top of it but
// plays no part in the IPM objective.
struct DiscSpec {
  int patch_frames = 32;
  int patch_bins = 32;
};

inline Network build_generator(const GenSpec& spec, std::uint64_t seed) {
  require(spec.latent_dim >= 1, "latent dim must be positive");
  require(spec.patch_frames >= 4 && spec.patch_bins >= 4, "patch too small");
  std::vector<LayerPtr> layers;
  const int hw = spec.patch_frames * spec.patch_bins;
  layers.push_back(std::make_unique<DenseLayer>(spec.latent_dim, 16 * hw, true));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<ReshapeLayer>(Shape{16, spec.patch_frames, spec.patch_bins}));
  for (int i = 0; i < 4; ++i) {
    layers.push_back(std::make_unique<ResidualBlock>(16, 16, 4));
    layers.push_back(std::make_unique<TanhLayer>());
  }
  layers.push_back(std::make_unique<NonLocalBlock>(16, 4, 4));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<NonLocalBlock>(4, 1, 1));
  layers.push_back(std::make_unique<TanhLayer>());
  return Network({spec.latent_dim}, std::move(layers), seed);
}

inline Network build_discriminator(const DiscSpec& spec, std::uint64_t seed) {
  require(spec.patch_frames >= 4 && spec.patch_bins >= 4, "patch too small");
  std::vector<LayerPtr> layers;
  layers.push_back(std::make_unique<ResidualBlock>(1, 2, 4));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<ResidualBlock>(2, 2, 4));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<Conv2dLayer>(2, 1, 3, true));
  layers.push_back(std::make_unique<TanhLayer>());
  layers.push_back(std::make_unique<Conv2dLayer>(1, 1, 3, true));
  layers.push_back(std::make_unique<TanhLayer>());
  const int hw = spec.patch_frames * spec.patch_bins;
  layers.push_back(std::make_unique<ReshapeLayer>(Shape{hw}));
  layers.push_back(std::make_unique<DenseLayer>(hw, 1, true));
  return Network({1, spec.patch_frames, spec.patch_bins}, std::move(layers), seed);
}

// Auxiliary real/fake probability from the critic logit (softmax over the
// logit and an implicit zero reference).
inline double aux_real_fake_prob(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

enum class MlpHead { kLinear, kTanh, kSoftmax };

// Small dense stack with tanh between layers. The final dense layer is
// weight normalized when `wn_final` is set, which gives critics an explicit
// output-scale parameter.
inline Network build_mlp(const std::vector<int>& dims, std::uint64_t seed,
                         MlpHead head = MlpHead::kLinear, bool wn_final = false,
                         bool wn_hidden = false) {
  require(dims.size() >= 2, "mlp needs at least input and output dims");
  std::vector<LayerPtr> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const bool last = (i + 2 == dims.size());
    layers.push_back(
        std::make_unique<DenseLayer>(dims[i], dims[i + 1], last ? wn_final : wn_hidden));
    if (!last) layers.push_back(std::make_unique<TanhLayer>());
  }
  if (head == MlpHead::kTanh) layers.push_back(std::make_unique<TanhLayer>());
  if (head == MlpHead::kSoftmax) layers.push_back(std::make_unique<SoftmaxLayer>());
  return Network({dims.front()}, std::move(layers), seed);
}

}  // namespace rsdg
