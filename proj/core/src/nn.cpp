#include "patchforge/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace patchforge::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int64_t conv_out_size(int64_t in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// (C*k*k) x (oh*ow) patch matrix of one sample; zero where taps land in padding
void im2col(const double* x, int64_t c, int64_t h, int64_t w, int k, int s, int p, int64_t oh, int64_t ow,
            double* col) {
  for (int64_t ic = 0; ic < c; ++ic) {
    const double* plane = x + ic * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((ic * k + ky) * k + kx) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * s - p + ky;
          double* out = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + ow, 0.0);
            continue;
          }
          const double* in = plane + iy * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * s - p + kx;
            out[ox] = (ix >= 0 && ix < w) ? in[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int64_t c, int64_t h, int64_t w, int k, int s, int p, int64_t oh,
                int64_t ow, double* x) {
  for (int64_t ic = 0; ic < c; ++ic) {
    double* plane = x + ic * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + ((ic * k + ky) * k + kx) * oh * ow;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * s - p + ky;
          if (iy < 0 || iy >= h) continue;
          const double* in = row + oy * ow;
          double* out = plane + iy * w;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * s - p + kx;
            if (ix >= 0 && ix < w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void kaiming_fill(Tensor& weight, int64_t fan_in, Rng& rng) {
  check(fan_in > 0, "kaiming_fill: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < weight.numel(); ++i) weight[i] = rng.normal(0.0, stddev);
}

void Layer::zero_grad() {
  std::vector<NamedTensor> g;
  grads(g);
  for (auto& nt : g) nt.tensor->fill(0.0);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
               bool with_bias, Rng& init_rng)
    : Layer(std::move(name)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      with_bias_(with_bias) {
  check(in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1 && padding >= 0,
        strfmt("conv '%s': invalid geometry", name_.c_str()));
  weight_ = Tensor({out_channels_, in_channels_, kernel_, kernel_});
  grad_weight_ = Tensor({out_channels_, in_channels_, kernel_, kernel_});
  kaiming_fill(weight_, static_cast<int64_t>(in_channels_) * kernel_ * kernel_, init_rng);
  if (with_bias_) {
    bias_ = Tensor({out_channels_});
    grad_bias_ = Tensor({out_channels_});
  }
}

Tensor Conv2d::forward(const Tensor& x, bool) {
  check(x.rank() == 4, strfmt("conv '%s': input must be N,C,H,W", name_.c_str()));
  check(x.dim(1) == in_channels_, strfmt("conv '%s': expected %d input channels, got %lld", name_.c_str(),
                                         in_channels_, static_cast<long long>(x.dim(1))));
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t oh = conv_out_size(h, kernel_, stride_, padding_);
  const int64_t ow = conv_out_size(w, kernel_, stride_, padding_);
  check(oh >= 1 && ow >= 1, strfmt("conv '%s': input %lldx%lld collapses", name_.c_str(),
                                   static_cast<long long>(h), static_cast<long long>(w)));
  input_ = x;
  Tensor y({n, out_channels_, oh, ow});
  const int64_t krows = static_cast<int64_t>(in_channels_) * kernel_ * kernel_;
  std::vector<double> col(static_cast<size_t>(krows * oh * ow));
  ConstMapMat wm(weight_.data(), out_channels_, krows);
  for (int64_t s = 0; s < n; ++s) {
    im2col(x.data() + s * in_channels_ * h * w, in_channels_, h, w, kernel_, stride_, padding_, oh, ow,
           col.data());
    ConstMapMat cm(col.data(), krows, oh * ow);
    MapMat ym(y.data() + s * out_channels_ * oh * ow, out_channels_, oh * ow);
    ym.noalias() = wm * cm;
    if (with_bias_)
      for (int oc = 0; oc < out_channels_; ++oc) ym.row(oc).array() += bias_[oc];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  check(x.defined(), strfmt("conv '%s': backward before forward", name_.c_str()));
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  const int64_t krows = static_cast<int64_t>(in_channels_) * kernel_ * kernel_;

  Tensor gx({n, in_channels_, h, w});
  std::vector<double> col(static_cast<size_t>(krows * oh * ow));
  std::vector<double> gcol(static_cast<size_t>(krows * oh * ow));
  ConstMapMat wm(weight_.data(), out_channels_, krows);
  MapMat gwm(grad_weight_.data(), out_channels_, krows);
  for (int64_t s = 0; s < n; ++s) {
    ConstMapMat gym(grad_out.data() + s * out_channels_ * oh * ow, out_channels_, oh * ow);
    im2col(x.data() + s * in_channels_ * h * w, in_channels_, h, w, kernel_, stride_, padding_, oh, ow,
           col.data());
    ConstMapMat cm(col.data(), krows, oh * ow);
    gwm.noalias() += gym * cm.transpose();
    if (with_bias_)
      for (int oc = 0; oc < out_channels_; ++oc) grad_bias_[oc] += gym.row(oc).sum();
    MapMat gcm(gcol.data(), krows, oh * ow);
    gcm.noalias() = wm.transpose() * gym;
    col2im_add(gcol.data(), in_channels_, h, w, kernel_, stride_, padding_, oh, ow,
               gx.data() + s * in_channels_ * h * w);
  }
  return gx;
}

void Conv2d::params(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &weight_});
  if (with_bias_) out.push_back({name_ + ".bias", &bias_});
}

void Conv2d::grads(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &grad_weight_});
  if (with_bias_) out.push_back({name_ + ".bias", &grad_bias_});
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, bool) {
  Tensor y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
  output_ = y;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  check(output_.same_shape(grad_out), strfmt("relu '%s': gradient shape mismatch", name_.c_str()));
  Tensor gx = grad_out;
  for (int64_t i = 0; i < gx.numel(); ++i)
    if (output_[i] <= 0.0) gx[i] = 0.0;
  return gx;
}

// ---------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(std::string name, int kernel, int stride, int padding)
    : Layer(std::move(name)), kernel_(kernel), stride_(stride), padding_(padding) {
  check(kernel >= 1 && stride >= 1 && padding >= 0, strfmt("pool '%s': invalid geometry", name_.c_str()));
}

Tensor MaxPool2d::forward(const Tensor& x, bool) {
  check(x.rank() == 4, strfmt("pool '%s': input must be N,C,H,W", name_.c_str()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = conv_out_size(h, kernel_, stride_, padding_);
  const int64_t ow = conv_out_size(w, kernel_, stride_, padding_);
  check(oh >= 1 && ow >= 1, strfmt("pool '%s': input collapses", name_.c_str()));
  in_shape_ = x.shape();
  Tensor y({n, c, oh, ow});
  argmax_.assign(static_cast<size_t>(y.numel()), -1);
  int64_t oi = 0;
  for (int64_t s = 0; s < n; ++s)
    for (int64_t ic = 0; ic < c; ++ic) {
      const double* plane = x.data() + (s * c + ic) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox, ++oi) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int64_t iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int64_t ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= w) continue;
              const double v = plane[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          check(best_idx >= 0, strfmt("pool '%s': window fully in padding", name_.c_str()));
          y[oi] = best;
          argmax_[static_cast<size_t>(oi)] = (s * c + ic) * h * w + best_idx;
        }
    }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  check(static_cast<size_t>(grad_out.numel()) == argmax_.size(),
        strfmt("pool '%s': gradient shape mismatch", name_.c_str()));
  Tensor gx(in_shape_);
  for (int64_t i = 0; i < grad_out.numel(); ++i) gx[argmax_[static_cast<size_t>(i)]] += grad_out[i];
  return gx;
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::string name, int channels, double momentum, double eps)
    : Layer(std::move(name)), channels_(channels), momentum_(momentum), eps_(eps) {
  gamma_ = Tensor::full({channels_}, 1.0);
  beta_ = Tensor({channels_});
  grad_gamma_ = Tensor({channels_});
  grad_beta_ = Tensor({channels_});
  running_mean_ = Tensor({channels_});
  running_var_ = Tensor::full({channels_}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  check(x.rank() == 4 && x.dim(1) == channels_, strfmt("bn '%s': bad input shape", name_.c_str()));
  const int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t plane = h * w;
  const int64_t m = n * plane;
  used_batch_stats_ = training && !frozen_;
  Tensor y(x.shape());
  inv_std_.assign(static_cast<size_t>(channels_), 0.0);
  if (used_batch_stats_) {
    xhat_ = Tensor(x.shape());
    for (int c = 0; c < channels_; ++c) {
      double sum = 0, sumsq = 0;
      for (int64_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += p[i] * p[i];
        }
      }
      const double mean = sum / static_cast<double>(m);
      const double var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<size_t>(c)] = inv;
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var;
      for (int64_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * channels_ + c) * plane;
        double* xh = xhat_.data() + (s * channels_ + c) * plane;
        double* yp = y.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - mean) * inv;
          yp[i] = gamma_[c] * xh[i] + beta_[c];
        }
      }
    }
  } else {
    xhat_ = Tensor(x.shape());
    for (int c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(running_var_[c] + eps_);
      inv_std_[static_cast<size_t>(c)] = inv;
      const double mean = running_mean_[c];
      for (int64_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * channels_ + c) * plane;
        double* xh = xhat_.data() + (s * channels_ + c) * plane;
        double* yp = y.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - mean) * inv;
          yp[i] = gamma_[c] * xh[i] + beta_[c];
        }
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const int64_t n = grad_out.dim(0), h = grad_out.dim(2), w = grad_out.dim(3);
  const int64_t plane = h * w;
  const int64_t m = n * plane;
  Tensor gx(grad_out.shape());
  if (used_batch_stats_) {
    for (int c = 0; c < channels_; ++c) {
      double sum_gy = 0, sum_gy_xhat = 0;
      for (int64_t s = 0; s < n; ++s) {
        const double* gy = grad_out.data() + (s * channels_ + c) * plane;
        const double* xh = xhat_.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * xh[i];
        }
      }
      grad_beta_[c] += sum_gy;
      grad_gamma_[c] += sum_gy_xhat;
      const double inv = inv_std_[static_cast<size_t>(c)];
      const double scale = gamma_[c] * inv / static_cast<double>(m);
      for (int64_t s = 0; s < n; ++s) {
        const double* gy = grad_out.data() + (s * channels_ + c) * plane;
        const double* xh = xhat_.data() + (s * channels_ + c) * plane;
        double* g = gx.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i)
          g[i] = scale * (static_cast<double>(m) * gy[i] - sum_gy - xh[i] * sum_gy_xhat);
      }
    }
  } else {
    // running stats are constants here, so x only enters through xhat scaling
    for (int c = 0; c < channels_; ++c) {
      const double inv = inv_std_[static_cast<size_t>(c)];
      double sum_gy = 0, sum_gy_xhat = 0;
      for (int64_t s = 0; s < n; ++s) {
        const double* gy = grad_out.data() + (s * channels_ + c) * plane;
        const double* xh = xhat_.data() + (s * channels_ + c) * plane;
        double* g = gx.data() + (s * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          g[i] = gy[i] * gamma_[c] * inv;
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * xh[i];
        }
      }
      grad_beta_[c] += sum_gy;
      grad_gamma_[c] += sum_gy_xhat;
    }
  }
  return gx;
}

void BatchNorm2d::params(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".gamma", &gamma_});
  out.push_back({name_ + ".beta", &beta_});
}

void BatchNorm2d::grads(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".gamma", &grad_gamma_});
  out.push_back({name_ + ".beta", &grad_beta_});
}

void BatchNorm2d::state(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".running_mean", &running_mean_});
  out.push_back({name_ + ".running_var", &running_var_});
}

// ---------------------------------------------------------------- BilinearUpsample

BilinearUpsample::BilinearUpsample(std::string name, int factor) : Layer(std::move(name)), factor_(factor) {
  check(factor >= 1, strfmt("upsample '%s': factor must be >= 1", name_.c_str()));
}

std::vector<BilinearUpsample::Tap> BilinearUpsample::make_taps(int64_t in_size, int64_t out_size) {
  std::vector<Tap> taps(static_cast<size_t>(out_size));
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (int64_t o = 0; o < out_size; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    double w1 = src - static_cast<double>(i0);
    int64_t i1 = std::clamp<int64_t>(i0 + 1, 0, in_size - 1);
    i0 = std::clamp<int64_t>(i0, 0, in_size - 1);
    taps[static_cast<size_t>(o)] = {i0, i1, w1};
  }
  return taps;
}

Tensor BilinearUpsample::forward(const Tensor& x, bool) {
  check(x.rank() == 4, strfmt("upsample '%s': input must be N,C,H,W", name_.c_str()));
  const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor_, ow = w * factor_;
  in_shape_ = x.shape();
  taps_y_ = make_taps(h, oh);
  taps_x_ = make_taps(w, ow);
  Tensor y({n, c, oh, ow});
  for (int64_t s = 0; s < n; ++s)
    for (int64_t ic = 0; ic < c; ++ic) {
      const double* plane = x.data() + (s * c + ic) * h * w;
      double* out = y.data() + (s * c + ic) * oh * ow;
      for (int64_t oy = 0; oy < oh; ++oy) {
        const Tap& ty = taps_y_[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < ow; ++ox) {
          const Tap& tx = taps_x_[static_cast<size_t>(ox)];
          const double top = (1.0 - tx.w1) * plane[ty.i0 * w + tx.i0] + tx.w1 * plane[ty.i0 * w + tx.i1];
          const double bot = (1.0 - tx.w1) * plane[ty.i1 * w + tx.i0] + tx.w1 * plane[ty.i1 * w + tx.i1];
          out[oy * ow + ox] = (1.0 - ty.w1) * top + ty.w1 * bot;
        }
      }
    }
  return y;
}

Tensor BilinearUpsample::backward(const Tensor& grad_out) {
  const int64_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  const int64_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  Tensor gx(in_shape_);
  for (int64_t s = 0; s < n; ++s)
    for (int64_t ic = 0; ic < c; ++ic) {
      const double* gy = grad_out.data() + (s * c + ic) * oh * ow;
      double* g = gx.data() + (s * c + ic) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy) {
        const Tap& ty = taps_y_[static_cast<size_t>(oy)];
        for (int64_t ox = 0; ox < ow; ++ox) {
          const Tap& tx = taps_x_[static_cast<size_t>(ox)];
          const double v = gy[oy * ow + ox];
          g[ty.i0 * w + tx.i0] += (1.0 - ty.w1) * (1.0 - tx.w1) * v;
          g[ty.i0 * w + tx.i1] += (1.0 - ty.w1) * tx.w1 * v;
          g[ty.i1 * w + tx.i0] += ty.w1 * (1.0 - tx.w1) * v;
          g[ty.i1 * w + tx.i1] += ty.w1 * tx.w1 * v;
        }
      }
    }
  return gx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::string name, int in_features, int out_features, Rng& init_rng)
    : Layer(std::move(name)), in_features_(in_features), out_features_(out_features) {
  check(in_features >= 1 && out_features >= 1, strfmt("linear '%s': invalid size", name_.c_str()));
  weight_ = Tensor({in_features_, out_features_});
  grad_weight_ = Tensor({in_features_, out_features_});
  bias_ = Tensor({out_features_});
  grad_bias_ = Tensor({out_features_});
  kaiming_fill(weight_, in_features_, init_rng);
}

Tensor Linear::forward(const Tensor& x, bool) {
  check(x.rank() == 2 && x.dim(1) == in_features_, strfmt("linear '%s': bad input shape", name_.c_str()));
  input_ = x;
  const int64_t rows = x.dim(0);
  Tensor y({rows, out_features_});
  ConstMapMat xm(x.data(), rows, in_features_);
  ConstMapMat wm(weight_.data(), in_features_, out_features_);
  MapMat ym(y.data(), rows, out_features_);
  ym.noalias() = xm * wm;
  for (int64_t r = 0; r < rows; ++r)
    for (int o = 0; o < out_features_; ++o) y.at(r, o) += bias_[o];
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  check(input_.defined(), strfmt("linear '%s': backward before forward", name_.c_str()));
  const int64_t rows = input_.dim(0);
  Tensor gx({rows, in_features_});
  ConstMapMat xm(input_.data(), rows, in_features_);
  ConstMapMat gym(grad_out.data(), rows, out_features_);
  ConstMapMat wm(weight_.data(), in_features_, out_features_);
  MapMat gxm(gx.data(), rows, in_features_);
  MapMat gwm(grad_weight_.data(), in_features_, out_features_);
  gwm.noalias() += xm.transpose() * gym;
  gxm.noalias() = gym * wm.transpose();
  for (int64_t r = 0; r < rows; ++r)
    for (int o = 0; o < out_features_; ++o) grad_bias_[o] += grad_out.at(r, o);
  return gx;
}

void Linear::params(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &weight_});
  out.push_back({name_ + ".bias", &bias_});
}

void Linear::grads(std::vector<NamedTensor>& out) {
  out.push_back({name_ + ".weight", &grad_weight_});
  out.push_back({name_ + ".bias", &grad_bias_});
}

// ---------------------------------------------------------------- Sequential

void Sequential::add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (auto& l : layers_) h = l->forward(h, training);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

void Sequential::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

std::vector<NamedTensor> Sequential::params() {
  std::vector<NamedTensor> out;
  for (auto& l : layers_) l->params(out);
  return out;
}

std::vector<NamedTensor> Sequential::grads() {
  std::vector<NamedTensor> out;
  for (auto& l : layers_) l->grads(out);
  return out;
}

std::vector<NamedTensor> Sequential::state() {
  std::vector<NamedTensor> out;
  for (auto& l : layers_) l->state(out);
  return out;
}

}  // namespace patchforge::nn
