#pragma once

#include <memory>
#include <string>
#include <vector>

#include "patchforge/rng.hpp"
#include "patchforge/tensor.hpp"

namespace patchforge::nn {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

// A differentiable layer. forward caches whatever backward needs; backward
// returns the gradient w.r.t. the input and accumulates parameter gradients.
// Frozen layers still propagate gradients but behave as in evaluation mode
// (relevant for batch normalization).
class Layer {
public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;

  virtual void params(std::vector<NamedTensor>& out) { (void)out; }
  virtual void grads(std::vector<NamedTensor>& out) { (void)out; }
  virtual void state(std::vector<NamedTensor>& out) { (void)out; }

  void zero_grad();

  const std::string& name() const { return name_; }
  void set_frozen(bool f) { frozen_ = f; }
  bool frozen() const { return frozen_; }

protected:
  std::string name_;
  bool frozen_ = false;
};

class Conv2d : public Layer {
public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding,
         bool with_bias, Rng& init_rng);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<NamedTensor>& out) override;
  void grads(std::vector<NamedTensor>& out) override;

  int out_channels() const { return out_channels_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

private:
  int in_channels_, out_channels_, kernel_, stride_, padding_;
  bool with_bias_;
  Tensor weight_, bias_;        // (out, in, k, k), (out)
  Tensor grad_weight_, grad_bias_;
  Tensor input_;                // cached for backward
};

class ReLU : public Layer {
public:
  explicit ReLU(std::string name) : Layer(std::move(name)) {}
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  Tensor output_;
};

class MaxPool2d : public Layer {
public:
  MaxPool2d(std::string name, int kernel, int stride, int padding);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  int kernel_, stride_, padding_;
  std::vector<int64_t> argmax_;  // flat input index per output element
  std::vector<int64_t> in_shape_;
};

// Per-channel batch normalization over (N, H, W). Training mode uses batch
// statistics and updates the running averages; evaluation or frozen mode
// uses the stored running statistics and leaves them untouched.
class BatchNorm2d : public Layer {
public:
  BatchNorm2d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<NamedTensor>& out) override;
  void grads(std::vector<NamedTensor>& out) override;
  void state(std::vector<NamedTensor>& out) override;

private:
  int channels_;
  double momentum_, eps_;
  Tensor gamma_, beta_, grad_gamma_, grad_beta_;
  Tensor running_mean_, running_var_;
  // backward caches
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool used_batch_stats_ = false;
};

// Bilinear upsampling by an integer factor (half-pixel-aligned sampling).
class BilinearUpsample : public Layer {
public:
  BilinearUpsample(std::string name, int factor);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;

private:
  struct Tap {
    int64_t i0, i1;
    double w1;  // weight of i1; i0 gets 1-w1
  };
  static std::vector<Tap> make_taps(int64_t in_size, int64_t out_size);
  int factor_;
  std::vector<int64_t> in_shape_;
  std::vector<Tap> taps_y_, taps_x_;
};

// Fully connected layer on (rows, in) matrices.
class Linear : public Layer {
public:
  Linear(std::string name, int in_features, int out_features, Rng& init_rng);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void params(std::vector<NamedTensor>& out) override;
  void grads(std::vector<NamedTensor>& out) override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  int in_features() const { return in_features_; }
  int out_features() const { return out_features_; }

private:
  int in_features_, out_features_;
  Tensor weight_, bias_;  // (in, out), (out)
  Tensor grad_weight_, grad_bias_;
  Tensor input_;
};

// Ordered layer stack with shared bookkeeping.
class Sequential {
public:
  void add(std::unique_ptr<Layer> layer);
  Tensor forward(const Tensor& x, bool training);
  Tensor backward(const Tensor& grad_out);
  void zero_grad();

  size_t size() const { return layers_.size(); }
  Layer& layer(size_t i) { return *layers_.at(i); }

  std::vector<NamedTensor> params();
  std::vector<NamedTensor> grads();
  std::vector<NamedTensor> state();

private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Kaiming fan-in initialization used across the project.
void kaiming_fill(Tensor& weight, int64_t fan_in, Rng& rng);

}  // namespace patchforge::nn
