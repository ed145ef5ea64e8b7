#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "patchforge/nn.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/tensor.hpp"

namespace testutil {

// fresh scratch directory under the system temp dir, removed on destruction
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    dir_ = std::filesystem::temp_directory_path() /
           ("patchforge-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path operator/(const std::string& p) const { return dir_ / p; }

private:
  std::filesystem::path dir_;
};

inline void fill_random(patchforge::Tensor& t, patchforge::Rng& rng, double scale = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
}

// Central-finite-difference check of analytic parameter gradients. `loss`
// must re-run the full forward pass from current parameter values; `params`
// and `grads` are parallel. Checks up to `probes` randomly chosen entries
// per tensor and returns the worst relative error.
inline double gradcheck_params(const std::function<double()>& loss,
                               const std::vector<patchforge::nn::NamedTensor>& params,
                               const std::vector<patchforge::nn::NamedTensor>& grads,
                               patchforge::Rng& rng, int probes = 8, double h = 1e-5) {
  double worst = 0.0;
  for (size_t t = 0; t < params.size(); ++t) {
    patchforge::Tensor& p = *params[t].tensor;
    const patchforge::Tensor& g = *grads[t].tensor;
    const int64_t n = p.numel();
    const int count = static_cast<int>(std::min<int64_t>(probes, n));
    for (int k = 0; k < count; ++k) {
      const int64_t i = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
      const double saved = p[i];
      p[i] = saved + h;
      const double up = loss();
      p[i] = saved - h;
      const double down = loss();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = g[i];
      const double rel = std::fabs(numeric - analytic) /
                         std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// same, for the gradient w.r.t. an input tensor
inline double gradcheck_input(const std::function<double()>& loss, patchforge::Tensor& input,
                              const patchforge::Tensor& grad_input, patchforge::Rng& rng, int probes = 12,
                              double h = 1e-5) {
  double worst = 0.0;
  const int64_t n = input.numel();
  const int count = static_cast<int>(std::min<int64_t>(probes, n));
  for (int k = 0; k < count; ++k) {
    const int64_t i = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n)));
    const double saved = input[i];
    input[i] = saved + h;
    const double up = loss();
    input[i] = saved - h;
    const double down = loss();
    input[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grad_input[i];
    const double rel =
        std::fabs(numeric - analytic) / std::max({std::fabs(numeric), std::fabs(analytic), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace testutil
