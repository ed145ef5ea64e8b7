#include "patchforge/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace patchforge {

void axpy(double a, const Tensor& x, Tensor& y) {
  check(x.same_shape(y), "axpy: shape mismatch");
  const double* xp = x.data();
  double* yp = y.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) yp[i] += a * xp[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

}  // namespace patchforge
