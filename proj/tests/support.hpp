#pragma once

#include "autoadapt/rng.hpp"
#include "autoadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace testing_support {

using autoadapt::Rng;
using autoadapt::Tensor;

inline Tensor random_tensor(Rng &rng, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                            double lo = -1.0, double hi = 1.0) {
  Tensor t(n, c, h, w);
  for (double &v : t.data())
    v = rng.uniform(lo, hi);
  return t;
}

inline bool fd_close(double analytic, double numeric, double rel = 1e-4, double abs_floor = 1e-7) {
  const double diff = std::abs(analytic - numeric);
  return diff <= std::max(abs_floor, rel * std::max(std::abs(analytic), std::abs(numeric)));
}

/// Central difference of loss() with respect to x, restoring x afterwards.
inline double central_difference(double &x, const std::function<double()> &loss, double h = 1e-5) {
  const double x0 = x;
  x = x0 + h;
  const double up = loss();
  x = x0 - h;
  const double down = loss();
  x = x0;
  return (up - down) / (2.0 * h);
}

struct FdReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::string first_failure;
};

/// Compares analytic[i] against a central difference for every entry of `values`.
inline void fd_check(std::span<double> values, std::span<const double> analytic,
                     const std::function<double()> &loss, FdReport &rep, const std::string &what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double num = central_difference(values[i], loss);
    ++rep.checked;
    if (!fd_close(analytic[i], num)) {
      if (rep.failed++ == 0)
        rep.first_failure = what + "[" + std::to_string(i) + "]: analytic " + std::to_string(analytic[i]) +
                            " numeric " + std::to_string(num);
    }
  }
}

inline double dot(const Tensor &a, const Tensor &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    s += a[i] * b[i];
  return s;
}

inline double rel_l2(const Tensor &a, const Tensor &b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

inline double max_abs_diff(const Tensor &a, const Tensor &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

} // namespace testing_support
