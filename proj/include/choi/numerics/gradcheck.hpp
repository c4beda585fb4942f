#pragma once

#include "choi/numerics/params.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace choi {

struct GradCheckReport {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst_entry;
  std::size_t checked = 0;
  double tolerance = 1e-4;
  bool passed() const { return checked > 0 && max_rel_error <= tolerance; }
};

/// Denominator floor for the relative error, so entries whose true gradient is
/// ~0 are judged on absolute error instead of amplifying truncation noise.
constexpr double kGradCheckFloor = 1e-2;
constexpr double kGradCheckStep = 1e-3;

inline double grad_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
}

/// A scalar-valued map of the blocks in `inputs`. `analytic` must fill every
/// block's grad with d value / d block (the harness zeroes grads first).
struct ScalarMap {
  std::function<double()> value;
  std::function<void()> analytic;
};

/// Central differences over every entry of every block.
inline GradCheckReport finite_diff_check(const std::string& name, const ScalarMap& op, ParamStore& inputs,
                                         double tol = 1e-4, double step = kGradCheckStep) {
  GradCheckReport rep;
  rep.name = name;
  rep.tolerance = tol;
  inputs.zero_grad();
  op.analytic();
  for (const auto& e : inputs.entries()) {
    Tensor& v = e.param->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + step;
      const double fp = op.value();
      v[i] = orig - step;
      const double fm = op.value();
      v[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = grad_rel_error(e.param->grad[i], numeric);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst_entry.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        rep.worst_entry = e.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  inputs.zero_grad();
  return rep;
}

/// Fixed random projection used to reduce a vector-valued op to a scalar.
inline Vector random_projection(std::size_t n, Rng& rng) {
  Vector r(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = rng.uniform(-1.0, 1.0);
  return r;
}

}  // namespace choi
