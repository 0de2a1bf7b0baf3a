#include "conml/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace conml {
namespace {

constexpr double kRecheck = 1e-6;

}  // namespace

double evaluate(const ScalarFn& f, const ParamVector& theta) {
  // Variables, not constants: f may differentiate internally (MAML's inner step).
  Tape tape;
  const auto vars = bind_variables(tape, theta);
  return f(tape, vars).item();
}

ParamVector analytic_gradient(const ScalarFn& f, const ParamVector& theta) {
  Tape tape;
  const auto vars = bind_variables(tape, theta);
  const Var out = f(tape, vars);
  const auto grads = tape.gradient(out, vars);
  ParamVector g;
  for (std::size_t i = 0; i < theta.size(); ++i) g.add(theta.name(i), grads[i]);
  return g;
}

GradCheckResult compare_with_finite_differences(const ScalarFn& f, const ParamVector& theta,
                                                const ParamVector& analytic, double eps) {
  if (!theta.same_layout(analytic)) {
    throw std::invalid_argument("gradcheck: analytic gradient layout differs from theta");
  }
  GradCheckResult result;
  ParamVector probe = theta;
  for (std::size_t e = 0; e < theta.size(); ++e) {
    for (Index k = 0; k < theta[e].numel(); ++k) {
      const double original = theta[e][k];
      auto central = [&](double h) {
        probe[e][k] = original + h;
        const double up = evaluate(f, probe);
        probe[e][k] = original - h;
        const double down = evaluate(f, probe);
        probe[e][k] = original;
        return (up - down) / (2.0 * h);
      };
      const double a = analytic[e][k];
      double h = eps;
      double numeric = central(h);
      for (int shrink = 0; shrink < 3; ++shrink) {
        if (std::abs(a - numeric) <= kRecheck * std::max(1.0, std::abs(numeric))) break;
        if (std::abs(central(h / 2.0) - numeric) <= 0.1 * std::abs(a - numeric)) break;
        h /= 10.0;
        numeric = central(h);
        ++result.kink_retries;
      }
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++result.coords_checked;
      if (!(err <= result.max_rel_error)) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        result.worst_entry = theta.name(e);
        result.worst_coord = k;
      }
    }
  }
  return result;
}

double finite_diff_check(const ScalarFn& f, const ParamVector& theta, double eps) {
  return compare_with_finite_differences(f, theta, analytic_gradient(f, theta), eps).max_rel_error;
}

}  // namespace conml
