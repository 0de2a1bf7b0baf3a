#pragma once

#include "conml/autodiff/param_vector.hpp"
#include "conml/autodiff/tape.hpp"

#include <functional>
#include <span>
#include <string>

namespace conml {

/// A scalar function of a parameter set, written against a tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;
  Index worst_coord = -1;
  Index coords_checked = 0;
  /// Coordinates whose step was shrunk because the difference quotient was
  /// unstable across step sizes (a ReLU kink inside the interval).
  Index kink_retries = 0;
};

double evaluate(const ScalarFn& f, const ParamVector& theta);
ParamVector analytic_gradient(const ScalarFn& f, const ParamVector& theta);

/// Compares `analytic` against central differences of `f` at `theta`.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|). A
/// mismatching coordinate is re-probed at half the step; if the two quotients
/// disagree by more than a tenth of the mismatch the step is shrunk tenfold, at
/// most three times.
GradCheckResult compare_with_finite_differences(const ScalarFn& f, const ParamVector& theta,
                                                const ParamVector& analytic, double eps = 1e-5);

/// Max relative error of the tape gradient of `f` against central differences.
double finite_diff_check(const ScalarFn& f, const ParamVector& theta, double eps = 1e-5);

}  // namespace conml
