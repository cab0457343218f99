#pragma once

#include "icc/dynamics.hpp"

#include <functional>
#include <optional>
#include <string>

namespace icc {

/// Candidate CBF: a scalar constraint function h with C = {x | h(x) >= 0}.
/// If no analytic gradient is supplied, a central finite difference of
/// `value` is used (step 1e-6 * max(1, |x|_inf)).
class CandidateBarrier {
 public:
  std::string name;
  std::function<double(const StateVec&)> value;
  std::optional<std::function<StateVec(const StateVec&)>> analytic_gradient;

  double operator()(const StateVec& x) const { return value(x); }
  StateVec gradient(const StateVec& x) const;
};

/// Linear class-K parameter family: alpha_i(s) = k_i * s with k_i > 0.
/// Strictly positive coefficients make each alpha_i extended class-K-infinity.
struct ClassKParams {
  Eigen::VectorXd coeffs;  // (k_1 .. k_r)

  ClassKParams() = default;
  explicit ClassKParams(Eigen::VectorXd c);
  ClassKParams(std::initializer_list<double> c);

  int degree() const { return static_cast<int>(coeffs.size()); }
  double operator[](int i) const { return coeffs[i]; }
  bool operator==(const ClassKParams& other) const;
};

/// alpha(s) = k*s for k > 0; throws on k <= 0.
double class_k_eval(double k, double s);

struct LieDerivatives {
  double lf = 0.0;        // L_f b(x)
  Eigen::VectorXd lg;     // L_g b(x), length m
};

LieDerivatives lie_derivatives(const DynamicsModel& model,
                               const CandidateBarrier& b, const StateVec& x);

/// sup_{u in U} [L_f h + L_g h u] >= -k h(x), evaluated in closed form.
/// Requires h(x) >= 0 (x in C); throws otherwise.
bool cbf_condition_holds(const DynamicsModel& model, const CandidateBarrier& h,
                         double k, const StateVec& x);

/// Membership of u in the admissible set {u in U | L_f h + L_g h u >= -k h}.
bool kcbf_contains(const DynamicsModel& model, const CandidateBarrier& h,
                   double k, const StateVec& x, const InputVec& u);

}  // namespace icc
