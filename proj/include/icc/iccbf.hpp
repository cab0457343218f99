#pragma once

#include "icc/barrier.hpp"

#include <memory>

namespace icc {

/// inf / sup over the input box of lf + lg·u, in closed form.
double inf_over_box(double lf, const Eigen::VectorXd& lg, const InputBox& box);
double sup_over_box(double lf, const Eigen::VectorXd& lg, const InputBox& box);

/// A candidate input-constrained CBF: base barrier h, relative-degree bound r,
/// and the linear class-K coefficients (k_1..k_r). The recursion
///
///   b_0(x) = h(x)
///   b_i(x) = inf_{u in U}[ bdot_{i-1}(x,u) ] + k_i * b_{i-1}(x),  i < r
///
/// defines the inner safe set C* = {x | b_i(x) >= 0 for all i < r}, and the
/// constraint b_r(x,u) = bdot_{r-1}(x,u) + k_r * b_{r-1}(x) is affine in u.
struct IccbfSpec {
  std::shared_ptr<const DynamicsModel> model;
  CandidateBarrier base;
  int degree = 1;  // r >= 1
  ClassKParams params;

  IccbfSpec() = default;
  IccbfSpec(std::shared_ptr<const DynamicsModel> model_in,
            CandidateBarrier base_in, int degree_in, ClassKParams params_in);

  IccbfSpec with_params(const ClassKParams& p) const;
};

/// Values (b_0(x) .. b_{r-1}(x)).
struct BarrierStack {
  Eigen::VectorXd values;
};

/// b_level(x) for 0 <= level <= r-1.
double eval_level(const IccbfSpec& spec, int level, const StateVec& x);

BarrierStack eval_stack(const IccbfSpec& spec, const StateVec& x);

/// Gradient of b_level at x: the barrier's own gradient at level 0, central
/// finite differences (step 1e-5 * max(1, |x|_inf)) above that, where the
/// inf-over-box term makes b_level only piecewise smooth.
StateVec level_gradient(const IccbfSpec& spec, int level, const StateVec& x);

/// b_r(x, u) = offset + slope·u, exact for control-affine models.
struct ConstraintCoeffs {
  double offset = 0.0;
  Eigen::VectorXd slope;
};

ConstraintCoeffs constraint_coeffs(const IccbfSpec& spec, const StateVec& x);

/// b_r(x, u). Throws if u is outside the input box.
double eval_constraint(const IccbfSpec& spec, const StateVec& x,
                       const InputVec& u);

/// min_i b_i(x); >= 0 iff x lies in the inner safe set C*.
double inner_set_margin(const IccbfSpec& spec, const StateVec& x);

struct Feasibility {
  bool feasible = false;
  double margin = 0.0;  // sup_{u in U} b_r(x, u)
};

/// Whether K_cand(x) = {u in U | b_r(x,u) >= 0} is non-empty, with the
/// sup margin. A negative margin is the Remark's emptiness certificate.
Feasibility kcand_feasible(const IccbfSpec& spec, const StateVec& x);

}  // namespace icc
