#include "icc/iccbf.hpp"

#include <cmath>
#include <stdexcept>

namespace icc {

double inf_over_box(double lf, const Eigen::VectorXd& lg, const InputBox& box) {
  return lf + box.support_min(lg);
}

double sup_over_box(double lf, const Eigen::VectorXd& lg, const InputBox& box) {
  return lf + box.support_max(lg);
}

IccbfSpec::IccbfSpec(std::shared_ptr<const DynamicsModel> model_in,
                     CandidateBarrier base_in, int degree_in,
                     ClassKParams params_in)
    : model(std::move(model_in)),
      base(std::move(base_in)),
      degree(degree_in),
      params(std::move(params_in)) {
  if (!model) {
    throw std::invalid_argument("IccbfSpec: null model");
  }
  if (degree < 1) {
    throw std::invalid_argument("IccbfSpec: degree must be >= 1");
  }
  if (params.degree() != degree) {
    throw std::invalid_argument(
        "IccbfSpec: " + std::to_string(params.degree()) +
        " class-K coefficients for degree " + std::to_string(degree));
  }
}

IccbfSpec IccbfSpec::with_params(const ClassKParams& p) const {
  return IccbfSpec(model, base, degree, p);
}

namespace {

// L_f b_level and L_g b_level from the level's gradient.
LieDerivatives level_lie(const IccbfSpec& spec, int level, const StateVec& x) {
  const StateVec grad = level_gradient(spec, level, x);
  if (!grad.allFinite()) {
    throw std::runtime_error("iccbf: non-finite gradient of b_" +
                             std::to_string(level));
  }
  LieDerivatives d;
  d.lf = grad.dot(spec.model->drift(x));
  d.lg = spec.model->actuation(x).transpose() * grad;
  return d;
}

}  // namespace

double eval_level(const IccbfSpec& spec, int level, const StateVec& x) {
  if (level < 0 || level >= spec.degree) {
    throw std::invalid_argument("eval_level: level out of range");
  }
  if (level == 0) {
    const double v = spec.base(x);
    if (!std::isfinite(v)) {
      throw std::runtime_error("iccbf: non-finite b_0 value");
    }
    return v;
  }
  const double prev = eval_level(spec, level - 1, x);
  const LieDerivatives d = level_lie(spec, level - 1, x);
  const double v = inf_over_box(d.lf, d.lg, spec.model->input_box()) +
                   class_k_eval(spec.params[level - 1], prev);
  if (!std::isfinite(v)) {
    throw std::runtime_error("iccbf: non-finite b_" + std::to_string(level));
  }
  return v;
}

StateVec level_gradient(const IccbfSpec& spec, int level, const StateVec& x) {
  if (level == 0) {
    return spec.base.gradient(x);
  }
  const double h = 1e-5 * std::max(1.0, x.lpNorm<Eigen::Infinity>());
  StateVec grad(x.size());
  StateVec probe = x;
  for (int i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double hi = eval_level(spec, level, probe);
    probe[i] = x[i] - h;
    const double lo = eval_level(spec, level, probe);
    probe[i] = x[i];
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

BarrierStack eval_stack(const IccbfSpec& spec, const StateVec& x) {
  BarrierStack stack;
  stack.values.resize(spec.degree);
  for (int i = 0; i < spec.degree; ++i) {
    stack.values[i] = eval_level(spec, i, x);
  }
  return stack;
}

ConstraintCoeffs constraint_coeffs(const IccbfSpec& spec, const StateVec& x) {
  const int r = spec.degree;
  const double b_top = eval_level(spec, r - 1, x);
  const LieDerivatives d = level_lie(spec, r - 1, x);
  ConstraintCoeffs cc;
  cc.offset = d.lf + class_k_eval(spec.params[r - 1], b_top);
  cc.slope = d.lg;
  return cc;
}

double eval_constraint(const IccbfSpec& spec, const StateVec& x,
                       const InputVec& u) {
  if (!spec.model->input_box().contains(u)) {
    throw std::invalid_argument("eval_constraint: input outside the box");
  }
  const ConstraintCoeffs cc = constraint_coeffs(spec, x);
  return cc.offset + cc.slope.dot(u);
}

double inner_set_margin(const IccbfSpec& spec, const StateVec& x) {
  return eval_stack(spec, x).values.minCoeff();
}

Feasibility kcand_feasible(const IccbfSpec& spec, const StateVec& x) {
  const ConstraintCoeffs cc = constraint_coeffs(spec, x);
  Feasibility f;
  f.margin = sup_over_box(cc.offset, cc.slope, spec.model->input_box());
  f.feasible = f.margin >= 0.0;
  return f;
}

}  // namespace icc
