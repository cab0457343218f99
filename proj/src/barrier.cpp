#include "icc/barrier.hpp"

#include <cmath>
#include <stdexcept>

namespace icc {

StateVec CandidateBarrier::gradient(const StateVec& x) const {
  if (analytic_gradient) {
    return (*analytic_gradient)(x);
  }
  const double h = 1e-6 * std::max(1.0, x.lpNorm<Eigen::Infinity>());
  StateVec grad(x.size());
  StateVec probe = x;
  for (int i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double hi = value(probe);
    probe[i] = x[i] - h;
    const double lo = value(probe);
    probe[i] = x[i];
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

ClassKParams::ClassKParams(Eigen::VectorXd c) : coeffs(std::move(c)) {
  for (int i = 0; i < coeffs.size(); ++i) {
    if (!(coeffs[i] > 0.0) || !std::isfinite(coeffs[i])) {
      throw std::invalid_argument(
          "class-K coefficients must be strictly positive (k_" +
          std::to_string(i + 1) + " = " + std::to_string(coeffs[i]) + ")");
    }
  }
}

ClassKParams::ClassKParams(std::initializer_list<double> c)
    : ClassKParams(Eigen::Map<const Eigen::VectorXd>(c.begin(),
                                                     static_cast<long>(c.size()))
                       .eval()) {}

bool ClassKParams::operator==(const ClassKParams& other) const {
  return coeffs.size() == other.coeffs.size() && coeffs == other.coeffs;
}

double class_k_eval(double k, double s) {
  if (!(k > 0.0)) {
    throw std::invalid_argument("class_k_eval: gain must be positive, got " +
                                std::to_string(k));
  }
  return k * s;
}

LieDerivatives lie_derivatives(const DynamicsModel& model,
                               const CandidateBarrier& b, const StateVec& x) {
  const StateVec grad = b.gradient(x);
  if (!grad.allFinite()) {
    throw std::runtime_error("lie_derivatives: non-finite gradient of " +
                             b.name);
  }
  LieDerivatives d;
  d.lf = grad.dot(eval_drift(model, x));
  d.lg = eval_actuation(model, x).transpose() * grad;
  return d;
}

bool cbf_condition_holds(const DynamicsModel& model, const CandidateBarrier& h,
                         double k, const StateVec& x) {
  const double hx = h(x);
  if (hx < 0.0) {
    throw std::invalid_argument("cbf_condition_holds: x outside C (h(x) = " +
                                std::to_string(hx) + ")");
  }
  const LieDerivatives d = lie_derivatives(model, h, x);
  const double sup = d.lf + model.input_box().support_max(d.lg);
  return sup >= -class_k_eval(k, hx);
}

bool kcbf_contains(const DynamicsModel& model, const CandidateBarrier& h,
                   double k, const StateVec& x, const InputVec& u) {
  if (!model.input_box().contains(u)) {
    throw std::invalid_argument("kcbf_contains: input outside the box");
  }
  const LieDerivatives d = lie_derivatives(model, h, x);
  return d.lf + d.lg.dot(u) >= -class_k_eval(k, h(x));
}

}  // namespace icc
