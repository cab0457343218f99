#include "icc/dynamics.hpp"

#include <cmath>
#include <stdexcept>

namespace icc {

namespace {

void check_state(const DynamicsModel& model, const StateVec& x,
                 const char* op) {
  if (x.size() != model.state_dim()) {
    throw std::invalid_argument(std::string(op) + ": state dimension " +
                                std::to_string(x.size()) + " != " +
                                std::to_string(model.state_dim()) + " for " +
                                model.name());
  }
  if (!x.allFinite()) {
    throw std::invalid_argument(std::string(op) + ": non-finite state entry");
  }
}

double wrap_pi(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace

InputBox::InputBox(Eigen::VectorXd lo, Eigen::VectorXd hi)
    : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) {
    throw std::invalid_argument("InputBox: bound lengths differ");
  }
  if (!lower.allFinite() || !upper.allFinite()) {
    throw std::invalid_argument("InputBox: bounds must be finite");
  }
  for (int j = 0; j < lower.size(); ++j) {
    if (lower[j] > upper[j]) {
      throw std::invalid_argument("InputBox: lower > upper at component " +
                                  std::to_string(j));
    }
  }
}

bool InputBox::contains(const InputVec& u, double tol) const {
  if (u.size() != lower.size()) return false;
  for (int j = 0; j < u.size(); ++j) {
    if (u[j] < lower[j] - tol || u[j] > upper[j] + tol) return false;
  }
  return true;
}

InputVec InputBox::clamp(const InputVec& u) const {
  if (u.size() != lower.size()) {
    throw std::invalid_argument("clamp_input: input dimension mismatch");
  }
  return u.cwiseMax(lower).cwiseMin(upper);
}

double InputBox::support_max(const Eigen::VectorXd& w) const {
  double s = 0.0;
  for (int j = 0; j < w.size(); ++j) {
    s += std::max(w[j] * lower[j], w[j] * upper[j]);
  }
  return s;
}

double InputBox::support_min(const Eigen::VectorXd& w) const {
  double s = 0.0;
  for (int j = 0; j < w.size(); ++j) {
    s += std::min(w[j] * lower[j], w[j] * upper[j]);
  }
  return s;
}

double DynamicsModel::goal_distance(const StateVec& goal,
                                    const StateVec& x) const {
  return (goal - x).norm();
}

StateVec eval_drift(const DynamicsModel& model, const StateVec& x) {
  check_state(model, x, "eval_drift");
  return model.drift(x);
}

Eigen::MatrixXd eval_actuation(const DynamicsModel& model, const StateVec& x) {
  check_state(model, x, "eval_actuation");
  return model.actuation(x);
}

StateVec step(const DynamicsModel& model, const StateVec& x, const InputVec& u,
              double dt) {
  check_state(model, x, "step");
  if (u.size() != model.input_dim()) {
    throw std::invalid_argument("step: input dimension mismatch");
  }
  if (!(dt > 0.0)) {
    throw std::invalid_argument("step: dt must be positive");
  }
  const auto deriv = [&](const StateVec& s) -> StateVec {
    return model.drift(s) + model.actuation(s) * u;
  };
  const StateVec k1 = deriv(x);
  const StateVec k2 = deriv(x + 0.5 * dt * k1);
  const StateVec k3 = deriv(x + 0.5 * dt * k2);
  const StateVec k4 = deriv(x + dt * k3);
  StateVec next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.allFinite()) {
    throw std::runtime_error("step: integration blowup on " + model.name());
  }
  return next;
}

InputVec clamp_input(const InputBox& box, const InputVec& u) {
  return box.clamp(u);
}

// -- double integrator --------------------------------------------------

DoubleIntegrator::DoubleIntegrator(double u_max)
    : box_(Eigen::VectorXd::Constant(1, -u_max),
           Eigen::VectorXd::Constant(1, u_max)) {}

StateVec DoubleIntegrator::drift(const StateVec& x) const {
  StateVec f(2);
  f << x[1], 0.0;
  return f;
}

Eigen::MatrixXd DoubleIntegrator::actuation(const StateVec&) const {
  Eigen::MatrixXd g(2, 1);
  g << 0.0, 1.0;
  return g;
}

InputVec DoubleIntegrator::pd_control(const StateVec& goal, const StateVec& x,
                                      double kp, double kd) const {
  InputVec u(1);
  u[0] = kp * (goal[0] - x[0]) - kd * (x[1] - goal[1]);
  return u;
}

double DoubleIntegrator::goal_distance(const StateVec& goal,
                                       const StateVec& x) const {
  return std::abs(goal[0] - x[0]);
}

// -- unicycle ------------------------------------------------------------

Unicycle::Unicycle(double v_max, double omega_max)
    : box_((Eigen::VectorXd(2) << -v_max, -omega_max).finished(),
           (Eigen::VectorXd(2) << v_max, omega_max).finished()) {}

StateVec Unicycle::drift(const StateVec& x) const {
  return StateVec::Zero(x.size());
}

Eigen::MatrixXd Unicycle::actuation(const StateVec& x) const {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(3, 2);
  g(0, 0) = std::cos(x[2]);
  g(1, 0) = std::sin(x[2]);
  g(2, 1) = 1.0;
  return g;
}

InputVec Unicycle::pd_control(const StateVec& goal, const StateVec& x,
                              double kp, double kd) const {
  const double dx = goal[0] - x[0];
  const double dy = goal[1] - x[1];
  const double dist = std::hypot(dx, dy);
  const double heading_err =
      dist > 1e-9 ? wrap_pi(std::atan2(dy, dx) - x[2]) : 0.0;
  InputVec u(2);
  u[0] = kp * dist * std::cos(heading_err);  // back up when the goal is behind
  u[1] = kd * heading_err;                   // kd doubles as the heading gain
  return u;
}

double Unicycle::goal_distance(const StateVec& goal, const StateVec& x) const {
  return std::hypot(goal[0] - x[0], goal[1] - x[1]);
}

// -- planar quadplane ----------------------------------------------------

PlanarQuadplane::PlanarQuadplane()
    : box_((Eigen::VectorXd(3) << 0.0, 0.0, -3.0).finished(),
           (Eigen::VectorXd(3) << 20.0, 4.0, 3.0).finished()) {}

StateVec PlanarQuadplane::drift(const StateVec& x) const {
  const double vx = x[2], vz = x[3], theta = x[4], omega = x[5];
  StateVec f(6);
  f[0] = vx;
  f[1] = vz;
  f[2] = kGravity * std::sin(theta) - kDragX * vx * std::abs(vx);
  f[3] = -kGravity + kLift * vx - kDragZ * vz * std::abs(vz);
  f[4] = omega;
  f[5] = -kPitchDamp * omega;
  return f;
}

Eigen::MatrixXd PlanarQuadplane::actuation(const StateVec&) const {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(6, 3);
  g(2, 1) = 1.0;  // forward thrust
  g(3, 0) = 1.0;  // vertical rotor thrust
  g(5, 2) = 1.0;  // pitch moment
  return g;
}

InputVec PlanarQuadplane::pd_control(const StateVec& goal, const StateVec& x,
                                     double kp, double kd) const {
  InputVec u(3);
  // vertical trim compensates gravity and the speed-dependent lift
  u[0] = kGravity - kLift * x[2] + kp * (goal[1] - x[1]) - kd * (x[3] - goal[3]);
  u[1] = kp * (goal[0] - x[0]) - kd * (x[2] - goal[2]);
  u[2] = kp * (goal[4] - x[4]) - kd * (x[5] - goal[5]);
  return u;
}

double PlanarQuadplane::goal_distance(const StateVec& goal,
                                      const StateVec& x) const {
  return std::hypot(goal[0] - x[0], goal[1] - x[1]);
}

InputVec PlanarQuadplane::hover_trim() const {
  InputVec u = InputVec::Zero(3);
  u[0] = kGravity;
  return u;
}

std::shared_ptr<const DynamicsModel> make_model(const std::string& name) {
  if (name == "double_integrator") {
    return std::make_shared<DoubleIntegrator>();
  }
  if (name == "unicycle") {
    return std::make_shared<Unicycle>();
  }
  if (name == "quadplane") {
    return std::make_shared<PlanarQuadplane>();
  }
  throw std::invalid_argument(
      "unknown model '" + name +
      "' (known: double_integrator, unicycle, quadplane)");
}

}  // namespace icc
