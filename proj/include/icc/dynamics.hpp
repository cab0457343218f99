#pragma once

#include <Eigen/Dense>

#include <memory>
#include <string>

namespace icc {

using StateVec = Eigen::VectorXd;
using InputVec = Eigen::VectorXd;

/// Compact box of admissible inputs, lower[j] <= u[j] <= upper[j].
struct InputBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  InputBox() = default;
  InputBox(Eigen::VectorXd lo, Eigen::VectorXd hi);

  int dim() const { return static_cast<int>(lower.size()); }
  bool contains(const InputVec& u, double tol = 1e-9) const;
  InputVec clamp(const InputVec& u) const;

  /// max / min of the linear form w·u over the box (closed form).
  double support_max(const Eigen::VectorXd& w) const;
  double support_min(const Eigen::VectorXd& w) const;
};

/// Control-affine model xdot = f(x) + g(x) u with box-constrained inputs.
class DynamicsModel {
 public:
  virtual ~DynamicsModel() = default;

  virtual int state_dim() const = 0;
  virtual int input_dim() const = 0;
  virtual const InputBox& input_box() const = 0;
  virtual const std::string& name() const = 0;

  virtual StateVec drift(const StateVec& x) const = 0;            // f(x)
  virtual Eigen::MatrixXd actuation(const StateVec& x) const = 0; // g(x), n x m

  /// PD tracking input toward `goal` (unclamped). goal is a full state;
  /// velocity entries of goal act as feed-forward references.
  virtual InputVec pd_control(const StateVec& goal, const StateVec& x,
                              double kp, double kd) const = 0;

  /// Task-space distance to goal, used for progress labels and
  /// time-to-goal metrics.
  virtual double goal_distance(const StateVec& goal, const StateVec& x) const;
};

StateVec eval_drift(const DynamicsModel& model, const StateVec& x);
Eigen::MatrixXd eval_actuation(const DynamicsModel& model, const StateVec& x);

/// Classical RK4 step with u held constant over dt. Throws on non-finite
/// results (integration blowup) and on dimension mismatches.
StateVec step(const DynamicsModel& model, const StateVec& x, const InputVec& u,
              double dt);

InputVec clamp_input(const InputBox& box, const InputVec& u);

/// Point mass on a line: state (p, v), input a with pdot = v, vdot = a.
class DoubleIntegrator final : public DynamicsModel {
 public:
  explicit DoubleIntegrator(double u_max = 1.0);

  int state_dim() const override { return 2; }
  int input_dim() const override { return 1; }
  const InputBox& input_box() const override { return box_; }
  const std::string& name() const override { return name_; }
  StateVec drift(const StateVec& x) const override;
  Eigen::MatrixXd actuation(const StateVec& x) const override;
  InputVec pd_control(const StateVec& goal, const StateVec& x, double kp,
                      double kd) const override;
  double goal_distance(const StateVec& goal, const StateVec& x) const override;

 private:
  InputBox box_;
  std::string name_ = "double_integrator";
};

/// Kinematic unicycle: state (x, y, theta), inputs (v, omega).
class Unicycle final : public DynamicsModel {
 public:
  Unicycle(double v_max = 1.0, double omega_max = 2.0);

  int state_dim() const override { return 3; }
  int input_dim() const override { return 2; }
  const InputBox& input_box() const override { return box_; }
  const std::string& name() const override { return name_; }
  StateVec drift(const StateVec& x) const override;
  Eigen::MatrixXd actuation(const StateVec& x) const override;
  InputVec pd_control(const StateVec& goal, const StateVec& x, double kp,
                      double kd) const override;
  double goal_distance(const StateVec& goal, const StateVec& x) const override;

 private:
  InputBox box_;
  std::string name_ = "unicycle";
};

/// Simplified planar VTOL quadplane.
///
/// State (x, z, vx, vz, theta, omega); inputs (u_v, u_f, u_m) =
/// (vertical rotor thrust, forward thrust, pitch moment), all
/// mass/inertia-normalized so the actuation matrix is constant:
///
///   xdot     = vx
///   zdot     = vz
///   vxdot    = g*sin(theta) - cdx*vx*|vx|            + u_f
///   vzdot    = -g + klift*vx - cdz*vz*|vz|           + u_v
///   thetadot = omega
///   omegadot = -cdamp*omega                          + u_m
///
/// The lift term klift*vx models the hover -> forward-flight transition:
/// forward speed progressively carries the weight.
class PlanarQuadplane final : public DynamicsModel {
 public:
  static constexpr double kGravity = 9.81;
  static constexpr double kDragX = 0.05;
  static constexpr double kDragZ = 0.10;
  static constexpr double kLift = 1.0;
  static constexpr double kPitchDamp = 0.5;

  PlanarQuadplane();

  int state_dim() const override { return 6; }
  int input_dim() const override { return 3; }
  const InputBox& input_box() const override { return box_; }
  const std::string& name() const override { return name_; }
  StateVec drift(const StateVec& x) const override;
  Eigen::MatrixXd actuation(const StateVec& x) const override;
  InputVec pd_control(const StateVec& goal, const StateVec& x, double kp,
                      double kd) const override;
  double goal_distance(const StateVec& goal, const StateVec& x) const override;

  /// Mass-normalized input that holds a level hover.
  InputVec hover_trim() const;

 private:
  InputBox box_;
  std::string name_ = "quadplane";
};

/// Model registry used by the harness. Throws on unknown names.
std::shared_ptr<const DynamicsModel> make_model(const std::string& name);

}  // namespace icc
