#pragma once

#include "icc/iccbf.hpp"

#include <vector>

namespace icc {

struct PdGains {
  double kp = 1.0;
  double kd = 1.0;
};

struct FilterResult {
  InputVec input;
  bool modified = false;
  /// 0 when the returned input satisfies b_r >= 0; otherwise the (positive)
  /// shortfall -sup_u b_r. Infeasibility is reported, never thrown.
  double slack_used = 0.0;
  double constraint_value = 0.0;  // b_r(x, input)
};

/// PD tracking input, clamped to the model's input box.
InputVec nominal_pd(const DynamicsModel& model, const StateVec& goal,
                    const StateVec& x, const PdGains& gains);

/// Minimally modify u_nom so that b_r(x, u) >= 0 and u stays in the box:
///   min ||u - u_nom||^2  s.t.  offset + slope·u >= 0,  u in box.
/// Solved exactly by enumerating box-face active sets (m <= 3). When no
/// admissible input satisfies the constraint, returns the constraint
/// maximizer with slack_used = -(sup margin); zero-slope coordinates are
/// held at the clamped nominal, which for an all-zero slope reduces to
/// returning u_nom itself.
FilterResult safety_filter(const IccbfSpec& spec, const StateVec& x,
                           const InputVec& u_nom);

/// Nominal PD composed with the safety filter; the policy pi used by the
/// validator. Optional pre_filters are applied sequentially before the
/// primary constraint (last filter wins; documented non-optimal for the
/// combined program).
class FilteredPolicy {
 public:
  FilteredPolicy(IccbfSpec spec, StateVec goal, PdGains gains,
                 std::vector<IccbfSpec> pre_filters = {});

  FilterResult filter_at(const StateVec& x) const;
  InputVec operator()(const StateVec& x) const { return filter_at(x).input; }

  const IccbfSpec& spec() const { return spec_; }
  const StateVec& goal() const { return goal_; }
  const PdGains& gains() const { return gains_; }
  const std::vector<IccbfSpec>& pre_filters() const { return pre_filters_; }

  FilteredPolicy with_params(const ClassKParams& p) const;

 private:
  IccbfSpec spec_;
  StateVec goal_;
  PdGains gains_;
  std::vector<IccbfSpec> pre_filters_;
};

}  // namespace icc
