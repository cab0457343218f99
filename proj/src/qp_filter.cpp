#include "icc/qp_filter.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace icc {

InputVec nominal_pd(const DynamicsModel& model, const StateVec& goal,
                    const StateVec& x, const PdGains& gains) {
  if (!(gains.kp > 0.0) || !(gains.kd > 0.0)) {
    throw std::invalid_argument("nominal_pd: gains must be positive");
  }
  if (goal.size() != model.state_dim()) {
    throw std::invalid_argument("nominal_pd: goal dimension mismatch");
  }
  return model.input_box().clamp(
      model.pd_control(goal, x, gains.kp, gains.kd));
}

FilterResult safety_filter(const IccbfSpec& spec, const StateVec& x,
                           const InputVec& u_nom_in) {
  const InputBox& box = spec.model->input_box();
  const InputVec u_nom = box.clamp(u_nom_in);
  const ConstraintCoeffs cc = constraint_coeffs(spec, x);
  const auto value = [&cc](const InputVec& u) {
    return cc.offset + cc.slope.dot(u);
  };

  const double nominal_value = value(u_nom);
  if (nominal_value >= 0.0) {
    return FilterResult{u_nom, false, 0.0, nominal_value};
  }

  const int m = box.dim();
  if (cc.slope.lpNorm<1>() == 0.0) {
    // No input moves the constraint; deviating from the nominal is pointless.
    return FilterResult{u_nom, false, -cc.offset, cc.offset};
  }

  // Enumerate box-face active sets: each coordinate free, at its lower or at
  // its upper bound (3^m patterns, m <= 3). Within a pattern the free block
  // is either the nominal itself or its projection onto the activated
  // constraint hyperplane; the optimum of the QP is one of these candidates.
  const double kFeasTol = 1e-9;
  int patterns = 1;
  for (int j = 0; j < m; ++j) patterns *= 3;

  InputVec best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int p = 0; p < patterns; ++p) {
    InputVec u(m);
    double fixed_term = 0.0;
    double free_norm2 = 0.0;
    double free_value = 0.0;  // slope_F · u_nom_F
    int code = p;
    bool any_free = false;
    for (int j = 0; j < m; ++j) {
      const int state = code % 3;
      code /= 3;
      if (state == 0) {
        u[j] = u_nom[j];
        any_free = true;
        free_norm2 += cc.slope[j] * cc.slope[j];
        free_value += cc.slope[j] * u_nom[j];
      } else {
        u[j] = (state == 1) ? box.lower[j] : box.upper[j];
        fixed_term += cc.slope[j] * u[j];
      }
    }
    const double needed = -cc.offset - fixed_term;  // slope_F·u_F >= needed
    if (any_free && free_value < needed) {
      if (free_norm2 == 0.0) continue;  // pattern cannot satisfy the constraint
      const double t = (needed - free_value) / free_norm2;
      int c2 = p;
      for (int j = 0; j < m; ++j) {
        if (c2 % 3 == 0) u[j] += t * cc.slope[j];
        c2 /= 3;
      }
    }
    // Projections that leave the box are covered exactly by the patterns
    // fixing the offending coordinate, so the membership test can be strict.
    if (!box.contains(u, 1e-12) || value(u) < -kFeasTol) continue;
    const double dist = (u - u_nom).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = box.clamp(u);  // snap boundary-grazing coordinates into the box
    }
  }

  if (best_dist < std::numeric_limits<double>::infinity()) {
    return FilterResult{best, true, 0.0, value(best)};
  }

  // K_cand ∩ U is empty: report the shortfall at the constraint maximizer.
  InputVec u_max(m);
  for (int j = 0; j < m; ++j) {
    if (cc.slope[j] > 0.0) {
      u_max[j] = box.upper[j];
    } else if (cc.slope[j] < 0.0) {
      u_max[j] = box.lower[j];
    } else {
      u_max[j] = u_nom[j];
    }
  }
  const double sup = value(u_max);
  return FilterResult{u_max, true, -sup, sup};
}

FilteredPolicy::FilteredPolicy(IccbfSpec spec, StateVec goal, PdGains gains,
                               std::vector<IccbfSpec> pre_filters)
    : spec_(std::move(spec)),
      goal_(std::move(goal)),
      gains_(gains),
      pre_filters_(std::move(pre_filters)) {
  if (goal_.size() != spec_.model->state_dim()) {
    throw std::invalid_argument("FilteredPolicy: goal dimension mismatch");
  }
}

FilterResult FilteredPolicy::filter_at(const StateVec& x) const {
  InputVec u = nominal_pd(*spec_.model, goal_, x, gains_);
  for (const IccbfSpec& pre : pre_filters_) {
    u = safety_filter(pre, x, u).input;
  }
  return safety_filter(spec_, x, u);
}

FilteredPolicy FilteredPolicy::with_params(const ClassKParams& p) const {
  return FilteredPolicy(spec_.with_params(p), goal_, gains_, pre_filters_);
}

}  // namespace icc
