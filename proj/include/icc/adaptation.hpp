#pragma once

#include "icc/penn.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace icc {

struct AdaptationConfig {
  double horizon = 2.0;     // T: validation horizon per adoption
  double period = 0.5;      // delta: time between adaptation events, < T
  int candidate_count = 8;  // proposals per event, in addition to current
  double proposal_spread = 0.4;
  double epistemic_threshold = 0.05;   // tau_e
  double confidence_multiplier = 1.0;  // beta
  double epsilon = 1e-3;
  double dt = 0.01;
  std::uint64_t seed = 0;
  bool oracle = false;   // verify candidates by rollout instead of the PENN
  bool confirm = true;   // rollout-confirm the selected candidate (ablation off)

  void validate() const;  // throws on schedule/threshold violations
};

struct GateDecision {
  bool epistemic_ok = false;
  bool safety_ok = false;
  bool accepted = false;
};

struct AdaptationEvent {
  double t = 0.0;
  int index = 0;
  std::vector<ClassKParams> candidates;
  std::vector<EnsemblePrediction> predictions;
  std::vector<GateDecision> gate;
  int accepted_count = 0;
  ClassKParams chosen;    // parameter in force after the event
  bool changed = false;   // chosen != previous
  bool fallback = false;  // kept current after gate/confirmation failure
  bool frozen = false;    // even current failed re-validation
  bool confirmation_ran = false;
  ValidationReport confirmation;  // for `chosen`, from the event state

  nlohmann::json to_json() const;
};

struct StepRecord {
  double t = 0.0;
  StateVec x;
  InputVec u;
  Eigen::VectorXd stack;  // b_0..b_{r-1} at x
  double feasibility_margin = 0.0;
  double inner_margin = 0.0;
  ClassKParams params;
  bool filter_modified = false;
  double slack = 0.0;

  nlohmann::json to_json() const;
};

struct AdaptationLog {
  std::vector<AdaptationEvent> events;
  std::vector<StepRecord> steps;

  /// One JSON object per line, events and steps merged in time order.
  void write_jsonl(std::ostream& out) const;
};

/// candidate_count log-space Gaussian perturbations of `current`
/// (multiplicative, so positivity is structural), preceded by `current`
/// itself. Deterministic given config.seed and the event index.
std::vector<ClassKParams> propose_candidates(const ClassKParams& current,
                                             const AdaptationConfig& config,
                                             int event_index);

/// Indices i with epistemic_var_safety <= tau_e (in distribution) and
/// mean_safety - beta*sqrt(total_var_safety) >= 0 (confidently safe).
std::vector<int> uncertainty_gate(
    const std::vector<EnsemblePrediction>& predictions,
    const AdaptationConfig& config);

/// Argmax of the predicted progress mean over the accepted indices;
/// ties within 1e-9 broken by log-space distance to `current`, then by
/// lowest index. Throws on an empty accepted set.
ClassKParams select_parameter(const std::vector<int>& accepted,
                              const std::vector<ClassKParams>& candidates,
                              const std::vector<EnsemblePrediction>& predictions,
                              const ClassKParams& current);

struct AdaptResult {
  std::vector<StateVec> trajectory;  // states at 0, dt, .., duration
  AdaptationLog log;
};

/// Closed-loop run with parameter adaptation every `period` seconds:
/// propose -> predict -> gate -> select, then rollout-confirm the selection
/// from the current state before adopting it. A candidate is adoptable only
/// if the current state lies in its inner safe set. On gate or confirmation
/// failure the current parameters are re-confirmed instead; if that fails
/// too, parameters freeze and the event is flagged. `ensemble` may be null
/// in oracle mode. Throws if the initial parameters are not validated from
/// x0.
AdaptResult adapt_run(const IccbfSpec& spec0, const EnsembleModel* ensemble,
                      const StateVec& goal, const StateVec& x0,
                      double duration, const PdGains& gains,
                      const AdaptationConfig& config,
                      const std::vector<IccbfSpec>& pre_filters = {});

}  // namespace icc
