#include "icc/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace icc {

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

nlohmann::json prediction_json(const EnsemblePrediction& p) {
  return {{"mean", to_std(p.mean)},
          {"aleatoric_var", to_std(p.aleatoric_var)},
          {"epistemic_var", to_std(p.epistemic_var)}};
}

double log_distance(const ClassKParams& a, const ClassKParams& b) {
  return (a.coeffs.array().log() - b.coeffs.array().log()).matrix().norm();
}

}  // namespace

void AdaptationConfig::validate() const {
  if (!(horizon > 0.0)) {
    throw std::invalid_argument("adaptation: horizon T must be positive");
  }
  if (!(period > 0.0) || period >= horizon) {
    throw std::invalid_argument(
        "adaptation: need 0 < period < horizon (t_{k+1} - t_k < T)");
  }
  if (candidate_count < 0) {
    throw std::invalid_argument("adaptation: candidate_count must be >= 0");
  }
  if (!(proposal_spread >= 0.0)) {
    throw std::invalid_argument("adaptation: proposal_spread must be >= 0");
  }
  if (!(epistemic_threshold > 0.0)) {
    throw std::invalid_argument("adaptation: epistemic_threshold must be > 0");
  }
  if (confidence_multiplier < 0.0) {
    throw std::invalid_argument(
        "adaptation: confidence_multiplier must be >= 0");
  }
  if (!(dt > 0.0) || dt > period) {
    throw std::invalid_argument("adaptation: need 0 < dt <= period");
  }
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("adaptation: epsilon must be > 0");
  }
}

std::vector<ClassKParams> propose_candidates(const ClassKParams& current,
                                             const AdaptationConfig& config,
                                             int event_index) {
  std::vector<ClassKParams> out;
  out.reserve(static_cast<std::size_t>(config.candidate_count) + 1);
  out.push_back(current);
  Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(event_index)));
  for (int c = 0; c < config.candidate_count; ++c) {
    Eigen::VectorXd k(current.degree());
    for (int i = 0; i < k.size(); ++i) {
      k[i] = current[i] * std::exp(config.proposal_spread * rng.normal());
    }
    out.emplace_back(std::move(k));
  }
  return out;
}

std::vector<int> uncertainty_gate(
    const std::vector<EnsemblePrediction>& predictions,
    const AdaptationConfig& config) {
  std::vector<int> accepted;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const EnsemblePrediction& p = predictions[i];
    const bool in_distribution =
        p.epistemic_var[0] <= config.epistemic_threshold;
    const bool safe =
        p.mean[0] - config.confidence_multiplier * std::sqrt(p.total_var()[0]) >=
        0.0;
    if (in_distribution && safe) accepted.push_back(static_cast<int>(i));
  }
  return accepted;
}

ClassKParams select_parameter(
    const std::vector<int>& accepted,
    const std::vector<ClassKParams>& candidates,
    const std::vector<EnsemblePrediction>& predictions,
    const ClassKParams& current) {
  if (accepted.empty()) {
    throw std::invalid_argument("select_parameter: empty accepted set");
  }
  int best = accepted.front();
  for (std::size_t i = 1; i < accepted.size(); ++i) {
    const int idx = accepted[i];
    const double diff = predictions[idx].mean[1] - predictions[best].mean[1];
    if (diff > 1e-9) {
      best = idx;
    } else if (diff >= -1e-9) {
      const double d_new = log_distance(candidates[idx], current);
      const double d_best = log_distance(candidates[best], current);
      if (d_new < d_best - 1e-15) best = idx;  // equal distance: lower index
    }
  }
  return candidates[best];
}

nlohmann::json AdaptationEvent::to_json() const {
  nlohmann::json gates = nlohmann::json::array();
  for (const GateDecision& g : gate) {
    gates.push_back({{"epistemic_ok", g.epistemic_ok},
                     {"safety_ok", g.safety_ok},
                     {"accepted", g.accepted}});
  }
  nlohmann::json cands = nlohmann::json::array();
  for (const ClassKParams& c : candidates) cands.push_back(to_std(c.coeffs));
  nlohmann::json preds = nlohmann::json::array();
  for (const EnsemblePrediction& p : predictions) {
    preds.push_back(prediction_json(p));
  }
  nlohmann::json j{{"type", "event"},
                   {"t", t},
                   {"index", index},
                   {"candidates", std::move(cands)},
                   {"predictions", std::move(preds)},
                   {"gate", std::move(gates)},
                   {"accepted_count", accepted_count},
                   {"chosen", to_std(chosen.coeffs)},
                   {"changed", changed},
                   {"fallback", fallback},
                   {"frozen", frozen},
                   {"confirmation_ran", confirmation_ran}};
  j["confirmation"] = confirmation_ran ? confirmation.to_json()
                                       : nlohmann::json(nullptr);
  return j;
}

nlohmann::json StepRecord::to_json() const {
  return {{"type", "step"},
          {"t", t},
          {"x", to_std(x)},
          {"u", to_std(u)},
          {"b", to_std(stack)},
          {"feasibility_margin", feasibility_margin},
          {"inner_margin", inner_margin},
          {"params", to_std(params.coeffs)},
          {"filter_modified", filter_modified},
          {"slack", slack}};
}

void AdaptationLog::write_jsonl(std::ostream& out) const {
  // Events precede the step taken at the same time.
  std::size_t e = 0;
  for (const StepRecord& s : steps) {
    while (e < events.size() && events[e].t <= s.t + 1e-12) {
      out << events[e].to_json().dump() << "\n";
      ++e;
    }
    out << s.to_json().dump() << "\n";
  }
  for (; e < events.size(); ++e) {
    out << events[e].to_json().dump() << "\n";
  }
}

AdaptResult adapt_run(const IccbfSpec& spec0, const EnsembleModel* ensemble,
                      const StateVec& goal, const StateVec& x0,
                      double duration, const PdGains& gains,
                      const AdaptationConfig& config,
                      const std::vector<IccbfSpec>& pre_filters) {
  config.validate();
  if (!config.oracle && ensemble == nullptr) {
    throw std::invalid_argument("adapt_run: ensemble required outside oracle mode");
  }
  if (!(duration > 0.0)) {
    throw std::invalid_argument("adapt_run: duration must be positive");
  }

  const auto policy_for = [&](const ClassKParams& p) {
    return FilteredPolicy(spec0.with_params(p), goal, gains, pre_filters);
  };
  const auto validate_params =
      [&](const ClassKParams& p, const StateVec& x) -> ValidationReport {
    const IccbfSpec spec = spec0.with_params(p);
    if (inner_set_margin(spec, x) < 0.0) {
      ValidationReport failed;
      failed.horizon = config.horizon;
      failed.min_inner_margin = inner_set_margin(spec, x);
      failed.min_feasibility_margin =
          -std::numeric_limits<double>::infinity();
      failed.safety_target = eval_level(spec, 0, x);
      failed.infeasible_at = 0.0;
      return failed;  // current state outside C*(p): not adoptable
    }
    return validate_horizon(spec, policy_for(p), x, config.horizon, config.dt,
                            config.epsilon);
  };

  // Theorem-2 precondition: a locally validated parameter at t0.
  {
    const double margin0 = inner_set_margin(spec0, x0);
    if (margin0 < 0.0) {
      throw std::invalid_argument(
          "adapt_run: x0 outside the initial inner safe set (margin " +
          std::to_string(margin0) + ")");
    }
  }
  ValidationReport initial_report = validate_params(spec0.params, x0);
  if (!initial_report.validated) {
    throw std::invalid_argument(
        "adapt_run: initial parameters not locally validated from x0 "
        "(min feasibility margin " +
        std::to_string(initial_report.min_feasibility_margin) +
        ", min inner margin " +
        std::to_string(initial_report.min_inner_margin) + ")");
  }

  AdaptResult result;
  ClassKParams current = spec0.params;
  FilteredPolicy policy = policy_for(current);
  IccbfSpec spec = spec0;

  AdaptationEvent init;
  init.t = 0.0;
  init.index = 0;
  init.candidates = {current};
  init.gate = {{true, true, true}};
  init.accepted_count = 1;
  init.chosen = current;
  init.confirmation_ran = true;
  init.confirmation = initial_report;
  result.log.events.push_back(std::move(init));

  const long total_steps = std::max<long>(1, std::lround(duration / config.dt));
  const long steps_per_event =
      std::max<long>(1, std::lround(config.period / config.dt));

  StateVec x = x0;
  result.trajectory.push_back(x);
  for (long s = 0; s < total_steps; ++s) {
    const double t = static_cast<double>(s) * config.dt;

    if (s > 0 && s % steps_per_event == 0) {
      AdaptationEvent event;
      event.t = t;
      event.index = static_cast<int>(s / steps_per_event);
      event.candidates = propose_candidates(current, config, event.index);

      std::vector<ValidationReport> oracle_reports;
      if (config.oracle) {
        oracle_reports.reserve(event.candidates.size());
        for (const ClassKParams& cand : event.candidates) {
          const ValidationReport rep = validate_params(cand, x);
          EnsemblePrediction pred;
          pred.mean = {rep.safety_target, rep.progress_target};
          pred.aleatoric_var.setZero();
          pred.epistemic_var.setZero();
          event.predictions.push_back(pred);
          oracle_reports.push_back(rep);
        }
      } else {
        for (const ClassKParams& cand : event.candidates) {
          event.predictions.push_back(
              ensemble->predict(make_features(x, goal, cand)));
        }
      }

      std::vector<int> accepted = uncertainty_gate(event.predictions, config);
      event.gate.resize(event.candidates.size());
      for (std::size_t i = 0; i < event.candidates.size(); ++i) {
        const EnsemblePrediction& p = event.predictions[i];
        event.gate[i].epistemic_ok =
            p.epistemic_var[0] <= config.epistemic_threshold;
        event.gate[i].safety_ok =
            p.mean[0] - config.confidence_multiplier *
                            std::sqrt(p.total_var()[0]) >= 0.0;
      }
      if (config.oracle) {
        // The rollout is the authority: gate acceptance additionally
        // requires the oracle report to be validated.
        std::vector<int> kept;
        for (int idx : accepted) {
          if (oracle_reports[static_cast<std::size_t>(idx)].validated) {
            kept.push_back(idx);
          }
        }
        accepted.swap(kept);
      }
      for (int idx : accepted) {
        event.gate[static_cast<std::size_t>(idx)].accepted = true;
      }
      event.accepted_count = static_cast<int>(accepted.size());

      bool adopted = false;
      if (!accepted.empty()) {
        const ClassKParams selected = select_parameter(
            accepted, event.candidates, event.predictions, current);
        ValidationReport confirmation;
        bool confirmed;
        if (config.oracle) {
          // The oracle evaluation already is the confirmation rollout.
          std::size_t sel_idx = 0;
          for (std::size_t i = 0; i < event.candidates.size(); ++i) {
            if (event.candidates[i] == selected) {
              sel_idx = i;
              break;
            }
          }
          confirmation = oracle_reports[sel_idx];
          confirmed = confirmation.validated;
          event.confirmation_ran = true;
        } else if (config.confirm) {
          confirmation = validate_params(selected, x);
          confirmed = confirmation.validated;
          event.confirmation_ran = true;
        } else {
          // Ablation: trust the gate, but never adopt a parameter whose
          // inner safe set excludes the current state.
          confirmed = inner_set_margin(spec0.with_params(selected), x) >= 0.0;
          event.confirmation_ran = false;
        }
        if (confirmed) {
          event.changed = !(selected == current);
          current = selected;
          event.chosen = selected;
          event.confirmation = confirmation;
          adopted = true;
        }
      }

      if (!adopted) {
        // Fallback ladder: re-confirm the current parameter; freeze if even
        // that fails.
        const ValidationReport recheck =
            config.oracle ? oracle_reports[0] : validate_params(current, x);
        event.fallback = true;
        event.chosen = current;
        event.confirmation = recheck;
        event.confirmation_ran = true;
        if (!recheck.validated) event.frozen = true;
      }

      policy = policy_for(current);
      spec = spec0.with_params(current);
      result.log.events.push_back(std::move(event));
    }

    const FilterResult res = policy.filter_at(x);
    StepRecord record;
    record.t = t;
    record.x = x;
    record.u = res.input;
    record.stack = eval_stack(spec, x).values;
    record.feasibility_margin = kcand_feasible(spec, x).margin;
    record.inner_margin = record.stack.minCoeff();
    record.params = current;
    record.filter_modified = res.modified;
    record.slack = res.slack_used;
    result.log.steps.push_back(std::move(record));

    x = step(*spec.model, x, res.input, config.dt);
    result.trajectory.push_back(x);
  }

  return result;
}

}  // namespace icc
