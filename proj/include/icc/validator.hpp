#pragma once

#include "icc/qp_filter.hpp"
#include "icc/random.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace icc {

/// Outcome of one finite-horizon rollout check of a CBF parameter from a
/// given start state: the parameter counts as locally validated when every
/// visited state keeps the constraint feasible (sup_u b_r >= 0) and stays
/// inside the inner safe set up to the sampling tolerance eps.
struct ValidationReport {
  bool validated = false;
  double horizon = 0.0;  // T
  double min_inner_margin = 0.0;
  double min_feasibility_margin = 0.0;
  double safety_target = 0.0;    // min over the horizon of b_0 (training label)
  double progress_target = 0.0;  // goal-distance reduction (training label)
  std::optional<double> infeasible_at;
  long steps = 0;

  nlohmann::json to_json() const;
};

/// Simulate the closed loop under `policy` for round(T/dt) steps and check
/// the discrete surrogate of local validation. Preconditions: x0 in
/// C*(spec.params) within eps, T > 0, 0 < dt <= T; throws on violation.
/// Integration blowups are reported as validated=false with infeasible_at
/// set, not thrown.
ValidationReport validate_horizon(const IccbfSpec& spec,
                                  const FilteredPolicy& policy,
                                  const StateVec& x0, double T, double dt,
                                  double eps);

/// features = (x - goal) ++ parameter coefficients; the layout shared by
/// dataset generation and online prediction.
Eigen::VectorXd make_features(const StateVec& x, const StateVec& goal,
                              const ClassKParams& params);

struct DatasetRow {
  Eigen::VectorXd features;  // raw (not z-scored)
  double safety_target = 0.0;
  double progress_target = 0.0;
  bool validated = false;
};

struct Dataset {
  std::vector<DatasetRow> rows;
  Eigen::VectorXd feature_mean;  // z-score statistics over the rows
  Eigen::VectorXd feature_std;
  int rejected_rows = 0;  // rows dropped after sampler exhaustion
  std::uint64_t seed = 0;

  int feature_count() const {
    return rows.empty() ? static_cast<int>(feature_mean.size())
                        : static_cast<int>(rows[0].features.size());
  }
  void compute_stats();
};

/// Sampler contracts: given a per-row rng, produce (x0, goal) and parameters.
using ScenarioSampler = std::function<std::pair<StateVec, StateVec>(Rng&)>;
using ParamSampler = std::function<ClassKParams(Rng&)>;

/// N labeled rows for the ensemble: sample (x0, goal, params), reject and
/// resample until x0 in C*(params) (at most 100 retries per row, exhausted
/// rows are counted in rejected_rows), then label with validate_horizon.
/// Row i draws from an rng seeded with mix_seed(seed, i), so the dataset is
/// deterministic and row order independent of any parallel fan-out.
Dataset generate_dataset(const IccbfSpec& spec_template, const PdGains& gains,
                         const ScenarioSampler& scenario_sampler,
                         const ParamSampler& param_sampler, int n_rows,
                         double T, double dt, double eps, std::uint64_t seed);

/// CSV with header feature_0..feature_{F-1},safety_target,progress_target,
/// validated; sidecar JSON with normalization statistics, seed, row counts
/// and a caller-supplied config echo.
void save_dataset(const Dataset& data, const std::string& csv_path,
                  const std::string& sidecar_path,
                  const nlohmann::json& config_echo);

Dataset load_dataset(const std::string& csv_path,
                     const std::string& sidecar_path);

}  // namespace icc
