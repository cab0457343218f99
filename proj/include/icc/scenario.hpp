#pragma once

#include "icc/adaptation.hpp"
#include "icc/toml_lite.hpp"

#include <map>
#include <optional>
#include <ostream>
#include <string>

namespace icc {

/// Named barrier from the catalog, with its constants and recursion degree.
struct BarrierConfig {
  std::string name;
  std::map<std::string, double> constants;
  int degree = 0;  // 0 = catalog default
  ClassKParams params;
};

struct DataGenConfig {
  int rows = 1000;
  StateVec x0_min, x0_max;
  StateVec goal_min, goal_max;
  Eigen::VectorXd k_min, k_max;  // log-uniform sampling range per coefficient
};

struct ScenarioConfig {
  std::string model_name;
  StateVec x0;
  StateVec goal;
  PdGains gains;
  double duration = 10.0;
  double dt = 0.01;
  std::uint64_t seed = 0;
  double success_distance = 0.1;
  std::optional<StateVec> success_state;  // defaults to goal

  BarrierConfig barrier;
  std::optional<BarrierConfig> extra_barrier;  // fixed pre-filter

  AdaptationConfig adaptation;
  std::optional<DataGenConfig> datagen;
  TrainConfig train;

  // [validate] overrides for the validate-param query
  std::optional<StateVec> validate_x0;
  std::optional<ClassKParams> validate_params;

  std::string out_dir = "out";
};

/// Parse + validate a scenario TOML file. Throws ConfigError with the
/// violated invariant named.
ScenarioConfig load_scenario(const std::string& path);

/// Resolve the model and the named barrier into a runnable spec.
CandidateBarrier make_barrier(const DynamicsModel& model,
                              const BarrierConfig& cfg);
IccbfSpec build_spec(const ScenarioConfig& cfg);
IccbfSpec build_extra_spec(const ScenarioConfig& cfg);  // throws if absent
FilteredPolicy build_policy(const ScenarioConfig& cfg);

/// Pipeline stages. Each reads/writes the documented files under
/// cfg.out_dir (created if missing) and returns a process exit code;
/// configuration problems surface as ConfigError before any file is
/// touched.
int run_simulate(const ScenarioConfig& cfg);
int run_generate_data(const ScenarioConfig& cfg);
int run_train(const ScenarioConfig& cfg);
int run_adapt(const ScenarioConfig& cfg, bool oracle_override);
int run_validate_param(const ScenarioConfig& cfg, std::ostream& out);

/// Output file names inside out_dir.
namespace files {
inline constexpr const char* kTrace = "trace.csv";
inline constexpr const char* kSummary = "summary.json";
inline constexpr const char* kDataset = "dataset.csv";
inline constexpr const char* kDatasetMeta = "dataset_meta.json";
inline constexpr const char* kModel = "model.json";
inline constexpr const char* kAdaptationLog = "adaptation.jsonl";
}  // namespace files

}  // namespace icc
