#include "icc/validator.hpp"

#include "icc/toml_lite.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace icc {

namespace {

// Round-trip-exact decimal formatting, used for every CSV the artifact
// writes so reruns are byte-identical.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

nlohmann::json ValidationReport::to_json() const {
  nlohmann::json j{{"validated", validated},
                   {"horizon", horizon},
                   {"min_inner_margin", min_inner_margin},
                   {"min_feasibility_margin", min_feasibility_margin},
                   {"safety_target", safety_target},
                   {"progress_target", progress_target},
                   {"steps", steps}};
  j["infeasible_at"] =
      infeasible_at ? nlohmann::json(*infeasible_at) : nlohmann::json(nullptr);
  return j;
}

ValidationReport validate_horizon(const IccbfSpec& spec,
                                  const FilteredPolicy& policy,
                                  const StateVec& x0, double T, double dt,
                                  double eps) {
  if (!(T > 0.0) || !(dt > 0.0) || dt > T) {
    throw std::invalid_argument("validate_horizon: need T > 0, 0 < dt <= T");
  }
  const double margin0 = inner_set_margin(spec, x0);
  if (margin0 < -eps) {
    throw std::invalid_argument(
        "validate_horizon: x0 outside the inner safe set (margin " +
        std::to_string(margin0) + ")");
  }

  ValidationReport report;
  report.horizon = T;
  report.steps = std::max<long>(1, std::lround(T / dt));
  report.min_inner_margin = std::numeric_limits<double>::infinity();
  report.min_feasibility_margin = std::numeric_limits<double>::infinity();
  report.safety_target = std::numeric_limits<double>::infinity();

  const DynamicsModel& model = *spec.model;
  const double d0 = model.goal_distance(policy.goal(), x0);

  StateVec x = x0;
  bool ok = true;
  for (long s = 0; s <= report.steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    const double inner = inner_set_margin(spec, x);
    const Feasibility feas = kcand_feasible(spec, x);
    const double b0 = eval_level(spec, 0, x);
    report.min_inner_margin = std::min(report.min_inner_margin, inner);
    report.min_feasibility_margin =
        std::min(report.min_feasibility_margin, feas.margin);
    report.safety_target = std::min(report.safety_target, b0);
    if (ok && (!feas.feasible || inner < -eps)) {
      ok = false;
      report.infeasible_at = t;
    }
    if (s == report.steps) break;
    try {
      x = step(model, x, policy(x), dt);
    } catch (const std::runtime_error&) {  // integration blowup
      ok = false;
      if (!report.infeasible_at) report.infeasible_at = t;
      break;
    }
  }
  report.progress_target = d0 - model.goal_distance(policy.goal(), x);
  report.validated = ok;
  return report;
}

Eigen::VectorXd make_features(const StateVec& x, const StateVec& goal,
                              const ClassKParams& params) {
  Eigen::VectorXd f(x.size() + params.degree());
  f.head(x.size()) = x - goal;
  f.tail(params.degree()) = params.coeffs;
  return f;
}

void Dataset::compute_stats() {
  const int f = feature_count();
  feature_mean = Eigen::VectorXd::Zero(f);
  feature_std = Eigen::VectorXd::Ones(f);
  if (rows.empty()) return;
  for (const DatasetRow& row : rows) feature_mean += row.features;
  feature_mean /= static_cast<double>(rows.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(f);
  for (const DatasetRow& row : rows) {
    var += (row.features - feature_mean).cwiseAbs2();
  }
  var /= static_cast<double>(rows.size());
  feature_std = var.cwiseSqrt().cwiseMax(1e-12);
}

Dataset generate_dataset(const IccbfSpec& spec_template, const PdGains& gains,
                         const ScenarioSampler& scenario_sampler,
                         const ParamSampler& param_sampler, int n_rows,
                         double T, double dt, double eps, std::uint64_t seed) {
  Dataset data;
  data.seed = seed;
  data.rows.reserve(static_cast<std::size_t>(std::max(0, n_rows)));
  constexpr int kMaxRetries = 100;

  for (int i = 0; i < n_rows; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    bool placed = false;
    for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
      auto [x0, goal] = scenario_sampler(rng);
      const ClassKParams params = param_sampler(rng);
      const IccbfSpec spec = spec_template.with_params(params);
      if (inner_set_margin(spec, x0) < 0.0) continue;
      const FilteredPolicy policy(spec, goal, gains);
      const ValidationReport report =
          validate_horizon(spec, policy, x0, T, dt, eps);
      DatasetRow row;
      row.features = make_features(x0, goal, params);
      row.safety_target = report.safety_target;
      row.progress_target = report.progress_target;
      row.validated = report.validated;
      data.rows.push_back(std::move(row));
      placed = true;
    }
    if (!placed) ++data.rejected_rows;
  }
  data.compute_stats();
  return data;
}

void save_dataset(const Dataset& data, const std::string& csv_path,
                  const std::string& sidecar_path,
                  const nlohmann::json& config_echo) {
  std::ofstream csv(csv_path);
  if (!csv) {
    throw std::runtime_error("save_dataset: cannot write " + csv_path);
  }
  const int f = data.feature_count();
  for (int i = 0; i < f; ++i) csv << "feature_" << i << ",";
  csv << "safety_target,progress_target,validated\n";
  for (const DatasetRow& row : data.rows) {
    for (int i = 0; i < f; ++i) csv << fmt(row.features[i]) << ",";
    csv << fmt(row.safety_target) << "," << fmt(row.progress_target) << ","
        << (row.validated ? 1 : 0) << "\n";
  }

  nlohmann::json meta;
  meta["version"] = "dataset-1";
  meta["feature_count"] = f;
  meta["rows"] = data.rows.size();
  meta["rejected_rows"] = data.rejected_rows;
  meta["seed"] = data.seed;
  meta["feature_mean"] =
      std::vector<double>(data.feature_mean.data(),
                          data.feature_mean.data() + data.feature_mean.size());
  meta["feature_std"] =
      std::vector<double>(data.feature_std.data(),
                          data.feature_std.data() + data.feature_std.size());
  meta["config"] = config_echo;
  std::ofstream side(sidecar_path);
  if (!side) {
    throw std::runtime_error("save_dataset: cannot write " + sidecar_path);
  }
  side << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& csv_path,
                     const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  if (!side) {
    throw ConfigError("missing dataset sidecar: " + sidecar_path);
  }
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("unparseable dataset sidecar " + sidecar_path + ": " +
                      e.what());
  }
  if (meta.value("version", "") != "dataset-1") {
    throw ConfigError("dataset sidecar " + sidecar_path +
                      ": expected version dataset-1");
  }

  Dataset data;
  data.seed = meta.value("seed", 0ULL);
  data.rejected_rows = meta.value("rejected_rows", 0);
  const auto mean = meta.at("feature_mean").get<std::vector<double>>();
  const auto stdv = meta.at("feature_std").get<std::vector<double>>();
  data.feature_mean =
      Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<long>(mean.size()));
  data.feature_std =
      Eigen::Map<const Eigen::VectorXd>(stdv.data(), static_cast<long>(stdv.size()));
  const int f = meta.at("feature_count").get<int>();

  std::ifstream csv(csv_path);
  if (!csv) {
    throw ConfigError("missing dataset: " + csv_path);
  }
  std::string line;
  if (!std::getline(csv, line)) {
    throw ConfigError("dataset " + csv_path + ": empty file");
  }
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) {
      cells.push_back(std::stod(cell));
    }
    if (static_cast<int>(cells.size()) != f + 3) {
      throw ConfigError("dataset " + csv_path + ": row with " +
                        std::to_string(cells.size()) + " cells, expected " +
                        std::to_string(f + 3));
    }
    DatasetRow row;
    row.features =
        Eigen::Map<const Eigen::VectorXd>(cells.data(), f);
    row.safety_target = cells[f];
    row.progress_target = cells[f + 1];
    row.validated = cells[f + 2] != 0.0;
    data.rows.push_back(std::move(row));
  }
  return data;
}

}  // namespace icc
