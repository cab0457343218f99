#include "icc/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>

namespace icc {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                           static_cast<long>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

StateVec require_state(const toml::Document& doc, const std::string& section,
                       const std::string& key) {
  return to_eigen(doc.at(section, key).as_array(section + "." + key));
}

// Wrap the library's invalid_argument preconditions into ConfigError so the
// CLI can report configuration problems as such.
template <typename Fn>
auto as_config_error(Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

BarrierConfig load_barrier_section(const toml::Document& doc,
                                   const std::string& section) {
  BarrierConfig cfg;
  cfg.name = doc.at(section, "name").as_string(section + ".name");
  cfg.degree = static_cast<int>(doc.get_int(section, "degree", 0));
  cfg.params = as_config_error([&] {
    return ClassKParams(
        to_eigen(doc.at(section, "k").as_array(section + ".k")));
  });
  for (const auto& [key, value] : doc.sections.at(section)) {
    if (key == "name" || key == "degree" || key == "k") continue;
    cfg.constants[key] = value.as_double(section + "." + key);
  }
  return cfg;
}

struct BarrierEntry {
  std::string model_name;
  int default_degree;
};

const std::map<std::string, BarrierEntry>& barrier_catalog() {
  static const std::map<std::string, BarrierEntry> catalog = {
      {"position_wall", {"double_integrator", 2}},
      {"velocity_limit", {"double_integrator", 1}},
      {"keepout_disc", {"unicycle", 1}},
      {"altitude_floor", {"quadplane", 2}},
      {"descent_rate", {"quadplane", 1}},
  };
  return catalog;
}

double constant_or(const BarrierConfig& cfg, const std::string& key,
                   double fallback) {
  const auto it = cfg.constants.find(key);
  return it == cfg.constants.end() ? fallback : it->second;
}

IccbfSpec make_spec(const std::shared_ptr<const DynamicsModel>& model,
                    const BarrierConfig& bcfg) {
  const auto it = barrier_catalog().find(bcfg.name);
  if (it == barrier_catalog().end()) {
    std::string known;
    for (const auto& [name, entry] : barrier_catalog()) {
      known += known.empty() ? name : ", " + name;
    }
    throw ConfigError("unknown barrier '" + bcfg.name + "' (known: " + known +
                      ")");
  }
  if (it->second.model_name != model->name()) {
    throw ConfigError("barrier '" + bcfg.name + "' requires model " +
                      it->second.model_name + ", scenario uses " +
                      model->name());
  }
  const int degree = bcfg.degree > 0 ? bcfg.degree : it->second.default_degree;
  return as_config_error([&] {
    return IccbfSpec(model, make_barrier(*model, bcfg), degree, bcfg.params);
  });
}

struct RunMetrics {
  double min_b0 = std::numeric_limits<double>::infinity();
  double min_inner_margin = std::numeric_limits<double>::infinity();
  double min_feasibility_margin = std::numeric_limits<double>::infinity();
  std::optional<double> time_to_goal;
  double filter_active_fraction = 0.0;
};

nlohmann::json metrics_json(const ScenarioConfig& cfg, const RunMetrics& m,
                            long steps) {
  nlohmann::json j;
  j["model"] = cfg.model_name;
  j["barrier"] = cfg.barrier.name;
  j["seed"] = cfg.seed;
  j["dt"] = cfg.dt;
  j["duration"] = cfg.duration;
  j["steps"] = steps;
  j["min_b0"] = m.min_b0;
  j["min_inner_margin"] = m.min_inner_margin;
  j["min_feasibility_margin"] = m.min_feasibility_margin;
  j["time_to_goal"] = m.time_to_goal ? nlohmann::json(*m.time_to_goal)
                                     : nlohmann::json(nullptr);
  j["filter_active_fraction"] = m.filter_active_fraction;
  return j;
}

void write_trace(const std::string& path, const IccbfSpec& spec,
                 const std::vector<StepRecord>& steps,
                 const std::map<long, int>& event_flags) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write trace: " + path);
  }
  const int n = spec.model->state_dim();
  const int m = spec.model->input_dim();
  const int r = spec.degree;
  out << "t";
  for (int i = 0; i < n; ++i) out << ",x_" << i;
  for (int j = 0; j < m; ++j) out << ",u_" << j;
  for (int i = 0; i < r; ++i) out << ",b_" << i;
  out << ",feas_margin,inner_margin";
  for (int i = 1; i <= r; ++i) out << ",k_" << i;
  out << ",event\n";
  long idx = 0;
  for (const StepRecord& s : steps) {
    out << fmt(s.t);
    for (int i = 0; i < n; ++i) out << "," << fmt(s.x[i]);
    for (int j = 0; j < m; ++j) out << "," << fmt(s.u[j]);
    for (int i = 0; i < r; ++i) out << "," << fmt(s.stack[i]);
    out << "," << fmt(s.feasibility_margin) << "," << fmt(s.inner_margin);
    for (int i = 0; i < r; ++i) out << "," << fmt(s.params[i]);
    const auto flag = event_flags.find(idx);
    out << "," << (flag == event_flags.end() ? 0 : flag->second) << "\n";
    ++idx;
  }
}

void ensure_out_dir(const ScenarioConfig& cfg) {
  fs::create_directories(cfg.out_dir);
}

std::string out_path(const ScenarioConfig& cfg, const char* name) {
  return (fs::path(cfg.out_dir) / name).string();
}

RunMetrics collect_metrics(const ScenarioConfig& cfg, const IccbfSpec& spec,
                           const std::vector<StateVec>& trajectory,
                           const std::vector<StepRecord>& steps) {
  RunMetrics m;
  const StateVec target = cfg.success_state ? *cfg.success_state : cfg.goal;
  long modified = 0;
  for (const StepRecord& s : steps) {
    m.min_inner_margin = std::min(m.min_inner_margin, s.inner_margin);
    m.min_feasibility_margin =
        std::min(m.min_feasibility_margin, s.feasibility_margin);
    if (s.filter_modified) ++modified;
  }
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    m.min_b0 = std::min(m.min_b0, eval_level(spec, 0, trajectory[i]));
    if (!m.time_to_goal &&
        spec.model->goal_distance(target, trajectory[i]) <=
            cfg.success_distance) {
      m.time_to_goal = static_cast<double>(i) * cfg.dt;
    }
  }
  if (!steps.empty()) {
    m.filter_active_fraction =
        static_cast<double>(modified) / static_cast<double>(steps.size());
  }
  return m;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write " + path);
  }
  out << j.dump(2) << "\n";
}

}  // namespace

CandidateBarrier make_barrier(const DynamicsModel& model,
                              const BarrierConfig& cfg) {
  CandidateBarrier b;
  b.name = cfg.name;
  const int n = model.state_dim();
  if (cfg.name == "position_wall") {
    const double wall = constant_or(cfg, "wall", 1.0);
    b.value = [wall](const StateVec& x) { return wall - x[0]; };
    b.analytic_gradient = [n](const StateVec&) {
      StateVec g = StateVec::Zero(n);
      g[0] = -1.0;
      return g;
    };
  } else if (cfg.name == "velocity_limit") {
    const double v_max = constant_or(cfg, "v_max", 1.0);
    b.value = [v_max](const StateVec& x) { return v_max - x[1]; };
    b.analytic_gradient = [n](const StateVec&) {
      StateVec g = StateVec::Zero(n);
      g[1] = -1.0;
      return g;
    };
  } else if (cfg.name == "keepout_disc") {
    const double cx = constant_or(cfg, "cx", 0.0);
    const double cy = constant_or(cfg, "cy", 0.0);
    const double radius = constant_or(cfg, "radius", 1.0);
    b.value = [cx, cy, radius](const StateVec& x) {
      const double dx = x[0] - cx;
      const double dy = x[1] - cy;
      return dx * dx + dy * dy - radius * radius;
    };
    b.analytic_gradient = [cx, cy, n](const StateVec& x) {
      StateVec g = StateVec::Zero(n);
      g[0] = 2.0 * (x[0] - cx);
      g[1] = 2.0 * (x[1] - cy);
      return g;
    };
  } else if (cfg.name == "altitude_floor") {
    const double z_min = constant_or(cfg, "z_min", 0.5);
    b.value = [z_min](const StateVec& x) { return x[1] - z_min; };
    b.analytic_gradient = [n](const StateVec&) {
      StateVec g = StateVec::Zero(n);
      g[1] = 1.0;
      return g;
    };
  } else if (cfg.name == "descent_rate") {
    const double v_down_max = constant_or(cfg, "v_down_max", 3.0);
    b.value = [v_down_max](const StateVec& x) { return x[3] + v_down_max; };
    b.analytic_gradient = [n](const StateVec&) {
      StateVec g = StateVec::Zero(n);
      g[3] = 1.0;
      return g;
    };
  } else {
    throw ConfigError("unknown barrier '" + cfg.name + "'");
  }
  return b;
}

ScenarioConfig load_scenario(const std::string& path) {
  const toml::Document doc = toml::parse_file(path);
  ScenarioConfig cfg;

  cfg.model_name =
      doc.at("scenario", "model").as_string("scenario.model");
  cfg.x0 = require_state(doc, "scenario", "x0");
  cfg.goal = require_state(doc, "scenario", "goal");
  cfg.gains.kp = doc.get_double("scenario", "kp", 1.0);
  cfg.gains.kd = doc.get_double("scenario", "kd", 1.0);
  cfg.duration = doc.get_double("scenario", "duration", 10.0);
  cfg.dt = doc.get_double("scenario", "dt", 0.01);
  cfg.seed = doc.has("scenario", "seed")
                 ? doc.at("scenario", "seed").as_u64("scenario.seed")
                 : 0;
  cfg.success_distance = doc.get_double("scenario", "success_distance", 0.1);
  if (doc.has("scenario", "success_state")) {
    cfg.success_state = require_state(doc, "scenario", "success_state");
  }

  cfg.barrier = load_barrier_section(doc, "barrier");
  if (doc.has("barrier2")) {
    cfg.extra_barrier = load_barrier_section(doc, "barrier2");
  }

  AdaptationConfig& a = cfg.adaptation;
  a.horizon = doc.get_double("adaptation", "horizon", a.horizon);
  a.period = doc.get_double("adaptation", "period", a.period);
  a.candidate_count = static_cast<int>(
      doc.get_int("adaptation", "candidates", a.candidate_count));
  a.proposal_spread =
      doc.get_double("adaptation", "spread", a.proposal_spread);
  a.epistemic_threshold = doc.get_double("adaptation", "epistemic_threshold",
                                         a.epistemic_threshold);
  a.confidence_multiplier = doc.get_double(
      "adaptation", "confidence_multiplier", a.confidence_multiplier);
  a.epsilon = doc.get_double("adaptation", "epsilon", a.epsilon);
  a.oracle = doc.get_bool("adaptation", "oracle", false);
  a.confirm = doc.get_bool("adaptation", "confirm", true);
  a.dt = cfg.dt;

  if (doc.has("data")) {
    DataGenConfig d;
    d.rows = static_cast<int>(doc.get_int("data", "rows", d.rows));
    d.x0_min = require_state(doc, "data", "x0_min");
    d.x0_max = require_state(doc, "data", "x0_max");
    d.goal_min = require_state(doc, "data", "goal_min");
    d.goal_max = require_state(doc, "data", "goal_max");
    d.k_min = to_eigen(doc.at("data", "k_min").as_array("data.k_min"));
    d.k_max = to_eigen(doc.at("data", "k_max").as_array("data.k_max"));
    cfg.datagen = std::move(d);
  }

  TrainConfig& t = cfg.train;
  t.members = static_cast<int>(doc.get_int("penn", "members", t.members));
  if (doc.has("penn", "hidden")) {
    t.hidden.clear();
    for (double h : doc.at("penn", "hidden").as_array("penn.hidden")) {
      t.hidden.push_back(static_cast<int>(h));
    }
  }
  t.epochs = static_cast<int>(doc.get_int("penn", "epochs", t.epochs));
  t.batch = static_cast<int>(doc.get_int("penn", "batch", t.batch));
  t.learning_rate =
      doc.get_double("penn", "learning_rate", t.learning_rate);

  if (doc.has("validate", "x0")) {
    cfg.validate_x0 = require_state(doc, "validate", "x0");
  }
  if (doc.has("validate", "k")) {
    cfg.validate_params = as_config_error([&] {
      return ClassKParams(to_eigen(doc.at("validate", "k").as_array("validate.k")));
    });
  }

  cfg.out_dir = doc.get_string("output", "dir", cfg.out_dir);

  // Fail on anything structurally wrong before a stage starts.
  if (!(cfg.dt > 0.0)) throw ConfigError("scenario.dt must be positive");
  if (!(cfg.duration > 0.0)) {
    throw ConfigError("scenario.duration must be positive");
  }
  if (!(cfg.gains.kp > 0.0) || !(cfg.gains.kd > 0.0)) {
    throw ConfigError("scenario gains kp, kd must be positive");
  }
  const auto model = as_config_error([&] { return make_model(cfg.model_name); });
  if (cfg.x0.size() != model->state_dim() ||
      cfg.goal.size() != model->state_dim()) {
    throw ConfigError("scenario.x0/goal must have length " +
                      std::to_string(model->state_dim()) + " for model " +
                      cfg.model_name);
  }
  make_spec(model, cfg.barrier);
  if (cfg.extra_barrier) make_spec(model, *cfg.extra_barrier);
  as_config_error([&] {
    a.validate();
    return 0;
  });
  if (cfg.datagen) {
    const DataGenConfig& d = *cfg.datagen;
    const int n = model->state_dim();
    if (d.x0_min.size() != n || d.x0_max.size() != n ||
        d.goal_min.size() != n || d.goal_max.size() != n) {
      throw ConfigError("data x0/goal ranges must have length " +
                        std::to_string(n));
    }
    if (d.k_min.size() != cfg.barrier.params.degree() ||
        d.k_max.size() != cfg.barrier.params.degree()) {
      throw ConfigError("data k ranges must match the barrier degree");
    }
    if ((d.k_min.array() <= 0.0).any()) {
      throw ConfigError("data.k_min must be strictly positive");
    }
  }
  return cfg;
}

IccbfSpec build_spec(const ScenarioConfig& cfg) {
  return make_spec(make_model(cfg.model_name), cfg.barrier);
}

IccbfSpec build_extra_spec(const ScenarioConfig& cfg) {
  if (!cfg.extra_barrier) {
    throw ConfigError("scenario has no [barrier2] section");
  }
  return make_spec(make_model(cfg.model_name), *cfg.extra_barrier);
}

FilteredPolicy build_policy(const ScenarioConfig& cfg) {
  std::vector<IccbfSpec> pre;
  if (cfg.extra_barrier) pre.push_back(build_extra_spec(cfg));
  return FilteredPolicy(build_spec(cfg), cfg.goal, cfg.gains, std::move(pre));
}

int run_simulate(const ScenarioConfig& cfg) {
  const IccbfSpec spec = build_spec(cfg);
  const FilteredPolicy policy = build_policy(cfg);

  const long total = std::max<long>(1, std::lround(cfg.duration / cfg.dt));
  std::vector<StateVec> trajectory;
  std::vector<StepRecord> steps;
  trajectory.reserve(static_cast<std::size_t>(total) + 1);
  StateVec x = cfg.x0;
  trajectory.push_back(x);
  for (long s = 0; s < total; ++s) {
    const FilterResult res = policy.filter_at(x);
    StepRecord rec;
    rec.t = static_cast<double>(s) * cfg.dt;
    rec.x = x;
    rec.u = res.input;
    rec.stack = eval_stack(spec, x).values;
    rec.feasibility_margin = kcand_feasible(spec, x).margin;
    rec.inner_margin = rec.stack.minCoeff();
    rec.params = cfg.barrier.params;
    rec.filter_modified = res.modified;
    rec.slack = res.slack_used;
    steps.push_back(std::move(rec));
    x = step(*spec.model, x, res.input, cfg.dt);
    trajectory.push_back(x);
  }

  ensure_out_dir(cfg);
  write_trace(out_path(cfg, files::kTrace), spec, steps, {});
  const RunMetrics m = collect_metrics(cfg, spec, trajectory, steps);
  nlohmann::json summary = metrics_json(cfg, m, total);
  summary["mode"] = "simulate";
  summary["params"] = to_std(cfg.barrier.params.coeffs);
  write_json(out_path(cfg, files::kSummary), summary);
  return 0;
}

int run_generate_data(const ScenarioConfig& cfg) {
  if (!cfg.datagen) {
    throw ConfigError("generate-data needs a [data] section");
  }
  const DataGenConfig& d = *cfg.datagen;
  const IccbfSpec spec_template = build_spec(cfg);

  const ScenarioSampler scenario_sampler =
      [&d](Rng& rng) -> std::pair<StateVec, StateVec> {
    StateVec x0(d.x0_min.size());
    StateVec goal(d.goal_min.size());
    for (int i = 0; i < x0.size(); ++i) {
      x0[i] = rng.uniform(d.x0_min[i], d.x0_max[i]);
    }
    for (int i = 0; i < goal.size(); ++i) {
      goal[i] = rng.uniform(d.goal_min[i], d.goal_max[i]);
    }
    return {x0, goal};
  };
  const ParamSampler param_sampler = [&d](Rng& rng) {
    Eigen::VectorXd k(d.k_min.size());
    for (int i = 0; i < k.size(); ++i) {
      k[i] = rng.log_uniform(d.k_min[i], d.k_max[i]);
    }
    return ClassKParams(k);
  };

  const Dataset data = generate_dataset(
      spec_template, cfg.gains, scenario_sampler, param_sampler, d.rows,
      cfg.adaptation.horizon, cfg.dt, cfg.adaptation.epsilon, cfg.seed);

  nlohmann::json echo;
  echo["model"] = cfg.model_name;
  echo["barrier"] = cfg.barrier.name;
  echo["rows_requested"] = d.rows;
  echo["horizon"] = cfg.adaptation.horizon;
  echo["dt"] = cfg.dt;
  echo["epsilon"] = cfg.adaptation.epsilon;
  echo["x0_min"] = to_std(d.x0_min);
  echo["x0_max"] = to_std(d.x0_max);
  echo["goal_min"] = to_std(d.goal_min);
  echo["goal_max"] = to_std(d.goal_max);
  echo["k_min"] = to_std(d.k_min);
  echo["k_max"] = to_std(d.k_max);
  echo["kp"] = cfg.gains.kp;
  echo["kd"] = cfg.gains.kd;

  ensure_out_dir(cfg);
  save_dataset(data, out_path(cfg, files::kDataset),
               out_path(cfg, files::kDatasetMeta), echo);
  if (data.rejected_rows > 0) {
    std::fprintf(stderr, "W_DATA: %d of %d rows exhausted their samplers\n",
                 data.rejected_rows, d.rows);
  }
  return 0;
}

int run_train(const ScenarioConfig& cfg) {
  const std::string csv = out_path(cfg, files::kDataset);
  const std::string meta = out_path(cfg, files::kDatasetMeta);
  if (!fs::exists(csv)) throw ConfigError("missing dataset: " + csv);
  if (!fs::exists(meta)) throw ConfigError("missing dataset sidecar: " + meta);
  const Dataset data = load_dataset(csv, meta);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = cfg.seed;
  const EnsembleModel model = as_config_error([&] { return train(data, tcfg); });
  ensure_out_dir(cfg);
  model.save(out_path(cfg, files::kModel));
  return 0;
}

int run_adapt(const ScenarioConfig& cfg, bool oracle_override) {
  AdaptationConfig acfg = cfg.adaptation;
  acfg.seed = cfg.seed;
  acfg.dt = cfg.dt;
  if (oracle_override) acfg.oracle = true;

  EnsembleModel ensemble;
  const EnsembleModel* ensemble_ptr = nullptr;
  if (!acfg.oracle) {
    const std::string model_path = out_path(cfg, files::kModel);
    if (!fs::exists(model_path)) {
      throw ConfigError("missing model file: " + model_path +
                        " (train first or use --oracle)");
    }
    ensemble = EnsembleModel::load(model_path);
    ensemble_ptr = &ensemble;
  }

  const IccbfSpec spec = build_spec(cfg);
  std::vector<IccbfSpec> pre;
  if (cfg.extra_barrier) pre.push_back(build_extra_spec(cfg));

  const AdaptResult result =
      as_config_error([&] {
        return adapt_run(spec, ensemble_ptr, cfg.goal, cfg.x0, cfg.duration,
                         cfg.gains, acfg, pre);
      });

  ensure_out_dir(cfg);
  const long steps_per_event =
      std::max<long>(1, std::lround(acfg.period / acfg.dt));
  std::map<long, int> event_flags;
  long changes = 0, fallbacks = 0, frozen = 0;
  for (const AdaptationEvent& e : result.log.events) {
    int flag = 1;
    if (e.frozen) {
      flag = 4;
      ++frozen;
    } else if (e.fallback) {
      flag = 3;
      ++fallbacks;
    } else if (e.changed) {
      flag = 2;
      ++changes;
    }
    event_flags[e.index * steps_per_event] = flag;
  }
  write_trace(out_path(cfg, files::kTrace), spec, result.log.steps,
              event_flags);
  {
    std::ofstream jsonl(out_path(cfg, files::kAdaptationLog));
    if (!jsonl) {
      throw std::runtime_error("cannot write adaptation log");
    }
    result.log.write_jsonl(jsonl);
  }

  const RunMetrics m =
      collect_metrics(cfg, spec, result.trajectory, result.log.steps);
  nlohmann::json summary = metrics_json(
      cfg, m, static_cast<long>(result.log.steps.size()));
  summary["mode"] = acfg.oracle ? "adapt-oracle" : "adapt-penn";
  summary["params_initial"] = to_std(cfg.barrier.params.coeffs);
  summary["params_final"] =
      to_std(result.log.events.back().chosen.coeffs);
  summary["events"] = result.log.events.size();
  summary["parameter_changes"] = changes;
  summary["fallbacks"] = fallbacks;
  summary["frozen_events"] = frozen;
  write_json(out_path(cfg, files::kSummary), summary);
  return 0;
}

int run_validate_param(const ScenarioConfig& cfg, std::ostream& out) {
  IccbfSpec spec = build_spec(cfg);
  StateVec x0 = cfg.x0;
  if (cfg.validate_params) {
    spec = as_config_error([&] { return spec.with_params(*cfg.validate_params); });
  }
  if (cfg.validate_x0) x0 = *cfg.validate_x0;
  if (x0.size() != spec.model->state_dim()) {
    throw ConfigError("validate.x0 must have length " +
                      std::to_string(spec.model->state_dim()));
  }

  std::vector<IccbfSpec> pre;
  if (cfg.extra_barrier) pre.push_back(build_extra_spec(cfg));
  const FilteredPolicy policy(spec, cfg.goal, cfg.gains, pre);

  nlohmann::json j;
  j["model"] = cfg.model_name;
  j["barrier"] = cfg.barrier.name;
  j["params"] = to_std(spec.params.coeffs);
  j["x0"] = to_std(x0);
  j["horizon"] = cfg.adaptation.horizon;
  const double margin = inner_set_margin(spec, x0);
  j["inner_margin_at_x0"] = margin;
  if (margin < -cfg.adaptation.epsilon) {
    j["validated"] = false;
    j["report"] = nullptr;
    j["reason"] = "x0 outside the inner safe set";
  } else {
    const ValidationReport report =
        validate_horizon(spec, policy, x0, cfg.adaptation.horizon, cfg.dt,
                         cfg.adaptation.epsilon);
    j["validated"] = report.validated;
    j["report"] = report.to_json();
  }
  out << j.dump(2) << "\n";
  return 0;
}

}  // namespace icc
