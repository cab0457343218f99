#include "icc/penn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace icc {

namespace {

constexpr int kOutputs = 2 * MlpMember::kTargets;  // means then log-vars

std::vector<double> to_std(const Eigen::MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

}  // namespace

MlpMember MlpMember::make(int in_dim, const std::vector<int>& hidden,
                          Rng& rng) {
  if (in_dim < 1) {
    throw std::invalid_argument("MlpMember: in_dim must be >= 1");
  }
  std::vector<int> widths;
  widths.push_back(in_dim);
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("MlpMember: empty hidden layer");
    widths.push_back(h);
  }
  widths.push_back(kOutputs);

  MlpMember member;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int rows = widths[l + 1];
    const int cols = widths[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    Eigen::MatrixXd w(rows, cols);
    for (int i = 0; i < w.size(); ++i) {
      w.data()[i] = rng.uniform(-scale, scale);
    }
    member.weights.push_back(std::move(w));
    member.biases.push_back(Eigen::VectorXd::Zero(rows));
  }
  return member;
}

Eigen::MatrixXd MlpMember::forward_batch(const Eigen::MatrixXd& X) const {
  if (X.rows() != in_dim()) {
    throw std::invalid_argument("MlpMember: feature dimension " +
                                std::to_string(X.rows()) + " != " +
                                std::to_string(in_dim()));
  }
  Eigen::MatrixXd a = X;
  const std::size_t layers = weights.size();
  for (std::size_t l = 0; l < layers; ++l) {
    a = (weights[l] * a).colwise() + biases[l];
    if (l + 1 < layers) a = a.array().tanh();
  }
  return a;
}

MlpMember::Output MlpMember::forward(const Eigen::VectorXd& features) const {
  const Eigen::MatrixXd y = forward_batch(features);
  Output out;
  out.means = y.col(0).head<2>();
  out.log_vars = y.col(0).tail<2>().cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
  return out;
}

double nll_loss(const MlpMember::Output& pred, const Eigen::Vector2d& target) {
  if (!target.allFinite()) {
    throw std::invalid_argument("nll_loss: non-finite target");
  }
  double loss = 0.0;
  for (int t = 0; t < MlpMember::kTargets; ++t) {
    const double lv = pred.log_vars[t];
    const double r = target[t] - pred.means[t];
    loss += 0.5 * (lv + r * r * std::exp(-lv));
  }
  return loss;
}

double nll_batch(const MlpMember& member, const Eigen::MatrixXd& X,
                 const Eigen::MatrixXd& targets, MlpMember* grad) {
  const long B = X.cols();
  if (targets.rows() != MlpMember::kTargets || targets.cols() != B) {
    throw std::invalid_argument("nll_batch: target shape mismatch");
  }

  // Forward pass, caching post-activation values per layer.
  const std::size_t layers = member.weights.size();
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = X, acts[l+1] = layer l output
  acts.reserve(layers + 1);
  acts.push_back(X);
  for (std::size_t l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = (member.weights[l] * acts.back()).colwise() +
                        member.biases[l];
    if (l + 1 < layers) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  const Eigen::MatrixXd& y = acts.back();  // kOutputs x B, raw

  double loss = 0.0;
  Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(kOutputs, B);
  for (long c = 0; c < B; ++c) {
    for (int t = 0; t < MlpMember::kTargets; ++t) {
      const double raw_lv = y(MlpMember::kTargets + t, c);
      const bool clamped =
          raw_lv < MlpMember::kLogVarMin || raw_lv > MlpMember::kLogVarMax;
      const double lv = std::clamp(raw_lv, MlpMember::kLogVarMin,
                                   MlpMember::kLogVarMax);
      const double r = targets(t, c) - y(t, c);
      const double inv_var = std::exp(-lv);
      loss += 0.5 * (lv + r * r * inv_var);
      dy(t, c) = -r * inv_var;
      dy(MlpMember::kTargets + t, c) =
          clamped ? 0.0 : 0.5 * (1.0 - r * r * inv_var);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  loss *= inv_b;
  if (!grad) return loss;

  dy *= inv_b;
  grad->weights.assign(layers, Eigen::MatrixXd());
  grad->biases.assign(layers, Eigen::VectorXd());
  Eigen::MatrixXd delta = std::move(dy);
  for (std::size_t l = layers; l-- > 0;) {
    grad->weights[l] = delta * acts[l].transpose();
    grad->biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (member.weights[l].transpose() * delta).eval().cwiseProduct(
          (1.0 - acts[l].array().square()).matrix());
    }
  }
  return loss;
}

EnsemblePrediction EnsembleModel::predict(
    const Eigen::VectorXd& raw_features) const {
  if (members.empty()) {
    throw std::runtime_error("EnsembleModel: no members");
  }
  if (raw_features.size() != feature_mean.size()) {
    throw std::invalid_argument("predict: feature dimension " +
                                std::to_string(raw_features.size()) +
                                " != " + std::to_string(feature_mean.size()));
  }
  const Eigen::VectorXd z =
      (raw_features - feature_mean).cwiseQuotient(feature_std);

  const double inv_m = 1.0 / static_cast<double>(members.size());
  Eigen::Vector2d mean_sum = Eigen::Vector2d::Zero();
  Eigen::Vector2d sq_sum = Eigen::Vector2d::Zero();
  Eigen::Vector2d var_sum = Eigen::Vector2d::Zero();
  for (const MlpMember& member : members) {
    const MlpMember::Output out = member.forward(z);
    mean_sum += out.means;
    sq_sum += out.means.cwiseAbs2();
    var_sum += out.log_vars.array().exp().matrix();
  }
  EnsemblePrediction pred;
  pred.mean = mean_sum * inv_m;
  pred.aleatoric_var = var_sum * inv_m;
  pred.epistemic_var =
      (sq_sum * inv_m - pred.mean.cwiseAbs2()).cwiseMax(0.0);
  return pred;
}

EnsembleModel train(const Dataset& data, const TrainConfig& config) {
  const long n = static_cast<long>(data.rows.size());
  if (n < 10) {
    throw std::invalid_argument("train: need at least 10 rows, got " +
                                std::to_string(n));
  }
  if (config.members < 2) {
    throw std::invalid_argument(
        "train: epistemic variance needs at least 2 members");
  }
  const int f = data.feature_count();

  // Normalized feature matrix and raw target matrix, column per row.
  Eigen::MatrixXd X(f, n);
  Eigen::MatrixXd T(MlpMember::kTargets, n);
  for (long i = 0; i < n; ++i) {
    X.col(i) = (data.rows[i].features - data.feature_mean)
                   .cwiseQuotient(data.feature_std);
    T(0, i) = data.rows[i].safety_target;
    T(1, i) = data.rows[i].progress_target;
  }

  EnsembleModel model;
  model.feature_mean = data.feature_mean;
  model.feature_std = data.feature_std;
  model.config_echo = config;

  const long batch = std::max(1L, static_cast<long>(config.batch));
  for (int m = 0; m < config.members; ++m) {
    Rng rng(mix_seed(config.seed, 0x10000ULL + static_cast<std::uint64_t>(m)));
    MlpMember member = MlpMember::make(f, config.hidden, rng);

    // Bootstrap resample: each member sees its own draw of the rows.
    std::vector<long> boot(n);
    for (long i = 0; i < n; ++i) {
      boot[i] = static_cast<long>(rng.index(static_cast<std::size_t>(n)));
    }

    MlpMember velocity;
    velocity.weights.reserve(member.weights.size());
    velocity.biases.reserve(member.biases.size());
    for (std::size_t l = 0; l < member.weights.size(); ++l) {
      velocity.weights.push_back(
          Eigen::MatrixXd::Zero(member.weights[l].rows(),
                                member.weights[l].cols()));
      velocity.biases.push_back(Eigen::VectorXd::Zero(member.biases[l].size()));
    }

    std::vector<long> order(boot);
    MlpMember grad;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      // Fisher-Yates with the member's own stream
      for (long i = n - 1; i > 0; --i) {
        const long j = static_cast<long>(rng.index(static_cast<std::size_t>(i + 1)));
        std::swap(order[i], order[j]);
      }
      for (long start = 0; start < n; start += batch) {
        const long b = std::min(batch, n - start);
        Eigen::MatrixXd xb(f, b);
        Eigen::MatrixXd tb(MlpMember::kTargets, b);
        for (long c = 0; c < b; ++c) {
          xb.col(c) = X.col(order[start + c]);
          tb.col(c) = T.col(order[start + c]);
        }
        const double loss = nll_batch(member, xb, tb, &grad);
        if (!std::isfinite(loss)) {
          throw std::runtime_error(
              "train: non-finite loss (member " + std::to_string(m) +
              ", epoch " + std::to_string(epoch) + ", batch at row " +
              std::to_string(start) + ")");
        }
        for (std::size_t l = 0; l < member.weights.size(); ++l) {
          velocity.weights[l] = config.momentum * velocity.weights[l] -
                                config.learning_rate * grad.weights[l];
          velocity.biases[l] = config.momentum * velocity.biases[l] -
                               config.learning_rate * grad.biases[l];
          member.weights[l] += velocity.weights[l];
          member.biases[l] += velocity.biases[l];
        }
      }
    }
    model.members.push_back(std::move(member));
  }
  return model;
}

void EnsembleModel::save(const std::string& path) const {
  nlohmann::json j;
  j["version"] = "penn-1";
  j["feature_mean"] = std::vector<double>(
      feature_mean.data(), feature_mean.data() + feature_mean.size());
  j["feature_std"] = std::vector<double>(
      feature_std.data(), feature_std.data() + feature_std.size());
  j["config"] = {{"members", config_echo.members},
                 {"hidden", config_echo.hidden},
                 {"epochs", config_echo.epochs},
                 {"batch", config_echo.batch},
                 {"learning_rate", config_echo.learning_rate},
                 {"momentum", config_echo.momentum},
                 {"seed", config_echo.seed}};
  nlohmann::json members_json = nlohmann::json::array();
  for (const MlpMember& member : members) {
    nlohmann::json mj;
    for (std::size_t l = 0; l < member.weights.size(); ++l) {
      mj["layers"].push_back(
          {{"rows", member.weights[l].rows()},
           {"cols", member.weights[l].cols()},
           {"weights", to_std(member.weights[l])},
           {"biases", std::vector<double>(
                          member.biases[l].data(),
                          member.biases[l].data() + member.biases[l].size())}});
    }
    members_json.push_back(std::move(mj));
  }
  j["members"] = std::move(members_json);

  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("EnsembleModel::save: cannot write " + path);
  }
  out << j.dump(2) << "\n";
}

EnsembleModel EnsembleModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("EnsembleModel::load: cannot open " + path);
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("EnsembleModel::load: parse error in " + path +
                             ": " + e.what());
  }
  if (j.value("version", "") != "penn-1") {
    throw std::runtime_error("EnsembleModel::load: " + path +
                             ": expected version penn-1");
  }

  EnsembleModel model;
  try {
    const auto mean = j.at("feature_mean").get<std::vector<double>>();
    const auto stdv = j.at("feature_std").get<std::vector<double>>();
    model.feature_mean = Eigen::Map<const Eigen::VectorXd>(
        mean.data(), static_cast<long>(mean.size()));
    model.feature_std = Eigen::Map<const Eigen::VectorXd>(
        stdv.data(), static_cast<long>(stdv.size()));
    const nlohmann::json& cfg = j.at("config");
    model.config_echo.members = cfg.at("members").get<int>();
    model.config_echo.hidden = cfg.at("hidden").get<std::vector<int>>();
    model.config_echo.epochs = cfg.at("epochs").get<int>();
    model.config_echo.batch = cfg.at("batch").get<int>();
    model.config_echo.learning_rate = cfg.at("learning_rate").get<double>();
    model.config_echo.momentum = cfg.at("momentum").get<double>();
    model.config_echo.seed = cfg.at("seed").get<std::uint64_t>();
    for (const nlohmann::json& mj : j.at("members")) {
      MlpMember member;
      for (const nlohmann::json& layer : mj.at("layers")) {
        const long rows = layer.at("rows").get<long>();
        const long cols = layer.at("cols").get<long>();
        const auto w = layer.at("weights").get<std::vector<double>>();
        const auto b = layer.at("biases").get<std::vector<double>>();
        if (static_cast<long>(w.size()) != rows * cols ||
            static_cast<long>(b.size()) != rows) {
          throw std::runtime_error("layer shape mismatch");
        }
        member.weights.push_back(
            Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols));
        member.biases.push_back(
            Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
      }
      model.members.push_back(std::move(member));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("EnsembleModel::load: malformed " + path + ": " +
                             e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("EnsembleModel::load: malformed " + path + ": " +
                             e.what());
  }
  if (model.members.size() < 2) {
    throw std::runtime_error("EnsembleModel::load: " + path +
                             ": fewer than 2 members");
  }
  return model;
}

}  // namespace icc
