#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "icc/penn.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace icc;

namespace {

// y0 = sin(3x) with noise growing away from the origin, y1 = 0.5 x
Dataset synthetic_sine(int n, std::uint64_t seed) {
  Dataset data;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    const double sigma = 0.05 + 0.25 * std::abs(x);
    DatasetRow row;
    row.features = Eigen::VectorXd::Constant(1, x);
    row.safety_target = std::sin(3.0 * x) + sigma * rng.normal();
    row.progress_target = 0.5 * x + 0.05 * rng.normal();
    row.validated = row.safety_target >= 0.0;
    data.rows.push_back(std::move(row));
  }
  data.compute_stats();
  return data;
}

Dataset homoscedastic(int n, double sigma, std::uint64_t seed) {
  Dataset data;
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    DatasetRow row;
    row.features = Eigen::VectorXd::Constant(1, x);
    row.safety_target = 0.8 * x + sigma * rng.normal();
    row.progress_target = -0.4 * x + sigma * rng.normal();
    row.validated = true;
    data.rows.push_back(std::move(row));
  }
  data.compute_stats();
  return data;
}

double mean_nll(const MlpMember& member, const Dataset& data) {
  Eigen::MatrixXd X(1, static_cast<long>(data.rows.size()));
  Eigen::MatrixXd T(2, static_cast<long>(data.rows.size()));
  for (long i = 0; i < X.cols(); ++i) {
    X(0, i) = (data.rows[i].features[0] - data.feature_mean[0]) /
              data.feature_std[0];
    T(0, i) = data.rows[i].safety_target;
    T(1, i) = data.rows[i].progress_target;
  }
  return nll_batch(member, X, T, nullptr);
}

// flatten all parameters of a member into one vector
Eigen::VectorXd flatten(const MlpMember& m) {
  long total = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    total += m.weights[l].size() + m.biases[l].size();
  }
  Eigen::VectorXd out(total);
  long at = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    out.segment(at, m.weights[l].size()) =
        Eigen::Map<const Eigen::VectorXd>(m.weights[l].data(),
                                          m.weights[l].size());
    at += m.weights[l].size();
    out.segment(at, m.biases[l].size()) = m.biases[l];
    at += m.biases[l].size();
  }
  return out;
}

}  // namespace

TEST_CASE("zero network forwards to zeros") {
  Rng rng(1);
  MlpMember member = MlpMember::make(3, {4, 4}, rng);
  for (auto& w : member.weights) w.setZero();
  for (auto& b : member.biases) b.setZero();
  const MlpMember::Output out = member.forward(Eigen::Vector3d(1.0, -2.0, 0.5));
  CHECK(out.means.norm() == 0.0);
  CHECK(out.log_vars.norm() == 0.0);  // clamp inactive at 0
}

TEST_CASE("hand-set single-unit network") {
  Rng rng(2);
  MlpMember member = MlpMember::make(1, {1, 1}, rng);
  // w = 1 everywhere on the mean-0 path, zero elsewhere
  member.weights[0].setConstant(1.0);
  member.biases[0].setZero();
  member.weights[1].setConstant(1.0);
  member.biases[1].setZero();
  member.weights[2].setZero();
  member.weights[2](0, 0) = 1.0;  // mean_0 reads the last hidden unit
  member.biases[2].setZero();
  member.biases[2][3] = 0.25;  // log_var_1 is a constant

  const double x = 0.7;
  const MlpMember::Output out =
      member.forward(Eigen::VectorXd::Constant(1, x));
  CHECK(out.means[0] ==
        doctest::Approx(std::tanh(std::tanh(x))).epsilon(1e-15));
  CHECK(out.means[1] == 0.0);
  CHECK(out.log_vars[0] == 0.0);
  CHECK(out.log_vars[1] == 0.25);

  // determinism on repeated calls
  const MlpMember::Output again =
      member.forward(Eigen::VectorXd::Constant(1, x));
  CHECK(again.means == out.means);
  CHECK(again.log_vars == out.log_vars);
}

TEST_CASE("nll loss values") {
  MlpMember::Output pred;
  pred.means = {1.0, -2.0};
  pred.log_vars = {0.0, 0.0};
  CHECK(nll_loss(pred, {1.0, -2.0}) == 0.0);
  CHECK(nll_loss(pred, {2.0, -2.0}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(nll_loss(pred, {2.0, -3.0}) == doctest::Approx(1.0).epsilon(1e-15));

  // with residual 1, the minimizing log-variance is 0 (calculus oracle):
  // scan a grid and check the minimum sits at lv = 0
  double best_lv = -5.0;
  double best = std::numeric_limits<double>::infinity();
  for (double lv = -5.0; lv <= 5.0; lv += 1e-3) {
    const double loss = 0.5 * (lv + 1.0 * std::exp(-lv));
    if (loss < best) {
      best = loss;
      best_lv = lv;
    }
  }
  CHECK(std::abs(best_lv) <= 1e-3 + 1e-12);
}

TEST_CASE("backprop matches finite differences") {
  Rng seeds(77);
  for (int net = 0; net < 20; ++net) {
    Rng rng(seeds.next_u64());
    const int in_dim = 1 + static_cast<int>(rng.index(4));
    const std::vector<int> hidden = {2 + static_cast<int>(rng.index(4)),
                                     2 + static_cast<int>(rng.index(4))};
    MlpMember member = MlpMember::make(in_dim, hidden, rng);
    const long batch = 1 + static_cast<long>(rng.index(8));
    Eigen::MatrixXd X(in_dim, batch);
    Eigen::MatrixXd T(2, batch);
    for (long c = 0; c < batch; ++c) {
      for (int i = 0; i < in_dim; ++i) X(i, c) = rng.uniform(-2, 2);
      T(0, c) = rng.uniform(-1, 1);
      T(1, c) = rng.uniform(-1, 1);
    }

    MlpMember analytic;
    nll_batch(member, X, T, &analytic);
    Eigen::VectorXd ga = flatten(analytic);

    // central differences over every parameter
    const double h = 1e-5;
    Eigen::VectorXd gf(ga.size());
    long at = 0;
    for (std::size_t l = 0; l < member.weights.size(); ++l) {
      for (long i = 0; i < member.weights[l].size(); ++i) {
        MlpMember probe = member;
        probe.weights[l].data()[i] += h;
        const double up = nll_batch(probe, X, T, nullptr);
        probe.weights[l].data()[i] -= 2 * h;
        const double dn = nll_batch(probe, X, T, nullptr);
        gf[at++] = (up - dn) / (2 * h);
      }
      for (long i = 0; i < member.biases[l].size(); ++i) {
        MlpMember probe = member;
        probe.biases[l][i] += h;
        const double up = nll_batch(probe, X, T, nullptr);
        probe.biases[l][i] -= 2 * h;
        const double dn = nll_batch(probe, X, T, nullptr);
        gf[at++] = (up - dn) / (2 * h);
      }
    }
    const double rel = (ga - gf).norm() / (ga.norm() + gf.norm() + 1e-12);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("training reduces the nll") {
  const Dataset data = synthetic_sine(600, 5);
  TrainConfig cfg;
  cfg.members = 2;
  cfg.hidden = {16, 16};
  cfg.epochs = 80;
  cfg.seed = 3;
  const EnsembleModel model = train(data, cfg);

  Rng rng(mix_seed(cfg.seed, 0x10000ULL));
  const MlpMember fresh = MlpMember::make(1, cfg.hidden, rng);
  const double before = mean_nll(fresh, data);
  const double after = mean_nll(model.members[0], data);
  CHECK(after < 0.5 * before);
}

TEST_CASE("training preconditions and determinism") {
  CHECK_THROWS_AS(train(synthetic_sine(5, 1), TrainConfig{}),
                  std::invalid_argument);

  const Dataset data = synthetic_sine(120, 9);
  TrainConfig cfg;
  cfg.members = 2;
  cfg.hidden = {8};
  cfg.epochs = 15;
  cfg.seed = 42;
  const EnsembleModel a = train(data, cfg);
  const EnsembleModel b = train(data, cfg);
  for (std::size_t m = 0; m < a.members.size(); ++m) {
    for (std::size_t l = 0; l < a.members[m].weights.size(); ++l) {
      CHECK(a.members[m].weights[l] == b.members[m].weights[l]);
      CHECK(a.members[m].biases[l] == b.members[m].biases[l]);
    }
  }
}

TEST_CASE("prediction decomposition") {
  Rng rng(4);
  EnsembleModel model;
  model.feature_mean = Eigen::VectorXd::Zero(1);
  model.feature_std = Eigen::VectorXd::Ones(1);

  // two hand-built constant members: means 0 and 2, log-vars 0
  for (double mean0 : {0.0, 2.0}) {
    MlpMember m = MlpMember::make(1, {1}, rng);
    m.weights[0].setZero();
    m.biases[0].setZero();
    m.weights[1].setZero();
    m.biases[1].setZero();
    m.biases[1][0] = mean0;
    model.members.push_back(std::move(m));
  }
  const EnsemblePrediction p = model.predict(Eigen::VectorXd::Zero(1));
  CHECK(p.mean[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p.epistemic_var[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p.aleatoric_var[0] == doctest::Approx(1.0).epsilon(1e-15));  // exp(0)
  CHECK(p.total_var()[0] == p.aleatoric_var[0] + p.epistemic_var[0]);

  // identical members: epistemic variance is exactly zero
  EnsembleModel twins;
  twins.feature_mean = model.feature_mean;
  twins.feature_std = model.feature_std;
  twins.members = {model.members[0], model.members[0]};
  const EnsemblePrediction q = twins.predict(Eigen::VectorXd::Zero(1));
  CHECK(q.epistemic_var[0] == 0.0);
  CHECK(q.epistemic_var[1] == 0.0);
}

TEST_CASE("mixture variance equals the decomposition on random members") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int m_count = 2 + static_cast<int>(rng.index(5));
    std::vector<double> means, vars;
    for (int m = 0; m < m_count; ++m) {
      means.push_back(rng.uniform(-2, 2));
      vars.push_back(std::exp(rng.uniform(-2, 1)));
    }
    double mean = 0, alea = 0;
    for (int m = 0; m < m_count; ++m) {
      mean += means[m];
      alea += vars[m];
    }
    mean /= m_count;
    alea /= m_count;
    double epi = 0;
    for (int m = 0; m < m_count; ++m) {
      epi += (means[m] - mean) * (means[m] - mean);
    }
    epi /= m_count;
    // total variance of the uniform Gaussian mixture
    double second = 0;
    for (int m = 0; m < m_count; ++m) {
      second += vars[m] + means[m] * means[m];
    }
    second /= m_count;
    const double total = second - mean * mean;
    CHECK(total == doctest::Approx(alea + epi).epsilon(1e-12));
  }
}

TEST_CASE("aleatoric calibration on homoscedastic noise") {
  const double sigma = 0.3;
  const Dataset data = homoscedastic(1500, sigma, 6);
  TrainConfig cfg;
  cfg.members = 3;
  cfg.hidden = {16, 16};
  cfg.epochs = 120;
  cfg.seed = 8;
  const EnsembleModel model = train(data, cfg);

  double avg_alea = 0.0;
  int count = 0;
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-0.9, 0.9);
    const EnsemblePrediction p =
        model.predict(Eigen::VectorXd::Constant(1, x));
    avg_alea += p.aleatoric_var[0];
    ++count;
  }
  avg_alea /= count;
  CHECK(avg_alea >= 0.5 * sigma * sigma);
  CHECK(avg_alea <= 2.0 * sigma * sigma);
}

TEST_CASE("epistemic variance grows out of distribution") {
  const Dataset data = synthetic_sine(2000, 17);
  TrainConfig cfg;
  cfg.members = 5;
  cfg.hidden = {64, 64};
  cfg.epochs = 200;
  cfg.seed = 17;
  const EnsembleModel model = train(data, cfg);

  Rng rng(18);
  double in_dist = 0.0, out_dist = 0.0;
  const int samples = 200;
  for (int i = 0; i < samples; ++i) {
    const double x_in = rng.uniform(-1.0, 1.0);
    const double x_out = rng.uniform(-1.0, 1.0) + 6.0;  // 3 region-widths away
    in_dist += model.predict(Eigen::VectorXd::Constant(1, x_in)).epistemic_var[0];
    out_dist +=
        model.predict(Eigen::VectorXd::Constant(1, x_out)).epistemic_var[0];
  }
  CHECK(out_dist / samples >= 2.0 * (in_dist / samples));
}

TEST_CASE("save / load round trip") {
  namespace fs = std::filesystem;
  const Dataset data = synthetic_sine(150, 21);
  TrainConfig cfg;
  cfg.members = 2;
  cfg.hidden = {8};
  cfg.epochs = 10;
  cfg.seed = 11;
  const EnsembleModel model = train(data, cfg);

  const fs::path dir = fs::temp_directory_path() / "icc_penn_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.json").string();
  model.save(path);
  const EnsembleModel loaded = EnsembleModel::load(path);

  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd f = Eigen::VectorXd::Constant(1, rng.uniform(-3, 3));
    const EnsemblePrediction a = model.predict(f);
    const EnsemblePrediction b = loaded.predict(f);
    CHECK(a.mean == b.mean);  // bitwise
    CHECK(a.aleatoric_var == b.aleatoric_var);
    CHECK(a.epistemic_var == b.epistemic_var);
  }

  // wrong version is rejected, naming the expected one
  const std::string bad_version = (dir / "bad_version.json").string();
  {
    nlohmann::json j;
    std::ifstream in(path);
    in >> j;
    j["version"] = "penn-0";
    std::ofstream out(bad_version);
    out << j.dump();
  }
  CHECK_THROWS_WITH_AS(EnsembleModel::load(bad_version),
                       doctest::Contains("penn-1"), std::runtime_error);

  // truncated file: parse error, no partial model
  const std::string truncated = (dir / "truncated.json").string();
  {
    std::ifstream in(path, std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary);
    out << text.substr(0, text.size() / 2);
  }
  CHECK_THROWS_AS(EnsembleModel::load(truncated), std::runtime_error);
  fs::remove_all(dir);
}
