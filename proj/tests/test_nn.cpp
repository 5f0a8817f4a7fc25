#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <random>

#include "ifenn/nn.hpp"

using namespace ifenn;

namespace {

SequenceTensor random_sequence(int n_steps, int n_points, int n_features, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  SequenceTensor seq;
  for (int t = 0; t < n_steps; ++t) {
    Eigen::MatrixXd m(n_points, n_features);
    for (int i = 0; i < n_points; ++i) {
      for (int j = 0; j < n_features; ++j) m(i, j) = uni(rng);
    }
    seq.steps.push_back(m);
  }
  seq.real_mask.assign(n_steps, 1);
  return seq;
}

// Reference convolution: plain quadruple loop, no padding tricks.
std::vector<Eigen::MatrixXd> conv_naive(const std::vector<Eigen::MatrixXd>& x,
                                        const Eigen::MatrixXd& w, int c_in, int k,
                                        int dil) {
  int T = static_cast<int>(x.size());
  int P = static_cast<int>(x[0].rows());
  int c_out = static_cast<int>(w.rows());
  std::vector<Eigen::MatrixXd> out(T, Eigen::MatrixXd::Zero(P, c_out));
  for (int s = 0; s < T; ++s) {
    for (int i = 0; i < k; ++i) {
      int src = s - dil * i;
      if (src < 0) continue;
      for (int p = 0; p < P; ++p) {
        for (int o = 0; o < c_out; ++o) {
          double acc = 0.0;
          for (int c = 0; c < c_in; ++c) acc += x[src](p, c) * w(o, i * c_in + c);
          out[s](p, o) += acc;
        }
      }
    }
  }
  return out;
}

// Affine network: zero-gain convolutions kill both nonlinear paths, the
// skip projection copies the requested feature, the head reads it back.
TcnModel affine_tap(int feature, double head_bias, const TcnConfig& cfg) {
  TcnModel m = TcnModel::init(cfg, 1);
  for (auto& b : m.blocks) {
    b.conv1.gain.setZero();
    b.conv1.bias.setZero();
    b.conv2.gain.setZero();
    b.conv2.bias.setZero();
    b.skip_w.setZero();
    b.skip_b.setZero();
  }
  m.blocks[0].skip_w(0, feature) = 1.0;
  for (size_t b = 1; b < m.blocks.size(); ++b) m.blocks[b].skip_w(0, 0) = 1.0;
  m.head_w.setZero();
  m.head_w(0) = 1.0;
  m.head_b = head_bias;
  return m;
}

}  // namespace

TEST_CASE("dilated causal convolution matches the naive reference") {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> pick_T(1, 20), pick_P(1, 6), pick_cin(1, 4),
      pick_cout(1, 5), pick_k(1, 12), pick_dil(1, 3);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    int T = pick_T(rng), P = pick_P(rng), ci = pick_cin(rng), co = pick_cout(rng);
    int k = pick_k(rng), dil = pick_dil(rng);
    std::vector<Eigen::MatrixXd> x(T);
    for (auto& m : x) {
      m.resize(P, ci);
      for (int i = 0; i < P; ++i)
        for (int j = 0; j < ci; ++j) m(i, j) = uni(rng);
    }
    Eigen::MatrixXd w(co, ci * k);
    for (int i = 0; i < co; ++i)
      for (int j = 0; j < ci * k; ++j) w(i, j) = uni(rng);
    auto fast = conv1d_causal(x, w, ci, k, dil);
    auto ref = conv_naive(x, w, ci, k, dil);
    REQUIRE(fast.size() == ref.size());
    for (int s = 0; s < T; ++s) CHECK((fast[s] - ref[s]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("outputs up to t ignore edits after t and trailing zero padding") {
  TcnConfig cfg;
  cfg.num_filters = 3;
  cfg.k_size = 4;
  cfg.dil = 2;
  for (unsigned seed = 1; seed <= 5; ++seed) {
    TcnModel model = TcnModel::init(cfg, seed);
    SequenceTensor seq = random_sequence(10, 4, cfg.n_features_in, seed + 100);
    Eigen::MatrixXd base = tcn_forward(model, seq);

    SequenceTensor edited = seq;
    for (int t = 6; t < 10; ++t) edited.steps[t].setConstant(9.0);
    Eigen::MatrixXd after = tcn_forward(model, edited);
    for (int t = 0; t <= 5; ++t) CHECK((after.row(t) - base.row(t)).cwiseAbs().maxCoeff() == 0.0);

    SequenceTensor padded = seq;
    for (int t = 0; t < 4; ++t) {
      padded.steps.push_back(Eigen::MatrixXd::Zero(4, cfg.n_features_in));
      padded.real_mask.push_back(0);
    }
    Eigen::MatrixXd padded_out = tcn_forward(model, padded);
    for (int t = 0; t < 10; ++t) {
      CHECK((padded_out.row(t) - base.row(t)).cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("weight norm: effective rows carry the gain, init equals v") {
  TcnConfig cfg;
  TcnModel model = TcnModel::init(cfg, 7);
  const ConvParams& c = model.blocks[0].conv1;
  Eigen::MatrixXd w = c.effective_weight();
  for (int o = 0; o < c.c_out; ++o) {
    CHECK(w.row(o).norm() == doctest::Approx(std::abs(c.gain(o))).epsilon(1e-12));
    CHECK((w.row(o) - c.v.row(o)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("parameter flattening round trip") {
  TcnConfig cfg;
  cfg.n_blocks = 2;
  cfg.num_filters = 3;
  cfg.k_size = 5;
  TcnModel model = TcnModel::init(cfg, 19);
  Eigen::VectorXd flat = model.get_params();
  CHECK(flat.size() == model.n_params());
  TcnModel other = TcnModel::init(cfg, 77);
  other.set_params(flat);
  CHECK((other.get_params() - flat).cwiseAbs().maxCoeff() == 0.0);
  SequenceTensor seq = random_sequence(6, 3, cfg.n_features_in, 5);
  CHECK((tcn_forward(other, seq) - tcn_forward(model, seq)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initialization is deterministic in the seed") {
  TcnConfig cfg;
  TcnModel a = TcnModel::init(cfg, 42);
  TcnModel b = TcnModel::init(cfg, 42);
  TcnModel c = TcnModel::init(cfg, 43);
  CHECK((a.get_params() - b.get_params()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.get_params() - c.get_params()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("affine tap network is exactly linear in the tapped feature") {
  TcnConfig cfg;
  cfg.num_filters = 4;
  TcnModel model = affine_tap(2, 0.0, cfg);
  SequenceTensor seq = random_sequence(5, 7, 4, 31);
  Eigen::MatrixXd out = tcn_forward(model, seq);
  for (int t = 0; t < 5; ++t) {
    for (int p = 0; p < 7; ++p) CHECK(out(t, p) == doctest::Approx(seq.steps[t](p, 2)).epsilon(1e-14));
  }
  auto grads = tcn_input_gradients(model, seq, {2});
  REQUIRE(grads.size() == 1);
  CHECK((grads[0].array() - 1.0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("same-increment input gradients match central differences") {
  TcnConfig cfg;
  cfg.num_filters = 3;
  cfg.k_size = 3;
  cfg.dil = 1;
  TcnModel model = TcnModel::init(cfg, 3);
  SequenceTensor seq = random_sequence(6, 4, cfg.n_features_in, 8);
  auto grads = tcn_input_gradients(model, seq, {0, 2});
  double h = 1e-6;
  for (int which = 0; which < 2; ++which) {
    int f = which == 0 ? 0 : 2;
    for (int t = 0; t < 6; ++t) {
      for (int p = 0; p < 4; ++p) {
        SequenceTensor sp = seq, sm = seq;
        sp.steps[t](p, f) += h;
        sm.steps[t](p, f) -= h;
        double fd = (tcn_forward(model, sp)(t, p) - tcn_forward(model, sm)(t, p)) / (2 * h);
        CHECK(grads[which](t, p) == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("loss gradient matches central differences, data and physics paths") {
  TcnConfig cfg;
  cfg.num_filters = 2;
  cfg.k_size = 2;
  cfg.dil = 1;
  cfg.n_blocks = 1;
  TcnModel model = TcnModel::init(cfg, 11);

  TrainingBatch batch;
  batch.inputs = random_sequence(4, 5, 4, 12);
  batch.n_gauss_rows = 3;
  std::mt19937 rng(90);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  batch.target_scaled.resize(4, 3);
  batch.laplacian.resize(4, 3);
  for (int t = 0; t < 4; ++t) {
    for (int i = 0; i < 3; ++i) {
      batch.target_scaled(t, i) = uni(rng);
      batch.laplacian(t, i) = uni(rng);
    }
  }
  batch.boundary_normals.resize(2, 2);
  batch.boundary_normals << 0, -1, 1, 0;
  // A moderate scale factor keeps the loss O(1): with a large factor the
  // central differences lose most of their digits to cancellation.
  batch.scale_a.assign(4, 2.0);
  batch.g = 8.0;

  LossWeights w;
  w.w_data = 1.0;
  w.w_physics = 0.3;
  Eigen::VectorXd grad;
  LossBreakdown l0 = tcn_loss_and_grad(model, batch, w, &grad);
  CHECK(std::isfinite(l0.total));
  REQUIRE(grad.size() == model.n_params());

  Eigen::VectorXd p = model.get_params();
  std::mt19937 pick(4);
  std::uniform_int_distribution<int> idx(0, static_cast<int>(p.size()) - 1);
  double h = 1e-6;
  for (int c = 0; c < 40; ++c) {
    int i = idx(pick);
    Eigen::VectorXd pp = p, pm = p;
    pp(i) += h;
    pm(i) -= h;
    TcnModel mp = model, mm = model;
    mp.set_params(pp);
    mm.set_params(pm);
    double lp = tcn_loss_and_grad(mp, batch, w, nullptr).total;
    double lm = tcn_loss_and_grad(mm, batch, w, nullptr).total;
    double fd = (lp - lm) / (2 * h);
    double denom = std::max({1e-6, std::abs(fd), std::abs(grad(i))});
    CHECK(std::abs(grad(i) - fd) / denom < 1e-5);
  }
}

TEST_CASE("padded steps contribute nothing to the loss") {
  TcnConfig cfg;
  cfg.num_filters = 2;
  cfg.k_size = 3;
  TcnModel model = TcnModel::init(cfg, 21);
  TrainingBatch batch;
  batch.inputs = random_sequence(3, 4, 4, 44);
  batch.n_gauss_rows = 4;
  batch.target_scaled = Eigen::MatrixXd::Random(3, 4);
  batch.scale_a.assign(3, 1.0);
  LossWeights w;  // data only

  TrainingBatch padded = batch;
  padded.inputs.steps.push_back(Eigen::MatrixXd::Zero(4, 4));
  padded.inputs.real_mask.push_back(0);
  Eigen::MatrixXd tg(4, 4);
  tg.topRows(3) = batch.target_scaled;
  tg.row(3).setConstant(123.0);  // ignored: the step is padding
  padded.target_scaled = tg;
  padded.scale_a.push_back(1.0);

  double a = tcn_loss_and_grad(model, batch, w, nullptr).total;
  double b = tcn_loss_and_grad(model, padded, w, nullptr).total;
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("adam training is deterministic and reduces the loss") {
  TcnConfig cfg;
  cfg.num_filters = 2;
  cfg.k_size = 3;
  TrainingBatch batch;
  batch.inputs = random_sequence(5, 8, 4, 71);
  batch.n_gauss_rows = 8;
  // Targets come from a second network so a perfect fit exists.
  batch.target_scaled = tcn_forward(TcnModel::init(cfg, 33), batch.inputs, nullptr);
  batch.scale_a.assign(5, 1.0);
  LossWeights w;
  AdamConfig adam;
  adam.lr = 1e-2;
  TrainResult r1 = train_adam(TcnModel::init(cfg, 9), batch, w, 150, adam);
  TrainResult r2 = train_adam(TcnModel::init(cfg, 9), batch, w, 150, adam);
  REQUIRE(r1.history.size() == 150);
  CHECK(r1.history.back().total < 0.2 * r1.history.front().total);
  CHECK(r1.history.back().total == r2.history.back().total);
  CHECK((r1.model.get_params() - r2.model.get_params()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint round trip preserves parameters and scaling") {
  TcnConfig cfg;
  cfg.num_filters = 3;
  cfg.n_blocks = 2;
  TcnModel model = TcnModel::init(cfg, 55);
  ScalingScheme scheme;
  scheme.kind = ScalingKind::VM;
  scheme.a = {2.0, 3.0};
  scheme.b = {0.0, 0.0};
  scheme.vm_target = 1.5;
  std::string path = "nn_checkpoint_test.bin";
  save_checkpoint(model, scheme, path);
  TcnModel loaded;
  ScalingScheme ls;
  load_checkpoint(path, loaded, ls);
  CHECK(loaded.cfg.n_blocks == cfg.n_blocks);
  CHECK(loaded.cfg.num_filters == cfg.num_filters);
  CHECK((loaded.get_params() - model.get_params()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ls.kind == scheme.kind);
  CHECK(ls.a == scheme.a);
  CHECK(ls.vm_target == scheme.vm_target);
  std::remove(path.c_str());
}

TEST_CASE("configuration validation") {
  TcnConfig cfg;
  cfg.dropout = 0.5;
  CHECK_THROWS_AS(cfg.validate(), NnError);
  cfg = TcnConfig{};
  cfg.activation = "relu";
  CHECK_THROWS_AS(cfg.validate(), NnError);
  cfg = TcnConfig{};
  cfg.k_size = 0;
  CHECK_THROWS_AS(cfg.validate(), NnError);
}
