// Micro-benchmarks for the hot paths: element assembly, network
// forward passes and the causal convolution kernel.

#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "ifenn/fem.hpp"
#include "ifenn/mesh.hpp"
#include "ifenn/nn.hpp"

using namespace ifenn;

static void BM_ElementSystem(benchmark::State& state) {
  Mesh mesh = build_structured_mesh(10.0, 10.0, {}, 5.0, 2);
  MaterialParams mat;
  Eigen::VectorXd ue = Eigen::VectorXd::LinSpaced(16, 0.0, 1e-4);
  Eigen::VectorXd ee = Eigen::VectorXd::Constant(8, 2e-4);
  Eigen::VectorXd kappa = Eigen::VectorXd::Constant(9, 1.5e-4);
  const bool want_jacobian = state.range(0) != 0;
  for (auto _ : state) {
    ElementMatrices em = element_system(mesh, 0, ue, ee, kappa, mat, want_jacobian);
    benchmark::DoNotOptimize(em.r_u.data());
  }
}
BENCHMARK(BM_ElementSystem)->Arg(0)->Arg(1);

static void BM_Conv1dCausal(benchmark::State& state) {
  const int steps = 40;
  const int points = static_cast<int>(state.range(0));
  const int c_in = 6, c_out = 6, k = 12, dil = 3;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<Eigen::MatrixXd> x(steps, Eigen::MatrixXd(points, c_in));
  for (auto& m : x)
    for (int i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
  Eigen::MatrixXd w(c_out, c_in * k);
  for (int i = 0; i < w.size(); ++i) w.data()[i] = uni(rng);
  for (auto _ : state) {
    auto out = conv1d_causal(x, w, c_in, k, dil);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Conv1dCausal)->Arg(512)->Arg(3600);

static void BM_TcnForward(benchmark::State& state) {
  TcnConfig cfg;
  TcnModel model = TcnModel::init(cfg, 3);
  const int steps = 40;
  const int points = static_cast<int>(state.range(0));
  SequenceTensor seq;
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int s = 0; s < steps; ++s) {
    Eigen::MatrixXd m(points, cfg.n_features_in);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = uni(rng);
    seq.steps.push_back(m);
  }
  seq.real_mask.assign(steps, 1);
  for (auto _ : state) {
    Eigen::MatrixXd preds = tcn_forward(model, seq, nullptr);
    benchmark::DoNotOptimize(preds.data());
  }
}
BENCHMARK(BM_TcnForward)->Arg(512)->Arg(3600);

BENCHMARK_MAIN();
