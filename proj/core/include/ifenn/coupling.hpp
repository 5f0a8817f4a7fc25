#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <string>
#include <vector>

#include "ifenn/fem.hpp"
#include "ifenn/nn.hpp"
#include "ifenn/scaling.hpp"

namespace ifenn {

enum class NrMode { Full, Modified };

std::string to_string(NrMode m);
NrMode nr_mode_from_string(const std::string& s);

struct IfennConfig {
  NrMode nr_mode = NrMode::Modified;
  int activation_increment = 1;  // earlier increments run the monolithic solver
  SolverConfig solver;           // scheme field is ignored here
  bool predict_each_iteration = true;

  void validate() const;
};

/// Supplies the nonlocal strain and its same-increment local-strain
/// derivative at every GP. eps_eq_history holds the unscaled local
/// strain per GP for increments 1..n (the last entry is the current
/// iterate). Implementations: the trained network, a frozen exact field,
/// or an analytic map for derivative checks.
struct NonlocalPredictor {
  virtual ~NonlocalPredictor() = default;
  virtual void predict(int increment, const std::vector<Eigen::VectorXd>& eps_eq_history,
                       Eigen::VectorXd& ebar_gp, Eigen::VectorXd& debar_deq_gp) = 0;
};

/// Network-backed predictor. The input tensor is rebuilt per call:
/// rows 1..n carry (x, y, scaled eps_eq, lf), later rows are zero
/// padding up to the training sequence length. MM/VM coefficients are
/// refit from the current strain field per increment; CD keeps the
/// training exponent. Predictions are un-normalized before returning;
/// the scaled derivative needs no correction (both fields share a_n).
class TcnPredictor : public NonlocalPredictor {
 public:
  TcnPredictor(TcnModel model, ScalingScheme scheme, Eigen::MatrixXd gp_xy,
               std::vector<double> lf_schedule);

  void predict(int increment, const std::vector<Eigen::VectorXd>& eps_eq_history,
               Eigen::VectorXd& ebar_gp, Eigen::VectorXd& debar_deq_gp) override;

 private:
  TcnModel model_;
  ScalingScheme scheme_;
  Eigen::MatrixXd gp_xy_;
  std::vector<double> lf_;
};

/// Replays a precomputed nonlocal field (rows = increments) with a zero
/// derivative; used for the surrogate-free coupling check.
class ExactFieldPredictor : public NonlocalPredictor {
 public:
  explicit ExactFieldPredictor(Eigen::MatrixXd ebar_per_increment);
  void predict(int increment, const std::vector<Eigen::VectorXd>& eps_eq_history,
               Eigen::VectorXd& ebar_gp, Eigen::VectorXd& debar_deq_gp) override;

 private:
  Eigen::MatrixXd ebar_;
};

/// Pointwise analytic map ebar = f(eps_eq) returning (value, derivative);
/// stands in for the network in finite-difference tangent tests.
class AnalyticPredictor : public NonlocalPredictor {
 public:
  using Map = std::function<std::pair<double, double>(double)>;
  explicit AnalyticPredictor(Map map) : map_(std::move(map)) {}
  void predict(int increment, const std::vector<Eigen::VectorXd>& eps_eq_history,
               Eigen::VectorXd& ebar_gp, Eigen::VectorXd& debar_deq_gp) override;

 private:
  Map map_;
};

struct IfennSystem {
  Eigen::SparseMatrix<double> j;  // displacement rows only
  Eigen::VectorXd r;              // internal force
};

/// Displacement-block system with the surrogate field frozen in. Damage
/// uses d(max(kappa, ebar)). Modified mode: J = secant stiffness K.
/// Full mode adds the damage-variation term assembled element-wise from
/// the chain d' * (d ebar/d eps_eq) * (d eps_eq/d eps) * B.
IfennSystem assemble_ifenn(const FemProblem& problem, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& ebar_gp,
                           const Eigen::VectorXd& debar_deq_gp,
                           const Eigen::VectorXd& kappa, NrMode mode);

struct IfennIncrement {
  int increment = 0;
  double lf = 0.0;
  int iterations = 0;
  double reaction = 0.0;
  bool used_fem = false;  // pre-activation monolithic increment
  std::vector<double> r_u_history;  // |du_i| / |du_1|
  std::vector<double> r_r_history;  // |R_i| / |R_1| on free rows (health monitor)
  int system_rows = 0;
  double linear_solve_seconds = 0.0;  // accumulated over iterations
};

struct IfennRun {
  bool converged = true;
  int failed_increment = -1;
  std::vector<IfennIncrement> increments;
  std::vector<Eigen::VectorXd> u_history;        // per converged increment
  std::vector<Eigen::VectorXd> ebar_gp_history;  // surrogate field per increment
  Eigen::VectorXd kappa;                         // final history field
};

IfennRun solve_ifenn(const FemProblem& problem, NonlocalPredictor& predictor,
                     const IfennConfig& config);

/// sqrt(sum ((pred - true)/true)^2); entries with |true| < 1e-14 are
/// excluded from the sum.
double rse(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);

/// Training inputs assembled from exported run data: GP rows then
/// boundary rows, features (x, y, scaled eps_eq, lf), all steps real.
SequenceTensor build_sequence(const Datasets& ds, const ScalingScheme& scheme,
                              bool include_boundary);

/// Full training batch; physics adds the Laplacian, normals and
/// per-increment scale coefficients (g taken from the material).
TrainingBatch build_training_batch(const Datasets& ds, const ScalingScheme& scheme,
                                   const MaterialParams& mat, bool physics);

}  // namespace ifenn
