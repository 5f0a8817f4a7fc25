#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifenn/scaling.hpp"

namespace ifenn {

struct NnError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TcnConfig {
  int n_blocks = 1;
  int dil = 3;
  int k_size = 12;
  int num_filters = 6;
  int n_features_in = 4;
  double dropout = 0.0;          // fixed at zero
  std::string activation = "tanh";

  void validate() const {
    if (n_blocks < 1 || dil < 1 || k_size < 1 || num_filters < 1 || n_features_in < 1) {
      throw NnError("invalid network architecture parameters");
    }
    if (dropout != 0.0) throw NnError("dropout must be zero");
    if (activation != "tanh") throw NnError("only tanh activation is supported");
  }
};

/// Rank-3 sequence container: one (points x features) matrix per load
/// increment. Feature order is fixed: x, y, scaled local strain, lf.
/// real_mask marks which steps carry data; padded steps are all-zero.
struct SequenceTensor {
  std::vector<Eigen::MatrixXd> steps;
  std::vector<std::string> feature_names = {"x", "y", "eps_eq", "lf"};
  std::vector<std::uint8_t> real_mask;

  int n_steps() const { return static_cast<int>(steps.size()); }
  int n_points() const { return steps.empty() ? 0 : static_cast<int>(steps[0].rows()); }
  int n_features() const { return steps.empty() ? 0 : static_cast<int>(steps[0].cols()); }
  void check_consistent() const;
};

/// Dilated causal convolution parameters with weight-norm
/// reparameterization: effective weight row o is gain(o) * v.row(o)
/// normalized. v is (c_out x c_in*k_size); tap i occupies columns
/// [i*c_in, (i+1)*c_in).
struct ConvParams {
  int c_in = 0, c_out = 0, k = 0;
  Eigen::MatrixXd v;
  Eigen::VectorXd gain;
  Eigen::VectorXd bias;

  Eigen::MatrixXd effective_weight() const;
};

struct TcnBlock {
  ConvParams conv1, conv2;
  Eigen::MatrixXd skip_w;  // (num_filters x c_in) 1x1 convolution
  Eigen::VectorXd skip_b;
};

struct TcnModel {
  TcnConfig cfg;
  std::vector<TcnBlock> blocks;
  Eigen::VectorXd head_w;
  double head_b = 0.0;

  static TcnModel init(const TcnConfig& cfg, std::uint64_t seed);

  int n_params() const;
  Eigen::VectorXd get_params() const;
  void set_params(const Eigen::VectorXd& flat);
};

/// out[s] = sum_i x[s - dil*i] * W_i^T with zero padding on the left.
/// Each x[s] is (points x c_in); weight is laid out as in ConvParams.
std::vector<Eigen::MatrixXd> conv1d_causal(const std::vector<Eigen::MatrixXd>& x,
                                           const Eigen::MatrixXd& weight, int c_in,
                                           int k, int dil);

struct ForwardCache;

/// Scaled nonlocal-strain prediction per (increment, point); row t of
/// the result is the prediction at step t. Points run along the
/// convolution batch axis and never mix.
Eigen::MatrixXd tcn_forward(const TcnModel& model, const SequenceTensor& seq,
                            ForwardCache* cache = nullptr);

/// Same-increment reverse-mode derivatives of each prediction w.r.t. the
/// given input feature of its own point and step. One (steps x points)
/// matrix per requested feature.
std::vector<Eigen::MatrixXd> tcn_input_gradients(const TcnModel& model,
                                                 const SequenceTensor& seq,
                                                 const std::vector<int>& feature_indices);

struct LossWeights {
  double w_data = 1.0;
  double w_physics = 0.0;

  void validate() const {
    if (w_data < 0.0 || w_physics < 0.0 || w_data + w_physics <= 0.0) {
      throw NnError("loss weights must be nonnegative with a positive sum");
    }
  }
};

struct LossBreakdown {
  double total = 0.0;
  double data = 0.0;
  double pde = 0.0;
  double bc = 0.0;
};

/// Everything a training step consumes. Point rows are Gauss points
/// first, boundary-node rows after. target_scaled / laplacian /
/// eq-strain columns address the Gauss rows; boundary_normals the rest.
struct TrainingBatch {
  SequenceTensor inputs;            // scaled features
  int n_gauss_rows = 0;
  Eigen::MatrixXd target_scaled;    // steps x n_gauss (empty unless w_data > 0)
  Eigen::MatrixXd laplacian;        // steps x n_gauss, unscaled (empty unless w_physics > 0)
  Eigen::MatrixXd boundary_normals; // (points - n_gauss) x 2
  std::vector<double> scale_a;      // per-increment coefficient of the fitted scheme
  double g = 0.0;                   // diffusion coefficient of the PDE term

  int n_boundary_rows() const { return inputs.n_points() - n_gauss_rows; }
  void check(const LossWeights& w) const;
};

/// Loss from already-computed predictions and boundary-row spatial
/// derivatives (steps x boundary rows; may be empty when w_physics = 0).
/// Each term is a single l2 norm over all real steps and relevant rows.
LossBreakdown tcn_loss(const Eigen::MatrixXd& preds, const Eigen::MatrixXd& dpred_dx_b,
                       const Eigen::MatrixXd& dpred_dy_b, const TrainingBatch& batch,
                       const LossWeights& weights);

/// Loss and reverse-mode parameter gradient (flat, same layout as
/// TcnModel::get_params). The physics path differentiates through the
/// boundary-row derivative computation as well.
LossBreakdown tcn_loss_and_grad(const TcnModel& model, const TrainingBatch& batch,
                                const LossWeights& weights, Eigen::VectorXd* grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainResult {
  TcnModel model;
  std::vector<LossBreakdown> history;  // one entry per epoch
};

/// Full-batch Adam. Deterministic given the seed (which only drives the
/// parameter initialization of `model`). Throws on a non-finite loss.
TrainResult train_adam(TcnModel model, const TrainingBatch& batch,
                       const LossWeights& weights, int epochs, const AdamConfig& adam);

void save_checkpoint(const TcnModel& model, const ScalingScheme& scheme,
                     const std::string& path);
void load_checkpoint(const std::string& path, TcnModel& model, ScalingScheme& scheme);

}  // namespace ifenn
