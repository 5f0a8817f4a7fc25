#include "ifenn/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

namespace ifenn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

void SequenceTensor::check_consistent() const {
  if (steps.empty()) throw NnError("sequence tensor has no steps");
  const auto rows = steps[0].rows();
  const auto cols = steps[0].cols();
  for (const auto& s : steps) {
    if (s.rows() != rows || s.cols() != cols) {
      throw NnError("sequence tensor steps have inconsistent shapes");
    }
  }
  if (!real_mask.empty() && real_mask.size() != steps.size()) {
    throw NnError("sequence tensor mask length does not match step count");
  }
}

MatrixXd ConvParams::effective_weight() const {
  MatrixXd w(c_out, c_in * k);
  for (int o = 0; o < c_out; ++o) {
    const double norm = v.row(o).norm();
    if (norm == 0.0) throw NnError("weight-norm direction vector has zero norm");
    w.row(o) = (gain(o) / norm) * v.row(o);
  }
  return w;
}

// Splits the effective-weight gradient into direction and gain gradients:
// w_o = g_o v_o / |v_o|, so dg_o = <dW_o, v_o>/|v_o| and
// dv_o = g_o/|v_o| dW_o - g_o <dW_o, v_o>/|v_o|^3 v_o.
static void weight_norm_backward(const ConvParams& p, const MatrixXd& dw,
                                 MatrixXd& dv, VectorXd& dgain) {
  dv.resize(p.c_out, p.c_in * p.k);
  dgain.resize(p.c_out);
  for (int o = 0; o < p.c_out; ++o) {
    const double norm = p.v.row(o).norm();
    const double dot = dw.row(o).dot(p.v.row(o));
    dgain(o) = dot / norm;
    dv.row(o) = (p.gain(o) / norm) * dw.row(o) -
                (p.gain(o) * dot / (norm * norm * norm)) * p.v.row(o);
  }
}

std::vector<MatrixXd> conv1d_causal(const std::vector<MatrixXd>& x, const MatrixXd& weight,
                                    int c_in, int k, int dil) {
  if (weight.cols() != static_cast<long>(c_in) * k) {
    throw NnError("convolution weight shape does not match c_in * k_size");
  }
  const int steps = static_cast<int>(x.size());
  const int c_out = static_cast<int>(weight.rows());
  std::vector<MatrixXd> out(steps);
  for (int s = 0; s < steps; ++s) {
    out[s] = MatrixXd::Zero(x[s].rows(), c_out);
    for (int i = 0; i < k; ++i) {
      const int src = s - dil * i;
      if (src < 0) break;  // left zero padding
      out[s].noalias() += x[src] * weight.middleCols(i * c_in, c_in).transpose();
    }
  }
  return out;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d4a33a8cc9fd2aull;
  return z ^ (z >> 31);
}

// Platform-independent uniform draw in [-bound, bound].
double uniform_pm(std::uint64_t& state, double bound) {
  const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
  return (2.0 * u - 1.0) * bound;
}

ConvParams init_conv(int c_in, int c_out, int k, std::uint64_t& state) {
  ConvParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  p.k = k;
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in) * k);
  p.v.resize(c_out, c_in * k);
  for (int o = 0; o < c_out; ++o) {
    for (int j = 0; j < c_in * k; ++j) p.v(o, j) = uniform_pm(state, bound);
  }
  p.gain.resize(c_out);
  for (int o = 0; o < c_out; ++o) p.gain(o) = p.v.row(o).norm();  // effective weight = v at init
  p.bias.resize(c_out);
  for (int o = 0; o < c_out; ++o) p.bias(o) = uniform_pm(state, bound);
  return p;
}

}  // namespace

TcnModel TcnModel::init(const TcnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TcnModel m;
  m.cfg = cfg;
  std::uint64_t state = seed;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const int c_in = (b == 0) ? cfg.n_features_in : cfg.num_filters;
    TcnBlock blk;
    blk.conv1 = init_conv(c_in, cfg.num_filters, cfg.k_size, state);
    blk.conv2 = init_conv(cfg.num_filters, cfg.num_filters, cfg.k_size, state);
    const double sbound = 1.0 / std::sqrt(static_cast<double>(c_in));
    blk.skip_w.resize(cfg.num_filters, c_in);
    for (int o = 0; o < cfg.num_filters; ++o) {
      for (int j = 0; j < c_in; ++j) blk.skip_w(o, j) = uniform_pm(state, sbound);
    }
    blk.skip_b.resize(cfg.num_filters);
    for (int o = 0; o < cfg.num_filters; ++o) blk.skip_b(o) = uniform_pm(state, sbound);
    m.blocks.push_back(std::move(blk));
  }
  const double hbound = 1.0 / std::sqrt(static_cast<double>(cfg.num_filters));
  m.head_w.resize(cfg.num_filters);
  for (int j = 0; j < cfg.num_filters; ++j) m.head_w(j) = uniform_pm(state, hbound);
  m.head_b = uniform_pm(state, hbound);
  return m;
}

int TcnModel::n_params() const {
  int n = 0;
  for (const auto& blk : blocks) {
    n += static_cast<int>(blk.conv1.v.size()) + 2 * blk.conv1.c_out;
    n += static_cast<int>(blk.conv2.v.size()) + 2 * blk.conv2.c_out;
    n += static_cast<int>(blk.skip_w.size() + blk.skip_b.size());
  }
  n += static_cast<int>(head_w.size()) + 1;
  return n;
}

namespace {

// Fixed flattening order: per block conv1 (v row-major, gain, bias),
// conv2 likewise, skip_w row-major, skip_b; then head_w, head_b.
void pack_matrix(const MatrixXd& m, VectorXd& flat, int& pos) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) flat(pos++) = m(r, c);
}

void pack_vector(const VectorXd& v, VectorXd& flat, int& pos) {
  for (long i = 0; i < v.size(); ++i) flat(pos++) = v(i);
}

void unpack_matrix(MatrixXd& m, const VectorXd& flat, int& pos) {
  for (long r = 0; r < m.rows(); ++r)
    for (long c = 0; c < m.cols(); ++c) m(r, c) = flat(pos++);
}

void unpack_vector(VectorXd& v, const VectorXd& flat, int& pos) {
  for (long i = 0; i < v.size(); ++i) v(i) = flat(pos++);
}

}  // namespace

VectorXd TcnModel::get_params() const {
  VectorXd flat(n_params());
  int pos = 0;
  for (const auto& blk : blocks) {
    pack_matrix(blk.conv1.v, flat, pos);
    pack_vector(blk.conv1.gain, flat, pos);
    pack_vector(blk.conv1.bias, flat, pos);
    pack_matrix(blk.conv2.v, flat, pos);
    pack_vector(blk.conv2.gain, flat, pos);
    pack_vector(blk.conv2.bias, flat, pos);
    pack_matrix(blk.skip_w, flat, pos);
    pack_vector(blk.skip_b, flat, pos);
  }
  pack_vector(head_w, flat, pos);
  flat(pos++) = head_b;
  return flat;
}

void TcnModel::set_params(const VectorXd& flat) {
  if (flat.size() != n_params()) throw NnError("parameter vector length mismatch");
  int pos = 0;
  for (auto& blk : blocks) {
    unpack_matrix(blk.conv1.v, flat, pos);
    unpack_vector(blk.conv1.gain, flat, pos);
    unpack_vector(blk.conv1.bias, flat, pos);
    unpack_matrix(blk.conv2.v, flat, pos);
    unpack_vector(blk.conv2.gain, flat, pos);
    unpack_vector(blk.conv2.bias, flat, pos);
    unpack_matrix(blk.skip_w, flat, pos);
    unpack_vector(blk.skip_b, flat, pos);
  }
  unpack_vector(head_w, flat, pos);
  head_b = flat(pos++);
}

struct BlockCache {
  MatrixXd w1, w2;               // effective weights, reused by the backward pass
  std::vector<MatrixXd> a1, a2;  // post-tanh activations per step
  std::vector<MatrixXd> out;     // a2 + skip
};

struct ForwardCache {
  std::vector<BlockCache> blocks;
  const SequenceTensor* seq = nullptr;
};

static void add_bias_tanh(std::vector<MatrixXd>& z, const VectorXd& bias) {
  for (auto& m : z) {
    m.rowwise() += bias.transpose();
    m = m.array().tanh().matrix();
  }
}

MatrixXd tcn_forward(const TcnModel& model, const SequenceTensor& seq, ForwardCache* cache) {
  seq.check_consistent();
  if (seq.n_features() != model.cfg.n_features_in) {
    throw NnError("input feature count does not match the network configuration");
  }
  const int steps = seq.n_steps();
  const int points = seq.n_points();
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.blocks.clear();
  fc.seq = &seq;

  const std::vector<MatrixXd>* x = &seq.steps;
  for (const auto& blk : model.blocks) {
    BlockCache bc;
    bc.w1 = blk.conv1.effective_weight();
    bc.w2 = blk.conv2.effective_weight();
    bc.a1 = conv1d_causal(*x, bc.w1, blk.conv1.c_in, blk.conv1.k, model.cfg.dil);
    add_bias_tanh(bc.a1, blk.conv1.bias);
    bc.a2 = conv1d_causal(bc.a1, bc.w2, blk.conv2.c_in, blk.conv2.k, model.cfg.dil);
    add_bias_tanh(bc.a2, blk.conv2.bias);
    bc.out.resize(steps);
    for (int s = 0; s < steps; ++s) {
      bc.out[s] = bc.a2[s] + (*x)[s] * blk.skip_w.transpose();
      bc.out[s].rowwise() += blk.skip_b.transpose();
    }
    fc.blocks.push_back(std::move(bc));
    x = &fc.blocks.back().out;
  }

  MatrixXd preds(steps, points);
  const auto& top = fc.blocks.back().out;
  for (int s = 0; s < steps; ++s) {
    preds.row(s) = (top[s] * model.head_w).transpose().array() + model.head_b;
  }
  return preds;
}

namespace {

// Derivative pass for one input feature over a contiguous row window
// [row0, row0 + nrows). Only tap 0 of each convolution connects step s
// to itself, so the pass never mixes steps; tanh enters through its
// local slope computed from the cached primal activations.
struct DCache {
  std::vector<MatrixXd> dx;  // per step, input tangent of the current block
  // Per block: tangents before/after each tanh and the block output.
  struct BlockD {
    std::vector<MatrixXd> dz1, da1, dz2, da2, dout;
  };
  std::vector<BlockD> blocks;
  MatrixXd dpred;  // steps x nrows
};

DCache d_pass(const TcnModel& model, const ForwardCache& fc, int feature, int row0, int nrows) {
  const int steps = fc.seq->n_steps();
  DCache dc;
  dc.blocks.resize(model.blocks.size());
  std::vector<MatrixXd> din(steps, MatrixXd::Zero(nrows, model.cfg.n_features_in));
  for (auto& m : din) m.col(feature).setOnes();

  for (std::size_t b = 0; b < model.blocks.size(); ++b) {
    const auto& blk = model.blocks[b];
    const auto& bc = fc.blocks[b];
    auto& bd = dc.blocks[b];
    const int c_in = blk.conv1.c_in;
    const MatrixXd w1_0 = bc.w1.middleCols(0, c_in);
    const MatrixXd w2_0 = bc.w2.middleCols(0, blk.conv2.c_in);
    bd.dz1.resize(steps);
    bd.da1.resize(steps);
    bd.dz2.resize(steps);
    bd.da2.resize(steps);
    bd.dout.resize(steps);
    std::vector<MatrixXd> next(steps);
    for (int s = 0; s < steps; ++s) {
      bd.dz1[s].noalias() = din[s] * w1_0.transpose();
      const auto a1 = bc.a1[s].middleRows(row0, nrows).array();
      bd.da1[s] = (bd.dz1[s].array() * (1.0 - a1.square())).matrix();
      bd.dz2[s].noalias() = bd.da1[s] * w2_0.transpose();
      const auto a2 = bc.a2[s].middleRows(row0, nrows).array();
      bd.da2[s] = (bd.dz2[s].array() * (1.0 - a2.square())).matrix();
      bd.dout[s] = bd.da2[s] + din[s] * blk.skip_w.transpose();
      next[s] = bd.dout[s];
    }
    din = std::move(next);
  }

  dc.dpred.resize(steps, nrows);
  const auto& topd = dc.blocks.back().dout;
  for (int s = 0; s < steps; ++s) dc.dpred.row(s) = (topd[s] * model.head_w).transpose();
  return dc;
}

}  // namespace

std::vector<MatrixXd> tcn_input_gradients(const TcnModel& model, const SequenceTensor& seq,
                                          const std::vector<int>& feature_indices) {
  ForwardCache fc;
  tcn_forward(model, seq, &fc);
  std::vector<MatrixXd> result;
  for (int f : feature_indices) {
    if (f < 0 || f >= model.cfg.n_features_in) throw NnError("feature index out of range");
    result.push_back(d_pass(model, fc, f, 0, seq.n_points()).dpred);
  }
  return result;
}

void TrainingBatch::check(const LossWeights& w) const {
  inputs.check_consistent();
  const int steps = inputs.n_steps();
  const int points = inputs.n_points();
  if (n_gauss_rows <= 0 || n_gauss_rows > points) {
    throw NnError("training batch gauss-row count is inconsistent with the input tensor");
  }
  if (w.w_data > 0.0) {
    if (target_scaled.rows() != steps || target_scaled.cols() != n_gauss_rows) {
      throw NnError("training targets missing or mis-shaped for the data loss");
    }
  }
  if (w.w_physics > 0.0) {
    if (laplacian.rows() != steps || laplacian.cols() != n_gauss_rows) {
      throw NnError("precomputed laplacian missing or mis-shaped for the physics loss");
    }
    if (static_cast<int>(scale_a.size()) != steps) {
      throw NnError("per-increment scale coefficients missing for the physics loss");
    }
    if (boundary_normals.rows() != n_boundary_rows() || (n_boundary_rows() > 0 && boundary_normals.cols() != 2)) {
      throw NnError("boundary normals mis-shaped for the physics loss");
    }
  }
}

namespace {

bool step_is_real(const SequenceTensor& seq, int s) {
  return seq.real_mask.empty() || seq.real_mask[s] != 0;
}

// Residual matrices (zero at padded steps) for each active loss term.
struct LossResiduals {
  MatrixXd data;  // steps x n_gauss
  MatrixXd pde;   // steps x n_gauss
  MatrixXd bc;    // steps x n_boundary
};

LossResiduals loss_residuals(const MatrixXd& preds, const MatrixXd& dpx, const MatrixXd& dpy,
                             const TrainingBatch& batch, const LossWeights& w) {
  const int steps = batch.inputs.n_steps();
  const int ng = batch.n_gauss_rows;
  const int nb = batch.n_boundary_rows();
  LossResiduals r;
  if (w.w_data > 0.0) r.data = MatrixXd::Zero(steps, ng);
  if (w.w_physics > 0.0) {
    r.pde = MatrixXd::Zero(steps, ng);
    r.bc = MatrixXd::Zero(steps, nb);
  }
  for (int s = 0; s < steps; ++s) {
    if (!step_is_real(batch.inputs, s)) continue;
    const auto pg = preds.row(s).head(ng);
    if (w.w_data > 0.0) r.data.row(s) = pg - batch.target_scaled.row(s);
    if (w.w_physics > 0.0) {
      const auto eps_scaled = batch.inputs.steps[s].col(2).head(ng).transpose();
      r.pde.row(s) = pg - batch.scale_a[s] * batch.g * batch.laplacian.row(s) - eps_scaled;
      if (nb > 0) {
        r.bc.row(s) = dpx.row(s).cwiseProduct(batch.boundary_normals.col(0).transpose()) +
                      dpy.row(s).cwiseProduct(batch.boundary_normals.col(1).transpose());
      }
    }
  }
  return r;
}

LossBreakdown breakdown_from(const LossResiduals& r, const LossWeights& w) {
  LossBreakdown out;
  if (w.w_data > 0.0) out.data = r.data.norm();
  if (w.w_physics > 0.0) {
    out.pde = r.pde.norm();
    out.bc = r.bc.size() > 0 ? r.bc.norm() : 0.0;
  }
  out.total = w.w_data * out.data + w.w_physics * (out.pde + out.bc);
  return out;
}

// d|r|/dr = r/|r|; at |r| = 0 the subgradient 0 is used.
MatrixXd norm_grad(const MatrixXd& r, double weight) {
  const double n = r.norm();
  if (n == 0.0) return MatrixXd::Zero(r.rows(), r.cols());
  return (weight / n) * r;
}

struct Grads {
  struct Block {
    MatrixXd dw1, dw2, dws;  // effective-weight gradients
    VectorXd db1, db2, dbs;
  };
  std::vector<Block> blocks;
  VectorXd dhw;
  double dhb = 0.0;
};

Grads zero_grads(const TcnModel& m) {
  Grads g;
  for (const auto& blk : m.blocks) {
    Grads::Block b;
    b.dw1 = MatrixXd::Zero(blk.conv1.c_out, blk.conv1.c_in * blk.conv1.k);
    b.dw2 = MatrixXd::Zero(blk.conv2.c_out, blk.conv2.c_in * blk.conv2.k);
    b.dws = MatrixXd::Zero(blk.skip_w.rows(), blk.skip_w.cols());
    b.db1 = VectorXd::Zero(blk.conv1.c_out);
    b.db2 = VectorXd::Zero(blk.conv2.c_out);
    b.dbs = VectorXd::Zero(blk.skip_b.size());
    g.blocks.push_back(std::move(b));
  }
  g.dhw = VectorXd::Zero(m.head_w.size());
  return g;
}

VectorXd flatten_grads(const TcnModel& m, const Grads& g) {
  VectorXd flat(m.n_params());
  int pos = 0;
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    MatrixXd dv;
    VectorXd dgain;
    weight_norm_backward(m.blocks[b].conv1, g.blocks[b].dw1, dv, dgain);
    pack_matrix(dv, flat, pos);
    pack_vector(dgain, flat, pos);
    pack_vector(g.blocks[b].db1, flat, pos);
    weight_norm_backward(m.blocks[b].conv2, g.blocks[b].dw2, dv, dgain);
    pack_matrix(dv, flat, pos);
    pack_vector(dgain, flat, pos);
    pack_vector(g.blocks[b].db2, flat, pos);
    pack_matrix(g.blocks[b].dws, flat, pos);
    pack_vector(g.blocks[b].dbs, flat, pos);
  }
  pack_vector(g.dhw, flat, pos);
  flat(pos++) = g.dhb;
  return flat;
}

}  // namespace

LossBreakdown tcn_loss(const MatrixXd& preds, const MatrixXd& dpred_dx_b,
                       const MatrixXd& dpred_dy_b, const TrainingBatch& batch,
                       const LossWeights& weights) {
  weights.validate();
  batch.check(weights);
  return breakdown_from(loss_residuals(preds, dpred_dx_b, dpred_dy_b, batch, weights), weights);
}

LossBreakdown tcn_loss_and_grad(const TcnModel& model, const TrainingBatch& batch,
                                const LossWeights& weights, VectorXd* grad) {
  weights.validate();
  batch.check(weights);
  const int steps = batch.inputs.n_steps();
  const int points = batch.inputs.n_points();
  const int ng = batch.n_gauss_rows;
  const int nb = batch.n_boundary_rows();
  const bool physics = weights.w_physics > 0.0;
  const bool need_bc = physics && nb > 0;

  ForwardCache fc;
  const MatrixXd preds = tcn_forward(model, batch.inputs, &fc);

  DCache dcx, dcy;
  MatrixXd dpx, dpy;
  if (need_bc) {
    dcx = d_pass(model, fc, 0, ng, nb);
    dcy = d_pass(model, fc, 1, ng, nb);
    dpx = dcx.dpred;
    dpy = dcy.dpred;
  }

  const LossResiduals res = loss_residuals(preds, dpx, dpy, batch, weights);
  const LossBreakdown breakdown = breakdown_from(res, weights);
  if (!grad) return breakdown;

  // Adjoint of the predictions, gauss columns only.
  MatrixXd dpred = MatrixXd::Zero(steps, points);
  if (weights.w_data > 0.0) dpred.leftCols(ng) += norm_grad(res.data, weights.w_data);
  if (physics) dpred.leftCols(ng) += norm_grad(res.pde, weights.w_physics);

  // Adjoints of the boundary-row spatial derivatives.
  MatrixXd dDpx, dDpy;
  if (need_bc) {
    const MatrixXd dbc = norm_grad(res.bc, weights.w_physics);
    dDpx = dbc.array().rowwise() * batch.boundary_normals.col(0).transpose().array();
    dDpy = dbc.array().rowwise() * batch.boundary_normals.col(1).transpose().array();
  }

  Grads g = zero_grads(model);
  const int dil = model.cfg.dil;

  // Head.
  std::vector<MatrixXd> dout(steps);
  std::vector<MatrixXd> dDoutx, dDouty;
  if (need_bc) {
    dDoutx.resize(steps);
    dDouty.resize(steps);
  }
  const auto& top = fc.blocks.back().out;
  for (int s = 0; s < steps; ++s) {
    const VectorXd dp = dpred.row(s).transpose();
    dout[s].noalias() = dp * model.head_w.transpose();
    g.dhw.noalias() += top[s].transpose() * dp;
    g.dhb += dp.sum();
    if (need_bc) {
      const VectorXd dpx_s = dDpx.row(s).transpose();
      const VectorXd dpy_s = dDpy.row(s).transpose();
      dDoutx[s].noalias() = dpx_s * model.head_w.transpose();
      dDouty[s].noalias() = dpy_s * model.head_w.transpose();
      g.dhw.noalias() += dcx.blocks.back().dout[s].transpose() * dpx_s;
      g.dhw.noalias() += dcy.blocks.back().dout[s].transpose() * dpy_s;
    }
  }

  // Blocks, top down. The derivative pass shares weights with the primal
  // pass, so its adjoints add to the same effective-weight gradients and,
  // through the tanh slopes, feed back into the primal activation
  // adjoints on the boundary rows.
  for (int b = static_cast<int>(model.blocks.size()) - 1; b >= 0; --b) {
    const auto& blk = model.blocks[b];
    const auto& bc = fc.blocks[b];
    const int c_in = blk.conv1.c_in;
    const int nf = model.cfg.num_filters;
    const std::vector<MatrixXd>& x = (b == 0) ? batch.inputs.steps : fc.blocks[b - 1].out;
    const MatrixXd w1_0 = bc.w1.middleCols(0, c_in);
    const MatrixXd w2_0 = bc.w2.middleCols(0, nf);

    std::vector<MatrixXd> dx(steps), da1(steps);
    std::vector<MatrixXd> dDxx, dDxy, dDa1x, dDa1y;
    if (need_bc) {
      dDxx.resize(steps);
      dDxy.resize(steps);
      dDa1x.resize(steps);
      dDa1y.resize(steps);
    }

    // Skip path and tanh at a2, producing dz2 (and its D counterparts).
    std::vector<MatrixXd> dz2(steps), dDz2x, dDz2y;
    if (need_bc) {
      dDz2x.resize(steps);
      dDz2y.resize(steps);
    }
    for (int s = 0; s < steps; ++s) {
      g.blocks[b].dws.noalias() += dout[s].transpose() * x[s];
      g.blocks[b].dbs.noalias() += dout[s].colwise().sum().transpose();
      dx[s].noalias() = dout[s] * blk.skip_w;

      MatrixXd da2 = dout[s];
      const auto a2 = bc.a2[s].array();
      if (need_bc) {
        const auto& bdx = dcx.blocks[b];
        const auto& bdy = dcy.blocks[b];
        // The skip-path derivative weight gradient needs this block's D
        // input tangent; it is accumulated in the conv1 loop below.
        const auto a2b = bc.a2[s].bottomRows(nb).array();
        da2.bottomRows(nb) +=
            (dDoutx[s].array() * bdx.dz2[s].array() * (-2.0 * a2b)).matrix() +
            (dDouty[s].array() * bdy.dz2[s].array() * (-2.0 * a2b)).matrix();
        dDz2x[s] = (dDoutx[s].array() * (1.0 - a2b.square())).matrix();
        dDz2y[s] = (dDouty[s].array() * (1.0 - a2b.square())).matrix();
      }
      dz2[s] = (da2.array() * (1.0 - a2.square())).matrix();
    }

    // conv2 backward.
    for (int s = 0; s < steps; ++s) {
      da1[s] = MatrixXd::Zero(x[s].rows(), nf);
      for (int i = 0; i < blk.conv2.k; ++i) {
        const int src = s - dil * i;
        if (src < 0) break;
        g.blocks[b].dw2.middleCols(i * nf, nf).noalias() += dz2[s].transpose() * bc.a1[src];
      }
      for (int i = 0; i < blk.conv2.k; ++i) {
        const int dst = s + dil * i;
        if (dst >= steps) break;
        da1[s].noalias() += dz2[dst] * bc.w2.middleCols(i * nf, nf);
      }
      g.blocks[b].db2.noalias() += dz2[s].colwise().sum().transpose();
      if (need_bc) {
        g.blocks[b].dw2.middleCols(0, nf).noalias() +=
            dDz2x[s].transpose() * dcx.blocks[b].da1[s] +
            dDz2y[s].transpose() * dcy.blocks[b].da1[s];
        dDa1x[s].noalias() = dDz2x[s] * w2_0;
        dDa1y[s].noalias() = dDz2y[s] * w2_0;
      }
    }

    // tanh at a1 and conv1 backward.
    std::vector<MatrixXd> dz1(steps), dDz1x, dDz1y;
    if (need_bc) {
      dDz1x.resize(steps);
      dDz1y.resize(steps);
    }
    for (int s = 0; s < steps; ++s) {
      const auto a1 = bc.a1[s].array();
      if (need_bc) {
        const auto& bdx = dcx.blocks[b];
        const auto& bdy = dcy.blocks[b];
        const auto a1b = bc.a1[s].bottomRows(nb).array();
        da1[s].bottomRows(nb) +=
            (dDa1x[s].array() * bdx.dz1[s].array() * (-2.0 * a1b)).matrix() +
            (dDa1y[s].array() * bdy.dz1[s].array() * (-2.0 * a1b)).matrix();
        dDz1x[s] = (dDa1x[s].array() * (1.0 - a1b.square())).matrix();
        dDz1y[s] = (dDa1y[s].array() * (1.0 - a1b.square())).matrix();
      }
      dz1[s] = (da1[s].array() * (1.0 - a1.square())).matrix();
    }
    for (int s = 0; s < steps; ++s) {
      for (int i = 0; i < blk.conv1.k; ++i) {
        const int src = s - dil * i;
        if (src < 0) break;
        g.blocks[b].dw1.middleCols(i * c_in, c_in).noalias() += dz1[s].transpose() * x[src];
      }
      for (int i = 0; i < blk.conv1.k; ++i) {
        const int dst = s + dil * i;
        if (dst >= steps) break;
        dx[s].noalias() += dz1[dst] * bc.w1.middleCols(i * c_in, c_in);
      }
      g.blocks[b].db1.noalias() += dz1[s].colwise().sum().transpose();
      if (need_bc) {
        // D input tangent of this block (unit feature column for b = 0).
        if (b == 0) {
          MatrixXd din = MatrixXd::Zero(nb, c_in);
          din.col(0).setOnes();
          g.blocks[b].dw1.middleCols(0, c_in).noalias() += dDz1x[s].transpose() * din;
          g.blocks[b].dws.noalias() += dDoutx[s].transpose() * din;
          din.col(0).setZero();
          din.col(1).setOnes();
          g.blocks[b].dw1.middleCols(0, c_in).noalias() += dDz1y[s].transpose() * din;
          g.blocks[b].dws.noalias() += dDouty[s].transpose() * din;
        } else {
          const auto& dinx = dcx.blocks[b - 1].dout[s];
          const auto& diny = dcy.blocks[b - 1].dout[s];
          g.blocks[b].dw1.middleCols(0, c_in).noalias() +=
              dDz1x[s].transpose() * dinx + dDz1y[s].transpose() * diny;
          g.blocks[b].dws.noalias() +=
              dDoutx[s].transpose() * dinx + dDouty[s].transpose() * diny;
          dDxx[s].noalias() = dDz1x[s] * w1_0 + dDoutx[s] * blk.skip_w;
          dDxy[s].noalias() = dDz1y[s] * w1_0 + dDouty[s] * blk.skip_w;
        }
      }
    }

    dout = std::move(dx);
    if (need_bc && b > 0) {
      dDoutx = std::move(dDxx);
      dDouty = std::move(dDxy);
    }
  }

  *grad = flatten_grads(model, g);
  return breakdown;
}

TrainResult train_adam(TcnModel model, const TrainingBatch& batch, const LossWeights& weights,
                       int epochs, const AdamConfig& adam) {
  if (epochs < 0) throw NnError("epoch count must be nonnegative");
  TrainResult result;
  VectorXd params = model.get_params();
  VectorXd m = VectorXd::Zero(params.size());
  VectorXd v = VectorXd::Zero(params.size());
  VectorXd grad(params.size());
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    const LossBreakdown lb = tcn_loss_and_grad(model, batch, weights, &grad);
    if (!std::isfinite(lb.total)) {
      throw NnError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(lb);
    m = adam.beta1 * m + (1.0 - adam.beta1) * grad;
    v = adam.beta2 * v + (1.0 - adam.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(adam.beta1, epoch);
    const double bc2 = 1.0 - std::pow(adam.beta2, epoch);
    params -= (adam.lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + adam.eps).matrix());
    model.set_params(params);
  }
  result.model = std::move(model);
  return result;
}

void save_checkpoint(const TcnModel& model, const ScalingScheme& scheme,
                     const std::string& path) {
  nlohmann::json header;
  header["config"] = {{"n_blocks", model.cfg.n_blocks},
                      {"dil", model.cfg.dil},
                      {"k_size", model.cfg.k_size},
                      {"num_filters", model.cfg.num_filters},
                      {"n_features_in", model.cfg.n_features_in},
                      {"dropout", model.cfg.dropout},
                      {"activation", model.cfg.activation}};
  header["scaling"] = scheme.to_json();
  header["n_params"] = model.n_params();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NnError("cannot open checkpoint file for writing: " + path);
  out << "IFENNMODEL 1\n" << header.dump() << "\n";
  const VectorXd params = model.get_params();
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw NnError("failed writing checkpoint: " + path);
}

void load_checkpoint(const std::string& path, TcnModel& model, ScalingScheme& scheme) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NnError("cannot open checkpoint file: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != "IFENNMODEL 1") throw NnError("unrecognized checkpoint format: " + path);
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw NnError(std::string("corrupt checkpoint header: ") + e.what());
  }
  TcnConfig cfg;
  const auto& jc = header.at("config");
  cfg.n_blocks = jc.at("n_blocks").get<int>();
  cfg.dil = jc.at("dil").get<int>();
  cfg.k_size = jc.at("k_size").get<int>();
  cfg.num_filters = jc.at("num_filters").get<int>();
  cfg.n_features_in = jc.at("n_features_in").get<int>();
  cfg.dropout = jc.at("dropout").get<double>();
  cfg.activation = jc.at("activation").get<std::string>();
  model = TcnModel::init(cfg, 0);
  const int n = header.at("n_params").get<int>();
  if (n != model.n_params()) throw NnError("checkpoint parameter count mismatch");
  VectorXd params(n);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(n * sizeof(double))) {
    throw NnError("checkpoint truncated: " + path);
  }
  model.set_params(params);
  scheme = ScalingScheme::from_json(header.at("scaling"));
}

}  // namespace ifenn
