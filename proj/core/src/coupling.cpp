#include "ifenn/coupling.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <chrono>
#include <cmath>

namespace ifenn {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

std::string to_string(NrMode m) { return m == NrMode::Full ? "full" : "modified"; }

NrMode nr_mode_from_string(const std::string& s) {
  if (s == "full") return NrMode::Full;
  if (s == "modified") return NrMode::Modified;
  throw FemError("unknown Newton-Raphson mode: " + s);
}

void IfennConfig::validate() const {
  solver.validate();
  if (activation_increment < 1) throw FemError("activation increment must be at least 1");
  if (activation_increment > solver.n_increments() + 1) {
    throw FemError("activation increment lies beyond the load schedule");
  }
}

TcnPredictor::TcnPredictor(TcnModel model, ScalingScheme scheme, MatrixXd gp_xy,
                           std::vector<double> lf_schedule)
    : model_(std::move(model)),
      scheme_(std::move(scheme)),
      gp_xy_(std::move(gp_xy)),
      lf_(std::move(lf_schedule)) {
  if (lf_.empty()) throw NnError("empty loadfactor schedule");
  if (model_.cfg.n_features_in != 4) {
    throw NnError("network feature count does not match the coupling input layout");
  }
}

void TcnPredictor::predict(int increment, const std::vector<VectorXd>& eps_eq_history,
                           VectorXd& ebar_gp, VectorXd& debar_deq_gp) {
  const int total = static_cast<int>(lf_.size());
  if (increment < 1 || increment > total) {
    throw NnError("increment outside the network's trained sequence length");
  }
  if (static_cast<int>(eps_eq_history.size()) < increment) {
    throw NnError("local strain history shorter than the requested increment");
  }
  const int points = static_cast<int>(gp_xy_.rows());

  SequenceTensor seq;
  seq.steps.assign(total, MatrixXd::Zero(points, 4));
  seq.real_mask.assign(total, 0);
  double a_n = 1.0, b_n = 0.0;
  for (int t = 0; t < increment; ++t) {
    double a = 1.0, b = 0.0;
    fit_increment(scheme_, eps_eq_history[t], a, b);
    seq.steps[t].col(0) = gp_xy_.col(0);
    seq.steps[t].col(1) = gp_xy_.col(1);
    seq.steps[t].col(2) = (a * eps_eq_history[t].array() + b).matrix();
    seq.steps[t].col(3).setConstant(lf_[t]);
    seq.real_mask[t] = 1;
    if (t == increment - 1) {
      a_n = a;
      b_n = b;
    }
  }

  const MatrixXd preds = tcn_forward(model_, seq);
  const std::vector<MatrixXd> grads = tcn_input_gradients(model_, seq, {2});
  ebar_gp = ((preds.row(increment - 1).transpose().array() - b_n) / a_n).matrix();
  // d(ebar)/d(eps_eq) equals the scaled-space derivative: numerator and
  // denominator carry the same a_n.
  debar_deq_gp = grads[0].row(increment - 1).transpose();
}

ExactFieldPredictor::ExactFieldPredictor(MatrixXd ebar_per_increment)
    : ebar_(std::move(ebar_per_increment)) {}

void ExactFieldPredictor::predict(int increment, const std::vector<VectorXd>&,
                                  VectorXd& ebar_gp, VectorXd& debar_deq_gp) {
  if (increment < 1 || increment > ebar_.rows()) {
    throw FemError("increment outside the stored nonlocal field history");
  }
  ebar_gp = ebar_.row(increment - 1).transpose();
  debar_deq_gp = VectorXd::Zero(ebar_.cols());
}

void AnalyticPredictor::predict(int, const std::vector<VectorXd>& eps_eq_history,
                                VectorXd& ebar_gp, VectorXd& debar_deq_gp) {
  const VectorXd& eps = eps_eq_history.back();
  ebar_gp.resize(eps.size());
  debar_deq_gp.resize(eps.size());
  for (long i = 0; i < eps.size(); ++i) {
    const auto [v, dv] = map_(eps(i));
    ebar_gp(i) = v;
    debar_deq_gp(i) = dv;
  }
}

IfennSystem assemble_ifenn(const FemProblem& problem, const VectorXd& u,
                           const VectorXd& ebar_gp, const VectorXd& debar_deq_gp,
                           const VectorXd& kappa, NrMode mode) {
  const Mesh& mesh = problem.mesh;
  const int nen = mesh.nodes_per_element();
  const int ngpe = mesh.gauss_per_element();
  const int nu = 2 * mesh.n_nodes();
  const Eigen::Matrix3d c = constitutive_matrix(problem.mat);

  IfennSystem sys;
  sys.r = VectorXd::Zero(nu);
  std::vector<Triplet> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.n_elements()) * 4 * nen * nen);

  VectorXd ue(2 * nen);
  MatrixXd je(2 * nen, 2 * nen);
  VectorXd re(2 * nen);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    for (int i = 0; i < nen; ++i) {
      ue(2 * i) = u(2 * conn[i]);
      ue(2 * i + 1) = u(2 * conn[i] + 1);
    }
    je.setZero();
    re.setZero();
    for (int q = 0; q < ngpe; ++q) {
      const int gidx = e * ngpe + q;
      const GaussPointData& gp = mesh.gauss[gidx];
      const double w = gp.weight * gp.det_jac;
      const MatrixXd b = b_matrix(gp);
      const Vector3d eps = b * ue;
      const double ebar = ebar_gp(gidx);
      const double kap = kappa(gidx);
      const DamageResult dm = mazars_damage(std::max(kap, ebar), problem.mat);
      const Vector3d ce = c * eps;
      re.noalias() += (w * (1.0 - dm.d)) * (b.transpose() * ce);
      je.noalias() += (w * (1.0 - dm.d)) * (b.transpose() * c * b);
      if (mode == NrMode::Full && ebar >= kap && dm.dd_deps_bar != 0.0) {
        const EqStrainResult eq = equivalent_strain(eps, problem.mat);
        const double chain = dm.dd_deps_bar * debar_deq_gp(gidx);
        const VectorXd bce = b.transpose() * ce;
        const Eigen::RowVectorXd deq = eq.d_deps.transpose() * b;
        je.noalias() += (-w * chain) * (bce * deq);
      }
    }
    for (int i = 0; i < nen; ++i) {
      for (int ci = 0; ci < 2; ++ci) {
        const int gr = 2 * conn[i] + ci;
        sys.r(gr) += re(2 * i + ci);
        for (int j = 0; j < nen; ++j) {
          for (int cj = 0; cj < 2; ++cj) {
            triplets.emplace_back(gr, 2 * conn[j] + cj, je(2 * i + ci, 2 * j + cj));
          }
        }
      }
    }
  }
  sys.j.resize(nu, nu);
  sys.j.setFromTriplets(triplets.begin(), triplets.end());
  return sys;
}

namespace {

void constrain_system(Eigen::SparseMatrix<double>& j, const std::vector<char>& mask,
                      const std::vector<int>& ess) {
  for (int k = 0; k < j.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(j, k); it; ++it) {
      if (mask[it.row()]) it.valueRef() = 0.0;
    }
  }
  for (int d : ess) j.coeffRef(d, d) = 1.0;
}

}  // namespace

IfennRun solve_ifenn(const FemProblem& problem, NonlocalPredictor& predictor,
                     const IfennConfig& config) {
  config.validate();
  problem.mat.validate();
  const Mesh& mesh = problem.mesh;
  const int nn = mesh.n_nodes();
  const int nu = 2 * nn;
  const int ngpe = mesh.gauss_per_element();
  const int n_inc = config.solver.n_increments();

  const std::vector<int> ess = problem.essential_dofs();
  std::vector<char> mask(nu, 0);
  for (int d : ess) mask[d] = 1;

  IfennRun run;
  VectorXd u = VectorXd::Zero(nu);
  VectorXd kappa = VectorXd::Zero(mesh.n_gauss());
  std::vector<VectorXd> eps_hist;

  // Pre-activation increments run the coupled-field monolithic solver
  // and seed the running strain history.
  if (config.activation_increment > 1) {
    SolverConfig pre = config.solver;
    pre.scheme = Scheme::Monolithic;
    pre.lf_max = (config.activation_increment - 1) * config.solver.dlf;
    const FemRun fem = solve_fem(problem, pre);
    for (std::size_t t = 0; t < fem.history.size(); ++t) {
      const DofState& st = fem.history[t];
      eps_hist.push_back(problem.gp_eps_eq(st.u));
      VectorXd ebar_g(mesh.n_gauss());
      for (int e = 0; e < mesh.n_elements(); ++e) {
        for (int q = 0; q < ngpe; ++q) {
          const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(e) * ngpe + q];
          double v = 0.0;
          for (int a = 0; a < mesh.nodes_per_element(); ++a) {
            v += gp.N(a) * st.ebar(mesh.elements[e][a]);
          }
          ebar_g(e * ngpe + q) = v;
        }
      }
      IfennIncrement rec;
      rec.increment = st.increment;
      rec.lf = st.lf;
      rec.iterations = fem.increments[t].iterations;
      rec.reaction = fem.increments[t].reaction;
      rec.used_fem = true;
      rec.r_u_history = fem.increments[t].r_history;
      rec.system_rows = nu + nn;
      run.increments.push_back(std::move(rec));
      run.u_history.push_back(st.u);
      run.ebar_gp_history.push_back(std::move(ebar_g));
    }
    if (!fem.converged) {
      run.converged = false;
      run.failed_increment = fem.failed_increment;
      run.kappa = kappa;
      return run;
    }
    u = fem.history.back().u;
    kappa = fem.history.back().kappa;
  }

  for (int inc = config.activation_increment; inc <= n_inc; ++inc) {
    const double lf = inc * config.solver.dlf;
    problem.apply_prescribed(lf, u);
    eps_hist.resize(inc);

    IfennIncrement rec;
    rec.increment = inc;
    rec.lf = lf;
    rec.system_rows = nu;
    VectorXd ebar_g, debar;
    double norm1 = 0.0, res1 = 0.0;
    bool converged = false;

    for (int iter = 1; iter <= config.solver.max_iter; ++iter) {
      if (iter == 1 || config.predict_each_iteration) {
        eps_hist[inc - 1] = problem.gp_eps_eq(u);
        predictor.predict(inc, eps_hist, ebar_g, debar);
      }
      IfennSystem sys = assemble_ifenn(problem, u, ebar_g, debar, kappa, config.nr_mode);

      VectorXd r_free = sys.r;
      for (int d : ess) r_free(d) = 0.0;
      const double res_norm = r_free.norm();
      if (iter == 1) res1 = res_norm;
      rec.r_r_history.push_back(res1 == 0.0 ? 0.0 : res_norm / res1);

      constrain_system(sys.j, mask, ess);
      VectorXd rhs = -sys.r;
      for (int d : ess) rhs(d) = 0.0;
      const auto t0 = std::chrono::steady_clock::now();
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(sys.j);
      if (lu.info() != Eigen::Success) throw FemError("coupled linear solve failed");
      const VectorXd du = lu.solve(rhs);
      rec.linear_solve_seconds +=
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      u += du;

      const double step_norm = du.norm();
      rec.iterations = iter;
      if (iter == 1) {
        norm1 = step_norm;
        rec.r_u_history.push_back(norm1 == 0.0 ? 0.0 : 1.0);
        if (norm1 == 0.0) {
          converged = true;
          break;
        }
        continue;
      }
      const double r = step_norm / norm1;
      rec.r_u_history.push_back(r);
      if (r < config.solver.tol) {
        converged = true;
        break;
      }
    }

    if (!converged) {
      run.converged = false;
      run.failed_increment = inc;
      run.increments.push_back(std::move(rec));
      run.kappa = kappa;
      return run;
    }

    // Final consistent prediction and bookkeeping at the converged state.
    eps_hist[inc - 1] = problem.gp_eps_eq(u);
    if (config.predict_each_iteration) predictor.predict(inc, eps_hist, ebar_g, debar);
    kappa = kappa.cwiseMax(ebar_g);
    const IfennSystem post = assemble_ifenn(problem, u, ebar_g, debar, kappa, NrMode::Modified);
    rec.reaction = problem.reaction(post.r);
    run.increments.push_back(std::move(rec));
    run.u_history.push_back(u);
    run.ebar_gp_history.push_back(ebar_g);
  }
  run.kappa = kappa;
  return run;
}

double rse(const VectorXd& predicted, const VectorXd& truth) {
  if (predicted.size() != truth.size()) throw FemError("field size mismatch in RSE");
  double sum = 0.0;
  for (long i = 0; i < truth.size(); ++i) {
    if (std::abs(truth(i)) < 1e-14) continue;
    const double ratio = (predicted(i) - truth(i)) / truth(i);
    sum += ratio * ratio;
  }
  return std::sqrt(sum);
}

SequenceTensor build_sequence(const Datasets& ds, const ScalingScheme& scheme,
                              bool include_boundary) {
  const int ninc = ds.n_increments();
  const int ng = static_cast<int>(ds.gp_xy.rows());
  const int nb = include_boundary ? static_cast<int>(ds.boundary_xy.rows()) : 0;
  if (scheme.n_increments() != ninc) {
    throw ScalingError("scaling scheme increment count does not match the dataset");
  }
  SequenceTensor seq;
  seq.real_mask.assign(ninc, 1);
  seq.steps.assign(ninc, MatrixXd::Zero(ng + nb, 4));
  for (int t = 0; t < ninc; ++t) {
    MatrixXd& m = seq.steps[t];
    m.col(0).head(ng) = ds.gp_xy.col(0);
    m.col(1).head(ng) = ds.gp_xy.col(1);
    for (int i = 0; i < ng; ++i) m(i, 2) = scheme.scale_value(ds.eps_eq(t, i), t);
    m.col(3).setConstant(ds.lf[t]);
    if (nb > 0) {
      m.col(0).tail(nb) = ds.boundary_xy.col(0);
      m.col(1).tail(nb) = ds.boundary_xy.col(1);
      for (int i = 0; i < nb; ++i) {
        m(ng + i, 2) = scheme.scale_value(ds.eps_eq_boundary(t, i), t);
      }
    }
  }
  return seq;
}

TrainingBatch build_training_batch(const Datasets& ds, const ScalingScheme& scheme,
                                   const MaterialParams& mat, bool physics) {
  TrainingBatch batch;
  batch.inputs = build_sequence(ds, scheme, physics);
  const int ninc = ds.n_increments();
  const int ng = static_cast<int>(ds.gp_xy.rows());
  batch.n_gauss_rows = ng;
  batch.target_scaled.resize(ninc, ng);
  for (int t = 0; t < ninc; ++t) {
    for (int i = 0; i < ng; ++i) {
      batch.target_scaled(t, i) = scheme.scale_value(ds.ebar(t, i), t);
    }
  }
  if (physics) {
    if (ds.laplacian.size() == 0) {
      throw FemError("physics training requires the Laplacian dataset (second-order mesh)");
    }
    batch.laplacian = ds.laplacian;
    batch.boundary_normals = ds.boundary_normals;
    batch.scale_a = scheme.a;
    batch.g = mat.g();
  }
  return batch;
}

}  // namespace ifenn
