#include "ifenn/fem.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>

namespace ifenn {

using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector3d;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

std::string to_string(Scheme s) {
  return s == Scheme::Monolithic ? "monolithic" : "staggered";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "monolithic") return Scheme::Monolithic;
  if (s == "staggered") return Scheme::Staggered;
  throw FemError("unknown solver scheme: " + s);
}

int SolverConfig::n_increments() const {
  return static_cast<int>(std::llround(lf_max / dlf));
}

void SolverConfig::validate() const {
  if (!(tol > 0.0 && tol < 1.0)) throw FemError("tol must be in (0, 1)");
  if (max_iter < 1) throw FemError("max_iter must be at least 1");
  if (!(dlf > 0.0)) throw FemError("loadfactor step must be positive");
  if (!(lf_max > 0.0 && lf_max <= 1.0)) throw FemError("lf_max must be in (0, 1]");
  const int n = n_increments();
  if (n < 1 || std::abs(n * dlf - lf_max) > 1e-9) {
    throw FemError("loadfactor step does not evenly cover lf_max");
  }
}

MatrixXd b_matrix(const GaussPointData& gp) {
  const int nen = static_cast<int>(gp.N.size());
  MatrixXd b = MatrixXd::Zero(3, 2 * nen);
  for (int a = 0; a < nen; ++a) {
    b(0, 2 * a) = gp.dN_dx(a, 0);
    b(1, 2 * a + 1) = gp.dN_dx(a, 1);
    b(2, 2 * a) = gp.dN_dx(a, 1);
    b(2, 2 * a + 1) = gp.dN_dx(a, 0);
  }
  return b;
}

ElementMatrices element_system(const Mesh& mesh, int elem, const VectorXd& ue,
                               const VectorXd& ee, const VectorXd& kappa_e,
                               const MaterialParams& mat, bool want_jacobian) {
  const int nen = mesh.nodes_per_element();
  const int ndof = 2 * nen;
  ElementMatrices m;
  m.r_u = VectorXd::Zero(ndof);
  m.r_e = VectorXd::Zero(nen);
  if (want_jacobian) {
    m.j_uu = MatrixXd::Zero(ndof, ndof);
    m.j_ue = MatrixXd::Zero(ndof, nen);
    m.j_eu = MatrixXd::Zero(nen, ndof);
    m.j_ee = MatrixXd::Zero(nen, nen);
  }
  const Eigen::Matrix3d c = constitutive_matrix(mat);
  const double g = mat.g();
  const int ngpe = mesh.gauss_per_element();
  for (int q = 0; q < ngpe; ++q) {
    const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(elem) * ngpe + q];
    const double w = gp.weight * gp.det_jac;
    const MatrixXd b = b_matrix(gp);
    const Vector3d eps = b * ue;
    const EqStrainResult eq = equivalent_strain(eps, mat);
    const double ebar_gp = gp.N.dot(ee);
    const double kap = kappa_e(q);
    const DamageResult dm = mazars_damage(std::max(kap, ebar_gp), mat);
    const double dd = (ebar_gp >= kap) ? dm.dd_deps_bar : 0.0;  // unloading tangent

    const Vector3d sigma = (1.0 - dm.d) * (c * eps);
    m.r_u.noalias() += w * (b.transpose() * sigma);
    const Vector2d grad_e = gp.dN_dx.transpose() * ee;
    m.r_e.noalias() += w * (gp.N * (ebar_gp - eq.value) + g * (gp.dN_dx * grad_e));

    if (want_jacobian) {
      m.j_uu.noalias() += (w * (1.0 - dm.d)) * (b.transpose() * c * b);
      const VectorXd bce = b.transpose() * (c * eps);
      m.j_ue.noalias() += (-w * dd) * (bce * gp.N.transpose());
      const Eigen::RowVectorXd deq = eq.d_deps.transpose() * b;
      m.j_eu.noalias() += (-w) * (gp.N * deq);
      m.j_ee.noalias() +=
          w * (gp.N * gp.N.transpose() + g * (gp.dN_dx * gp.dN_dx.transpose()));
    }
  }
  return m;
}

int FemProblem::n_gauss() const { return mesh.n_gauss(); }
int FemProblem::n_gauss_per_element() const { return mesh.gauss_per_element(); }

std::vector<int> FemProblem::essential_dofs() const {
  std::vector<int> dofs;
  for (const auto& bc : bcs) {
    const auto it = mesh.boundary_sets.find(bc.set);
    if (it == mesh.boundary_sets.end()) throw FemError("unknown boundary set: " + bc.set);
    if (bc.dof != 0 && bc.dof != 1) throw FemError("boundary condition dof must be 0 or 1");
    for (int n : it->second.nodes) dofs.push_back(2 * n + bc.dof);
  }
  std::sort(dofs.begin(), dofs.end());
  dofs.erase(std::unique(dofs.begin(), dofs.end()), dofs.end());
  return dofs;
}

void FemProblem::apply_prescribed(double lf, VectorXd& u) const {
  for (const auto& bc : bcs) {
    const auto it = mesh.boundary_sets.find(bc.set);
    if (it == mesh.boundary_sets.end()) throw FemError("unknown boundary set: " + bc.set);
    const double v = bc.scale_with_lf ? lf * bc.value : bc.value;
    for (int n : it->second.nodes) u(2 * n + bc.dof) = v;
  }
}

double FemProblem::reaction(const VectorXd& r_u_full) const {
  const auto it = mesh.boundary_sets.find(reaction_set);
  if (it == mesh.boundary_sets.end()) throw FemError("unknown reaction set: " + reaction_set);
  double sum = 0.0;
  for (int n : it->second.nodes) sum += r_u_full(2 * n + reaction_dof);
  return sum;
}

VectorXd FemProblem::gp_eps_eq(const VectorXd& u) const {
  VectorXd out(mesh.n_gauss());
  const int nen = mesh.nodes_per_element();
  VectorXd ue(2 * nen);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    for (int a = 0; a < nen; ++a) {
      ue(2 * a) = u(2 * conn[a]);
      ue(2 * a + 1) = u(2 * conn[a] + 1);
    }
    const int ngpe = mesh.gauss_per_element();
    for (int q = 0; q < ngpe; ++q) {
      const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(e) * ngpe + q];
      out(e * ngpe + q) = equivalent_strain(b_matrix(gp) * ue, mat).value;
    }
  }
  return out;
}

MatrixXd FemProblem::gp_coordinates() const {
  MatrixXd xy(mesh.n_gauss(), 2);
  for (int i = 0; i < mesh.n_gauss(); ++i) xy.row(i) = mesh.gauss[i].phys.transpose();
  return xy;
}

namespace {

struct Assembly {
  VectorXd r_u, r_e;
  std::vector<Triplet> uu, ue, eu, ee;  // block-local indices
};

Assembly assemble(const FemProblem& p, const VectorXd& u, const VectorXd& ebar,
                  const VectorXd& kappa, bool want_jacobian) {
  const Mesh& mesh = p.mesh;
  const int nen = mesh.nodes_per_element();
  const int ngpe = mesh.gauss_per_element();
  Assembly a;
  a.r_u = VectorXd::Zero(2 * mesh.n_nodes());
  a.r_e = VectorXd::Zero(mesh.n_nodes());
  VectorXd ue(2 * nen), ee(nen), ke(ngpe);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    for (int i = 0; i < nen; ++i) {
      ue(2 * i) = u(2 * conn[i]);
      ue(2 * i + 1) = u(2 * conn[i] + 1);
      ee(i) = ebar(conn[i]);
    }
    for (int q = 0; q < ngpe; ++q) ke(q) = kappa(e * ngpe + q);
    const ElementMatrices m = element_system(mesh, e, ue, ee, ke, p.mat, want_jacobian);
    for (int i = 0; i < nen; ++i) {
      a.r_u(2 * conn[i]) += m.r_u(2 * i);
      a.r_u(2 * conn[i] + 1) += m.r_u(2 * i + 1);
      a.r_e(conn[i]) += m.r_e(i);
    }
    if (!want_jacobian) continue;
    for (int i = 0; i < nen; ++i) {
      for (int ci = 0; ci < 2; ++ci) {
        const int gr = 2 * conn[i] + ci;
        const int lr = 2 * i + ci;
        for (int j = 0; j < nen; ++j) {
          for (int cj = 0; cj < 2; ++cj) {
            a.uu.emplace_back(gr, 2 * conn[j] + cj, m.j_uu(lr, 2 * j + cj));
          }
          a.ue.emplace_back(gr, conn[j], m.j_ue(lr, j));
        }
      }
      for (int j = 0; j < nen; ++j) {
        for (int cj = 0; cj < 2; ++cj) {
          a.eu.emplace_back(conn[i], 2 * conn[j] + cj, m.j_eu(i, 2 * j + cj));
        }
        a.ee.emplace_back(conn[i], conn[j], m.j_ee(i, j));
      }
    }
  }
  return a;
}

VectorXd sparse_solve(int n, const std::vector<Triplet>& triplets, const VectorXd& rhs,
                      const char* what) {
  Eigen::SparseMatrix<double> mat(n, n);
  mat.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(mat);
  if (lu.info() != Eigen::Success) {
    throw FemError(std::string("linear solve failed (factorization): ") + what);
  }
  VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success) {
    throw FemError(std::string("linear solve failed (substitution): ") + what);
  }
  return x;
}

// Row elimination for essential DOFs: constrained rows become delta = 0.
void constrain_rows(std::vector<Triplet>& triplets, const std::vector<char>& mask) {
  std::vector<Triplet> kept;
  kept.reserve(triplets.size());
  for (const auto& t : triplets) {
    if (!mask[t.row()]) kept.push_back(t);
  }
  for (int i = 0; i < static_cast<int>(mask.size()); ++i) {
    if (mask[i]) kept.emplace_back(i, i, 1.0);
  }
  triplets = std::move(kept);
}

void update_kappa(const FemProblem& p, const VectorXd& ebar, VectorXd& kappa) {
  const Mesh& mesh = p.mesh;
  const int nen = mesh.nodes_per_element();
  const int ngpe = mesh.gauss_per_element();
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    for (int q = 0; q < ngpe; ++q) {
      const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(e) * ngpe + q];
      double v = 0.0;
      for (int i = 0; i < nen; ++i) v += gp.N(i) * ebar(conn[i]);
      kappa(e * ngpe + q) = std::max(kappa(e * ngpe + q), v);
    }
  }
}

}  // namespace

FemRun solve_fem(const FemProblem& problem, const SolverConfig& config) {
  config.validate();
  problem.mat.validate();
  const Mesh& mesh = problem.mesh;
  const int nn = mesh.n_nodes();
  const int nu = 2 * nn;
  const int ntot = nu + nn;

  const std::vector<int> ess = problem.essential_dofs();
  std::vector<char> mask_u(nu, 0);
  for (int d : ess) mask_u[d] = 1;
  std::vector<char> mask_full(ntot, 0);
  for (int d : ess) mask_full[d] = 1;

  VectorXd u = VectorXd::Zero(nu);
  VectorXd ebar = VectorXd::Zero(nn);
  VectorXd kappa = VectorXd::Zero(mesh.n_gauss());

  FemRun run;
  const int n_inc = config.n_increments();
  for (int inc = 1; inc <= n_inc; ++inc) {
    const double lf = inc * config.dlf;
    problem.apply_prescribed(lf, u);

    IncrementResult rec;
    rec.increment = inc;
    rec.lf = lf;
    double norm1 = 0.0;
    bool converged = false;

    for (int iter = 1; iter <= config.max_iter; ++iter) {
      double step_norm = 0.0;
      if (config.scheme == Scheme::Monolithic) {
        Assembly a = assemble(problem, u, ebar, kappa, true);
        std::vector<Triplet> full;
        full.reserve(a.uu.size() + a.ue.size() + a.eu.size() + a.ee.size());
        for (const auto& t : a.uu) full.emplace_back(t.row(), t.col(), t.value());
        for (const auto& t : a.ue) full.emplace_back(t.row(), nu + t.col(), t.value());
        for (const auto& t : a.eu) full.emplace_back(nu + t.row(), t.col(), t.value());
        for (const auto& t : a.ee) full.emplace_back(nu + t.row(), nu + t.col(), t.value());
        constrain_rows(full, mask_full);
        VectorXd rhs(ntot);
        rhs << -a.r_u, -a.r_e;
        for (int d : ess) rhs(d) = 0.0;
        const auto t0 = std::chrono::steady_clock::now();
        const VectorXd dx = sparse_solve(ntot, full, rhs, "monolithic system");
        rec.linear_solve_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        u += dx.head(nu);
        ebar += dx.tail(nn);
        step_norm = dx.norm();
      } else {
        // Nonlocal pass with frozen displacements, then equilibrium pass
        // with the updated field. Joint step norm drives convergence.
        Assembly ae = assemble(problem, u, ebar, kappa, true);
        const auto t0 = std::chrono::steady_clock::now();
        const VectorXd de = sparse_solve(nn, ae.ee, -ae.r_e, "staggered nonlocal block");
        rec.linear_solve_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ebar += de;
        Assembly au = assemble(problem, u, ebar, kappa, true);
        constrain_rows(au.uu, mask_u);
        VectorXd rhs = -au.r_u;
        for (int d : ess) rhs(d) = 0.0;
        const auto t1 = std::chrono::steady_clock::now();
        const VectorXd du = sparse_solve(nu, au.uu, rhs, "staggered equilibrium block");
        rec.linear_solve_seconds +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();
        u += du;
        step_norm = std::sqrt(du.squaredNorm() + de.squaredNorm());
      }

      if (iter == 1) {
        norm1 = step_norm;
        rec.r_history.push_back(norm1 == 0.0 ? 0.0 : 1.0);
        rec.iterations = iter;
        if (norm1 == 0.0) {  // nothing moved: already at equilibrium
          rec.final_r = 0.0;
          converged = true;
          break;
        }
        continue;
      }
      const double r = step_norm / norm1;
      rec.r_history.push_back(r);
      rec.iterations = iter;
      if (r < config.tol) {
        rec.final_r = r;
        converged = true;
        break;
      }
    }

    if (!converged) {
      run.converged = false;
      run.failed_increment = inc;
      run.failed_iterations = rec.iterations;
      run.increments.push_back(rec);
      return run;
    }

    update_kappa(problem, ebar, kappa);
    const Assembly post = assemble(problem, u, ebar, kappa, false);
    rec.reaction = problem.reaction(post.r_u);
    run.increments.push_back(rec);

    DofState state;
    state.u = u;
    state.ebar = ebar;
    state.kappa = kappa;
    state.lf = lf;
    state.increment = inc;
    run.history.push_back(std::move(state));
  }
  return run;
}

namespace {

// Natural coordinates of the element's own nodes.
const std::array<std::array<double, 2>, 8> kNodeNat = {{{-1, -1},
                                                        {1, -1},
                                                        {1, 1},
                                                        {-1, 1},
                                                        {0, -1},
                                                        {1, 0},
                                                        {0, 1},
                                                        {-1, 0}}};

// Physical shape-function gradients at an arbitrary natural point.
MatrixXd local_gradients(const Mesh& mesh, int elem, double xi, double eta) {
  const int nen = mesh.nodes_per_element();
  VectorXd n, dxi, deta;
  if (mesh.element_order == 2) {
    shape_q8(xi, eta, n, dxi, deta);
  } else {
    shape_q4(xi, eta, n, dxi, deta);
  }
  Eigen::Matrix2d jac;
  jac.setZero();
  for (int a = 0; a < nen; ++a) {
    const Vector2d& x = mesh.nodes[mesh.elements[elem][a]];
    jac(0, 0) += dxi(a) * x(0);
    jac(0, 1) += dxi(a) * x(1);
    jac(1, 0) += deta(a) * x(0);
    jac(1, 1) += deta(a) * x(1);
  }
  if (!(jac.determinant() > 0.0)) throw FemError("non-positive Jacobian at a nodal point");
  const Eigen::Matrix2d inv = jac.inverse();
  MatrixXd dn_dx(nen, 2);
  for (int a = 0; a < nen; ++a) {
    dn_dx.row(a) = (inv * Vector2d(dxi(a), deta(a))).transpose();
  }
  return dn_dx;
}

std::vector<std::vector<int>> node_to_elements(const Mesh& mesh) {
  std::vector<std::vector<int>> adj(mesh.n_nodes());
  for (int e = 0; e < mesh.n_elements(); ++e) {
    for (int n : mesh.elements[e]) adj[n].push_back(e);
  }
  return adj;
}

}  // namespace

VectorXd nodal_eps_eq(const FemProblem& problem, const VectorXd& u,
                      const std::vector<int>& nodes) {
  const Mesh& mesh = problem.mesh;
  const int nen = mesh.nodes_per_element();
  const std::vector<std::vector<int>> adj = node_to_elements(mesh);
  VectorXd out(static_cast<long>(nodes.size()));
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int node = nodes[i];
    if (adj[node].empty()) throw FemError("boundary node belongs to no element");
    double sum = 0.0;
    for (int e : adj[node]) {
      const auto& conn = mesh.elements[e];
      const int local =
          static_cast<int>(std::find(conn.begin(), conn.end(), node) - conn.begin());
      const MatrixXd dn_dx = local_gradients(mesh, e, kNodeNat[local][0], kNodeNat[local][1]);
      Vector3d eps = Vector3d::Zero();
      for (int a = 0; a < nen; ++a) {
        const double ux = u(2 * conn[a]);
        const double uy = u(2 * conn[a] + 1);
        eps(0) += dn_dx(a, 0) * ux;
        eps(1) += dn_dx(a, 1) * uy;
        eps(2) += dn_dx(a, 1) * ux + dn_dx(a, 0) * uy;
      }
      sum += equivalent_strain(eps, problem.mat).value;
    }
    out(static_cast<long>(i)) = sum / static_cast<double>(adj[node].size());
  }
  return out;
}

Datasets export_datasets(const FemRun& run, const FemProblem& problem, bool want_laplacian) {
  const Mesh& mesh = problem.mesh;
  if (want_laplacian && mesh.element_order != 2) {
    throw FemError("the Laplacian dataset requires second-order elements");
  }
  if (run.history.empty()) throw FemError("no converged increments to export");

  Datasets ds;
  ds.mesh_checksum = mesh.checksum();
  ds.gp_xy = problem.gp_coordinates();

  std::vector<int> bnodes;
  std::vector<Vector2d> bnormals;
  for (const auto& [name, set] : mesh.boundary_sets) {
    for (std::size_t i = 0; i < set.nodes.size(); ++i) {
      bnodes.push_back(set.nodes[i]);
      bnormals.push_back(set.normals[i]);
    }
  }
  const int nb = static_cast<int>(bnodes.size());
  ds.boundary_nodes = bnodes;
  ds.boundary_xy.resize(nb, 2);
  ds.boundary_normals.resize(nb, 2);
  for (int i = 0; i < nb; ++i) {
    ds.boundary_xy.row(i) = mesh.nodes[bnodes[i]].transpose();
    ds.boundary_normals.row(i) = bnormals[i].transpose();
  }

  const int ninc = static_cast<int>(run.history.size());
  const int ng = mesh.n_gauss();
  ds.eps_eq.resize(ninc, ng);
  ds.ebar.resize(ninc, ng);
  ds.eps_eq_boundary.resize(ninc, nb);
  if (want_laplacian) ds.laplacian.resize(ninc, ng);

  const int nen = mesh.nodes_per_element();
  const int ngpe = mesh.gauss_per_element();
  for (int t = 0; t < ninc; ++t) {
    const DofState& st = run.history[t];
    ds.lf.push_back(st.lf);
    ds.eps_eq.row(t) = problem.gp_eps_eq(st.u).transpose();
    ds.eps_eq_boundary.row(t) = nodal_eps_eq(problem, st.u, bnodes).transpose();
    for (int e = 0; e < mesh.n_elements(); ++e) {
      const auto& conn = mesh.elements[e];
      VectorXd ee(nen);
      for (int a = 0; a < nen; ++a) ee(a) = st.ebar(conn[a]);
      for (int q = 0; q < ngpe; ++q) {
        const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(e) * ngpe + q];
        ds.ebar(t, e * ngpe + q) = gp.N.dot(ee);
        if (want_laplacian) {
          const Vector2d df_dx = gp.dN_dx.transpose() * ee;
          const Vector3d d2nat = gp.d2N.transpose() * ee;
          const Vector3d d2phys = second_derivatives_physical(gp, df_dx, d2nat);
          ds.laplacian(t, e * ngpe + q) = d2phys(0) + d2phys(1);
        }
      }
    }
  }
  return ds;
}

}  // namespace ifenn
