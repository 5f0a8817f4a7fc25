#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <stdexcept>
#include <string>
#include <vector>

#include "ifenn/material.hpp"
#include "ifenn/mesh.hpp"

namespace ifenn {

struct FemError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Scheme { Monolithic, Staggered };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

/// Essential boundary condition on a named node set. dof 0 = x, 1 = y.
/// Scaled values are multiplied by the loadfactor each increment.
struct DirichletBC {
  std::string set;
  int dof = 0;
  double value = 0.0;
  bool scale_with_lf = false;
};

struct SolverConfig {
  double tol = 1e-6;
  int max_iter = 200;
  double dlf = 0.005;
  double lf_max = 0.8;
  Scheme scheme = Scheme::Monolithic;

  int n_increments() const;
  void validate() const;
};

/// Converged state at the end of an increment. kappa holds the per-GP
/// damage history (nondecreasing).
struct DofState {
  Eigen::VectorXd u;      // 2 * n_nodes
  Eigen::VectorXd ebar;   // n_nodes
  Eigen::VectorXd kappa;  // n_gauss
  double lf = 0.0;
  int increment = 0;
};

struct IncrementResult {
  int increment = 0;
  double lf = 0.0;
  int iterations = 0;
  double final_r = 0.0;
  double reaction = 0.0;
  std::vector<double> r_history;  // |dx_i| / |dx_1| per iteration
  double linear_solve_seconds = 0.0;  // accumulated over iterations
};

struct FemRun {
  bool converged = true;
  int failed_increment = -1;
  int failed_iterations = 0;
  std::vector<DofState> history;  // one converged state per completed increment
  std::vector<IncrementResult> increments;
};

/// Element residuals and tangent blocks for the coupled system.
/// Unknown ordering inside the element: displacements (2 per node, x
/// then y), then nodal nonlocal strain.
struct ElementMatrices {
  Eigen::VectorXd r_u, r_e;
  Eigen::MatrixXd j_uu, j_ue, j_eu, j_ee;
};

/// Strain-displacement matrix (3 x 2*nen), Voigt order (exx, eyy, gxy).
Eigen::MatrixXd b_matrix(const GaussPointData& gp);

/// Evaluates one element at the given local displacement / nonlocal
/// strain vectors and per-GP history. Jacobian blocks are filled only
/// when want_jacobian is set. The consistent tangent uses a zero damage
/// derivative at unloading GPs (ebar below kappa).
ElementMatrices element_system(const Mesh& mesh, int elem, const Eigen::VectorXd& ue,
                               const Eigen::VectorXd& ee, const Eigen::VectorXd& kappa_e,
                               const MaterialParams& mat, bool want_jacobian);

struct FemProblem {
  Mesh mesh;
  MaterialParams mat;
  std::vector<DirichletBC> bcs;
  std::string reaction_set;  // boundary set whose essential-row residuals are summed
  int reaction_dof = 1;

  int n_gauss() const;
  int n_gauss_per_element() const;

  /// Resolved essential displacement-DOF indices (sorted, unique).
  std::vector<int> essential_dofs() const;
  /// Writes prescribed values at loadfactor lf into u.
  void apply_prescribed(double lf, Eigen::VectorXd& u) const;
  /// Sum of internal-force rows over the reaction set at the given dof.
  double reaction(const Eigen::VectorXd& r_u_full) const;
  /// Local equivalent strain at every GP for the given displacements.
  Eigen::VectorXd gp_eps_eq(const Eigen::VectorXd& u) const;
  /// GP coordinates (n_gauss x 2).
  Eigen::MatrixXd gp_coordinates() const;
};

/// Incremental solve with the scheme chosen in config. On nonconvergence
/// the partial history up to the last converged increment is returned.
FemRun solve_fem(const FemProblem& problem, const SolverConfig& config);

/// Per-increment training data extracted from a converged run. Boundary
/// rows carry one entry per (boundary set, node) membership so corner
/// nodes appear once per adjacent face with that face's normal.
struct Datasets {
  Eigen::MatrixXd gp_xy;             // n_gauss x 2
  Eigen::MatrixXd boundary_xy;       // n_boundary x 2
  Eigen::MatrixXd boundary_normals;  // n_boundary x 2
  std::vector<int> boundary_nodes;
  std::vector<double> lf;            // one per increment
  Eigen::MatrixXd eps_eq;            // increments x n_gauss, unscaled
  Eigen::MatrixXd eps_eq_boundary;   // increments x n_boundary, unscaled
  Eigen::MatrixXd ebar;              // increments x n_gauss (labels)
  Eigen::MatrixXd laplacian;         // increments x n_gauss; empty for first-order meshes
  std::uint64_t mesh_checksum = 0;

  int n_increments() const { return static_cast<int>(lf.size()); }
};

/// want_laplacian requires a second-order mesh (nodal second derivatives
/// of the interpolated field are meaningless on bilinear elements).
Datasets export_datasets(const FemRun& run, const FemProblem& problem, bool want_laplacian);

/// Nodal local equivalent strain at the given nodes, averaged over the
/// elements adjacent to each node.
Eigen::VectorXd nodal_eps_eq(const FemProblem& problem, const Eigen::VectorXd& u,
                             const std::vector<int>& nodes);

}  // namespace ifenn
