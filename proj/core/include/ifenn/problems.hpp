#pragma once

#include <string>
#include <vector>

#include "ifenn/coupling.hpp"
#include "ifenn/fem.hpp"

namespace ifenn {

struct MeshRecipe {
  std::string name;
  double elem_size = 0.0;
  int order = 2;
};

/// A canonical benchmark geometry with its loading program and mesh
/// recipes. Paper-scale variants reproduce the published mesh counts;
/// desk-scale variants shrink the load schedule so every pipeline stage
/// runs in minutes. recipe 0 is the training mesh; later entries are
/// test refinements.
struct ProblemSpec {
  std::string name;
  std::string scale;
  double width = 0.0, height = 0.0;
  std::vector<NotchSegment> notches;
  MaterialParams mat;
  SolverConfig solver;
  std::vector<MeshRecipe> meshes;
  double load_value = 0.0;  // prescribed displacement magnitude (mm)
  int load_dof = 1;         // direction on the loaded (top) edge

  Mesh build_mesh(const MeshRecipe& recipe) const;
  /// Mesh plus boundary conditions and reaction bookkeeping.
  FemProblem make_problem(const Mesh& mesh) const;
};

/// name in {snt, dnt, sns}, scale in {paper, desk}. Paper-scale sns
/// needs an imported unstructured mesh and is rejected here.
ProblemSpec builtin_problem(const std::string& name, const std::string& scale);

/// Largest damage value reached anywhere (from the final history field).
double max_damage(const Eigen::VectorXd& kappa, const MaterialParams& mat);

/// Doubles the load until the run develops damage (max d > threshold),
/// up to max_tries. Returns the calibration log lines; the spec is
/// modified in place only when the default load stayed elastic.
std::vector<std::string> calibrate_load(ProblemSpec& spec, double threshold = 0.3,
                                        int max_tries = 3);

/// Per-increment curves extracted from a solver run, for comparisons.
struct RunSeries {
  std::vector<double> lf;
  std::vector<double> reaction;
  std::vector<int> iterations;
  std::vector<double> ebar_norm;  // |nonlocal field| per increment (may be empty)
};

/// With a problem given, the nonlocal norm is taken over the GP-sampled
/// field (comparable to coupled-run output); otherwise over nodal values.
RunSeries series_from(const FemRun& run, const FemProblem* gp_interpolate = nullptr);
RunSeries series_from(const IfennRun& run);

struct CompareReport {
  double max_reaction_deviation_pct = 0.0;
  std::vector<double> reaction_deviation_pct;  // per increment, relative to max |B|
  std::vector<double> ebar_norm_rse;           // |,,a| vs |,,b| relative deviation
  std::vector<int> iterations_a, iterations_b;
};

/// Requires identical loadfactor grids.
CompareReport compare_runs(const RunSeries& a, const RunSeries& b);

}  // namespace ifenn
