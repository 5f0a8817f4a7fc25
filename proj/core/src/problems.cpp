#include "ifenn/problems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ifenn {

using Eigen::VectorXd;

Mesh ProblemSpec::build_mesh(const MeshRecipe& recipe) const {
  return build_structured_mesh(width, height, notches, recipe.elem_size, recipe.order);
}

FemProblem ProblemSpec::make_problem(const Mesh& mesh) const {
  FemProblem p;
  p.mesh = mesh;
  p.mat = mat;
  if (name == "snt") {
    // Rollers on the right 70% of the bottom edge, a single pin against
    // horizontal rigid motion at the lower-right corner, tension on top.
    const double x_min = 0.3 * width;
    BoundarySet support, pin;
    const BoundarySet& bottom = p.mesh.boundary_sets.at("bottom");
    int pin_node = -1;
    double pin_dist = std::numeric_limits<double>::max();
    for (std::size_t i = 0; i < bottom.nodes.size(); ++i) {
      const int n = bottom.nodes[i];
      if (p.mesh.nodes[n](0) >= x_min - 1e-9) {
        support.nodes.push_back(n);
        support.normals.push_back(bottom.normals[i]);
      }
      const double dist = std::abs(p.mesh.nodes[n](0) - width);
      if (dist < pin_dist) {
        pin_dist = dist;
        pin_node = n;
      }
    }
    pin.nodes.push_back(pin_node);
    pin.normals.push_back(Eigen::Vector2d(0.0, -1.0));
    p.mesh.boundary_sets["support"] = support;
    p.mesh.boundary_sets["pin"] = pin;
    p.bcs = {{"support", 1, 0.0, false},
             {"pin", 0, 0.0, false},
             {"top", 1, load_value, true}};
    p.reaction_set = "top";
    p.reaction_dof = 1;
  } else if (name == "dnt") {
    p.bcs = {{"bottom", 0, 0.0, false},
             {"bottom", 1, 0.0, false},
             {"top", 1, load_value, true}};
    p.reaction_set = "top";
    p.reaction_dof = 1;
  } else if (name == "sns") {
    p.bcs = {{"bottom", 0, 0.0, false},
             {"bottom", 1, 0.0, false},
             {"top", 1, 0.0, false},
             {"top", 0, load_value, true}};
    p.reaction_set = "top";
    p.reaction_dof = 0;
  } else {
    throw FemError("unknown problem name: " + name);
  }
  return p;
}

ProblemSpec builtin_problem(const std::string& name, const std::string& scale) {
  if (scale != "paper" && scale != "desk") throw FemError("unknown scale: " + scale);
  ProblemSpec spec;
  spec.name = name;
  spec.scale = scale;
  spec.solver.tol = 1e-6;
  spec.solver.max_iter = 200;

  if (name == "snt") {
    spec.width = 100.0;
    spec.height = 100.0;
    spec.mat.eq_strain_kind = EqStrainKind::Principal;
    if (scale == "paper") {
      spec.solver.dlf = 0.005;  // 160 increments
      spec.solver.lf_max = 0.8;
      spec.load_value = 0.01;
      spec.meshes = {{"m1-quad", 5.0, 2},
                     {"m2-linear", 2.5, 1},
                     {"m2-quad", 2.5, 2},
                     {"m3-quad", 2.0, 2}};
    } else {
      spec.solver.dlf = 0.02;  // 40 increments
      spec.solver.lf_max = 0.8;
      // Damage reaches ~0.8 by the end of the schedule without the
      // post-peak collapse that makes the reaction curve mesh-sensitive
      // on the 40-increment grid (higher loads shed half the reaction
      // inside a single increment).
      spec.load_value = 0.009;
      spec.meshes = {{"train-quad", 5.0, 2}, {"test-linear", 2.5, 1}};
    }
  } else if (name == "dnt") {
    spec.width = 70.0;
    spec.height = 140.0;
    // Slit positions estimated from the published geometry figures:
    // left-edge slit at y = 75 reaching x = 15, right-edge slit at
    // y = 65 starting at x = 55 (approximations).
    spec.notches = {{75.0, 0.0, 15.0}, {65.0, 55.0, 70.0}};
    spec.mat.eq_strain_kind = EqStrainKind::ModifiedVonMises;
    spec.load_value = 0.05;  // magnitude not published; picked for comparable damage
    if (scale == "paper") {
      spec.solver.dlf = 0.005;
      spec.solver.lf_max = 0.8;
      spec.meshes = {{"coarse-quad", 5.0, 2},
                     {"intermediate-linear", 1.25, 1},
                     {"fine-linear", 1.0, 1}};
    } else {
      spec.solver.dlf = 0.02;
      spec.solver.lf_max = 0.8;
      spec.meshes = {{"train-quad", 5.0, 2}, {"test-linear", 2.5, 1}};
    }
  } else if (name == "sns") {
    if (scale == "paper") {
      throw FemError(
          "paper-scale sns uses an unstructured notch mesh; import one with a mesh file "
          "instead of the structured builtin");
    }
    spec.width = 100.0;
    spec.height = 100.0;
    spec.notches = {{50.0, 0.0, 50.0}};
    spec.mat.eq_strain_kind = EqStrainKind::ModifiedVonMises;
    spec.load_value = 0.05;  // magnitude not published; picked for comparable damage
    spec.load_dof = 0;
    spec.solver.dlf = 0.02;
    spec.solver.lf_max = 0.8;
    spec.meshes = {{"train-quad", 5.0, 2}, {"test-linear", 2.5, 1}};
  } else {
    throw FemError("unknown problem name: " + name);
  }
  return spec;
}

double max_damage(const VectorXd& kappa, const MaterialParams& mat) {
  if (kappa.size() == 0) return 0.0;
  return mazars_damage(kappa.maxCoeff(), mat).d;
}

std::vector<std::string> calibrate_load(ProblemSpec& spec, double threshold, int max_tries) {
  std::vector<std::string> log;
  for (int attempt = 0; attempt < max_tries; ++attempt) {
    const Mesh mesh = spec.build_mesh(spec.meshes.at(0));
    const FemProblem problem = spec.make_problem(mesh);
    const FemRun run = solve_fem(problem, spec.solver);
    const double d =
        run.history.empty() ? 0.0 : max_damage(run.history.back().kappa, spec.mat);
    if (!run.converged) {
      log.push_back("calibration run diverged at increment " +
                    std::to_string(run.failed_increment) + "; keeping load " +
                    std::to_string(spec.load_value));
      return log;
    }
    if (d > threshold) {
      log.push_back("load " + std::to_string(spec.load_value) + " reaches max damage " +
                    std::to_string(d));
      return log;
    }
    log.push_back("load " + std::to_string(spec.load_value) + " stays elastic (max damage " +
                  std::to_string(d) + "); doubling");
    spec.load_value *= 2.0;
  }
  log.push_back("calibration gave up; final load " + std::to_string(spec.load_value));
  return log;
}

RunSeries series_from(const FemRun& run, const FemProblem* gp_interpolate) {
  RunSeries s;
  for (const auto& rec : run.increments) {
    if (rec.increment > static_cast<int>(run.history.size())) break;  // failed increment
    s.lf.push_back(rec.lf);
    s.reaction.push_back(rec.reaction);
    s.iterations.push_back(rec.iterations);
  }
  for (const auto& st : run.history) {
    if (!gp_interpolate) {
      s.ebar_norm.push_back(st.ebar.norm());
      continue;
    }
    const Mesh& mesh = gp_interpolate->mesh;
    const int nen = mesh.nodes_per_element();
    const int ngpe = mesh.gauss_per_element();
    double sq = 0.0;
    for (int e = 0; e < mesh.n_elements(); ++e) {
      for (int q = 0; q < ngpe; ++q) {
        const GaussPointData& gp = mesh.gauss[static_cast<std::size_t>(e) * ngpe + q];
        double v = 0.0;
        for (int a = 0; a < nen; ++a) v += gp.N(a) * st.ebar(mesh.elements[e][a]);
        sq += v * v;
      }
    }
    s.ebar_norm.push_back(std::sqrt(sq));
  }
  return s;
}

RunSeries series_from(const IfennRun& run) {
  RunSeries s;
  for (std::size_t i = 0; i < run.u_history.size(); ++i) {
    s.lf.push_back(run.increments[i].lf);
    s.reaction.push_back(run.increments[i].reaction);
    s.iterations.push_back(run.increments[i].iterations);
    s.ebar_norm.push_back(run.ebar_gp_history[i].norm());
  }
  return s;
}

CompareReport compare_runs(const RunSeries& a, const RunSeries& b) {
  if (a.lf.size() != b.lf.size()) throw FemError("loadfactor grids differ in length");
  for (std::size_t i = 0; i < a.lf.size(); ++i) {
    if (std::abs(a.lf[i] - b.lf[i]) > 1e-12) throw FemError("loadfactor grids differ");
  }
  CompareReport rep;
  double ref = 0.0;
  for (double r : b.reaction) ref = std::max(ref, std::abs(r));
  for (std::size_t i = 0; i < a.reaction.size(); ++i) {
    const double dev = ref > 0.0 ? 100.0 * std::abs(a.reaction[i] - b.reaction[i]) / ref : 0.0;
    rep.reaction_deviation_pct.push_back(dev);
    rep.max_reaction_deviation_pct = std::max(rep.max_reaction_deviation_pct, dev);
  }
  if (a.ebar_norm.size() == b.ebar_norm.size()) {
    for (std::size_t i = 0; i < a.ebar_norm.size(); ++i) {
      const double t = b.ebar_norm[i];
      rep.ebar_norm_rse.push_back(std::abs(t) < 1e-14
                                      ? 0.0
                                      : std::abs((a.ebar_norm[i] - t) / t));
    }
  }
  rep.iterations_a = a.iterations;
  rep.iterations_b = b.iterations;
  return rep;
}

}  // namespace ifenn
