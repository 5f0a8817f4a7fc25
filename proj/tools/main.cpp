// Batch driver for the damage-FEM / network pipeline: dataset generation,
// training, coupled solves, run comparison and architecture sweeps.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "ifenn/coupling.hpp"
#include "ifenn/fem.hpp"
#include "ifenn/io.hpp"
#include "ifenn/material.hpp"
#include "ifenn/mesh.hpp"
#include "ifenn/nn.hpp"
#include "ifenn/problems.hpp"
#include "ifenn/scaling.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ifenn;

namespace {

constexpr int kOk = 0;
constexpr int kNonConvergence = 2;
constexpr int kConfigError = 3;
constexpr int kIoError = 4;

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
}

std::string resolve_output(const std::string& dir) {
  const char* root = std::getenv("IFENN_OUTPUT_ROOT");
  if (root && *root && fs::path(dir).is_relative()) {
    return (fs::path(root) / dir).string();
  }
  return dir;
}

void apply_material(MaterialParams& mat, const json& j) {
  mat.E = j.value("E", mat.E);
  mat.nu = j.value("nu", mat.nu);
  mat.alpha = j.value("alpha", mat.alpha);
  mat.beta = j.value("beta", mat.beta);
  mat.eps_d = j.value("eps_d", mat.eps_d);
  mat.l_c = j.value("l_c", mat.l_c);
  mat.k_vm = j.value("k_vm", mat.k_vm);
  if (j.contains("plane_mode")) {
    mat.plane_mode =
        j.at("plane_mode") == "stress" ? PlaneMode::Stress : PlaneMode::Strain;
  }
  if (j.contains("eq_strain")) {
    mat.eq_strain_kind = j.at("eq_strain") == "modified_von_mises"
                             ? EqStrainKind::ModifiedVonMises
                             : EqStrainKind::Principal;
  }
  mat.validate();
}

void apply_solver(SolverConfig& s, const json& j) {
  s.tol = j.value("tol", s.tol);
  s.max_iter = j.value("max_iter", s.max_iter);
  s.dlf = j.value("dlf", s.dlf);
  s.lf_max = j.value("lf_max", s.lf_max);
}

ProblemSpec spec_from_config(const json& cfg) {
  const json& p = cfg.at("problem");
  ProblemSpec spec =
      builtin_problem(p.at("name").get<std::string>(), p.value("scale", "desk"));
  spec.load_value = p.value("load_value", spec.load_value);
  if (cfg.contains("material")) apply_material(spec.mat, cfg.at("material"));
  if (cfg.contains("solver")) apply_solver(spec.solver, cfg.at("solver"));
  return spec;
}

const MeshRecipe& find_recipe(const ProblemSpec& spec, const json& cfg) {
  const std::string name = cfg.at("problem").value("mesh", spec.meshes.at(0).name);
  for (const auto& r : spec.meshes) {
    if (r.name == name) return r;
  }
  throw std::invalid_argument("unknown mesh recipe: " + name);
}

TcnConfig tcn_from_config(const json& cfg) {
  TcnConfig t;
  if (cfg.contains("tcn")) {
    const json& j = cfg.at("tcn");
    t.n_blocks = j.value("n_blocks", t.n_blocks);
    t.dil = j.value("dil", t.dil);
    t.k_size = j.value("k_size", t.k_size);
    t.num_filters = j.value("num_filters", t.num_filters);
  }
  t.validate();
  return t;
}

struct TrainSettings {
  LossWeights weights;
  int epochs = 1000;
  AdamConfig adam;
  std::uint64_t seed = 1;
  ScalingKind scaling = ScalingKind::CD;
  double cd_exponent = 4.0, vm_target = 1.0, mm_new_max = 10.0;
};

TrainSettings train_settings(const json& cfg) {
  TrainSettings s;
  if (cfg.contains("training")) {
    const json& j = cfg.at("training");
    s.weights.w_data = j.value("w_data", 1.0);
    s.weights.w_physics = j.value("w_physics", 0.0);
    s.epochs = j.value("epochs", 1000);
    s.adam.lr = j.value("lr", 1e-3);
    s.seed = j.value("seed", std::uint64_t{1});
  }
  if (cfg.contains("scaling")) {
    const json& j = cfg.at("scaling");
    s.scaling = scaling_kind_from_string(j.value("kind", "cd"));
    s.cd_exponent = j.value("cd_exponent", 4.0);
    s.vm_target = j.value("vm_target", 1.0);
    s.mm_new_max = j.value("mm_new_max", 10.0);
  }
  return s;
}

std::vector<Eigen::VectorXd> per_increment_strain(const Datasets& ds) {
  std::vector<Eigen::VectorXd> rows;
  for (int t = 0; t < ds.n_increments(); ++t) rows.push_back(ds.eps_eq.row(t).transpose());
  return rows;
}

/// Trains against a dataset directory; shared by train and sweep.
struct Trained {
  TcnModel model;
  ScalingScheme scheme;
  std::vector<LossBreakdown> history;
  std::vector<double> rse_per_increment;  // on the training data, unscaled
};

Trained run_training(const Datasets& ds, const MaterialParams& mat, TcnConfig tcn,
                     const TrainSettings& ts) {
  Trained out;
  std::vector<std::string> warnings;
  out.scheme = fit_scaling(ts.scaling, per_increment_strain(ds), ts.cd_exponent,
                           ts.vm_target, ts.mm_new_max, &warnings);
  for (const auto& w : warnings) std::cerr << "scaling: " << w << "\n";
  const bool physics = ts.weights.w_physics > 0.0;
  const TrainingBatch batch = build_training_batch(ds, out.scheme, mat, physics);
  TcnModel model = TcnModel::init(tcn, ts.seed);
  TrainResult res = train_adam(std::move(model), batch, ts.weights, ts.epochs, ts.adam);
  out.model = std::move(res.model);
  out.history = std::move(res.history);

  const Eigen::MatrixXd preds = tcn_forward(out.model, batch.inputs);
  const int ng = batch.n_gauss_rows;
  for (int t = 0; t < ds.n_increments(); ++t) {
    Eigen::VectorXd pred(ng);
    for (int i = 0; i < ng; ++i) pred(i) = out.scheme.unscale_value(preds(t, i), t);
    out.rse_per_increment.push_back(rse(pred, ds.ebar.row(t).transpose()));
  }
  return out;
}

int cmd_generate(const json& cfg) {
  ProblemSpec spec = spec_from_config(cfg);
  if (cfg.at("problem").value("calibrate", false)) {
    for (const auto& line : calibrate_load(spec)) std::cout << line << "\n";
  }
  const MeshRecipe& recipe = find_recipe(spec, cfg);
  const Mesh mesh = spec.build_mesh(recipe);
  const FemProblem problem = spec.make_problem(mesh);
  const bool want_laplacian = cfg.value("laplacian", recipe.order == 2);
  if (want_laplacian && recipe.order != 2) {
    throw std::invalid_argument(
        "the Laplacian dataset needs second-order elements; pick a quadratic mesh recipe");
  }

  const std::string out = resolve_output(cfg.at("output").get<std::string>());
  fs::create_directories(out);
  const FemRun run = solve_fem(problem, spec.solver);
  if (!run.history.empty()) {
    const Datasets ds = export_datasets(run, problem, want_laplacian);
    save_datasets(ds, out);
  }
  write_reaction_csv(out + "/reactions.csv", run.increments);
  write_residual_log_csv(out + "/residual_log.csv", run.increments);
  save_mesh_file(mesh, out + "/mesh.json");
  write_series_csv(out + "/series.csv", series_from(run, &problem));
  if (!run.converged) {
    std::cerr << "solver did not converge at increment " << run.failed_increment << " ("
              << run.failed_iterations << " iterations)\n";
    return kNonConvergence;
  }
  std::cout << "wrote datasets for " << run.history.size() << " increments to " << out
            << "\n";
  return kOk;
}

int cmd_train(const json& cfg) {
  const std::string data = resolve_output(cfg.at("data").get<std::string>());
  const Datasets ds = load_datasets(data);
  MaterialParams mat;
  if (cfg.contains("material")) apply_material(mat, cfg.at("material"));
  const TrainSettings ts = train_settings(cfg);
  if (ts.weights.w_physics > 0.0 && ds.laplacian.size() == 0) {
    throw std::invalid_argument("physics loss requested but no Laplacian dataset found");
  }
  const Trained tr = run_training(ds, mat, tcn_from_config(cfg), ts);

  const std::string ckpt = resolve_output(cfg.at("checkpoint").get<std::string>());
  fs::create_directories(fs::path(ckpt).parent_path().empty()
                             ? "."
                             : fs::path(ckpt).parent_path().string());
  save_checkpoint(tr.model, tr.scheme, ckpt);
  if (cfg.contains("loss_csv")) {
    write_loss_csv(resolve_output(cfg.at("loss_csv").get<std::string>()), tr.history);
  }
  if (cfg.contains("rse_csv")) {
    write_rse_csv(resolve_output(cfg.at("rse_csv").get<std::string>()), ds.lf,
                  tr.rse_per_increment);
  }
  std::cout << "final loss " << tr.history.back().total << " after " << tr.history.size()
            << " epochs; checkpoint " << ckpt << "\n";
  return kOk;
}

void write_fem_snapshots(const json& cfg, const std::string& out, const FemRun& run,
                         const FemProblem& problem) {
  if (!cfg.contains("snapshots")) return;
  for (int inc : cfg.at("snapshots").get<std::vector<int>>()) {
    if (inc < 1 || inc > static_cast<int>(run.history.size())) continue;
    const DofState& st = run.history[inc - 1];
    Eigen::VectorXd damage(st.kappa.size());
    for (long i = 0; i < st.kappa.size(); ++i) {
      damage(i) = mazars_damage(st.kappa(i), problem.mat).d;
    }
    save_field_snapshot(out + "/damage_" + std::to_string(inc) + ".tns", "damage",
                        problem.gp_coordinates(), damage, st.lf,
                        problem.mesh.checksum());
  }
}

int cmd_solve(const json& cfg) {
  ProblemSpec spec = spec_from_config(cfg);
  const MeshRecipe& recipe = find_recipe(spec, cfg);
  const Mesh mesh = spec.build_mesh(recipe);
  const FemProblem problem = spec.make_problem(mesh);
  const std::string out = resolve_output(cfg.at("output").get<std::string>());
  fs::create_directories(out);

  const std::string scheme =
      cfg.contains("solver") ? cfg.at("solver").value("scheme", "monolithic")
                             : std::string("monolithic");
  if (scheme == "monolithic" || scheme == "staggered") {
    SolverConfig sc = spec.solver;
    sc.scheme = scheme_from_string(scheme);
    const FemRun run = solve_fem(problem, sc);
    write_reaction_csv(out + "/reactions.csv", run.increments);
    write_residual_log_csv(out + "/residual_log.csv", run.increments);
    write_series_csv(out + "/series.csv", series_from(run, &problem));
    write_fem_snapshots(cfg, out, run, problem);
    if (!run.converged) {
      std::cerr << "solver did not converge at increment " << run.failed_increment << "\n";
      return kNonConvergence;
    }
    std::cout << "completed " << run.history.size() << " increments\n";
    return kOk;
  }
  if (scheme != "ifenn") throw std::invalid_argument("unknown solve scheme: " + scheme);

  const json& ij = cfg.at("ifenn");
  TcnModel model;
  ScalingScheme sch;
  load_checkpoint(resolve_output(ij.at("checkpoint").get<std::string>()), model, sch);
  IfennConfig icfg;
  icfg.solver = spec.solver;
  icfg.nr_mode = nr_mode_from_string(ij.value("nr_mode", "modified"));
  icfg.activation_increment = ij.value("activation_increment", 1);
  icfg.predict_each_iteration = ij.value("predict_each_iteration", true);

  std::vector<double> lf_schedule;
  for (int n = 1; n <= icfg.solver.n_increments(); ++n) lf_schedule.push_back(n * icfg.solver.dlf);
  TcnPredictor predictor(std::move(model), sch, problem.gp_coordinates(), lf_schedule);
  const IfennRun run = solve_ifenn(problem, predictor, icfg);

  write_ifenn_reaction_csv(out + "/reactions.csv", run.increments);
  write_ifenn_residual_log_csv(out + "/residual_log.csv", run.increments);
  write_series_csv(out + "/series.csv", series_from(run));

  if (ij.contains("truth_data")) {
    const Datasets truth = load_datasets(resolve_output(ij.at("truth_data").get<std::string>()));
    if (truth.mesh_checksum != problem.mesh.checksum()) {
      throw std::invalid_argument("truth dataset was generated on a different mesh");
    }
    std::vector<double> lf, errs;
    for (std::size_t i = 0; i < run.ebar_gp_history.size(); ++i) {
      if (static_cast<int>(i) >= truth.n_increments()) break;
      lf.push_back(run.increments[i].lf);
      errs.push_back(rse(run.ebar_gp_history[i], truth.ebar.row(static_cast<int>(i)).transpose()));
    }
    write_rse_csv(out + "/rse.csv", lf, errs);
  }
  if (!run.converged) {
    std::cerr << "coupled solver did not converge at increment " << run.failed_increment
              << "\n";
    return kNonConvergence;
  }
  std::cout << "completed " << run.u_history.size() << " increments\n";
  return kOk;
}

int cmd_compare(const json& cfg) {
  const RunSeries a = read_series_csv(resolve_output(cfg.at("a").get<std::string>()));
  const RunSeries b = read_series_csv(resolve_output(cfg.at("b").get<std::string>()));
  const CompareReport rep = compare_runs(a, b);
  const std::string out = resolve_output(cfg.at("output").get<std::string>());
  fs::create_directories(out);
  write_compare_csv(out + "/compare.csv", a.lf, rep);
  std::cout << "max reaction deviation " << rep.max_reaction_deviation_pct << "%\n";
  return kOk;
}

int cmd_sweep(const json& cfg) {
  const std::string data = resolve_output(cfg.at("data").get<std::string>());
  const Datasets ds = load_datasets(data);
  MaterialParams mat;
  if (cfg.contains("material")) apply_material(mat, cfg.at("material"));
  const TrainSettings ts = train_settings(cfg);
  const TcnConfig base = tcn_from_config(cfg);

  std::vector<std::array<int, 3>> grid;  // dil, k_size, num_filters
  const json& sw = cfg.at("sweep");
  if (sw.contains("random_samples")) {
    const int n = sw.at("random_samples").get<int>();
    std::uint64_t state = sw.value("seed", std::uint64_t{7});
    auto next = [&state](int lo, int hi) {
      state += 0x9e3779b97f4a7c15ull;
      std::uint64_t z = state;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d4a33a8cc9fd2aull;
      z ^= z >> 31;
      return lo + static_cast<int>(z % static_cast<std::uint64_t>(hi - lo + 1));
    };
    for (int i = 0; i < n; ++i) grid.push_back({next(2, 4), next(2, 12), next(2, 24)});
  } else {
    for (int dil : sw.value("dil", std::vector<int>{base.dil}))
      for (int k : sw.value("k_size", std::vector<int>{base.k_size}))
        for (int f : sw.value("num_filters", std::vector<int>{base.num_filters}))
          grid.push_back({dil, k, f});
  }

  struct Row {
    int dil, k, f;
    double loss, max_rse;
  };
  std::vector<Row> rows;
  for (const auto& [dil, k, f] : grid) {
    TcnConfig tcn = base;
    tcn.dil = dil;
    tcn.k_size = k;
    tcn.num_filters = f;
    const Trained tr = run_training(ds, mat, tcn, ts);
    double max_rse = 0.0;
    for (double r : tr.rse_per_increment) max_rse = std::max(max_rse, r);
    rows.push_back({dil, k, f, tr.history.back().total, max_rse});
    std::cout << "dil=" << dil << " k_size=" << k << " num_filters=" << f << " loss "
              << tr.history.back().total << " max_rse " << max_rse << "\n";
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.loss < b.loss; });

  const std::string out = resolve_output(cfg.at("output").get<std::string>());
  fs::create_directories(out);
  std::ofstream csv(out + "/sweep.csv");
  if (!csv) throw IoError("cannot write sweep report");
  csv << "dil,k_size,num_filters,final_loss,max_rse\n";
  for (const auto& r : rows) {
    csv << r.dil << "," << r.k << "," << r.f << "," << r.loss << "," << r.max_rse << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlocal-damage FEM with a convolutional surrogate for the nonlocal field"};
  app.require_subcommand(1);
  std::string config_path;
  for (const char* name : {"generate", "train", "solve", "compare", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("-c,--config", config_path, "JSON run configuration")->required();
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const json cfg = load_config(config_path);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "generate") return cmd_generate(cfg);
    if (cmd == "train") return cmd_train(cfg);
    if (cmd == "solve") return cmd_solve(cfg);
    if (cmd == "compare") return cmd_compare(cfg);
    return cmd_sweep(cfg);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
}
