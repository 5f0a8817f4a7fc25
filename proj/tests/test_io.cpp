#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ifenn/io.hpp"
#include "ifenn/problems.hpp"

using namespace ifenn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() : path(fs::temp_directory_path() / "ifenn_io_test") {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("tensor file round trip") {
  TempDir tmp;
  TensorFile t;
  t.header = {{"shape", {2, 3}}, {"kind", "test"}};
  t.data = {1.0, -2.5, 3.25, 0.0, 1e-17, 4.0};
  save_tensor(tmp.str("a.tns"), t);
  TensorFile r = load_tensor(tmp.str("a.tns"));
  CHECK(r.header.at("kind") == "test");
  CHECK(r.data == t.data);  // bit-exact: raw little-endian doubles
}

TEST_CASE("tensor loader rejects garbage") {
  TempDir tmp;
  {
    std::ofstream out(tmp.str("bad.tns"), std::ios::binary);
    out << "NOTATENSOR\n";
  }
  CHECK_THROWS_AS(load_tensor(tmp.str("bad.tns")), IoError);
  CHECK_THROWS_AS(load_tensor(tmp.str("missing.tns")), IoError);
}

TEST_CASE("dataset save/load round trip on a real run") {
  TempDir tmp;
  ProblemSpec spec = builtin_problem("snt", "desk");
  spec.solver.lf_max = 0.08;  // 4 increments
  Mesh mesh = spec.build_mesh(spec.meshes[0]);
  FemProblem p = spec.make_problem(mesh);
  FemRun run = solve_fem(p, spec.solver);
  REQUIRE(run.converged);
  Datasets ds = export_datasets(run, p, true);
  save_datasets(ds, tmp.path.string());
  Datasets r = load_datasets(tmp.path.string());
  CHECK(r.n_increments() == ds.n_increments());
  CHECK(r.mesh_checksum == ds.mesh_checksum);
  CHECK((r.gp_xy - ds.gp_xy).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.eps_eq - ds.eps_eq).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.ebar - ds.ebar).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.laplacian - ds.laplacian).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.boundary_normals - ds.boundary_normals).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.boundary_nodes == ds.boundary_nodes);
  CHECK(r.lf == ds.lf);
}

TEST_CASE("csv writers are deterministic byte for byte") {
  TempDir tmp;
  std::vector<IncrementResult> recs(3);
  for (int i = 0; i < 3; ++i) {
    recs[i].increment = i + 1;
    recs[i].lf = 0.02 * (i + 1);
    recs[i].iterations = 4 + i;
    recs[i].final_r = 1e-8 / (i + 1);
    recs[i].reaction = 10.0 * (i + 1) / 3.0;
    recs[i].r_history = {1.0, 1e-3, 1e-7};
    recs[i].linear_solve_seconds = 0.123 * i;  // must not appear in the file
  }
  write_reaction_csv(tmp.str("a.csv"), recs);
  write_reaction_csv(tmp.str("b.csv"), recs);
  std::string a = slurp(tmp.str("a.csv"));
  CHECK(a == slurp(tmp.str("b.csv")));
  CHECK(a.find("seconds") == std::string::npos);
  CHECK(a.find("time") == std::string::npos);

  std::vector<IfennIncrement> incs(2);
  incs[0].increment = 1;
  incs[0].lf = 0.02;
  incs[0].iterations = 3;
  incs[0].reaction = 1.5;
  incs[0].used_fem = true;
  incs[0].system_rows = 100;
  incs[0].linear_solve_seconds = 1.0;
  incs[1] = incs[0];
  incs[1].increment = 2;
  incs[1].used_fem = false;
  incs[1].linear_solve_seconds = 2.0;  // timing differs, bytes must not
  write_ifenn_reaction_csv(tmp.str("c.csv"), incs);
  incs[0].linear_solve_seconds = 7.0;
  write_ifenn_reaction_csv(tmp.str("d.csv"), incs);
  CHECK(slurp(tmp.str("c.csv")) == slurp(tmp.str("d.csv")));
}

TEST_CASE("series csv round trip") {
  TempDir tmp;
  RunSeries s;
  s.lf = {0.02, 0.04, 0.06};
  s.reaction = {1.25, 2.5, 3.0e-7};
  s.iterations = {4, 5, 6};
  s.ebar_norm = {1e-4, 2e-4, 3e-4};
  write_series_csv(tmp.str("s.csv"), s);
  RunSeries r = read_series_csv(tmp.str("s.csv"));
  REQUIRE(r.lf.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.lf[i] == s.lf[i]);  // %.17g survives the round trip exactly
    CHECK(r.reaction[i] == s.reaction[i]);
    CHECK(r.iterations[i] == s.iterations[i]);
    CHECK(r.ebar_norm[i] == s.ebar_norm[i]);
  }
}

TEST_CASE("loss csv layout") {
  TempDir tmp;
  std::vector<LossBreakdown> hist(2);
  hist[0] = {3.0, 2.0, 0.75, 0.25};
  hist[1] = {1.5, 1.0, 0.4, 0.1};
  write_loss_csv(tmp.str("l.csv"), hist);
  std::string text = slurp(tmp.str("l.csv"));
  CHECK(text.find("epoch") != std::string::npos);
  CHECK(text.find("3") != std::string::npos);
  std::ifstream in(tmp.str("l.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 3);  // header + one row per epoch
}
