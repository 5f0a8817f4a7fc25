#include "ifenn/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>

namespace ifenn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr const char* kMagic = "IFENNTENSOR 1";

// Shortest round-trip decimal form, locale independent.
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw IoError("cannot open for writing: " + path);
  return out;
}

}  // namespace

void save_tensor(const std::string& path, const TensorFile& t) {
  std::ofstream out = open_out(path, true);
  out << kMagic << "\n" << t.header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!out) throw IoError("failed writing tensor file: " + path);
}

TensorFile load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kMagic) throw IoError("unrecognized tensor file format: " + path);
  std::getline(in, header_line);
  TensorFile t;
  try {
    t.header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("corrupt tensor header: ") + e.what());
  }
  std::size_t count = 1;
  for (const auto& d : t.header.at("shape")) count *= d.get<std::size_t>();
  t.data.resize(count);
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
    throw IoError("tensor file truncated: " + path);
  }
  return t;
}

void save_datasets(const Datasets& ds, const std::string& dir) {
  const int ninc = ds.n_increments();
  const int ng = static_cast<int>(ds.gp_xy.rows());
  const int nb = static_cast<int>(ds.boundary_xy.rows());
  const int points = ng + nb;

  TensorFile a;
  a.header["kind"] = "dataset_a";
  a.header["shape"] = {ninc, points, 4};
  a.header["features"] = {"x", "y", "eps_eq", "lf"};
  a.header["increments"] = ninc;
  a.header["mesh_checksum"] = ds.mesh_checksum;
  a.header["n_gauss_rows"] = ng;
  a.header["lf"] = ds.lf;
  a.header["boundary_nodes"] = ds.boundary_nodes;
  std::vector<std::vector<double>> normals;
  for (int i = 0; i < nb; ++i) {
    normals.push_back({ds.boundary_normals(i, 0), ds.boundary_normals(i, 1)});
  }
  a.header["boundary_normals"] = normals;
  a.data.reserve(static_cast<std::size_t>(ninc) * points * 4);
  for (int t = 0; t < ninc; ++t) {
    for (int p = 0; p < points; ++p) {
      const bool gauss = p < ng;
      const double x = gauss ? ds.gp_xy(p, 0) : ds.boundary_xy(p - ng, 0);
      const double y = gauss ? ds.gp_xy(p, 1) : ds.boundary_xy(p - ng, 1);
      const double eq = gauss ? ds.eps_eq(t, p) : ds.eps_eq_boundary(t, p - ng);
      a.data.push_back(x);
      a.data.push_back(y);
      a.data.push_back(eq);
      a.data.push_back(ds.lf[t]);
    }
  }
  save_tensor(dir + "/dataset_a.tns", a);

  TensorFile b;
  b.header["kind"] = "dataset_b";
  b.header["shape"] = {ninc, ng};
  b.header["increments"] = ninc;
  b.header["mesh_checksum"] = ds.mesh_checksum;
  b.data.reserve(static_cast<std::size_t>(ninc) * ng);
  for (int t = 0; t < ninc; ++t)
    for (int i = 0; i < ng; ++i) b.data.push_back(ds.ebar(t, i));
  save_tensor(dir + "/dataset_b.tns", b);

  if (ds.laplacian.size() > 0) {
    TensorFile c;
    c.header["kind"] = "dataset_c";
    c.header["shape"] = {ninc, ng};
    c.header["increments"] = ninc;
    c.header["mesh_checksum"] = ds.mesh_checksum;
    c.data.reserve(static_cast<std::size_t>(ninc) * ng);
    for (int t = 0; t < ninc; ++t)
      for (int i = 0; i < ng; ++i) c.data.push_back(ds.laplacian(t, i));
    save_tensor(dir + "/dataset_c.tns", c);
  }
}

Datasets load_datasets(const std::string& dir) {
  const TensorFile a = load_tensor(dir + "/dataset_a.tns");
  const TensorFile b = load_tensor(dir + "/dataset_b.tns");
  if (a.header.at("kind") != "dataset_a" || b.header.at("kind") != "dataset_b") {
    throw IoError("dataset files have unexpected kinds in " + dir);
  }
  Datasets ds;
  const int ninc = a.header.at("increments").get<int>();
  const int points = a.header.at("shape")[1].get<int>();
  const int ng = a.header.at("n_gauss_rows").get<int>();
  const int nb = points - ng;
  ds.mesh_checksum = a.header.at("mesh_checksum").get<std::uint64_t>();
  ds.lf = a.header.at("lf").get<std::vector<double>>();
  ds.boundary_nodes = a.header.at("boundary_nodes").get<std::vector<int>>();
  const auto normals = a.header.at("boundary_normals");
  ds.gp_xy.resize(ng, 2);
  ds.boundary_xy.resize(nb, 2);
  ds.boundary_normals.resize(nb, 2);
  for (int i = 0; i < nb; ++i) {
    ds.boundary_normals(i, 0) = normals[i][0].get<double>();
    ds.boundary_normals(i, 1) = normals[i][1].get<double>();
  }
  ds.eps_eq.resize(ninc, ng);
  ds.eps_eq_boundary.resize(ninc, nb);
  for (int t = 0; t < ninc; ++t) {
    for (int p = 0; p < points; ++p) {
      const std::size_t base = (static_cast<std::size_t>(t) * points + p) * 4;
      if (t == 0) {
        if (p < ng) {
          ds.gp_xy(p, 0) = a.data[base];
          ds.gp_xy(p, 1) = a.data[base + 1];
        } else {
          ds.boundary_xy(p - ng, 0) = a.data[base];
          ds.boundary_xy(p - ng, 1) = a.data[base + 1];
        }
      }
      if (p < ng) {
        ds.eps_eq(t, p) = a.data[base + 2];
      } else {
        ds.eps_eq_boundary(t, p - ng) = a.data[base + 2];
      }
    }
  }
  if (b.header.at("mesh_checksum").get<std::uint64_t>() != ds.mesh_checksum) {
    throw IoError("dataset label file does not match the input file's mesh");
  }
  ds.ebar.resize(ninc, static_cast<int>(b.header.at("shape")[1].get<int>()));
  for (int t = 0; t < ninc; ++t)
    for (int i = 0; i < ds.ebar.cols(); ++i)
      ds.ebar(t, i) = b.data[static_cast<std::size_t>(t) * ds.ebar.cols() + i];

  std::ifstream probe(dir + "/dataset_c.tns", std::ios::binary);
  if (probe) {
    probe.close();
    const TensorFile c = load_tensor(dir + "/dataset_c.tns");
    if (c.header.at("mesh_checksum").get<std::uint64_t>() != ds.mesh_checksum) {
      throw IoError("Laplacian dataset does not match the input file's mesh");
    }
    ds.laplacian.resize(ninc, ng);
    for (int t = 0; t < ninc; ++t)
      for (int i = 0; i < ng; ++i)
        ds.laplacian(t, i) = c.data[static_cast<std::size_t>(t) * ng + i];
  }
  return ds;
}

void write_reaction_csv(const std::string& path, const std::vector<IncrementResult>& recs) {
  std::ofstream out = open_out(path, false);
  out << "increment,lf,reaction,iterations,final_r\n";
  for (const auto& r : recs) {
    out << r.increment << "," << fmt(r.lf) << "," << fmt(r.reaction) << "," << r.iterations
        << "," << fmt(r.final_r) << "\n";
  }
}

void write_ifenn_reaction_csv(const std::string& path,
                              const std::vector<IfennIncrement>& recs) {
  std::ofstream out = open_out(path, false);
  // No wall-clock columns: command outputs must be reproducible byte for byte.
  out << "increment,lf,reaction,iterations,used_fem,system_rows\n";
  for (const auto& r : recs) {
    out << r.increment << "," << fmt(r.lf) << "," << fmt(r.reaction) << "," << r.iterations
        << "," << (r.used_fem ? 1 : 0) << "," << r.system_rows << "\n";
  }
}

void write_residual_log_csv(const std::string& path,
                            const std::vector<IncrementResult>& recs) {
  std::ofstream out = open_out(path, false);
  out << "increment,iteration,r\n";
  for (const auto& rec : recs) {
    for (std::size_t i = 0; i < rec.r_history.size(); ++i) {
      out << rec.increment << "," << (i + 1) << "," << fmt(rec.r_history[i]) << "\n";
    }
  }
}

void write_ifenn_residual_log_csv(const std::string& path,
                                  const std::vector<IfennIncrement>& recs) {
  std::ofstream out = open_out(path, false);
  out << "increment,iteration,r_u,r_R\n";
  for (const auto& rec : recs) {
    for (std::size_t i = 0; i < rec.r_u_history.size(); ++i) {
      const double rr = i < rec.r_r_history.size() ? rec.r_r_history[i] : 0.0;
      out << rec.increment << "," << (i + 1) << "," << fmt(rec.r_u_history[i]) << ","
          << fmt(rr) << "\n";
    }
  }
}

void write_loss_csv(const std::string& path, const std::vector<LossBreakdown>& history) {
  std::ofstream out = open_out(path, false);
  out << "epoch,L,L_DATA,L_PDE,L_BCs\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    out << (i + 1) << "," << fmt(h.total) << "," << fmt(h.data) << "," << fmt(h.pde) << ","
        << fmt(h.bc) << "\n";
  }
}

void write_rse_csv(const std::string& path, const std::vector<double>& lf,
                   const std::vector<double>& rse_per_increment) {
  if (lf.size() != rse_per_increment.size()) throw IoError("rse/lf length mismatch");
  std::ofstream out = open_out(path, false);
  out << "increment,lf,rse\n";
  for (std::size_t i = 0; i < lf.size(); ++i) {
    out << (i + 1) << "," << fmt(lf[i]) << "," << fmt(rse_per_increment[i]) << "\n";
  }
}

void write_compare_csv(const std::string& path, const std::vector<double>& lf,
                       const CompareReport& report) {
  std::ofstream out = open_out(path, false);
  out << "increment,lf,reaction_deviation_pct,ebar_norm_rse,iterations_a,iterations_b\n";
  for (std::size_t i = 0; i < lf.size(); ++i) {
    out << (i + 1) << "," << fmt(lf[i]) << ","
        << fmt(i < report.reaction_deviation_pct.size() ? report.reaction_deviation_pct[i]
                                                        : 0.0)
        << "," << fmt(i < report.ebar_norm_rse.size() ? report.ebar_norm_rse[i] : 0.0) << ","
        << (i < report.iterations_a.size() ? report.iterations_a[i] : 0) << ","
        << (i < report.iterations_b.size() ? report.iterations_b[i] : 0) << "\n";
  }
}

void write_series_csv(const std::string& path, const RunSeries& series) {
  std::ofstream out = open_out(path, false);
  out << "increment,lf,reaction,iterations,ebar_norm\n";
  for (std::size_t i = 0; i < series.lf.size(); ++i) {
    out << (i + 1) << "," << fmt(series.lf[i]) << "," << fmt(series.reaction[i]) << ","
        << series.iterations[i] << ","
        << fmt(i < series.ebar_norm.size() ? series.ebar_norm[i] : 0.0) << "\n";
  }
}

RunSeries read_series_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open series file: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "increment,lf,reaction,iterations,ebar_norm") {
    throw IoError("unexpected series file header in " + path);
  }
  RunSeries s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int increment = 0, iterations = 0;
    double lf = 0.0, reaction = 0.0, ebar_norm = 0.0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%d,%lf", &increment, &lf, &reaction,
                    &iterations, &ebar_norm) != 5) {
      throw IoError("malformed series row in " + path + ": " + line);
    }
    s.lf.push_back(lf);
    s.reaction.push_back(reaction);
    s.iterations.push_back(iterations);
    s.ebar_norm.push_back(ebar_norm);
  }
  return s;
}

void save_field_snapshot(const std::string& path, const std::string& kind,
                         const MatrixXd& gp_xy, const VectorXd& values, double lf,
                         std::uint64_t mesh_checksum) {
  if (gp_xy.rows() != values.size()) throw IoError("field snapshot size mismatch");
  TensorFile t;
  t.header["kind"] = kind;
  t.header["shape"] = {static_cast<int>(values.size()), 3};
  t.header["features"] = {"x", "y", "value"};
  t.header["lf"] = lf;
  t.header["mesh_checksum"] = mesh_checksum;
  t.data.reserve(static_cast<std::size_t>(values.size()) * 3);
  for (long i = 0; i < values.size(); ++i) {
    t.data.push_back(gp_xy(i, 0));
    t.data.push_back(gp_xy(i, 1));
    t.data.push_back(values(i));
  }
  save_tensor(path, t);
}

}  // namespace ifenn
