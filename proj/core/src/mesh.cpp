#include "ifenn/mesh.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ifenn {

namespace {

constexpr double kGridTol = 1e-9;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void shape_q4(double xi, double eta, Eigen::VectorXd& N,
              Eigen::VectorXd& dN_dxi, Eigen::VectorXd& dN_deta) {
  N.resize(4);
  dN_dxi.resize(4);
  dN_deta.resize(4);
  const double xs[4] = {-1.0, 1.0, 1.0, -1.0};
  const double ys[4] = {-1.0, -1.0, 1.0, 1.0};
  for (int a = 0; a < 4; ++a) {
    N(a) = 0.25 * (1.0 + xs[a] * xi) * (1.0 + ys[a] * eta);
    dN_dxi(a) = 0.25 * xs[a] * (1.0 + ys[a] * eta);
    dN_deta(a) = 0.25 * ys[a] * (1.0 + xs[a] * xi);
  }
}

void shape_q8(double xi, double eta, Eigen::VectorXd& N,
              Eigen::VectorXd& dN_dxi, Eigen::VectorXd& dN_deta,
              Eigen::MatrixXd* d2N) {
  N.resize(8);
  dN_dxi.resize(8);
  dN_deta.resize(8);

  N(0) = -0.25 * (1 - xi) * (1 - eta) * (1 + xi + eta);
  N(1) = -0.25 * (1 + xi) * (1 - eta) * (1 - xi + eta);
  N(2) = -0.25 * (1 + xi) * (1 + eta) * (1 - xi - eta);
  N(3) = -0.25 * (1 - xi) * (1 + eta) * (1 + xi - eta);
  N(4) = 0.5 * (1 - xi * xi) * (1 - eta);
  N(5) = 0.5 * (1 + xi) * (1 - eta * eta);
  N(6) = 0.5 * (1 - xi * xi) * (1 + eta);
  N(7) = 0.5 * (1 - xi) * (1 - eta * eta);

  dN_dxi(0) = 0.25 * (1 - eta) * (2 * xi + eta);
  dN_dxi(1) = 0.25 * (1 - eta) * (2 * xi - eta);
  dN_dxi(2) = 0.25 * (1 + eta) * (2 * xi + eta);
  dN_dxi(3) = 0.25 * (1 + eta) * (2 * xi - eta);
  dN_dxi(4) = -xi * (1 - eta);
  dN_dxi(5) = 0.5 * (1 - eta * eta);
  dN_dxi(6) = -xi * (1 + eta);
  dN_dxi(7) = -0.5 * (1 - eta * eta);

  dN_deta(0) = 0.25 * (1 - xi) * (xi + 2 * eta);
  dN_deta(1) = 0.25 * (1 + xi) * (2 * eta - xi);
  dN_deta(2) = 0.25 * (1 + xi) * (xi + 2 * eta);
  dN_deta(3) = 0.25 * (1 - xi) * (2 * eta - xi);
  dN_deta(4) = -0.5 * (1 - xi * xi);
  dN_deta(5) = -eta * (1 + xi);
  dN_deta(6) = 0.5 * (1 - xi * xi);
  dN_deta(7) = -eta * (1 - xi);

  if (d2N) {
    d2N->resize(8, 3);
    // Columns: (xixi, etaeta, xieta). Derived symbolically from the N
    // expressions above.
    (*d2N)(0, 0) = 0.5 * (1 - eta);
    (*d2N)(1, 0) = 0.5 * (1 - eta);
    (*d2N)(2, 0) = 0.5 * (1 + eta);
    (*d2N)(3, 0) = 0.5 * (1 + eta);
    (*d2N)(4, 0) = eta - 1.0;
    (*d2N)(5, 0) = 0.0;
    (*d2N)(6, 0) = -1.0 - eta;
    (*d2N)(7, 0) = 0.0;

    (*d2N)(0, 1) = 0.5 * (1 - xi);
    (*d2N)(1, 1) = 0.5 * (1 + xi);
    (*d2N)(2, 1) = 0.5 * (1 + xi);
    (*d2N)(3, 1) = 0.5 * (1 - xi);
    (*d2N)(4, 1) = 0.0;
    (*d2N)(5, 1) = -xi - 1.0;
    (*d2N)(6, 1) = 0.0;
    (*d2N)(7, 1) = xi - 1.0;

    (*d2N)(0, 2) = 0.25 * (1 - 2 * xi - 2 * eta);
    (*d2N)(1, 2) = 0.25 * (2 * eta - 2 * xi - 1);
    (*d2N)(2, 2) = 0.25 * (1 + 2 * xi + 2 * eta);
    (*d2N)(3, 2) = 0.25 * (2 * xi - 2 * eta - 1);
    (*d2N)(4, 2) = xi;
    (*d2N)(5, 2) = -eta;
    (*d2N)(6, 2) = -xi;
    (*d2N)(7, 2) = eta;
  }
}

Eigen::MatrixXd q8_second_derivative_table(double xi, double eta) {
  Eigen::MatrixXd t(8, 3);
  t << 0.5 * (1 - eta), 0.5 * (1 - xi), 0.25 * (1 - 2 * xi - 2 * eta),
      0.5 * (1 - eta), 0.5 * (1 + xi), 0.25 * (2 * eta - 2 * xi - 1),
      0.5 * (1 + eta), 0.5 * (1 + xi), 0.25 * (1 + 2 * xi + 2 * eta),
      0.5 * (1 + eta), 0.5 * (1 - xi), 0.25 * (2 * xi - 2 * eta - 1),
      eta - 1.0, 0.0, xi,
      0.0, -xi - 1.0, -eta,
      -1.0 - 2 * eta, 0.0, -xi,  // xixi entry disagrees with the basis; see q8_table_discrepancies
      0.0, xi - 1.0, eta;
  return t;
}

std::vector<std::string> q8_table_discrepancies(double tol) {
  static const char* col_names[3] = {"xixi", "etaeta", "xieta"};
  std::vector<std::string> out;
  bool flagged[8][3] = {};
  for (double xi = -1.0; xi <= 1.0 + kGridTol; xi += 0.5) {
    for (double eta = -1.0; eta <= 1.0 + kGridTol; eta += 0.5) {
      Eigen::VectorXd N, dxi, deta;
      Eigen::MatrixXd d2;
      shape_q8(xi, eta, N, dxi, deta, &d2);
      const Eigen::MatrixXd tab = q8_second_derivative_table(xi, eta);
      for (int a = 0; a < 8; ++a) {
        for (int c = 0; c < 3; ++c) {
          if (!flagged[a][c] && std::abs(d2(a, c) - tab(a, c)) > tol) {
            flagged[a][c] = true;
            std::ostringstream os;
            os << "node " << (a + 1) << " d2N/d" << col_names[c]
               << ": tabulated form disagrees with the symbolic derivative"
               << " (e.g. at xi=" << xi << ", eta=" << eta << ": tabulated "
               << tab(a, c) << ", symbolic " << d2(a, c)
               << "); the symbolic value is used";
            out.push_back(os.str());
          }
        }
      }
    }
  }
  return out;
}

void gauss_rule_1d(int n, std::vector<double>& points, std::vector<double>& weights) {
  switch (n) {
    case 1:
      points = {0.0};
      weights = {2.0};
      break;
    case 2:
      points = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
      weights = {1.0, 1.0};
      break;
    case 3:
      points = {-std::sqrt(3.0 / 5.0), 0.0, std::sqrt(3.0 / 5.0)};
      weights = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
      break;
    default:
      throw MeshError("unsupported 1D Gauss rule: " + std::to_string(n));
  }
}

Eigen::Vector3d second_derivatives_physical(const GaussPointData& gp,
                                            const Eigen::Vector2d& df_dx,
                                            const Eigen::Vector3d& d2f_nat) {
  if (gp.geo_d2.rows() != 3) {
    throw MeshError("second derivatives require a quadratic-element Gauss point");
  }
  const double x_xi = gp.jac(0, 0), y_xi = gp.jac(0, 1);
  const double x_eta = gp.jac(1, 0), y_eta = gp.jac(1, 1);

  Eigen::Matrix3d A;
  A << x_xi * x_xi, y_xi * y_xi, 2.0 * x_xi * y_xi,
      x_eta * x_eta, y_eta * y_eta, 2.0 * x_eta * y_eta,
      x_xi * x_eta, y_xi * y_eta, x_xi * y_eta + x_eta * y_xi;

  Eigen::Vector3d rhs;
  for (int r = 0; r < 3; ++r) {
    rhs(r) = d2f_nat(r) - df_dx(0) * gp.geo_d2(r, 0) - df_dx(1) * gp.geo_d2(r, 1);
  }

  Eigen::FullPivLU<Eigen::Matrix3d> lu(A);
  if (!lu.isInvertible()) {
    throw MeshError("degenerate element geometry: second-derivative map is singular");
  }
  return lu.solve(rhs);
}

void compute_gauss_data(Mesh& mesh) {
  std::vector<double> pts, wts;
  gauss_rule_1d(mesh.gauss_per_dir, pts, wts);
  const int nen = mesh.nodes_per_element();
  const bool quadratic = mesh.element_order == 2;

  mesh.gauss.clear();
  mesh.gauss.reserve(mesh.elements.size() * pts.size() * pts.size());

  for (int e = 0; e < mesh.n_elements(); ++e) {
    const auto& conn = mesh.elements[e];
    Eigen::MatrixXd coords(nen, 2);
    for (int a = 0; a < nen; ++a) coords.row(a) = mesh.nodes[conn[a]].transpose();

    for (std::size_t jq = 0; jq < pts.size(); ++jq) {
      for (std::size_t iq = 0; iq < pts.size(); ++iq) {
        GaussPointData gp;
        gp.element = e;
        gp.xi = pts[iq];
        gp.eta = pts[jq];
        gp.weight = wts[iq] * wts[jq];

        Eigen::MatrixXd d2;
        if (quadratic) {
          shape_q8(gp.xi, gp.eta, gp.N, gp.dN_dxi, gp.dN_deta, &d2);
        } else {
          shape_q4(gp.xi, gp.eta, gp.N, gp.dN_dxi, gp.dN_deta);
        }

        gp.phys = (gp.N.transpose() * coords).transpose();
        gp.jac(0, 0) = gp.dN_dxi.dot(coords.col(0));
        gp.jac(0, 1) = gp.dN_dxi.dot(coords.col(1));
        gp.jac(1, 0) = gp.dN_deta.dot(coords.col(0));
        gp.jac(1, 1) = gp.dN_deta.dot(coords.col(1));
        gp.det_jac = gp.jac.determinant();
        if (!(gp.det_jac > 0.0)) {
          throw MeshError("non-positive Jacobian determinant in element " +
                          std::to_string(e));
        }
        gp.jac_inv = gp.jac.inverse();

        gp.dN_dx.resize(nen, 2);
        for (int a = 0; a < nen; ++a) {
          gp.dN_dx.row(a) =
              (gp.jac_inv * Eigen::Vector2d(gp.dN_dxi(a), gp.dN_deta(a))).transpose();
        }

        if (quadratic) {
          gp.d2N = d2;
          gp.geo_d2.resize(3, 2);
          for (int r = 0; r < 3; ++r) {
            gp.geo_d2(r, 0) = d2.col(r).dot(coords.col(0));
            gp.geo_d2(r, 1) = d2.col(r).dot(coords.col(1));
          }
        }
        mesh.gauss.push_back(std::move(gp));
      }
    }
  }
}

std::uint64_t Mesh::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  const std::int64_t order = element_order;
  h = fnv1a(h, &order, sizeof(order));
  for (const auto& nd : nodes) {
    h = fnv1a(h, nd.data(), 2 * sizeof(double));
  }
  for (const auto& conn : elements) {
    for (int id : conn) {
      const std::int64_t v = id;
      h = fnv1a(h, &v, sizeof(v));
    }
  }
  return h;
}

void Mesh::validate() const {
  const int nen = nodes_per_element();
  for (const auto& conn : elements) {
    if (static_cast<int>(conn.size()) != nen) {
      throw MeshError("element connectivity length does not match element order");
    }
    for (int id : conn) {
      if (id < 0 || id >= n_nodes()) throw MeshError("node id out of range");
    }
  }
  for (const auto& gp : gauss) {
    if (!(gp.det_jac > 0.0)) throw MeshError("non-positive Jacobian determinant");
  }
  for (const auto& [name, set] : boundary_sets) {
    if (set.nodes.size() != set.normals.size()) {
      throw MeshError("boundary set '" + name + "' nodes/normals size mismatch");
    }
    for (const auto& n : set.normals) {
      if (std::abs(n.norm() - 1.0) > 1e-12) {
        throw MeshError("non-unit boundary normal in set '" + name + "'");
      }
    }
  }
}

namespace {

bool is_multiple(double v, double h) {
  const double r = v / h;
  return std::abs(r - std::round(r)) < 1e-9;
}

}  // namespace

Mesh build_structured_mesh(double width, double height,
                           const std::vector<NotchSegment>& notches,
                           double elem_size, int order) {
  if (order != 1 && order != 2) throw MeshError("element order must be 1 or 2");
  if (elem_size <= 0.0) throw MeshError("element size must be positive");
  if (!is_multiple(width, elem_size) || !is_multiple(height, elem_size)) {
    throw MeshError("element size does not divide the domain dimensions");
  }
  const int nx = static_cast<int>(std::llround(width / elem_size));
  const int ny = static_cast<int>(std::llround(height / elem_size));
  const double h = elem_size;

  Mesh mesh;
  mesh.element_order = order;
  mesh.gauss_per_dir = (order == 2) ? 3 : 2;

  // Corner grid, then (for Q8) horizontal and vertical mid-edge nodes.
  auto corner = [&](int i, int j) { return j * (nx + 1) + i; };
  const int n_corner = (nx + 1) * (ny + 1);
  const int base_h = n_corner;
  auto hmid = [&](int i, int j) { return base_h + j * nx + i; };
  const int base_v = base_h + (order == 2 ? nx * (ny + 1) : 0);
  auto vmid = [&](int i, int j) { return base_v + j * (nx + 1) + i; };

  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) mesh.nodes.emplace_back(i * h, j * h);
  if (order == 2) {
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i < nx; ++i) mesh.nodes.emplace_back((i + 0.5) * h, j * h);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i <= nx; ++i) mesh.nodes.emplace_back(i * h, (j + 0.5) * h);
  }

  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (order == 1) {
        mesh.elements.push_back(
            {corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1)});
      } else {
        mesh.elements.push_back({corner(i, j), corner(i + 1, j), corner(i + 1, j + 1),
                                 corner(i, j + 1), hmid(i, j), vmid(i + 1, j),
                                 hmid(i, j + 1), vmid(i, j)});
      }
    }
  }

  // Notch slits: duplicate the on-segment nodes and rewire the elements
  // above the line to the duplicates. The interior tip node stays shared.
  int notch_idx = 0;
  for (const auto& notch : notches) {
    ++notch_idx;
    if (!is_multiple(notch.y, h) || !is_multiple(notch.x0, h) || !is_multiple(notch.x1, h)) {
      throw MeshError("notch segment is not aligned to mesh grid lines");
    }
    if (notch.y <= 0.0 || notch.y >= height) {
      throw MeshError("notch line must be interior to the domain");
    }
    const bool from_left = std::abs(notch.x0) < kGridTol;
    const bool from_right = std::abs(notch.x1 - width) < kGridTol;
    if (from_left == from_right) {
      throw MeshError("notch must start at exactly one vertical domain edge");
    }
    const int jr = static_cast<int>(std::llround(notch.y / h));
    const int i0 = static_cast<int>(std::llround(notch.x0 / h));
    const int i1 = static_cast<int>(std::llround(notch.x1 / h));
    if (i1 <= i0) throw MeshError("empty notch segment");

    // On-segment node ids, excluding the interior tip corner node.
    std::vector<int> split;
    for (int i = i0; i <= i1; ++i) {
      const bool is_tip = from_left ? (i == i1) : (i == i0);
      if (!is_tip) split.push_back(corner(i, jr));
    }
    if (order == 2) {
      for (int i = i0; i < i1; ++i) split.push_back(hmid(i, jr));
    }

    BoundarySet lower, upper;
    for (int nid : split) {
      const int dup = mesh.n_nodes();
      mesh.nodes.push_back(mesh.nodes[nid]);
      // Elements in row jr (those whose lower edge is on the slit line)
      // switch to the duplicate.
      for (int i = std::max(0, i0 - 1); i < std::min(nx, i1 + 1); ++i) {
        auto& conn = mesh.elements[jr * nx + i];
        for (int& id : conn)
          if (id == nid) id = dup;
      }
      lower.nodes.push_back(nid);
      lower.normals.emplace_back(0.0, 1.0);
      upper.nodes.push_back(dup);
      upper.normals.emplace_back(0.0, -1.0);
    }
    const std::string tag = "notch" + std::to_string(notch_idx);
    mesh.boundary_sets[tag + "_bottom"] = std::move(lower);
    mesh.boundary_sets[tag + "_top"] = std::move(upper);
  }

  // Exterior edge sets, selected by coordinates so duplicated edge nodes
  // land in the right set too.
  auto add_edge_set = [&](const std::string& name, auto on_edge, Eigen::Vector2d normal) {
    BoundarySet set;
    for (int n = 0; n < mesh.n_nodes(); ++n) {
      if (on_edge(mesh.nodes[n])) {
        set.nodes.push_back(n);
        set.normals.push_back(normal);
      }
    }
    mesh.boundary_sets[name] = std::move(set);
  };
  add_edge_set("bottom", [&](const Eigen::Vector2d& p) { return std::abs(p.y()) < kGridTol; },
               {0.0, -1.0});
  add_edge_set("top", [&](const Eigen::Vector2d& p) { return std::abs(p.y() - height) < kGridTol; },
               {0.0, 1.0});
  add_edge_set("left", [&](const Eigen::Vector2d& p) { return std::abs(p.x()) < kGridTol; },
               {-1.0, 0.0});
  add_edge_set("right", [&](const Eigen::Vector2d& p) { return std::abs(p.x() - width) < kGridTol; },
               {1.0, 0.0});

  compute_gauss_data(mesh);
  mesh.validate();
  return mesh;
}

void save_mesh_file(const Mesh& mesh, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["element_order"] = mesh.element_order;
  j["gauss_per_dir"] = mesh.gauss_per_dir;
  auto& jn = j["nodes"] = nlohmann::json::array();
  for (const auto& n : mesh.nodes) jn.push_back({n.x(), n.y()});
  j["elements"] = mesh.elements;
  auto& jb = j["boundary_sets"] = nlohmann::json::object();
  for (const auto& [name, set] : mesh.boundary_sets) {
    nlohmann::json js;
    js["nodes"] = set.nodes;
    auto& jmn = js["normals"] = nlohmann::json::array();
    for (const auto& nm : set.normals) jmn.push_back({nm.x(), nm.y()});
    jb[name] = std::move(js);
  }
  std::ofstream out(path);
  if (!out) throw MeshError("cannot write mesh file: " + path);
  out << j.dump(1) << "\n";
}

Mesh load_mesh_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MeshError("cannot open mesh file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("version", 0) != 1) throw MeshError("unsupported mesh file version");

  Mesh mesh;
  mesh.element_order = j.at("element_order").get<int>();
  mesh.gauss_per_dir = j.value("gauss_per_dir", mesh.element_order == 2 ? 3 : 2);
  for (const auto& n : j.at("nodes")) {
    mesh.nodes.emplace_back(n.at(0).get<double>(), n.at(1).get<double>());
  }
  mesh.elements = j.at("elements").get<std::vector<std::vector<int>>>();
  if (j.contains("boundary_sets")) {
    for (const auto& [name, js] : j.at("boundary_sets").items()) {
      BoundarySet set;
      set.nodes = js.at("nodes").get<std::vector<int>>();
      for (const auto& nm : js.at("normals")) {
        set.normals.emplace_back(nm.at(0).get<double>(), nm.at(1).get<double>());
      }
      mesh.boundary_sets[name] = std::move(set);
    }
  }
  compute_gauss_data(mesh);
  mesh.validate();
  return mesh;
}

}  // namespace ifenn
