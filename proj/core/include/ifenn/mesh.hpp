#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ifenn {

struct MeshError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Quadrature point with precomputed shape-function data.
///
/// Shape values and derivatives are stored for the element's own basis
/// (4 entries for bilinear quads, 8 for serendipity quads). Natural
/// second derivatives and the geometry curvature terms are only filled
/// for quadratic elements; they stay empty for linear ones.
struct GaussPointData {
  int element = -1;
  double xi = 0.0, eta = 0.0, weight = 0.0;
  Eigen::Vector2d phys = Eigen::Vector2d::Zero();

  Eigen::VectorXd N;        // basis values
  Eigen::VectorXd dN_dxi;   // d/dxi
  Eigen::VectorXd dN_deta;  // d/deta
  Eigen::MatrixXd dN_dx;    // nen x 2, physical first derivatives

  Eigen::Matrix2d jac = Eigen::Matrix2d::Zero();      // [dx/dxi dy/dxi; dx/deta dy/deta]
  Eigen::Matrix2d jac_inv = Eigen::Matrix2d::Zero();
  double det_jac = 0.0;

  // Quadratic elements only: columns (xixi, etaeta, xieta).
  Eigen::MatrixXd d2N;      // nen x 3
  Eigen::MatrixXd geo_d2;   // 3 x 2, second derivatives of (x, y) w.r.t. natural coords
};

struct BoundarySet {
  std::vector<int> nodes;
  std::vector<Eigen::Vector2d> normals;  // outward unit normal per node
};

/// A horizontal zero-width slit lying on a mesh grid line. It starts at
/// a vertical domain edge (x0 == 0 or x1 == domain width) and its tip is
/// in the interior. Nodes on the open segment are duplicated so that the
/// material above and below the line is disconnected.
struct NotchSegment {
  double y = 0.0;
  double x0 = 0.0;
  double x1 = 0.0;
};

struct Mesh {
  std::vector<Eigen::Vector2d> nodes;
  std::vector<std::vector<int>> elements;  // 4 or 8 node ids each
  int element_order = 1;                   // 1 = Q4, 2 = Q8
  int gauss_per_dir = 2;                   // 2x2 for Q4, 3x3 for Q8
  std::map<std::string, BoundarySet> boundary_sets;
  std::vector<GaussPointData> gauss;       // element-major, row-major in (xi, eta)

  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_elements() const { return static_cast<int>(elements.size()); }
  int n_gauss() const { return static_cast<int>(gauss.size()); }
  int nodes_per_element() const { return element_order == 2 ? 8 : 4; }
  int gauss_per_element() const { return gauss_per_dir * gauss_per_dir; }

  /// FNV-1a over node coordinates and connectivity; used to stamp
  /// exported tensor files so a checkpoint can be matched to its mesh.
  std::uint64_t checksum() const;

  void validate() const;  // connectivity range, positive Jacobians, unit normals
};

// Bilinear quad basis on the reference square, nodes CCW from (-1,-1).
void shape_q4(double xi, double eta, Eigen::VectorXd& N,
              Eigen::VectorXd& dN_dxi, Eigen::VectorXd& dN_deta);

/// Serendipity 8-node basis: corners 1-4 CCW from (-1,-1), mid-sides
/// 5 (bottom), 6 (right), 7 (top), 8 (left). If d2N is non-null it is
/// resized to 8x3 with columns (xixi, etaeta, xieta).
void shape_q8(double xi, double eta, Eigen::VectorXd& N,
              Eigen::VectorXd& dN_dxi, Eigen::VectorXd& dN_deta,
              Eigen::MatrixXd* d2N = nullptr);

/// Tabulated closed forms of the serendipity second-derivative columns,
/// kept as an independent cross-check of the symbolic expressions used
/// by shape_q8. Same layout as the d2N output.
Eigen::MatrixXd q8_second_derivative_table(double xi, double eta);

/// Compares the tabulated second-derivative forms against shape_q8 on a
/// sample grid. Returns one human-readable line per disagreeing entry;
/// the symbolic values win and are what the library uses everywhere.
std::vector<std::string> q8_table_discrepancies(double tol = 1e-6);

/// 1D Gauss-Legendre points/weights for n = 1, 2 or 3.
void gauss_rule_1d(int n, std::vector<double>& points, std::vector<double>& weights);

/// Physical second derivatives of a scalar field at a quadratic-element
/// Gauss point. Takes the field's physical first derivatives and its
/// natural second derivatives (xixi, etaeta, xieta) and solves the 3x3
/// mapping system assembled from the point's geometry data.
/// Returns (d2f/dx2, d2f/dy2, d2f/dxdy). Throws on a rank-deficient map.
Eigen::Vector3d second_derivatives_physical(const GaussPointData& gp,
                                            const Eigen::Vector2d& df_dx,
                                            const Eigen::Vector3d& d2f_nat);

/// Structured quadrilateral mesh of an axis-aligned rectangle with
/// square elements of size elem_size. Horizontal notch slits are cut by
/// node duplication. Boundary sets "bottom", "right", "top", "left" are
/// created (corner nodes appear in both adjacent sets), plus
/// "notch<i>_top"/"notch<i>_bottom" per slit.
Mesh build_structured_mesh(double width, double height,
                           const std::vector<NotchSegment>& notches,
                           double elem_size, int order);

/// Populates mesh.gauss from nodes/elements (used after file import).
void compute_gauss_data(Mesh& mesh);

Mesh load_mesh_file(const std::string& path);
void save_mesh_file(const Mesh& mesh, const std::string& path);

}  // namespace ifenn
