#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ifenn {

enum class PlaneMode { Strain, Stress };
enum class EqStrainKind { Principal, ModifiedVonMises };

struct MaterialError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Isotropic elasticity with Mazars damage and a nonlocal length scale.
/// The diffusion coefficient g is tied to l_c as g = l_c^2 / 2.
struct MaterialParams {
  double E = 30000.0;        // MPa
  double nu = 0.2;
  double alpha = 0.7;        // Mazars
  double beta = 1.0e4;       // Mazars
  double eps_d = 1.0e-4;     // damage threshold strain
  double l_c = 4.0;          // mm
  double k_vm = 10.0;        // modified von Mises compressive/tensile ratio
  PlaneMode plane_mode = PlaneMode::Strain;
  EqStrainKind eq_strain_kind = EqStrainKind::Principal;

  double g() const { return 0.5 * l_c * l_c; }

  void validate() const {
    if (!(E > 0.0)) throw MaterialError("E must be positive");
    if (!(nu > 0.0 && nu < 0.5)) throw MaterialError("nu must be in (0, 0.5)");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw MaterialError("alpha must be in [0, 1]");
    if (!(beta > 0.0)) throw MaterialError("beta must be positive");
    if (!(eps_d > 0.0)) throw MaterialError("eps_d must be positive");
    if (!(l_c > 0.0)) throw MaterialError("l_c must be positive");
  }
};

/// Plane-strain or plane-stress elasticity matrix in Voigt order
/// (eps_x, eps_y, gamma_xy).
Eigen::Matrix3d constitutive_matrix(const MaterialParams& params);

struct EqStrainResult {
  double value = 0.0;
  Eigen::Vector3d d_deps = Eigen::Vector3d::Zero();  // w.r.t. Voigt strain
};

/// Scalar equivalent strain and its strain derivative. The principal
/// form uses Macaulay-bracketed principal strains (with the out-of-plane
/// strain per plane mode); the modified von Mises form uses the strain
/// invariants I1 and J2. At the Macaulay kinks and at zero strain the
/// subgradient 0 is returned.
EqStrainResult equivalent_strain(const Eigen::Vector3d& eps_voigt,
                                 const MaterialParams& params);

struct DamageResult {
  double d = 0.0;
  double dd_deps_bar = 0.0;
};

/// Exponential Mazars evolution: zero below the threshold, then
/// d = 1 - eps_d (1 - alpha) / e - alpha exp(-beta (e - eps_d)).
DamageResult mazars_damage(double eps_bar_eq, const MaterialParams& params);

}  // namespace ifenn
