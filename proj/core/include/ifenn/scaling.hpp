#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ifenn {

struct ScalingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ScalingKind { None, CD, VM, MM };

std::string to_string(ScalingKind kind);
ScalingKind scaling_kind_from_string(const std::string& s);

/// Per-increment affine map e' = a_n * e + b_n applied to the local
/// strain feature (and, symmetrically, to nonlocal-strain targets and
/// predictions). Coordinates and loadfactor are never scaled.
struct ScalingScheme {
  ScalingKind kind = ScalingKind::None;
  std::vector<double> a;  // one per increment
  std::vector<double> b;
  double cd_exponent = 4.0;    // CD: a = 10^k
  double vm_target = 1.0;      // VM: a_n = target / max strain at increment n
  double mm_new_max = 10.0;    // MM: scaled range [0, new_max]

  int n_increments() const { return static_cast<int>(a.size()); }

  double scale_value(double v, int increment) const;
  double unscale_value(double v_scaled, int increment) const;

  /// Chain-rule recovery of derivatives of the unscaled prediction:
  /// d(ebar)/d(eps) is scale-invariant, spatial derivatives divide by a.
  void unscale_derivatives(int increment, double& d_deps, double& d_dx, double& d_dy) const;

  nlohmann::json to_json() const;
  static ScalingScheme from_json(const nlohmann::json& j);
};

/// Fits the per-increment coefficients from the local-strain values of
/// each increment (one Eigen vector per increment, Gauss-point rows).
/// Degenerate increments (empty range for MM, zero max for VM) fall
/// back to the identity map; the returned warnings name them.
ScalingScheme fit_scaling(ScalingKind kind,
                          const std::vector<Eigen::VectorXd>& local_strain,
                          double cd_exponent, double vm_target, double mm_new_max,
                          std::vector<std::string>* warnings = nullptr);

/// Coefficients for a single increment computed from the current local
/// strain field; used at inference time where MM/VM statistics are
/// recomputed per increment (CD keeps the training exponent).
void fit_increment(const ScalingScheme& scheme, const Eigen::VectorXd& local_strain,
                   double& a, double& b);

}  // namespace ifenn
