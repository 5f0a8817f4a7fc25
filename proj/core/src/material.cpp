#include "ifenn/material.hpp"

#include <cmath>

namespace ifenn {

Eigen::Matrix3d constitutive_matrix(const MaterialParams& params) {
  params.validate();
  const double E = params.E, nu = params.nu;
  Eigen::Matrix3d C = Eigen::Matrix3d::Zero();
  if (params.plane_mode == PlaneMode::Strain) {
    const double f = E / ((1.0 + nu) * (1.0 - 2.0 * nu));
    C(0, 0) = C(1, 1) = f * (1.0 - nu);
    C(0, 1) = C(1, 0) = f * nu;
    C(2, 2) = f * (1.0 - 2.0 * nu) / 2.0;
  } else {
    const double f = E / (1.0 - nu * nu);
    C(0, 0) = C(1, 1) = f;
    C(0, 1) = C(1, 0) = f * nu;
    C(2, 2) = f * (1.0 - nu) / 2.0;
  }
  return C;
}

namespace {

EqStrainResult eq_strain_principal(const Eigen::Vector3d& eps, const MaterialParams& p) {
  const double ex = eps(0), ey = eps(1), gxy = eps(2);
  const double mean = 0.5 * (ex + ey);
  const double dx = 0.5 * (ex - ey);
  const double R = std::sqrt(dx * dx + 0.25 * gxy * gxy);

  // In-plane principal strains plus the out-of-plane one.
  const double e1 = mean + R;
  const double e2 = mean - R;
  double e3 = 0.0;
  Eigen::Vector3d de3 = Eigen::Vector3d::Zero();
  if (p.plane_mode == PlaneMode::Stress) {
    const double c = -p.nu / (1.0 - p.nu);
    e3 = c * (ex + ey);
    de3 << c, c, 0.0;
  }

  Eigen::Vector3d de1, de2;
  if (R > 1e-30) {
    de1 << 0.5 + dx / (2.0 * R), 0.5 - dx / (2.0 * R), gxy / (4.0 * R);
    de2 << 0.5 - dx / (2.0 * R), 0.5 + dx / (2.0 * R), -gxy / (4.0 * R);
  } else {
    de1 << 0.5, 0.5, 0.0;
    de2 << 0.5, 0.5, 0.0;
  }

  const double m1 = std::max(e1, 0.0), m2 = std::max(e2, 0.0), m3 = std::max(e3, 0.0);
  EqStrainResult res;
  res.value = std::sqrt(m1 * m1 + m2 * m2 + m3 * m3);
  if (res.value > 1e-30) {
    Eigen::Vector3d num = Eigen::Vector3d::Zero();
    if (e1 > 0.0) num += m1 * de1;
    if (e2 > 0.0) num += m2 * de2;
    if (e3 > 0.0) num += m3 * de3;
    res.d_deps = num / res.value;
  }
  return res;
}

EqStrainResult eq_strain_mvm(const Eigen::Vector3d& eps, const MaterialParams& p) {
  const double ex = eps(0), ey = eps(1), gxy = eps(2);
  const double k = p.k_vm, nu = p.nu;

  // Strain tensor invariants with eps_z from the plane mode.
  double ez = 0.0, dez = 0.0;
  if (p.plane_mode == PlaneMode::Stress) {
    dez = -nu / (1.0 - nu);
    ez = dez * (ex + ey);
  }
  const double I1 = ex + ey + ez;
  const Eigen::Vector3d dI1(1.0 + dez, 1.0 + dez, 0.0);
  // tr(eps . eps) with the tensor shear component gxy / 2
  const double tr2 = ex * ex + ey * ey + ez * ez + 0.5 * gxy * gxy;
  const Eigen::Vector3d dtr2(2.0 * ex + 2.0 * ez * dez, 2.0 * ey + 2.0 * ez * dez, gxy);
  const double J2 = 3.0 * tr2 - I1 * I1;
  const Eigen::Vector3d dJ2 = 3.0 * dtr2 - 2.0 * I1 * dI1;

  const double A = (k - 1.0) / (1.0 - 2.0 * nu);
  const double B = 2.0 * k / ((1.0 + nu) * (1.0 + nu));
  const double S2 = A * A * I1 * I1 + B * J2;
  const double S = std::sqrt(std::max(S2, 0.0));

  EqStrainResult res;
  res.value = A * I1 / (2.0 * k) + S / (2.0 * k);
  res.d_deps = A / (2.0 * k) * dI1;
  if (S > 1e-30) {
    res.d_deps += (2.0 * A * A * I1 * dI1 + B * dJ2) / (4.0 * k * S);
  }
  // The measure is nonnegative by construction for admissible k; clamp
  // round-off excursions below zero.
  if (res.value < 0.0) {
    res.value = 0.0;
    res.d_deps.setZero();
  }
  return res;
}

}  // namespace

EqStrainResult equivalent_strain(const Eigen::Vector3d& eps_voigt,
                                 const MaterialParams& params) {
  return params.eq_strain_kind == EqStrainKind::Principal
             ? eq_strain_principal(eps_voigt, params)
             : eq_strain_mvm(eps_voigt, params);
}

DamageResult mazars_damage(double eps_bar_eq, const MaterialParams& params) {
  DamageResult res;
  if (eps_bar_eq <= params.eps_d) return res;
  const double e = eps_bar_eq;
  const double expo = std::exp(-params.beta * (e - params.eps_d));
  res.d = 1.0 - params.eps_d * (1.0 - params.alpha) / e - params.alpha * expo;
  res.dd_deps_bar = params.eps_d * (1.0 - params.alpha) / (e * e) +
                    params.alpha * params.beta * expo;
  if (res.d < 0.0) {
    res.d = 0.0;
    res.dd_deps_bar = 0.0;
  }
  return res;
}

}  // namespace ifenn
