#include "ifenn/scaling.hpp"

#include <cmath>

namespace ifenn {

std::string to_string(ScalingKind kind) {
  switch (kind) {
    case ScalingKind::None: return "none";
    case ScalingKind::CD: return "CD";
    case ScalingKind::VM: return "VM";
    case ScalingKind::MM: return "MM";
  }
  return "none";
}

ScalingKind scaling_kind_from_string(const std::string& s) {
  if (s == "none") return ScalingKind::None;
  if (s == "CD" || s == "cd") return ScalingKind::CD;
  if (s == "VM" || s == "vm") return ScalingKind::VM;
  if (s == "MM" || s == "mm") return ScalingKind::MM;
  throw ScalingError("unknown scaling kind: " + s);
}

double ScalingScheme::scale_value(double v, int increment) const {
  if (increment < 0 || increment >= n_increments()) {
    throw ScalingError("increment index outside fitted scaling range");
  }
  return a[increment] * v + b[increment];
}

double ScalingScheme::unscale_value(double v_scaled, int increment) const {
  if (increment < 0 || increment >= n_increments()) {
    throw ScalingError("increment index outside fitted scaling range");
  }
  return (v_scaled - b[increment]) / a[increment];
}

void ScalingScheme::unscale_derivatives(int increment, double& d_deps, double& d_dx,
                                        double& d_dy) const {
  if (increment < 0 || increment >= n_increments()) {
    throw ScalingError("increment index outside fitted scaling range");
  }
  // d(ebar)/d(eps): the a factors cancel. Spatial derivatives carry 1/a.
  (void)d_deps;
  d_dx /= a[increment];
  d_dy /= a[increment];
}

void fit_increment(const ScalingScheme& scheme, const Eigen::VectorXd& local_strain,
                   double& a, double& b) {
  a = 1.0;
  b = 0.0;
  switch (scheme.kind) {
    case ScalingKind::None:
      break;
    case ScalingKind::CD:
      a = std::pow(10.0, scheme.cd_exponent);
      break;
    case ScalingKind::VM: {
      const double mx = local_strain.size() ? local_strain.maxCoeff() : 0.0;
      if (mx > 0.0) a = scheme.vm_target / mx;
      break;
    }
    case ScalingKind::MM: {
      const double mx = local_strain.size() ? local_strain.maxCoeff() : 0.0;
      const double mn = local_strain.size() ? local_strain.minCoeff() : 0.0;
      if (mx - mn > 0.0) {
        a = scheme.mm_new_max / (mx - mn);
        b = -a * mn;
      }
      break;
    }
  }
}

ScalingScheme fit_scaling(ScalingKind kind,
                          const std::vector<Eigen::VectorXd>& local_strain,
                          double cd_exponent, double vm_target, double mm_new_max,
                          std::vector<std::string>* warnings) {
  ScalingScheme scheme;
  scheme.kind = kind;
  scheme.cd_exponent = cd_exponent;
  scheme.vm_target = vm_target;
  scheme.mm_new_max = mm_new_max;
  scheme.a.resize(local_strain.size(), 1.0);
  scheme.b.resize(local_strain.size(), 0.0);

  for (std::size_t n = 0; n < local_strain.size(); ++n) {
    fit_increment(scheme, local_strain[n], scheme.a[n], scheme.b[n]);
    const bool degenerate =
        (kind == ScalingKind::VM || kind == ScalingKind::MM) && scheme.a[n] == 1.0 &&
        scheme.b[n] == 0.0 &&
        (local_strain[n].size() == 0 ||
         local_strain[n].maxCoeff() - (kind == ScalingKind::MM ? local_strain[n].minCoeff() : 0.0) <= 0.0);
    if (degenerate && warnings) {
      warnings->push_back("degenerate strain range at increment " + std::to_string(n) +
                          "; identity scaling used");
    }
  }
  return scheme;
}

nlohmann::json ScalingScheme::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["a"] = a;
  j["b"] = b;
  j["cd_exponent"] = cd_exponent;
  j["vm_target"] = vm_target;
  j["mm_new_max"] = mm_new_max;
  return j;
}

ScalingScheme ScalingScheme::from_json(const nlohmann::json& j) {
  ScalingScheme s;
  s.kind = scaling_kind_from_string(j.at("kind").get<std::string>());
  s.a = j.at("a").get<std::vector<double>>();
  s.b = j.at("b").get<std::vector<double>>();
  s.cd_exponent = j.value("cd_exponent", 4.0);
  s.vm_target = j.value("vm_target", 1.0);
  s.mm_new_max = j.value("mm_new_max", 10.0);
  if (s.a.size() != s.b.size()) throw ScalingError("scaling a/b length mismatch");
  for (double av : s.a)
    if (!(av > 0.0)) throw ScalingError("scaling coefficient a must be positive");
  return s;
}

}  // namespace ifenn
