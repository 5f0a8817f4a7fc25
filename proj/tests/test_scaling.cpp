#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "ifenn/scaling.hpp"

using namespace ifenn;

namespace {

std::vector<Eigen::VectorXd> random_fields(int n_inc, int n_pts, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 3e-4);
  std::vector<Eigen::VectorXd> out;
  for (int t = 0; t < n_inc; ++t) {
    Eigen::VectorXd v(n_pts);
    for (int i = 0; i < n_pts; ++i) v(i) = uni(rng) * (t + 1);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("round trip within 1e-12 for every scheme") {
  auto fields = random_fields(8, 40, 5);
  for (ScalingKind kind : {ScalingKind::CD, ScalingKind::VM, ScalingKind::MM}) {
    ScalingScheme s = fit_scaling(kind, fields, 4.0, 1.0, 10.0);
    REQUIRE(s.n_increments() == 8);
    for (int t = 0; t < 8; ++t) {
      for (int i = 0; i < fields[t].size(); ++i) {
        double v = fields[t](i);
        CHECK(std::abs(s.unscale_value(s.scale_value(v, t), t) - v) < 1e-12);
      }
    }
  }
}

TEST_CASE("constant-decimal scheme uses the fixed exponent everywhere") {
  auto fields = random_fields(5, 10, 9);
  ScalingScheme s = fit_scaling(ScalingKind::CD, fields, 4.0, 1.0, 10.0);
  for (int t = 0; t < 5; ++t) {
    CHECK(s.a[t] == doctest::Approx(1e4));
    CHECK(s.b[t] == 0.0);
  }
  double a, b;
  Eigen::VectorXd anything = Eigen::VectorXd::Constant(6, 0.123);
  fit_increment(s, anything, a, b);
  CHECK(a == doctest::Approx(1e4));
  CHECK(b == 0.0);
}

TEST_CASE("value-to-max scheme maps the increment maximum to the target") {
  auto fields = random_fields(5, 30, 13);
  ScalingScheme s = fit_scaling(ScalingKind::VM, fields, 4.0, 2.5, 10.0);
  for (int t = 0; t < 5; ++t) {
    double smax = 0.0;
    for (int i = 0; i < fields[t].size(); ++i) {
      smax = std::max(smax, s.scale_value(fields[t](i), t));
    }
    CHECK(smax == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(s.b[t] == 0.0);
  }
  // Inference-time refit follows the supplied field, not the stored one.
  double a, b;
  Eigen::VectorXd field = Eigen::VectorXd::LinSpaced(4, 0.0, 5e-4);
  fit_increment(s, field, a, b);
  CHECK(a == doctest::Approx(2.5 / 5e-4));
}

TEST_CASE("min-max scheme maps each increment onto [0, new_max]") {
  auto fields = random_fields(5, 30, 17);
  ScalingScheme s = fit_scaling(ScalingKind::MM, fields, 4.0, 1.0, 10.0);
  for (int t = 0; t < 5; ++t) {
    double lo = 1e30, hi = -1e30;
    for (int i = 0; i < fields[t].size(); ++i) {
      double v = s.scale_value(fields[t](i), t);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(10.0).epsilon(1e-12));
  }
}

TEST_CASE("degenerate increments fall back to the identity with a warning") {
  std::vector<Eigen::VectorXd> fields;
  fields.push_back(Eigen::VectorXd::Zero(5));              // VM degenerate
  fields.push_back(Eigen::VectorXd::Constant(5, 2e-4));    // MM degenerate
  std::vector<std::string> warn_vm, warn_mm;
  ScalingScheme vm = fit_scaling(ScalingKind::VM, fields, 4.0, 1.0, 10.0, &warn_vm);
  CHECK(vm.a[0] == 1.0);
  CHECK(vm.b[0] == 0.0);
  CHECK(!warn_vm.empty());
  ScalingScheme mm = fit_scaling(ScalingKind::MM, fields, 4.0, 1.0, 10.0, &warn_mm);
  CHECK(mm.a[1] == 1.0);
  CHECK(mm.b[1] == 0.0);
  CHECK(!warn_mm.empty());
}

TEST_CASE("derivative recovery divides spatial derivatives by a only") {
  auto fields = random_fields(3, 10, 21);
  ScalingScheme s = fit_scaling(ScalingKind::MM, fields, 4.0, 1.0, 10.0);
  double d_deps = 0.7, d_dx = 1.3, d_dy = -0.4;
  double a = s.a[1];
  s.unscale_derivatives(1, d_deps, d_dx, d_dy);
  CHECK(d_deps == doctest::Approx(0.7));  // scale-invariant by construction
  CHECK(d_dx == doctest::Approx(1.3 / a));
  CHECK(d_dy == doctest::Approx(-0.4 / a));
}

TEST_CASE("json round trip") {
  auto fields = random_fields(4, 12, 33);
  ScalingScheme s = fit_scaling(ScalingKind::VM, fields, 4.0, 1.5, 10.0);
  ScalingScheme r = ScalingScheme::from_json(s.to_json());
  CHECK(r.kind == s.kind);
  REQUIRE(r.n_increments() == s.n_increments());
  for (int t = 0; t < s.n_increments(); ++t) {
    CHECK(r.a[t] == s.a[t]);
    CHECK(r.b[t] == s.b[t]);
  }
  CHECK(r.vm_target == s.vm_target);
  CHECK(r.cd_exponent == s.cd_exponent);
}

TEST_CASE("kind string round trip") {
  for (ScalingKind k : {ScalingKind::None, ScalingKind::CD, ScalingKind::VM, ScalingKind::MM}) {
    CHECK(scaling_kind_from_string(to_string(k)) == k);
  }
  CHECK_THROWS_AS(scaling_kind_from_string("nope"), ScalingError);
}
