#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "samcnet/lrfc.hpp"
#include "samcnet/rng.hpp"

using namespace samcnet;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

LrfcConfig table_config() {
  LrfcConfig cfg;  // defaults: S=5, lambda in [1, 100]
  return cfg;
}

}  // namespace

TEST_CASE("encode: origin gives all cosines 1, all sines 0, squared norm 3S") {
  LrfcConfig cfg = table_config();
  auto pe = lrfc::encode(0.0, 0.0, cfg);
  REQUIRE(pe.size() == 6 * cfg.scale_count);
  for (std::size_t i = 0; i < pe.size(); i += 2) {
    REQUIRE(pe[i] == 1.0);
    REQUIRE(pe[i + 1] == 0.0);
  }
  REQUIRE(dot(pe, pe) == Catch::Approx(3.0 * cfg.scale_count).margin(1e-12));
}

TEST_CASE("encode: hand evaluation at S=1, lambda=1, x=(1,0)") {
  LrfcConfig cfg;
  cfg.scale_count = 1;
  cfg.lambda_min = cfg.lambda_max = 1.0;
  auto pe = lrfc::encode(1.0, 0.0, cfg);
  REQUIRE(pe.size() == 6);
  REQUIRE(pe[0] == Catch::Approx(std::cos(1.0)).margin(1e-15));   // 0.5403
  REQUIRE(pe[1] == Catch::Approx(std::sin(1.0)).margin(1e-15));   // 0.8415
  REQUIRE(pe[2] == Catch::Approx(std::cos(0.5)).margin(1e-15));   // 0.8776
  REQUIRE(pe[3] == Catch::Approx(-std::sin(0.5)).margin(1e-15));  // -0.4794
  REQUIRE(pe[4] == Catch::Approx(std::cos(0.5)).margin(1e-15));
  REQUIRE(pe[5] == Catch::Approx(-std::sin(0.5)).margin(1e-15));
  REQUIRE(pe[0] == Catch::Approx(0.5403).margin(5e-5));
  REQUIRE(pe[1] == Catch::Approx(0.8415).margin(5e-5));
  REQUIRE(pe[2] == Catch::Approx(0.8776).margin(5e-5));
  REQUIRE(pe[3] == Catch::Approx(-0.4794).margin(5e-5));
}

TEST_CASE("encode: scales run geometrically from lambda_min to lambda_max") {
  LrfcConfig cfg = table_config();
  REQUIRE(cfg.lambda_at(0) == Catch::Approx(1.0));
  REQUIRE(cfg.lambda_at(4) == Catch::Approx(100.0));
  REQUIRE(cfg.lambda_at(2) == Catch::Approx(10.0));
  LrfcConfig single;
  single.scale_count = 1;
  single.lambda_min = 2.0;
  single.lambda_max = 50.0;
  REQUIRE(single.lambda_at(0) == Catch::Approx(2.0));  // S=1 degenerates to lambda_min
}

TEST_CASE("NORM: squared norm is 3S for 1000 random inputs") {
  LrfcConfig cfg = table_config();
  Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    auto pe = lrfc::encode(rng.uniform(-5000, 5000), rng.uniform(-5000, 5000), cfg);
    REQUIRE(std::fabs(dot(pe, pe) - 3.0 * cfg.scale_count) < 1e-12);
  }
}

TEST_CASE("TRANSLATION: inner products depend only on the displacement") {
  LrfcConfig cfg = table_config();
  Rng rng(32);
  for (int i = 0; i < 1000; ++i) {
    const double ax = rng.uniform(-500, 500), ay = rng.uniform(-500, 500);
    const double bx = rng.uniform(-500, 500), by = rng.uniform(-500, 500);
    const double tx = rng.uniform(-500, 500), ty = rng.uniform(-500, 500);
    const double base = dot(lrfc::encode(ax, ay, cfg), lrfc::encode(bx, by, cfg));
    const double moved =
        dot(lrfc::encode(ax + tx, ay + ty, cfg), lrfc::encode(bx + tx, by + ty, cfg));
    REQUIRE(std::fabs(base - moved) < 1e-9);
  }
}

TEST_CASE("LOCAL QUADRATIC DECAY: single scale, small displacements") {
  LrfcConfig cfg;
  cfg.scale_count = 1;
  cfg.lambda_min = cfg.lambda_max = 7.0;
  Rng rng(33);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-100, 100), y = rng.uniform(-100, 100);
    const double norm = rng.uniform(0.0, 0.01) * cfg.lambda_min;
    const double angle = rng.uniform(0, 2 * 3.14159265358979);
    const double dx = norm * std::cos(angle), dy = norm * std::sin(angle);
    const double ip = dot(lrfc::encode(x, y, cfg), lrfc::encode(x + dx, y + dy, cfg));
    const double predicted =
        3.0 - 0.75 * (norm / cfg.lambda_min) * (norm / cfg.lambda_min);
    REQUIRE(std::fabs(ip - predicted) < 1e-6);
  }
}

TEST_CASE("distinct nearby positions give distinct encodings") {
  LrfcConfig cfg = table_config();
  Rng rng(34);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-100, 100), y = rng.uniform(-100, 100);
    const double r = rng.uniform(1e-6, cfg.lambda_min / 2);
    const double angle = rng.uniform(0, 2 * 3.14159265358979);
    auto a = lrfc::encode(x, y, cfg);
    auto b = lrfc::encode(x + r * std::cos(angle), y + r * std::sin(angle), cfg);
    REQUIRE(a != b);
  }
}

TEST_CASE("relative_encoding: zero at equal points, symmetric") {
  LrfcConfig cfg = table_config();
  auto zero = lrfc::relative_encoding(3.5, -2.0, 3.5, -2.0, cfg);
  for (const double v : zero) REQUIRE(v == 0.0);

  Rng rng(35);
  for (int i = 0; i < 100; ++i) {
    const double ax = rng.uniform(-100, 100), ay = rng.uniform(-100, 100);
    const double bx = rng.uniform(-100, 100), by = rng.uniform(-100, 100);
    auto ab = lrfc::relative_encoding(ax, ay, bx, by, cfg);
    auto ba = lrfc::relative_encoding(bx, by, ax, ay, cfg);
    REQUIRE(ab == ba);
  }
}

TEST_CASE("relative_encoding: per-(scale,direction) pair norms shift-invariant") {
  // The individual |cos a - cos b| slots are NOT preserved by translation
  // (cos a - cos b = -2 sin((a+b)/2) sin((a-b)/2) carries the midpoint); the
  // (cos, sin) slot pair norm is, since it equals 2 - 2cos(a-b).
  LrfcConfig cfg = table_config();
  Rng rng(36);
  for (int i = 0; i < 100; ++i) {
    const double ax = rng.uniform(-100, 100), ay = rng.uniform(-100, 100);
    const double bx = rng.uniform(-100, 100), by = rng.uniform(-100, 100);
    const double tx = rng.uniform(-100, 100), ty = rng.uniform(-100, 100);
    auto ab = lrfc::relative_encoding(ax, ay, bx, by, cfg);
    auto shifted = lrfc::relative_encoding(ax + tx, ay + ty, bx + tx, by + ty, cfg);
    for (std::size_t t = 0; t < ab.size(); t += 2) {
      const double n0 = ab[t] * ab[t] + ab[t + 1] * ab[t + 1];
      const double n1 = shifted[t] * shifted[t] + shifted[t + 1] * shifted[t + 1];
      REQUIRE(std::fabs(n0 - n1) < 1e-9);
    }
  }
}

TEST_CASE("config validation") {
  LrfcConfig bad;
  bad.scale_count = 0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.scale_count = 2;
  bad.lambda_min = 5;
  bad.lambda_max = 1;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  REQUIRE_THROWS_AS(lrfc::encode(std::nan(""), 0.0, table_config()), std::invalid_argument);
}
