#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

// Multi-scale local reference frame characterization: sinusoidal encoding of a
// 2D location along three unit directions 120 degrees apart, at S geometric
// scales between lambda_min and lambda_max. Relative edge encodings are the
// elementwise absolute difference of two point encodings.

namespace samcnet {

struct LrfcConfig {
  std::size_t scale_count = 5;  // S
  double lambda_min = 1.0;
  double lambda_max = 100.0;

  void validate() const {
    if (scale_count < 1) throw std::invalid_argument("lrfc: scale_count must be >= 1");
    if (!(lambda_min > 0) || lambda_min > lambda_max)
      throw std::invalid_argument("lrfc: need 0 < lambda_min <= lambda_max");
  }

  std::size_t encoding_dim() const { return 6 * scale_count; }

  double lambda_at(std::size_t s) const {
    if (scale_count == 1) return lambda_min;
    const double g = lambda_max / lambda_min;
    return lambda_min * std::pow(g, static_cast<double>(s) /
                                        static_cast<double>(scale_count - 1));
  }
};

namespace lrfc {

// Unit directions with pairwise angles of 2*pi/3.
inline constexpr std::array<std::array<double, 2>, 3> kDirections{{
    {1.0, 0.0},
    {-0.5, 0.8660254037844386467637231707529362},   // sqrt(3)/2
    {-0.5, -0.8660254037844386467637231707529362},
}};

// Layout: scale-major, then direction, then [cos, sin]; length 6*S.
inline void encode_into(double x, double y, const LrfcConfig& cfg, double* out) {
  std::size_t slot = 0;
  for (std::size_t s = 0; s < cfg.scale_count; ++s) {
    const double lambda = cfg.lambda_at(s);
    for (const auto& a : kDirections) {
      const double angle = (x * a[0] + y * a[1]) / lambda;
      out[slot++] = std::cos(angle);
      out[slot++] = std::sin(angle);
    }
  }
}

inline std::vector<double> encode(double x, double y, const LrfcConfig& cfg) {
  if (!std::isfinite(x) || !std::isfinite(y))
    throw std::invalid_argument("lrfc::encode: non-finite coordinate");
  std::vector<double> out(cfg.encoding_dim());
  encode_into(x, y, cfg, out.data());
  return out;
}

// |PE(c_i) - PE(c_j)| elementwise.
inline std::vector<double> relative_encoding(double xi, double yi, double xj, double yj,
                                             const LrfcConfig& cfg) {
  std::vector<double> a = encode(xi, yi, cfg);
  std::vector<double> b = encode(xj, yj, cfg);
  for (std::size_t t = 0; t < a.size(); ++t) a[t] = std::fabs(a[t] - b[t]);
  return a;
}

}  // namespace lrfc

}  // namespace samcnet
