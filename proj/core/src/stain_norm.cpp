#include "nucleigan/stain_norm.hpp"

#include <algorithm>
#include <cmath>

#include "nucleigan/errors.hpp"
#include "nucleigan/rng.hpp"

namespace nucleigan {

namespace {

// Commonly used H&E OD directions; a starting point for the alternation.
constexpr OdVector kHematoxylinRef{0.650, 0.704, 0.286};
constexpr OdVector kEosinRef{0.072, 0.990, 0.105};
constexpr double kCollapsedAtomsDeg = 2.0;

double dot(const OdVector& a, const OdVector& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

double norm(const OdVector& a) { return std::sqrt(dot(a, a)); }

OdVector unit_nonnegative(OdVector a) {
  for (double& e : a) e = std::max(e, 0.0);
  const double n = norm(a);
  if (n <= 0.0) return {1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
  for (double& e : a) e /= n;
  return a;
}

double percentile99(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = 0.99 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double f = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - f) + values[hi] * f;
}

struct Problem {
  std::vector<OdVector> x;  // tissue pixels
  double lambda;
};

double objective(const Problem& p, const std::array<OdVector, 2>& b,
                 const std::vector<std::array<double, 2>>& d) {
  double f = 0.0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double r = p.x[i][c] - b[0][c] * d[i][0] - b[1][c] * d[i][1];
      f += r * r;
    }
    f += p.lambda * (d[i][0] + d[i][1]);
  }
  return f;
}

// Exact minimization over density row k: b_k is unit norm, so the
// coordinate solution is a shifted soft threshold.
void update_density_row(const Problem& p, const std::array<OdVector, 2>& b,
                        std::vector<std::array<double, 2>>& d, int k) {
  const int j = 1 - k;
  const double cross = dot(b[k], b[j]);
  for (std::size_t i = 0; i < p.x.size(); ++i)
    d[i][k] = std::max(0.0, dot(b[k], p.x[i]) - cross * d[i][j] - 0.5 * p.lambda);
}

// Exact minimization over a unit-norm nonnegative column: maximize b.r
// with r = (X - b_j d_j) d_k.
void update_basis_column(const Problem& p, std::array<OdVector, 2>& b,
                         const std::vector<std::array<double, 2>>& d, int k) {
  const int j = 1 - k;
  OdVector r{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < p.x.size(); ++i)
    for (int c = 0; c < 3; ++c) r[c] += (p.x[i][c] - b[j][c] * d[i][j]) * d[i][k];
  OdVector pos{std::max(r[0], 0.0), std::max(r[1], 0.0), std::max(r[2], 0.0)};
  const double n = norm(pos);
  if (n > 0.0) {
    for (int c = 0; c < 3; ++c) b[k][c] = pos[c] / n;
  } else if (r[0] != 0.0 || r[1] != 0.0 || r[2] != 0.0) {
    const auto best = std::max_element(r.begin(), r.end()) - r.begin();
    b[k] = {0.0, 0.0, 0.0};
    b[k][best] = 1.0;
  }
  // r == 0: the atom is unused and any unit vector is optimal; keep it.
}

}  // namespace

ODImage to_optical_density(const RGBImage& img, double background_intensity) {
  if (!(background_intensity > 0.0)) throw ArgumentError("background_intensity must be > 0");
  if (img.channels != 3) throw ArgumentError("to_optical_density expects an RGB image");
  ODImage od;
  od.height = img.height;
  od.width = img.width;
  od.background_intensity = background_intensity;
  od.pixels.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = -std::log10((img.pixels[i] + kOdEpsilon) / background_intensity);
    od.pixels[i] = std::max(v, 0.0);
  }
  return od;
}

RGBImage from_optical_density(const ODImage& od) {
  RGBImage img(od.height, od.width, 3);
  for (std::size_t i = 0; i < od.pixels.size(); ++i) {
    const double v = od.background_intensity * std::pow(10.0, -od.pixels[i]) - kOdEpsilon;
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return img;
}

std::array<double, 2> solve_densities(const StainBasis& basis, const OdVector& od) {
  const auto& b0 = basis.columns[0];
  const auto& b1 = basis.columns[1];
  const double g00 = dot(b0, b0), g11 = dot(b1, b1), g01 = dot(b0, b1);
  const double r0 = dot(b0, od), r1 = dot(b1, od);
  const double det = g00 * g11 - g01 * g01;
  if (det > 1e-12 * g00 * g11) {
    const double d0 = (g11 * r0 - g01 * r1) / det;
    const double d1 = (g00 * r1 - g01 * r0) / det;
    if (d0 >= 0.0 && d1 >= 0.0) return {d0, d1};
  }
  // The optimum lies on a face: one atom alone, or zero.
  const double s0 = g00 > 0 ? std::max(r0, 0.0) / g00 : 0.0;
  const double s1 = g11 > 0 ? std::max(r1, 0.0) / g11 : 0.0;
  const double gain0 = s0 * r0, gain1 = s1 * r1;  // reduction of the squared residual
  if (gain0 >= gain1) return {s0, 0.0};
  return {0.0, s1};
}

double angular_error_deg(const OdVector& a, const OdVector& b) {
  const double c = dot(a, b) / (norm(a) * norm(b));
  return std::acos(std::clamp(c, -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
}

StainFit estimate_stain_basis(const ODImage& od, double sparsity_weight, int max_iters,
                              std::uint64_t seed) {
  if (sparsity_weight < 0.0) throw ArgumentError("sparsity_weight must be >= 0");
  if (max_iters < 0) throw ArgumentError("max_iters must be >= 0");
  const std::size_t n_pixels = static_cast<std::size_t>(od.height) * od.width;

  Problem p;
  p.lambda = sparsity_weight;
  for (std::size_t i = 0; i < n_pixels; ++i) {
    const OdVector v{od.pixels[3 * i], od.pixels[3 * i + 1], od.pixels[3 * i + 2]};
    if (norm(v) > kBackgroundOdThreshold) p.x.push_back(v);
  }
  if (static_cast<int>(p.x.size()) < kMinTissuePixels)
    throw InsufficientTissueError("found " + std::to_string(p.x.size()) +
                                  " tissue pixels, need at least " +
                                  std::to_string(kMinTissuePixels));

  Rng rng(seed);
  std::array<OdVector, 2> b{kHematoxylinRef, kEosinRef};
  for (auto& col : b) {
    for (double& e : col) e += 0.05 * rng.symmetric();
    col = unit_nonnegative(col);
  }
  std::vector<std::array<double, 2>> d(p.x.size(), {0.0, 0.0});

  StainFit fit;
  fit.tissue_pixels = static_cast<int>(p.x.size());
  fit.background_intensity = od.background_intensity;
  fit.objective.push_back(objective(p, b, d));
  auto record = [&] {
    const double f = objective(p, b, d);
    if (!std::isfinite(f)) throw NumericalError("stain dictionary learning produced a non-finite objective");
    fit.objective.push_back(f);
  };
  for (int it = 0; it < max_iters; ++it) {
    update_density_row(p, b, d, 0);
    update_density_row(p, b, d, 1);
    record();
    update_basis_column(p, b, d, 0);
    update_basis_column(p, b, d, 1);
    record();
  }

  // Collapsed atoms mean a single stain: keep one and replace the other by
  // the reference stain farthest from it, which then carries ~no density.
  if (angular_error_deg(b[0], b[1]) < kCollapsedAtomsDeg) {
    const OdVector& far = angular_error_deg(b[0], kHematoxylinRef) > angular_error_deg(b[0], kEosinRef)
                              ? kHematoxylinRef
                              : kEosinRef;
    b[1] = far;
    for (auto& di : d) {
      di[0] += di[1];
      di[1] = 0.0;
    }
  }

  // Hematoxylin first. An atom carrying almost no density is treated as
  // unused and placed second regardless of its color.
  double mass[2] = {0.0, 0.0};
  for (const auto& di : d) {
    mass[0] += di[0];
    mass[1] += di[1];
  }
  bool swap = b[1][2] > b[0][2];
  if (mass[0] < 0.01 * mass[1]) swap = true;
  else if (mass[1] < 0.01 * mass[0]) swap = false;
  if (swap) std::swap(b[0], b[1]);
  fit.basis.columns = b;

  fit.densities.height = od.height;
  fit.densities.width = od.width;
  fit.densities.maps.resize(2 * n_pixels);
  std::vector<double> tissue_density[2];
  for (std::size_t i = 0; i < n_pixels; ++i) {
    const OdVector v{od.pixels[3 * i], od.pixels[3 * i + 1], od.pixels[3 * i + 2]};
    const auto dd = solve_densities(fit.basis, v);
    fit.densities.maps[2 * i] = dd[0];
    fit.densities.maps[2 * i + 1] = dd[1];
    if (norm(v) > kBackgroundOdThreshold) {
      tissue_density[0].push_back(dd[0]);
      tissue_density[1].push_back(dd[1]);
    }
  }
  for (int k = 0; k < 2; ++k) fit.basis.density_percentiles[k] = percentile99(tissue_density[k]);
  return fit;
}

RGBImage normalize_to_target(const RGBImage& src, const StainFit& src_fit,
                             const StainBasis& target_basis) {
  if (src.channels != 3) throw ArgumentError("normalize_to_target expects an RGB image");
  if (src_fit.densities.height != src.height || src_fit.densities.width != src.width)
    throw ArgumentError("normalize_to_target: fit does not match the source dimensions");
  double scale[2];
  for (int k = 0; k < 2; ++k) {
    const double s = src_fit.basis.density_percentiles[k];
    scale[k] = s > 0.0 ? target_basis.density_percentiles[k] / s : 1.0;
  }
  ODImage out;
  out.height = src.height;
  out.width = src.width;
  out.background_intensity = src_fit.background_intensity;
  out.pixels.resize(src.pixels.size());
  const std::size_t n = static_cast<std::size_t>(src.height) * src.width;
  for (std::size_t i = 0; i < n; ++i) {
    const double d0 = src_fit.densities.maps[2 * i] * scale[0];
    const double d1 = src_fit.densities.maps[2 * i + 1] * scale[1];
    for (int c = 0; c < 3; ++c)
      out.pixels[3 * i + c] = target_basis.columns[0][c] * d0 + target_basis.columns[1][c] * d1;
  }
  return from_optical_density(out);
}

}  // namespace nucleigan
