#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "nucleigan/image.hpp"

namespace nucleigan {

/// Per-pixel optical densities, 3 interleaved channels, all >= 0.
struct ODImage {
  int height = 0;
  int width = 0;
  double background_intensity = 255.0;
  std::vector<double> pixels;

  double at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

using OdVector = std::array<double, 3>;

/// Two unit-norm, nonnegative OD colors. Hematoxylin (larger blue
/// component) comes first.
struct StainBasis {
  std::array<OdVector, 2> columns{};
  std::array<double, 2> density_percentiles{};  // 99th percentile per stain
};

/// Per-pixel stain concentrations, 2 interleaved channels.
struct DensityMaps {
  int height = 0;
  int width = 0;
  std::vector<double> maps;

  double at(int y, int x, int k) const {
    return maps[(static_cast<std::size_t>(y) * width + x) * 2 + k];
  }
};

struct StainFit {
  StainBasis basis;
  DensityMaps densities;
  /// Objective ||OD - B D||^2 + lambda ||D||_1 over tissue pixels, recorded
  /// at initialization and after every alternation step.
  std::vector<double> objective;
  int tissue_pixels = 0;
  double background_intensity = 255.0;
};

inline constexpr double kOdEpsilon = 1.0;
inline constexpr double kBackgroundOdThreshold = 0.15;
inline constexpr int kMinTissuePixels = 100;

/// od = -log10((pixel + 1) / background), clamped at 0.
ODImage to_optical_density(const RGBImage& img, double background_intensity = 255.0);
/// pixel = background * 10^-od - 1, rounded and clamped to [0, 255].
RGBImage from_optical_density(const ODImage& od);

/// Two-atom nonnegative sparse dictionary learning on the tissue pixels
/// (OD magnitude > 0.15) by hierarchical alternating least squares. Each
/// alternation is an exact block minimization, so the recorded objective
/// never increases. The returned density maps cover every pixel and are the
/// nonnegative least-squares densities under the final basis.
StainFit estimate_stain_basis(const ODImage& od, double sparsity_weight = 0.1,
                              int max_iters = 200, std::uint64_t seed = 0);

/// Rescales the source densities per stain to the target's 99th
/// percentiles, recombines them with the target basis, and converts back to
/// RGB with the source background intensity.
RGBImage normalize_to_target(const RGBImage& src, const StainFit& src_fit,
                             const StainBasis& target_basis);

/// Nonnegative least-squares densities of one OD vector under a basis.
std::array<double, 2> solve_densities(const StainBasis& basis, const OdVector& od);

/// Angle between two OD directions, in degrees.
double angular_error_deg(const OdVector& a, const OdVector& b);

}  // namespace nucleigan
