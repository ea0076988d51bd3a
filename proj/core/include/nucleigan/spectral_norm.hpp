#pragma once

#include <span>
#include <vector>

namespace nucleigan {

template <class T>
struct SpectralNormResult {
  std::vector<T> weight;  // W / sigma, same layout as the input
  T sigma{};              // uᵀ W v for the returned u, v
  std::vector<T> u;       // updated left singular vector estimate (rows)
  std::vector<T> v;       // right singular vector estimate (cols)
};

/// Spectral normalization of a row-major rows x cols matrix by Krylov-accelerated
/// power iteration (Golub-Kahan). Each round costs one Wᵀu and one Wv product;
/// a single round is the classic update v <- normalize(Wᵀu), u <- normalize(Wv).
/// u and v are the top Ritz vectors. sigma is clamped below at 1e-12, so an
/// all-zero matrix maps to zeros.
template <class T>
SpectralNormResult<T> spectral_normalize(std::span<const T> weight, int rows, int cols,
                                         std::span<const T> u, int n_power_iters = 1);

}  // namespace nucleigan
