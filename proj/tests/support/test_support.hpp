#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "nucleigan/image.hpp"
#include "nucleigan/metrics.hpp"
#include "nucleigan/rng.hpp"
#include "nucleigan/tensor.hpp"

namespace testing {

using namespace nucleigan;

template <class T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<T> v(s.numel());
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return Tensor<T>(s, std::move(v), requires_grad);
}

/// Norm-wise relative error ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

/// Compares the analytic gradient of scalar f with respect to `input` with
/// central differences. Returns the norm-wise relative error.
template <class T>
double gradient_check(const std::function<Tensor<T>()>& f, Tensor<T> input, double step) {
  input.set_requires_grad(true);
  input.zero_grad();
  f().backward();
  std::vector<double> analytic(input.grad().begin(), input.grad().end());
  std::vector<double> numeric(input.numel());
  auto values = input.mutable_data();
  NoGradGuard ng;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = static_cast<T>(saved + step);
    const double up = static_cast<double>(f().item());
    values[i] = static_cast<T>(saved - step);
    const double down = static_cast<double>(f().item());
    values[i] = saved;
    numeric[i] = (up - down) / (2.0 * step);
  }
  return relative_error(analytic, numeric);
}

/// Breadth-first flood fill labelling, numbered in raster order of the
/// first pixel.
inline InstanceMap flood_fill_components(const BinaryMask& mask, int connectivity) {
  InstanceMap out(mask.height, mask.width);
  std::int32_t next = 0;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x) || out.at(y, x)) continue;
      ++next;
      std::queue<std::pair<int, int>> q;
      q.push({y, x});
      out.at(y, x) = next;
      while (!q.empty()) {
        const auto [cy, cx] = q.front();
        q.pop();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) continue;
            if (connectivity == 4 && dy != 0 && dx != 0) continue;
            const int ny = cy + dy, nx = cx + dx;
            if (ny < 0 || nx < 0 || ny >= mask.height || nx >= mask.width) continue;
            if (!mask.at(ny, nx) || out.at(ny, nx)) continue;
            out.at(ny, nx) = next;
            q.push({ny, nx});
          }
      }
    }
  return out;
}

using PixelSet = std::set<std::pair<int, int>>;

/// Instances as explicit pixel sets, ordered by first pixel in raster order.
inline std::vector<PixelSet> instance_sets(const InstanceMap& m) {
  std::vector<std::int32_t> order;
  std::vector<PixelSet> sets;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const auto l = m.at(y, x);
      if (l <= 0) continue;
      auto it = std::find(order.begin(), order.end(), l);
      std::size_t k;
      if (it == order.end()) {
        order.push_back(l);
        sets.emplace_back();
        k = sets.size() - 1;
      } else {
        k = static_cast<std::size_t>(it - order.begin());
      }
      sets[k].insert({y, x});
    }
  return sets;
}

inline std::size_t intersection_size(const PixelSet& a, const PixelSet& b) {
  std::size_t n = 0;
  for (const auto& p : a) n += b.count(p);
  return n;
}

inline double set_jaccard(const PixelSet& a, const PixelSet& b) {
  const double i = static_cast<double>(intersection_size(a, b));
  return i / (static_cast<double>(a.size() + b.size()) - i);
}

/// Set-arithmetic AJI following the written rule directly.
inline double brute_force_aji(const InstanceMap& gt, const InstanceMap& pred) {
  const auto g = instance_sets(gt), p = instance_sets(pred);
  std::vector<bool> used(p.size(), false);
  double num = 0.0, den = 0.0;
  for (const auto& gi : g) {
    int best = -1;
    double best_j = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (used[j]) continue;
      const double jac = set_jaccard(gi, p[j]);
      if (jac > best_j) {
        best_j = jac;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      used[best] = true;
      const double inter = static_cast<double>(intersection_size(gi, p[best]));
      num += inter;
      den += static_cast<double>(gi.size() + p[best].size()) - inter;
    } else {
      den += static_cast<double>(gi.size());
    }
  }
  for (std::size_t j = 0; j < p.size(); ++j)
    if (!used[j]) den += static_cast<double>(p[j].size());
  return den == 0.0 ? 1.0 : num / den;
}

inline double brute_force_hausdorff(const std::vector<Point>& a, const std::vector<Point>& b) {
  auto directed = [](const std::vector<Point>& p, const std::vector<Point>& q) {
    double worst = 0.0;
    for (const auto& s : p) {
      double best = INFINITY;
      for (const auto& t : q) best = std::min(best, std::hypot(double(s.y - t.y), double(s.x - t.x)));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(a, b), directed(b, a));
}

struct PairScore {
  double jaccard;
  std::size_t g;
  std::size_t p;
};

/// All overlapping pairs by descending Jaccard, ties in (gt, pred) order.
inline std::vector<PairScore> ranked(const std::vector<PixelSet>& g, const std::vector<PixelSet>& p) {
  std::vector<PairScore> out;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j)
      if (intersection_size(g[i], p[j]) > 0) out.push_back({set_jaccard(g[i], p[j]), i, j});
  std::stable_sort(out.begin(), out.end(), [](const PairScore& a, const PairScore& b) { return a.jaccard > b.jaccard; });
  return out;
}

inline std::vector<Point> points_of(const PixelSet& s) {
  std::vector<Point> v;
  for (const auto& [y, x] : s) v.push_back({y, x});
  return v;
}

inline double bbox_diag(const PixelSet& s) {
  int y0 = 1 << 30, y1 = -1, x0 = 1 << 30, x1 = -1;
  for (const auto& [y, x] : s) {
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
  }
  return std::hypot(double(y1 - y0 + 1), double(x1 - x0 + 1));
}

inline double brute_force_image_hausdorff(const InstanceMap& gt, const InstanceMap& pred) {
  const auto g = instance_sets(gt), p = instance_sets(pred);
  if (g.empty() && p.empty()) return 0.0;
  std::vector<bool> gu(g.size()), pu(p.size());
  double total = 0.0;
  int n = 0;
  for (const auto& c : ranked(g, p)) {
    if (gu[c.g] || pu[c.p]) continue;
    gu[c.g] = pu[c.p] = true;
    total += brute_force_hausdorff(points_of(g[c.g]), points_of(p[c.p]));
    ++n;
  }
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!gu[i]) total += bbox_diag(g[i]), ++n;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (!pu[j]) total += bbox_diag(p[j]), ++n;
  return total / n;
}

struct BruteF1 {
  double f1;
  int tp, fp, fn;
};

inline BruteF1 brute_force_f1(const InstanceMap& gt, const InstanceMap& pred, double thr = 0.5) {
  const auto g = instance_sets(gt), p = instance_sets(pred);
  std::vector<bool> gu(g.size()), pu(p.size());
  int tp = 0;
  for (const auto& c : ranked(g, p)) {
    if (c.jaccard <= thr) continue;
    if (gu[c.g] || pu[c.p]) continue;
    gu[c.g] = pu[c.p] = true;
    ++tp;
  }
  const int fp = static_cast<int>(p.size()) - tp, fn = static_cast<int>(g.size()) - tp;
  const double prec = tp + fp ? double(tp) / (tp + fp) : 0.0;
  const double rec = tp + fn ? double(tp) / (tp + fn) : 0.0;
  return {prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0, tp, fp, fn};
}

/// Random instance map: a few random axis-aligned rectangles and disks,
/// later shapes overwrite earlier ones, labels drawn at random.
inline InstanceMap random_instance_map(int h, int w, std::uint64_t seed, int max_shapes = 8) {
  Rng rng(seed);
  InstanceMap m(h, w);
  const int n = static_cast<int>(rng.below(max_shapes + 1));
  for (int k = 0; k < n; ++k) {
    const auto label = static_cast<std::int32_t>(1 + rng.below(50));
    const int cy = static_cast<int>(rng.below(h)), cx = static_cast<int>(rng.below(w));
    const int r = 1 + static_cast<int>(rng.below(6));
    const bool disk = rng.bernoulli(0.5);
    for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y)
      for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x)
        if (!disk || (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) m.at(y, x) = label;
  }
  return m;
}

/// Fresh empty directory under the system temp location.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nucleigan_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing
