#include "nucleigan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "nucleigan/errors.hpp"

namespace nucleigan {

namespace {

class DisjointSet {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::int32_t> parent_;
};

// Per-instance statistics and the sparse intersection table of two maps.
struct Overlap {
  std::vector<std::int64_t> gt_area, pred_area;  // index = label, [0] unused
  std::map<std::pair<int, int>, std::int64_t> inter;
  int n_gt = 0;
  int n_pred = 0;

  double jaccard(int g, int p, std::int64_t i) const {
    return static_cast<double>(i) / static_cast<double>(gt_area[g] + pred_area[p] - i);
  }
};

Overlap overlap(const InstanceMap& gt, const InstanceMap& pred) {
  Overlap o;
  o.n_gt = gt.max_label();
  o.n_pred = pred.max_label();
  o.gt_area.assign(o.n_gt + 1, 0);
  o.pred_area.assign(o.n_pred + 1, 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i], p = pred.labels[i];
    if (g > 0) ++o.gt_area[g];
    if (p > 0) ++o.pred_area[p];
    if (g > 0 && p > 0) ++o.inter[{g, p}];
  }
  return o;
}

void require_same_size(const InstanceMap& a, const InstanceMap& b, const char* what) {
  if (!a.same_size(b))
    throw ArgumentError(std::string(what) + ": dimension mismatch (" + std::to_string(a.height) +
                        "x" + std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                        std::to_string(b.width) + ")");
}

InstanceMap canonical(const InstanceMap& m) {
  InstanceMap c = m;
  canonicalize(c);
  return c;
}

struct Candidate {
  double jaccard;
  int gt;
  int pred;
};

// Pairs with positive overlap, sorted by descending Jaccard then by labels.
std::vector<Candidate> ranked_pairs(const Overlap& o) {
  std::vector<Candidate> c;
  c.reserve(o.inter.size());
  for (const auto& [key, i] : o.inter) c.push_back({o.jaccard(key.first, key.second, i), key.first, key.second});
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(b.jaccard, a.gt, a.pred) < std::tie(a.jaccard, b.gt, b.pred);
  });
  return c;
}

std::vector<std::vector<Point>> instance_points(const InstanceMap& m, int n) {
  std::vector<std::vector<Point>> pts(n + 1);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (const int l = m.at(y, x); l > 0) pts[l].push_back({y, x});
  return pts;
}

double bbox_diagonal(const std::vector<Point>& pts) {
  int y0 = std::numeric_limits<int>::max(), x0 = y0, y1 = -1, x1 = -1;
  for (const auto& p : pts) {
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
  }
  return std::hypot(static_cast<double>(y1 - y0 + 1), static_cast<double>(x1 - x0 + 1));
}

// Directed squared Hausdorff distance with early break.
std::int64_t directed_sq(std::span<const Point> a, std::span<const Point> b) {
  std::int64_t cmax = 0;
  for (const auto& pa : a) {
    std::int64_t cmin = std::numeric_limits<std::int64_t>::max();
    bool broke = false;
    for (const auto& pb : b) {
      const std::int64_t dy = pa.y - pb.y, dx = pa.x - pb.x;
      const std::int64_t d = dy * dy + dx * dx;
      if (d < cmax) {
        broke = true;
        break;
      }
      cmin = std::min(cmin, d);
    }
    if (!broke && cmin > cmax) cmax = cmin;
  }
  return cmax;
}

}  // namespace

InstanceMap connected_components(const BinaryMask& mask, int connectivity) {
  if (connectivity != 4 && connectivity != 8)
    throw ArgumentError("connectivity must be 4 or 8");
  if (mask.channels != 1) throw ArgumentError("connected_components expects a 1-channel mask");
  const int h = mask.height, w = mask.width;
  InstanceMap provisional(h, w);
  DisjointSet sets;
  sets.make();  // slot 0 = background
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      std::int32_t label = 0;
      auto consider = [&](int yy, int xx) {
        if (yy < 0 || xx < 0 || xx >= w) return;
        const std::int32_t n = provisional.at(yy, xx);
        if (n == 0) return;
        if (label == 0)
          label = n;
        else
          sets.unite(label, n);
      };
      consider(y, x - 1);
      consider(y - 1, x);
      if (connectivity == 8) {
        consider(y - 1, x - 1);
        consider(y - 1, x + 1);
      }
      provisional.at(y, x) = label ? label : sets.make();
    }
  }
  InstanceMap out(h, w);
  std::map<std::int32_t, std::int32_t> root_to_label;
  std::int32_t next = 0;
  for (std::size_t i = 0; i < provisional.labels.size(); ++i) {
    const auto p = provisional.labels[i];
    if (p == 0) continue;
    const auto r = sets.find(p);
    auto [it, inserted] = root_to_label.try_emplace(r, next + 1);
    if (inserted) ++next;
    out.labels[i] = it->second;
  }
  return out;
}

InstanceMap remove_small_instances(const InstanceMap& map, int min_area) {
  std::map<std::int32_t, std::int64_t> area;
  for (auto l : map.labels)
    if (l > 0) ++area[l];
  InstanceMap out = map;
  for (auto& l : out.labels)
    if (l > 0 && area[l] < min_area) l = 0;
  canonicalize(out);
  return out;
}

double aji(const InstanceMap& gt_in, const InstanceMap& pred_in) {
  require_same_size(gt_in, pred_in, "aji");
  const InstanceMap gt = canonical(gt_in);
  const InstanceMap pred = canonical(pred_in);
  const Overlap o = overlap(gt, pred);

  // Intersections grouped by ground-truth label.
  std::vector<std::vector<std::pair<int, std::int64_t>>> by_gt(o.n_gt + 1);
  for (const auto& [key, i] : o.inter) by_gt[key.first].push_back({key.second, i});

  std::vector<bool> used(o.n_pred + 1, false);
  std::int64_t numerator = 0, denominator = 0;
  for (int g = 1; g <= o.n_gt; ++g) {
    int best = 0;
    double best_j = 0.0;
    std::int64_t best_i = 0;
    for (const auto& [p, i] : by_gt[g]) {  // ascending p
      if (used[p]) continue;
      const double j = o.jaccard(g, p, i);
      if (j > best_j) {
        best = p;
        best_j = j;
        best_i = i;
      }
    }
    if (best) {
      used[best] = true;
      numerator += best_i;
      denominator += o.gt_area[g] + o.pred_area[best] - best_i;
    } else {
      denominator += o.gt_area[g];
    }
  }
  for (int p = 1; p <= o.n_pred; ++p)
    if (!used[p]) denominator += o.pred_area[p];
  if (denominator == 0) return 1.0;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

double hausdorff(std::span<const Point> a, std::span<const Point> b) {
  if (a.empty() || b.empty()) throw ArgumentError("hausdorff: empty point set");
  const auto d = std::max(directed_sq(a, b), directed_sq(b, a));
  return std::sqrt(static_cast<double>(d));
}

double image_hausdorff(const InstanceMap& gt_in, const InstanceMap& pred_in) {
  require_same_size(gt_in, pred_in, "image_hausdorff");
  const InstanceMap gt = canonical(gt_in);
  const InstanceMap pred = canonical(pred_in);
  const Overlap o = overlap(gt, pred);
  if (o.n_gt == 0 && o.n_pred == 0) return 0.0;
  const auto gt_pts = instance_points(gt, o.n_gt);
  const auto pred_pts = instance_points(pred, o.n_pred);

  std::vector<bool> gt_used(o.n_gt + 1, false), pred_used(o.n_pred + 1, false);
  double total = 0.0;
  int terms = 0;
  for (const auto& c : ranked_pairs(o)) {
    if (gt_used[c.gt] || pred_used[c.pred]) continue;
    gt_used[c.gt] = pred_used[c.pred] = true;
    total += hausdorff(gt_pts[c.gt], pred_pts[c.pred]);
    ++terms;
  }
  for (int g = 1; g <= o.n_gt; ++g)
    if (!gt_used[g]) {
      total += bbox_diagonal(gt_pts[g]);
      ++terms;
    }
  for (int p = 1; p <= o.n_pred; ++p)
    if (!pred_used[p]) {
      total += bbox_diagonal(pred_pts[p]);
      ++terms;
    }
  return total / terms;
}

F1Result f1_score(const InstanceMap& gt_in, const InstanceMap& pred_in, double iou_threshold) {
  require_same_size(gt_in, pred_in, "f1_score");
  const InstanceMap gt = canonical(gt_in);
  const InstanceMap pred = canonical(pred_in);
  const Overlap o = overlap(gt, pred);
  std::vector<bool> gt_used(o.n_gt + 1, false), pred_used(o.n_pred + 1, false);
  F1Result r;
  for (const auto& c : ranked_pairs(o)) {
    if (c.jaccard <= iou_threshold) break;
    if (gt_used[c.gt] || pred_used[c.pred]) continue;
    gt_used[c.gt] = pred_used[c.pred] = true;
    ++r.tp;
  }
  r.fp = o.n_pred - r.tp;
  r.fn = o.n_gt - r.tp;
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
  r.recall = (r.tp + r.fn) > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
  const double s = r.precision + r.recall;
  r.f1 = s > 0 ? 2.0 * r.precision * r.recall / s : 0.0;
  return r;
}

ImageMetrics evaluate_image(const std::string& image, const std::string& organ,
                            const InstanceMap& gt, const InstanceMap& pred) {
  ImageMetrics m;
  m.image = image;
  m.organ = organ;
  m.aji = aji(gt, pred);
  m.hausdorff = image_hausdorff(gt, pred);
  const auto f = f1_score(gt, pred);
  m.f1 = f.f1;
  m.tp = f.tp;
  m.fp = f.fp;
  m.fn = f.fn;
  return m;
}

MetricsReport aggregate_metrics(std::vector<ImageMetrics> per_image) {
  MetricsReport r;
  r.per_image = std::move(per_image);
  std::map<std::string, MetricsAggregate> organs;
  auto add = [](MetricsAggregate& a, const ImageMetrics& m) {
    ++a.n_images;
    a.aji += m.aji;
    a.hausdorff += m.hausdorff;
    a.f1 += m.f1;
  };
  auto finish = [](MetricsAggregate& a) {
    if (a.n_images == 0) return;
    a.aji /= a.n_images;
    a.hausdorff /= a.n_images;
    a.f1 /= a.n_images;
  };
  r.overall.organ = "overall";
  for (const auto& m : r.per_image) {
    auto& a = organs[m.organ];
    a.organ = m.organ;
    add(a, m);
    add(r.overall, m);
  }
  for (auto& [name, a] : organs) {
    finish(a);
    r.per_organ.push_back(a);
  }
  finish(r.overall);
  return r;
}

}  // namespace nucleigan
