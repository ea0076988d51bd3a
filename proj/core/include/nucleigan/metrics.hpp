#pragma once

#include <span>
#include <string>
#include <vector>

#include "nucleigan/image.hpp"

namespace nucleigan {

/// Labels foreground components, numbering them in raster order of their
/// first pixel. connectivity is 4 or 8.
InstanceMap connected_components(const BinaryMask& mask, int connectivity = 8);

/// Drops instances smaller than `min_area` pixels and canonicalizes.
InstanceMap remove_small_instances(const InstanceMap& map, int min_area);

/// Aggregated Jaccard Index.
///
/// Both maps are canonicalized first, so "ascending label" means raster order
/// of first pixel and the result does not depend on label ids. Each ground
/// truth instance, in that order, takes the still-unused prediction with the
/// highest Jaccard (ties to the lower label); its intersection goes to the
/// numerator and its union to the denominator. A ground-truth instance that
/// overlaps no unused prediction adds its area to the denominator only.
/// Unused predictions add their areas to the denominator. Two empty maps
/// score 1.
double aji(const InstanceMap& gt, const InstanceMap& pred);

struct Point {
  int y = 0;
  int x = 0;
  bool operator==(const Point&) const = default;
};

/// Symmetric Hausdorff distance max(h(A,B), h(B,A)) with
/// h(A,B) = max_a min_b |a-b|. Throws ArgumentError on an empty set.
double hausdorff(std::span<const Point> a, std::span<const Point> b);

/// Mean of per-pair Hausdorff distances over instances matched greedily by
/// descending Jaccard (overlapping pairs only). Each unmatched instance on
/// either side contributes its bounding-box diagonal. 0 when both maps are
/// empty.
double image_hausdorff(const InstanceMap& gt, const InstanceMap& pred);

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

/// Object-level F1 with greedy one-to-one matching by descending Jaccard;
/// a pair counts only if its Jaccard exceeds `iou_threshold`.
F1Result f1_score(const InstanceMap& gt, const InstanceMap& pred, double iou_threshold = 0.5);

struct ImageMetrics {
  std::string image;
  std::string organ;
  double aji = 0.0;
  double hausdorff = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

struct MetricsAggregate {
  std::string organ;  // "overall" for the all-image row
  int n_images = 0;
  double aji = 0.0;
  double hausdorff = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  std::vector<ImageMetrics> per_image;
  std::vector<MetricsAggregate> per_organ;  // sorted by organ tag
  MetricsAggregate overall;                  // mean over images, not organs
};

ImageMetrics evaluate_image(const std::string& image, const std::string& organ,
                            const InstanceMap& gt, const InstanceMap& pred);
MetricsReport aggregate_metrics(std::vector<ImageMetrics> per_image);

}  // namespace nucleigan
