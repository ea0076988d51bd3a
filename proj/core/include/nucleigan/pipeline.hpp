#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "nucleigan/image.hpp"
#include "nucleigan/manifest.hpp"
#include "nucleigan/metrics.hpp"
#include "nucleigan/train_seg.hpp"
#include "nucleigan/train_synth.hpp"

namespace nucleigan {

struct PatchConfig {
  int patch = 256;
  int stride = 248;
  bool operator==(const PatchConfig&) const = default;
};

struct SplitConfig {
  std::vector<std::string> train_organs;
  std::vector<std::string> test_organs;
  /// Share of patients held out for organs listed on both sides.
  double test_patient_fraction = 1.0 / 3.0;
  bool operator==(const SplitConfig&) const = default;
};

struct StainConfig {
  bool enabled = true;
  std::string target;  // image path; empty = first training patch
  double sparsity = 0.1;
  int max_iters = 200;
  std::uint64_t seed = 0;
  bool operator==(const StainConfig&) const = default;
};

/// Toy tiles used when no annotated data is supplied.
struct DemoConfig {
  std::vector<std::string> organs{"breast", "liver", "kidney", "colon"};
  int patients_per_organ = 2;
  int tiles_per_patient = 1;
  int tile_size = 256;
  int nuclei_per_tile = 30;
  std::uint64_t seed = 7;
  bool operator==(const DemoConfig&) const = default;
};

struct RunConfig {
  std::string tiles_dir;  // empty = generate demo tiles
  std::string out_dir = "run";
  std::string created_at = "1970-01-01T00:00:00Z";
  PatchConfig patches;
  SplitConfig splits;
  StainConfig stain;
  int profile_resolution = 16;
  SynthTrainConfig synth;
  int synthetic_count = 4650;
  std::uint64_t synthetic_seed = 0;
  SegTrainConfig seg;
  int segment_tile = 256;
  int segment_overlap = 32;
  int min_area = 30;
  DemoConfig demo;

  bool operator==(const RunConfig&) const = default;
};

std::string serialize_run_config(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// FNV-1a of the canonical JSON form, ignoring out_dir.
std::string run_config_hash(const RunConfig& cfg);

struct ExtractResult {
  DatasetManifest manifest;
  std::vector<std::string> errors;  // one entry per skipped tile
};

/// Reads `tiles_dir/tiles.csv` (columns image,labels,organ,patient; paths
/// relative to tiles_dir) and cuts every aligned pair into a grid of
/// patch x patch windows at the given stride. Patches go to
/// out/images and out/labels as <organ>_<patient>_<tile>_r<i>_c<j>.png with
/// labels renumbered 1..k per patch. Misaligned pairs are reported and
/// skipped.
ExtractResult extract_patches(const std::filesystem::path& tiles_dir, const PatchConfig& cfg,
                              const std::filesystem::path& out_dir);

/// Window origins along one axis.
std::vector<int> patch_starts(int length, int patch, int stride);

/// Assigns splits by organ: train-only organs to train, test-only organs to
/// test, organs on both lists split by patient (sorted ids, the last
/// test_patient_fraction to test). Synthetic records stay in train. Records
/// of unlisted organs are dropped. Deterministic.
DatasetManifest make_splits(const DatasetManifest& manifest, const SplitConfig& cfg);

/// Green tint where both maps are foreground, red where exactly one is,
/// image pixels elsewhere. Tinted pixels are (pixel + tint) / 2 rounded up.
RGBImage render_overlay(const InstanceMap& gt, const InstanceMap& pred, const RGBImage& img);

/// Evaluates every prediction label PNG in `pred_dir` against the file of
/// the same name in `gt_dir`. The organ tag is the filename prefix before the
/// first '_'.
MetricsReport evaluate_dirs(const std::filesystem::path& gt_dir, const std::filesystem::path& pred_dir);

/// Columns image,organ,aji,hausdorff,f1,tp,fp,fn.
std::string metrics_csv(const MetricsReport& report);
std::string metrics_json(const MetricsReport& report);
void write_metrics(const std::filesystem::path& csv_path, const MetricsReport& report);

struct MethodReport {
  std::string method;
  MetricsReport report;
};

struct ReportRow {
  std::string method;
  std::string organ;
  int n_images = 0;
  double aji = 0.0;
  double hausdorff = 0.0;
  double f1 = 0.0;
  bool operator==(const ReportRow&) const = default;
};

/// Per-organ rows then an "overall" row (mean over images) per method.
std::vector<ReportRow> report_rows(const std::vector<MethodReport>& reports);
std::string report_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_report_csv(const std::string& text);
/// Writes `<out>.csv` and `<out>.json`.
void build_report(const std::vector<MethodReport>& reports, const std::filesystem::path& out);
/// Reads a per-image CSV written by write_metrics.
MetricsReport read_metrics_csv(const std::filesystem::path& path);

/// Toy H&E rendering of an instance map: textured pink background, purple
/// nuclei with a darker rim on instance boundaries.
RGBImage synthesize_toy_he(const InstanceMap& instances, std::uint64_t seed);

/// Writes demo tiles (images/, labels/, tiles.csv) to `dir`.
void make_demo_data(const std::filesystem::path& dir, const DemoConfig& cfg);

/// Rasterizes polygons given as JSON {"height", "width", "polygons":
/// [[[x, y], ...], ...]}; later polygons own shared pixels.
InstanceMap import_polygons(const std::string& json_text);

struct RunSummary {
  DatasetManifest manifest;
  MetricsReport evaluation;
  std::vector<std::string> warnings;
};

using LogFn = std::function<void(const std::string&)>;

/// Full pipeline under cfg.out_dir: patches, splits, stain normalization,
/// shape dictionary, synthesis training and generation, segmentation
/// training, inference on the test split, evaluation and report.
RunSummary run_all(const RunConfig& cfg, const LogFn& log = {});

}  // namespace nucleigan
