#include "nucleigan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "nucleigan/checkpoint.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/mask_synth.hpp"
#include "nucleigan/rng.hpp"
#include "nucleigan/stain_norm.hpp"

namespace nucleigan {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::set<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

std::vector<int> patch_starts(int length, int patch, int stride) {
  if (patch < 1 || stride < 1) throw ArgumentError("patch and stride must be positive");
  std::vector<int> starts;
  for (int s = 0; s + patch <= length; s += stride) starts.push_back(s);
  return starts;
}

ExtractResult extract_patches(const fs::path& tiles_dir, const PatchConfig& cfg, const fs::path& out_dir) {
  const fs::path index = tiles_dir / "tiles.csv";
  std::istringstream in(io::read_file(index));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(index.string() + " is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* name : {"image", "labels", "organ", "patient"})
    if (!col.count(name)) throw ValidationError(index.string() + " lacks the '" + name + "' column");

  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  ExtractResult result;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv_line(line);
    const std::string where = index.string() + ":" + std::to_string(lineno);
    if (f.size() < header.size()) {
      result.errors.push_back(where + ": expected " + std::to_string(header.size()) + " fields");
      continue;
    }
    const std::string organ = f[col["organ"]], patient = f[col["patient"]];
    if (organ.empty() || organ.find('_') != std::string::npos) {
      result.errors.push_back(where + ": organ tag must be non-empty and contain no '_'");
      continue;
    }
    try {
      const RGBImage img = io::read_rgb(tiles_dir / f[col["image"]]);
      const InstanceMap labels = io::read_labels(tiles_dir / f[col["labels"]]);
      if (img.height != labels.height || img.width != labels.width)
        throw ValidationError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                              " and labels " + std::to_string(labels.height) + "x" +
                              std::to_string(labels.width) + " are not aligned");
      const auto rows = patch_starts(img.height, cfg.patch, cfg.stride);
      const auto cols = patch_starts(img.width, cfg.patch, cfg.stride);
      if (rows.empty() || cols.empty()) throw ValidationError("tile is smaller than one patch");
      const std::string tile = fs::path(f[col["image"]]).stem().string();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
          const std::string name = organ + "_" + patient + "_" + tile + "_r" + std::to_string(i) + "_c" +
                                   std::to_string(j) + ".png";
          InstanceMap patch_labels = crop(labels, rows[i], cols[j], cfg.patch, cfg.patch);
          canonicalize(patch_labels);
          ManifestRecord r;
          r.image = out_dir / "images" / name;
          r.instances = out_dir / "labels" / name;
          r.organ = organ;
          r.patient = patient;
          io::write_rgb(r.image, crop(img, rows[i], cols[j], cfg.patch, cfg.patch));
          io::write_labels(r.instances, patch_labels);
          result.manifest.records.push_back(std::move(r));
        }
    } catch (const Error& e) {
      result.errors.push_back(where + ": " + e.what());
    }
  }
  return result;
}

DatasetManifest make_splits(const DatasetManifest& manifest, const SplitConfig& cfg) {
  std::set<std::string> available;
  for (const auto& r : manifest.records)
    if (r.source == Source::Real) available.insert(r.organ);
  const std::set<std::string> train(cfg.train_organs.begin(), cfg.train_organs.end());
  const std::set<std::string> test(cfg.test_organs.begin(), cfg.test_organs.end());
  for (const auto* list : {&train, &test})
    for (const auto& o : *list)
      if (!available.count(o))
        throw ArgumentError("organ '" + o + "' not in manifest; available: " + join(available));
  if (test.empty()) throw ArgumentError("the test organ list is empty");
  if (!(cfg.test_patient_fraction > 0.0 && cfg.test_patient_fraction < 1.0))
    throw ArgumentError("test_patient_fraction must be in (0, 1)");

  // Organs on both lists: hold out the last share of their sorted patients.
  std::set<std::string> test_patients;
  for (const auto& organ : test) {
    if (!train.count(organ)) continue;
    std::set<std::string> patients;
    for (const auto& r : manifest.records)
      if (r.source == Source::Real && r.organ == organ) patients.insert(r.patient);
    if (patients.size() < 2)
      throw ArgumentError("organ '" + organ + "' is on both lists but has fewer than two patients");
    const auto n = static_cast<int>(patients.size());
    const int n_test = std::clamp(static_cast<int>(std::lround(cfg.test_patient_fraction * n)), 1, n - 1);
    auto it = patients.begin();
    std::advance(it, n - n_test);
    for (; it != patients.end(); ++it) test_patients.insert(organ + "\x1f" + *it);
  }

  DatasetManifest out;
  out.config_hash = manifest.config_hash;
  out.created_at = manifest.created_at;
  for (auto r : manifest.records) {
    if (r.source == Source::Synthetic) {
      r.split = Split::Train;
    } else if (train.count(r.organ) && test.count(r.organ)) {
      r.split = test_patients.count(r.organ + "\x1f" + r.patient) ? Split::Test : Split::Train;
    } else if (train.count(r.organ)) {
      r.split = Split::Train;
    } else if (test.count(r.organ)) {
      r.split = Split::Test;
    } else {
      continue;
    }
    out.records.push_back(std::move(r));
  }

  std::map<std::string, std::set<Split>> by_patient;
  bool any_test = false;
  for (const auto& r : out.records) {
    if (r.source == Source::Real) by_patient[r.patient].insert(r.split);
    any_test = any_test || r.split == Split::Test;
  }
  for (const auto& [patient, splits] : by_patient)
    if (splits.size() > 1) throw ValidationError("patient '" + patient + "' spans train and test");
  if (!any_test) throw ValidationError("the test split is empty");
  return out;
}

RGBImage render_overlay(const InstanceMap& gt, const InstanceMap& pred, const RGBImage& img) {
  if (!gt.same_size(pred) || gt.height != img.height || gt.width != img.width || img.channels != 3)
    throw ArgumentError("render_overlay: inputs differ in size");
  static constexpr std::uint8_t kGreen[3] = {0, 255, 0};
  static constexpr std::uint8_t kRed[3] = {255, 0, 0};
  RGBImage out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const bool g = gt.at(y, x) > 0, p = pred.at(y, x) > 0;
      if (!g && !p) continue;
      const std::uint8_t* tint = (g && p) ? kGreen : kRed;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<std::uint8_t>((img.at(y, x, c) + tint[c] + 1) / 2);
    }
  return out;
}

MetricsReport evaluate_dirs(const fs::path& gt_dir, const fs::path& pred_dir) {
  for (const auto& d : {gt_dir, pred_dir})
    if (!fs::is_directory(d)) throw IoError("not a directory: " + d.string());
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file() && io::is_image_path(e.path())) preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  std::vector<ImageMetrics> per_image;
  for (const auto& p : preds) {
    const fs::path g = gt_dir / p.filename();
    if (!fs::exists(g)) throw IoError("no ground truth for prediction " + p.filename().string());
    const std::string name = p.stem().string();
    const std::string organ = name.substr(0, name.find('_'));
    per_image.push_back(evaluate_image(name, organ, io::read_labels(g), io::read_labels(p)));
  }
  return aggregate_metrics(std::move(per_image));
}

std::string metrics_csv(const MetricsReport& report) {
  std::string out = "image,organ,aji,hausdorff,f1,tp,fp,fn\n";
  for (const auto& m : report.per_image)
    out += m.image + "," + m.organ + "," + fmt(m.aji) + "," + fmt(m.hausdorff) + "," + fmt(m.f1) + "," +
           std::to_string(m.tp) + "," + std::to_string(m.fp) + "," + std::to_string(m.fn) + "\n";
  return out;
}

namespace {

json aggregate_json(const MetricsAggregate& a) {
  return json{{"organ", a.organ}, {"n_images", a.n_images}, {"aji", a.aji}, {"hausdorff", a.hausdorff}, {"f1", a.f1}};
}

}  // namespace

std::string metrics_json(const MetricsReport& report) {
  json per_image = json::array(), per_organ = json::array();
  for (const auto& m : report.per_image)
    per_image.push_back(json{{"image", m.image}, {"organ", m.organ}, {"aji", m.aji}, {"hausdorff", m.hausdorff},
                             {"f1", m.f1}, {"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}});
  for (const auto& a : report.per_organ) per_organ.push_back(aggregate_json(a));
  const json doc{{"per_image", per_image},
                 {"per_organ", per_organ},
                 {"overall", aggregate_json(report.overall)},
                 {"overall_rule", "mean over images"}};
  return doc.dump(2) + "\n";
}

void write_metrics(const fs::path& csv_path, const MetricsReport& report) {
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  io::write_file_atomic(csv_path, metrics_csv(report));
  fs::path json_path = csv_path;
  json_path.replace_extension(".json");
  io::write_file_atomic(json_path, metrics_json(report));
}

MetricsReport read_metrics_csv(const fs::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  std::getline(in, line);
  if (line.rfind("image,organ,aji", 0) != 0) throw ValidationError(path.string() + " is not a metrics CSV");
  std::vector<ImageMetrics> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw ValidationError("malformed metrics row: " + line);
    ImageMetrics m;
    m.image = f[0];
    m.organ = f[1];
    m.aji = std::stod(f[2]);
    m.hausdorff = std::stod(f[3]);
    m.f1 = std::stod(f[4]);
    m.tp = std::stoi(f[5]);
    m.fp = std::stoi(f[6]);
    m.fn = std::stoi(f[7]);
    rows.push_back(std::move(m));
  }
  return aggregate_metrics(std::move(rows));
}

std::vector<ReportRow> report_rows(const std::vector<MethodReport>& reports) {
  if (reports.empty()) throw ArgumentError("build_report needs at least one report");
  std::vector<ReportRow> rows;
  for (const auto& mr : reports) {
    auto row = [&](const MetricsAggregate& a) {
      rows.push_back({mr.method, a.organ, a.n_images, a.aji, a.hausdorff, a.f1});
    };
    for (const auto& a : mr.report.per_organ) row(a);
    row(mr.report.overall);
  }
  return rows;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "# overall rows are means over test images, not over organs\n";
  out += "method,organ,n_images,aji,hausdorff,f1\n";
  for (const auto& r : rows)
    out += r.method + "," + r.organ + "," + std::to_string(r.n_images) + "," + fmt(r.aji) + "," +
           fmt(r.hausdorff) + "," + fmt(r.f1) + "\n";
  return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ReportRow> rows;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw ValidationError("malformed report row: " + line);
    rows.push_back({f[0], f[1], std::stoi(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
  }
  return rows;
}

void build_report(const std::vector<MethodReport>& reports, const fs::path& out) {
  const auto rows = report_rows(reports);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  io::write_file_atomic(fs::path(out.string() + ".csv"), report_csv(rows));
  json j = json::array();
  for (const auto& r : rows)
    j.push_back(json{{"method", r.method}, {"organ", r.organ}, {"n_images", r.n_images},
                     {"aji", r.aji}, {"hausdorff", r.hausdorff}, {"f1", r.f1}});
  const json doc{{"rows", j}, {"overall_rule", "mean over images"}};
  io::write_file_atomic(fs::path(out.string() + ".json"), doc.dump(2) + "\n");
}

RGBImage synthesize_toy_he(const InstanceMap& instances, std::uint64_t seed) {
  Rng rng(seed);
  RGBImage img(instances.height, instances.width, 3);
  const int k = instances.max_label();
  std::vector<double> shade(k + 1, 0.0);
  for (int l = 1; l <= k; ++l) shade[l] = rng.uniform(-20.0, 20.0);
  auto put = [&](int y, int x, double r, double g, double b, double noise) {
    const double n = noise * rng.normal();
    img.at(y, x, 0) = static_cast<std::uint8_t>(std::clamp(std::lround(r + n), 0L, 255L));
    img.at(y, x, 1) = static_cast<std::uint8_t>(std::clamp(std::lround(g + n), 0L, 255L));
    img.at(y, x, 2) = static_cast<std::uint8_t>(std::clamp(std::lround(b + n), 0L, 255L));
  };
  for (int y = 0; y < instances.height; ++y)
    for (int x = 0; x < instances.width; ++x) {
      const auto l = instances.at(y, x);
      if (l == 0) {
        put(y, x, 236, 196, 214, 8.0);
        continue;
      }
      bool rim = false;
      for (int dy = -1; dy <= 1 && !rim; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= instances.height || xx >= instances.width) continue;
          if (instances.at(yy, xx) != l) {
            rim = true;
            break;
          }
        }
      const double s = shade[l];
      if (rim)
        put(y, x, 70 + s, 40 + s, 110 + s, 6.0);
      else
        put(y, x, 115 + s, 75 + s, 165 + s, 10.0);
    }
  return img;
}

void make_demo_data(const fs::path& dir, const DemoConfig& cfg) {
  if (cfg.organs.empty() || cfg.patients_per_organ < 1 || cfg.tiles_per_patient < 1)
    throw ArgumentError("demo data needs at least one organ, patient and tile");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  const ShapeDictionary dict = disk_dictionary({5.0, 6.0, 7.0, 8.0, 9.0});
  SamplerParams sp;
  sp.height = sp.width = cfg.tile_size;
  sp.target_count = cfg.nuclei_per_tile;
  sp.placement_grid_cells = std::max(cfg.nuclei_per_tile, 1) * 2;
  std::string csv = "image,labels,organ,patient\n";
  std::uint64_t k = 0;
  for (const auto& organ : cfg.organs)
    for (int p = 0; p < cfg.patients_per_organ; ++p)
      for (int t = 0; t < cfg.tiles_per_patient; ++t, ++k) {
        const std::string patient = organ + "-" + std::to_string(p);
        const std::string name = patient + "-t" + std::to_string(t) + ".png";
        const auto pair = sample_mask(dict, sp, mix_seed(cfg.seed, 2 * k));
        io::write_rgb(dir / "images" / name, synthesize_toy_he(pair.instances, mix_seed(cfg.seed, 2 * k + 1)));
        io::write_labels(dir / "labels" / name, pair.instances);
        csv += "images/" + name + ",labels/" + name + "," + organ + "," + patient + "\n";
      }
  io::write_file_atomic(dir / "tiles.csv", csv);
}

InstanceMap import_polygons(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    InstanceMap map(j.at("height").get<int>(), j.at("width").get<int>());
    std::int32_t label = 0;
    for (const auto& poly : j.at("polygons")) {
      std::vector<double> ys, xs;
      for (const auto& v : poly) {
        xs.push_back(v.at(0).get<double>());
        ys.push_back(v.at(1).get<double>());
      }
      ++label;
      for (const auto& [y, x] : rasterize_polygon(ys, xs, map.height, map.width)) map.at(y, x) = label;
    }
    canonicalize(map);
    return map;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed polygon file: ") + e.what());
  }
}

RunSummary run_all(const RunConfig& cfg, const LogFn& log_fn) {
  auto log = [&](const std::string& s) {
    if (log_fn) log_fn(s);
  };
  if (cfg.splits.train_organs.empty() || cfg.splits.test_organs.empty())
    throw ArgumentError("splits.train_organs and splits.test_organs must both be set");
  const fs::path out(cfg.out_dir);
  fs::create_directories(out);
  io::write_file_atomic(out / "run_config.json", serialize_run_config(cfg));
  RunSummary summary;

  fs::path tiles = cfg.tiles_dir;
  if (tiles.empty()) {
    tiles = out / "demo_tiles";
    log("generating demo tiles in " + tiles.string());
    make_demo_data(tiles, cfg.demo);
  }

  log("extracting patches");
  ExtractResult extracted = extract_patches(tiles, cfg.patches, out / "patches");
  for (const auto& e : extracted.errors) summary.warnings.push_back(e);
  DatasetManifest real = make_splits(extracted.manifest, cfg.splits);

  if (cfg.stain.enabled) {
    fs::path target_path = cfg.stain.target;
    if (target_path.empty()) {
      for (const auto& r : real.records)
        if (r.split == Split::Train) {
          target_path = r.image;
          break;
        }
    }
    log("stain normalization to " + target_path.filename().string());
    const StainFit target = estimate_stain_basis(to_optical_density(io::read_rgb(target_path)), cfg.stain.sparsity,
                                                 cfg.stain.max_iters, cfg.stain.seed);
    fs::create_directories(out / "normalized");
    for (auto& r : real.records) {
      const RGBImage img = io::read_rgb(r.image);
      RGBImage normalized = img;
      try {
        const StainFit fit =
            estimate_stain_basis(to_optical_density(img), cfg.stain.sparsity, cfg.stain.max_iters, cfg.stain.seed);
        normalized = normalize_to_target(img, fit, target.basis);
      } catch (const InsufficientTissueError& e) {
        summary.warnings.push_back(r.image.filename().string() + ": " + e.what());
      }
      r.image = out / "normalized" / r.image.filename();
      io::write_rgb(r.image, normalized);
    }
  }

  std::vector<InstanceMap> train_maps;
  std::vector<std::string> train_organs;
  std::vector<RGBImage> train_images;
  std::vector<SegSample> seg_data;
  for (const auto& r : real.records) {
    if (r.split != Split::Train) continue;
    SegSample s{io::read_rgb(r.image), io::read_labels(r.instances)};
    train_maps.push_back(s.instances);
    train_organs.push_back(r.organ);
    train_images.push_back(s.image);
    seg_data.push_back(std::move(s));
  }
  const ShapeDictionary dict = build_shape_dictionary(train_maps, cfg.profile_resolution, train_organs);
  save_dictionary(out / "dictionary.jsonl", dict);
  log("shape dictionary: " + std::to_string(dict.entries.size()) + " entries");

  log("training the synthesis model");
  train_synth(cfg.synth, train_images, dict, out / "synth_ckpt", [&](const SynthEpochSummary& s) {
    log("synth epoch " + std::to_string(s.epoch + 1) + " cycle_n " + fmt(s.mean.cycle_n));
  });
  const GeneratorBundle bundle = load_generator_bundle(out / "synth_ckpt" / "G.ckpt");
  log("generating " + std::to_string(cfg.synthetic_count) + " synthetic pairs");
  const DatasetManifest synthetic = generate_synthetic_dataset(*bundle.G, bundle.dict, bundle.sampler,
                                                               cfg.synthetic_count, cfg.synthetic_seed,
                                                               out / "synthetic", true, cfg.created_at);
  for (const auto& r : synthetic.records) seg_data.push_back({io::read_rgb(r.image), io::read_labels(r.instances)});

  DatasetManifest manifest = merge_manifests({real, synthetic});
  manifest.config_hash = run_config_hash(cfg);
  manifest.created_at = cfg.created_at;
  validate_manifest(manifest);
  save_manifest(out / "manifest.json", manifest);

  log("training the segmentation model on " + std::to_string(seg_data.size()) + " pairs");
  train_seg(cfg.seg, seg_data, out / "seg_ckpt", [&](const SegEpochSummary& s) {
    log("seg epoch " + std::to_string(s.epoch + 1) + " l1 " + fmt(s.mean.l1));
  });
  auto S = load_checkpoint<float>(out / "seg_ckpt" / "S.ckpt");

  log("segmenting the test split");
  const fs::path pred_dir = out / "predictions";
  for (const char* sub : {"labels", "scores", "overlays"}) fs::create_directories(pred_dir / sub);
  SegmentOptions opt;
  opt.tile = cfg.segment_tile;
  opt.overlap = cfg.segment_overlap;
  opt.min_area = cfg.min_area;
  std::vector<ImageMetrics> per_image;
  for (const auto& r : manifest.records) {
    if (r.split != Split::Test) continue;
    const RGBImage img = io::read_rgb(r.image);
    const InstanceMap gt = io::read_labels(r.instances);
    const Segmentation seg = segment_image(*S, img, opt);
    const std::string name = r.image.filename().string();
    io::write_labels(pred_dir / "labels" / name, seg.instances);
    io::write_gray8(pred_dir / "scores" / name, score_to_gray(seg.score));
    io::write_rgb(pred_dir / "overlays" / name, render_overlay(gt, seg.instances, img));
    per_image.push_back(evaluate_image(r.image.stem().string(), r.organ, gt, seg.instances));
  }
  summary.evaluation = aggregate_metrics(std::move(per_image));
  write_metrics(out / "evaluation.csv", summary.evaluation);
  build_report({{cfg.seg.adversarial ? "cgan" : "l1_only", summary.evaluation}}, out / "report");
  log("overall aji " + fmt(summary.evaluation.overall.aji) + " f1 " + fmt(summary.evaluation.overall.f1));
  summary.manifest = std::move(manifest);
  return summary;
}

}  // namespace nucleigan
