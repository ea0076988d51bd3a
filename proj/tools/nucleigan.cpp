// Command-line front end. Every verb exits 0 on success; failures print one
// JSON object {"error": <kind>, "message": <text>} on stderr.
#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "nucleigan/checkpoint.hpp"
#include "nucleigan/errors.hpp"
#include "nucleigan/image_io.hpp"
#include "nucleigan/mask_synth.hpp"
#include "nucleigan/pipeline.hpp"
#include "nucleigan/rng.hpp"
#include "nucleigan/stain_norm.hpp"
#include "nucleigan/train_seg.hpp"
#include "nucleigan/train_synth.hpp"

namespace fs = std::filesystem;
using namespace nucleigan;

namespace {

int fail(const std::string& kind, const std::string& message, int code = 1) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << "\n";
  return code;
}

void log_line(const std::string& s) { std::cout << s << std::endl; }

std::vector<fs::path> image_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && io::is_image_path(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<fs::path> inputs_of(const fs::path& p) {
  if (fs::is_directory(p)) return image_files(p);
  return {p};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic nuclei data generation and adversarial nuclei segmentation"};
  app.require_subcommand(1);

  // stain-normalize
  auto* stain = app.add_subcommand("stain-normalize", "Recolor images to a target image's stain basis");
  std::string stain_target, stain_in, stain_out;
  double stain_sparsity = 0.1;
  std::uint64_t stain_seed = 0;
  stain->add_option("--target", stain_target, "Target image")->required();
  stain->add_option("--input-dir", stain_in, "Directory of source images")->required();
  stain->add_option("--output-dir", stain_out, "Output directory")->required();
  stain->add_option("--sparsity", stain_sparsity, "Density sparsity weight");
  stain->add_option("--seed", stain_seed, "Seed");

  // build-dict
  auto* dict_cmd = app.add_subcommand("build-dict", "Build a nucleus shape dictionary from label maps");
  std::string dict_labels, dict_out, dict_organ;
  int dict_res = 16;
  dict_cmd->add_option("--labels", dict_labels, "Directory of 16-bit label PNGs")->required();
  dict_cmd->add_option("--out", dict_out, "Dictionary file")->required();
  dict_cmd->add_option("--organ", dict_organ, "Organ tag; default: filename prefix before '_'");
  dict_cmd->add_option("--resolution", dict_res, "Radial profile resolution");

  // synth-masks
  auto* masks = app.add_subcommand("synth-masks", "Sample random polygon nucleus masks");
  std::string masks_dict, masks_out;
  int masks_count = 1, masks_canvas = 256;
  std::uint64_t masks_seed = 0;
  SamplerParams sampler;
  masks->add_option("--dict", masks_dict, "Dictionary file")->required();
  masks->add_option("--count", masks_count, "Number of masks")->required();
  masks->add_option("--canvas", masks_canvas, "Canvas size");
  masks->add_option("--seed", masks_seed, "Seed");
  masks->add_option("--out", masks_out, "Output directory")->required();
  masks->add_option("--target-count", sampler.target_count, "Nuclei per mask");
  masks->add_option("--size-jitter", sampler.size_jitter);
  masks->add_option("--shape-jitter", sampler.shape_jitter);
  masks->add_option("--clump-fraction", sampler.clump_fraction);
  masks->add_option("--max-overlap", sampler.max_overlap);
  masks->add_option("--grid-cells", sampler.placement_grid_cells);

  // train-synth
  auto* tsynth = app.add_subcommand("train-synth", "Train the mask-to-H&E cycle model");
  std::string tsynth_cfg, tsynth_real, tsynth_dict, tsynth_out;
  tsynth->add_option("--config", tsynth_cfg, "Run config (its 'synth' section is used)")->required();
  tsynth->add_option("--real-dir", tsynth_real, "Directory of real H&E patches")->required();
  tsynth->add_option("--dict", tsynth_dict, "Dictionary file")->required();
  tsynth->add_option("--out", tsynth_out, "Checkpoint directory")->required();

  // generate-synth
  auto* gen = app.add_subcommand("generate-synth", "Generate a paired synthetic dataset");
  std::string gen_ckpt, gen_out, gen_created = "1970-01-01T00:00:00Z";
  int gen_count = 0;
  std::uint64_t gen_seed = 0;
  bool gen_overwrite = false;
  gen->add_option("--ckpt", gen_ckpt, "Generator checkpoint (G.ckpt)")->required();
  gen->add_option("--count", gen_count, "Number of pairs")->required();
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--created-at", gen_created, "Timestamp recorded in the manifest");
  gen->add_flag("--overwrite", gen_overwrite, "Allow writing into an existing dataset");

  // train-seg
  auto* tseg = app.add_subcommand("train-seg", "Train the adversarial segmenter");
  std::string tseg_cfg, tseg_out;
  std::vector<std::string> tseg_data;
  tseg->add_option("--config", tseg_cfg, "Run config (its 'seg' section is used)")->required();
  tseg->add_option("--data", tseg_data, "Manifests; train-split records are used")->required();
  tseg->add_option("--out", tseg_out, "Checkpoint directory")->required();

  // segment
  auto* seg = app.add_subcommand("segment", "Segment images with a trained segmenter");
  std::string seg_ckpt, seg_input, seg_out, seg_stain;
  SegmentOptions seg_opt;
  seg->add_option("--ckpt", seg_ckpt, "Segmenter checkpoint (S.ckpt)")->required();
  seg->add_option("--input", seg_input, "Image or directory")->required();
  seg->add_option("--out", seg_out, "Output directory")->required();
  seg->add_option("--tile", seg_opt.tile, "Tile size");
  seg->add_option("--overlap", seg_opt.overlap, "Tile overlap");
  seg->add_option("--min-area", seg_opt.min_area, "Minimum instance area");
  seg->add_option("--stain-target", seg_stain, "Normalize inputs to this image's stain basis first");

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score predicted label maps against ground truth");
  std::string eval_gt, eval_pred, eval_out;
  eval->add_option("--gt", eval_gt, "Ground-truth label directory")->required();
  eval->add_option("--pred", eval_pred, "Predicted label directory")->required();
  eval->add_option("--out", eval_out, "Output CSV (a JSON twin is written alongside)")->required();

  // report
  auto* rep = app.add_subcommand("report", "Aggregate evaluation CSVs into a per-organ table");
  std::vector<std::string> rep_inputs, rep_methods;
  std::string rep_out;
  rep->add_option("--input", rep_inputs, "Evaluation CSVs")->required();
  rep->add_option("--method", rep_methods, "Method name per input");
  rep->add_option("--out", rep_out, "Output path without extension")->required();

  // run-all
  auto* run = app.add_subcommand("run-all", "Run the full pipeline from a run config");
  std::string run_cfg, run_out;
  run->add_option("--config", run_cfg, "Run config")->required();
  run->add_option("--out", run_out, "Override the output directory");

  // make-demo-data
  auto* demo = app.add_subcommand("make-demo-data", "Write toy annotated tiles");
  std::string demo_out, demo_cfg;
  demo->add_option("--out", demo_out, "Output directory")->required();
  demo->add_option("--config", demo_cfg, "Run config whose 'demo' section is used");

  // import-polygons
  auto* poly = app.add_subcommand("import-polygons", "Rasterize polygon annotations to a label PNG");
  std::string poly_in, poly_out;
  poly->add_option("--input", poly_in, "Polygon JSON")->required();
  poly->add_option("--out", poly_out, "16-bit label PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*stain) {
      const StainFit target = estimate_stain_basis(to_optical_density(io::read_rgb(stain_target)),
                                                   stain_sparsity, 200, stain_seed);
      fs::create_directories(stain_out);
      int done = 0;
      for (const auto& f : image_files(stain_in)) {
        const RGBImage img = io::read_rgb(f);
        const StainFit fit = estimate_stain_basis(to_optical_density(img), stain_sparsity, 200, stain_seed);
        io::write_rgb(fs::path(stain_out) / f.filename(), normalize_to_target(img, fit, target.basis));
        ++done;
      }
      log_line("normalized " + std::to_string(done) + " images");
    } else if (*dict_cmd) {
      std::vector<InstanceMap> maps;
      std::vector<std::string> organs;
      for (const auto& f : image_files(dict_labels)) {
        maps.push_back(io::read_labels(f));
        const std::string stem = f.stem().string();
        organs.push_back(dict_organ.empty() ? stem.substr(0, stem.find('_')) : dict_organ);
      }
      const ShapeDictionary d = build_shape_dictionary(maps, dict_res, organs);
      save_dictionary(dict_out, d);
      log_line("wrote " + std::to_string(d.entries.size()) + " entries");
    } else if (*masks) {
      const ShapeDictionary d = load_dictionary(masks_dict);
      sampler.height = sampler.width = masks_canvas;
      const fs::path out(masks_out);
      fs::create_directories(out / "labels");
      fs::create_directories(out / "renders");
      int warnings = 0;
      for (int i = 0; i < masks_count; ++i) {
        const auto pair = sample_mask(d, sampler, mix_seed(masks_seed, static_cast<std::uint64_t>(i)));
        warnings += pair.warning;
        char name[32];
        std::snprintf(name, sizeof name, "mask_%06d.png", i);
        io::write_labels(out / "labels" / name, pair.instances);
        const RGBImage render = render_mask_image(pair);
        Image<std::uint8_t> gray(render.height, render.width, 1);
        for (std::size_t k = 0; k < gray.pixels.size(); ++k) gray.pixels[k] = render.pixels[3 * k];
        io::write_gray8(out / "renders" / name, gray);
      }
      log_line("wrote " + std::to_string(masks_count) + " masks" +
               (warnings ? " (" + std::to_string(warnings) + " below target count)" : ""));
    } else if (*tsynth) {
      const RunConfig cfg = load_run_config(tsynth_cfg);
      std::vector<RGBImage> reals;
      for (const auto& f : image_files(tsynth_real)) reals.push_back(io::read_rgb(f));
      train_synth(cfg.synth, reals, load_dictionary(tsynth_dict), tsynth_out, [](const SynthEpochSummary& s) {
        log_line("epoch " + std::to_string(s.epoch + 1) + " lr " + std::to_string(s.lr) + " cycle_n " +
                 std::to_string(s.mean.cycle_n) + " disc_n " + std::to_string(s.mean.disc_n));
      });
    } else if (*gen) {
      const GeneratorBundle b = load_generator_bundle(gen_ckpt);
      const auto m = generate_synthetic_dataset(*b.G, b.dict, b.sampler, gen_count, gen_seed, gen_out,
                                                gen_overwrite, gen_created);
      log_line("generated " + std::to_string(m.records.size()) + " pairs");
    } else if (*tseg) {
      const RunConfig cfg = load_run_config(tseg_cfg);
      std::vector<SegSample> data;
      for (const auto& path : tseg_data) {
        const DatasetManifest m = load_manifest(path);
        validate_manifest(m);
        for (const auto& r : m.records)
          if (r.split == Split::Train) data.push_back({io::read_rgb(r.image), io::read_labels(r.instances)});
      }
      train_seg(cfg.seg, data, tseg_out, [](const SegEpochSummary& s) {
        log_line("epoch " + std::to_string(s.epoch + 1) + " l1 " + std::to_string(s.mean.l1) + " disc " +
                 std::to_string(s.mean.disc));
      });
    } else if (*seg) {
      auto S = load_checkpoint<float>(seg_ckpt);
      if (!seg_stain.empty())
        seg_opt.stain_target = estimate_stain_basis(to_optical_density(io::read_rgb(seg_stain))).basis;
      const fs::path out(seg_out);
      fs::create_directories(out / "labels");
      fs::create_directories(out / "scores");
      for (const auto& f : inputs_of(seg_input)) {
        const Segmentation s = segment_image(*S, io::read_rgb(f), seg_opt);
        const std::string name = f.stem().string() + ".png";
        io::write_labels(out / "labels" / name, s.instances);
        io::write_gray8(out / "scores" / name, score_to_gray(s.score));
      }
    } else if (*eval) {
      const MetricsReport r = evaluate_dirs(eval_gt, eval_pred);
      write_metrics(eval_out, r);
      log_line("images " + std::to_string(r.per_image.size()) + " aji " + std::to_string(r.overall.aji) +
               " hausdorff " + std::to_string(r.overall.hausdorff) + " f1 " + std::to_string(r.overall.f1));
    } else if (*rep) {
      if (!rep_methods.empty() && rep_methods.size() != rep_inputs.size())
        throw ArgumentError("give one --method per --input");
      std::vector<MethodReport> reports;
      for (std::size_t i = 0; i < rep_inputs.size(); ++i)
        reports.push_back({rep_methods.empty() ? fs::path(rep_inputs[i]).stem().string() : rep_methods[i],
                           read_metrics_csv(rep_inputs[i])});
      build_report(reports, rep_out);
    } else if (*run) {
      RunConfig cfg = load_run_config(run_cfg);
      if (!run_out.empty()) cfg.out_dir = run_out;
      const RunSummary s = run_all(cfg, log_line);
      for (const auto& w : s.warnings) std::cerr << nlohmann::json{{"warning", w}}.dump() << "\n";
    } else if (*demo) {
      const RunConfig cfg = demo_cfg.empty() ? RunConfig{} : load_run_config(demo_cfg);
      make_demo_data(demo_out, cfg.demo);
    } else if (*poly) {
      io::write_labels(poly_out, import_polygons(io::read_file(poly_in)));
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
