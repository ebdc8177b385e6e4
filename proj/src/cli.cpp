#include "patchforge/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "patchforge/dataset.hpp"
#include "patchforge/error.hpp"
#include "patchforge/evaluation.hpp"
#include "patchforge/sampling.hpp"
#include "patchforge/synthetic.hpp"
#include "patchforge/trainer.hpp"

namespace patchforge {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "Run configuration file (JSON)")->required();
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. --set attack.lr=0.01");
  cmd->add_option("-o,--out", o.out, "Output directory (default: output_dir from the config)");
}

RunConfig resolve_config(const CommonOptions& o, std::optional<std::uint64_t> seed = std::nullopt) {
  RunConfig cfg = load_run_config(o.config);
  if (seed) apply_override(cfg, "attack.seed=" + std::to_string(*seed));
  for (const auto& a : o.overrides) apply_override(cfg, a);
  if (!o.out.empty()) cfg.output_dir = fs::absolute(o.out);
  check_run_paths(cfg);
  return cfg;
}

Detector load_detector(const DetectorSpec& spec) {
  return Detector::load(spec.handle(), spec.cfg, spec.weights, spec.names);
}

GuideImage load_guide(const fs::path& path) {
  Image img = load_image(path);
  if (img.channels() != 3) throw Error(ErrorCategory::data, "guide image must have 3 channels: " + path.string());
  return GuideImage{std::move(img)};
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::io, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCategory::io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCategory::io, "failed writing " + path.string());
}

std::string dataset_description(const RunConfig& cfg) {
  if (cfg.dataset.images.empty()) {
    return "synthetic count=" + std::to_string(cfg.dataset.synthetic_count) +
           " seed=" + std::to_string(cfg.dataset.synthetic_seed);
  }
  return cfg.dataset.images_dir().string();
}

void write_manifest(const RunConfig& cfg, const Detector& det, const std::string& command, std::size_t n_scenes) {
  const std::string effective = run_config_to_json(cfg);
  json m;
  m["command"] = command;
  m["config_sha256"] = sha256_hex(effective);
  m["seed"] = cfg.attack.seed;
  m["detector"] = {{"name", det.handle().name}, {"weights", cfg.detector.weights.string()},
                   {"weights_sha256", det.fingerprint()}};
  m["guide_image_sha256"] = sha256_file(cfg.guide_image);
  m["dataset"] = {{"source", dataset_description(cfg)}, {"scenes", n_scenes}};
  m["checkpoint_version"] = kCheckpointVersion;
  write_text(cfg.output_dir / "effective_config.json", effective + "\n");
  write_text(cfg.output_dir / "manifest.json", m.dump(2) + "\n");
}

// Keeps the header and every record with step < next_step.
void truncate_loss_log(const fs::path& path, long long next_step) {
  std::ifstream in(path);
  std::string kept = loss_log_header() + "\n";
  if (in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto a = line.find(',');
      const auto b = a == std::string::npos ? a : line.find(',', a + 1);
      if (b == std::string::npos) continue;
      if (std::stoll(line.substr(a + 1, b - a - 1)) < next_step) kept += line + "\n";
    }
  }
  write_text(path, kept);
}

DefenseConfig parse_defense(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCategory::usage, "defense '" + text + "' must look like kind:param, e.g. jpeg:50");
  }
  std::string kind = text.substr(0, colon);
  if (kind == "noise") kind = "gaussian_noise";
  if (kind == "median") kind = "median_blur";
  DefenseConfig d;
  d.kind = parse_defense_kind(kind);
  try {
    d.param = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw Error(ErrorCategory::usage, "defense '" + text + "' has a non-numeric parameter");
  }
  d.validate();
  return d;
}

// "none", "kind:param", a kind name for its whole grid, or "all".
std::vector<std::optional<DefenseConfig>> parse_defense_axis(const std::vector<std::string>& items) {
  std::vector<std::optional<DefenseConfig>> out;
  for (const auto& item : items) {
    if (item == "none") {
      out.emplace_back(std::nullopt);
    } else if (item == "all") {
      for (auto k : {DefenseKind::jpeg, DefenseKind::gaussian_noise, DefenseKind::median_blur})
        for (const auto& d : defense_grid(k)) out.emplace_back(d);
    } else if (item.find(':') == std::string::npos) {
      std::string kind = item == "noise" ? "gaussian_noise" : item == "median" ? "median_blur" : item;
      for (const auto& d : defense_grid(parse_defense_kind(kind))) out.emplace_back(d);
    } else {
      out.emplace_back(parse_defense(item));
    }
  }
  return out;
}

// NAME:CFG:WEIGHTS[:NAMES[:PERSON_INDEX]]
DetectorSpec parse_detector_spec(const std::string& text, const DetectorSpec& base) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() < 3 || parts.size() > 5) {
    throw Error(ErrorCategory::usage, "detector '" + text + "' must look like NAME:CFG:WEIGHTS[:NAMES[:PERSON_INDEX]]");
  }
  DetectorSpec s = base;
  s.name = parts[0];
  s.cfg = parts[1];
  s.weights = parts[2];
  s.names = parts.size() > 3 ? fs::path(parts[3]) : fs::path();
  if (parts.size() > 4) s.person_class_index = std::stoi(parts[4]);
  return s;
}

TransformStack make_stack(const RunConfig& cfg, std::optional<double> scale, bool eot, bool creases) {
  TransformStack stack;
  stack.render = cfg.attack.render;
  if (scale) stack.render.scale = *scale;
  if (eot) stack.eot = cfg.attack.eot;
  if (creases) stack.creases = cfg.attack.creases;
  stack.seed = cfg.attack.seed;
  return stack;
}

void print_epoch(const TrainLogRecord& rec, int epochs) {
  std::fprintf(stderr, "epoch %d/%d  step %d  l_det %.5f  l_sim %.5f  l_tv %.3f  l_total %.5f\n", rec.epoch + 1,
               epochs, rec.step, rec.breakdown.l_det, rec.breakdown.l_sim, rec.breakdown.l_tv, rec.breakdown.l_total);
}

struct AttackOptions {
  CommonOptions common;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  long long stop_at_step = -1;
  bool quiet = false;
};

int cmd_attack(const AttackOptions& o) {
  const RunConfig cfg = resolve_config(o.common, o.seed);
  const fs::path out = cfg.output_dir;
  make_dirs(out);
  const Detector det = load_detector(cfg.detector);
  const std::vector<Scene> scenes = load_scenes(cfg);
  const GuideImage guide = load_guide(cfg.guide_image);
  const fs::path ckpt = out / "patch.ckpt";
  const fs::path log_path = out / "loss_log.csv";

  TrainState state;
  if (o.resume && fs::exists(ckpt)) {
    state = load_checkpoint(ckpt);
    if (!(state.config == cfg.attack)) {
      throw Error(ErrorCategory::usage, "checkpoint " + ckpt.string() + " was written with a different attack config");
    }
    truncate_loss_log(log_path, state.next_step);
  } else {
    state = initial_state(guide, cfg.attack);
    write_text(log_path, loss_log_header() + "\n");
  }
  write_manifest(cfg, det, "attack", scenes.size());

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw Error(ErrorCategory::io, "cannot append to " + log_path.string());
  const int per_epoch = steps_per_epoch(scenes.size(), cfg.attack.batch_size);
  const long long total = static_cast<long long>(per_epoch) * cfg.attack.epochs;
  const long long limit = o.stop_at_step >= 0 ? std::min(total, o.stop_at_step) : total;

  while (state.next_step < limit) {
    TrainControl ctl;
    ctl.stop_at_step = std::min((state.next_step / per_epoch + 1) * per_epoch, limit);
    TrainLogRecord last;
    ctl.on_step = [&](const TrainLogRecord& rec) {
      log << format_loss_record(rec) << "\n";
      last = rec;
    };
    TrainResult r = optimize_patch(scenes, det, guide, std::move(state), ctl);
    state = std::move(r.state);
    log.flush();
    save_checkpoint(state, ckpt);
    save_png(state.patch.pixels, out / "patch.png");
    if (!o.quiet) print_epoch(last, cfg.attack.epochs);
  }
  save_checkpoint(state, ckpt);
  save_png(state.patch.pixels, out / "patch.png");
  if (!o.quiet) {
    std::fprintf(stderr, "%s after %lld of %lld steps: %s\n", state.next_step >= total ? "finished" : "stopped",
                 state.next_step, total, (out / "patch.png").string().c_str());
  }
  return 0;
}

struct EvalOptionsCli {
  CommonOptions common;
  std::string patch;
  std::string defense;
  std::optional<double> scale;
  bool eot = false;
  bool creases = false;
  bool dump = false;
};

int cmd_eval(const EvalOptionsCli& o) {
  const RunConfig cfg = resolve_config(o.common);
  const fs::path reports = cfg.output_dir / "reports";
  make_dirs(reports);
  const Detector det = load_detector(cfg.detector);
  const std::vector<Scene> scenes = load_scenes(cfg);
  std::optional<PatchImage> patch;
  if (!o.patch.empty()) patch = load_patch(o.patch);
  std::optional<DefenseConfig> defense;
  if (!o.defense.empty()) defense = parse_defense(o.defense);

  const GroundTruth truth = build_ground_truth(det, scenes, cfg.detector.iou_nms);
  const EvalReport report = evaluate_map(det, scenes, truth, patch ? &*patch : nullptr,
                                         make_stack(cfg, o.scale, o.eot, o.creases), defense,
                                         EvalOptions{cfg.detector.iou_nms, o.dump});
  const std::vector<EvalReport> all{report};
  write_reports_csv(all, reports / "eval.csv");
  write_text(reports / "eval_summary.txt", summary_table(all));
  write_text(reports / "pr_curve.svg",
             svg_line_chart("precision-recall, " + report.detector_name, "recall", "precision", report.pr_curve, 1, 1));
  if (o.dump) {
    std::string text;
    for (std::size_t i = 0; i < report.detections.size(); ++i) {
      text += format_detections(std::to_string(i), report.detections[i], det.handle().person_class_index,
                                det.handle().input_size);
    }
    write_text(reports / "detections.txt", text);
  }
  std::cout << summary_table(all);
  return 0;
}

struct SweepOptionsCli {
  CommonOptions common;
  std::string patch;
  std::vector<double> scales;
  bool creases_axis = false;
  std::vector<std::string> defenses;
  std::vector<std::string> detectors;
  bool eot = false;
};

int cmd_sweep(const SweepOptionsCli& o) {
  const RunConfig cfg = resolve_config(o.common);
  const fs::path reports = cfg.output_dir / "reports";
  make_dirs(reports);
  std::vector<Detector> dets;
  dets.push_back(load_detector(cfg.detector));
  for (const auto& d : o.detectors) dets.push_back(load_detector(parse_detector_spec(d, cfg.detector)));
  std::vector<const Detector*> ptrs;
  for (const auto& d : dets) ptrs.push_back(&d);
  const std::vector<Scene> scenes = load_scenes(cfg);
  std::optional<PatchImage> patch;
  if (!o.patch.empty()) patch = load_patch(o.patch);

  SweepAxes axes;
  axes.scales = o.scales;
  if (o.creases_axis) axes.creases = {false, true};
  axes.defenses = parse_defense_axis(o.defenses);
  CreaseFieldConfig on = cfg.attack.creases;
  if (on.creases_max <= 0) on = CreaseFieldConfig{1, 5, cfg.attack.seed};
  const TransformStack base = make_stack(cfg, std::nullopt, o.eot, false);
  const auto results = sweep(ptrs, scenes, patch ? &*patch : nullptr, base, axes, on, EvalOptions{cfg.detector.iou_nms});

  write_reports_csv(results, reports / "sweep.csv");
  write_text(reports / "sweep_summary.txt", summary_table(results));
  if (o.scales.size() > 1) {
    std::vector<std::pair<double, double>> curve;
    double x_max = 0;
    for (const auto& r : results) {
      if (r.detector_name == dets.front().handle().name && !r.creases && !r.defense) {
        curve.emplace_back(r.scale, r.map_50);
        x_max = std::max(x_max, r.scale);
      }
    }
    write_text(reports / "sweep_scale.svg", svg_line_chart("mAP vs patch scale", "scale", "mAP@0.5 (%)", curve,
                                                            x_max, 100));
  }
  std::cout << summary_table(results);
  return 0;
}

struct PreviewOptions {
  CommonOptions common;
  std::string patch;
  int count = 8;
};

int cmd_preview(const PreviewOptions& o) {
  const RunConfig cfg = resolve_config(o.common);
  const fs::path dir = cfg.output_dir / "previews";
  make_dirs(dir);
  const std::vector<Scene> scenes = load_scenes(cfg);
  const PatchImage patch =
      o.patch.empty() ? initial_patch(load_guide(cfg.guide_image), cfg.attack) : load_patch(o.patch);
  const PatchDims dims{patch.width(), patch.height()};
  const int n = std::min<int>(o.count, static_cast<int>(scenes.size()));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::derive(cfg.attack.seed, {static_cast<std::uint64_t>(i)});
    const SampledTransform t = sample_transform(cfg.attack.eot, cfg.attack.creases, dims, rng);
    const RenderResult r = render(scenes[i], patch, t, cfg.attack.render);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "preview_%03d", i);
    save_png(r.scene.image, dir / (std::string(stem) + ".png"));
    write_text(dir / (std::string(stem) + ".txt"), "# x0 y0 side box_index; " + t.describe() +
                                                       "; skipped " + std::to_string(r.skipped) + "\n" +
                                                       describe_rects(r));
  }
  std::cout << "wrote " << n << " previews to " << dir.string() << "\n";
  return 0;
}

struct ExportOptions {
  std::string patch;
  double dpi = 300;
  double width_cm = 20.5;
  double height_cm = 21.5;
  std::string out = "patch_print.png";
};

int cmd_export(const ExportOptions& o) {
  if (!(o.dpi > 0) || !(o.width_cm > 0) || !(o.height_cm > 0)) {
    throw Error(ErrorCategory::usage, "--dpi, --width-cm and --height-cm must be positive");
  }
  const PatchImage patch = load_patch(o.patch);
  const int w = print_pixels(o.width_cm, o.dpi);
  const int h = print_pixels(o.height_cm, o.dpi);
  Image out = resize_bilinear(patch.pixels, h, w);
  out.clamp();
  save_png(out, o.out);
  std::cout << o.out << ": " << w << "x" << h << " px (" << o.width_cm << " x " << o.height_cm << " cm at "
            << o.dpi << " dpi)\n";
  return 0;
}

}  // namespace

std::vector<Scene> load_scenes(const RunConfig& cfg) {
  if (cfg.dataset.images.empty()) {
    return make_synthetic_dataset(cfg.dataset.synthetic_count, cfg.dataset.synthetic_seed);
  }
  IngestResult r = ingest_dataset(cfg.dataset.images_dir(), cfg.dataset.labels_dir(), cfg.detector.input_size);
  if (r.skipped > 0) std::cerr << "warning: " << r.skipped << " unreadable images skipped\n";
  if (r.scenes.empty()) throw Error(ErrorCategory::data, "no images found in " + cfg.dataset.images_dir().string());
  return std::move(r.scenes);
}

PatchImage load_patch(const fs::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(ErrorCategory::io, "cannot read patch: " + path.string());
  char magic[4] = {};
  probe.read(magic, 4);
  if (probe.gcount() == 4 && std::string(magic, 4) == "PFCK") return load_checkpoint(path).patch;
  PatchImage p{load_image(path)};
  if (p.pixels.channels() != 3) throw Error(ErrorCategory::data, "patch image must have 3 channels: " + path.string());
  return p;
}

int print_pixels(double cm, double dpi) { return static_cast<int>(std::lround(cm / 2.54 * dpi)); }

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Adversarial patch optimization and evaluation against one-stage person detectors", "patchforge"};
  app.require_subcommand(1);

  AttackOptions attack;
  auto* a = app.add_subcommand("attack", "Optimize a patch against the configured detector");
  add_common(a, attack.common);
  a->add_option("--seed", attack.seed, "Seed for patch init, shuffling and transforms");
  a->add_flag("--resume", attack.resume, "Continue from <out>/patch.ckpt if present");
  a->add_option("--stop-at-step", attack.stop_at_step, "Stop after this many global steps");
  a->add_flag("-q,--quiet", attack.quiet, "No progress output");

  EvalOptionsCli eval;
  auto* e = app.add_subcommand("eval", "mAP@0.5, ASR and recall against clean-detection ground truth");
  add_common(e, eval.common);
  e->add_option("--patch", eval.patch, "Patch PNG or checkpoint (omit for a clean run)");
  e->add_option("--defense", eval.defense, "Input transformation, e.g. jpeg:50, noise:0.05, median:11");
  e->add_option("--scale", eval.scale, "Patch scale (default: attack.render.scale)");
  e->add_flag("--eot", eval.eot, "Apply the configured EOT distortions per image");
  e->add_flag("--creases", eval.creases, "Apply the configured crease field per image");
  e->add_flag("--dump-detections", eval.dump, "Write reports/detections.txt");

  SweepOptionsCli sw;
  auto* s = app.add_subcommand("sweep", "Evaluation grid over detectors, scales, creases and defenses");
  add_common(s, sw.common);
  s->add_option("--patch", sw.patch, "Patch PNG or checkpoint");
  s->add_option("--scales", sw.scales, "Scale axis, e.g. 0.3,0.4,0.5,0.6")->delimiter(',');
  s->add_flag("--creases-axis", sw.creases_axis, "Evaluate with and without creases");
  s->add_option("--defenses", sw.defenses, "none, kind:param, a kind (whole grid) or all")->delimiter(',');
  s->add_option("--detector", sw.detectors, "Extra detector NAME:CFG:WEIGHTS[:NAMES[:PERSON_INDEX]]");
  s->add_flag("--eot", sw.eot, "Apply the configured EOT distortions per image");

  PreviewOptions pv;
  auto* p = app.add_subcommand("render-preview", "Write patched sample images with paste rectangles");
  add_common(p, pv.common);
  p->add_option("--patch", pv.patch, "Patch PNG or checkpoint (default: the initial patch)");
  p->add_option("-n,--count", pv.count, "Number of previews")->check(CLI::PositiveNumber);

  ExportOptions ex;
  auto* x = app.add_subcommand("export-patch", "Print-ready PNG at a physical size and DPI");
  x->add_option("--patch", ex.patch, "Patch PNG or checkpoint")->required();
  x->add_option("--dpi", ex.dpi, "Dots per inch");
  x->add_option("--width-cm", ex.width_cm, "Printed width in cm");
  x->add_option("--height-cm", ex.height_cm, "Printed height in cm");
  x->add_option("-o,--out", ex.out, "Output PNG");

  std::vector<const char*> argv{"patchforge"};
  for (const auto& s_arg : args) argv.push_back(s_arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return static_cast<int>(ErrorCategory::usage);
  }

  try {
    if (a->parsed()) return cmd_attack(attack);
    if (e->parsed()) return cmd_eval(eval);
    if (s->parsed()) return cmd_sweep(sw);
    if (p->parsed()) return cmd_preview(pv);
    if (x->parsed()) return cmd_export(ex);
  } catch (const Error& err) {
    std::cerr << "error [" << to_string(err.category()) << "]: " << err.what() << "\n";
    return err.exit_code();
  } catch (const std::exception& err) {
    std::cerr << "error [internal]: " << err.what() << "\n";
    return static_cast<int>(ErrorCategory::internal);
  }
  return static_cast<int>(ErrorCategory::usage);
}

}  // namespace patchforge
