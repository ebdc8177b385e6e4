// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "patchforge/cli.hpp"
#include "patchforge/creases.hpp"
#include "patchforge/detector.hpp"
#include "patchforge/eot.hpp"
#include "patchforge/evaluation.hpp"
#include "patchforge/patch_core.hpp"
#include "patchforge/renderer.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/synthetic.hpp"
#include "patchforge/trainer.hpp"

using namespace patchforge;
namespace fs = std::filesystem;

namespace {

const fs::path kDataDir = PATCHFORGE_DATA_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs > limit_s) {
    o.pass = false;
    o.detail += " (over the " + std::to_string(static_cast<int>(limit_s)) + " s budget)";
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %-34s %s  [%.2f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

double rel_err(double a, double f) { return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6}); }

Image random_image(int h, int w, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Image img(h, w, 3);
  for (auto& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

const Detector& toy() {
  static const Detector d = Detector::load(DetectorHandle{"toy", 0, 0.5, 416}, kDataDir / "toy_detector.cfg",
                                           kDataDir / "toy_detector.weights", kDataDir / "toy_detector.names");
  return d;
}

GuideImage guide() { return GuideImage{load_image(kDataDir / "guide.png")}; }

// ---- desk-scale attack shared by criteria 6 to 8 ----

constexpr int kTrainScenes = 40;
constexpr std::uint64_t kTrainSeed = 7;
constexpr std::uint64_t kEvalSeed = 8;
constexpr int kEvalScenes = 200;
constexpr int kSteps = 200;

AttackConfig desk_config(double scale, bool creases) {
  AttackConfig cfg;
  cfg.render.scale = scale;
  cfg.weights = {1.0, 0.0, 0.0};
  cfg.lr = 0.01;
  cfg.batch_size = 8;
  cfg.epochs = kSteps / steps_per_epoch(kTrainScenes, cfg.batch_size);
  cfg.seed = 11;
  cfg.eot.rng_seed = 11;
  cfg.creases = creases ? CreaseFieldConfig{1, 5, 11} : CreaseFieldConfig::none();
  return cfg;
}

const std::vector<Scene>& train_scenes() {
  static const auto s = make_synthetic_dataset(kTrainScenes, kTrainSeed);
  return s;
}

const std::vector<Scene>& eval_scenes() {
  static const auto s = make_synthetic_dataset(kEvalScenes, kEvalSeed);
  return s;
}

const GroundTruth& eval_truth() {
  static const auto t = build_ground_truth(toy(), eval_scenes());
  return t;
}

struct TrainedPatch {
  PatchImage initial;
  TrainResult result;
  double seconds = 0;
};

// One patch per (training scale, crease augmentation), trained on first use.
const TrainedPatch& trained(double scale, bool creases) {
  static std::map<std::pair<double, bool>, TrainedPatch> cache;
  auto& slot = cache[{scale, creases}];
  if (slot.initial.pixels.empty()) {
    const auto t0 = std::chrono::steady_clock::now();
    const AttackConfig cfg = desk_config(scale, creases);
    TrainedPatch tp;
    tp.initial = initial_patch(guide(), cfg);
    tp.result = optimize_patch(train_scenes(), toy(), guide(), cfg);
    tp.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    slot = std::move(tp);
  }
  return slot;
}

// Detection loss over the whole training set, one fixed transform per scene.
double dataset_detection_loss(const PatchImage& patch, const AttackConfig& cfg) {
  std::vector<std::vector<Detection>> selected;
  const PatchDims dims{patch.width(), patch.height()};
  for (std::size_t i = 0; i < train_scenes().size(); ++i) {
    Rng rng = Rng::derive(99, {i});
    const auto t = sample_transform(cfg.eot, cfg.creases, dims, rng);
    const auto r = render(train_scenes()[i], patch, t, cfg.render);
    selected.push_back(select_attack_targets(toy().predict(r.scene.image), toy().handle()));
  }
  return detection_loss(selected, 0);
}

double eval_map(const PatchImage* patch, double scale, bool creases) {
  TransformStack stack;
  stack.render.scale = scale;
  stack.creases = creases ? CreaseFieldConfig{1, 5, 23} : CreaseFieldConfig::none();
  stack.seed = 23;
  return evaluate_map(toy(), eval_scenes(), eval_truth(), patch, stack, std::nullopt).map_50;
}

// ---- criteria ----

Outcome loss_identities() {
  const Image p = random_image(300, 300, 1, 0, 1);
  const double sim = similarity_loss(p, p);
  const double tv = tv_loss(Image(300, 300, 3, 0.42));
  std::vector<std::vector<Detection>> zero(2);
  for (auto& img : zero) {
    Detection d;
    d.objectness = 0.0;
    d.class_probs = {0.9};
    img = {d, d};
  }
  const double det = detection_loss(zero, 0);
  return {sim == 0.0 && tv < 1e-3 && det == 0.0,
          "sim(P,P)=" + fmt("%g", sim) + " tv(const 300x300)=" + fmt("%g", tv) + " det(obj=0)=" + fmt("%g", det)};
}

Outcome crease_formula() {
  const PatchDims d{64, 48};
  bool ok = crease_multiplier(10, 20, Crease{10, 20, 3, -2}, d) == 1.0;
  ok = ok && std::abs(crease_multiplier(16, 16, Crease{10, 20, 3, -2}, d) - 1.0) < 1e-12;
  const double far = crease_multiplier(0, 47, Crease{0, 0, 4, 0}, d);
  const double expected = 1.0 - 47.0 * 47.0 / (64.0 * 64 + 48.0 * 48);
  ok = ok && std::abs(far - expected) < 1e-9;
  Rng rng(5);
  double lo = 1, hi = 0;
  for (int k = 0; k < 100; ++k) {
    const Crease c{rng.uniform(0, 63), rng.uniform(0, 47), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    for (int gy = 0; gy < 10; ++gy)
      for (int gx = 0; gx < 10; ++gx) {
        const double m = crease_multiplier(gx * 63.0 / 9, gy * 47.0 / 9, c, d);
        lo = std::min(lo, m);
        hi = std::max(hi, m);
      }
  }
  ok = ok && lo >= 0.0 && hi <= 1.0;
  return {ok, "far corner err " + fmt("%.1e", std::abs(far - expected)) + ", 10^4 fuzz range [" + fmt("%.4f", lo) +
                  ", " + fmt("%.4f", hi) + "]"};
}

Outcome gradient_checks() {
  const int H = 8, W = 8;
  const Image base = random_image(H, W, 31, 0.2, 0.8);
  const std::size_t n = base.size();  // 192 coordinates per check
  Rng rng(32);
  const Image weights = random_image(H, W, 33, -1, 1);
  auto dot = [&](const Image& img) {
    double s = 0;
    for (std::size_t i = 0; i < img.size(); ++i) s += img[i] * weights[i];
    return s;
  };
  auto check = [&](const std::function<double(const Image&)>& f, const Image& grad, double h) {
    double worst = 0;
    for (std::size_t i = 0; i < n; ++i) {
      Image a = base, b = base;
      a[i] += h;
      b[i] -= h;
      worst = std::max(worst, rel_err(grad[i], (f(a) - f(b)) / (2 * h)));
    }
    return worst;
  };

  // l_total through renderer and detector for one scene.
  const Scene scene = train_scenes()[0];
  SampledTransform t;
  t.angle_deg = 9;
  t.contrast = 0.95;
  t.brightness = 0.02;
  t.creases = {{3, 2, 2, -1.5}};
  const GuideImage g{random_image(H, W, 34, 0.1, 0.9)};
  const LossWeights lw{1.0, 4.0, 0.5};
  auto l_total = [&](const Image& px) {
    const PatchImage p{px};
    const auto r = render(scene, p, t, RenderConfig{});
    const std::vector<std::vector<Detection>> sel{select_attack_targets(toy().predict(r.scene.image), toy().handle())};
    return total_loss(p, g, sel, lw, 0).l_total;
  };
  const PatchImage p{base};
  const auto rendered = render(scene, p, t, RenderConfig{});
  const auto fwd = toy().forward(rendered.scene.image);
  const std::vector<std::vector<Detection>> sel{select_attack_targets(fwd.detections, toy().handle())};
  const auto dg = detection_loss_backward(sel, 0, lw.alpha);
  Image g_total(H, W, 3);
  render_backward(rendered, p, t, toy().backward(fwd, sel[0], dg[0]), g_total);
  regularizer_backward(p, g, lw, g_total);
  const double e_total = check(l_total, g_total, 1e-5);

  const auto creases = sample_crease_field({3, 3, 0}, {W, H}, rng);
  Image g_creases;
  apply_creases_backward({W, H}, creases, weights, g_creases);
  const double e_creases = check([&](const Image& x) { return dot(apply_creases(x, creases)); }, g_creases, 1e-5);

  EOTConfig eot;
  eot.noise_amp = 0.03;
  eot.brightness_amp = 0.03;
  const auto tr = sample_transform(eot, {1, 5, 0}, {W, H}, rng);
  Image g_tr(H, W, 3);
  apply_transform_backward(base, tr, weights, g_tr);
  const double e_tr = check([&](const Image& x) { return dot(apply_transform(x, tr)); }, g_tr, 1e-5);

  const double worst = std::max({e_total, e_creases, e_tr});
  return {worst < 1e-3, "max rel err over 192 coords: l_total " + fmt("%.1e", e_total) + ", creases " +
                            fmt("%.1e", e_creases) + ", transform " + fmt("%.1e", e_tr)};
}

// Top-k enumeration of precision and recall, integrated under the upper envelope.
double ap_enumeration(const std::vector<ScoredBox>& preds, const std::vector<std::vector<BoundingBox>>& gt) {
  std::size_t n_gt = 0;
  for (const auto& g : gt) n_gt += g.size();
  auto sorted = preds;
  std::stable_sort(sorted.begin(), sorted.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  if (n_gt == 0) return sorted.empty() ? 1.0 : 0.0;
  std::vector<double> rec, prec;
  for (std::size_t k = 1; k <= sorted.size(); ++k) {
    std::vector<std::vector<bool>> used(gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i) used[i].assign(gt[i].size(), false);
    std::size_t tp = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const auto& g = gt[sorted[j].image];
      double best = -1;
      std::size_t arg = 0;
      for (std::size_t q = 0; q < g.size(); ++q)
        if (iou(sorted[j].box, g[q]) > best) best = iou(sorted[j].box, g[q]), arg = q;
      if (best >= 0.5 && !used[sorted[j].image][arg]) used[sorted[j].image][arg] = true, ++tp;
    }
    rec.push_back(static_cast<double>(tp) / n_gt);
    prec.push_back(static_cast<double>(tp) / k);
  }
  double ap = 0, prev = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    ap += (rec[k] - prev) * *std::max_element(prec.begin() + k, prec.end());
    prev = rec[k];
  }
  return ap;
}

Outcome map_oracle() {
  Rng rng(41);
  double worst = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const int images = rng.uniform_int(1, 3);
    std::vector<std::vector<BoundingBox>> gt(images);
    const int n_gt = rng.uniform_int(1, 4);
    for (int k = 0; k < n_gt; ++k)
      gt[rng.uniform_int(0, images - 1)].push_back({rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.2, 0.25, 0});
    std::vector<ScoredBox> preds;
    const int n_pred = rng.uniform_int(0, 10 - n_gt);
    for (int k = 0; k < n_pred; ++k) {
      const int i = rng.uniform_int(0, images - 1);
      BoundingBox b{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.2, 0.25, 0};
      if (!gt[i].empty() && rng.uniform() < 0.6) {
        b = gt[i][rng.uniform_int(0, static_cast<int>(gt[i].size()) - 1)];
        b.cy += rng.uniform(-0.05, 0.05);
      }
      preds.push_back({static_cast<std::size_t>(i), rng.uniform(), b});
    }
    worst = std::max(worst, std::abs(average_precision(preds, gt).ap - ap_enumeration(preds, gt)));
  }
  return {worst <= 1e-9, "25 fixtures, max |AP - oracle| = " + fmt("%.1e", worst)};
}

Outcome fixed_point() {
  const auto scenes = make_synthetic_dataset(kTrainScenes, kTrainSeed);
  const auto truth = build_ground_truth(toy(), scenes);
  const auto r = evaluate_map(toy(), scenes, truth, nullptr, TransformStack{}, std::nullopt);
  std::size_t boxes = 0;
  for (const auto& b : truth.boxes) boxes += b.size();
  return {r.map_50 == 100.0 && r.recall == 100.0, "mAP " + fmt("%.3f", r.map_50) + " recall " + fmt("%.3f", r.recall) +
                                                      " over " + std::to_string(boxes) + " boxes"};
}

Outcome desk_efficacy() {
  const auto& tp = trained(0.5, true);
  const AttackConfig cfg = desk_config(0.5, true);
  const double before = dataset_detection_loss(tp.initial, cfg);
  const double after = dataset_detection_loss(tp.result.state.patch, cfg);
  const double clean = eval_map(nullptr, 0.5, false);
  const double patched = eval_map(&tp.result.state.patch, 0.5, false);
  const bool ok = after <= 0.5 * before && patched <= 0.5 * clean;
  return {ok, "l_det " + fmt("%.4f", before) + " -> " + fmt("%.4f", after) + " (" +
                  fmt("%.0f", 100 * (1 - after / before)) + "% drop), mAP clean " + fmt("%.2f", clean) +
                  " patched " + fmt("%.2f", patched) + ", train " + fmt("%.0f", tp.seconds) + " s"};
}

// Each scale gets its own patch, trained and evaluated at that scale.
Outcome scale_monotonicity() {
  std::vector<double> maps;
  for (double s : {0.3, 0.4, 0.5, 0.6}) maps.push_back(eval_map(&trained(s, true).result.state.patch, s, false));
  bool ok = true;
  for (std::size_t i = 1; i < maps.size(); ++i) ok = ok && maps[i] <= maps[i - 1];
  std::string d = "mAP at 0.3/0.4/0.5/0.6:";
  for (double m : maps) d += " " + fmt("%.2f", m);
  return {ok, d};
}

// At scale 0.4 neither patch saturates the attack, so crease losses are visible.
Outcome crease_robustness() {
  constexpr double kScale = 0.4;
  const auto& with_ct = trained(kScale, true).result.state.patch;
  const auto& without_ct = trained(kScale, false).result.state.patch;
  // ASR points lost when the evaluation adds creases.
  const double loss_with = eval_map(&with_ct, kScale, true) - eval_map(&with_ct, kScale, false);
  const double loss_without = eval_map(&without_ct, kScale, true) - eval_map(&without_ct, kScale, false);
  const bool ok = loss_with <= 0.5 * std::max(loss_without, 0.0);
  return {ok, "ASR points lost under creases: CT-trained " + fmt("%.2f", loss_with) + ", plain " +
                  fmt("%.2f", loss_without)};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "patchforge_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.json") << R"({
  "attack": {"epochs": 2, "batch_size": 4},
  "detector": {"cfg": ")" << (kDataDir / "toy_detector.cfg").string() << R"(",
               "weights": ")" << (kDataDir / "toy_detector.weights").string() << R"("},
  "dataset": {"synthetic": {"count": 8, "seed": 3}},
  "guide_image": ")" << (kDataDir / "guide.png").string() << R"("
})";
  int codes = 0;
  for (const char* run : {"a", "b"}) {
    codes += run_cli({"attack", "--config", (dir / "run.json").string(), "--seed", "7", "--out", (dir / run).string(),
                      "--quiet"});
  }
  bool same = codes == 0;
  for (const char* f : {"patch.png", "patch.ckpt", "loss_log.csv"}) {
    const std::string a = read_file(dir / "a" / f), b = read_file(dir / "b" / f);
    same = same && !a.empty() && a == b;
  }
  const std::string log = read_file(dir / "a" / "loss_log.csv");
  const auto lines = std::count(log.begin(), log.end(), '\n');
  fs::remove_all(dir);
  return {same, "patch.png, patch.ckpt and loss_log.csv byte-identical across two runs (" +
                    std::to_string(lines - 1) + " steps)"};
}

}  // namespace

int main() {
  std::printf("patchforge acceptance suite\n");
  report(1, "loss identities", 1, loss_identities);
  report(2, "crease formula", 5, crease_formula);
  report(3, "gradient checks", 60, gradient_checks);
  report(4, "mAP oracle equivalence", 10, map_oracle);
  report(5, "protocol fixed point", 0, fixed_point);
  report(6, "desk-scale attack efficacy", 300, desk_efficacy);
  report(7, "scale monotonicity", 0, scale_monotonicity);
  report(8, "crease robustness direction", 0, crease_robustness);
  report(9, "determinism", 0, cli_determinism);
  std::printf("[SKIP] 10 %-34s opt-in, see scripts/full_reproduction.sh\n", "full reproduction (external)");
  std::printf("%s: %d failing\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
