#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "patchforge/error.hpp"
#include "patchforge/rng.hpp"
#include "patchforge/trainer.hpp"

using namespace patchforge;

namespace {

const char* kTinyNet = R"(
[net]
width=32
height=32
channels=3
[convolutional]
filters=4
size=3
stride=2
pad=1
activation=swish
[convolutional]
filters=6
size=1
stride=1
activation=linear
[yolo]
mask=0
anchors=12,12
classes=1
)";

Detector tiny_detector() {
  nn::Network net = nn::parse_darknet_cfg(kTinyNet, "tiny.cfg");
  Rng rng(21);
  for (auto& layer : net.mutable_layers()) {
    if (auto* conv = std::get_if<nn::ConvLayer>(&layer)) {
      for (auto& w : conv->weights) w = rng.uniform(-0.6, 0.6);
      for (auto& b : conv->bias) b = rng.uniform(-0.3, 0.3);
    }
  }
  return Detector(DetectorHandle{"tiny", 0, 0.5, 32}, std::move(net), {}, "tiny");
}

std::vector<Scene> tiny_scenes(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) {
    Scene s{Image(32, 32, 3), {}, ""};
    for (auto& v : s.image.data()) v = rng.uniform();
    s.boxes.push_back({rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), 0.3, 0.5, 0});
    out.push_back(std::move(s));
  }
  return out;
}

GuideImage tiny_guide(int side = 6) {
  GuideImage g{Image(side, side, 3)};
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c) g.pixels.at(y, x, c) = 0.2 + 0.6 * ((x + y + c) % 3) / 2.0;
  return g;
}

AttackConfig tiny_config() {
  AttackConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.seed = 5;
  cfg.eot.rng_seed = 5;
  cfg.creases.rng_seed = 5;
  return cfg;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("patchforge_test_" + name);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << b;
}

void expect_same_log(const std::vector<TrainLogRecord>& a, const std::vector<TrainLogRecord>& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(format_loss_record(a[i]), format_loss_record(b[i])) << i;
}

}  // namespace

TEST(StepsPerEpoch, CeilDivision) {
  EXPECT_EQ(steps_per_epoch(40, 8), 5);
  EXPECT_EQ(steps_per_epoch(41, 8), 6);
  EXPECT_EQ(steps_per_epoch(3, 8), 1);
}

TEST(InitialPatch, Modes) {
  const GuideImage g = tiny_guide();
  AttackConfig cfg;
  cfg.patch_init = PatchInit::from_guide;
  EXPECT_EQ(initial_patch(g, cfg).pixels, g.pixels);
  cfg.patch_init = PatchInit::gray;
  const auto gray = initial_patch(g, cfg);
  for (double v : gray.pixels.data()) EXPECT_EQ(v, 0.5);
  cfg.patch_init = PatchInit::random_uniform;
  const auto p = initial_patch(g, cfg);
  EXPECT_TRUE(p.pixels.same_shape(g.pixels));
  EXPECT_GE(p.pixels.min_value(), 0.0);
  EXPECT_LE(p.pixels.max_value(), 1.0);
  EXPECT_EQ(parse_patch_init("from_guide"), PatchInit::from_guide);
  EXPECT_THROW(parse_patch_init("zeros"), Error);
}

TEST(AdamStep, FirstStepMovesByLearningRate) {
  TrainState s = initial_state(tiny_guide(), AttackConfig{});
  s.patch = PatchImage::constant(6, 6, 0.5);
  Image g(6, 6, 3, 2.0);
  g[0] = -3.0;
  adam_step(s, g);
  EXPECT_NEAR(s.patch.pixels[1], 0.5 - 0.001, 1e-9);
  EXPECT_NEAR(s.patch.pixels[0], 0.5 + 0.001, 1e-9);
  EXPECT_EQ(s.next_step, 1);
}

TEST(AdamStep, ProjectsOntoUnitInterval) {
  AttackConfig cfg;
  cfg.lr = 0.5;
  TrainState s = initial_state(tiny_guide(), cfg);
  s.patch = PatchImage::constant(6, 6, 0.9);
  adam_step(s, Image(6, 6, 3, -1.0));
  EXPECT_EQ(s.patch.pixels.max_value(), 1.0);
}

TEST(OptimizePatch, SimilarityOnlyConvergesToGuide) {
  AttackConfig cfg = tiny_config();
  cfg.weights = {0.0, 1.0, 0.0};
  cfg.lr = 0.01;
  cfg.epochs = 250;  // 2 steps per epoch
  const auto scenes = tiny_scenes(4, 1);
  const GuideImage g = tiny_guide();
  const auto r = optimize_patch(scenes, tiny_detector(), g, cfg);
  ASSERT_EQ(r.log.size(), 500u);
  EXPECT_TRUE(r.finished);
  EXPECT_LT(similarity_loss(r.state.patch.pixels, g.pixels), 1e-3);
}

TEST(OptimizePatch, SameSeedBitIdentical) {
  const auto scenes = tiny_scenes(5, 2);
  const Detector d = tiny_detector();
  const auto a = optimize_patch(scenes, d, tiny_guide(), tiny_config());
  const auto b = optimize_patch(scenes, d, tiny_guide(), tiny_config());
  EXPECT_EQ(a.state.patch.pixels, b.state.patch.pixels);
  expect_same_log(a.log, b.log);
  AttackConfig other = tiny_config();
  other.seed = 6;
  EXPECT_NE(optimize_patch(scenes, d, tiny_guide(), other).state.patch.pixels, a.state.patch.pixels);
}

TEST(OptimizePatch, LogOrderingAndPatchRange) {
  const auto scenes = tiny_scenes(5, 3);
  AttackConfig cfg = tiny_config();
  cfg.lr = 0.2;
  int calls = 0;
  TrainControl ctl;
  ctl.on_step = [&](const TrainLogRecord&) { ++calls; };
  const auto r = optimize_patch(scenes, tiny_detector(), tiny_guide(), cfg, ctl);
  ASSERT_EQ(r.log.size(), 9u);  // 3 epochs x ceil(5 / 2)
  EXPECT_EQ(calls, 9);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, static_cast<int>(i));
    EXPECT_EQ(r.log[i].epoch, static_cast<int>(i / 3));
    const auto& b = r.log[i].breakdown;
    EXPECT_NEAR(b.l_total, b.l_det + 4.0 * b.l_sim + 0.5 * b.l_tv, 1e-12);
  }
  EXPECT_GE(r.state.patch.pixels.min_value(), 0.0);
  EXPECT_LE(r.state.patch.pixels.max_value(), 1.0);
}

TEST(OptimizePatch, DetectorLeftUntouched) {
  const Detector d = tiny_detector();
  std::vector<std::vector<double>> before;
  for (const auto& layer : d.network().layers())
    if (auto* conv = std::get_if<nn::ConvLayer>(&layer)) before.push_back(conv->weights);
  optimize_patch(tiny_scenes(4, 4), d, tiny_guide(), tiny_config());
  std::size_t k = 0;
  for (const auto& layer : d.network().layers())
    if (auto* conv = std::get_if<nn::ConvLayer>(&layer)) EXPECT_EQ(conv->weights, before[k++]);
}

TEST(OptimizePatch, DetectionTermLowersObjectness) {
  AttackConfig cfg = tiny_config();
  cfg.weights = {1.0, 0.0, 0.0};
  cfg.lr = 0.05;
  cfg.epochs = 30;
  cfg.eot = EOTConfig::identity();
  cfg.creases = CreaseFieldConfig::none();
  cfg.render.scale = 1.5;
  const auto r = optimize_patch(tiny_scenes(4, 5), tiny_detector(), tiny_guide(), cfg);
  const double first = r.log.front().breakdown.l_det + r.log[1].breakdown.l_det;
  const double last = r.log[r.log.size() - 2].breakdown.l_det + r.log.back().breakdown.l_det;
  EXPECT_LT(last, first);
}

TEST(OptimizePatch, SplitRunMatchesUninterrupted) {
  const auto scenes = tiny_scenes(5, 6);
  const Detector d = tiny_detector();
  const auto full = optimize_patch(scenes, d, tiny_guide(), tiny_config());

  TrainControl stop;
  stop.stop_at_step = 4;
  const auto part = optimize_patch(scenes, d, tiny_guide(), tiny_config(), stop);
  EXPECT_FALSE(part.finished);
  ASSERT_EQ(part.log.size(), 4u);
  const auto path = temp_path("split.ckpt");
  save_checkpoint(part.state, path);
  const auto rest = optimize_patch(scenes, d, tiny_guide(), load_checkpoint(path));
  std::filesystem::remove(path);
  EXPECT_TRUE(rest.finished);
  EXPECT_EQ(rest.state.patch.pixels, full.state.patch.pixels);
  std::vector<TrainLogRecord> joined = part.log;
  joined.insert(joined.end(), rest.log.begin(), rest.log.end());
  expect_same_log(joined, full.log);
}

TEST(OptimizePatch, NanNamesTheTerm) {
  GuideImage g = tiny_guide();
  g.pixels[3] = std::nan("");
  try {
    optimize_patch(tiny_scenes(2, 7), tiny_detector(), g, tiny_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::numeric);
    EXPECT_NE(std::string(e.what()).find("l_sim"), std::string::npos) << e.what();
  }
}

TEST(OptimizePatch, PreconditionsChecked) {
  EXPECT_THROW(optimize_patch({}, tiny_detector(), tiny_guide(), tiny_config()), Error);
  TrainState s = initial_state(tiny_guide(), tiny_config());
  EXPECT_THROW(optimize_patch(tiny_scenes(2, 8), tiny_detector(), tiny_guide(8), s), Error);
  AttackConfig bad = tiny_config();
  bad.lr = 0;
  EXPECT_THROW(optimize_patch(tiny_scenes(2, 8), tiny_detector(), tiny_guide(), bad), Error);
  bad = tiny_config();
  bad.render.person_class = 3;
  EXPECT_THROW(optimize_patch(tiny_scenes(2, 8), tiny_detector(), tiny_guide(), bad), Error);
}

TEST(Checkpoint, RoundTripIsExact) {
  TrainState s = initial_state(tiny_guide(), tiny_config());
  s.patch = PatchImage::random_uniform(6, 6, 9);
  s.adam_m = Image(6, 6, 3, 1.0 / 3.0);
  s.adam_v = Image(6, 6, 3, 1e-300);
  s.next_step = 12345678901LL;
  s.config.lr = 0.1 + 0.2;
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(s, path);
  const TrainState t = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(t.patch.pixels, s.patch.pixels);
  EXPECT_EQ(t.adam_m, s.adam_m);
  EXPECT_EQ(t.adam_v, s.adam_v);
  EXPECT_EQ(t.next_step, s.next_step);
  EXPECT_TRUE(t.config == s.config);
}

TEST(Checkpoint, CorruptFileRejected) {
  const auto path = temp_path("corrupt.ckpt");
  save_checkpoint(initial_state(tiny_guide(), tiny_config()), path);
  std::string bytes = read_bytes(path);
  bytes[bytes.size() / 2] ^= 0x5a;
  write_bytes(path, bytes);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::checkpoint);
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  write_bytes(path, bytes.substr(0, 10));
  EXPECT_THROW(load_checkpoint(path), Error);
  write_bytes(path, "hello world, definitely not a checkpoint but long enough to pass the size check......");
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionMismatchNamesStoredVersion) {
  const auto path = temp_path("version.ckpt");
  save_checkpoint(initial_state(tiny_guide(), tiny_config()), path);
  std::string bytes = read_bytes(path);
  const std::string v = kCheckpointVersion;
  const auto at = bytes.find(v);
  ASSERT_NE(at, std::string::npos);
  bytes[at + v.size() - 1] = '9';
  write_bytes(path, bytes);
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::checkpoint);
    EXPECT_NE(std::string(e.what()).find("patchforge-ckpt-9"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, MissingFileIsIoError) {
  try {
    load_checkpoint(temp_path("does_not_exist.ckpt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }
}

TEST(LossLog, HeaderAndPrecision) {
  EXPECT_EQ(loss_log_header(), "epoch,step,l_det,l_sim,l_tv,l_total");
  TrainLogRecord r{1, 7, {0.1, 1.0 / 3.0, 2.0, 0.1 + 4.0 / 3.0 + 1.0}, 3.5};
  const std::string line = format_loss_record(r);
  std::vector<std::string> fields;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
  ASSERT_EQ(fields.size(), 6u);
  EXPECT_EQ(fields[0], "1");
  EXPECT_EQ(fields[1], "7");
  EXPECT_EQ(std::stod(fields[3]), 1.0 / 3.0);

  const auto path = temp_path("loss.csv");
  const std::vector<TrainLogRecord> log{r, r};
  write_loss_log(log, path);
  const std::string text = read_bytes(path);
  std::filesystem::remove(path);
  EXPECT_EQ(text.substr(0, text.find('\n')), loss_log_header());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}
