#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "patchforge/config.hpp"
#include "patchforge/error.hpp"

using namespace patchforge;
namespace fs = std::filesystem;

namespace {

class RunConfigTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("patchforge_cfg_" + std::string(
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "models");
    fs::create_directories(dir_ / "data/images/train");
    fs::create_directories(dir_ / "data/labels/train");
    touch("models/det.cfg");
    touch("models/det.weights");
    touch("guide.png");
  }
  void TearDown() override { fs::remove_all(dir_); }

  void touch(const std::string& rel) { std::ofstream(dir_ / rel) << "x"; }
  fs::path write(const std::string& text) {
    const auto p = dir_ / "run.json";
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

const char* kMinimal = R"({
  "detector": {"cfg": "models/det.cfg", "weights": "models/det.weights"},
  "dataset": {"images": "data/images", "labels": "data/labels", "split": "train"},
  "guide_image": "guide.png"
})";

ErrorCategory category_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.category();
  }
  return ErrorCategory::internal;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(AttackConfigJson, DefaultsRoundTrip) {
  const AttackConfig a;
  EXPECT_TRUE(attack_config_from_json(attack_config_to_json(a)) == a);
}

TEST(AttackConfigJson, NonDefaultValuesRoundTrip) {
  AttackConfig a;
  a.weights = {0.7, 3.0, 0.25};
  a.lr = 1.0 / 3.0;
  a.epochs = 17;
  a.batch_size = 3;
  a.render.scale = 0.45;
  a.render.vertical_offset = -0.1;
  a.eot.contrast_lo = 0.7;
  a.eot.scale_hi = 1.3;
  a.eot.rng_seed = 99;
  a.creases = {2, 4, 11};
  a.patch_init = PatchInit::gray;
  a.seed = 0xFFFFFFFFFFFFULL;
  const AttackConfig b = attack_config_from_json(attack_config_to_json(a, 2));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(b.lr, 1.0 / 3.0);
  EXPECT_EQ(b.seed, a.seed);
}

TEST(AttackConfigJson, PartialObjectKeepsDefaults) {
  const AttackConfig a = attack_config_from_json(R"({"lr": 0.01, "eot": {"rotation_deg": 5}})");
  EXPECT_EQ(a.lr, 0.01);
  EXPECT_EQ(a.eot.rotation_deg, 5.0);
  EXPECT_EQ(a.eot.noise_amp, 0.1);
  EXPECT_EQ(a.weights.beta, 4.0);
}

TEST(AttackConfigJson, UnknownKeyNamesThePath) {
  const auto f = [] { attack_config_from_json(R"({"eot": {"rotaton_deg": 5}})"); };
  EXPECT_EQ(category_of(f), ErrorCategory::usage);
  EXPECT_NE(message_of(f).find("eot.rotaton_deg"), std::string::npos);
}

TEST(AttackConfigJson, WrongTypeAndInvalidValues) {
  EXPECT_EQ(category_of([] { attack_config_from_json(R"({"lr": "fast"})"); }), ErrorCategory::config);
  EXPECT_EQ(category_of([] { attack_config_from_json(R"({"lr": -1})"); }), ErrorCategory::config);
  EXPECT_EQ(category_of([] { attack_config_from_json(R"({"adam_beta1": 1.0})"); }), ErrorCategory::config);
  EXPECT_EQ(category_of([] { attack_config_from_json("{not json"); }), ErrorCategory::config);
  EXPECT_THROW(attack_config_from_json(R"({"patch_init": "zeros"})"), Error);
}

TEST_F(RunConfigTest, RelativePathsResolveAgainstConfigDir) {
  const RunConfig cfg = load_run_config(write(kMinimal));
  EXPECT_EQ(fs::weakly_canonical(cfg.detector.cfg), fs::weakly_canonical(dir_ / "models/det.cfg"));
  EXPECT_EQ(fs::weakly_canonical(cfg.dataset.images_dir()), fs::weakly_canonical(dir_ / "data/images/train"));
  EXPECT_EQ(fs::weakly_canonical(cfg.guide_image), fs::weakly_canonical(dir_ / "guide.png"));
  EXPECT_EQ(cfg.detector.name, "toy");
  EXPECT_EQ(cfg.attack, AttackConfig{});
}

TEST_F(RunConfigTest, MissingPathFailsFast) {
  fs::remove(dir_ / "guide.png");
  const auto p = write(kMinimal);
  EXPECT_EQ(category_of([&] { load_run_config(p); }), ErrorCategory::io);
  EXPECT_NE(message_of([&] { load_run_config(p); }).find("guide_image"), std::string::npos);
}

TEST_F(RunConfigTest, MissingRequiredKeyIsUsageError) {
  const auto p = write(R"({"detector": {"cfg": "models/det.cfg"}, "dataset": {"images": "data/images"},
                           "guide_image": "guide.png"})");
  EXPECT_EQ(category_of([&] { load_run_config(p); }), ErrorCategory::usage);
  EXPECT_NE(message_of([&] { load_run_config(p); }).find("detector.weights"), std::string::npos);
  const auto q = write(R"({"detector": {"cfg": "models/det.cfg", "weights": "models/det.weights"},
                           "dataset": {}, "guide_image": "guide.png"})");
  EXPECT_NE(message_of([&] { load_run_config(q); }).find("dataset.images"), std::string::npos);
}

TEST_F(RunConfigTest, UnknownTopLevelKeyRejected) {
  const auto p = write(R"({"detector": {"cfg": "models/det.cfg", "weights": "models/det.weights"},
                           "dataset": {"synthetic": {"count": 4}}, "guide_image": "guide.png", "epochs": 3})");
  EXPECT_EQ(category_of([&] { load_run_config(p); }), ErrorCategory::usage);
  EXPECT_NE(message_of([&] { load_run_config(p); }).find("'epochs'"), std::string::npos);
}

TEST_F(RunConfigTest, SyntheticDatasetNeedsNoDirectories) {
  const RunConfig cfg = load_run_config(write(R"({
    "detector": {"cfg": "models/det.cfg", "weights": "models/det.weights", "person_class_index": 0},
    "dataset": {"synthetic": {"count": 40, "seed": 3}},
    "guide_image": "guide.png"
  })"));
  EXPECT_EQ(cfg.dataset.synthetic_count, 40);
  EXPECT_EQ(cfg.dataset.synthetic_seed, 3u);
}

TEST_F(RunConfigTest, OverridesBeatFileValuesWhichBeatDefaults) {
  RunConfig cfg = load_run_config(write(R"({
    "attack": {"lr": 0.01, "epochs": 3},
    "detector": {"cfg": "models/det.cfg", "weights": "models/det.weights"},
    "dataset": {"synthetic": {"count": 8}},
    "guide_image": "guide.png"
  })"));
  EXPECT_EQ(cfg.attack.lr, 0.01);
  EXPECT_EQ(cfg.attack.batch_size, 8);
  apply_override(cfg, "attack.lr=0.05");
  apply_override(cfg, "attack.eot.contrast_range=[0.9,1.1]");
  apply_override(cfg, "detector.name=yolov3tiny");
  apply_override(cfg, "attack.patch_init=gray");
  EXPECT_EQ(cfg.attack.lr, 0.05);
  EXPECT_EQ(cfg.attack.epochs, 3);
  EXPECT_EQ(cfg.attack.eot.contrast_lo, 0.9);
  EXPECT_EQ(cfg.detector.name, "yolov3tiny");
  EXPECT_EQ(cfg.attack.patch_init, PatchInit::gray);
  EXPECT_TRUE(fs::exists(cfg.detector.cfg));
}

TEST_F(RunConfigTest, BadOverridesRejected) {
  RunConfig cfg = load_run_config(write(kMinimal));
  EXPECT_EQ(category_of([&] { apply_override(cfg, "attack.lr"); }), ErrorCategory::usage);
  EXPECT_EQ(category_of([&] { apply_override(cfg, "attack.nope=1"); }), ErrorCategory::usage);
  EXPECT_EQ(category_of([&] { apply_override(cfg, "nothing.here=1"); }), ErrorCategory::usage);
  EXPECT_EQ(category_of([&] { apply_override(cfg, "attack.lr=abc"); }), ErrorCategory::config);
}

TEST_F(RunConfigTest, EffectiveConfigRoundTrips) {
  RunConfig cfg = load_run_config(write(kMinimal));
  apply_override(cfg, "attack.seed=7");
  const RunConfig again = run_config_from_json(run_config_to_json(cfg), "/");
  EXPECT_EQ(run_config_to_json(again), run_config_to_json(cfg));
  EXPECT_EQ(again.attack.seed, 7u);
}

TEST_F(RunConfigTest, PersonClassFollowsDetector) {
  const RunConfig cfg = load_run_config(write(R"({
    "attack": {"render": {"person_class": 5}},
    "detector": {"cfg": "models/det.cfg", "weights": "models/det.weights", "person_class_index": 2},
    "dataset": {"synthetic": {"count": 8}},
    "guide_image": "guide.png"
  })"));
  EXPECT_EQ(cfg.attack.render.person_class, 2);
}

TEST(RunConfigFile, MissingFileIsIoError) {
  EXPECT_EQ(category_of([] { load_run_config("/nonexistent/run.json"); }), ErrorCategory::io);
}
