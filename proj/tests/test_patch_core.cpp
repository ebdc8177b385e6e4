#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "patchforge/error.hpp"
#include "patchforge/patch_core.hpp"
#include "patchforge/rng.hpp"

using namespace patchforge;

namespace {

Image random_image(int h, int w, int c, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Image img(h, w, c);
  for (auto& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

// Independent scalar evaluator of the smoothed total variation.
double tv_reference(const Image& p) {
  double total = 0.0;
  for (int c = 0; c < p.channels(); ++c)
    for (int i = 0; i < p.height() - 1; ++i)
      for (int j = 0; j < p.width() - 1; ++j) {
        const double a = p.at(i + 1, j, c) - p.at(i, j, c);
        const double b = p.at(i, j + 1, c) - p.at(i, j, c);
        total += std::sqrt(a * a + b * b + 1e-8) - 1e-4;
      }
  return total;
}

Detection make_detection(double obj, double person) {
  Detection d;
  d.objectness = obj;
  d.class_probs = {person};
  return d;
}

}  // namespace

TEST(SimilarityLoss, IdenticalImagesGiveZero) {
  const Image p = random_image(5, 7, 3, 1);
  EXPECT_EQ(similarity_loss(p, p), 0.0);
}

TEST(SimilarityLoss, OnesVersusZerosGivesOne) {
  EXPECT_DOUBLE_EQ(similarity_loss(Image(4, 4, 3, 1.0), Image(4, 4, 3, 0.0)), 1.0);
}

TEST(SimilarityLoss, HandComputedToy) {
  Image p(2, 2, 1, 0.5);
  Image n(2, 2, 1);
  n[1] = 1.0;
  n[3] = 1.0;
  EXPECT_DOUBLE_EQ(similarity_loss(p, n), 0.25);
}

TEST(SimilarityLoss, ShapeMismatchRejected) {
  try {
    similarity_loss(Image(2, 2, 3), Image(3, 2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::shape);
  }
}

TEST(SimilarityLoss, SymmetricAndZeroOnlyWhenEqual) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image a = random_image(6, 6, 3, s);
    Image b = random_image(6, 6, 3, s + 100);
    EXPECT_DOUBLE_EQ(similarity_loss(a, b), similarity_loss(b, a));
    EXPECT_GT(similarity_loss(a, b), 0.0);
    b = a;
    b[static_cast<std::size_t>(s)] += 1e-9;
    EXPECT_GT(similarity_loss(a, b), 0.0);
  }
}

TEST(SimilarityLoss, GradientMatchesFiniteDifference) {
  const Image p = random_image(4, 5, 3, 3, 0.2, 0.8);
  Image n = p;
  Rng rng(4);
  for (auto& v : n.data()) v += rng.uniform() < 0.5 ? -0.1 : 0.1;
  Image g;
  similarity_loss_backward(p, n, 1.0, g);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Image a = p, b = p;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    const double fd = (similarity_loss(a, n) - similarity_loss(b, n)) / 2e-5;
    EXPECT_NEAR(g[i], fd, 1e-8);
  }
}

TEST(TvLoss, ConstantPatchIsZero) {
  EXPECT_LT(tv_loss(Image(300, 300, 3, 0.37)), 1e-3);
  EXPECT_EQ(tv_loss(Image(10, 10, 3, 0.5)), 0.0);
}

TEST(TvLoss, HandComputedTwoByTwo) {
  Image p(2, 2, 1);
  p.at(1, 0, 0) = 1.0;
  p.at(1, 1, 0) = 1.0;
  // one term with dy = 1, dx = 0
  EXPECT_NEAR(tv_loss(p), std::sqrt(1.0 + 1e-8) - 1e-4, 1e-12);
  EXPECT_NEAR(tv_loss(p), tv_reference(p), 1e-12);
}

TEST(TvLoss, DegeneratePatchRejected) {
  EXPECT_THROW(tv_loss(Image(1, 5, 3)), Error);
  EXPECT_THROW(tv_loss(Image(5, 1, 3)), Error);
}

TEST(TvLoss, MatchesReferenceEvaluator) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Image p = random_image(7, 9, 3, s);
    EXPECT_NEAR(tv_loss(p), tv_reference(p), 1e-9);
  }
}

TEST(TvLoss, DoublingContrastNeverDecreases) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Image p = random_image(16, 16, 3, 50 + s);
    Image q = p;
    for (auto& v : q.data()) v = std::clamp(2.0 * v - 0.5, 0.0, 1.0);
    EXPECT_GE(tv_reference(q), tv_reference(p)) << "seed " << s;
    EXPECT_GE(tv_loss(q), tv_loss(p)) << "seed " << s;
  }
}

TEST(TvLoss, ShiftInsideConstantCanvasIsInvariant) {
  const Image p = random_image(6, 5, 3, 9);
  auto embed = [&](int oy, int ox) {
    Image canvas(14, 14, 3, 0.25);
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x)
        for (int c = 0; c < 3; ++c) canvas.at(y + oy, x + ox, c) = p.at(y, x, c);
    return canvas;
  };
  const double base = tv_loss(embed(1, 1));
  EXPECT_NEAR(tv_loss(embed(4, 2)), base, 1e-9);
  EXPECT_NEAR(tv_loss(embed(7, 8)), base, 1e-9);
}

TEST(TvLoss, GradientMatchesFiniteDifference) {
  const Image p = random_image(5, 6, 3, 10);
  Image g;
  tv_loss_backward(p, 1.0, g);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Image a = p, b = p;
    a[i] += 1e-5;
    b[i] -= 1e-5;
    const double fd = (tv_loss(a) - tv_loss(b)) / 2e-5;
    EXPECT_NEAR(g[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(DetectionLoss, ZeroObjectnessGivesZero) {
  const std::vector<std::vector<Detection>> batch{{make_detection(0.0, 0.9), make_detection(0.0, 0.3)}};
  EXPECT_EQ(detection_loss(batch, 0), 0.0);
}

TEST(DetectionLoss, SingleDetection) {
  const std::vector<std::vector<Detection>> batch{{make_detection(0.8, 0.5)}};
  EXPECT_DOUBLE_EQ(detection_loss(batch, 0), 0.4);
}

TEST(DetectionLoss, OuterMeanOverImages) {
  const std::vector<std::vector<Detection>> batch{{make_detection(0.8, 0.5)},
                                                  {make_detection(0.4, 0.5), make_detection(0.2, 1.0)}};
  EXPECT_DOUBLE_EQ(detection_loss(batch, 0), 0.3);
}

TEST(DetectionLoss, ImageWithoutDetectionsContributesZero) {
  const std::vector<std::vector<Detection>> batch{{make_detection(0.8, 0.5)}, {}};
  EXPECT_DOUBLE_EQ(detection_loss(batch, 0), 0.2);
}

TEST(DetectionLoss, EmptyBatchRejected) {
  const std::vector<std::vector<Detection>> batch;
  EXPECT_THROW(detection_loss(batch, 0), Error);
}

TEST(DetectionLoss, MonotoneInEachProbability) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Detection>> batch(3);
    for (auto& img : batch)
      for (int k = 0; k < 3; ++k) img.push_back(make_detection(rng.uniform(), rng.uniform()));
    const double base = detection_loss(batch, 0);
    auto bumped = batch;
    bumped[trial % 3][trial % 2].objectness = std::min(1.0, bumped[trial % 3][trial % 2].objectness + 0.1);
    EXPECT_GE(detection_loss(bumped, 0), base);
    bumped = batch;
    bumped[trial % 3][2].class_probs[0] = std::min(1.0, bumped[trial % 3][2].class_probs[0] + 0.1);
    EXPECT_GE(detection_loss(bumped, 0), base);
  }
}

TEST(DetectionLoss, GradientMatchesFiniteDifference) {
  std::vector<std::vector<Detection>> batch{{make_detection(0.7, 0.6), make_detection(0.3, 0.9)},
                                            {make_detection(0.5, 0.5)}};
  const auto grads = detection_loss_backward(batch, 0, 2.0);
  const double h = 1e-6;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch[i].size(); ++j) {
      auto a = batch, b = batch;
      a[i][j].objectness += h;
      b[i][j].objectness -= h;
      EXPECT_NEAR(grads[i][j].d_objectness, 2.0 * (detection_loss(a, 0) - detection_loss(b, 0)) / (2 * h), 1e-8);
      a = batch, b = batch;
      a[i][j].class_probs[0] += h;
      b[i][j].class_probs[0] -= h;
      EXPECT_NEAR(grads[i][j].d_class_prob, 2.0 * (detection_loss(a, 0) - detection_loss(b, 0)) / (2 * h), 1e-8);
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  PatchImage p{Image(2, 2, 3, 0.5)};
  GuideImage n{Image(2, 2, 3, 0.0)};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) n.pixels.at(y, x, 0) = n.pixels.at(y, x, 1) = n.pixels.at(y, x, 2) = (x == 1);
  const std::vector<std::vector<Detection>> batch{{make_detection(0.8, 0.5)}};
  const LossBreakdown b = total_loss(p, n, batch, LossWeights{}, 0);
  EXPECT_DOUBLE_EQ(b.l_det, 0.4);
  EXPECT_DOUBLE_EQ(b.l_sim, 0.25);
  EXPECT_DOUBLE_EQ(b.l_tv, 0.0);
  EXPECT_DOUBLE_EQ(b.l_total, 0.4 + 4 * 0.25);
  // weights (1, 4, 0.5) on l_det 0.4, l_sim 0.25, l_tv 2
  const LossWeights w;
  EXPECT_DOUBLE_EQ(w.alpha * 0.4 + w.beta * 0.25 + w.gamma * 2.0, 2.4);
}

TEST(TotalLoss, ZeroWeightsGiveZero) {
  const PatchImage p{random_image(4, 4, 3, 1)};
  const GuideImage n{random_image(4, 4, 3, 2)};
  const std::vector<std::vector<Detection>> batch{{make_detection(0.8, 0.5)}};
  EXPECT_EQ(total_loss(p, n, batch, LossWeights{0, 0, 0}, 0).l_total, 0.0);
}

TEST(TotalLoss, AllTermsVanish) {
  const PatchImage p{Image(8, 8, 3, 0.4)};
  const GuideImage n{p.pixels};
  const std::vector<std::vector<Detection>> batch{{make_detection(0.0, 0.2)}};
  EXPECT_LT(total_loss(p, n, batch, LossWeights{}, 0).l_total, 1e-12);
}

TEST(TotalLoss, BreakdownIdentityHolds) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const PatchImage p{random_image(6, 6, 3, s)};
    const GuideImage n{random_image(6, 6, 3, s + 7)};
    const std::vector<std::vector<Detection>> batch{{make_detection(0.3, 0.6)}, {make_detection(0.9, 0.9)}};
    const LossWeights w{1.5, 2.0, 0.25};
    const auto b = total_loss(p, n, batch, w, 0);
    EXPECT_NEAR(b.l_total, w.alpha * b.l_det + w.beta * b.l_sim + w.gamma * b.l_tv, 1e-12);
  }
}

TEST(LossWeights, NegativeRejected) {
  EXPECT_THROW((LossWeights{-1, 0, 0}.validate()), Error);
  EXPECT_THROW((LossWeights{0, 0, -0.5}.validate()), Error);
}

TEST(PatchImage, ProjectionClamps) {
  PatchImage p{random_image(4, 4, 3, 3, -1.0, 2.0)};
  p.project();
  EXPECT_GE(p.pixels.min_value(), 0.0);
  EXPECT_LE(p.pixels.max_value(), 1.0);
}

TEST(PatchImage, PngRoundTripWithinOneLevel) {
  const Image p = random_image(9, 11, 3, 4);
  const auto path = std::filesystem::temp_directory_path() / "patchforge_roundtrip.png";
  save_png(p, path);
  const Image q = load_image(path);
  ASSERT_TRUE(q.same_shape(p));
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_LE(std::abs(p[i] - q[i]), 1.0 / 255.0 + 1e-12);
  EXPECT_EQ(q, quantize_8bit(p));
  std::filesystem::remove(path);
}
