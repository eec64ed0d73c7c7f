#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "vla/error.hpp"
#include "vla/geometry.hpp"
#include "vla/rng.hpp"

using namespace vla;

namespace {

// Pixel-count IoU at `res` samples per unit.
double raster_iou(const BoundingBox& a, const BoundingBox& b, int res) {
  const double lo_x = std::min(a.x1, b.x1), hi_x = std::max(a.x2, b.x2);
  const double lo_y = std::min(a.y1, b.y1), hi_y = std::max(a.y2, b.y2);
  long inter = 0, uni = 0;
  const double step = 1.0 / res;
  for (double x = lo_x + step / 2; x < hi_x; x += step) {
    for (double y = lo_y + step / 2; y < hi_y; y += step) {
      const bool ia = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
      const bool ib = x > b.x1 && x < b.x2 && y > b.y1 && y < b.y2;
      inter += ia && ib;
      uni += ia || ib;
    }
  }
  return uni ? double(inter) / double(uni) : 0.0;
}

BoundingBox random_box(SplitMix64& rng) {
  const double x = rng.uniform(-50, 50), y = rng.uniform(-50, 50);
  return {x, y, x + rng.uniform(0, 60), y + rng.uniform(0, 60)};
}

double direct_entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

RelationTable uniform_table(std::size_t k) {
  std::vector<RelationEntry> e;
  for (std::size_t i = 0; i < k; ++i) e.push_back({0, 1, "l" + std::to_string(i), "near", 1.0 / double(k)});
  return RelationTable(2, e);
}

}  // namespace

TEST(Iou, Examples) {
  BoundingBox a{0, 0, 2, 2}, b{1, 0, 3, 2};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou({0, 0, 1, 1}, {5, 5, 6, 6}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_NEAR(raster_iou(a, b, 200), 1.0 / 3.0, 1e-3);
}

TEST(Iou, DegeneratePairIsZero) {
  EXPECT_EQ(iou({1, 1, 1, 1}, {1, 1, 1, 1}), 0.0);
}

TEST(Iou, AgreesWithRasterOracle) {
  SplitMix64 rng(3);
  for (int i = 0; i < 50; ++i) {
    // Integer corners so the raster grid is exact.
    auto ib = [&] {
      const double x = double(rng.integer(0, 10)), y = double(rng.integer(0, 10));
      return BoundingBox{x, y, x + double(rng.integer(1, 8)), y + double(rng.integer(1, 8))};
    };
    auto a = ib(), b = ib();
    EXPECT_NEAR(iou(a, b), raster_iou(a, b, 4), 1e-12);
  }
}

TEST(Iou, SymmetricAndBounded) {
  SplitMix64 rng(17);
  for (int i = 0; i < 20000; ++i) {
    auto a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    ASSERT_EQ(v, iou(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(CrowdIou, DividesByDetectionArea) {
  EXPECT_DOUBLE_EQ(crowd_iou({0, 0, 2, 2}, {0, 0, 100, 100}), 1.0);
  EXPECT_DOUBLE_EQ(crowd_iou({0, 0, 2, 2}, {1, 0, 100, 100}), 0.5);
}

TEST(IouWeights, Examples) {
  std::vector<BoundingBox> one{{0, 0, 1, 1}};
  EXPECT_EQ(iou_weights(one), std::vector<double>{1.0});
  std::vector<BoundingBox> disjoint{{0, 0, 1, 1}, {5, 5, 6, 6}};
  EXPECT_EQ(iou_weights(disjoint), (std::vector<double>{1.0, 1.0}));
  std::vector<BoundingBox> same{{0, 0, 4, 4}, {0, 0, 4, 4}};
  EXPECT_EQ(iou_weights(same), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(iou_weights({}), EmptyInputError);
}

TEST(IouWeights, BoundsAndDisjointnessProperty) {
  SplitMix64 rng(23);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<BoundingBox> boxes(static_cast<std::size_t>(rng.integer(1, 8)));
    for (auto& b : boxes) b = random_box(rng);
    auto w = iou_weights(boxes);
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      ASSERT_GT(w[i], 0.0);
      ASSERT_LE(w[i], 1.0);
      bool isolated = true;
      for (std::size_t j = 0; j < boxes.size(); ++j)
        if (j != i && iou(boxes[i], boxes[j]) > 0) isolated = false;
      ASSERT_EQ(w[i] == 1.0, isolated);
    }
  }
}

TEST(IouWeights, TranslationInvariant) {
  SplitMix64 rng(29);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<BoundingBox> boxes(static_cast<std::size_t>(rng.integer(1, 6)));
    std::vector<double> probs;
    for (auto& b : boxes) {
      b = random_box(rng);
      probs.push_back(rng.uniform());
    }
    const double dx = rng.uniform(-1e3, 1e3), dy = rng.uniform(-1e3, 1e3);
    std::vector<BoundingBox> moved;
    for (const auto& b : boxes) moved.push_back(b.translated(dx, dy));
    auto w0 = iou_weights(boxes), w1 = iou_weights(moved);
    for (std::size_t i = 0; i < w0.size(); ++i) ASSERT_NEAR(w0[i], w1[i], 1e-9);
    ASSERT_NEAR(weighted_entropy(probs, boxes), weighted_entropy(probs, moved), 1e-9);
  }
}

TEST(WeightedEntropy, Examples) {
  std::vector<double> one{1.0};
  std::vector<BoundingBox> b1{{0, 0, 3, 3}};
  EXPECT_EQ(weighted_entropy(one, b1), 0.0);
  std::vector<double> half{0.5, 0.5};
  std::vector<BoundingBox> disjoint{{0, 0, 1, 1}, {5, 5, 6, 6}};
  EXPECT_NEAR(weighted_entropy(half, disjoint), std::log(2.0), 1e-12);
  std::vector<BoundingBox> same{{0, 0, 4, 4}, {0, 0, 4, 4}};
  EXPECT_NEAR(weighted_entropy(half, same), 0.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(weighted_entropy(half, same), 0.346574, 1e-6);
}

TEST(WeightedEntropy, LengthMismatchAndRangeRejected) {
  std::vector<double> p{0.5};
  std::vector<BoundingBox> b{{0, 0, 1, 1}, {2, 2, 3, 3}};
  EXPECT_THROW(weighted_entropy(p, b), ValidationError);
  std::vector<double> bad{1.5, 0.2};
  EXPECT_THROW(weighted_entropy(bad, b), ValidationError);
}

TEST(WeightedEntropy, ZeroProbabilityContributesNothing) {
  std::vector<double> p{0.0, 0.5};
  std::vector<BoundingBox> b{{0, 0, 1, 1}, {2, 2, 3, 3}};
  EXPECT_NEAR(weighted_entropy(p, b), 0.5 * std::log(2.0), 1e-15);
}

TEST(WeightedEntropy, DisjointBoxesEqualPlainEntropy) {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.integer(1, 12));
    std::vector<double> p;
    std::vector<BoundingBox> boxes;
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(rng.uniform());
      boxes.push_back({double(10 * i), 0, double(10 * i + 5), 5});
    }
    ASSERT_EQ(weighted_entropy(p, boxes), unweighted_entropy(p));
    ASSERT_NEAR(weighted_entropy(p, boxes), direct_entropy(p), 1e-12);
  }
}

TEST(GlobalEntropy, Examples) {
  EXPECT_EQ(global_entropy(RelationTable(2, {{0, 1, "a", "r", 1.0}})), 0.0);
  EXPECT_NEAR(global_entropy(uniform_table(4)), std::log(4.0), 1e-12);
  RelationTable t(2, {{0, 1, "a", "r", 0.7}, {1, 0, "b", "r", 0.3}});
  EXPECT_NEAR(global_entropy(t), -(0.7 * std::log(0.7) + 0.3 * std::log(0.3)), 1e-12);
  EXPECT_NEAR(global_entropy(t), 0.610864, 1e-6);
}

TEST(GlobalEntropy, UniformTableIsLogK) {
  for (std::size_t k = 2; k <= 64; ++k) {
    EXPECT_NEAR(global_entropy(uniform_table(k)), std::log(double(k)), 1e-12) << k;
  }
}

TEST(GlobalEntropy, UniformMaximizesAndOnlyPointMassIsZero) {
  // Every table of support size 3 on a 1/12 grid.
  const int q = 12;
  for (int a = 0; a <= q; ++a) {
    for (int b = 0; a + b <= q; ++b) {
      const int c = q - a - b;
      std::vector<RelationEntry> e{{0, 1, "x", "r", a / double(q)},
                                   {0, 1, "y", "r", b / double(q)},
                                   {0, 1, "z", "r", c / double(q)}};
      const double h = global_entropy(RelationTable(2, e));
      ASSERT_LE(h, std::log(3.0) + 1e-12);
      const int nonzero = (a > 0) + (b > 0) + (c > 0);
      ASSERT_EQ(h == 0.0, nonzero == 1) << a << " " << b << " " << c;
    }
  }
}

TEST(RelationTable, Invariants) {
  EXPECT_THROW(RelationTable(2, {{0, 1, "a", "r", 0.6}}), ValidationError);
  EXPECT_THROW(RelationTable(2, {{0, 0, "a", "r", 1.0}}), ValidationError);
  EXPECT_THROW(RelationTable(2, {{0, 2, "a", "r", 1.0}}), ValidationError);
  EXPECT_THROW(RelationTable(2, {{0, 1, "a", "r", -0.5}, {1, 0, "a", "r", 1.5}}), ValidationError);
  EXPECT_NO_THROW(RelationTable(2, {{0, 1, "a", "r", 0.5 + 4e-10}, {1, 0, "a", "r", 0.5}}));
}

TEST(RelationTable, JsonRoundTrip) {
  auto t = RelationTable::from_json(
      R"([{"i":0,"j":1,"label":"airplane","relation":"in front of","p":0.25},{"i":1,"j":0,"label":"moon","relation":"behind","p":0.75}])");
  EXPECT_EQ(t.object_count(), 2u);
  auto again = RelationTable::from_json(t.to_json());
  ASSERT_EQ(again.entries().size(), 2u);
  EXPECT_EQ(again.entries()[1].relation, "behind");
  EXPECT_EQ(again.entries()[1].p, 0.75);
  EXPECT_EQ(global_entropy(again), global_entropy(t));
}

TEST(InformationGain, Examples) {
  EXPECT_EQ(information_gain(0.4, 0.4), 0.0);
  EXPECT_EQ(information_gain(std::log(2.0), 0.0), std::log(2.0));
  EXPECT_NEAR(information_gain(0.346574, 0.610864), -0.264290, 1e-12);
}

TEST(InformationGain, IdenticalEntropiesGiveExactlyZero) {
  SplitMix64 rng(37);
  for (int i = 0; i < 10000; ++i) {
    const double h = rng.uniform(0, 10);
    ASSERT_EQ(information_gain(h, h), 0.0);
  }
}
