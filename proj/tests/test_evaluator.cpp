#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "reference_eval.hpp"
#include "vla/error.hpp"
#include "vla/evaluator.hpp"
#include "vla/rng.hpp"
#include "vla/synth.hpp"

using namespace vla;
using nlohmann::json;

namespace {

CategoryMap cats_ab() {
  CategoryMap c;
  c.add(1, "a", true);
  c.add(2, "b", true);
  return c;
}

GroundTruthObject gt(ImageId img, BoundingBox b, CategoryId c, bool crowd = false) {
  GroundTruthObject g;
  g.image_id = img;
  g.box = b;
  g.category_id = c;
  g.iscrowd = crowd;
  g.area = b.area();
  return g;
}

Detection det(ImageId img, DetId id, BoundingBox b, std::string label, double score) {
  Detection d;
  d.id = id;
  d.image_id = img;
  d.box = b;
  d.label = std::move(label);
  d.score = score;
  return d;
}

void expect_same(const std::optional<double>& a, const std::optional<double>& b, const char* what) {
  ASSERT_EQ(a.has_value(), b.has_value()) << what;
  if (a) ASSERT_NEAR(*a, *b, 1e-9) << what;
}

std::vector<std::optional<double>> six(const EvalReport& r) {
  return {r.ap_50_95, r.ap_50, r.ap_75, r.ap_small, r.ap_medium, r.ap_large};
}

}  // namespace

TEST(Thresholds, LinspaceConstruction) {
  const auto& t = coco_iou_thresholds();
  EXPECT_EQ(t.front(), 0.5);
  EXPECT_EQ(t.back(), 0.95);
  EXPECT_NEAR(t[5], 0.75, 1e-15);
  const auto& r = coco_recall_thresholds();
  EXPECT_EQ(r.front(), 0.0);
  EXPECT_EQ(r.back(), 1.0);
  EXPECT_EQ(r.size(), 101u);
}

TEST(Evaluate, SingleMatchAtIou09) {
  auto cats = cats_ab();
  // 100x100 ground truth, detection shifted so IoU = 0.9 exactly: 95x100 inside, union 100x100 + 0
  EvalImage im{1, {gt(1, {0, 0, 100, 100}, 1)}, {det(1, 1, {0, 0, 90, 100}, "a", 0.8)}};
  auto r = evaluate_images({im}, cats);
  for (std::size_t t = 0; t < kIouThresholdCount; ++t) {
    const double expected = coco_iou_thresholds()[t] <= 0.9 ? 1.0 : 0.0;
    ASSERT_TRUE(r.ap_per_threshold[t].has_value());
    EXPECT_EQ(*r.ap_per_threshold[t], expected) << t;
  }
  EXPECT_EQ(r.ap_50, 1.0);
  EXPECT_NEAR(*r.ap_50_95, 0.9, 1e-12);
  auto ref = ref::evaluate({im}, cats);
  expect_same(r.ap_50_95, ref.ap_50_95, "ap");
}

TEST(Evaluate, WrongClassScoresZero) {
  auto cats = cats_ab();
  EvalImage im{1, {gt(1, {0, 0, 50, 50}, 1)}, {det(1, 1, {0, 0, 50, 50}, "b", 0.9)}};
  auto r = evaluate_images({im}, cats);
  EXPECT_EQ(r.ap_50_95, 0.0);
  EXPECT_EQ(r.ap_50, 0.0);
  ASSERT_EQ(r.per_category.size(), 2u);
  EXPECT_EQ(r.per_category[0].ap, 0.0);
  EXPECT_EQ(r.per_category[1].ap, std::nullopt);  // no ground truth for "b"
}

TEST(Evaluate, NoGroundTruthIsUndefinedNotZero) {
  auto cats = cats_ab();
  EvalImage im{1, {}, {det(1, 1, {0, 0, 5, 5}, "a", 0.9)}};
  auto r = evaluate_images({im}, cats);
  for (const auto& v : six(r)) EXPECT_EQ(v, std::nullopt);
  EXPECT_EQ(r.counts[0].detections, 1u);
}

TEST(Evaluate, StrataFollowAnnotationArea) {
  auto cats = cats_ab();
  auto small = gt(1, {0, 0, 10, 10}, 1);
  auto big = gt(1, {100, 100, 300, 300}, 1);
  EvalImage im{1, {small, big}, {det(1, 1, {0, 0, 10, 10}, "a", 0.9), det(1, 2, {100, 100, 300, 300}, "a", 0.8)}};
  auto r = evaluate_images({im}, cats);
  EXPECT_EQ(r.ap_small, 1.0);
  EXPECT_EQ(r.ap_medium, std::nullopt);
  EXPECT_EQ(r.ap_large, 1.0);
  EXPECT_EQ(r.counts[1].gt, 1u);
  EXPECT_EQ(r.counts[3].gt, 1u);
}

TEST(Evaluate, CrowdAbsorbsMatchesWithoutFalsePositives) {
  auto cats = cats_ab();
  EvalImage im{1,
               {gt(1, {0, 0, 10, 10}, 1), gt(1, {50, 50, 150, 150}, 1, true)},
               {det(1, 1, {0, 0, 10, 10}, "a", 0.5), det(1, 2, {60, 60, 80, 80}, "a", 0.9),
                det(1, 3, {90, 90, 120, 120}, "a", 0.8)}};
  auto r = evaluate_images({im}, cats);
  EXPECT_EQ(r.ap_50_95, 1.0);
  auto ref = ref::evaluate({im}, cats);
  expect_same(r.ap_50_95, ref.ap_50_95, "crowd");
}

TEST(Evaluate, OnlyHundredDetectionsPerImageCount) {
  auto cats = cats_ab();
  EvalImage im{1, {gt(1, {0, 0, 10, 10}, 1)}, {}};
  for (int i = 0; i < 100; ++i) im.detections.push_back(det(1, i + 1, {500.0 + i, 0, 510.0 + i, 10}, "a", 0.9));
  im.detections.push_back(det(1, 101, {0, 0, 10, 10}, "a", 0.1));
  EXPECT_EQ(evaluate_images({im}, cats).ap_50, 0.0);
  im.detections.back().score = 0.95;
  EXPECT_EQ(evaluate_images({im}, cats).ap_50, 1.0);
}

TEST(Evaluate, MatchesBruteForceReferenceOnMicroScenes) {
  SplitMix64 rng(20240101);
  for (int trial = 0; trial < 1000; ++trial) {
    auto m = fx::random_micro_scene(rng);
    auto got = evaluate_images(m.images, m.cats);
    auto want = ref::evaluate(m.images, m.cats);
    expect_same(got.ap_50_95, want.ap_50_95, "ap_50_95");
    expect_same(got.ap_50, want.ap_50, "ap_50");
    expect_same(got.ap_75, want.ap_75, "ap_75");
    expect_same(got.ap_small, want.ap_small, "ap_small");
    expect_same(got.ap_medium, want.ap_medium, "ap_medium");
    expect_same(got.ap_large, want.ap_large, "ap_large");
    for (std::size_t t = 0; t < kIouThresholdCount; ++t) expect_same(got.ap_per_threshold[t], want.per_threshold[t], "t");
  }
}

TEST(Evaluate, ApIsMeanOfPerThresholdValuesAndBounded) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    auto m = fx::random_micro_scene(rng);
    auto r = evaluate_images(m.images, m.cats);
    if (!r.ap_50_95) continue;
    double sum = 0;
    for (const auto& v : r.ap_per_threshold) sum += *v;
    ASSERT_NEAR(*r.ap_50_95, sum / 10, 1e-9);
    for (const auto& v : six(r))
      if (v) ASSERT_TRUE(*v >= 0.0 && *v <= 1.0);
  }
}

TEST(Evaluate, DetectionInputOrderDoesNotMatter) {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    auto m = fx::random_micro_scene(rng);
    auto base = evaluate_images(m.images, m.cats);
    auto shuffled = m.images;
    for (auto& im : shuffled) {
      for (std::size_t i = im.detections.size(); i > 1; --i)
        std::swap(im.detections[i - 1], im.detections[static_cast<std::size_t>(rng.integer(0, std::int64_t(i) - 1))]);
    }
    std::reverse(shuffled.begin(), shuffled.end());
    auto again = evaluate_images(shuffled, m.cats);
    auto a = six(base), b = six(again);
    for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a[k], b[k]);
  }
}

TEST(Evaluate, RemovingAFalsePositiveNeverHurts) {
  SplitMix64 rng(19);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto m = fx::random_micro_scene(rng);
    // A detection far from every ground-truth box is a false positive at every threshold.
    auto with_fp = m.images;
    with_fp[0].detections.push_back(det(with_fp[0].image_id, 999999, {1000, 1000, 1040, 1040}, "c1",
                                        static_cast<double>(rng.integer(1, 10)) / 10));
    auto without = evaluate_images(m.images, m.cats);
    auto with = evaluate_images(with_fp, m.cats);
    auto a = six(without), b = six(with);
    for (std::size_t k = 0; k < a.size(); ++k) {
      ASSERT_EQ(a[k].has_value(), b[k].has_value());
      if (a[k]) {
        ASSERT_GE(*a[k] + 1e-12, *b[k]);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Evaluate, PerfectDetectionsScoreOne) {
  auto gen = generate_scenes({.image_count = 30, .seed = 12});
  auto scenes = gen.annotations.scenes;
  attach_detections(scenes, gen.detections);
  auto r = evaluate_coco(scenes, gen.annotations.categories, DetectionSet::raw);
  for (const auto& v : six(r))
    if (v) EXPECT_EQ(*v, 1.0);
}

TEST(Evaluate, FinalDetectionsDropTheDropped) {
  auto cats = cats_ab();
  SceneRecord s;
  s.image_id = 1;
  s.ground_truth = {gt(1, {0, 0, 10, 10}, 1)};
  s.raw_detections = {det(1, 1, {0, 0, 10, 10}, "a", 0.9), det(1, 2, {50, 50, 60, 60}, "a", 0.95)};
  s.corrected = s.raw_detections;
  s.dispositions = {Disposition::kept, Disposition::dropped};
  EXPECT_EQ(final_detections(s).size(), 1u);
  EXPECT_LT(*evaluate_coco({s}, cats, DetectionSet::raw).ap_50, 1.0);
  EXPECT_EQ(*evaluate_coco({s}, cats, DetectionSet::final_).ap_50, 1.0);
}

TEST(Correction, ReportedRatesTruncate) {
  const std::vector<std::pair<int, std::string>> rows{{0, "0.0"},    {597, "44.9"}, {982, "74.0"},
                                                      {979, "73.7"}, {990, "74.6"}, {996, "75.0"}};
  for (const auto& [cd, shown] : rows) {
    auto r = CorrectionReport::from_counts(1327, cd);
    EXPECT_EQ(r.cr_display(), shown) << cd;
    EXPECT_NEAR(*r.cr(), 100.0 * cd / 1327, 1e-12);
  }
}

TEST(Correction, UndefinedWithoutErrorsAndBoundsChecked) {
  auto r = CorrectionReport::from_counts(0, 0);
  EXPECT_EQ(r.cr(), std::nullopt);
  EXPECT_EQ(r.cr_display(), "");
  EXPECT_THROW(CorrectionReport::from_counts(5, 6), ValidationError);
  EXPECT_THROW(CorrectionReport::from_counts(5, -1), ValidationError);
  EXPECT_EQ(CorrectionReport::from_counts(1327, 1327).cr_display(), "100.0");
}

TEST(Correction, AirplaneMoon) {
  auto data = fx::airplane_moon_data();
  auto s = fx::airplane_moon_scene(data.categories);
  auto r = correction_metrics({s}, data.categories);
  EXPECT_EQ(r.ed, 1);
  EXPECT_EQ(r.cd, 0);
  EXPECT_EQ(r.cr_display(), "0.0");
  s.corrected = s.raw_detections;
  s.corrected[1].label = "moon";
  s.dispositions = {Disposition::kept, Disposition::excluded_from_export};
  r = correction_metrics({s}, data.categories);
  EXPECT_EQ(r.cd, 1);
  EXPECT_EQ(r.cr_display(), "100.0");
}

TEST(Correction, MatchesReferenceAndIgnoresOrderAndBackground) {
  SplitMix64 rng(4242);
  for (int trial = 0; trial < 300; ++trial) {
    auto m = fx::random_micro_scene(rng);
    std::vector<SceneRecord> scenes;
    for (const auto& im : m.images) {
      SceneRecord s;
      s.image_id = im.image_id;
      s.ground_truth = im.ground_truth;
      s.raw_detections = im.detections;
      s.corrected = im.detections;
      s.dispositions.assign(im.detections.size(), Disposition::kept);
      for (std::size_t i = 0; i < s.corrected.size(); ++i) {
        const double u = rng.uniform();
        if (u < 0.3) s.corrected[i].label = "c" + std::to_string(rng.integer(1, 4));
        else if (u < 0.4) s.dispositions[i] = Disposition::dropped;
      }
      scenes.push_back(s);
    }
    auto got = correction_metrics(scenes, m.cats);
    auto want = ref::correction(scenes, m.cats, 0.5);
    ASSERT_EQ(got.ed, want.ed);
    ASSERT_EQ(got.cd, want.cd);
    ASSERT_LE(got.cd, got.ed);

    auto reordered = scenes;
    std::reverse(reordered.begin(), reordered.end());
    for (auto& s : reordered) {
      Detection bg = det(s.image_id, 88888, {2000, 2000, 2010, 2010}, "c1", 0.5);
      s.raw_detections.push_back(bg);
      s.corrected.push_back(bg);
      s.dispositions.push_back(Disposition::kept);
    }
    auto again = correction_metrics(reordered, m.cats);
    ASSERT_EQ(again.ed, got.ed);
    ASSERT_EQ(again.cd, got.cd);
  }
}

TEST(Report, PercentCells) {
  EXPECT_EQ(percent_cell(0.521), "52.1");
  EXPECT_EQ(percent_cell(std::nullopt), "—");
  EXPECT_EQ(percent_cell(1.0), "100.0");
}

TEST(Report, TextTableShowsDashForUndefinedStrata) {
  auto cats = cats_ab();
  EvalImage im{1, {gt(1, {0, 0, 10, 10}, 1)}, {det(1, 1, {0, 0, 10, 10}, "a", 0.9)}};
  auto r = evaluate_images({im}, cats);
  auto corr = CorrectionReport::from_counts(1327, 996);
  auto text = render_report(&r, &corr, ReportFormat::text_table);
  EXPECT_NE(text.find("AP50:95"), std::string::npos);
  EXPECT_NE(text.find("100.0"), std::string::npos);
  EXPECT_NE(text.find("—"), std::string::npos);
  EXPECT_NE(text.find("75.0%"), std::string::npos);
  EXPECT_NE(text.find("IoU >= 0.50"), std::string::npos);
  EXPECT_EQ(text, render_report(&r, &corr, ReportFormat::text_table));
}

TEST(Report, JsonAndCsvAgree) {
  SplitMix64 rng(55);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = fx::random_micro_scene(rng);
    auto r = evaluate_images(m.images, m.cats);
    auto corr = CorrectionReport::from_counts(40, static_cast<std::int64_t>(rng.integer(0, 40)));
    auto j = json::parse(render_report(&r, &corr, ReportFormat::json));
    std::map<std::string, std::string> csv;
    std::istringstream in(render_report(&r, &corr, ReportFormat::csv));
    std::string line;
    std::getline(in, line);
    ASSERT_EQ(line, "section,key,value");
    while (std::getline(in, line)) {
      auto a = line.find(','), b = line.rfind(',');
      csv[line.substr(0, b)] = line.substr(b + 1);
      (void)a;
    }
    const std::pair<const char*, std::optional<double>> metrics[] = {
        {"ap_50_95", r.ap_50_95}, {"ap_50", r.ap_50}, {"ap_75", r.ap_75},
        {"ap_small", r.ap_small}, {"ap_medium", r.ap_medium}, {"ap_large", r.ap_large}};
    for (const auto& [key, v] : metrics) {
      const auto& jv = j["ap"][key];
      const auto& cv = csv.at(std::string("metric,") + key);
      if (!v) {
        ASSERT_TRUE(jv.is_null());
        ASSERT_EQ(cv, "");
      } else {
        ASSERT_EQ(jv.get<double>(), *v);
        ASSERT_EQ(std::stod(cv), *v);
      }
    }
    ASSERT_EQ(j["correction"]["ed"], 40);
    ASSERT_EQ(std::stod(csv.at("correction,cd")), j["correction"]["cd"].get<double>());
  }
}

TEST(Report, FormatNames) {
  EXPECT_EQ(report_format_from_string("text"), ReportFormat::text_table);
  EXPECT_EQ(report_format_from_string("json"), ReportFormat::json);
  EXPECT_EQ(report_format_from_string("csv"), ReportFormat::csv);
  EXPECT_EQ(report_format_from_string("xml"), std::nullopt);
}
