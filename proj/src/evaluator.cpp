#include "vla/evaluator.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "vla/error.hpp"
#include "vla/geometry.hpp"
#include "vla/oracle.hpp"

namespace vla {

namespace {

std::array<double, kIouThresholdCount> make_iou_thresholds() {
  std::array<double, kIouThresholdCount> t{};
  const double step = (0.95 - 0.5) / static_cast<double>(kIouThresholdCount - 1);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) * step + 0.5;
  t.back() = 0.95;
  return t;
}

std::array<double, kRecallPointCount> make_recall_thresholds() {
  std::array<double, kRecallPointCount> r{};
  const double step = 1.0 / static_cast<double>(kRecallPointCount - 1);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<double>(i) * step;
  r.back() = 1.0;
  return r;
}

struct Det {
  DetId id = 0;  // score ties go to the lower det-id
  BoundingBox box;
  double score = 0.0;
  double area = 0.0;
};

struct Gt {
  BoundingBox box;
  bool crowd = false;
  double area = 0.0;
};

// Per (image, category, area range) outcome at every IoU threshold.
struct ImageEval {
  std::vector<double> scores;                              // sorted, truncated detections
  std::array<std::vector<char>, kIouThresholdCount> matched;  // per detection
  std::array<std::vector<char>, kIouThresholdCount> ignored;
  std::size_t npig = 0;  // non-ignored ground truth
};

ImageEval evaluate_image(std::vector<Det> dets, const std::vector<Gt>& gts_in,
                         std::pair<double, double> range) {
  ImageEval out;

  // Non-ignored ground truth first, original order otherwise.
  std::vector<Gt> gts;
  std::vector<char> gt_ignore;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& g : gts_in) {
      const bool ign = g.crowd || g.area < range.first || g.area > range.second;
      if (ign == (pass == 1)) {
        gts.push_back(g);
        gt_ignore.push_back(ign ? 1 : 0);
      }
    }
  }
  out.npig = static_cast<std::size_t>(std::count(gt_ignore.begin(), gt_ignore.end(), 0));

  std::stable_sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (dets.size() > kMaxDetsPerImage) dets.resize(kMaxDetsPerImage);

  std::vector<std::vector<double>> ious(dets.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t d = 0; d < dets.size(); ++d) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      ious[d][g] = gts[g].crowd ? crowd_iou(dets[d].box, gts[g].box) : iou(dets[d].box, gts[g].box);
    }
  }

  for (const auto& d : dets) out.scores.push_back(d.score);
  const auto& thresholds = coco_iou_thresholds();
  for (std::size_t t = 0; t < kIouThresholdCount; ++t) {
    std::vector<char> gt_taken(gts.size(), 0);
    auto& dm = out.matched[t];
    auto& di = out.ignored[t];
    dm.assign(dets.size(), 0);
    di.assign(dets.size(), 0);
    for (std::size_t d = 0; d < dets.size(); ++d) {
      double best = std::min(thresholds[t], 1.0 - 1e-10);
      std::optional<std::size_t> m;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (gt_taken[g] && !gts[g].crowd) continue;
        // Once a real match exists, ignored ground truth cannot replace it.
        if (m && !gt_ignore[*m] && gt_ignore[g]) break;
        if (ious[d][g] < best) continue;
        best = ious[d][g];
        m = g;
      }
      if (m) {
        dm[d] = 1;
        di[d] = gt_ignore[*m];
        gt_taken[*m] = 1;
      } else if (dets[d].area < range.first || dets[d].area > range.second) {
        di[d] = 1;
      }
    }
  }
  return out;
}

// Mean interpolated precision over the recall points; nullopt when there is no ground truth.
std::optional<double> average_precision(const std::vector<const ImageEval*>& evals, std::size_t t) {
  std::size_t npig = 0;
  for (const auto* e : evals) npig += e->npig;
  if (npig == 0) return std::nullopt;

  struct Row {
    double score;
    bool tp;
  };
  std::vector<Row> rows;
  for (const auto* e : evals) {
    for (std::size_t d = 0; d < e->scores.size(); ++d) {
      if (e->ignored[t][d]) continue;
      rows.push_back({e->scores[d], e->matched[t][d] != 0});
    }
  }
  // Stable: equal scores keep image order, then in-image rank.
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.score > b.score; });

  std::vector<double> recall(rows.size());
  std::vector<double> precision(rows.size());
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].tp ? ++tp : ++fp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(npig);
    precision[i] = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  for (std::size_t i = rows.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (double r : coco_recall_thresholds()) {
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / static_cast<double>(kRecallPointCount);
}

std::optional<double> mean_defined(const std::vector<std::optional<double>>& xs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

const std::array<double, kIouThresholdCount>& coco_iou_thresholds() {
  static const auto t = make_iou_thresholds();
  return t;
}

const std::array<double, kRecallPointCount>& coco_recall_thresholds() {
  static const auto r = make_recall_thresholds();
  return r;
}

std::string_view to_string(AreaRange a) {
  switch (a) {
    case AreaRange::all: return "all";
    case AreaRange::small: return "small";
    case AreaRange::medium: return "medium";
    case AreaRange::large: return "large";
  }
  return "?";
}

std::pair<double, double> area_bounds(AreaRange a) {
  switch (a) {
    case AreaRange::all: return {0.0, 1e10};
    case AreaRange::small: return {0.0, 32.0 * 32.0};
    case AreaRange::medium: return {32.0 * 32.0, 96.0 * 96.0};
    case AreaRange::large: return {96.0 * 96.0, 1e10};
  }
  return {0.0, 1e10};
}

EvalReport evaluate_images(const std::vector<EvalImage>& images_in, const CategoryMap& cats) {
  EvalReport rep;
  rep.images = images_in.size();

  std::vector<const EvalImage*> images;
  for (const auto& im : images_in) images.push_back(&im);
  std::stable_sort(images.begin(), images.end(),
                   [](const EvalImage* a, const EvalImage* b) { return a->image_id < b->image_id; });

  const auto scored = cats.scored_categories();
  std::map<CategoryId, std::size_t> cat_index;
  for (std::size_t k = 0; k < scored.size(); ++k) cat_index[scored[k].id] = k;

  // [image][category] inputs
  std::vector<std::vector<std::vector<Det>>> dets(images.size(), std::vector<std::vector<Det>>(scored.size()));
  std::vector<std::vector<std::vector<Gt>>> gts(images.size(), std::vector<std::vector<Gt>>(scored.size()));
  rep.per_category.resize(scored.size());
  for (std::size_t k = 0; k < scored.size(); ++k) {
    rep.per_category[k].id = scored[k].id;
    rep.per_category[k].name = scored[k].name;
  }

  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const auto& g : images[i]->ground_truth) {
      auto it = cat_index.find(g.category_id);
      if (it == cat_index.end()) continue;
      gts[i][it->second].push_back({g.box, g.iscrowd, g.area});
      if (!g.iscrowd) {
        ++rep.per_category[it->second].gt_count;
        for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
          const auto [lo, hi] = area_bounds(kAreaRanges[a]);
          if (g.area >= lo && g.area <= hi) ++rep.counts[a].gt;
        }
      }
    }
    for (const auto& d : images[i]->detections) {
      const Category* c = cats.find(d.label);
      if (!c || !c->scored) continue;
      const std::size_t k = cat_index.at(c->id);
      dets[i][k].push_back({d.id, d.box, d.score, d.box.area()});
      ++rep.per_category[k].det_count;
      for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
        const auto [lo, hi] = area_bounds(kAreaRanges[a]);
        if (d.box.area() >= lo && d.box.area() <= hi) ++rep.counts[a].detections;
      }
    }
  }

  // ap[area][threshold][category]
  std::array<std::array<std::vector<std::optional<double>>, kIouThresholdCount>, 4> ap;
  for (std::size_t a = 0; a < kAreaRanges.size(); ++a) {
    const auto range = area_bounds(kAreaRanges[a]);
    for (std::size_t t = 0; t < kIouThresholdCount; ++t) ap[a][t].resize(scored.size());
    for (std::size_t k = 0; k < scored.size(); ++k) {
      std::vector<ImageEval> evals;
      evals.reserve(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) {
        if (dets[i][k].empty() && gts[i][k].empty()) continue;
        evals.push_back(evaluate_image(dets[i][k], gts[i][k], range));
      }
      std::vector<const ImageEval*> ptrs;
      for (const auto& e : evals) ptrs.push_back(&e);
      for (std::size_t t = 0; t < kIouThresholdCount; ++t) ap[a][t][k] = average_precision(ptrs, t);
    }
  }

  auto over_thresholds = [&](std::size_t a) {
    std::vector<std::optional<double>> per_cat;
    for (std::size_t k = 0; k < scored.size(); ++k) {
      std::vector<std::optional<double>> xs;
      for (std::size_t t = 0; t < kIouThresholdCount; ++t) xs.push_back(ap[a][t][k]);
      per_cat.push_back(mean_defined(xs));
    }
    return per_cat;
  };

  for (std::size_t t = 0; t < kIouThresholdCount; ++t) rep.ap_per_threshold[t] = mean_defined(ap[0][t]);
  rep.ap_50_95 = mean_defined(std::vector<std::optional<double>>(rep.ap_per_threshold.begin(),
                                                                 rep.ap_per_threshold.end()));
  rep.ap_50 = rep.ap_per_threshold[0];
  rep.ap_75 = rep.ap_per_threshold[5];
  rep.ap_small = mean_defined(over_thresholds(1));
  rep.ap_medium = mean_defined(over_thresholds(2));
  rep.ap_large = mean_defined(over_thresholds(3));

  const auto all = over_thresholds(0);
  for (std::size_t k = 0; k < scored.size(); ++k) {
    rep.per_category[k].ap = all[k];
    rep.per_category[k].ap_50 = ap[0][0][k];
    rep.per_category[k].ap_75 = ap[0][5][k];
  }
  return rep;
}

std::vector<Detection> final_detections(const SceneRecord& scene) {
  if (scene.corrected.empty()) return scene.raw_detections;
  std::vector<Detection> out;
  for (std::size_t i = 0; i < scene.corrected.size(); ++i) {
    if (i < scene.dispositions.size() && scene.dispositions[i] == Disposition::dropped) continue;
    out.push_back(scene.corrected[i]);
  }
  return out;
}

EvalReport evaluate_coco(const std::vector<SceneRecord>& scenes, const CategoryMap& cats,
                         DetectionSet which) {
  std::vector<EvalImage> images;
  images.reserve(scenes.size());
  for (const auto& s : scenes) {
    images.push_back({s.image_id, s.ground_truth,
                      which == DetectionSet::raw ? s.raw_detections : final_detections(s)});
  }
  return evaluate_images(images, cats);
}

std::optional<double> CorrectionReport::cr() const {
  if (ed == 0) return std::nullopt;
  return 100.0 * static_cast<double>(cd) / static_cast<double>(ed);
}

std::string CorrectionReport::cr_display() const {
  if (ed == 0) return {};
  // Integer arithmetic: 1000 * CD / ED tenths of a percent, truncated.
  const std::int64_t tenths = (1000 * cd) / ed;
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

CorrectionReport CorrectionReport::from_counts(std::int64_t ed, std::int64_t cd, double match_iou) {
  if (ed < 0 || cd < 0 || cd > ed) {
    throw ValidationError("correction counts must satisfy 0 <= CD <= ED (got ED " + std::to_string(ed) +
                          ", CD " + std::to_string(cd) + ")");
  }
  return {ed, cd, match_iou};
}

CorrectionReport correction_metrics(const std::vector<SceneRecord>& scenes, const CategoryMap& cats,
                                    double match_iou) {
  CorrectionReport rep;
  rep.match_iou = match_iou;
  for (const auto& s : scenes) {
    std::map<DetId, const Detection*> final_by_id;
    for (std::size_t i = 0; i < s.corrected.size(); ++i) {
      if (i < s.dispositions.size() && s.dispositions[i] == Disposition::dropped) continue;
      final_by_id[s.corrected[i].id] = &s.corrected[i];
    }
    const bool corrected = !s.corrected.empty();
    const auto matches = match_detections(s.raw_detections, s.ground_truth, match_iou);
    for (std::size_t k = 0; k < s.raw_detections.size(); ++k) {
      if (!matches[k]) continue;
      const Detection& d = s.raw_detections[k];
      const std::string truth = gt_label(s.ground_truth[*matches[k]], cats);
      if (same_label(truth, d.label)) continue;
      ++rep.ed;
      const Detection* fin = &d;
      if (corrected) {
        auto it = final_by_id.find(d.id);
        fin = it == final_by_id.end() ? nullptr : it->second;
      }
      if (fin && same_label(truth, fin->label)) ++rep.cd;
    }
  }
  return rep;
}

}  // namespace vla
