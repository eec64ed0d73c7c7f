#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vla/category_map.hpp"
#include "vla/types.hpp"

namespace vla {

inline constexpr std::size_t kIouThresholdCount = 10;
inline constexpr std::size_t kRecallPointCount = 101;
inline constexpr std::size_t kMaxDetsPerImage = 100;

/// 0.50, 0.55, ..., 0.95, computed the way numpy.linspace does so that threshold
/// comparisons agree with the reference implementation bit for bit.
const std::array<double, kIouThresholdCount>& coco_iou_thresholds();
/// 0.00, 0.01, ..., 1.00, same construction.
const std::array<double, kRecallPointCount>& coco_recall_thresholds();

enum class AreaRange { all, small, medium, large };
inline constexpr std::array<AreaRange, 4> kAreaRanges{AreaRange::all, AreaRange::small,
                                                     AreaRange::medium, AreaRange::large};
std::string_view to_string(AreaRange a);
/// Inclusive bounds on area in pixels^2.
std::pair<double, double> area_bounds(AreaRange a);

struct CategoryAp {
  CategoryId id = 0;
  std::string name;
  std::optional<double> ap;  // averaged over thresholds, all areas
  std::optional<double> ap_50;
  std::optional<double> ap_75;
  std::size_t gt_count = 0;  // non-crowd
  std::size_t det_count = 0;
};

struct StratumCounts {
  std::size_t gt = 0;  // non-crowd ground truth whose area falls in the stratum
  std::size_t detections = 0;
};

struct EvalReport {
  std::optional<double> ap_50_95;
  std::optional<double> ap_50;
  std::optional<double> ap_75;
  std::optional<double> ap_small;
  std::optional<double> ap_medium;
  std::optional<double> ap_large;
  std::array<std::optional<double>, kIouThresholdCount> ap_per_threshold{};
  std::vector<CategoryAp> per_category;  // scored categories, ascending id
  std::array<StratumCounts, 4> counts{};  // indexed like kAreaRanges
  std::size_t images = 0;
};

/// One image's worth of evaluation input.
struct EvalImage {
  ImageId image_id = 0;
  std::vector<GroundTruthObject> ground_truth;
  std::vector<Detection> detections;  // labels resolved against the category map
};

/// COCO bbox protocol: per (image, category) detections sorted by score and cut at 100,
/// greedy matching per IoU threshold, crowd regions absorb matches, precision made
/// monotone and sampled at 101 recall points. Detections whose label is not a scored
/// category are ignored. Strata without ground truth are undefined, never 0.
EvalReport evaluate_images(const std::vector<EvalImage>& images, const CategoryMap& cats);

enum class DetectionSet { raw, final_ };

/// Evaluates scenes using either the raw detections or the exported final detections
/// (dropped and out-of-vocabulary detections removed).
EvalReport evaluate_coco(const std::vector<SceneRecord>& scenes, const CategoryMap& cats,
                         DetectionSet which = DetectionSet::final_);

/// Final detections as they would be exported: `corrected` minus dropped entries, or the
/// raw detections when no correction ran.
std::vector<Detection> final_detections(const SceneRecord& scene);

struct CorrectionReport {
  std::int64_t ed = 0;
  std::int64_t cd = 0;
  double match_iou = 0.5;

  /// 100 * CD / ED; undefined when ED = 0.
  std::optional<double> cr() const;
  /// CR with one decimal, truncated toward zero ("44.9" for 597/1327). Empty when undefined.
  std::string cr_display() const;

  /// Throws ValidationError unless 0 <= CD <= ED.
  static CorrectionReport from_counts(std::int64_t ed, std::int64_t cd, double match_iou = 0.5);
};

/// ED: original detections that match a ground-truth object (greedy one-to-one by IoU,
/// IoU >= match_iou) under a different label. CD: those whose final label is the
/// ground-truth label. Unmatched detections never count.
CorrectionReport correction_metrics(const std::vector<SceneRecord>& scenes,
                                    const CategoryMap& cats, double match_iou = 0.5);

enum class ReportFormat { text_table, json, csv };
std::optional<ReportFormat> report_format_from_string(std::string_view s);

/// Deterministic rendering. Text tables show percentages with one decimal and a dash placeholder for
/// undefined values; json and csv carry full precision. Either report may be null.
std::string render_report(const EvalReport* eval, const CorrectionReport* corr,
                          ReportFormat format);

/// Percent cell for text tables: 0.521 -> "52.1", undefined -> the dash placeholder.
std::string percent_cell(const std::optional<double>& v);

}  // namespace vla
