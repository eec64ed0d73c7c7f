#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vla {

using ImageId = std::int64_t;
using DetId = std::int64_t;
using CategoryId = std::int64_t;

/// Axis-aligned box in corner form. Pixel coordinates, origin top-left, y down.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return width() * height(); }

  /// Throws ValidationError unless x1 <= x2, y1 <= y2 and all coordinates are finite.
  static BoundingBox make(double x1, double y1, double x2, double y2);
  /// COCO [x, y, w, h] to corner form. Throws on negative extents.
  static BoundingBox from_xywh(double x, double y, double w, double h);

  bool valid() const noexcept;
  BoundingBox clamped(double width, double height) const noexcept;
  BoundingBox translated(double dx, double dy) const noexcept {
    return {x1 + dx, y1 + dy, x2 + dx, y2 + dy};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct XywhBox {
  double x, y, w, h;
};

inline XywhBox to_xywh(const BoundingBox& b) { return {b.x1, b.y1, b.width(), b.height()}; }

enum class Stage { detect, review, correct, export_ };

std::string_view to_string(Stage s);
std::optional<Stage> stage_from_string(std::string_view s);

struct StageEvent {
  Stage stage;
  std::string note;    // verdict or label change, e.g. "unreasonable" or "orange -> moon"
  std::string source;  // agent that produced the event

  friend bool operator==(const StageEvent&, const StageEvent&) = default;
};

struct Detection {
  DetId id = 0;
  ImageId image_id = 0;
  BoundingBox box;
  std::string label;
  double score = 0.0;
  std::vector<StageEvent> history;

  /// Appends to the stage history. The first event must be `Stage::detect`.
  void record(Stage stage, std::string note, std::string source);
};

struct GroundTruthObject {
  std::int64_t annotation_id = 0;
  ImageId image_id = 0;
  BoundingBox box;
  CategoryId category_id = 0;
  bool iscrowd = false;
  double area = 0.0;
};

enum class Judgment { reasonable, unreasonable };

std::string_view to_string(Judgment j);
std::optional<Judgment> judgment_from_string(std::string_view s);

struct Verdict {
  DetId det_id = 0;
  Judgment judgment = Judgment::reasonable;
  std::optional<std::string> suspected_label;
  std::string rationale;

  friend bool operator==(const Verdict&, const Verdict&) = default;
};

enum class Disposition { kept, relabeled, dropped, excluded_from_export };

std::string_view to_string(Disposition d);
std::optional<Disposition> disposition_from_string(std::string_view s);

/// Everything the pipeline knows about one image.
struct SceneRecord {
  ImageId image_id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
  std::string image_url;
  std::vector<GroundTruthObject> ground_truth;
  std::vector<Detection> raw_detections;
  std::string caption;
  std::vector<Verdict> verdicts;
  // Same det-ids and boxes as raw_detections; labels and scores may differ.
  std::vector<Detection> corrected;
  // Parallel to `corrected`.
  std::vector<Disposition> dispositions;

  bool has_image_reference() const noexcept { return !file_name.empty() || !image_url.empty(); }
};

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
/// "airplane" -> "Airplane"; used when rendering labels in prompts.
std::string display_label(std::string_view label);

}  // namespace vla
