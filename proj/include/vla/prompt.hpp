#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vla/category_map.hpp"
#include "vla/types.hpp"

namespace vla {

enum class ResponseFormat { structured_json, free_text };

std::string_view to_string(ResponseFormat f);
std::optional<ResponseFormat> response_format_from_string(std::string_view s);

/// The closing question of every review prompt. Not configurable.
inline constexpr std::string_view kReviewQuestion =
    "Are these results reasonable based on the scene context?";

/// Prompt wording. Defaults reproduce the published example phrasing; every field except the
/// closing question can be overridden from the run config.
struct PromptTemplates {
  std::string caption_instruction =
      "Write a one-to-three-sentence caption that summarizes the scene in this image. "
      "Begin with \"The image shows\".";
  std::string caption_prefix = "Scene caption: ";
  std::string review_intro = "The object detector identified the following objects:";
  std::string structured_directive =
      "Respond with only a JSON array containing exactly one object per detection, keyed by "
      "det_id: [{\"det_id\": <int>, \"judgment\": \"reasonable\" | \"unreasonable\", "
      "\"suspected_label\": <string or null>, \"rationale\": <string>}]. When a detection is "
      "unreasonable, set suspected_label to the most likely correct object name if you can "
      "tell.";
  std::string free_text_directive;  // empty: the bare question, as in the published example
  bool include_scores = false;
};

struct DetectionLine {
  DetId det_id = 0;
  std::string label;
  long long x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  std::optional<double> score;
};

struct ReviewPrompt {
  std::string caption;
  std::vector<DetectionLine> lines;  // one per detection, input order
  std::string text;
  ResponseFormat format = ResponseFormat::structured_json;
};

/// Integer rendering of a coordinate, rounding half away from zero.
long long render_coordinate(double v) noexcept;

/// "Airplane, coordinates: (320, 49), (640, 150)"
std::string format_detection_line(std::string_view label, const BoundingBox& box);

std::string build_caption_request(const SceneRecord& scene, const PromptTemplates& t = {});

/// Throws EmptyInputError when `dets` is empty.
ReviewPrompt build_review_prompt(const std::string& caption, const std::vector<Detection>& dets,
                                 ResponseFormat format, const PromptTemplates& t = {});

/// Returns exactly one verdict per detection, in detection order.
///
/// Structured mode expects the JSON schema embedded in the prompt directive and throws
/// ProtocolError (carrying the raw response) when it cannot be parsed, names an unknown
/// det_id, or repeats one. Free-text mode matches sentences of the form
/// "<Label> detection is reasonable|unreasonable" to detections by label and list order and
/// reads a suspected label from a "likely the <label>" clause. `vocabulary`, when given, lets
/// multi-word suspected labels ("traffic light") be recognised. Detections that the response
/// never mentions are judged reasonable.
std::vector<Verdict> parse_verdicts(const std::string& response, const std::vector<Detection>& dets,
                                    ResponseFormat format, const CategoryMap* vocabulary = nullptr);

std::vector<Verdict> parse_structured_verdicts(const std::string& response,
                                               const std::vector<Detection>& dets);
std::vector<Verdict> parse_free_text_verdicts(const std::string& response,
                                              const std::vector<Detection>& dets,
                                              const CategoryMap* vocabulary = nullptr);

/// Serializes verdicts in the structured response schema.
std::string render_verdicts_json(const std::vector<Verdict>& verdicts);
/// Serializes verdicts in the published free-text phrasing. `dets` supplies the labels.
std::string render_verdicts_free_text(const std::vector<Verdict>& verdicts,
                                      const std::vector<Detection>& dets);

/// Recovers detection lines from a rendered review prompt ("[det_id N] " prefixes are
/// optional; lines without one get ids 1, 2, ...).
std::vector<DetectionLine> parse_prompt_detection_lines(const std::string& prompt);

struct ClassificationRequest {
  ImageId image_id = 0;
  DetId det_id = 0;
  std::string file_name;
  std::string image_url;
  BoundingBox region;
  std::vector<std::string> candidates;

  /// "Region (100, 350), (190, 480): choose one of [...]"
  std::string describe() const;
};

/// Candidates are the scoring vocabulary plus the suspected label when it is not already a
/// member (case-insensitive).
ClassificationRequest build_classification_request(const SceneRecord& scene, const Detection& det,
                                                   const std::vector<std::string>& vocabulary,
                                                   const std::optional<std::string>& suspected);

}  // namespace vla
