#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vla/category_map.hpp"
#include "vla/types.hpp"

namespace vla {

enum class ParseMode { strict, lenient };

/// Counters and warnings collected while reading COCO files. Lenient skips land here.
struct LoadStats {
  std::size_t images = 0;
  std::size_t annotations = 0;
  std::size_t detections = 0;
  std::size_t skipped = 0;
  std::size_t clamped = 0;
  std::vector<std::string> warnings;
};

struct AnnotationSet {
  CategoryMap categories;
  std::vector<SceneRecord> scenes;  // one skeleton per image, input order
};

/// Reads a COCO annotation file (images / annotations / categories).
AnnotationSet load_coco_annotations(const std::filesystem::path& path,
                                    ParseMode mode = ParseMode::strict,
                                    LoadStats* stats = nullptr);
AnnotationSet parse_coco_annotations(const std::string& text, ParseMode mode = ParseMode::strict,
                                     LoadStats* stats = nullptr);

/// Det-ids are `image_id * kDetIdStride + k` where k counts the image's entries from 1,
/// in the order they are received. Two readers of the same file agree on every id.
inline constexpr DetId kDetIdStride = 100000;
DetId make_det_id(ImageId image, std::size_t ordinal);

/// Reads a COCO results array. `scenes`, when given, restricts image ids and provides
/// image sizes for clamping; unknown image ids are an error (strict) or skipped (lenient).
std::vector<Detection> load_coco_results(const std::filesystem::path& path, const CategoryMap& cats,
                                         const std::vector<SceneRecord>* scenes = nullptr,
                                         ParseMode mode = ParseMode::strict,
                                         LoadStats* stats = nullptr);
std::vector<Detection> parse_coco_results(const std::string& text, const CategoryMap& cats,
                                          const std::vector<SceneRecord>* scenes = nullptr,
                                          ParseMode mode = ParseMode::strict,
                                          LoadStats* stats = nullptr);

/// Assigns detections to their scenes (by image id), clamping boxes to image bounds.
void attach_detections(std::vector<SceneRecord>& scenes, std::vector<Detection> dets,
                       LoadStats* stats = nullptr);

struct ExportStats {
  std::size_t written = 0;
  std::size_t excluded = 0;  // final label outside the scoring vocabulary
};

/// Serializes final detections as a COCO results array. Detections whose label is not in
/// the scoring vocabulary are left out and counted. Output is sorted by (image_id, det-id).
std::string render_coco_results(const std::vector<SceneRecord>& scenes, const CategoryMap& cats,
                                ExportStats* stats = nullptr);
ExportStats write_coco_results(const std::vector<SceneRecord>& scenes,
                               const std::filesystem::path& path, const CategoryMap& cats);

/// Serializes a plain detection list (no scenes) in the same schema.
std::string render_detections(const std::vector<Detection>& dets, const CategoryMap& cats,
                              ExportStats* stats = nullptr);

/// Writes an annotation file equivalent to the one `scenes` and `cats` were read from.
std::string render_coco_annotations(const std::vector<SceneRecord>& scenes,
                                    const CategoryMap& cats);

std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename, so readers never see a partial file.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vla
