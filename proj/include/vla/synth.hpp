#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "vla/coco_io.hpp"
#include "vla/types.hpp"

namespace vla {

enum class OverlapRegime { disjoint, clustered, mixed };

std::string_view to_string(OverlapRegime r);
std::optional<OverlapRegime> overlap_regime_from_string(std::string_view s);

struct SynthSpec {
  std::size_t image_count = 10;
  int image_width = 640;
  int image_height = 480;
  std::size_t min_objects = 1;
  std::size_t max_objects = 6;
  OverlapRegime regime = OverlapRegime::mixed;
  std::size_t category_count = 10;
  std::uint64_t seed = 0;

  /// Throws ValidationError for zero objects, fewer than two categories, etc.
  void validate() const;
};

struct SynthScenes {
  AnnotationSet annotations;
  std::vector<Detection> detections;  // one per ground-truth object, score 1.0
};

/// Minimum IoU between a clustered box and the box it was jittered from.
inline constexpr double kClusterMinIou = 0.3;
inline constexpr int kMaxPlacementAttempts = 10000;

/// Places integer-valued boxes per the overlap regime:
///  - disjoint: rejection-sampled so that every pair has IoU 0
///  - clustered: each box after the first is a jittered copy (IoU >= 0.3) of an earlier one
///  - mixed: each box after the first is clustered or free with equal odds
/// Deterministic in the seed. Throws InfeasibleSpecError when a box cannot be placed in
/// kMaxPlacementAttempts tries.
SynthScenes generate_scenes(const SynthSpec& spec);

}  // namespace vla
