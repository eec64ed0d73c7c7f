#include "vla/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "vla/error.hpp"
#include "vla/geometry.hpp"
#include "vla/rng.hpp"

namespace vla {

namespace {

constexpr std::array<std::string_view, 80> kCocoNames{
    "person",        "bicycle",      "car",           "motorcycle",    "airplane",
    "bus",           "train",        "truck",         "boat",          "traffic light",
    "fire hydrant",  "stop sign",    "parking meter", "bench",         "bird",
    "cat",           "dog",          "horse",         "sheep",         "cow",
    "elephant",      "bear",         "zebra",         "giraffe",       "backpack",
    "umbrella",      "handbag",      "tie",           "suitcase",      "frisbee",
    "skis",          "snowboard",    "sports ball",   "kite",          "baseball bat",
    "baseball glove", "skateboard",  "surfboard",     "tennis racket", "bottle",
    "wine glass",    "cup",          "fork",          "knife",         "spoon",
    "bowl",          "banana",       "apple",         "sandwich",      "orange",
    "broccoli",      "carrot",       "hot dog",       "pizza",         "donut",
    "cake",          "chair",        "couch",         "potted plant",  "bed",
    "dining table",  "toilet",       "tv",            "laptop",        "mouse",
    "remote",        "keyboard",     "cell phone",    "microwave",     "oven",
    "toaster",       "sink",         "refrigerator",  "book",          "clock",
    "vase",          "scissors",     "teddy bear",    "hair drier",    "toothbrush"};

std::string category_name(std::size_t k) {
  if (k < kCocoNames.size()) return std::string(kCocoNames[k]);
  return "class " + std::to_string(k + 1);
}

class Placer {
 public:
  Placer(const SynthSpec& spec, SplitMix64& rng) : spec_(spec), rng_(rng) {}

  // Side lengths are log-uniform so every COCO area stratum gets objects.
  BoundingBox free_box() {
    const double max_side = std::max(9.0, std::min(spec_.image_width, spec_.image_height) / 2.0);
    const double w = std::round(std::exp(rng_.uniform(std::log(8.0), std::log(max_side))));
    const double h = std::round(std::exp(rng_.uniform(std::log(8.0), std::log(max_side))));
    const double x = static_cast<double>(rng_.integer(0, static_cast<std::int64_t>(spec_.image_width - w)));
    const double y = static_cast<double>(rng_.integer(0, static_cast<std::int64_t>(spec_.image_height - h)));
    return {x, y, x + w, y + h};
  }

  std::optional<BoundingBox> jittered(const BoundingBox& anchor) {
    const double w = anchor.width() * rng_.uniform(0.85, 1.15);
    const double h = anchor.height() * rng_.uniform(0.85, 1.15);
    const double dx = anchor.width() * rng_.uniform(-0.2, 0.2);
    const double dy = anchor.height() * rng_.uniform(-0.2, 0.2);
    BoundingBox b{std::round(anchor.x1 + dx), std::round(anchor.y1 + dy), 0.0, 0.0};
    b.x2 = b.x1 + std::max(1.0, std::round(w));
    b.y2 = b.y1 + std::max(1.0, std::round(h));
    if (b.x1 < 0 || b.y1 < 0 || b.x2 > spec_.image_width || b.y2 > spec_.image_height) return std::nullopt;
    if (iou(anchor, b) < kClusterMinIou) return std::nullopt;
    return b;
  }

 private:
  const SynthSpec& spec_;
  SplitMix64& rng_;
};

bool disjoint_from_all(const BoundingBox& b, const std::vector<BoundingBox>& placed) {
  return std::all_of(placed.begin(), placed.end(), [&](const BoundingBox& p) { return iou(b, p) == 0.0; });
}

}  // namespace

std::string_view to_string(OverlapRegime r) {
  switch (r) {
    case OverlapRegime::disjoint: return "disjoint";
    case OverlapRegime::clustered: return "clustered";
    case OverlapRegime::mixed: return "mixed";
  }
  return "?";
}

std::optional<OverlapRegime> overlap_regime_from_string(std::string_view s) {
  if (s == "disjoint") return OverlapRegime::disjoint;
  if (s == "clustered") return OverlapRegime::clustered;
  if (s == "mixed") return OverlapRegime::mixed;
  return std::nullopt;
}

void SynthSpec::validate() const {
  if (min_objects < 1) throw ValidationError("synth: at least one object per image");
  if (max_objects < min_objects) throw ValidationError("synth: max_objects < min_objects");
  if (category_count < 2) throw ValidationError("synth: at least two categories");
  if (image_width < 16 || image_height < 16) throw ValidationError("synth: image must be at least 16x16");
  if (max_objects >= static_cast<std::size_t>(kDetIdStride)) throw ValidationError("synth: too many objects per image");
}

SynthScenes generate_scenes(const SynthSpec& spec) {
  spec.validate();
  SplitMix64 rng(mix64(spec.seed ^ 0x5eedull));
  Placer placer(spec, rng);

  SynthScenes out;
  for (std::size_t k = 0; k < spec.category_count; ++k) {
    out.annotations.categories.add(static_cast<CategoryId>(k + 1), category_name(k), true);
  }

  std::int64_t next_annotation = 1;
  for (std::size_t i = 0; i < spec.image_count; ++i) {
    SceneRecord s;
    s.image_id = static_cast<ImageId>(i + 1);
    s.width = spec.image_width;
    s.height = spec.image_height;
    char name[32];
    std::snprintf(name, sizeof name, "synth_%06zu.jpg", i + 1);
    s.file_name = name;

    const auto count = static_cast<std::size_t>(rng.integer(
        static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
    std::vector<BoundingBox> placed;
    for (std::size_t n = 0; n < count; ++n) {
      const bool cluster = n > 0 && (spec.regime == OverlapRegime::clustered ||
                                     (spec.regime == OverlapRegime::mixed && rng.uniform() < 0.5));
      std::optional<BoundingBox> box;
      for (int attempt = 0; attempt < kMaxPlacementAttempts && !box; ++attempt) {
        if (cluster) {
          const auto& anchor = placed[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(placed.size()) - 1))];
          box = placer.jittered(anchor);
        } else {
          auto b = placer.free_box();
          if (spec.regime != OverlapRegime::disjoint || disjoint_from_all(b, placed)) box = b;
        }
      }
      if (!box) {
        throw InfeasibleSpecError("synth: could not place object " + std::to_string(n + 1) +
                                  " in image " + std::to_string(s.image_id) + " after " +
                                  std::to_string(kMaxPlacementAttempts) + " attempts");
      }
      placed.push_back(*box);

      GroundTruthObject g;
      g.annotation_id = next_annotation++;
      g.image_id = s.image_id;
      g.box = *box;
      g.category_id = rng.integer(1, static_cast<std::int64_t>(spec.category_count));
      g.area = box->area();
      s.ground_truth.push_back(g);

      Detection d;
      d.id = make_det_id(s.image_id, n + 1);
      d.image_id = s.image_id;
      d.box = *box;
      d.label = out.annotations.categories.find(g.category_id)->name;
      d.score = 1.0;
      d.record(Stage::detect, d.label, "synth");
      out.detections.push_back(std::move(d));
    }
    out.annotations.scenes.push_back(std::move(s));
  }
  return out;
}

}  // namespace vla
