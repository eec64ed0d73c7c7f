#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vla/category_map.hpp"
#include "vla/gateway.hpp"
#include "vla/types.hpp"

namespace vla {

/// Tunable ground-truth oracle standing in for the linguistic and classification agents.
struct OracleConfig {
  std::uint64_t seed = 0;
  double match_iou = 0.5;
  double alpha = 1.0;  // P(flag | label error)
  double beta = 0.0;   // P(flag | correct label)
  double gamma = 1.0;  // P(classifier returns the truth)

  void validate() const;
  static OracleConfig from_json(const nlohmann::json& j, std::uint64_t seed);
  nlohmann::json to_json() const;
};

/// Greedy one-to-one matching by descending IoU, pairs below `threshold` never match.
/// Ties go to the lower det-id, then the earlier ground truth. Crowd regions are skipped.
/// Returns, per detection, the index of its ground-truth object.
std::vector<std::optional<std::size_t>> match_detections(
    const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
    double threshold);

/// Ground-truth object of highest IoU >= threshold for a single region (crowd skipped).
std::optional<std::size_t> best_region_match(const BoundingBox& region,
                                             const std::vector<GroundTruthObject>& gts,
                                             double threshold);

/// Label of a ground-truth object, or "" when its category is unknown.
std::string gt_label(const GroundTruthObject& gt, const CategoryMap& cats);

bool same_label(std::string_view a, std::string_view b);

/// One verdict per detection. Label errors are flagged with probability alpha (suspected label
/// = ground truth), correct detections with probability beta, unmatched detections count as
/// label-error candidates without a suspected label. `scene` == nullptr means no ground truth
/// is available and raises OracleUnavailableError.
std::vector<Verdict> oracle_review(const SceneRecord* scene, const std::vector<Detection>& dets,
                                   const CategoryMap& cats, const OracleConfig& cfg);

/// Truth with probability gamma (confidence 1.0), otherwise a uniformly chosen wrong candidate
/// (confidence 0.5). No ground-truth match, or nothing to choose from: ("unknown", 0.0).
ClassifyResult oracle_classify(const SceneRecord* scene, const ClassificationRequest& req,
                               const CategoryMap& cats, const OracleConfig& cfg);

/// Deterministic caption built from the ground-truth labels.
std::string oracle_caption(const SceneRecord& scene, const CategoryMap& cats);

struct NoiseRecord {
  ImageId image_id = 0;
  DetId det_id = 0;
  std::string old_label;
  std::string new_label;

  nlohmann::json to_json() const;
  friend bool operator==(const NoiseRecord&, const NoiseRecord&) = default;
};

/// Relabels each correctly-labeled detection (matched at `match_iou`, label equal to the ground
/// truth) with probability `rate` to a different scoring-vocabulary label. Returns the manifest.
std::vector<NoiseRecord> inject_label_noise(std::vector<SceneRecord>& scenes, double rate,
                                            std::uint64_t seed, const CategoryMap& cats,
                                            double match_iou = 0.5);

std::string render_noise_manifest(const std::vector<NoiseRecord>& manifest);

class OracleLinguisticAgent : public LinguisticAgent {
 public:
  OracleLinguisticAgent(const CategoryMap& cats, OracleConfig cfg) : cats_(cats), cfg_(cfg) {}
  std::string chat(const ChatMessage& msg, const CallContext& ctx) override;

 private:
  const CategoryMap& cats_;
  OracleConfig cfg_;
};

class OracleClassifierAgent : public ClassifierAgent {
 public:
  OracleClassifierAgent(const CategoryMap& cats, OracleConfig cfg) : cats_(cats), cfg_(cfg) {}
  ClassifyResult classify(const ClassificationRequest& req, const CallContext& ctx) override;

 private:
  const CategoryMap& cats_;
  OracleConfig cfg_;
};

}  // namespace vla
