#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vla/types.hpp"

namespace vla {

/// Intersection over union. Two degenerate boxes (zero union) give 0.
double iou(const BoundingBox& a, const BoundingBox& b) noexcept;

/// IoU against a crowd region: intersection over the detection's own area.
double crowd_iou(const BoundingBox& det, const BoundingBox& crowd) noexcept;

/// Spatial-isolation weight per box: w_i = 1 / (1 + sum_{j != i} IoU(B_i, B_j)).
/// Throws EmptyInputError on an empty list.
std::vector<double> iou_weights(std::span<const BoundingBox> boxes);

/// Probabilities below this are treated as 0 (0 log 0 = 0).
inline constexpr double kProbabilityFloor = 1e-12;

/// IoU-weighted entropy over the predicted-class probability of each object, natural log:
///   H_w = -sum_i P_i * w_i * log P_i
double weighted_entropy(std::span<const double> probs, std::span<const BoundingBox> boxes);

/// Plain per-object entropy -sum_i P_i log P_i (the w_i = 1 case).
double unweighted_entropy(std::span<const double> probs);

struct RelationEntry {
  std::size_t i = 0;
  std::size_t j = 0;
  std::string label;
  std::string relation;
  double p = 0.0;
};

/// Explicit joint distribution over (object label, pairwise relation).
class RelationTable {
 public:
  /// Validates: i, j < n, i != j, p >= 0, sum p = 1 within 1e-9.
  RelationTable(std::size_t object_count, std::vector<RelationEntry> entries);

  std::size_t object_count() const noexcept { return n_; }
  const std::vector<RelationEntry>& entries() const noexcept { return entries_; }
  double total() const noexcept;

  /// Parses the JSON array form [{i, j, label, relation, p}, ...]. When `object_count` is 0
  /// it is inferred as max index + 1.
  static RelationTable from_json(const std::string& text, std::size_t object_count = 0);
  std::string to_json() const;

 private:
  std::size_t n_;
  std::vector<RelationEntry> entries_;
};

inline constexpr double kRelationSumTolerance = 1e-9;

/// H(Y,R) = -sum P(y_i, r_ij) log P(y_i, r_ij), natural log.
double global_entropy(const RelationTable& table);

/// IG = H_w(Y) - H(Y,R). Not clamped; negative values are meaningful.
double information_gain(double weighted, double global) noexcept;

}  // namespace vla
