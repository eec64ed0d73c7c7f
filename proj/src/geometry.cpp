#include "vla/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "vla/error.hpp"

namespace vla {

namespace {

double intersection(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double plogp(double p) {
  if (p < kProbabilityFloor) return 0.0;
  return p * std::log(p);
}

}  // namespace

double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double inter = intersection(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::min(1.0, inter / uni);
}

double crowd_iou(const BoundingBox& det, const BoundingBox& crowd) noexcept {
  const double inter = intersection(det, crowd);
  const double a = det.area();
  if (inter <= 0.0 || a <= 0.0) return 0.0;
  return std::min(1.0, inter / a);
}

std::vector<double> iou_weights(std::span<const BoundingBox> boxes) {
  if (boxes.empty()) throw EmptyInputError("iou_weights needs at least one box");
  std::vector<double> overlap(boxes.size(), 0.0);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      const double v = iou(boxes[i], boxes[j]);
      overlap[i] += v;
      overlap[j] += v;
    }
  }
  std::vector<double> w(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) w[i] = 1.0 / (1.0 + overlap[i]);
  return w;
}

double weighted_entropy(std::span<const double> probs, std::span<const BoundingBox> boxes) {
  if (probs.size() != boxes.size()) {
    throw ValidationError("weighted_entropy: " + std::to_string(probs.size()) +
                          " probabilities for " + std::to_string(boxes.size()) + " boxes");
  }
  if (probs.empty()) return 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probability outside [0,1]");
  }
  const auto w = iou_weights(boxes);
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) h -= w[i] * plogp(probs[i]);
  return std::max(0.0, h);
}

double unweighted_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probability outside [0,1]");
    h -= plogp(p);
  }
  return std::max(0.0, h);
}

double global_entropy(const RelationTable& table) {
  double h = 0.0;
  for (const auto& e : table.entries()) h -= plogp(e.p);
  return std::max(0.0, h);
}

double information_gain(double weighted, double global) noexcept { return weighted - global; }

}  // namespace vla
