#include "vla/types.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <utility>

#include "vla/error.hpp"

namespace vla {

BoundingBox BoundingBox::make(double x1, double y1, double x2, double y2) {
  BoundingBox b{x1, y1, x2, y2};
  if (!b.valid()) {
    throw ValidationError("invalid box (" + std::to_string(x1) + ", " + std::to_string(y1) +
                          ", " + std::to_string(x2) + ", " + std::to_string(y2) + ")");
  }
  return b;
}

BoundingBox BoundingBox::from_xywh(double x, double y, double w, double h) {
  return make(x, y, x + w, y + h);
}

bool BoundingBox::valid() const noexcept {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

BoundingBox BoundingBox::clamped(double width, double height) const noexcept {
  auto c = [](double v, double hi) { return std::clamp(v, 0.0, hi); };
  return {c(x1, width), c(y1, height), c(x2, width), c(y2, height)};
}

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::pair<E, std::string_view>, N>& table,
                        std::string_view s) {
  for (const auto& [e, name] : table) {
    if (name == s) return e;
  }
  return std::nullopt;
}

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E e) {
  for (const auto& [v, name] : table) {
    if (v == e) return name;
  }
  return "?";
}

constexpr std::array<std::pair<Stage, std::string_view>, 4> kStages{{
    {Stage::detect, "detect"},
    {Stage::review, "review"},
    {Stage::correct, "correct"},
    {Stage::export_, "export"},
}};

constexpr std::array<std::pair<Judgment, std::string_view>, 2> kJudgments{{
    {Judgment::reasonable, "reasonable"},
    {Judgment::unreasonable, "unreasonable"},
}};

constexpr std::array<std::pair<Disposition, std::string_view>, 4> kDispositions{{
    {Disposition::kept, "kept"},
    {Disposition::relabeled, "relabeled"},
    {Disposition::dropped, "dropped"},
    {Disposition::excluded_from_export, "excluded-from-export"},
}};

}  // namespace

std::string_view to_string(Stage s) { return name_of(kStages, s); }
std::optional<Stage> stage_from_string(std::string_view s) { return lookup(kStages, s); }
std::string_view to_string(Judgment j) { return name_of(kJudgments, j); }
std::optional<Judgment> judgment_from_string(std::string_view s) { return lookup(kJudgments, s); }
std::string_view to_string(Disposition d) { return name_of(kDispositions, d); }
std::optional<Disposition> disposition_from_string(std::string_view s) {
  return lookup(kDispositions, s);
}

void Detection::record(Stage stage, std::string note, std::string source) {
  if (history.empty() && stage != Stage::detect) {
    throw ValidationError("stage history must begin with the detect stage");
  }
  history.push_back({stage, std::move(note), std::move(source)});
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::string display_label(std::string_view label) {
  std::string out(label);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace vla
