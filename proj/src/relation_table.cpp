#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "vla/error.hpp"
#include "vla/geometry.hpp"

namespace vla {

using nlohmann::json;

RelationTable::RelationTable(std::size_t object_count, std::vector<RelationEntry> entries)
    : n_(object_count), entries_(std::move(entries)) {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    const auto& e = entries_[k];
    const auto ctx = "relation entry " + std::to_string(k);
    if (e.i >= n_ || e.j >= n_) {
      throw ValidationError(ctx + ": object index out of range [0, " + std::to_string(n_) + ")");
    }
    if (e.i == e.j) throw ValidationError(ctx + ": i and j must differ");
    if (!(e.p >= 0.0) || !std::isfinite(e.p)) throw ValidationError(ctx + ": negative probability");
  }
  const double sum = total();
  if (std::fabs(sum - 1.0) > kRelationSumTolerance) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", sum);
    throw ValidationError(std::string("relation table is not normalized: sum of p = ") + buf);
  }
}

double RelationTable::total() const noexcept {
  // Neumaier summation keeps the normalization check meaningful for large tables.
  double sum = 0.0;
  double comp = 0.0;
  for (const auto& e : entries_) {
    const double t = sum + e.p;
    comp += std::fabs(sum) >= std::fabs(e.p) ? (sum - t) + e.p : (e.p - t) + sum;
    sum = t;
  }
  return sum + comp;
}

RelationTable RelationTable::from_json(const std::string& text, std::size_t object_count) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed relation table: ") + e.what(), e.byte);
  }
  if (!root.is_array()) throw ValidationError("relation table must be a JSON array");
  std::vector<RelationEntry> entries;
  std::size_t max_index = 0;
  for (std::size_t k = 0; k < root.size(); ++k) {
    const auto& r = root[k];
    const auto ctx = "relation entry " + std::to_string(k);
    if (!r.is_object() || !r.contains("i") || !r.contains("j") || !r.contains("p") ||
        !r["i"].is_number_unsigned() || !r["j"].is_number_unsigned() || !r["p"].is_number()) {
      throw ValidationError(ctx + ": expected {i:uint, j:uint, label, relation, p:number}");
    }
    RelationEntry e;
    e.i = r["i"].get<std::size_t>();
    e.j = r["j"].get<std::size_t>();
    e.label = r.value("label", std::string{});
    e.relation = r.value("relation", std::string{});
    e.p = r["p"].get<double>();
    max_index = std::max({max_index, e.i, e.j});
    entries.push_back(std::move(e));
  }
  const std::size_t n = object_count != 0 ? object_count : (entries.empty() ? 0 : max_index + 1);
  return RelationTable(n, std::move(entries));
}

std::string RelationTable::to_json() const {
  json arr = json::array();
  for (const auto& e : entries_) {
    arr.push_back({{"i", e.i}, {"j", e.j}, {"label", e.label}, {"relation", e.relation}, {"p", e.p}});
  }
  return arr.dump();
}

}  // namespace vla
