#include "vla/category_map.hpp"

#include "vla/error.hpp"

namespace vla {

namespace {
std::string key_of(std::string_view name) { return to_lower_ascii(trim(name)); }
}  // namespace

void CategoryMap::add(CategoryId id, std::string name, bool scored) {
  name = trim(name);
  if (name.empty()) throw ValidationError("category " + std::to_string(id) + " has an empty name");
  if (by_id_.contains(id)) throw ValidationError("duplicate category id " + std::to_string(id));
  auto key = key_of(name);
  if (by_key_.contains(key)) throw ValidationError("duplicate category name '" + name + "'");
  by_id_.emplace(id, cats_.size());
  by_key_.emplace(std::move(key), cats_.size());
  cats_.push_back({id, std::move(name), scored});
}

CategoryId CategoryMap::ensure(std::string_view name) {
  if (auto id = id_of(name)) return *id;
  CategoryId next = by_id_.empty() ? 1 : by_id_.rbegin()->first + 1;
  add(next, std::string(name), false);
  return next;
}

std::optional<CategoryId> CategoryMap::id_of(std::string_view name) const {
  const Category* c = find(name);
  if (!c) return std::nullopt;
  return c->id;
}

const Category* CategoryMap::find(CategoryId id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &cats_[it->second];
}

const Category* CategoryMap::find(std::string_view name) const {
  auto it = by_key_.find(key_of(name));
  return it == by_key_.end() ? nullptr : &cats_[it->second];
}

std::optional<std::string> CategoryMap::canonical(std::string_view name) const {
  const Category* c = find(name);
  if (!c) return std::nullopt;
  return c->name;
}

bool CategoryMap::is_scored(std::string_view name) const {
  const Category* c = find(name);
  return c != nullptr && c->scored;
}

std::vector<Category> CategoryMap::scored_categories() const {
  std::vector<Category> out;
  for (const auto& [id, idx] : by_id_) {
    if (cats_[idx].scored) out.push_back(cats_[idx]);
  }
  return out;
}

std::vector<std::string> CategoryMap::scoring_vocabulary() const {
  std::vector<std::string> out;
  for (const auto& c : scored_categories()) out.push_back(c.name);
  return out;
}

}  // namespace vla
