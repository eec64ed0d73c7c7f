#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vla/types.hpp"

namespace vla {

struct Category {
  CategoryId id = 0;
  std::string name;
  bool scored = false;  // member of the scoring vocabulary
};

/// Bidirectional id <-> name registry. Names compare case-insensitively after trimming.
class CategoryMap {
 public:
  /// Throws ValidationError on a duplicate id or name.
  void add(CategoryId id, std::string name, bool scored);

  /// Registers an open-vocabulary label (not scored) if unknown and returns its id.
  /// Returns the existing id otherwise.
  CategoryId ensure(std::string_view name);

  std::optional<CategoryId> id_of(std::string_view name) const;
  const Category* find(CategoryId id) const;
  const Category* find(std::string_view name) const;
  /// Canonical spelling of a label if it is registered.
  std::optional<std::string> canonical(std::string_view name) const;

  bool contains(CategoryId id) const { return find(id) != nullptr; }
  bool is_scored(std::string_view name) const;

  /// Scored categories in ascending id order.
  std::vector<Category> scored_categories() const;
  std::vector<std::string> scoring_vocabulary() const;
  const std::vector<Category>& all() const noexcept { return cats_; }
  std::size_t size() const noexcept { return cats_.size(); }

 private:
  std::vector<Category> cats_;
  std::map<CategoryId, std::size_t> by_id_;
  std::map<std::string, std::size_t> by_key_;
};

}  // namespace vla
