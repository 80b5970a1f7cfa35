#pragma once

#include <set>
#include <string>
#include <vector>

#include "errors.hpp"

namespace advrep {

/// Injective map from target-domain labels to source-domain labels.
class ClassMap {
 public:
  ClassMap() = default;

  /// Validates injectivity and, when source_classes > 0, the index range.
  explicit ClassMap(std::vector<int> map, int source_classes = 0) : map_(std::move(map)) {
    std::set<int> seen;
    for (std::size_t t = 0; t < map_.size(); ++t) {
      const int s = map_[t];
      if (s < 0 || (source_classes > 0 && s >= source_classes))
        throw ArgumentError("class map entry " + std::to_string(t) + " -> " + std::to_string(s) +
                            " is not a valid source class");
      if (!seen.insert(s).second)
        throw InjectivityError("class map sends two target classes to source class " + std::to_string(s));
    }
  }

  /// The "first ten" convention: target class k maps to source class k.
  static ClassMap identity(int num_target_classes) {
    std::vector<int> m(static_cast<std::size_t>(num_target_classes));
    for (int k = 0; k < num_target_classes; ++k) m[static_cast<std::size_t>(k)] = k;
    return ClassMap(std::move(m));
  }

  int operator()(int target_label) const {
    if (target_label < 0 || static_cast<std::size_t>(target_label) >= map_.size())
      throw LabelError("target label " + std::to_string(target_label) + " not covered by class map");
    return map_[static_cast<std::size_t>(target_label)];
  }

  /// Target class mapped onto the given source class, or -1.
  int inverse(int source_label) const {
    for (std::size_t t = 0; t < map_.size(); ++t)
      if (map_[t] == source_label) return static_cast<int>(t);
    return -1;
  }

  std::size_t size() const { return map_.size(); }
  const std::vector<int>& entries() const { return map_; }

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  std::vector<int> map_;
};

/// Tag for the "first ten" convention.
struct FirstTen {};

/// Identity on the first num_target_classes source classes.
inline ClassMap build_class_map(int num_target_classes, FirstTen = {}, int source_classes = 0) {
  if (source_classes > 0 && num_target_classes > source_classes)
    throw ArgumentError("first-ten mapping needs " + std::to_string(num_target_classes) + " source classes, model has " +
                        std::to_string(source_classes));
  return ClassMap::identity(num_target_classes);
}

/// Explicit list: entry t is the source class for target class t.
inline ClassMap build_class_map(int num_target_classes, std::vector<int> list, int source_classes = 0) {
  if (list.size() != static_cast<std::size_t>(num_target_classes))
    throw ArgumentError("class map lists " + std::to_string(list.size()) + " entries for " +
                        std::to_string(num_target_classes) + " target classes");
  return ClassMap(std::move(list), source_classes);
}

}  // namespace advrep
