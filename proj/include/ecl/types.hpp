#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "ecl/errors.hpp"
#include "ecl/rng.hpp"

namespace ecl {

/// A factored state: one categorical value per state dimension.
using FactoredState = std::vector<int>;

/// Shape of the factored state/action space. Input variables for the
/// per-dimension predictors are the state dimensions followed by the single
/// categorical action variable; each variable occupies a one-hot block.
struct FactoredSpace {
  std::vector<int> cardinalities;
  int action_cardinality = 0;

  int dims() const { return static_cast<int>(cardinalities.size()); }
  /// Number of input variables: state dims plus the action.
  int var_count() const { return dims() + 1; }
  int var_cardinality(int var) const {
    return var == dims() ? action_cardinality
                         : cardinalities[static_cast<std::size_t>(var)];
  }
  int onehot_width() const {
    int w = action_cardinality;
    for (int c : cardinalities) w += c;
    return w;
  }
  int var_offset(int var) const {
    int off = 0;
    for (int i = 0; i < var; ++i) off += var_cardinality(i);
    return off;
  }
  void validate() const {
    if (cardinalities.empty() || action_cardinality < 1) {
      throw ConfigError("FactoredSpace: needs at least one state dim and action");
    }
    for (int c : cardinalities) {
      if (c < 1) throw ConfigError("FactoredSpace: cardinalities must be >= 1");
    }
  }
  bool contains(const FactoredState& s) const {
    if (static_cast<int>(s.size()) != dims()) return false;
    for (int i = 0; i < dims(); ++i) {
      if (s[static_cast<std::size_t>(i)] < 0 ||
          s[static_cast<std::size_t>(i)] >= cardinalities[static_cast<std::size_t>(i)]) {
        return false;
      }
    }
    return true;
  }
  bool operator==(const FactoredSpace&) const = default;
};

inline std::uint64_t state_hash(const FactoredState& s, std::uint64_t salt = 0) {
  std::uint64_t h = fnv1a64(&salt, sizeof(salt));
  for (int v : s) h = fnv1a64(&v, sizeof(v), h);
  return h;
}

}  // namespace ecl
