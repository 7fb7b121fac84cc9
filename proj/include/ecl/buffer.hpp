#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ecl/rng.hpp"
#include "ecl/types.hpp"

namespace ecl {

struct Transition {
  FactoredState state;
  int action = 0;
  double reward = 0.0;
  FactoredState next_state;
  int episode = 0;
  int t = 0;
};

/// Append-only transition store with ring eviction at capacity. Persisted as
/// line-delimited text: a header declaring the space, then one transition per
/// line ("s... | a | r | s'... | episode t"); doubles are printed with enough
/// digits to round-trip exactly.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(FactoredSpace space, std::size_t capacity = 200000);

  const FactoredSpace& space() const { return space_; }
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  /// i = 0 is the oldest retained transition.
  const Transition& operator[](std::size_t i) const {
    return data_[(oldest_ + i) % data_.size()];
  }

  void append(Transition tr);

  /// Uniform sample of `n` distinct indices (all indices when n >= size).
  std::vector<std::size_t> sample_indices(std::size_t n, RngStream& rng) const;

  void save(const std::string& path) const;
  static ReplayBuffer load(const std::string& path);

 private:
  FactoredSpace space_;
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t oldest_ = 0;  // physical index of the logically first element
};

}  // namespace ecl
