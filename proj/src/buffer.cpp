#include "ecl/buffer.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "ecl/errors.hpp"

namespace ecl {

ReplayBuffer::ReplayBuffer(FactoredSpace space, std::size_t capacity)
    : space_(std::move(space)), capacity_(capacity) {
  space_.validate();
  if (capacity_ == 0) throw ConfigError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::append(Transition tr) {
  if (static_cast<int>(tr.state.size()) != space_.dims() ||
      static_cast<int>(tr.next_state.size()) != space_.dims()) {
    throw ConfigError("ReplayBuffer: transition shape mismatch");
  }
  if (data_.size() < capacity_) {
    data_.push_back(std::move(tr));
  } else {
    data_[oldest_] = std::move(tr);
    oldest_ = (oldest_ + 1) % capacity_;
  }
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n,
                                                      RngStream& rng) const {
  const std::size_t total = data_.size();
  std::vector<std::size_t> out;
  if (n >= total) {
    out.resize(total);
    for (std::size_t i = 0; i < total; ++i) out[i] = i;
    return out;
  }
  out.reserve(n);
  // Floyd's algorithm: n distinct draws without replacement.
  std::unordered_set<std::size_t> chosen;
  for (std::size_t j = total - n; j < total; ++j) {
    const std::size_t t = rng.uniform_int(static_cast<std::uint32_t>(j + 1));
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  return out;
}

void ReplayBuffer::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("ReplayBuffer: cannot open " + path);
  out << "ecl-replay-v1\n";
  out << "dims " << space_.dims() << "\ncardinalities";
  for (int c : space_.cardinalities) out << ' ' << c;
  out << "\naction_cardinality " << space_.action_cardinality << '\n';
  out << "count " << data_.size() << '\n';
  char num[40];
  for (std::size_t i = 0; i < data_.size(); ++i) {
    const Transition& tr = (*this)[i];
    for (int v : tr.state) out << v << ' ';
    out << "| " << tr.action << " | ";
    std::snprintf(num, sizeof(num), "%.17g", tr.reward);
    out << num << " | ";
    for (int v : tr.next_state) out << v << ' ';
    out << "| " << tr.episode << ' ' << tr.t << '\n';
  }
}

ReplayBuffer ReplayBuffer::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("ReplayBuffer: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "ecl-replay-v1") throw ConfigError("ReplayBuffer: bad header in " + path);
  std::string word;
  int dims = 0;
  in >> word >> dims;
  FactoredSpace space;
  space.cardinalities.resize(static_cast<std::size_t>(dims));
  in >> word;
  for (int i = 0; i < dims; ++i) in >> space.cardinalities[static_cast<std::size_t>(i)];
  in >> word >> space.action_cardinality;
  std::size_t count = 0;
  in >> word >> count;
  ReplayBuffer buf(space, std::max<std::size_t>(200000, count));
  std::string bar;
  for (std::size_t i = 0; i < count; ++i) {
    Transition tr;
    tr.state.resize(static_cast<std::size_t>(dims));
    tr.next_state.resize(static_cast<std::size_t>(dims));
    for (int d = 0; d < dims; ++d) in >> tr.state[static_cast<std::size_t>(d)];
    in >> bar >> tr.action >> bar >> tr.reward >> bar;
    for (int d = 0; d < dims; ++d) in >> tr.next_state[static_cast<std::size_t>(d)];
    in >> bar >> tr.episode >> tr.t;
    if (!in) throw ConfigError("ReplayBuffer: truncated file " + path);
    buf.append(std::move(tr));
  }
  return buf;
}

}  // namespace ecl
