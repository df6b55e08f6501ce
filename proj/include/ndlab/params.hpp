#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndlab/mat.hpp"

namespace ndlab {

struct ParamEntry {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;  // false for batchnorm running stats
};

// Named tensor registry. Insertion order is the canonical iteration order for
// the optimizer, checkpoints, and hashing, so it is deterministic by design.
class ParamStore {
 public:
  Mat& add(const std::string& name, Mat value, bool trainable = true);
  bool has(const std::string& name) const;
  Mat& value(const std::string& name);
  const Mat& value(const std::string& name) const;
  Mat& grad(const std::string& name);
  bool trainable(const std::string& name) const;

  void zero_grads();
  std::size_t size() const { return entries_.size(); }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  // Total number of scalars across trainable tensors.
  std::size_t trainable_scalars() const;

  // FNV-1a over names, shapes and raw value bytes, in insertion order.
  std::uint64_t value_hash() const;

 private:
  ParamEntry& find(const std::string& name);
  const ParamEntry& find(const std::string& name) const;
  std::vector<ParamEntry> entries_;
};

}  // namespace ndlab
