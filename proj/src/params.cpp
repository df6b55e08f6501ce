#include "ndlab/params.hpp"

#include <cstring>

#include "ndlab/errors.hpp"

namespace ndlab {

Mat& ParamStore::add(const std::string& name, Mat value, bool trainable) {
  if (has(name)) throw ParamError("parameter '" + name + "' already registered");
  ParamEntry e{name, std::move(value), Mat(0, 0), trainable};
  e.grad = Mat(e.value.rows, e.value.cols);
  entries_.push_back(std::move(e));
  return entries_.back().value;
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

ParamEntry& ParamStore::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e;
  throw ParamError("unknown parameter '" + name + "'");
}

const ParamEntry& ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw ParamError("unknown parameter '" + name + "'");
}

Mat& ParamStore::value(const std::string& name) { return find(name).value; }
const Mat& ParamStore::value(const std::string& name) const { return find(name).value; }
Mat& ParamStore::grad(const std::string& name) { return find(name).grad; }
bool ParamStore::trainable(const std::string& name) const { return find(name).trainable; }

void ParamStore::zero_grads() {
  for (auto& e : entries_)
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
}

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.data.size();
  return n;
}

std::uint64_t ParamStore::value_hash() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64-bit offset basis
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& e : entries_) {
    mix(e.name.data(), e.name.size());
    const std::int64_t dims[2] = {e.value.rows, e.value.cols};
    mix(dims, sizeof(dims));
    mix(e.value.data.data(), e.value.data.size() * sizeof(double));
  }
  return h;
}

}  // namespace ndlab
