#include "capfsar/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "capfsar/error.hpp"
#include "capfsar/rng.hpp"

namespace capfsar {

const Tensor& ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(value.detach(true));
  return tensors_.back();
}

const Tensor& ParamSet::get(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[static_cast<std::size_t>(it - names_.begin())];
}

bool ParamSet::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (Tensor& t : tensors_) t.zero_grad();
}

ParamSet ParamSet::clone() const {
  ParamSet out;
  for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i]);
  return out;
}

void ParamSet::extend(const ParamSet& other) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    if (contains(other.names_[i])) throw ConfigError("duplicate parameter name '" + other.names_[i] + "'");
    names_.push_back(other.names_[i]);
    tensors_.push_back(other.tensors_[i]);
  }
}

std::uint64_t ParamSet::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    for (char c : names_[i]) mix(static_cast<unsigned char>(c));
    for (std::size_t e : tensors_[i].shape()) mix(e);
    for (double v : tensors_[i].values()) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

Tensor seeded_uniform(std::uint64_t seed, const std::string& name, std::size_t fan_in,
                      std::size_t fan_out) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  CounterRng rng(seed, h);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  return Tensor({fan_in, fan_out}, std::move(w));
}

}  // namespace capfsar
