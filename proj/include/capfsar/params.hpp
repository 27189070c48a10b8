#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capfsar/tensor.hpp"

namespace capfsar {

/// Ordered collection of named trainable tensors. Copies share storage; use
/// clone() for an independent set.
class ParamSet {
 public:
  /// Registers a leaf tensor (marked requires_grad). Names must be unique.
  const Tensor& add(std::string name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t numel() const;
  std::span<Tensor> tensors() noexcept { return tensors_; }
  std::span<const Tensor> tensors() const noexcept { return tensors_; }
  const std::vector<std::string>& names() const noexcept { return names_; }

  void zero_grad();
  ParamSet clone() const;
  /// Appends every tensor of `other` (names must not collide).
  void extend(const ParamSet& other);
  /// Order-sensitive FNV-1a digest over names, shapes and value bits.
  std::uint64_t digest() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

/// [fan_in x fan_out] weights uniform in +-1/sqrt(fan_in), drawn from a
/// stream keyed by (seed, name) so each tensor's values are independent of
/// registration order.
Tensor seeded_uniform(std::uint64_t seed, const std::string& name, std::size_t fan_in,
                      std::size_t fan_out);

}  // namespace capfsar
