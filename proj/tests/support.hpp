#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "capfsar/episodes.hpp"
#include "capfsar/featurestore.hpp"
#include "capfsar/rng.hpp"
#include "capfsar/synthetic.hpp"
#include "capfsar/tensor.hpp"

namespace testsupport {

inline std::vector<double> uniform_values(capfsar::CounterRng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline capfsar::Tensor random_tensor(capfsar::CounterRng& rng, capfsar::Shape shape, double lo = -1.0,
                                     double hi = 1.0, bool requires_grad = false) {
  const std::size_t n = capfsar::shape_numel(shape);
  return capfsar::Tensor(std::move(shape), uniform_values(rng, n, lo, hi), requires_grad);
}

inline capfsar::Tensor normal_tensor(capfsar::CounterRng& rng, capfsar::Shape shape, bool requires_grad = false) {
  std::vector<double> v(capfsar::shape_numel(shape));
  for (double& x : v) x = rng.normal();
  return capfsar::Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::size_t between(capfsar::CounterRng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.uniform_int(hi - lo + 1));
}

// Weighted sum with fixed random weights: a scalar whose gradient reaches
// every output coordinate with a different coefficient.
capfsar::Tensor weighted_sum(const capfsar::Tensor& x, std::uint64_t seed);

inline capfsar::FeatureStore synthetic_store(const capfsar::SyntheticSpec& spec) {
  return capfsar::make_store(capfsar::gen_synthetic(spec), capfsar::kFlagSynthetic);
}

inline capfsar::SplitSpec halves(std::uint32_t num_classes) {
  const auto c = capfsar::halve_classes(num_classes);
  return capfsar::SplitSpec{c.train, c.test};
}

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
