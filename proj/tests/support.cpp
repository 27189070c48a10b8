#include "support.hpp"

#include <atomic>
#include <unistd.h>

#include "capfsar/ops.hpp"

namespace testsupport {

capfsar::Tensor weighted_sum(const capfsar::Tensor& x, std::uint64_t seed) {
  capfsar::CounterRng rng(seed, 77);
  const capfsar::Tensor w(x.shape(), uniform_values(rng, x.numel(), 0.5, 1.5));
  return capfsar::sum(capfsar::mul(x, w));
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("capfsar_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace testsupport
