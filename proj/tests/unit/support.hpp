#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sca/random.hpp"
#include "sca/tensor.hpp"

namespace sca::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed,
                            double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& x : t.data()) x = rng.uniform(lo, hi);
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("sca_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sca::testing
