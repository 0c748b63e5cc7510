#pragma once

#include "katlas/image.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace testutil {

inline katlas::Geometry grid(int nx, int ny, int nz, double s = 1.0) {
  katlas::Geometry g;
  g.dims = {nx, ny, nz};
  g.spacing = Eigen::Vector3d::Constant(s);
  return g;
}

inline katlas::Volume random_volume(const katlas::Geometry& g, std::uint64_t seed,
                                    double lo = -200.0, double hi = 200.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  katlas::Volume v(g, 0.0f);
  for (std::size_t n = 0; n < v.size(); ++n)
    v[n] = static_cast<float>(u(rng));
  return v;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() /
           ("katlas_test_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

} // namespace testutil
