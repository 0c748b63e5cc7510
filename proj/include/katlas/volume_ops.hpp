#pragma once

#include "katlas/image.hpp"

#include <cmath>
#include <optional>

namespace katlas {

enum class Interp { linear, nearest };

/// Trilinear sample at a continuous voxel index; `fill` outside [0, n-1].
float sample_linear(const Volume& v, const Eigen::Vector3d& ijk, float fill = kAirHU);
/// Nearest-voxel sample (round half up); `fill` outside the grid.
template <typename T>
T sample_nearest(const Image<T>& v, const Eigen::Vector3d& ijk, T fill) {
  const int i = static_cast<int>(std::floor(ijk.x() + 0.5));
  const int j = static_cast<int>(std::floor(ijk.y() + 0.5));
  const int k = static_cast<int>(std::floor(ijk.z() + 0.5));
  return v.contains(i, j, k) ? v(i, j, k) : fill;
}

/// Permute/flip axes so the direction matrix is the closest signed
/// permutation of identity. Voxel world positions are preserved.
Volume reorient_canonical(const Volume& v);
LabelMap reorient_canonical(const LabelMap& l);

/// Sample `v` at the world position of every voxel of `target`.
/// Throws for linear interpolation of a label map.
Volume resample(const Volume& v, const Geometry& target, Interp interp = Interp::linear);
LabelMap resample(const LabelMap& l, const Geometry& target, Interp interp = Interp::nearest);

/// Keep slices [z_begin, z_end). If `target_nz` is given, pad symmetrically
/// with the fill value (odd remainder goes above) or trim symmetrically
/// (odd remainder trimmed from above) to reach it. Retained voxels keep their
/// world positions.
Volume crop_pad_z(const Volume& v, int z_begin, int z_end, std::optional<int> target_nz = {});
LabelMap crop_pad_z(const LabelMap& l, int z_begin, int z_end, std::optional<int> target_nz = {});

/// Block-average downsampling by an integer factor.
Volume downsample(const Volume& v, int factor);
/// Geometry produced by `downsample` without touching data.
Geometry downsample_geometry(const Geometry& g, int factor);

} // namespace katlas
