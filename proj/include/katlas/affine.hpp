#pragma once

#include "katlas/image.hpp"
#include "katlas/ssc.hpp"

#include <Eigen/Core>

#include <filesystem>

namespace katlas {

/// 12-DOF homogeneous transform in world mm. The toolkit-wide convention is
/// pull-back: the matrix maps fixed-space points into moving space.
struct AffineTransform {
  Eigen::Matrix4d matrix = Eigen::Matrix4d::Identity();

  static AffineTransform identity() { return {}; }
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return matrix.topLeftCorner<3, 3>() * p + matrix.topRightCorner<3, 1>();
  }
  /// Throws Error("singular_affine") for a singular linear part.
  AffineTransform inverse() const;
  /// (this * other)(x) = this(other(x)).
  AffineTransform then_after(const AffineTransform& other) const {
    return {matrix * other.matrix};
  }
};

/// JSON: {"matrix": [16 numbers row-major], "maps": "fixed_to_moving_world_mm"}
void write_affine(const AffineTransform& t, const std::filesystem::path& path);
AffineTransform read_affine(const std::filesystem::path& path);

struct Correspondence {
  Eigen::Vector3d fixed_mm;
  Eigen::Vector3d moving_mm;
  double cost = 0.0;
};

/// Integer displacement labels {l * step : l in [-radius, radius]^3}, ordered
/// by tie-break preference: smaller squared norm first, then lexicographic.
std::vector<std::array<int, 3>> displacement_labels(int radius, int step);

/// Regular grid of control points inside the volume, centred, `spacing`
/// voxels apart.
std::vector<std::array<int, 3>> block_grid(const Geometry& g, int spacing);

struct BlockMatchParams {
  int grid_spacing = 8;
  int search_radius = 4;
  int step = 2;
  int cost_patch_radius = 2;
};

/// Exhaustive discrete search at each point; argmin with ties toward smaller
/// displacement norm, then lexicographic. Every label of a point is scored
/// over the same patch voxels: those that stay inside both grids for all
/// displacements in the search window. When that set is empty the point falls
/// back to patch_descriptor_cost.
std::vector<Correspondence> block_match_points(const DescriptorVolume& fixed,
                                               const DescriptorVolume& moving,
                                               const std::vector<std::array<int, 3>>& points,
                                               const BlockMatchParams& params);
std::vector<Correspondence> block_match(const DescriptorVolume& fixed,
                                        const DescriptorVolume& moving,
                                        const BlockMatchParams& params);

/// Least-squares 12-parameter fit of fixed -> moving points with trimmed
/// re-fitting rounds.
AffineTransform fit_affine(const std::vector<Correspondence>& corr, double trim_fraction = 0.2,
                           int rounds = 2);

struct AffineLevel {
  int factor;             ///< block-average downsampling factor
  BlockMatchParams match; ///< in voxels of the downsampled grid
  int iterations = 3;     ///< match/fit rounds, each on the re-warped moving image
};

struct AffineSchedule {
  std::vector<AffineLevel> levels{{4, {2, 4, 1, 2}, 3}, {2, {4, 4, 1, 2}, 3}, {1, {8, 3, 1, 2}, 2}};
  /// A level stops iterating once the update moves no volume corner by more
  /// than this many voxels of that level.
  double converged_corner_voxels = 0.1;
  double trim_fraction = 0.2;
  int rounds = 2;
  /// Fraction of control points (ranked by fixed-image local variance) used.
  double salient_fraction = 0.5;
};

AffineTransform register_affine(const Volume& fixed, const Volume& moving,
                                const AffineSchedule& schedule = {});

/// Largest distance (in fixed voxels) between the images of the eight
/// fixed-volume corners under two transforms.
double max_corner_error_voxels(const AffineTransform& a, const AffineTransform& b,
                               const Geometry& fixed);

} // namespace katlas
