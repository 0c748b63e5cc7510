#pragma once

#include "katlas/affine.hpp"
#include "katlas/image.hpp"
#include "katlas/volume_ops.hpp"

#include <filesystem>

namespace katlas {

/// Per-voxel displacement in fixed-grid voxel units, pull-back convention:
/// the voxel at x samples the moving image at x + u(x).
struct DenseField {
  Geometry geometry;
  std::vector<Eigen::Vector3f> disp;

  static DenseField zeros(const Geometry& g) {
    return {g, std::vector<Eigen::Vector3f>(g.voxel_count(), Eigen::Vector3f::Zero())};
  }
  static DenseField constant(const Geometry& g, const Eigen::Vector3f& c) {
    return {g, std::vector<Eigen::Vector3f>(g.voxel_count(), c)};
  }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(geometry.dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(geometry.dims[1]) * k);
  }
  Eigen::Vector3f& at(int i, int j, int k) { return disp[index(i, j, k)]; }
  const Eigen::Vector3f& at(int i, int j, int k) const { return disp[index(i, j, k)]; }
};

/// Trilinear field sample; positions outside the grid are clamped to it.
Eigen::Vector3f sample_field(const DenseField& u, const Eigen::Vector3d& ijk);

/// out(x) = moving(A(world(x + u(x)))) on the field's geometry.
Volume warp_volume(const Volume& moving, const DenseField& field, const AffineTransform& affine,
                   Interp interp = Interp::linear);
LabelMap warp_volume(const LabelMap& moving, const DenseField& field,
                     const AffineTransform& affine, Interp interp = Interp::nearest);

/// (u o v)(x) = v(x) + u(x + v(x)): apply v, then u, in pull-back order.
DenseField compose(const DenseField& u, const DenseField& v);

struct FieldInversion {
  DenseField inverse;
  bool converged = false;
  int iterations = 0;
  double mean_residual = 0.0; ///< mean |compose(u, inverse)| in voxels
  double max_residual = 0.0;
  std::vector<double> residual_history; ///< mean residual after each iteration
};

/// Fixed-point inversion v <- -u(x + v(x)). Non-convergence is flagged, not
/// thrown.
FieldInversion invert_field(const DenseField& u, int max_iter = 30, double tol = 0.01);

/// Pull atlas labels into subject space. `affine` maps atlas world to
/// subject world and `field` is the forward (atlas-grid) displacement; both
/// are inverted internally.
LabelMap transfer_labels(const LabelMap& atlas_labels, const AffineTransform& affine,
                         const DenseField& field, const Geometry& subject_geometry,
                         FieldInversion* inversion_report = nullptr);
/// Same, with a precomputed inverse field.
LabelMap transfer_labels_with_inverse(const LabelMap& atlas_labels, const AffineTransform& affine,
                                      const DenseField& inverse_field,
                                      const Geometry& subject_geometry);

struct FieldStats {
  double mean_norm = 0.0;
  double max_norm = 0.0;
  double max_component = 0.0;
};
FieldStats field_stats(const DenseField& u);

/// Binary format: "DFLD", u32 version 1, 3 x u32 dims, 3 x f32 spacing, then
/// nx*ny*nz f32 triples x-fastest, all little-endian.
void write_field(const DenseField& u, const std::filesystem::path& path);
DenseField read_field(const std::filesystem::path& path);

} // namespace katlas
