#pragma once

#include "katlas/field.hpp"
#include "katlas/image.hpp"
#include "katlas/ssc.hpp"

namespace katlas {

/// Per-level control-grid spacing (voxels), search radius (steps) and
/// quantization (voxels per step).
struct LevelSchedule {
  struct Level {
    int grid_spacing;
    int radius;
    int quant;
  };
  std::vector<Level> levels;

  /// Five levels: spacing 8..4, radius 6..2, quantization 5..1.
  static LevelSchedule standard();
  /// Throws unless every entry is positive and each column is non-increasing.
  void validate() const;
  /// Per-component bound on the accumulated displacement: sum radius*quant.
  int displacement_bound() const;
};

/// Control nodes at voxel positions k * spacing, k = 0..dims-1, covering the
/// image extent (the last node may sit past the final voxel).
struct ControlGrid {
  std::array<int, 3> dims{};
  int spacing = 1;
  Geometry image;

  static ControlGrid covering(const Geometry& image, int spacing);
  std::size_t node_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  std::array<int, 3> node_position(std::size_t n) const;
  std::size_t node_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) +
                                                static_cast<std::size_t>(dims[1]) * k);
  }
};

struct ControlField {
  ControlGrid grid;
  std::vector<Eigen::Vector3f> disp; ///< voxels, fixed-space pull-back
};

/// Discrete displacement candidates. For the lattice built by `lattice`, the
/// label index is x-fastest over [-radius, radius]^3 scaled by quant.
struct LabelSet {
  std::vector<Eigen::Vector3f> disp;
  int lattice_radius = -1; ///< >= 0 only for a full cubic lattice
  int lattice_quant = 0;

  static LabelSet lattice(int radius, int quant);
  std::size_t size() const { return disp.size(); }
  /// Tie-break rank: smaller squared norm first, then lexicographic (x, y, z).
  std::vector<int> tie_rank() const;
};

/// Row-major nodes x labels cost matrix.
struct CostTensor {
  std::size_t nodes = 0;
  std::size_t labels = 0;
  std::vector<double> data;

  double& at(std::size_t n, std::size_t l) { return data[n * labels + l]; }
  double at(std::size_t n, std::size_t l) const { return data[n * labels + l]; }
};

/// cost[n][l] = patch_descriptor_cost at node n (clamped into the image) for
/// label l. With stride > 1 the patch is sampled at centre + t * stride for
/// |t| <= radius / stride on each axis.
CostTensor node_costs(const DescriptorVolume& fixed, const DescriptorVolume& moving,
                      const ControlGrid& grid, const LabelSet& labels, int cost_patch_radius,
                      int stride = 1);

/// Rooted spanning tree; `order` is breadth-first from the root with
/// children visited in ascending node index.
struct Tree {
  std::vector<int> parent; ///< -1 for the root
  std::vector<int> order;
};

/// Mean intensity of each node's cubic patch (radius spacing/2, clipped).
std::vector<double> node_patch_means(const Volume& fixed, const ControlGrid& grid);

/// Prim's algorithm from node 0 over the 6-connected control grid with edge
/// weight |mean_a - mean_b|; ties go to the smaller node index.
Tree build_mst(const Volume& fixed, const ControlGrid& grid);
Tree build_mst_from_means(const std::vector<double>& means, const std::array<int, 3>& dims);

/// Exact minimizer over the tree of
///   sum_n cost[n][label_n] + alpha * sum_(i,j) |d_i - d_j|^2
/// with ties toward smaller |d|, then lexicographic, in BFS node order.
std::vector<int> regularize_mst(const CostTensor& costs, const Tree& tree, const LabelSet& labels,
                                double alpha);
/// Objective value of a labeling.
double labeling_energy(const CostTensor& costs, const Tree& tree, const LabelSet& labels,
                       double alpha, const std::vector<int>& labeling);

/// Trilinear interpolation of node displacements; clamps beyond the last node.
DenseField upsample_field(const ControlField& cf, const Geometry& target);

struct DeformParams {
  double alpha = 1.0;
  /// Cost patch radius in voxels; -1 uses each level's grid spacing.
  int cost_patch_radius = -1;
  /// Patch sampling stride; -1 uses max(1, grid spacing / 2).
  int cost_patch_stride = -1;
};

DenseField register_deform(const Volume& fixed, const Volume& moving,
                           const LevelSchedule& schedule = LevelSchedule::standard(),
                           const DeformParams& params = {});

} // namespace katlas
