#include "katlas/affine.hpp"

#include "katlas/field.hpp"
#include "katlas/volume_ops.hpp"

#include <Eigen/Dense>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

namespace katlas {

AffineTransform AffineTransform::inverse() const {
  const Eigen::Matrix3d linear = matrix.topLeftCorner<3, 3>();
  if (std::abs(linear.determinant()) < 1e-12)
    throw Error("singular_affine", "affine transform is not invertible");
  return {matrix.inverse()};
}

void write_affine(const AffineTransform& t, const std::filesystem::path& path) {
  nlohmann::json m = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      m.push_back(t.matrix(r, c));
  nlohmann::json j{{"matrix", m}, {"maps", "fixed_to_moving_world_mm"}};
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

AffineTransform read_affine(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error("io_error", "cannot open affine file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_json", path.string() + ": " + e.what());
  }
  if (!j.contains("maps") || j["maps"] != "fixed_to_moving_world_mm")
    throw Error("invalid_affine", "affine file lacks the fixed_to_moving_world_mm convention tag");
  const auto& m = j.at("matrix");
  if (!m.is_array() || m.size() != 16)
    throw Error("invalid_affine", "affine matrix must have 16 entries");
  AffineTransform t;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      t.matrix(r, c) = m[4 * r + c].get<double>();
  if (!t.matrix.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1)))
    throw Error("invalid_affine", "last affine row must be (0, 0, 0, 1)");
  return t;
}

std::vector<std::array<int, 3>> displacement_labels(int radius, int step) {
  std::vector<std::array<int, 3>> labels;
  labels.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1) * (2 * radius + 1));
  for (int x = -radius; x <= radius; ++x)
    for (int y = -radius; y <= radius; ++y)
      for (int z = -radius; z <= radius; ++z)
        labels.push_back({x * step, y * step, z * step});
  std::stable_sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) {
    const int na = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
    const int nb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    return na != nb ? na < nb : a < b;
  });
  return labels;
}

std::vector<std::array<int, 3>> block_grid(const Geometry& g, int spacing) {
  if (spacing < 1)
    throw Error("invalid_argument", "grid spacing must be >= 1");
  int count[3], offset[3];
  for (int a = 0; a < 3; ++a) {
    count[a] = (g.dims[a] - 1) / spacing + 1;
    offset[a] = ((g.dims[a] - 1) - (count[a] - 1) * spacing) / 2;
  }
  std::vector<std::array<int, 3>> points;
  points.reserve(static_cast<std::size_t>(count[0]) * count[1] * count[2]);
  for (int k = 0; k < count[2]; ++k)
    for (int j = 0; j < count[1]; ++j)
      for (int i = 0; i < count[0]; ++i)
        points.push_back({offset[0] + i * spacing, offset[1] + j * spacing, offset[2] + k * spacing});
  return points;
}

namespace {

// Patch voxels of `pt` that stay inside both grids under every displacement
// up to `reach` voxels per axis. Empty when lo > hi on some axis.
struct SampleBox {
  std::array<int, 3> lo, hi;
  bool empty() const { return lo[0] > hi[0] || lo[1] > hi[1] || lo[2] > hi[2]; }
};

SampleBox consistent_box(const Geometry& fixed, const Geometry& moving,
                         const std::array<int, 3>& pt, int patch_radius, int reach) {
  SampleBox b;
  for (int a = 0; a < 3; ++a) {
    b.lo[a] = std::max({pt[a] - patch_radius, 0, reach});
    b.hi[a] = std::min({pt[a] + patch_radius, fixed.dims[a] - 1, moving.dims[a] - 1 - reach});
  }
  return b;
}

double box_cost(const DescriptorVolume& fixed, const DescriptorVolume& moving, const SampleBox& b,
                const std::array<int, 3>& d) {
  int sum = 0, count = 0;
  for (int k = b.lo[2]; k <= b.hi[2]; ++k)
    for (int j = b.lo[1]; j <= b.hi[1]; ++j)
      for (int i = b.lo[0]; i <= b.hi[0]; ++i) {
        sum += hamming_cost(fixed.code(i, j, k), moving.code(i + d[0], j + d[1], k + d[2]));
        ++count;
      }
  return static_cast<double>(sum) / count;
}

} // namespace

std::vector<Correspondence> block_match_points(const DescriptorVolume& fixed,
                                               const DescriptorVolume& moving,
                                               const std::vector<std::array<int, 3>>& points,
                                               const BlockMatchParams& params) {
  if (points.empty())
    throw Error("empty_grid", "block matching grid is empty");
  const auto labels = displacement_labels(params.search_radius, params.step);
  const int reach = params.search_radius * params.step;
  std::vector<Correspondence> out(points.size());
  const auto n = static_cast<int>(points.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (int p = 0; p < n; ++p) {
    const auto& pt = points[p];
    const SampleBox box =
        consistent_box(fixed.geometry, moving.geometry, pt, params.cost_patch_radius, reach);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_label = 0;
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const double c = box.empty() ? patch_descriptor_cost(fixed, moving, pt, labels[l],
                                                           params.cost_patch_radius)
                                   : box_cost(fixed, moving, box, labels[l]);
      if (c < best) {
        best = c;
        best_label = l;
      }
    }
    const auto& d = labels[best_label];
    out[p].fixed_mm = fixed.geometry.index_to_world(Eigen::Vector3d(pt[0], pt[1], pt[2]));
    out[p].moving_mm =
        moving.geometry.index_to_world(Eigen::Vector3d(pt[0] + d[0], pt[1] + d[1], pt[2] + d[2]));
    out[p].cost = best;
  }
  return out;
}

std::vector<Correspondence> block_match(const DescriptorVolume& fixed,
                                        const DescriptorVolume& moving,
                                        const BlockMatchParams& params) {
  return block_match_points(fixed, moving, block_grid(fixed.geometry, params.grid_spacing),
                            params);
}

namespace {

AffineTransform least_squares_affine(const std::vector<Correspondence>& corr,
                                     const std::vector<std::size_t>& active) {
  const auto n = static_cast<Eigen::Index>(active.size());
  if (n < 4)
    throw Error("degenerate_correspondences", "affine fit needs at least 4 correspondences");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (auto i : active)
    centroid += corr[i].fixed_mm;
  centroid /= static_cast<double>(n);

  Eigen::MatrixXd x(n, 4);
  Eigen::MatrixXd y(n, 3);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& c = corr[active[r]];
    x.row(r) << (c.fixed_mm - centroid).transpose(), 1.0;
    y.row(r) = c.moving_mm.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> spread(x.leftCols<3>());
  const auto sv = spread.singularValues();
  if (sv(0) <= 0.0 || sv(2) / sv(0) < 1e-9)
    throw Error("degenerate_correspondences", "fixed points are coplanar or collinear");

  const Eigen::MatrixXd sol = x.colPivHouseholderQr().solve(y); // 4 x 3
  AffineTransform t;
  const Eigen::Matrix3d linear = sol.topRows<3>().transpose();
  t.matrix.topLeftCorner<3, 3>() = linear;
  t.matrix.topRightCorner<3, 1>() = sol.row(3).transpose() - linear * centroid;
  return t;
}

} // namespace

AffineTransform fit_affine(const std::vector<Correspondence>& corr, double trim_fraction,
                           int rounds) {
  if (trim_fraction < 0.0 || trim_fraction >= 1.0 || rounds < 0)
    throw Error("invalid_argument", "trim fraction must be in [0, 1) and rounds >= 0");
  std::vector<std::size_t> active(corr.size());
  std::iota(active.begin(), active.end(), 0);
  AffineTransform t = least_squares_affine(corr, active);
  for (int round = 0; round < rounds; ++round) {
    const auto drop = static_cast<std::size_t>(trim_fraction * static_cast<double>(active.size()));
    if (drop == 0 || active.size() - drop < 4)
      break;
    std::vector<double> residual(corr.size(), 0.0);
    for (auto i : active)
      residual[i] = (t.apply(corr[i].fixed_mm) - corr[i].moving_mm).norm();
    std::stable_sort(active.begin(), active.end(),
                     [&](std::size_t a, std::size_t b) { return residual[a] < residual[b]; });
    active.resize(active.size() - drop);
    std::sort(active.begin(), active.end());
    t = least_squares_affine(corr, active);
  }
  return t;
}

namespace {

// Control points ranked by local intensity variance of the fixed image; the
// top fraction (with non-zero variance) is kept, in grid order.
std::vector<std::array<int, 3>> salient_points(const Volume& fixed,
                                               const std::vector<std::array<int, 3>>& grid,
                                               int radius, double fraction) {
  std::vector<double> variance(grid.size(), 0.0);
  const auto n = static_cast<int>(grid.size());
#pragma omp parallel for schedule(static)
  for (int p = 0; p < n; ++p) {
    double s = 0.0, s2 = 0.0;
    int count = 0;
    for (int k = grid[p][2] - radius; k <= grid[p][2] + radius; ++k)
      for (int j = grid[p][1] - radius; j <= grid[p][1] + radius; ++j)
        for (int i = grid[p][0] - radius; i <= grid[p][0] + radius; ++i) {
          if (!fixed.contains(i, j, k))
            continue;
          const double v = fixed(i, j, k);
          s += v;
          s2 += v * v;
          ++count;
        }
    if (count > 1) {
      const double mean = s / count;
      variance[p] = std::max(0.0, s2 / count - mean * mean);
    }
  }
  std::vector<std::size_t> order(grid.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return variance[a] > variance[b]; });
  auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(grid.size())));
  keep = std::min(keep, grid.size());
  while (keep > 0 && variance[order[keep - 1]] <= 0.0)
    --keep;
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<std::array<int, 3>> out;
  out.reserve(order.size());
  for (auto i : order)
    out.push_back(grid[i]);
  return out;
}

} // namespace

AffineTransform register_affine(const Volume& fixed, const Volume& moving,
                                const AffineSchedule& schedule) {
  AffineTransform total = AffineTransform::identity();
  SscParams ssc;
  ssc.keep_channels = false;
  for (const auto& level : schedule.levels) {
    const int factor = level.factor;
    const Volume f = downsample(fixed, factor);
    const Volume m = downsample(moving, factor);
    const DescriptorVolume fd = ssc_descriptor(f, ssc);
    const auto grid = block_grid(f.geometry(), level.match.grid_spacing);
    // Points whose every candidate would be scored partly off-grid are left
    // out; near the border they favour inward displacements.
    std::vector<std::array<int, 3>> usable;
    for (const auto& pt : grid)
      if (!consistent_box(f.geometry(), f.geometry(), pt, level.match.cost_patch_radius,
                          level.match.search_radius * level.match.step)
               .empty())
        usable.push_back(pt);
    const auto points = salient_points(f, usable, level.match.grid_spacing / 2,
                                       schedule.salient_fraction);
    for (int it = 0; it < level.iterations; ++it) {
      const Volume warped = warp_volume(m, DenseField::zeros(f.geometry()), total);
      const DescriptorVolume md = ssc_descriptor(warped, ssc);
      const auto corr = block_match_points(fd, md, points, level.match);
      const AffineTransform residual = fit_affine(corr, schedule.trim_fraction, schedule.rounds);
      total = total.then_after(residual);
      const double moved =
          max_corner_error_voxels(residual, AffineTransform::identity(), f.geometry());
      spdlog::debug("affine level x{} iteration {}: {} correspondences, update {:.3f} voxels",
                    factor, it, corr.size(), moved);
      if (moved < schedule.converged_corner_voxels)
        break;
    }
  }
  return total;
}

double max_corner_error_voxels(const AffineTransform& a, const AffineTransform& b,
                               const Geometry& fixed) {
  double worst = 0.0;
  for (int c = 0; c < 8; ++c) {
    const Eigen::Vector3d ijk((c & 1) ? fixed.dims[0] - 1 : 0, (c & 2) ? fixed.dims[1] - 1 : 0,
                              (c & 4) ? fixed.dims[2] - 1 : 0);
    const Eigen::Vector3d w = fixed.index_to_world(ijk);
    const Eigen::Vector3d diff = fixed.direction.transpose() * (a.apply(w) - b.apply(w));
    worst = std::max(worst, diff.cwiseQuotient(fixed.spacing).norm());
  }
  return worst;
}

} // namespace katlas
