#include "katlas/deform.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>

namespace katlas {

LevelSchedule LevelSchedule::standard() {
  return {{{8, 6, 5}, {7, 5, 4}, {6, 4, 3}, {5, 3, 2}, {4, 2, 1}}};
}

void LevelSchedule::validate() const {
  if (levels.empty())
    throw Error("invalid_schedule", "level schedule is empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const auto& l = levels[i];
    if (l.grid_spacing < 1 || l.radius < 0 || l.quant < 1)
      throw Error("invalid_schedule", "level entries must be positive");
    if (i > 0) {
      const auto& p = levels[i - 1];
      if (l.grid_spacing > p.grid_spacing || l.radius > p.radius || l.quant > p.quant)
        throw Error("invalid_schedule", "level schedule must be non-increasing coarse to fine");
    }
  }
}

int LevelSchedule::displacement_bound() const {
  int bound = 0;
  for (const auto& l : levels)
    bound += l.radius * l.quant;
  return bound;
}

ControlGrid ControlGrid::covering(const Geometry& image, int spacing) {
  if (spacing < 1)
    throw Error("invalid_argument", "grid spacing must be >= 1");
  ControlGrid g;
  g.spacing = spacing;
  g.image = image;
  for (int a = 0; a < 3; ++a)
    g.dims[a] = (image.dims[a] - 1 + spacing - 1) / spacing + 1;
  return g;
}

std::array<int, 3> ControlGrid::node_position(std::size_t n) const {
  const int i = static_cast<int>(n % dims[0]);
  const int j = static_cast<int>((n / dims[0]) % dims[1]);
  const int k = static_cast<int>(n / (static_cast<std::size_t>(dims[0]) * dims[1]));
  return {i * spacing, j * spacing, k * spacing};
}

LabelSet LabelSet::lattice(int radius, int quant) {
  if (radius < 0 || quant < 1)
    throw Error("invalid_argument", "label lattice needs radius >= 0 and quant >= 1");
  LabelSet s;
  s.lattice_radius = radius;
  s.lattice_quant = quant;
  for (int z = -radius; z <= radius; ++z)
    for (int y = -radius; y <= radius; ++y)
      for (int x = -radius; x <= radius; ++x)
        s.disp.emplace_back(static_cast<float>(x * quant), static_cast<float>(y * quant),
                            static_cast<float>(z * quant));
  return s;
}

std::vector<int> LabelSet::tie_rank() const {
  std::vector<int> order(disp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const float na = disp[a].squaredNorm(), nb = disp[b].squaredNorm();
    if (na != nb)
      return na < nb;
    return std::tie(disp[a].x(), disp[a].y(), disp[a].z()) <
           std::tie(disp[b].x(), disp[b].y(), disp[b].z());
  });
  std::vector<int> rank(disp.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    rank[order[r]] = static_cast<int>(r);
  return rank;
}

CostTensor node_costs(const DescriptorVolume& fixed, const DescriptorVolume& moving,
                      const ControlGrid& grid, const LabelSet& labels, int cost_patch_radius,
                      int stride) {
  if (cost_patch_radius < 0 || stride < 1)
    throw Error("invalid_argument", "cost patch radius must be >= 0 and stride >= 1");
  if (fixed.geometry.dims != moving.geometry.dims)
    throw Error("geometry_mismatch", "descriptor volumes differ in size");
  CostTensor costs;
  costs.nodes = grid.node_count();
  costs.labels = labels.size();
  costs.data.assign(costs.nodes * costs.labels, 0.0);

  const auto& dims = moving.geometry.dims;
  std::vector<std::array<int, 3>> offsets(labels.size());
  std::vector<std::ptrdiff_t> linear(labels.size());
  for (std::size_t l = 0; l < labels.size(); ++l) {
    for (int a = 0; a < 3; ++a)
      offsets[l][a] = static_cast<int>(std::lround(labels.disp[l][a]));
    linear[l] = offsets[l][0] + static_cast<std::ptrdiff_t>(dims[0]) *
                                    (offsets[l][1] + static_cast<std::ptrdiff_t>(dims[1]) * offsets[l][2]);
  }

  const int r = cost_patch_radius;
  const auto nodes = static_cast<int>(costs.nodes);
#pragma omp parallel for schedule(dynamic, 8)
  for (int n = 0; n < nodes; ++n) {
    auto c = grid.node_position(static_cast<std::size_t>(n));
    for (int a = 0; a < 3; ++a)
      c[a] = std::min(c[a], dims[a] - 1);
    // Patch samples inside the fixed volume, with their codes and indices.
    std::vector<std::array<int, 3>> pts;
    std::vector<std::uint16_t> codes;
    std::vector<std::size_t> base;
    int lo[3] = {dims[0], dims[1], dims[2]}, hi[3] = {-1, -1, -1};
    const int m = r / stride;
    for (int tz = -m; tz <= m; ++tz)
      for (int ty = -m; ty <= m; ++ty)
        for (int tx = -m; tx <= m; ++tx) {
          const std::array<int, 3> q{c[0] + tx * stride, c[1] + ty * stride, c[2] + tz * stride};
          if (!fixed.contains(q[0], q[1], q[2]))
            continue;
          pts.push_back(q);
          codes.push_back(fixed.code(q[0], q[1], q[2]));
          base.push_back(fixed.index(q[0], q[1], q[2]));
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], q[a]);
            hi[a] = std::max(hi[a], q[a]);
          }
        }
    double* row = &costs.data[static_cast<std::size_t>(n) * costs.labels];
    if (pts.empty()) {
      std::fill(row, row + costs.labels, static_cast<double>(kMaxHamming));
      continue;
    }
    const std::size_t count = pts.size();
    for (std::size_t l = 0; l < labels.size(); ++l) {
      const auto& d = offsets[l];
      const bool inside = moving.contains(lo[0] + d[0], lo[1] + d[1], lo[2] + d[2]) &&
                          moving.contains(hi[0] + d[0], hi[1] + d[1], hi[2] + d[2]);
      int sum = 0;
      if (inside) {
        const std::ptrdiff_t shift = linear[l];
        for (std::size_t p = 0; p < count; ++p)
          sum += hamming_cost(codes[p], moving.codes[static_cast<std::size_t>(
                                            static_cast<std::ptrdiff_t>(base[p]) + shift)]);
      } else {
        for (std::size_t p = 0; p < count; ++p) {
          const int mi = pts[p][0] + d[0], mj = pts[p][1] + d[1], mk = pts[p][2] + d[2];
          sum += moving.contains(mi, mj, mk) ? hamming_cost(codes[p], moving.code(mi, mj, mk))
                                             : kMaxHamming;
        }
      }
      row[l] = static_cast<double>(sum) / static_cast<double>(count);
    }
  }
  return costs;
}

std::vector<double> node_patch_means(const Volume& fixed, const ControlGrid& grid) {
  std::vector<double> means(grid.node_count(), 0.0);
  const int r = grid.spacing / 2;
  const auto nodes = static_cast<int>(grid.node_count());
#pragma omp parallel for schedule(static)
  for (int n = 0; n < nodes; ++n) {
    auto c = grid.node_position(static_cast<std::size_t>(n));
    double sum = 0.0;
    int count = 0;
    for (int a = 0; a < 3; ++a)
      c[a] = std::min(c[a], fixed.geometry().dims[a] - 1);
    for (int k = std::max(0, c[2] - r); k <= std::min(fixed.nz() - 1, c[2] + r); ++k)
      for (int j = std::max(0, c[1] - r); j <= std::min(fixed.ny() - 1, c[1] + r); ++j)
        for (int i = std::max(0, c[0] - r); i <= std::min(fixed.nx() - 1, c[0] + r); ++i) {
          sum += fixed(i, j, k);
          ++count;
        }
    means[n] = sum / count;
  }
  return means;
}

Tree build_mst_from_means(const std::vector<double>& means, const std::array<int, 3>& dims) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (means.size() != n || n == 0)
    throw Error("invalid_argument", "node means do not match grid dimensions");
  auto neighbours = [&](std::size_t v, auto&& visit) {
    const int i = static_cast<int>(v % dims[0]);
    const int j = static_cast<int>((v / dims[0]) % dims[1]);
    const int k = static_cast<int>(v / (static_cast<std::size_t>(dims[0]) * dims[1]));
    const std::size_t sx = 1, sy = dims[0], sz = static_cast<std::size_t>(dims[0]) * dims[1];
    if (i > 0) visit(v - sx);
    if (i + 1 < dims[0]) visit(v + sx);
    if (j > 0) visit(v - sy);
    if (j + 1 < dims[1]) visit(v + sy);
    if (k > 0) visit(v - sz);
    if (k + 1 < dims[2]) visit(v + sz);
  };

  Tree tree;
  tree.parent.assign(n, -1);
  std::vector<char> in_tree(n, 0);
  using Entry = std::tuple<double, std::size_t, std::size_t>; // weight, node, parent
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto add = [&](std::size_t v) {
    in_tree[v] = 1;
    neighbours(v, [&](std::size_t w) {
      if (!in_tree[w])
        heap.emplace(std::abs(means[v] - means[w]), w, v);
    });
  };
  add(0);
  while (!heap.empty()) {
    const auto [w, v, p] = heap.top();
    heap.pop();
    if (in_tree[v])
      continue;
    tree.parent[v] = static_cast<int>(p);
    add(v);
  }

  std::vector<std::vector<int>> children(n);
  for (std::size_t v = 1; v < n; ++v)
    children[tree.parent[v]].push_back(static_cast<int>(v));
  tree.order.reserve(n);
  tree.order.push_back(0);
  for (std::size_t head = 0; head < tree.order.size(); ++head)
    for (int c : children[tree.order[head]]) // already ascending
      tree.order.push_back(c);
  return tree;
}

Tree build_mst(const Volume& fixed, const ControlGrid& grid) {
  if (grid.node_count() < 2)
    throw Error("invalid_argument", "control grid needs at least 2 nodes");
  return build_mst_from_means(node_patch_means(fixed, grid), grid.dims);
}

namespace {

constexpr std::size_t kDenseMessageLimit = 125;

double pair_penalty(const Eigen::Vector3f& a, const Eigen::Vector3f& b) {
  const double dx = static_cast<double>(a.x()) - b.x();
  const double dy = static_cast<double>(a.y()) - b.y();
  const double dz = static_cast<double>(a.z()) - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// msg[lp] = min_l belief[l] + alpha |d_l - d_lp|^2, all label pairs.
void dense_message(const double* belief, const LabelSet& labels, double alpha, double* msg) {
  const std::size_t n = labels.size();
  for (std::size_t lp = 0; lp < n; ++lp) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < n; ++l)
      best = std::min(best, belief[l] + alpha * pair_penalty(labels.disp[l], labels.disp[lp]));
    msg[lp] = best;
  }
}

// Same minimum for a cubic lattice, one axis at a time; the squared
// Euclidean penalty separates into per-axis terms.
void lattice_message(const double* belief, const LabelSet& labels, double alpha, double* msg,
                     std::vector<double>& a, std::vector<double>& b) {
  const int w = 2 * labels.lattice_radius + 1;
  const double q = labels.lattice_quant;
  const std::size_t n = labels.size();
  a.assign(belief, belief + n);
  b.resize(n);
  const std::size_t stride[3] = {1, static_cast<std::size_t>(w), static_cast<std::size_t>(w) * w};
  std::vector<double> pen(2 * w - 1);
  for (int d = -(w - 1); d <= w - 1; ++d)
    pen[d + w - 1] = alpha * (q * d) * (q * d);
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t s = stride[axis];
    for (std::size_t base = 0; base < n; ++base) {
      if ((base / s) % w != 0)
        continue; // visit each line once, from its first element
      for (int t = 0; t < w; ++t) {
        double best = std::numeric_limits<double>::infinity();
        for (int u = 0; u < w; ++u)
          best = std::min(best, a[base + u * s] + pen[t - u + w - 1]);
        b[base + t * s] = best;
      }
    }
    std::swap(a, b);
  }
  std::copy(a.begin(), a.end(), msg);
}

} // namespace

std::vector<int> regularize_mst(const CostTensor& costs, const Tree& tree, const LabelSet& labels,
                                double alpha) {
  if (alpha < 0.0)
    throw Error("invalid_argument", "regularization weight must be non-negative");
  if (costs.labels != labels.size() || costs.nodes != tree.parent.size())
    throw Error("invalid_argument", "cost tensor does not match tree or label set");
  const std::size_t nl = labels.size();
  const std::vector<int> rank = labels.tie_rank();
  const bool lattice = labels.lattice_radius >= 0 && nl > kDenseMessageLimit;

  // belief[n] = unary cost + messages from all children of n.
  std::vector<double> belief = costs.data;
  std::vector<double> msg(nl), a, b;
  for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
    const int node = *it;
    const int parent = tree.parent[node];
    if (parent < 0)
      continue;
    const double* bel = &belief[static_cast<std::size_t>(node) * nl];
    if (lattice)
      lattice_message(bel, labels, alpha, msg.data(), a, b);
    else
      dense_message(bel, labels, alpha, msg.data());
    double* pb = &belief[static_cast<std::size_t>(parent) * nl];
    for (std::size_t l = 0; l < nl; ++l)
      pb[l] += msg[l];
  }

  auto pick = [&](auto value_of) {
    int best = 0;
    double best_value = value_of(0);
    for (std::size_t l = 1; l < nl; ++l) {
      const double v = value_of(l);
      if (v < best_value || (v == best_value && rank[l] < rank[best])) {
        best_value = v;
        best = static_cast<int>(l);
      }
    }
    return best;
  };

  std::vector<int> labeling(costs.nodes, 0);
  for (int node : tree.order) {
    const double* bel = &belief[static_cast<std::size_t>(node) * nl];
    const int parent = tree.parent[node];
    if (parent < 0) {
      labeling[node] = pick([&](std::size_t l) { return bel[l]; });
    } else {
      const auto& dp = labels.disp[labeling[parent]];
      labeling[node] =
          pick([&](std::size_t l) { return bel[l] + alpha * pair_penalty(labels.disp[l], dp); });
    }
  }
  return labeling;
}

double labeling_energy(const CostTensor& costs, const Tree& tree, const LabelSet& labels,
                       double alpha, const std::vector<int>& labeling) {
  double e = 0.0;
  for (std::size_t n = 0; n < costs.nodes; ++n) {
    e += costs.at(n, labeling[n]);
    if (tree.parent[n] >= 0)
      e += alpha * pair_penalty(labels.disp[labeling[n]], labels.disp[labeling[tree.parent[n]]]);
  }
  return e;
}

DenseField upsample_field(const ControlField& cf, const Geometry& target) {
  const auto& gd = cf.grid.dims;
  const double s = cf.grid.spacing;
  DenseField out = DenseField::zeros(target);
  auto axis_weights = [&](int x, int a, int& i0, int& i1, double& w) {
    const double g = x / s;
    i0 = std::min(static_cast<int>(std::floor(g)), gd[a] - 1);
    i1 = std::min(i0 + 1, gd[a] - 1);
    w = i0 == i1 ? 0.0 : g - i0;
  };
#pragma omp parallel for schedule(static)
  for (int k = 0; k < target.dims[2]; ++k) {
    int k0, k1;
    double wz;
    axis_weights(k, 2, k0, k1, wz);
    for (int j = 0; j < target.dims[1]; ++j) {
      int j0, j1;
      double wy;
      axis_weights(j, 1, j0, j1, wy);
      for (int i = 0; i < target.dims[0]; ++i) {
        int i0, i1;
        double wx;
        axis_weights(i, 0, i0, i1, wx);
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int c = 0; c < 8; ++c) {
          const double weight = ((c & 1) ? wx : 1.0 - wx) * ((c & 2) ? wy : 1.0 - wy) *
                                ((c & 4) ? wz : 1.0 - wz);
          if (weight == 0.0)
            continue;
          const std::size_t node = cf.grid.node_index((c & 1) ? i1 : i0, (c & 2) ? j1 : j0,
                                                      (c & 4) ? k1 : k0);
          acc += weight * cf.disp[node].cast<double>();
        }
        out.at(i, j, k) = acc.cast<float>();
      }
    }
  }
  return out;
}

DenseField register_deform(const Volume& fixed, const Volume& moving,
                           const LevelSchedule& schedule, const DeformParams& params) {
  schedule.validate();
  if (!(params.alpha >= 0.0))
    throw Error("invalid_argument", "regularization weight must be non-negative");
  if (fixed.geometry().dims != moving.geometry().dims)
    throw Error("geometry_mismatch", "deformable registration needs images on the same grid");
  SscParams ssc;
  ssc.keep_channels = false;
  const DescriptorVolume fixed_desc = ssc_descriptor(fixed, ssc);
  // Same dims: the moving image is read voxel-for-voxel on the fixed grid.
  Volume moving_on_grid = moving;
  moving_on_grid.set_geometry(fixed.geometry());

  DenseField total = DenseField::zeros(fixed.geometry());
  for (const auto& level : schedule.levels) {
    const Volume warped = warp_volume(moving_on_grid, total, AffineTransform::identity());
    const DescriptorVolume moving_desc = ssc_descriptor(warped, ssc);
    const ControlGrid grid = ControlGrid::covering(fixed.geometry(), level.grid_spacing);
    const LabelSet labels = LabelSet::lattice(level.radius, level.quant);
    const int radius =
        params.cost_patch_radius >= 0 ? params.cost_patch_radius : level.grid_spacing;
    const int stride =
        params.cost_patch_stride >= 1 ? params.cost_patch_stride : std::max(1, level.grid_spacing / 2);
    const CostTensor costs = node_costs(fixed_desc, moving_desc, grid, labels, radius, stride);
    const Tree tree = build_mst(fixed, grid);
    const auto labeling = regularize_mst(costs, tree, labels, params.alpha);

    ControlField cf{grid, {}};
    cf.disp.reserve(labeling.size());
    for (int l : labeling)
      cf.disp.push_back(labels.disp[l]);
    total = compose(total, upsample_field(cf, fixed.geometry()));
    spdlog::debug("deform level s={} r={} q={}: {} nodes x {} labels", level.grid_spacing,
                  level.radius, level.quant, costs.nodes, costs.labels);
  }
  return total;
}

} // namespace katlas
