#include "katlas/volume_ops.hpp"

#include <algorithm>
#include <numeric>

namespace katlas {

namespace {

// Snap coordinates that are within rounding noise of a grid point so that
// resampling onto the source geometry is an exact copy.
double snap(double x) {
  const double r = std::round(x);
  return std::abs(x - r) < 1e-6 ? r : x;
}

struct AxisMap {
  std::array<int, 3> perm{0, 1, 2}; // output axis a reads input axis perm[a]
  std::array<bool, 3> flip{false, false, false};
};

AxisMap canonical_axes(const Eigen::Matrix3d& direction) {
  std::array<int, 3> perm{0, 1, 2};
  std::array<int, 3> best = perm;
  double best_score = -1.0;
  do {
    double score = 0.0;
    for (int a = 0; a < 3; ++a)
      score += std::abs(direction(a, perm[a]));
    if (score > best_score + 1e-12) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  AxisMap m;
  m.perm = best;
  for (int a = 0; a < 3; ++a)
    m.flip[a] = direction(a, best[a]) < 0.0;
  return m;
}

template <typename T>
Image<T> reorient_impl(const Image<T>& v) {
  const Geometry& in = v.geometry();
  const AxisMap m = canonical_axes(in.direction);
  Geometry out;
  Eigen::Vector3d corner;
  for (int a = 0; a < 3; ++a) {
    const int p = m.perm[a];
    out.dims[a] = in.dims[p];
    out.spacing[a] = in.spacing[p];
    out.direction.col(a) = in.direction.col(p) * (m.flip[a] ? -1.0 : 1.0);
    corner[p] = m.flip[a] ? in.dims[p] - 1 : 0;
  }
  out.origin = in.index_to_world(corner);

  Image<T> result(out, T{});
  std::array<int, 3> o{};
  std::array<int, 3> src{};
  for (o[2] = 0; o[2] < out.dims[2]; ++o[2])
    for (o[1] = 0; o[1] < out.dims[1]; ++o[1])
      for (o[0] = 0; o[0] < out.dims[0]; ++o[0]) {
        for (int a = 0; a < 3; ++a) {
          const int p = m.perm[a];
          src[p] = m.flip[a] ? in.dims[p] - 1 - o[a] : o[a];
        }
        result(o[0], o[1], o[2]) = v(src[0], src[1], src[2]);
      }
  return result;
}

template <typename T, typename Sampler>
Image<T> resample_impl(const Image<T>& v, const Geometry& target, Sampler sample) {
  target.validate();
  Image<T> out(target, T{});
  const Eigen::Matrix4d to_world = target.index_to_world_matrix();
  const Eigen::Matrix4d src_from_world = v.geometry().index_to_world_matrix().inverse();
  const Eigen::Matrix4d map = src_from_world * to_world;
  const int nx = target.dims[0], ny = target.dims[1], nz = target.dims[2];
#pragma omp parallel for schedule(static)
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const Eigen::Vector4d p = map * Eigen::Vector4d(i, j, k, 1.0);
        out(i, j, k) = sample(p.head<3>());
      }
  return out;
}

template <typename T>
Image<T> crop_pad_impl(const Image<T>& v, int z_begin, int z_end, std::optional<int> target_nz) {
  if (z_begin < 0 || z_end > v.nz() || z_begin >= z_end)
    throw Error("invalid_range", "empty or out-of-bounds slice range");
  int first = z_begin;
  int count = z_end - z_begin;
  if (target_nz) {
    if (*target_nz <= 0)
      throw Error("invalid_range", "target slice count must be positive");
    const int diff = *target_nz - count;
    // Deficit: pad with diff/2 below (rest above). Excess: trim -diff/2 below.
    first = diff >= 0 ? z_begin - diff / 2 : z_begin + (-diff) / 2;
    count = *target_nz;
  }
  Geometry g = v.geometry();
  g.dims[2] = count;
  g.origin = v.geometry().index_to_world(Eigen::Vector3d(0, 0, first));
  Image<T> out(g, fill_value<T>());
  for (int k = 0; k < count; ++k) {
    const int src = first + k;
    if (src < z_begin || src >= z_end)
      continue;
    for (int j = 0; j < v.ny(); ++j)
      for (int i = 0; i < v.nx(); ++i)
        out(i, j, k) = v(i, j, src);
  }
  return out;
}

} // namespace

float sample_linear(const Volume& v, const Eigen::Vector3d& ijk, float fill) {
  int i0[3];
  double w[3];
  for (int a = 0; a < 3; ++a) {
    const double x = snap(ijk[a]);
    const int n = v.geometry().dims[a];
    if (x < 0.0 || x > n - 1)
      return fill;
    int i = static_cast<int>(std::floor(x));
    if (i >= n - 1)
      i = std::max(0, n - 2);
    i0[a] = i;
    w[a] = n == 1 ? 0.0 : x - i;
  }
  const int i1 = std::min(i0[0] + 1, v.nx() - 1);
  const int j1 = std::min(i0[1] + 1, v.ny() - 1);
  const int k1 = std::min(i0[2] + 1, v.nz() - 1);
  auto lerp = [](double a, double b, double t) { return t == 0.0 ? a : a + (b - a) * t; };
  const double c00 = lerp(v(i0[0], i0[1], i0[2]), v(i1, i0[1], i0[2]), w[0]);
  const double c10 = lerp(v(i0[0], j1, i0[2]), v(i1, j1, i0[2]), w[0]);
  const double c01 = lerp(v(i0[0], i0[1], k1), v(i1, i0[1], k1), w[0]);
  const double c11 = lerp(v(i0[0], j1, k1), v(i1, j1, k1), w[0]);
  return static_cast<float>(lerp(lerp(c00, c10, w[1]), lerp(c01, c11, w[1]), w[2]));
}

Volume reorient_canonical(const Volume& v) { return reorient_impl(v); }
LabelMap reorient_canonical(const LabelMap& l) { return reorient_impl(l); }

Volume resample(const Volume& v, const Geometry& target, Interp interp) {
  if (interp == Interp::linear)
    return resample_impl(v, target, [&](const Eigen::Vector3d& p) {
      return sample_linear(v, p, kAirHU);
    });
  return resample_impl(v, target, [&](const Eigen::Vector3d& p) {
    return sample_nearest(v, p, kAirHU);
  });
}

LabelMap resample(const LabelMap& l, const Geometry& target, Interp interp) {
  if (interp != Interp::nearest)
    throw Error("invalid_interpolation", "label maps require nearest-neighbour interpolation");
  return resample_impl(l, target, [&](const Eigen::Vector3d& p) {
    return sample_nearest<std::int16_t>(l, p, 0);
  });
}

Volume crop_pad_z(const Volume& v, int z_begin, int z_end, std::optional<int> target_nz) {
  return crop_pad_impl(v, z_begin, z_end, target_nz);
}
LabelMap crop_pad_z(const LabelMap& l, int z_begin, int z_end, std::optional<int> target_nz) {
  return crop_pad_impl(l, z_begin, z_end, target_nz);
}

Geometry downsample_geometry(const Geometry& g, int factor) {
  if (factor < 1)
    throw Error("invalid_argument", "downsampling factor must be >= 1");
  Geometry out = g;
  for (int a = 0; a < 3; ++a) {
    out.dims[a] = std::max(1, g.dims[a] / factor);
    out.spacing[a] = g.spacing[a] * factor;
  }
  const double half = 0.5 * (factor - 1);
  out.origin = g.index_to_world(Eigen::Vector3d(half, half, half));
  return out;
}

Volume downsample(const Volume& v, int factor) {
  const Geometry g = downsample_geometry(v.geometry(), factor);
  if (factor == 1)
    return v;
  Volume out(g, 0.0f);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        double sum = 0.0;
        int count = 0;
        for (int c = k * factor; c < std::min(v.nz(), (k + 1) * factor); ++c)
          for (int b = j * factor; b < std::min(v.ny(), (j + 1) * factor); ++b)
            for (int a = i * factor; a < std::min(v.nx(), (i + 1) * factor); ++a) {
              sum += v(a, b, c);
              ++count;
            }
        out(i, j, k) = static_cast<float>(sum / count);
      }
  return out;
}

} // namespace katlas
