#include "katlas/field.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace katlas {

namespace {

void require_same_grid(const DenseField& a, const DenseField& b) {
  if (a.geometry.dims != b.geometry.dims)
    throw Error("geometry_mismatch", "displacement fields have different grids");
}

// Per-slice partial sums keep reductions independent of the thread count.
struct NormStats {
  double sum = 0.0;
  double max = 0.0;
};

template <typename Fn>
NormStats reduce_norms(const Geometry& g, Fn norm_at) {
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  std::vector<NormStats> slices(nz);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < nz; ++k) {
    NormStats s;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double n = norm_at(i, j, k);
        s.sum += n;
        s.max = std::max(s.max, n);
      }
    slices[k] = s;
  }
  NormStats total;
  for (const auto& s : slices) {
    total.sum += s.sum;
    total.max = std::max(total.max, s.max);
  }
  return total;
}

template <typename T, typename Sampler>
Image<T> warp_impl(const Image<T>& moving, const DenseField& field, const AffineTransform& affine,
                   Sampler sample) {
  const Geometry& g = field.geometry;
  Image<T> out(g, T{});
  const Eigen::Matrix4d map = moving.geometry().index_to_world_matrix().inverse() *
                              affine.matrix * g.index_to_world_matrix();
#pragma omp parallel for schedule(static)
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Eigen::Vector3f& u = field.at(i, j, k);
        const Eigen::Vector4d p(i + static_cast<double>(u.x()), j + static_cast<double>(u.y()),
                                k + static_cast<double>(u.z()), 1.0);
        out(i, j, k) = sample((map * p).head<3>());
      }
  return out;
}

} // namespace

Eigen::Vector3f sample_field(const DenseField& u, const Eigen::Vector3d& ijk) {
  int i0[3], i1[3];
  double w[3];
  for (int a = 0; a < 3; ++a) {
    const int n = u.geometry.dims[a];
    const double x = std::clamp(ijk[a], 0.0, static_cast<double>(n - 1));
    i0[a] = std::min(static_cast<int>(x), std::max(0, n - 2));
    i1[a] = std::min(i0[a] + 1, n - 1);
    w[a] = n == 1 ? 0.0 : x - i0[a];
  }
  Eigen::Vector3d acc = Eigen::Vector3d::Zero();
  for (int c = 0; c < 8; ++c) {
    const double wx = (c & 1) ? w[0] : 1.0 - w[0];
    const double wy = (c & 2) ? w[1] : 1.0 - w[1];
    const double wz = (c & 4) ? w[2] : 1.0 - w[2];
    const double weight = wx * wy * wz;
    if (weight == 0.0)
      continue;
    acc += weight * u.at((c & 1) ? i1[0] : i0[0], (c & 2) ? i1[1] : i0[1], (c & 4) ? i1[2] : i0[2])
                        .cast<double>();
  }
  return acc.cast<float>();
}

Volume warp_volume(const Volume& moving, const DenseField& field, const AffineTransform& affine,
                   Interp interp) {
  if (interp == Interp::linear)
    return warp_impl(moving, field, affine,
                     [&](const Eigen::Vector3d& p) { return sample_linear(moving, p, kAirHU); });
  return warp_impl(moving, field, affine, [&](const Eigen::Vector3d& p) {
    return sample_nearest(moving, p, kAirHU);
  });
}

LabelMap warp_volume(const LabelMap& moving, const DenseField& field,
                     const AffineTransform& affine, Interp interp) {
  if (interp != Interp::nearest)
    throw Error("invalid_interpolation", "label maps require nearest-neighbour interpolation");
  return warp_impl(moving, field, affine, [&](const Eigen::Vector3d& p) {
    return sample_nearest<std::int16_t>(moving, p, 0);
  });
}

DenseField compose(const DenseField& u, const DenseField& v) {
  require_same_grid(u, v);
  DenseField out = DenseField::zeros(v.geometry);
  const auto& d = v.geometry.dims;
#pragma omp parallel for schedule(static)
  for (int k = 0; k < d[2]; ++k)
    for (int j = 0; j < d[1]; ++j)
      for (int i = 0; i < d[0]; ++i) {
        const Eigen::Vector3f& vx = v.at(i, j, k);
        const Eigen::Vector3d p(i + static_cast<double>(vx.x()), j + static_cast<double>(vx.y()),
                                k + static_cast<double>(vx.z()));
        out.at(i, j, k) = vx + sample_field(u, p);
      }
  return out;
}

FieldInversion invert_field(const DenseField& u, int max_iter, double tol) {
  FieldInversion result;
  DenseField v = DenseField::zeros(u.geometry);
  DenseField next = v;
  const auto& d = u.geometry.dims;
  const double nvox = static_cast<double>(u.geometry.voxel_count());
  for (int it = 1; it <= max_iter; ++it) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < d[2]; ++k)
      for (int j = 0; j < d[1]; ++j)
        for (int i = 0; i < d[0]; ++i) {
          const Eigen::Vector3f& vx = v.at(i, j, k);
          next.at(i, j, k) = -sample_field(u, Eigen::Vector3d(i + static_cast<double>(vx.x()),
                                                               j + static_cast<double>(vx.y()),
                                                               k + static_cast<double>(vx.z())));
        }
    // The update v_k -> v_{k+1} equals the composition residual of v_k.
    const NormStats update = reduce_norms(u.geometry, [&](int i, int j, int k) {
      return static_cast<double>((next.at(i, j, k) - v.at(i, j, k)).norm());
    });
    result.residual_history.push_back(update.sum / nvox);
    std::swap(v, next);
    result.iterations = it;
    if (update.max < tol) {
      result.converged = true;
      break;
    }
  }
  const DenseField r = compose(u, v);
  const NormStats res = reduce_norms(
      u.geometry, [&](int i, int j, int k) { return static_cast<double>(r.at(i, j, k).norm()); });
  result.mean_residual = res.sum / nvox;
  result.max_residual = res.max;
  result.inverse = std::move(v);
  return result;
}

LabelMap transfer_labels_with_inverse(const LabelMap& atlas_labels, const AffineTransform& affine,
                                      const DenseField& inverse_field,
                                      const Geometry& subject_geometry) {
  if (atlas_labels.geometry().dims != inverse_field.geometry.dims)
    throw Error("geometry_mismatch", "atlas labels and displacement field grids differ");
  subject_geometry.validate();
  const AffineTransform back = affine.inverse();
  const Geometry& ag = inverse_field.geometry;
  // subject voxel -> atlas-grid index, before the deformable correction
  const Eigen::Matrix4d map = ag.index_to_world_matrix().inverse() * back.matrix *
                              subject_geometry.index_to_world_matrix();
  LabelMap out(subject_geometry, std::int16_t{0});
#pragma omp parallel for schedule(static)
  for (int k = 0; k < subject_geometry.dims[2]; ++k)
    for (int j = 0; j < subject_geometry.dims[1]; ++j)
      for (int i = 0; i < subject_geometry.dims[0]; ++i) {
        const Eigen::Vector3d z = (map * Eigen::Vector4d(i, j, k, 1.0)).head<3>();
        const Eigen::Vector3d x = z + sample_field(inverse_field, z).cast<double>();
        out(i, j, k) = sample_nearest<std::int16_t>(atlas_labels, x, 0);
      }
  return out;
}

LabelMap transfer_labels(const LabelMap& atlas_labels, const AffineTransform& affine,
                         const DenseField& field, const Geometry& subject_geometry,
                         FieldInversion* inversion_report) {
  FieldInversion inv = invert_field(field);
  LabelMap out = transfer_labels_with_inverse(atlas_labels, affine, inv.inverse, subject_geometry);
  if (inversion_report)
    *inversion_report = std::move(inv);
  return out;
}

FieldStats field_stats(const DenseField& u) {
  FieldStats s;
  const NormStats n = reduce_norms(
      u.geometry, [&](int i, int j, int k) { return static_cast<double>(u.at(i, j, k).norm()); });
  s.mean_norm = n.sum / static_cast<double>(u.geometry.voxel_count());
  s.max_norm = n.max;
  for (const auto& d : u.disp)
    s.max_component = std::max(s.max_component, static_cast<double>(d.cwiseAbs().maxCoeff()));
  return s;
}

namespace {

template <typename T>
void put(std::ofstream& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.write(bytes, sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  char bytes[sizeof(T)];
  if (!in.read(bytes, sizeof(T)))
    throw Error("truncated_file", "displacement field file is truncated");
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

} // namespace

void write_field(const DenseField& u, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out.write("DFLD", 4);
  put<std::uint32_t>(out, 1);
  for (int a = 0; a < 3; ++a)
    put<std::uint32_t>(out, static_cast<std::uint32_t>(u.geometry.dims[a]));
  for (int a = 0; a < 3; ++a)
    put<float>(out, static_cast<float>(u.geometry.spacing[a]));
  for (const auto& d : u.disp)
    for (int a = 0; a < 3; ++a)
      put<float>(out, d[a]);
  if (!out)
    throw Error("io_error", "short write to " + path.string());
}

DenseField read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("io_error", "cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DFLD", 4) != 0)
    throw Error("bad_magic", "not a DFLD displacement field: " + path.string());
  if (get<std::uint32_t>(in) != 1)
    throw Error("unsupported_version", "unsupported DFLD version");
  Geometry g;
  for (int a = 0; a < 3; ++a)
    g.dims[a] = static_cast<int>(get<std::uint32_t>(in));
  for (int a = 0; a < 3; ++a)
    g.spacing[a] = get<float>(in);
  g.validate();
  DenseField u = DenseField::zeros(g);
  for (auto& d : u.disp)
    for (int a = 0; a < 3; ++a)
      d[a] = get<float>(in);
  return u;
}

} // namespace katlas
