#include "katlas/nifti_io.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <zlib.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <type_traits>

namespace katlas {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope, scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348);

enum DataType : std::int16_t {
  dt_uint8 = 2,
  dt_int16 = 4,
  dt_int32 = 8,
  dt_float32 = 16,
  dt_float64 = 64,
};

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
  case dt_uint8: return 1;
  case dt_int16: return 2;
  case dt_int32: return 4;
  case dt_float32: return 4;
  case dt_float64: return 8;
  default:
    throw Error("unsupported_datatype",
                "unsupported NIfTI datatype code " + std::to_string(datatype));
  }
}

struct GzCloser {
  void operator()(gzFile_s* f) const {
    if (f)
      gzclose(f);
  }
};
using GzFile = std::unique_ptr<gzFile_s, GzCloser>;

bool has_gz_suffix(const std::filesystem::path& p) { return p.extension() == ".gz"; }

// Nearest orthonormal matrix (polar factor); tolerates float-rounded sforms.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

Geometry geometry_from_header(const Nifti1Header& h) {
  Geometry g;
  for (int a = 0; a < 3; ++a)
    g.dims[a] = h.dim[a + 1];
  if (h.sform_code > 0) {
    Eigen::Matrix3d m;
    const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c)
        m(r, c) = rows[r][c];
      g.origin[r] = rows[r][3];
    }
    for (int c = 0; c < 3; ++c) {
      g.spacing[c] = m.col(c).norm();
      if (!(g.spacing[c] > 0.0))
        throw Error("invalid_geometry", "sform has a zero-length axis");
      m.col(c) /= g.spacing[c];
    }
    g.direction = orthonormalize(m);
  } else if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
    Eigen::Matrix3d r;
    r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
        2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
        2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
    if (h.pixdim[0] < 0)
      r.col(2) *= -1.0;
    g.direction = orthonormalize(r);
    for (int c2 = 0; c2 < 3; ++c2)
      g.spacing[c2] = std::abs(h.pixdim[c2 + 1]);
    g.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
  } else {
    for (int c = 0; c < 3; ++c)
      g.spacing[c] = std::abs(h.pixdim[c + 1]);
  }
  return g;
}

template <typename T>
std::vector<double> decode(const std::vector<char>& raw, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T value;
    std::memcpy(&value, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(value);
  }
  return out;
}

struct RawImage {
  Geometry geometry;
  std::vector<double> values;
  std::int16_t datatype = 0;
};

RawImage read_raw(const std::filesystem::path& path) {
  GzFile f(gzopen(path.string().c_str(), "rb"));
  if (!f)
    throw Error("io_error", "cannot open " + path.string());
  Nifti1Header h{};
  if (gzread(f.get(), &h, sizeof h) != static_cast<int>(sizeof h))
    throw Error("truncated_file", "truncated NIfTI header in " + path.string());
  if (h.sizeof_hdr != 348)
    throw Error("bad_header", "header size is not 348 (big-endian or not NIfTI-1)");
  if (std::memcmp(h.magic, "n+1\0", 4) != 0)
    throw Error("bad_magic", "missing NIfTI-1 single-file magic in " + path.string());
  if (h.dim[0] != 3)
    throw Error("unsupported_dims", "only 3D volumes are supported (dim[0] = " +
                                        std::to_string(h.dim[0]) + ")");
  const int bpv = bytes_per_voxel(h.datatype);

  RawImage out;
  out.datatype = h.datatype;
  out.geometry = geometry_from_header(h);
  out.geometry.validate();

  const auto offset = static_cast<long>(h.vox_offset);
  if (offset < 348 || gzseek(f.get(), offset, SEEK_SET) != offset)
    throw Error("truncated_file", "cannot seek to voxel data");
  const std::size_t n = out.geometry.voxel_count();
  std::vector<char> raw(n * bpv);
  std::size_t got = 0;
  while (got < raw.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(raw.size() - got, 1u << 30));
    const int r = gzread(f.get(), raw.data() + got, chunk);
    if (r <= 0)
      break;
    got += static_cast<std::size_t>(r);
  }
  if (got != raw.size())
    throw Error("truncated_file", "voxel payload shorter than header implies");

  switch (h.datatype) {
  case dt_uint8: out.values = decode<std::uint8_t>(raw, n); break;
  case dt_int16: out.values = decode<std::int16_t>(raw, n); break;
  case dt_int32: out.values = decode<std::int32_t>(raw, n); break;
  case dt_float32: out.values = decode<float>(raw, n); break;
  case dt_float64: out.values = decode<double>(raw, n); break;
  }
  const double slope = (h.scl_slope == 0.0f || !std::isfinite(h.scl_slope)) ? 1.0 : h.scl_slope;
  const double inter = std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
  if (slope != 1.0 || inter != 0.0)
    for (double& v : out.values)
      v = v * slope + inter;
  return out;
}

void fill_orientation(Nifti1Header& h, const Geometry& g) {
  const Eigen::Matrix4d m = g.index_to_world_matrix();
  float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      rows[r][c] = static_cast<float>(m(r, c));
  h.sform_code = 1;

  Eigen::Matrix3d r = g.direction;
  float qfac = 1.0f;
  if (r.determinant() < 0) {
    r.col(2) *= -1.0;
    qfac = -1.0f;
  }
  Eigen::Quaterniond q(r);
  q.normalize();
  if (q.w() < 0)
    q.coeffs() *= -1.0;
  h.quatern_b = static_cast<float>(q.x());
  h.quatern_c = static_cast<float>(q.y());
  h.quatern_d = static_cast<float>(q.z());
  h.qoffset_x = static_cast<float>(g.origin.x());
  h.qoffset_y = static_cast<float>(g.origin.y());
  h.qoffset_z = static_cast<float>(g.origin.z());
  h.qform_code = 1;
  h.pixdim[0] = qfac;
}

template <typename T>
void write_image(const Geometry& g, std::span<const T> data, std::int16_t datatype,
                 const std::filesystem::path& path) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  for (int a = 0; a < 3; ++a)
    h.dim[a + 1] = static_cast<std::int16_t>(g.dims[a]);
  for (int a = 4; a < 8; ++a)
    h.dim[a] = 1;
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(8 * sizeof(T));
  for (int a = 0; a < 3; ++a)
    h.pixdim[a + 1] = static_cast<float>(g.spacing[a]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2; // mm
  fill_orientation(h, g);
  std::memcpy(h.magic, "n+1\0", 4);

  std::vector<char> bytes(352 + data.size_bytes(), 0);
  std::memcpy(bytes.data(), &h, sizeof h);
  std::memcpy(bytes.data() + 352, data.data(), data.size_bytes());

  const bool gz = has_gz_suffix(path);
  // Level 6 with no filename/mtime in the gzip header keeps outputs reproducible.
  GzFile f(gzopen(path.string().c_str(), gz ? "wb6" : "wbT"));
  if (!f)
    throw Error("io_error", "cannot open " + path.string() + " for writing");
  std::size_t put = 0;
  while (put < bytes.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - put, 1u << 30));
    if (gzwrite(f.get(), bytes.data() + put, chunk) != static_cast<int>(chunk))
      throw Error("io_error", "short write to " + path.string());
    put += chunk;
  }
  if (gzclose(f.release()) != Z_OK)
    throw Error("io_error", "cannot finalize " + path.string());
}

} // namespace

Volume read_volume(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  std::vector<float> data(raw.values.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = static_cast<float>(raw.values[i]);
  Volume v(raw.geometry, std::move(data));
  validate_volume(v);
  return v;
}

LabelMap read_labels(const std::filesystem::path& path) {
  RawImage raw = read_raw(path);
  std::vector<std::int16_t> data(raw.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double x = raw.values[i];
    if (x != std::round(x) || x < 0 || x > kMaxLabel)
      throw Error("invalid_labels", "label file contains a non-label value");
    data[i] = static_cast<std::int16_t>(x);
  }
  return LabelMap(raw.geometry, std::move(data));
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  validate_volume(v);
  write_image<float>(v.geometry(), v.data(), dt_float32, path);
}

void write_labels(const LabelMap& l, const std::filesystem::path& path) {
  validate_labels(l);
  write_image<std::int16_t>(l.geometry(), l.data(), dt_int16, path);
}

} // namespace katlas
