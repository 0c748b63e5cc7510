#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace katlas {

/// Raised for every contract violation in the toolkit. The `code` is a short
/// machine-readable tag surfaced by the CLI in its JSON error payload.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

inline constexpr float kAirHU = -1024.0f;
inline constexpr int kMaxLabel = 13;

/// Organ ids of the 13-organ abdominal label set.
enum class Organ : std::int16_t {
  background = 0,
  spleen = 1,
  right_kidney = 2,
  left_kidney = 3,
  gall_bladder = 4,
  esophagus = 5,
  liver = 6,
  stomach = 7,
  aorta = 8,
  ivc = 9,
  portal_splenic_vein = 10,
  pancreas = 11,
  right_adrenal = 12,
  left_adrenal = 13,
};

const char* organ_name(int label);

/// Voxel grid placement in world (RAS, mm) space. Index order is x-fastest.
struct Geometry {
  std::array<int, 3> dims{1, 1, 1};
  Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Matrix3d direction = Eigen::Matrix3d::Identity();

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  }
  Eigen::Vector3d index_to_world(const Eigen::Vector3d& ijk) const {
    return origin + direction * spacing.cwiseProduct(ijk);
  }
  Eigen::Vector3d world_to_index(const Eigen::Vector3d& p) const {
    return (direction.transpose() * (p - origin)).cwiseQuotient(spacing);
  }
  /// 4x4 homogeneous index -> world map.
  Eigen::Matrix4d index_to_world_matrix() const;

  /// Throws Error("invalid_geometry") on non-positive dims/spacing or a
  /// direction matrix that is not orthonormal within 1e-6.
  void validate() const;
  bool matches(const Geometry& other, double tol = 1e-5) const;
};

template <typename T>
class Image {
public:
  using value_type = T;

  Image() = default;
  Image(Geometry geometry, T fill)
      : geometry_(std::move(geometry)), data_(geometry_.voxel_count(), fill) {}
  Image(Geometry geometry, std::vector<T> data)
      : geometry_(std::move(geometry)), data_(std::move(data)) {
    if (data_.size() != geometry_.voxel_count())
      throw Error("invalid_image", "data length does not match geometry");
  }

  const Geometry& geometry() const { return geometry_; }
  void set_geometry(const Geometry& g) {
    if (g.voxel_count() != data_.size())
      throw Error("invalid_image", "geometry does not match data length");
    geometry_ = g;
  }
  int nx() const { return geometry_.dims[0]; }
  int ny() const { return geometry_.dims[1]; }
  int nz() const { return geometry_.dims[2]; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx()) * (static_cast<std::size_t>(j) +
                                             static_cast<std::size_t>(ny()) * k);
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < nx() && j < ny() && k < nz();
  }
  T& operator()(int i, int j, int k) { return data_[index(i, j, k)]; }
  const T& operator()(int i, int j, int k) const { return data_[index(i, j, k)]; }
  T& operator[](std::size_t n) { return data_[n]; }
  const T& operator[](std::size_t n) const { return data_[n]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

private:
  Geometry geometry_;
  std::vector<T> data_;
};

using Volume = Image<float>;
using LabelMap = Image<std::int16_t>;

template <typename T>
constexpr T fill_value() {
  if constexpr (std::is_floating_point_v<T>)
    return static_cast<T>(kAirHU);
  else
    return T{0};
}

/// Throws unless all values are finite.
void validate_volume(const Volume& v);
/// Throws unless all labels are in [0, 13].
void validate_labels(const LabelMap& l);

/// 3D body mask: voxels above -500 HU.
Image<std::uint8_t> body_mask(const Volume& v);

} // namespace katlas
