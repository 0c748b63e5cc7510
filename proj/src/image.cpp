#include "katlas/image.hpp"

#include <cmath>

namespace katlas {

namespace {
constexpr float kBodyThresholdHU = -500.0f;

constexpr const char* kOrganNames[] = {
    "background", "spleen",   "right_kidney", "left_kidney", "gall_bladder",
    "esophagus",  "liver",    "stomach",      "aorta",       "ivc",
    "portal_splenic_vein",    "pancreas",     "right_adrenal", "left_adrenal"};
} // namespace

const char* organ_name(int label) {
  if (label < 0 || label > kMaxLabel)
    return "unknown";
  return kOrganNames[label];
}

Eigen::Matrix4d Geometry::index_to_world_matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = direction * spacing.asDiagonal();
  m.topRightCorner<3, 1>() = origin;
  return m;
}

void Geometry::validate() const {
  for (int d : dims)
    if (d <= 0)
      throw Error("invalid_geometry", "dimensions must be positive");
  for (int a = 0; a < 3; ++a)
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw Error("invalid_geometry", "spacing must be positive");
  if (!origin.allFinite())
    throw Error("invalid_geometry", "origin must be finite");
  const Eigen::Matrix3d gram = direction.transpose() * direction;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw Error("invalid_geometry", "direction matrix is not orthonormal");
}

bool Geometry::matches(const Geometry& other, double tol) const {
  return dims == other.dims && (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
         (origin - other.origin).cwiseAbs().maxCoeff() <= tol &&
         (direction - other.direction).cwiseAbs().maxCoeff() <= tol;
}

void validate_volume(const Volume& v) {
  v.geometry().validate();
  for (float x : v.data())
    if (!std::isfinite(x))
      throw Error("invalid_volume", "volume contains non-finite values");
}

void validate_labels(const LabelMap& l) {
  l.geometry().validate();
  for (auto x : l.data())
    if (x < 0 || x > kMaxLabel)
      throw Error("invalid_labels", "label outside [0, 13]: " + std::to_string(x));
}

Image<std::uint8_t> body_mask(const Volume& v) {
  Image<std::uint8_t> mask(v.geometry(), std::uint8_t{0});
  auto in = v.data();
  auto out = mask.data();
  for (std::size_t n = 0; n < in.size(); ++n)
    out[n] = in[n] > kBodyThresholdHU ? 1 : 0;
  return mask;
}

} // namespace katlas
