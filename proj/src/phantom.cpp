#include "katlas/phantom.hpp"

#include "katlas/nifti_io.hpp"
#include "katlas/voi.hpp"

#include <Eigen/Geometry>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace katlas {

PhaseHU phase_hu(Phase p) {
  switch (p) {
  case Phase::non_contrast:
    return {55, 45, 30, 40, 40};
  case Phase::early_arterial:
    return {65, 90, 150, 300, 60};
  case Phase::late_arterial:
    return {80, 120, 180, 220, 100};
  case Phase::portal_venous:
    return {110, 120, 160, 160, 150};
  case Phase::delayed:
    return {80, 85, 120, 100, 100};
  }
  throw Error("invalid_phase", "unknown phase");
}

void PhantomParams::validate() const {
  for (int a = 0; a < 3; ++a)
    if (dims[a] < 1 || !(spacing[a] > 0.0))
      throw Error("invalid_phantom", "phantom dims and spacing must be positive");
  if (!(body_rx_mm > 0.0) || !(body_ry_mm > 0.0))
    throw Error("invalid_phantom", "body radii must be positive");
  for (double cc : kidney_cc)
    if (!(cc >= 80.0 && cc <= 400.0))
      throw Error("invalid_phantom", "kidney volume target must lie in [80, 400] cc");
  if (noise_sigma < 0.0 || texture_hu < 0.0 || body_scale_jitter < 0.0 || body_scale_jitter >= 0.5 ||
      organ_shift_jitter_mm < 0.0 || kidney_tilt_jitter_deg < 0.0 || dome_jitter_mm < 0.0)
    throw Error("invalid_phantom", "jitter ranges and noise must be non-negative");
}

PhantomParams atlas_phantom_params() { return PhantomParams{}; }

PhantomParams cohort_phantom_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  PhantomParams p;
  p.seed = seed;
  const double sxy = uniform(2.8, 3.2);
  const double sz = uniform(2.7, 3.3);
  p.spacing = {sxy, sxy, sz};
  p.score_top = uniform(-7.5, -6.5);
  const double score_bottom = uniform(6.0, 7.0);
  p.dims[0] = p.dims[1] = static_cast<int>(std::lround(312.0 / sxy));
  p.dims[2] = static_cast<int>((score_bottom - p.score_top) * kPhantomMmPerScore / sz) + 1;
  p.center_mm = {uniform(-10.0, 10.0), uniform(-10.0, 10.0)};
  p.body_scale_jitter = 0.05;
  p.organ_shift_jitter_mm = 6.0;
  p.kidney_tilt_jitter_deg = 8.0;
  p.dome_jitter_mm = 15.0;
  return p;
}

namespace {

struct Ellipsoid {
  Eigen::Vector3d center; // anatomical (x', y', u)
  Eigen::Vector3d radii;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity(); // columns: local axes

  bool contains(const Eigen::Vector3d& q) const {
    const Eigen::Vector3d l = rotation.transpose() * (q - center);
    return l.cwiseQuotient(radii).squaredNorm() <= 1.0;
  }
};

struct Blob {
  Eigen::Vector3d center;
  double radius;
  double hu;
};

// Everything drawn from the seed, in a fixed order.
struct Anatomy {
  double body_scale;
  std::array<double, 2> dome; // right (+x), left
  Ellipsoid liver, spleen;
  std::array<Ellipsoid, 2> kidney;
  std::vector<Blob> bowel;
};

constexpr double kFatHU = -100.0, kMuscleHU = 50.0, kSoftHU = 35.0, kLungHU = -850.0;
constexpr double kBoneHU = 700.0, kDiscHU = 90.0;
constexpr double kFatBand = 12.0, kWallBand = 22.0; // mm inward from the skin

double kidney_semi_axis(double cc) {
  // Axis ratio 1 : 0.8 : 2, V = 4/3 pi a (0.8 a)(2 a).
  return std::cbrt(cc * 1000.0 * 3.0 / (4.0 * std::numbers::pi * 1.6));
}

Anatomy draw_anatomy(const PhantomParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  Anatomy a;
  a.body_scale = 1.0 + p.body_scale_jitter * sym(rng);
  for (auto& d : a.dome)
    d = p.dome_jitter_mm * sym(rng);
  auto shift = [&] {
    Eigen::Vector3d s;
    for (int i = 0; i < 3; ++i)
      s[i] = p.organ_shift_jitter_mm * sym(rng);
    return s;
  };
  a.liver = {Eigen::Vector3d(55, 5, 55) + shift(), {75, 70, 60}};
  a.spleen = {Eigen::Vector3d(-75, -25, 60) + shift(), {30, 45, 50}};
  const Eigen::Vector3d kc[2] = {{58, -30, 140}, {-58, -30, 128}};
  for (int s = 0; s < 2; ++s) {
    const double r = kidney_semi_axis(p.kidney_cc[s]);
    Ellipsoid& k = a.kidney[s];
    k.center = kc[s] + shift();
    k.radii = {r, 0.8 * r, 2.0 * r};
    const double deg = std::numbers::pi / 180.0;
    const double ty = p.kidney_tilt_jitter_deg * sym(rng) * deg;
    const double tx = p.kidney_tilt_jitter_deg * sym(rng) * deg;
    k.rotation = (Eigen::AngleAxisd(ty, Eigen::Vector3d::UnitY()) *
                  Eigen::AngleAxisd(tx, Eigen::Vector3d::UnitX()))
                     .toRotationMatrix();
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int b = 0; b < 30; ++b) {
    Blob blob;
    blob.center = {-90.0 + 180.0 * u01(rng), -10.0 + 80.0 * u01(rng), 150.0 + 250.0 * u01(rng)};
    blob.radius = 10.0 + 10.0 * u01(rng);
    const double t = u01(rng);
    blob.hu = t < 0.25 ? -700.0 : (t < 0.6 ? -90.0 : 70.0);
    a.bowel.push_back(blob);
  }
  return a;
}

double body_factor(double scale, double u) {
  const double score = u / kPhantomMmPerScore - 5.0;
  return scale * (1.0 + 0.02 * score);
}

// Normalized elliptic radius of (x', y') at depth u; <= 1 inside the body.
double body_radius(const PhantomParams& p, double scale, double x, double y, double u) {
  const double f = body_factor(scale, u);
  return std::hypot(x / (p.body_rx_mm * f), y / (p.body_ry_mm * f));
}

// Depth of the diaphragm below the score -5 anchor at (x', y').
double diaphragm(const Anatomy& a, double x, double y) {
  const double d = a.dome[x >= 0.0 ? 0 : 1];
  const double lx = std::abs(x) - 65.0;
  return d + 0.012 * (lx * lx + y * y);
}

// Band-limited pattern: a sum of plane waves with 12-30 mm wavelengths,
// normalized to unit RMS.
class Texture {
public:
  Texture() {
    std::mt19937_64 rng(0x7e57u);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (auto& w : waves_) {
      Eigen::Vector3d dir(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
      dir.normalize();
      const double wavelength = 12.0 + 18.0 * u01(rng);
      w.k = dir * (2.0 * std::numbers::pi / wavelength);
      w.phase = 2.0 * std::numbers::pi * u01(rng);
    }
  }
  double operator()(const Eigen::Vector3d& q) const {
    double s = 0.0;
    for (const auto& w : waves_)
      s += std::cos(w.k.dot(q) + w.phase);
    return s * std::sqrt(2.0 / static_cast<double>(waves_.size()));
  }

private:
  struct Wave {
    Eigen::Vector3d k;
    double phase;
  };
  std::array<Wave, 24> waves_;
};

void check_kidneys_inside(const PhantomParams& p, const Anatomy& a) {
  for (int s = 0; s < 2; ++s) {
    const Ellipsoid& k = a.kidney[s];
    for (int it = 0; it <= 24; ++it) {
      const double theta = std::numbers::pi * it / 24.0;
      for (int ip = 0; ip < 48; ++ip) {
        const double phi = 2.0 * std::numbers::pi * ip / 48.0;
        const Eigen::Vector3d local(k.radii.x() * std::sin(theta) * std::cos(phi),
                                    k.radii.y() * std::sin(theta) * std::sin(phi),
                                    k.radii.z() * std::cos(theta));
        const Eigen::Vector3d q = k.center + k.rotation * local;
        if (body_radius(p, a.body_scale, q.x(), q.y(), q.z()) > 1.0)
          throw Error("organ_outside_body", std::string(s == 0 ? "right" : "left") +
                                                " kidney extends outside the body");
      }
    }
  }
}

} // namespace

Phantom generate_phantom(const PhantomParams& p) {
  p.validate();
  std::mt19937_64 rng(p.seed);
  const Anatomy a = draw_anatomy(p, rng);
  check_kidneys_inside(p, a);
  const PhaseHU hu = phase_hu(p.phase);
  static const Texture texture;

  Geometry g;
  g.dims = p.dims;
  g.spacing = p.spacing;
  g.origin = {-0.5 * (p.dims[0] - 1) * p.spacing[0], -0.5 * (p.dims[1] - 1) * p.spacing[1], 0.0};
  const double z_top = (p.dims[2] - 1) * p.spacing[2];
  const double z_anchor = z_top + (p.score_top + 5.0) * kPhantomMmPerScore;

  Phantom out;
  out.volume = Volume(g, kAirHU);
  out.labels = LabelMap(g, std::int16_t{0});
  for (int k = 0; k < g.dims[2]; ++k) {
    const double z = k * g.spacing[2];
    out.scores.push_back(-5.0 + (z_anchor - z) / kPhantomMmPerScore);
  }

  for (int k = 0; k < g.dims[2]; ++k) {
    const double u = z_anchor - k * g.spacing[2];
    const double f = body_factor(a.body_scale, u);
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Eigen::Vector3d w = g.index_to_world(Eigen::Vector3d(i, j, k));
        const double x = w.x() - p.center_mm.x(), y = w.y() - p.center_mm.y();
        const double r = body_radius(p, a.body_scale, x, y, u);
        if (r > 1.0)
          continue;
        const Eigen::Vector3d q(x, y, u);
        const double depth = (1.0 - r) * p.body_ry_mm * f;
        double value = depth < kFatBand ? kFatHU : (depth < kWallBand ? kMuscleHU : kSoftHU);
        std::int16_t label = 0;
        const bool interior = depth >= kWallBand;
        const bool below_diaphragm = u > diaphragm(a, x, y);
        if (interior && !below_diaphragm && std::abs(x) > 22.0)
          value = kLungHU;
        if (interior && below_diaphragm) {
          for (const auto& b : a.bowel)
            if ((q - b.center).squaredNorm() <= b.radius * b.radius) {
              value = b.hu;
              break;
            }
          if (a.liver.contains(q)) {
            value = hu.liver;
            label = static_cast<std::int16_t>(Organ::liver);
          } else if (a.spleen.contains(q)) {
            value = hu.spleen;
            label = static_cast<std::int16_t>(Organ::spleen);
          }
        }
        if (std::hypot(x + 15.0, y + 25.0) <= 11.0 && u < 260.0) {
          value = hu.aorta;
          label = static_cast<std::int16_t>(Organ::aorta);
        } else if (std::hypot(x - 20.0, y + 20.0) <= 12.0 && u > 20.0 && u < 270.0) {
          value = hu.ivc;
          label = static_cast<std::int16_t>(Organ::ivc);
        }
        if (std::hypot(x, y + 55.0) <= 17.0) {
          const double phase = std::fmod(u + 7.0 + 300.0, 30.0);
          value = phase < 6.0 ? kDiscHU : kBoneHU;
          label = 0;
        }
        for (int s = 0; s < 2; ++s)
          if (a.kidney[s].contains(q)) {
            value = hu.kidney;
            label = static_cast<std::int16_t>(s == 0 ? Organ::right_kidney : Organ::left_kidney);
          }
        if (value != kBoneHU && value != kLungHU)
          value += p.texture_hu * texture(q);
        out.volume(i, j, k) = static_cast<float>(value);
        out.labels(i, j, k) = label;
      }
  }

  if (p.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, p.noise_sigma);
    for (auto& v : out.volume.data())
      v = static_cast<float>(v + noise(rng));
  }

  for (int s = 0; s < 2; ++s) {
    const Eigen::Vector3d& c = a.kidney[s].center;
    out.kidney_centers_mm[s] = {c.x() + p.center_mm.x(), c.y() + p.center_mm.y(), z_anchor - c.z()};
  }
  return out;
}

DenseField synthetic_warp_field(const Geometry& g, const SyntheticWarp& w) {
  if (!(w.amplitude >= 0.0 && w.amplitude <= 6.0) || !(w.wavelength > 0.0) ||
      w.wavelength < 8.0 * w.amplitude)
    throw Error("invalid_warp", "synthetic warp needs amplitude <= 6 and wavelength >= 8 x amplitude");
  DenseField u = DenseField::zeros(g);
  if (w.amplitude == 0.0)
    return u;
  const double omega = 2.0 * std::numbers::pi / w.wavelength;
  const double c = w.amplitude / std::sqrt(3.0);
  // Phases put sin = 1 on all three components at the centre voxel.
  const double half_pi = 0.5 * std::numbers::pi;
  const double px = half_pi - omega * (g.dims[1] / 2);
  const double py = half_pi - omega * (g.dims[2] / 2);
  const double pz = half_pi - omega * (g.dims[0] / 2);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i)
        u.at(i, j, k) = Eigen::Vector3d(c * std::sin(omega * j + px), c * std::sin(omega * k + py),
                                        c * std::sin(omega * i + pz))
                            .cast<float>();
  return u;
}

WarpedPhantom apply_synthetic_warp(const Volume& v, const LabelMap& l, const SyntheticWarp& w) {
  if (v.geometry().dims != l.geometry().dims)
    throw Error("geometry_mismatch", "volume and labels differ in size");
  WarpedPhantom out;
  out.field = synthetic_warp_field(v.geometry(), w);
  const auto id = AffineTransform::identity();
  out.volume = warp_volume(v, out.field, id, Interp::linear);
  out.labels = warp_volume(l, out.field, id, Interp::nearest);
  return out;
}

std::filesystem::path write_phantom_cohort(const std::filesystem::path& dir,
                                           const CohortOptions& options) {
  if (options.subjects < 1 || options.phases.empty())
    throw Error("invalid_argument", "cohort needs at least one subject and one phase");
  if (!(options.kidney_cc_min >= 80.0 && options.kidney_cc_max <= 400.0 &&
        options.kidney_cc_min <= options.kidney_cc_max))
    throw Error("invalid_argument", "kidney volume range must lie in [80, 400] cc");
  std::filesystem::create_directories(dir);

  const Phantom atlas = generate_phantom(atlas_phantom_params());
  write_volume(atlas.volume, dir / "atlas.nii");
  write_labels(atlas.labels, dir / "atlas_labels.nii");

  // Right-kidney volumes evenly span the range, in seeded order.
  std::mt19937_64 rng(options.seed);
  std::vector<double> cc(options.subjects);
  for (int i = 0; i < options.subjects; ++i)
    cc[i] = options.subjects == 1
                ? 0.5 * (options.kidney_cc_min + options.kidney_cc_max)
                : options.kidney_cc_min + (options.kidney_cc_max - options.kidney_cc_min) * i /
                                              (options.subjects - 1);
  std::shuffle(cc.begin(), cc.end(), rng);
  std::uniform_real_distribution<double> ratio(0.9, 1.1);

  nlohmann::json subjects = nlohmann::json::array();
  for (int i = 0; i < options.subjects; ++i) {
    PhantomParams p = cohort_phantom_params(options.seed * 1000003ULL + static_cast<unsigned>(i));
    p.phase = options.phases[i % options.phases.size()];
    p.kidney_cc = {cc[i], std::clamp(cc[i] * ratio(rng), options.kidney_cc_min,
                                     options.kidney_cc_max)};
    const Phantom ph = generate_phantom(p);
    char id[16];
    std::snprintf(id, sizeof id, "s%03d", i);
    const std::string stem = id;
    write_volume(ph.volume, dir / (stem + ".nii"));
    write_labels(ph.labels, dir / (stem + "_labels.nii"));
    write_score_sidecar(ph.scores, dir / (stem + ".scores.json"));
    subjects.push_back({{"id", stem},
                        {"volume", stem + ".nii"},
                        {"labels", stem + "_labels.nii"},
                        {"scores", stem + ".scores.json"},
                        {"phase", phase_name(p.phase)},
                        {"kidney_cc", {p.kidney_cc[0], p.kidney_cc[1]}}});
  }
  nlohmann::json manifest{
      {"atlas", {{"volume", "atlas.nii"}, {"labels", "atlas_labels.nii"}}},
      {"subjects", subjects}};
  const auto path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

} // namespace katlas
