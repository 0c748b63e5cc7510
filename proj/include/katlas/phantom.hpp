#pragma once

#include "katlas/atlas.hpp"
#include "katlas/field.hpp"
#include "katlas/image.hpp"

#include <cstdint>
#include <filesystem>

namespace katlas {

/// Body-coordinate scale of the phantoms: one score unit spans this many mm
/// along z, and the score grows toward the feet.
inline constexpr double kPhantomMmPerScore = 28.8;

/// HU presets per contrast phase. Illustrative values only.
struct PhaseHU {
  double liver, spleen, kidney, aorta, ivc;
};
PhaseHU phase_hu(Phase p);

struct PhantomParams {
  std::uint64_t seed = 0;
  std::array<int, 3> dims{96, 96, 96};
  Eigen::Vector3d spacing{3.0, 3.0, 3.0};
  /// True score at the centre of the most superior slice.
  double score_top = -5.0 + 0.5 * 3.0 / kPhantomMmPerScore;
  /// Body centre in world x/y (mm).
  Eigen::Vector2d center_mm{0.0, 0.0};
  double body_rx_mm = 125.0;
  double body_ry_mm = 95.0;
  /// Requested ellipsoid volume per kidney: right (id 2), left (id 3).
  std::array<double, 2> kidney_cc{200.0, 200.0};
  Phase phase = Phase::portal_venous;
  double noise_sigma = 10.0;
  /// Amplitude of the smooth soft-tissue texture. The pattern is a fixed
  /// function of anatomical position, shared by all phantoms.
  double texture_hu = 25.0;

  // Jitter ranges, drawn uniformly in [-x, x] from `seed`. Zero gives the
  // nominal anatomy.
  double body_scale_jitter = 0.0;  ///< relative
  double organ_shift_jitter_mm = 0.0;
  double kidney_tilt_jitter_deg = 0.0;
  double dome_jitter_mm = 0.0;

  /// Throws invalid_phantom on non-positive sizes or kidney volumes outside
  /// [80, 400] cc.
  void validate() const;
};

/// Defaults with the jitter used for randomized cohorts.
PhantomParams cohort_phantom_params(std::uint64_t seed);

struct Phantom {
  Volume volume;
  LabelMap labels;
  std::vector<double> scores; ///< true score per axial slice
  std::array<Eigen::Vector3d, 2> kidney_centers_mm;
};

/// Canonical (RAS, identity direction) synthetic abdomen. Throws
/// organ_outside_body when a kidney does not fit inside the body.
Phantom generate_phantom(const PhantomParams& params);

struct SyntheticWarp {
  double amplitude = 4.0;   ///< voxels; maximum displacement norm
  double wavelength = 40.0; ///< voxels
};

struct WarpedPhantom {
  Volume volume;
  LabelMap labels;
  DenseField field; ///< the pull-back field used: out(x) = in(x + u(x))
};

/// u(x) = A/sqrt(3) (sin(w y + a), sin(w z + b), sin(w x + c)), w = 2 pi / lambda,
/// with phases placing the peak norm A at the centre voxel. Needs A <= 6 and
/// lambda >= 8 A, which keeps det(I + grad u) > 0.
DenseField synthetic_warp_field(const Geometry& g, const SyntheticWarp& w);
WarpedPhantom apply_synthetic_warp(const Volume& v, const LabelMap& l, const SyntheticWarp& w);

struct CohortOptions {
  int subjects = 20;
  std::uint64_t seed = 1;
  std::vector<Phase> phases{Phase::portal_venous}; ///< assigned round-robin
  double kidney_cc_min = 100.0;
  double kidney_cc_max = 308.0;
};

/// Writes atlas.nii / atlas_labels.nii, per subject sNNN.nii, sNNN_labels.nii
/// and sNNN.scores.json, plus manifest.json. Returns the manifest path.
std::filesystem::path write_phantom_cohort(const std::filesystem::path& dir,
                                           const CohortOptions& options);

/// The atlas target: nominal anatomy, 96^3 at 3 mm covering scores [-5, 5].
PhantomParams atlas_phantom_params();

} // namespace katlas
