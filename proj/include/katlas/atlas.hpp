#pragma once

#include "katlas/image.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace katlas {

/// Isotropic voxel size of the clinical atlas grid, mm.
inline constexpr double kClinicalAtlasSpacingMm = 0.86;

enum class Phase { non_contrast, early_arterial, late_arterial, portal_venous, delayed };

const char* phase_name(Phase p);
/// Throws invalid_phase for anything outside the five tags.
Phase parse_phase(const std::string& s);

struct SuccessReport {
  bool success = false;
  double body_dice = 0.0;
  double ncc = 0.0;
  double ncc_before = 0.0; ///< -1 without a pre-registration image
};

struct SuccessThresholds {
  double min_body_dice = 0.90;
  bool require_ncc_gain = true;
};

/// Body-mask Dice of registered vs fixed, and NCC over the fixed body mask.
/// With `before`, success also needs NCC(registered) >= NCC(before).
SuccessReport success_filter(const Volume& registered, const Volume& fixed,
                             const Volume* before = nullptr,
                             const SuccessThresholds& thresholds = {});

/// NCC of the two images over voxels where mask != 0; 0 for a constant side.
double masked_ncc(const Volume& a, const Volume& b, const Image<std::uint8_t>& mask);

/// Streaming per-voxel mean and population variance (Welford, double).
class AtlasAccumulator {
public:
  explicit AtlasAccumulator(Geometry geometry);

  void add(const Volume& v);
  int count() const { return count_; }
  const Geometry& geometry() const { return geometry_; }
  Volume mean() const;
  /// Population variance (divide by N), HU^2; zero when nothing was added.
  Volume variance() const;

private:
  Geometry geometry_;
  int count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct SubjectRecord {
  std::string id;
  bool success = false;
  SuccessReport report;
  std::string error; ///< non-empty when the subject's pipeline threw
};

struct AtlasBundle {
  Phase phase = Phase::portal_venous;
  Volume mean;
  Volume variance;
  int count = 0; ///< number of successful subjects
  std::string labels_path;
  std::vector<SubjectRecord> subjects;
};

AtlasBundle finish_bundle(Phase phase, const AtlasAccumulator& acc, std::string labels_path,
                          std::vector<SubjectRecord> subjects);

/// Writes <phase>_mean.nii, <phase>_variance.nii and <phase>_report.json.
void write_bundle(const AtlasBundle& b, const std::filesystem::path& dir);

} // namespace katlas
