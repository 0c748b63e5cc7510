#pragma once

#include "katlas/affine.hpp"
#include "katlas/atlas.hpp"
#include "katlas/deform.hpp"
#include "katlas/field.hpp"
#include "katlas/metrics.hpp"
#include "katlas/voi.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace katlas {

struct PipelineConfig {
  double crop_low = kWindowLow;
  double crop_high = kWindowHigh;
  AffineSchedule affine;
  LevelSchedule deform = LevelSchedule::standard();
  DeformParams deform_params;
  SuccessThresholds success;
  int threads = 0; ///< 0 keeps the OpenMP default
  int inversion_max_iter = 30;
  double inversion_tol = 0.01;
  bool symmetric_metrics = false;
  /// Linear scorer weights used for subjects without a score sidecar.
  std::optional<std::filesystem::path> scorer_path;
  std::optional<std::filesystem::path> out_dir;

  /// Throws invalid_config.
  void validate() const;
};

/// Every key is optional; missing keys keep the defaults above. Relative
/// paths resolve against the config file's directory.
PipelineConfig read_config(const std::filesystem::path& path);
PipelineConfig config_from_json(const std::string& text,
                                const std::filesystem::path& base_dir = {});
std::string config_to_json(const PipelineConfig& c);

struct ManifestSubject {
  std::string id;
  std::filesystem::path volume;
  Phase phase = Phase::portal_venous;
  std::optional<std::filesystem::path> scores;
  std::optional<std::filesystem::path> labels; ///< ground truth, for evaluation
};

struct CohortManifest {
  std::filesystem::path atlas_volume;
  std::filesystem::path atlas_labels;
  std::vector<ManifestSubject> subjects;
};

/// Paths are resolved against the manifest directory and must exist
/// (missing_input); phase tags must parse; ids must be unique.
CohortManifest read_manifest(const std::filesystem::path& path);

/// Scores per axial slice of the canonical reorientation of `native`. Uses
/// the sidecar when given, then `<stem>.scores.json` next to the volume, then
/// the configured scorer. Sidecars list the stored slices and are flipped
/// when the stored z axis points inferior.
std::vector<double> subject_scores(const Volume& native, const ManifestSubject& s,
                                   const PipelineConfig& config);

/// VOI resampled onto the atlas grid. `to_subject` maps atlas world to the
/// subject's world, so the subject-space affine is to_subject * A.
struct PreparedSubject {
  Volume volume; ///< atlas geometry
  AffineTransform to_subject;
  SliceScoreSeries series;
  int first_slice = 0;
  int last_slice = 0;
};

/// Reorients to canonical, crops the fitted-score window, resamples at atlas
/// spacing centred on the VOI and crops/pads z to the atlas depth.
PreparedSubject prepare_subject(const Volume& native, const std::vector<double>& canonical_scores,
                                const Geometry& atlas, const PipelineConfig& config);

void write_prep(const PreparedSubject& p, const std::filesystem::path& path);
AffineTransform read_prep_affine(const std::filesystem::path& path);

struct SubjectResult {
  std::string id;
  Phase phase = Phase::portal_venous;
  PreparedSubject prep;
  AffineTransform affine;       ///< atlas world -> prepared world
  DenseField field;             ///< atlas grid
  Volume registered;            ///< atlas grid
  SuccessReport report;
  std::optional<LabelMap> transferred; ///< native subject geometry
  std::optional<FieldInversion> inversion;
  std::vector<MetricRow> metrics;
};

struct AtlasInputs {
  Volume volume;
  LabelMap labels;
};

SubjectResult run_subject(const AtlasInputs& atlas, const ManifestSubject& subject,
                          const PipelineConfig& config, bool transfer);

struct PipelineOutputs {
  std::vector<AtlasBundle> bundles;
  std::vector<MetricRow> metrics;
  int completed = 0; ///< subjects whose run did not throw
  int failed = 0;
};

/// Runs every subject, accumulates successful registrations per phase in
/// manifest order and writes bundles, metrics.json, pipeline_report.json and
/// per-subject outputs under `out/subjects/<id>/`. Subject failures are
/// recorded, never thrown.
PipelineOutputs run_pipeline(const CohortManifest& manifest, const PipelineConfig& config,
                             const std::filesystem::path& out, bool transfer);

} // namespace katlas
