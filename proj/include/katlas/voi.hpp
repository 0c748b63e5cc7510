#pragma once

#include "katlas/image.hpp"

#include <filesystem>
#include <variant>

namespace katlas {

inline constexpr double kScoreMin = -12.0;
inline constexpr double kScoreMax = 12.0;
/// Abdominal-to-retroperitoneal window on the body-coordinate score.
inline constexpr double kWindowLow = -5.0;
inline constexpr double kWindowHigh = 5.0;
inline constexpr int kMinVoiSlices = 16;

/// Per-axial-slice features of the body mask.
struct SliceFeatures {
  static constexpr int kCount = 5;
  struct Row {
    double area_mm2 = 0.0;
    double mean_hu = 0.0;
    double air_fraction = 0.0;
    double bone_fraction = 0.0;
    double centroid_offset_mm = 0.0;

    std::array<double, kCount> as_array() const {
      return {area_mm2, mean_hu, air_fraction, bone_fraction, centroid_offset_mm};
    }
  };
  std::vector<Row> rows;
};

/// Body mask of one axial slice: largest 4-connected component above -500 HU
/// with enclosed holes filled. Returned as a flat nx*ny mask.
std::vector<std::uint8_t> slice_body_mask(const Volume& v, int z);

SliceFeatures compute_slice_features(const Volume& v);

/// Scores read verbatim from a sidecar.
struct FileScorer {
  std::vector<double> scores;
};

/// Dot product of standardized features with weights, plus bias.
struct LinearScorer {
  std::array<double, SliceFeatures::kCount> mean{};
  std::array<double, SliceFeatures::kCount> scale{1, 1, 1, 1, 1};
  std::array<double, SliceFeatures::kCount> weights{};
  double bias = 0.0;

  double predict(const SliceFeatures::Row& row) const;
};

using SliceScorer = std::variant<FileScorer, LinearScorer>;

/// One raw score per slice, clamped to [-12, 12].
std::vector<double> score_slices(const SliceFeatures& features, const SliceScorer& scorer);

/// Ridge-regularized (lambda = 1e-6) least squares on standardized features.
LinearScorer fit_scorer(const std::vector<SliceFeatures::Row>& features,
                        const std::vector<double>& targets);

struct SliceScoreSeries {
  std::vector<double> raw;
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> fitted;
};

/// Least-squares line of raw score against slice index.
SliceScoreSeries fit_linear_correction(const std::vector<double>& raw);

/// Closed slice range [first, last] whose fitted scores lie in the window.
std::pair<int, int> window_slice_range(const SliceScoreSeries& series, double low = kWindowLow,
                                       double high = kWindowHigh);
Volume crop_to_window(const Volume& v, const SliceScoreSeries& series, double low = kWindowLow,
                      double high = kWindowHigh);

std::vector<double> read_score_sidecar(const std::filesystem::path& path);
void write_score_sidecar(const std::vector<double>& scores, const std::filesystem::path& path);
/// `<dir>/<stem>.scores.json` for a volume path (".nii" / ".nii.gz" stripped).
std::filesystem::path sidecar_path_for(const std::filesystem::path& volume_path);

void write_scorer(const LinearScorer& s, const std::filesystem::path& path);
LinearScorer read_scorer(const std::filesystem::path& path);

} // namespace katlas
