#pragma once

#include "katlas/image.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace katlas {

/// 2|P∩G| / (|P|+|G|); 1 when the label is absent from both.
double dice(const LabelMap& p, const LabelMap& g, int label);

/// World-space centres of the voxel faces of `label` not shared with another
/// voxel of the same label. Throws label_absent when the label has no voxels.
std::vector<Eigen::Vector3d> extract_surface(const LabelMap& l, int label);

/// Directed: mean (msd) and max (hd) over a in `from` of the distance to the
/// nearest point of `to`.
double msd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to);
double hd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to);
/// Mean / max of the two directed values.
double msd_symmetric(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b);
double hd_symmetric(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b);

enum class WilcoxonMode { normal, exact, automatic };

struct WilcoxonResult {
  int n = 0;            ///< non-zero differences
  double w_plus = 0.0;
  double w_minus = 0.0;
  double w = 0.0;       ///< min(w_plus, w_minus)
  double z = 0.0;       ///< normal approximation with tie correction
  double p = 1.0;       ///< two-sided
  bool exact = false;   ///< p from the exact null distribution
};

/// Zero differences are dropped and tied |d| get average ranks. `automatic`
/// uses the exact distribution for n <= 12, the normal approximation above.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs,
                                    WilcoxonMode mode = WilcoxonMode::automatic);

struct MetricRow {
  std::string subject;
  int organ_id = 0;
  double dice = 0.0;
  std::optional<double> msd_mm; ///< empty when either side lacks the organ
  std::optional<double> hd_mm;
};

/// One row per organ id 1..13 present in prediction or truth; distances are
/// directed from prediction to truth unless `symmetric`.
std::vector<MetricRow> evaluate_labels(const LabelMap& predicted, const LabelMap& truth,
                                       const std::string& subject, bool symmetric = false);

void write_metrics(const std::vector<MetricRow>& rows, const std::filesystem::path& path);

} // namespace katlas
