#include "katlas/atlas.hpp"

#include "katlas/metrics.hpp"
#include "katlas/nifti_io.hpp"

#include <json.hpp>

#include <array>
#include <cmath>
#include <fstream>

namespace katlas {

namespace {

constexpr std::array<const char*, 5> kPhaseNames = {"non_contrast", "early_arterial",
                                                    "late_arterial", "portal_venous", "delayed"};

} // namespace

const char* phase_name(Phase p) { return kPhaseNames[static_cast<int>(p)]; }

Phase parse_phase(const std::string& s) {
  for (std::size_t i = 0; i < kPhaseNames.size(); ++i)
    if (s == kPhaseNames[i])
      return static_cast<Phase>(i);
  throw Error("invalid_phase", "unknown contrast phase '" + s + "'");
}

double masked_ncc(const Volume& a, const Volume& b, const Image<std::uint8_t>& mask) {
  double sa = 0, sb = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) {
      sa += a[i];
      sb += b[i];
      ++n;
    }
  if (n == 0)
    return 0.0;
  const double ma = sa / n, mb = sb / n;
  double cab = 0, caa = 0, cbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (mask[i]) {
      const double x = a[i] - ma, y = b[i] - mb;
      cab += x * y;
      caa += x * x;
      cbb += y * y;
    }
  if (caa <= 0.0 || cbb <= 0.0)
    return 0.0;
  return cab / std::sqrt(caa * cbb);
}

SuccessReport success_filter(const Volume& registered, const Volume& fixed, const Volume* before,
                             const SuccessThresholds& thresholds) {
  if (!registered.geometry().matches(fixed.geometry()) ||
      (before && !before->geometry().matches(fixed.geometry())))
    throw Error("geometry_mismatch", "success filter needs images on the fixed grid");
  const auto mf = body_mask(fixed);
  const auto mr = body_mask(registered);
  std::size_t nf = 0, nr = 0, both = 0;
  for (std::size_t i = 0; i < mf.size(); ++i) {
    nf += mf[i] != 0;
    nr += mr[i] != 0;
    both += mf[i] && mr[i];
  }
  SuccessReport r;
  r.body_dice = nf + nr == 0 ? 1.0 : 2.0 * static_cast<double>(both) / static_cast<double>(nf + nr);
  r.ncc = masked_ncc(registered, fixed, mf);
  r.ncc_before = before ? masked_ncc(*before, fixed, mf) : -1.0;
  r.success = r.body_dice >= thresholds.min_body_dice &&
              (!thresholds.require_ncc_gain || r.ncc >= r.ncc_before);
  return r;
}

AtlasAccumulator::AtlasAccumulator(Geometry geometry)
    : geometry_(std::move(geometry)), mean_(geometry_.voxel_count(), 0.0),
      m2_(geometry_.voxel_count(), 0.0) {}

void AtlasAccumulator::add(const Volume& v) {
  if (!v.geometry().matches(geometry_))
    throw Error("geometry_mismatch", "accumulated volume is not on the atlas grid");
  ++count_;
  const double n = count_;
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double x = v[i];
    const double delta = x - mean_[i];
    mean_[i] += delta / n;
    m2_[i] += delta * (x - mean_[i]);
  }
}

Volume AtlasAccumulator::mean() const {
  Volume out(geometry_, 0.0f);
  for (std::size_t i = 0; i < mean_.size(); ++i)
    out[i] = static_cast<float>(mean_[i]);
  return out;
}

Volume AtlasAccumulator::variance() const {
  Volume out(geometry_, 0.0f);
  if (count_ == 0)
    return out;
  for (std::size_t i = 0; i < m2_.size(); ++i)
    out[i] = static_cast<float>(std::max(0.0, m2_[i] / count_));
  return out;
}

AtlasBundle finish_bundle(Phase phase, const AtlasAccumulator& acc, std::string labels_path,
                          std::vector<SubjectRecord> subjects) {
  AtlasBundle b;
  b.phase = phase;
  b.mean = acc.mean();
  b.variance = acc.variance();
  b.count = acc.count();
  b.labels_path = std::move(labels_path);
  b.subjects = std::move(subjects);
  return b;
}

void write_bundle(const AtlasBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string stem = phase_name(b.phase);
  write_volume(b.mean, dir / (stem + "_mean.nii"));
  write_volume(b.variance, dir / (stem + "_variance.nii"));
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : b.subjects) {
    nlohmann::json row{{"id", s.id}, {"success", s.success}};
    if (s.error.empty()) {
      row["body_dice"] = s.report.body_dice;
      row["ncc"] = s.report.ncc;
      row["ncc_before"] = s.report.ncc_before;
    } else {
      row["error"] = s.error;
    }
    subjects.push_back(row);
  }
  nlohmann::json j{{"phase", stem},
                   {"count", b.count},
                   {"labels", b.labels_path},
                   {"mean", stem + "_mean.nii"},
                   {"variance", stem + "_variance.nii"},
                   {"subjects", subjects}};
  std::ofstream out(dir / (stem + "_report.json"));
  if (!out)
    throw Error("io_error", "cannot write atlas report in " + dir.string());
  out << j.dump(2) << '\n';
}

} // namespace katlas
