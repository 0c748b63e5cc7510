#include "katlas/voi.hpp"

#include "katlas/volume_ops.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace katlas {

namespace {

constexpr float kBodyHU = -500.0f;
constexpr float kAirHU300 = -300.0f;
constexpr float kBoneHU = 200.0f;
constexpr double kRidge = 1e-6;
constexpr double kWindowTol = 1e-9;

// 4-connected flood fill over `mask == value`, writing `id` into `comp`.
int flood(const std::vector<std::uint8_t>& mask, std::uint8_t value, int nx, int ny, int seed,
          int id, std::vector<int>& comp, std::vector<int>& stack) {
  int size = 0;
  stack.clear();
  stack.push_back(seed);
  comp[seed] = id;
  while (!stack.empty()) {
    const int p = stack.back();
    stack.pop_back();
    ++size;
    const int x = p % nx, y = p / nx;
    const int nbr[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
    for (const auto& q : nbr) {
      if (q[0] < 0 || q[1] < 0 || q[0] >= nx || q[1] >= ny)
        continue;
      const int n = q[0] + nx * q[1];
      if (comp[n] == 0 && mask[n] == value) {
        comp[n] = id;
        stack.push_back(n);
      }
    }
  }
  return size;
}

} // namespace

std::vector<std::uint8_t> slice_body_mask(const Volume& v, int z) {
  const int nx = v.nx(), ny = v.ny();
  const std::size_t n = static_cast<std::size_t>(nx) * ny;
  std::vector<std::uint8_t> fg(n);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      fg[x + nx * y] = v(x, y, z) > kBodyHU ? 1 : 0;

  std::vector<int> comp(n, 0), stack;
  int best_id = 0, best_size = 0, next_id = 1;
  for (std::size_t p = 0; p < n; ++p) {
    if (!fg[p] || comp[p] != 0)
      continue;
    const int size = flood(fg, 1, nx, ny, static_cast<int>(p), next_id, comp, stack);
    if (size > best_size) {
      best_size = size;
      best_id = next_id;
    }
    ++next_id;
  }
  std::vector<std::uint8_t> mask(n, 0);
  if (best_size == 0)
    return mask;
  for (std::size_t p = 0; p < n; ++p)
    mask[p] = comp[p] == best_id ? 1 : 0;

  // Fill holes: everything not reachable from the slice border is body.
  std::vector<int> outside(n, 0);
  auto seed = [&](int x, int y) {
    const int p = x + nx * y;
    if (!mask[p] && outside[p] == 0)
      flood(mask, 0, nx, ny, p, 1, outside, stack);
  };
  for (int x = 0; x < nx; ++x) {
    seed(x, 0);
    seed(x, ny - 1);
  }
  for (int y = 0; y < ny; ++y) {
    seed(0, y);
    seed(nx - 1, y);
  }
  for (std::size_t p = 0; p < n; ++p)
    mask[p] = outside[p] ? 0 : 1;
  return mask;
}

SliceFeatures compute_slice_features(const Volume& v) {
  SliceFeatures f;
  f.rows.resize(v.nz());
  const double sx = v.geometry().spacing.x(), sy = v.geometry().spacing.y();
#pragma omp parallel for schedule(static)
  for (int z = 0; z < v.nz(); ++z) {
    const auto mask = slice_body_mask(v, z);
    std::size_t count = 0, air = 0, bone = 0;
    double sum_hu = 0.0, sum_y = 0.0;
    int y_min = v.ny(), y_max = -1;
    for (int y = 0; y < v.ny(); ++y)
      for (int x = 0; x < v.nx(); ++x) {
        if (!mask[x + v.nx() * y])
          continue;
        const float hu = v(x, y, z);
        ++count;
        sum_hu += hu;
        sum_y += y;
        air += hu < kAirHU300;
        bone += hu > kBoneHU;
        y_min = std::min(y_min, y);
        y_max = std::max(y_max, y);
      }
    SliceFeatures::Row row;
    if (count > 0) {
      const double c = static_cast<double>(count);
      row.area_mm2 = c * sx * sy;
      row.mean_hu = sum_hu / c;
      row.air_fraction = static_cast<double>(air) / c;
      row.bone_fraction = static_cast<double>(bone) / c;
      row.centroid_offset_mm = (sum_y / c - 0.5 * (y_min + y_max)) * sy;
    }
    f.rows[z] = row;
  }
  return f;
}

double LinearScorer::predict(const SliceFeatures::Row& row) const {
  const auto x = row.as_array();
  double s = bias;
  for (int i = 0; i < SliceFeatures::kCount; ++i)
    s += weights[i] * (x[i] - mean[i]) / scale[i];
  return s;
}

std::vector<double> score_slices(const SliceFeatures& features, const SliceScorer& scorer) {
  std::vector<double> scores;
  if (const auto* file = std::get_if<FileScorer>(&scorer)) {
    if (file->scores.size() != features.rows.size())
      throw Error("sidecar_mismatch", "score sidecar has " + std::to_string(file->scores.size()) +
                                          " entries for " + std::to_string(features.rows.size()) +
                                          " slices");
    scores = file->scores;
  } else {
    const auto& linear = std::get<LinearScorer>(scorer);
    scores.reserve(features.rows.size());
    for (const auto& row : features.rows)
      scores.push_back(linear.predict(row));
  }
  for (double& s : scores) {
    if (!std::isfinite(s))
      throw Error("invalid_scores", "non-finite slice score");
    s = std::clamp(s, kScoreMin, kScoreMax);
  }
  return scores;
}

LinearScorer fit_scorer(const std::vector<SliceFeatures::Row>& features,
                        const std::vector<double>& targets) {
  constexpr int k = SliceFeatures::kCount;
  const auto n = static_cast<Eigen::Index>(features.size());
  if (n < 2 || targets.size() != features.size())
    throw Error("invalid_argument", "fit_scorer needs >= 2 samples with matching targets");

  LinearScorer s;
  Eigen::MatrixXd x(n, k);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = features[r].as_array();
    for (int c = 0; c < k; ++c)
      x(r, c) = row[c];
  }
  bool any_variation = false;
  for (int c = 0; c < k; ++c) {
    const double mean = x.col(c).mean();
    const double sd = std::sqrt((x.col(c).array() - mean).square().mean());
    s.mean[c] = mean;
    s.scale[c] = sd > 1e-12 ? sd : 1.0;
    any_variation |= sd > 1e-12;
    x.col(c) = (x.col(c).array() - mean) / s.scale[c];
  }
  if (!any_variation)
    throw Error("degenerate_features", "all feature rows are identical");

  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets.data(), n);
  s.bias = y.mean();
  const Eigen::MatrixXd normal = x.transpose() * x + kRidge * Eigen::MatrixXd::Identity(k, k);
  const Eigen::VectorXd w = normal.ldlt().solve(x.transpose() * (y.array() - s.bias).matrix());
  for (int c = 0; c < k; ++c)
    s.weights[c] = w[c];
  return s;
}

SliceScoreSeries fit_linear_correction(const std::vector<double>& raw) {
  const std::size_t n = raw.size();
  if (n < 2)
    throw Error("too_few_slices", "linear correction needs at least 2 slices");
  const double z_mean = 0.5 * static_cast<double>(n - 1);
  const double s_mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t z = 0; z < n; ++z) {
    const double dz = static_cast<double>(z) - z_mean;
    sxy += dz * (raw[z] - s_mean);
    sxx += dz * dz;
  }
  SliceScoreSeries series;
  series.raw = raw;
  series.slope = sxy / sxx;
  series.intercept = s_mean - series.slope * z_mean;
  series.fitted.resize(n);
  for (std::size_t z = 0; z < n; ++z)
    series.fitted[z] = series.slope * static_cast<double>(z) + series.intercept;
  return series;
}

std::pair<int, int> window_slice_range(const SliceScoreSeries& series, double low, double high) {
  if (!(low <= high))
    throw Error("invalid_argument", "window low bound exceeds high bound");
  if (std::abs(series.slope) <= 1e-9)
    throw Error("degenerate_fit", "fitted score slope is zero");
  int first = -1, last = -1;
  for (std::size_t z = 0; z < series.fitted.size(); ++z) {
    const double s = series.fitted[z];
    if (s >= low - kWindowTol && s <= high + kWindowTol) {
      if (first < 0)
        first = static_cast<int>(z);
      last = static_cast<int>(z);
    }
  }
  if (first < 0)
    throw Error("empty_window", "no slice has a fitted score inside the window");
  if (last - first + 1 < kMinVoiSlices)
    throw Error("too_few_slices", "only " + std::to_string(last - first + 1) +
                                      " slices inside the score window");
  return {first, last};
}

Volume crop_to_window(const Volume& v, const SliceScoreSeries& series, double low, double high) {
  if (series.fitted.size() != static_cast<std::size_t>(v.nz()))
    throw Error("invalid_argument", "score series length does not match slice count");
  const auto [first, last] = window_slice_range(series, low, high);
  return crop_pad_z(v, first, last + 1);
}

std::vector<double> read_score_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error("io_error", "cannot open score sidecar " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid_json", path.string() + ": " + e.what());
  }
  if (!j.is_array())
    throw Error("invalid_json", "score sidecar must be a JSON array of numbers");
  std::vector<double> out;
  for (const auto& e : j) {
    if (!e.is_number())
      throw Error("invalid_json", "score sidecar must be a JSON array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

void write_score_sidecar(const std::vector<double>& scores, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << nlohmann::json(scores).dump() << '\n';
}

std::filesystem::path sidecar_path_for(const std::filesystem::path& volume_path) {
  std::filesystem::path stem = volume_path.filename();
  if (stem.extension() == ".gz")
    stem = stem.stem();
  if (stem.extension() == ".nii")
    stem = stem.stem();
  return volume_path.parent_path() / (stem.string() + ".scores.json");
}

void write_scorer(const LinearScorer& s, const std::filesystem::path& path) {
  nlohmann::json j{{"mean", s.mean}, {"scale", s.scale}, {"weights", s.weights}, {"bias", s.bias}};
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

LinearScorer read_scorer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error("io_error", "cannot open scorer weights " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    LinearScorer s;
    s.mean = j.at("mean").get<decltype(s.mean)>();
    s.scale = j.at("scale").get<decltype(s.scale)>();
    s.weights = j.at("weights").get<decltype(s.weights)>();
    s.bias = j.at("bias").get<double>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error("missing_weights", path.string() + ": " + e.what());
  }
}

} // namespace katlas
