#include "katlas/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace katlas {

namespace {

void require_same_grid(const LabelMap& a, const LabelMap& b) {
  if (!a.geometry().matches(b.geometry()))
    throw Error("geometry_mismatch", "label maps are on different grids");
}

std::vector<double> nearest_distances(const std::vector<Eigen::Vector3d>& from,
                                      const std::vector<Eigen::Vector3d>& to) {
  if (from.empty() || to.empty())
    throw Error("empty_surface", "surface distance needs two non-empty vertex sets");
  std::vector<double> d(from.size());
  const auto n = static_cast<int>(from.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to)
      best = std::min(best, (from[i] - q).squaredNorm());
    d[i] = std::sqrt(best);
  }
  return d;
}

} // namespace

double dice(const LabelMap& p, const LabelMap& g, int label) {
  require_same_grid(p, g);
  std::size_t np = 0, ng = 0, both = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] == label, b = g[i] == label;
    np += a;
    ng += b;
    both += a && b;
  }
  if (np + ng == 0)
    return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::vector<Eigen::Vector3d> extract_surface(const LabelMap& l, int label) {
  static constexpr int kFaces[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                       {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<Eigen::Vector3d> out;
  const Geometry& g = l.geometry();
  for (int k = 0; k < l.nz(); ++k)
    for (int j = 0; j < l.ny(); ++j)
      for (int i = 0; i < l.nx(); ++i) {
        if (l(i, j, k) != label)
          continue;
        for (const auto& f : kFaces) {
          const int a = i + f[0], b = j + f[1], c = k + f[2];
          if (l.contains(a, b, c) && l(a, b, c) == label)
            continue;
          out.push_back(g.index_to_world(
              Eigen::Vector3d(i + 0.5 * f[0], j + 0.5 * f[1], k + 0.5 * f[2])));
        }
      }
  if (out.empty())
    throw Error("label_absent", "label " + std::to_string(label) + " has no voxels");
  return out;
}

double msd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to) {
  const auto d = nearest_distances(from, to);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

double hd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to) {
  const auto d = nearest_distances(from, to);
  return *std::max_element(d.begin(), d.end());
}

double msd_symmetric(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  return 0.5 * (msd(a, b) + msd(b, a));
}

double hd_symmetric(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  return std::max(hd(a, b), hd(b, a));
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& diffs, WilcoxonMode mode) {
  std::vector<double> d;
  for (double x : diffs) {
    if (!std::isfinite(x))
      throw Error("invalid_argument", "differences must be finite");
    if (x != 0.0)
      d.push_back(x);
  }
  if (d.empty())
    throw Error("all_zero_differences", "every paired difference is zero");
  const int n = static_cast<int>(d.size());
  const bool use_exact =
      mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && n <= 12);
  if (!use_exact && n < 6)
    throw Error("too_few_differences", "normal approximation needs at least 6 non-zero differences");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  // Doubled ranks stay integral under averaging of ties.
  std::vector<int> rank2(n);
  double tie_term = 0.0;
  for (int s = 0; s < n;) {
    int e = s;
    while (e + 1 < n && std::abs(d[order[e + 1]]) == std::abs(d[order[s]]))
      ++e;
    for (int t = s; t <= e; ++t)
      rank2[order[t]] = s + e + 2; // 2 * average of ranks s+1..e+1
    const double t = e - s + 1;
    tie_term += t * t * t - t;
    s = e + 1;
  }

  WilcoxonResult r;
  r.n = n;
  for (int i = 0; i < n; ++i)
    (d[i] > 0 ? r.w_plus : r.w_minus) += rank2[i] / 2.0;
  r.w = std::min(r.w_plus, r.w_minus);

  const double nn = n;
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  r.z = var > 0.0 ? (r.w - mean) / std::sqrt(var) : 0.0;
  r.p = std::erfc(std::abs(r.z) / std::sqrt(2.0));

  if (use_exact) {
    // counts[s]: sign assignments whose doubled positive-rank sum is s.
    const int total = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<double> counts(total + 1, 0.0);
    counts[0] = 1.0;
    for (int rk : rank2)
      for (int s = total; s >= rk; --s)
        counts[s] += counts[s - rk];
    const auto w2 = static_cast<int>(std::lround(2.0 * r.w));
    double tail = 0.0;
    for (int s = 0; s <= w2; ++s)
      tail += counts[s];
    r.p = std::min(1.0, 2.0 * tail / std::ldexp(1.0, n));
    r.exact = true;
  }
  return r;
}

std::vector<MetricRow> evaluate_labels(const LabelMap& predicted, const LabelMap& truth,
                                       const std::string& subject, bool symmetric) {
  require_same_grid(predicted, truth);
  std::array<bool, kMaxLabel + 1> in_p{}, in_g{};
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int a = predicted[i], b = truth[i];
    if (a > 0 && a <= kMaxLabel)
      in_p[a] = true;
    if (b > 0 && b <= kMaxLabel)
      in_g[b] = true;
  }
  std::vector<MetricRow> rows;
  for (int label = 1; label <= kMaxLabel; ++label) {
    if (!in_p[label] && !in_g[label])
      continue;
    MetricRow row;
    row.subject = subject;
    row.organ_id = label;
    row.dice = dice(predicted, truth, label);
    if (in_p[label] && in_g[label]) {
      const auto sp = extract_surface(predicted, label);
      const auto sg = extract_surface(truth, label);
      row.msd_mm = symmetric ? msd_symmetric(sp, sg) : msd(sp, sg);
      row.hd_mm = symmetric ? hd_symmetric(sp, sg) : hd(sp, sg);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_metrics(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"subject", r.subject}, {"organ_id", r.organ_id},
                       {"organ", organ_name(r.organ_id)}, {"dice", r.dice}};
    row["msd_mm"] = r.msd_mm ? nlohmann::json(*r.msd_mm) : nlohmann::json(nullptr);
    row["hd_mm"] = r.hd_mm ? nlohmann::json(*r.hd_mm) : nlohmann::json(nullptr);
    j.push_back(row);
  }
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

} // namespace katlas
