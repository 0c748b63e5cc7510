#pragma once
// Brute-force reference implementations shared by the unit and acceptance
// suites. They are written for clarity, not speed, and do not call into the
// library code they check.

#include "katlas/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using katlas::Volume;

// Six unit neighbours in the order +x, -x, +y, -y, +z, -z.
inline std::array<std::array<int, 3>, 6> neighbours() {
  return {{{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};
}

// All pairs (a < b) of neighbours that are not opposite, lexicographic.
inline std::vector<std::pair<int, int>> ssc_pairs() {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b)
      if (a / 2 != b / 2)
        out.emplace_back(a, b);
  return out;
}

inline double clamped(const Volume& v, int i, int j, int k) {
  return v(std::clamp(i, 0, v.nx() - 1), std::clamp(j, 0, v.ny() - 1),
           std::clamp(k, 0, v.nz() - 1));
}

// Patch SSD between the patches centred at c + r*n_a and c + r*n_b.
inline double pair_ssd(const Volume& v, int i, int j, int k, int r, int p, int a, int b) {
  const auto nb = neighbours();
  double s = 0.0;
  for (int dz = -p; dz <= p; ++dz)
    for (int dy = -p; dy <= p; ++dy)
      for (int dx = -p; dx <= p; ++dx) {
        const double va = clamped(v, i + r * nb[a][0] + dx, j + r * nb[a][1] + dy,
                                  k + r * nb[a][2] + dz);
        const double vb = clamped(v, i + r * nb[b][0] + dx, j + r * nb[b][1] + dy,
                                  k + r * nb[b][2] + dz);
        s += (va - vb) * (va - vb);
      }
  return s;
}

struct SscOracle {
  std::vector<std::array<double, 12>> channels;
  std::vector<std::uint16_t> codes;
};

// exp(-D / V) per channel, V = voxel mean of D clamped to
// [1e-6, 1e6] x the image-wide mean; bit c set when channel c exceeds the
// voxel's channel mean.
inline SscOracle ssc(const Volume& v, int r = 1, int p = 1) {
  const auto pairs = ssc_pairs();
  const std::size_t n = v.size();
  std::vector<std::array<double, 12>> d(n);
  double total = 0.0;
  for (int k = 0; k < v.nz(); ++k)
    for (int j = 0; j < v.ny(); ++j)
      for (int i = 0; i < v.nx(); ++i)
        for (int c = 0; c < 12; ++c) {
          const double x = pair_ssd(v, i, j, k, r, p, pairs[c].first, pairs[c].second);
          d[v.index(i, j, k)][c] = x;
          total += x;
        }
  const double gmean = total / (12.0 * n);
  SscOracle out;
  out.channels.resize(n);
  out.codes.resize(n);
  for (std::size_t q = 0; q < n; ++q) {
    double local = 0.0;
    for (double x : d[q])
      local += x;
    local /= 12.0;
    const double var = gmean > 0.0 ? std::clamp(local, 1e-6 * gmean, 1e6 * gmean) : 1.0;
    double mean = 0.0;
    for (int c = 0; c < 12; ++c) {
      out.channels[q][c] = std::exp(-d[q][c] / var);
      mean += out.channels[q][c];
    }
    mean /= 12.0;
    std::uint16_t code = 0;
    for (int c = 0; c < 12; ++c)
      if (out.channels[q][c] > mean)
        code = static_cast<std::uint16_t>(code | (1u << c));
    out.codes[q] = code;
  }
  return out;
}

inline int hamming(std::uint16_t a, std::uint16_t b) {
  int n = 0;
  for (int bit = 0; bit < 12; ++bit)
    n += ((a >> bit) & 1u) != ((b >> bit) & 1u);
  return n;
}

// Mean Hamming over the fixed patch voxels inside the grid; moving samples
// outside cost 12; 12 when no fixed voxel is inside.
inline double patch_cost(const std::vector<std::uint16_t>& fixed,
                         const std::vector<std::uint16_t>& moving, std::array<int, 3> dims,
                         std::array<int, 3> c, std::array<int, 3> disp, int radius) {
  auto inside = [&](int i, int j, int k) {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  };
  auto idx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
  };
  double sum = 0.0;
  int count = 0;
  for (int z = c[2] - radius; z <= c[2] + radius; ++z)
    for (int y = c[1] - radius; y <= c[1] + radius; ++y)
      for (int x = c[0] - radius; x <= c[0] + radius; ++x) {
        if (!inside(x, y, z))
          continue;
        ++count;
        const int mx = x + disp[0], my = y + disp[1], mz = z + disp[2];
        sum += inside(mx, my, mz) ? hamming(fixed[idx(x, y, z)], moving[idx(mx, my, mz)]) : 12;
      }
  return count ? sum / count : 12.0;
}

// Block-matching cost: the patch voxels used are those inside the grid whose
// partner stays inside for every displacement in `labels`; falls back to
// patch_cost when there are none.
inline double block_cost(const std::vector<std::uint16_t>& fixed,
                         const std::vector<std::uint16_t>& moving, std::array<int, 3> dims,
                         std::array<int, 3> c, std::array<int, 3> disp, int radius,
                         const std::vector<std::array<int, 3>>& labels) {
  auto inside = [&](int i, int j, int k) {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
  };
  auto idx = [&](int i, int j, int k) {
    return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
  };
  double sum = 0.0;
  int count = 0;
  for (int z = c[2] - radius; z <= c[2] + radius; ++z)
    for (int y = c[1] - radius; y <= c[1] + radius; ++y)
      for (int x = c[0] - radius; x <= c[0] + radius; ++x) {
        bool ok = inside(x, y, z);
        for (const auto& l : labels)
          ok = ok && inside(x + l[0], y + l[1], z + l[2]);
        if (!ok)
          continue;
        ++count;
        sum += hamming(fixed[idx(x, y, z)], moving[idx(x + disp[0], y + disp[1], z + disp[2])]);
      }
  return count ? sum / count : patch_cost(fixed, moving, dims, c, disp, radius);
}

// Exhaustive tree MRF: minimum of sum unary + alpha * sum |d_i - d_j|^2 over
// tree edges. Among minimizers, the labeling whose label ranks, read in
// `order`, are lexicographically smallest. Rank: squared norm, then x, y, z.
struct MrfResult {
  double energy = 0.0;
  std::vector<int> labeling;
};

inline std::vector<int> rank_of(const std::vector<std::array<double, 3>>& disp) {
  std::vector<int> idx(disp.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto norm = [&](int a) {
    return disp[a][0] * disp[a][0] + disp[a][1] * disp[a][1] + disp[a][2] * disp[a][2];
  };
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (norm(a) != norm(b))
      return norm(a) < norm(b);
    if (disp[a] != disp[b])
      return disp[a] < disp[b];
    return a < b;
  });
  std::vector<int> rank(disp.size());
  for (std::size_t r = 0; r < idx.size(); ++r)
    rank[idx[r]] = static_cast<int>(r);
  return rank;
}

inline MrfResult mrf_exhaustive(const std::vector<std::vector<double>>& unary,
                                const std::vector<int>& parent, const std::vector<int>& order,
                                const std::vector<std::array<double, 3>>& disp, double alpha) {
  const std::size_t nodes = unary.size(), nl = disp.size();
  const std::vector<int> rank = rank_of(disp);
  std::vector<int> cur(nodes, 0);
  MrfResult best;
  best.energy = std::numeric_limits<double>::infinity();
  std::vector<int> best_key;
  while (true) {
    double e = 0.0;
    for (std::size_t n = 0; n < nodes; ++n) {
      e += unary[n][cur[n]];
      if (parent[n] >= 0) {
        double s = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = disp[cur[n]][a] - disp[cur[parent[n]]][a];
          s += d * d;
        }
        e += alpha * s;
      }
    }
    std::vector<int> key;
    for (int n : order)
      key.push_back(rank[cur[n]]);
    if (e < best.energy || (e == best.energy && key < best_key)) {
      best.energy = e;
      best.labeling = cur;
      best_key = key;
    }
    std::size_t n = 0;
    while (n < nodes && ++cur[n] == static_cast<int>(nl))
      cur[n++] = 0;
    if (n == nodes)
      break;
  }
  return best;
}

inline double distance(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double nearest(const Eigen::Vector3d& p, const std::vector<Eigen::Vector3d>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : set)
    best = std::min(best, distance(p, q));
  return best;
}

inline double msd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to) {
  double s = 0.0;
  for (const auto& p : from)
    s += nearest(p, to);
  return s / static_cast<double>(from.size());
}

inline double hd(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to) {
  double m = 0.0;
  for (const auto& p : from)
    m = std::max(m, nearest(p, to));
  return m;
}

inline double dice(const katlas::LabelMap& p, const katlas::LabelMap& g, int label) {
  long a = 0, b = 0, both = 0;
  for (std::size_t n = 0; n < p.size(); ++n) {
    a += p[n] == label;
    b += g[n] == label;
    both += p[n] == label && g[n] == label;
  }
  return a + b == 0 ? 1.0 : 2.0 * both / static_cast<double>(a + b);
}

// Surface vertices as voxel-face centres: for every labelled voxel, each of
// its six faces whose neighbour is not labelled (or outside) contributes the
// world position of the face centre.
inline std::vector<Eigen::Vector3d> surface(const katlas::LabelMap& l, int label) {
  std::vector<Eigen::Vector3d> out;
  const auto nb = neighbours();
  for (int k = 0; k < l.nz(); ++k)
    for (int j = 0; j < l.ny(); ++j)
      for (int i = 0; i < l.nx(); ++i) {
        if (l(i, j, k) != label)
          continue;
        for (const auto& d : nb) {
          const int a = i + d[0], b = j + d[1], c = k + d[2];
          if (l.contains(a, b, c) && l(a, b, c) == label)
            continue;
          out.push_back(l.geometry().index_to_world(
              Eigen::Vector3d(i + 0.5 * d[0], j + 0.5 * d[1], k + 0.5 * d[2])));
        }
      }
  return out;
}

// Exact two-sided signed-rank p-value by enumerating all 2^n sign
// assignments of the (average) ranks of the non-zero |d|.
struct SignedRank {
  double w_plus = 0.0, w_minus = 0.0, p = 1.0;
  int n = 0;
};

inline SignedRank signed_rank_exact(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0.0)
      d.push_back(x);
  SignedRank out;
  out.n = static_cast<int>(d.size());
  std::vector<double> rank(d.size());
  for (std::size_t a = 0; a < d.size(); ++a) {
    int less = 0, equal = 0;
    for (std::size_t b = 0; b < d.size(); ++b) {
      less += std::abs(d[b]) < std::abs(d[a]);
      equal += std::abs(d[b]) == std::abs(d[a]);
    }
    rank[a] = less + (equal + 1) / 2.0;
  }
  for (std::size_t a = 0; a < d.size(); ++a)
    (d[a] > 0 ? out.w_plus : out.w_minus) += rank[a];
  const double w = std::min(out.w_plus, out.w_minus);
  long hits = 0;
  const long total = 1L << d.size();
  for (long mask = 0; mask < total; ++mask) {
    double t = 0.0;
    for (std::size_t a = 0; a < d.size(); ++a)
      if (mask & (1L << a))
        t += rank[a];
    hits += t <= w + 1e-9;
  }
  out.p = std::min(1.0, 2.0 * static_cast<double>(hits) / static_cast<double>(total));
  return out;
}

} // namespace oracle
