#include "katlas/ssc.hpp"

#include <algorithm>
#include <cmath>

namespace katlas {

namespace {

constexpr std::array<std::array<int, 3>, 6> kNeighbors{{
    {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

constexpr std::array<std::pair<int, int>, kSscChannels> kPairs{{
    {0, 2}, {0, 3}, {0, 4}, {0, 5}, {1, 2}, {1, 3},
    {1, 4}, {1, 5}, {2, 4}, {2, 5}, {3, 4}, {3, 5}}};

// Replicate-padded copy of a volume, border width `pad`.
struct Padded {
  int px, py, pz;
  std::vector<double> data;
  std::size_t at(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(px) * (static_cast<std::size_t>(j) +
                                           static_cast<std::size_t>(py) * k);
  }
};

Padded pad_replicate(const Volume& v, int pad) {
  Padded p{v.nx() + 2 * pad, v.ny() + 2 * pad, v.nz() + 2 * pad, {}};
  p.data.resize(static_cast<std::size_t>(p.px) * p.py * p.pz);
  for (int k = 0; k < p.pz; ++k) {
    const int sk = std::clamp(k - pad, 0, v.nz() - 1);
    for (int j = 0; j < p.py; ++j) {
      const int sj = std::clamp(j - pad, 0, v.ny() - 1);
      for (int i = 0; i < p.px; ++i)
        p.data[p.at(i, j, k)] = v(std::clamp(i - pad, 0, v.nx() - 1), sj, sk);
    }
  }
  return p;
}

// Running-window sum of width 2r+1 along one axis of a padded grid; entries
// whose window leaves the grid are left untouched (never read afterwards).
void box_axis(const std::vector<double>& in, std::vector<double>& out, const Padded& g, int axis,
              int r) {
  const int n[3] = {g.px, g.py, g.pz};
  const std::size_t stride[3] = {1, static_cast<std::size_t>(g.px),
                                 static_cast<std::size_t>(g.px) * g.py};
  const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
#pragma omp parallel for schedule(static)
  for (int u2 = 0; u2 < n[a2]; ++u2)
    for (int u1 = 0; u1 < n[a1]; ++u1) {
      const std::size_t base = u1 * stride[a1] + u2 * stride[a2];
      for (int t = r; t < n[axis] - r; ++t) {
        double s = 0.0;
        for (int q = -r; q <= r; ++q)
          s += in[base + (t + q) * stride[axis]];
        out[base + t * stride[axis]] = s;
      }
    }
}

} // namespace

const std::array<std::array<int, 3>, 6>& ssc_neighbors() { return kNeighbors; }
const std::array<std::pair<int, int>, kSscChannels>& ssc_pairs() { return kPairs; }

DescriptorVolume ssc_descriptor(const Volume& v, const SscParams& params) {
  const int r = params.offset, p = params.patch_radius;
  if (r < 1 || p < 0)
    throw Error("invalid_argument", "descriptor offset must be >= 1 and patch radius >= 0");
  const int min_dim = 2 * (r + p) + 1;
  for (int d : v.geometry().dims)
    if (d < min_dim)
      throw Error("volume_too_small", "volume must be at least " + std::to_string(min_dim) +
                                          " voxels along every axis");

  const int pad = r + p;
  const Padded padded = pad_replicate(v, pad);
  const int nx = v.nx(), ny = v.ny(), nz = v.nz();
  const std::size_t nvox = v.size();
  std::vector<float> dist(nvox * kSscChannels);

  std::vector<double> sq(padded.data.size(), 0.0), tmp(padded.data.size(), 0.0),
      box(padded.data.size(), 0.0);
  for (int c = 0; c < kSscChannels; ++c) {
    const auto& na = kNeighbors[kPairs[c].first];
    const auto& nb = kNeighbors[kPairs[c].second];
    const int delta[3] = {r * (nb[0] - na[0]), r * (nb[1] - na[1]), r * (nb[2] - na[2])};
    // Squared difference between a voxel and its partner at +delta.
#pragma omp parallel for schedule(static)
    for (int k = 0; k < padded.pz; ++k)
      for (int j = 0; j < padded.py; ++j)
        for (int i = 0; i < padded.px; ++i) {
          const int i2 = i + delta[0], j2 = j + delta[1], k2 = k + delta[2];
          double d = 0.0;
          if (i2 >= 0 && j2 >= 0 && k2 >= 0 && i2 < padded.px && j2 < padded.py && k2 < padded.pz)
            d = padded.data[padded.at(i, j, k)] - padded.data[padded.at(i2, j2, k2)];
          sq[padded.at(i, j, k)] = d * d;
        }
    box_axis(sq, tmp, padded, 0, p);
    box_axis(tmp, sq, padded, 1, p);
    box_axis(sq, box, padded, 2, p);
    const int off[3] = {pad + r * na[0], pad + r * na[1], pad + r * na[2]};
#pragma omp parallel for schedule(static)
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
          dist[v.index(i, j, k) * kSscChannels + c] =
              static_cast<float>(box[padded.at(i + off[0], j + off[1], k + off[2])]);
  }

  // Image-wide mean channel distance, summed per slice for a fixed order.
  std::vector<double> slice_sum(nz, 0.0);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < nz; ++k) {
    double s = 0.0;
    const std::size_t begin = v.index(0, 0, k) * kSscChannels;
    const std::size_t end = begin + static_cast<std::size_t>(nx) * ny * kSscChannels;
    for (std::size_t n = begin; n < end; ++n)
      s += dist[n];
    slice_sum[k] = s;
  }
  double total = 0.0;
  for (double s : slice_sum)
    total += s;
  const double global_mean = total / (static_cast<double>(nvox) * kSscChannels);
  const double q_low = 1e-6 * global_mean, q_high = 1e6 * global_mean;

  DescriptorVolume out;
  out.geometry = v.geometry();
  out.codes.assign(nvox, 0);
  if (params.keep_channels)
    out.channels.resize(nvox);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < nz; ++k)
    for (std::size_t n = v.index(0, 0, k); n < v.index(0, 0, k) + static_cast<std::size_t>(nx) * ny;
         ++n) {
      const float* d = &dist[n * kSscChannels];
      double local = 0.0;
      for (int c = 0; c < kSscChannels; ++c)
        local += d[c];
      local /= kSscChannels;
      const double q2 = global_mean > 0.0 ? std::clamp(local, q_low, q_high) : 1.0;
      double ch[kSscChannels];
      double mean = 0.0;
      for (int c = 0; c < kSscChannels; ++c) {
        ch[c] = std::exp(-static_cast<double>(d[c]) / q2);
        mean += ch[c];
      }
      mean /= kSscChannels;
      std::uint16_t code = 0;
      for (int c = 0; c < kSscChannels; ++c)
        if (ch[c] > mean)
          code |= static_cast<std::uint16_t>(1u << c);
      out.codes[n] = code;
      if (params.keep_channels)
        for (int c = 0; c < kSscChannels; ++c)
          out.channels[n][c] = static_cast<float>(ch[c]);
    }
  return out;
}

double patch_descriptor_cost(const DescriptorVolume& fixed, const DescriptorVolume& moving,
                             const std::array<int, 3>& center, const std::array<int, 3>& disp,
                             int patch_radius) {
  double sum = 0.0;
  int count = 0;
  for (int dk = -patch_radius; dk <= patch_radius; ++dk)
    for (int dj = -patch_radius; dj <= patch_radius; ++dj)
      for (int di = -patch_radius; di <= patch_radius; ++di) {
        const int i = center[0] + di, j = center[1] + dj, k = center[2] + dk;
        if (!fixed.contains(i, j, k))
          continue;
        ++count;
        const int mi = i + disp[0], mj = j + disp[1], mk = k + disp[2];
        sum += moving.contains(mi, mj, mk)
                   ? hamming_cost(fixed.code(i, j, k), moving.code(mi, mj, mk))
                   : kMaxHamming;
      }
  return count == 0 ? static_cast<double>(kMaxHamming) : sum / count;
}

} // namespace katlas
