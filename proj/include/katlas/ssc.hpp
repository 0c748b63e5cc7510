#pragma once

#include "katlas/image.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <utility>

namespace katlas {

inline constexpr int kSscChannels = 12;
inline constexpr int kMaxHamming = kSscChannels;

/// Self-similarity context descriptor of a volume: one 12-bit code per voxel
/// plus (optionally) the continuous channels the code was quantized from.
struct DescriptorVolume {
  Geometry geometry;
  std::vector<std::uint16_t> codes;
  std::vector<std::array<float, kSscChannels>> channels; // empty unless kept

  int nx() const { return geometry.dims[0]; }
  int ny() const { return geometry.dims[1]; }
  int nz() const { return geometry.dims[2]; }
  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(nx()) * (static_cast<std::size_t>(j) +
                                             static_cast<std::size_t>(ny()) * k);
  }
  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < nx() && j < ny() && k < nz();
  }
  std::uint16_t code(int i, int j, int k) const { return codes[index(i, j, k)]; }
};

struct SscParams {
  int offset = 1;       ///< neighbour centre distance r (voxels)
  int patch_radius = 1; ///< cubic patch radius p
  bool keep_channels = true;
};

/// The six neighbourhood offsets (+x, -x, +y, -y, +z, -z), unit length.
const std::array<std::array<int, 3>, 6>& ssc_neighbors();
/// The 12 edge-adjacent neighbour pairs; channel b compares pair b.
const std::array<std::pair<int, int>, kSscChannels>& ssc_pairs();

/// Patch coordinates outside the volume are clamped to the border.
DescriptorVolume ssc_descriptor(const Volume& v, const SscParams& params = {});

inline int hamming_cost(std::uint16_t a, std::uint16_t b) {
  return std::popcount(static_cast<unsigned>(a ^ b));
}

/// Mean Hamming cost over the cubic patch around `center`, comparing fixed at
/// x with moving at x + disp. Fixed voxels outside the volume are skipped;
/// moving samples outside the volume cost 12.
double patch_descriptor_cost(const DescriptorVolume& fixed, const DescriptorVolume& moving,
                             const std::array<int, 3>& center, const std::array<int, 3>& disp,
                             int patch_radius);

} // namespace katlas
