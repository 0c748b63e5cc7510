#include "helpers.hpp"
#include "oracles.hpp"

#include "katlas/ssc.hpp"

#include <doctest.h>

using namespace katlas;
using testutil::grid;

TEST_CASE("uniform volume gives zero codes") {
  const Volume v(grid(7, 7, 7), 40.0f);
  const DescriptorVolume d = ssc_descriptor(v);
  for (auto c : d.codes)
    CHECK(c == 0);
  for (float x : d.channels[0])
    CHECK(x == d.channels[0][0]);
}

TEST_CASE("single bright voxel matches the brute-force channels") {
  Volume v(grid(7, 7, 7), 0.0f);
  v(3, 3, 3) = 1000.0f;
  const DescriptorVolume d = ssc_descriptor(v);
  const auto o = oracle::ssc(v);
  for (std::size_t n = 0; n < v.size(); ++n) {
    for (int c = 0; c < 12; ++c)
      CHECK(std::abs(d.channels[n][c] - o.channels[n][c]) < 1e-6);
    CHECK(d.codes[n] == o.codes[n]);
  }
}

TEST_CASE("descriptor ignores a global intensity shift") {
  Volume v(grid(9, 8, 7), 0.0f);
  for (int k = 0; k < 7; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 9; ++i)
        v(i, j, k) = static_cast<float>(((i * 7 + j * 3 + k * 5) % 11) * 16);
  Volume w = v;
  for (std::size_t n = 0; n < w.size(); ++n)
    w[n] += 100.0f;
  CHECK(ssc_descriptor(v).codes == ssc_descriptor(w).codes);
}

TEST_CASE("neighbour pairs are the twelve non-opposite pairs") {
  const auto pairs = oracle::ssc_pairs();
  REQUIRE(pairs.size() == 12);
  for (int c = 0; c < 12; ++c)
    CHECK(ssc_pairs()[c] == pairs[c]);
}

TEST_CASE("hamming cost") {
  CHECK(hamming_cost(0x5a5, 0x5a5) == 0);
  CHECK(hamming_cost(0x0f0, 0xf0f) == 12);
  CHECK(hamming_cost(0b101010101010, 0b100010101010) == 1);
  for (unsigned a = 0; a < 4096; a += 37)
    for (unsigned b = 0; b < 4096; b += 53)
      CHECK(hamming_cost(a, b) == oracle::hamming(a, b));
}

TEST_CASE("patch descriptor cost") {
  const Volume v = testutil::random_volume(grid(5, 5, 5), 21);
  const Volume w = testutil::random_volume(grid(5, 5, 5), 22);
  const DescriptorVolume f = ssc_descriptor(v), m = ssc_descriptor(w);
  CHECK(patch_descriptor_cost(f, f, {2, 2, 2}, {0, 0, 0}, 1) == 0.0);
  CHECK(patch_descriptor_cost(f, m, {2, 2, 2}, {10, 0, 0}, 1) == 12.0);
  const std::array<int, 3> dims{5, 5, 5};
  for (int r = 0; r <= 2; ++r)
    for (int c = 0; c < 5; ++c) {
      const std::array<int, 3> centre{c, (c * 2) % 5, 4 - c};
      CHECK(patch_descriptor_cost(f, m, centre, {1, 0, 0}, r) ==
            oracle::patch_cost(f.codes, m.codes, dims, centre, {1, 0, 0}, r));
    }
}

TEST_CASE("descriptor needs enough voxels") {
  CHECK_THROWS_AS(ssc_descriptor(Volume(grid(4, 7, 7), 0.0f)), Error);
}
