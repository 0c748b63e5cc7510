#include "helpers.hpp"

#include "katlas/nifti_io.hpp"
#include "katlas/volume_ops.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>

using namespace katlas;
using testutil::grid;

namespace {

template <typename T>
void put(std::vector<char>& buf, std::size_t off, T value) {
  std::memcpy(buf.data() + off, &value, sizeof value);
}

Geometry oblique_geometry() {
  Geometry g = grid(5, 4, 3, 1.0);
  g.spacing = {0.8, 1.25, 2.5};
  g.origin = {-10.0, 4.0, 7.5};
  g.direction = Eigen::AngleAxisd(0.3, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  return g;
}

} // namespace

TEST_CASE("nifti roundtrip keeps data exactly and geometry within 1e-5 mm") {
  testutil::TempDir dir("nifti");
  const Volume v = testutil::random_volume(oblique_geometry(), 7);
  for (const char* name : {"v.nii", "v.nii.gz"}) {
    write_volume(v, dir.path / name);
    const Volume r = read_volume(dir.path / name);
    CHECK(r.values() == v.values());
    CHECK(r.geometry().matches(v.geometry(), 1e-5));
  }
}

TEST_CASE("hand-assembled float32 file is read x-fastest") {
  testutil::TempDir dir("handmade");
  std::vector<char> buf(352 + 8 * 4, 0);
  put<std::int32_t>(buf, 0, 348);
  const std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  for (int a = 0; a < 8; ++a)
    put<std::int16_t>(buf, 40 + 2 * a, dim[a]);
  put<std::int16_t>(buf, 70, 16); // float32
  put<std::int16_t>(buf, 72, 32);
  for (int a = 0; a < 8; ++a)
    put<float>(buf, 76 + 4 * a, 1.0f);
  put<float>(buf, 108, 352.0f);
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  for (int n = 0; n < 8; ++n)
    put<float>(buf, 352 + 4 * n, static_cast<float>(10 * n));
  {
    std::ofstream out(dir.path / "h.nii", std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  const Volume v = read_volume(dir.path / "h.nii");
  REQUIRE(v.geometry().dims == std::array<int, 3>{2, 2, 2});
  CHECK(v(1, 0, 0) == 10.0f);
  CHECK(v(0, 1, 0) == 20.0f);
  CHECK(v(0, 0, 1) == 40.0f);
  CHECK(v(1, 1, 1) == 70.0f);

  put<std::int16_t>(buf, 70, 128); // RGB
  put<std::int16_t>(buf, 72, 24);
  {
    std::ofstream out(dir.path / "rgb.nii", std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  try {
    read_volume(dir.path / "rgb.nii");
    FAIL("expected unsupported_datatype");
  } catch (const Error& e) {
    CHECK(e.code() == "unsupported_datatype");
  }
}

TEST_CASE("written header starts with 348 and labels keep 13") {
  testutil::TempDir dir("labels");
  LabelMap l(grid(3, 3, 3), std::int16_t{0});
  l(1, 1, 1) = 13;
  l(0, 2, 1) = 2;
  write_labels(l, dir.path / "l.nii");
  std::ifstream in(dir.path / "l.nii", std::ios::binary);
  std::int32_t sizeof_hdr = 0;
  in.read(reinterpret_cast<char*>(&sizeof_hdr), 4);
  CHECK(sizeof_hdr == 348);
  const LabelMap r = read_labels(dir.path / "l.nii");
  CHECK(r.values() == l.values());
}

TEST_CASE("reorient_canonical") {
  const Volume canon = testutil::random_volume(grid(4, 3, 5, 2.0), 3);
  CHECK(reorient_canonical(canon).values() == canon.values());

  Geometry flipped = canon.geometry();
  flipped.direction(2, 2) = -1.0;
  flipped.origin = {1.0, 2.0, 30.0};
  const Volume f(flipped, canon.values());
  const Volume r = reorient_canonical(f);
  CHECK(r.geometry().direction.isApprox(Eigen::Matrix3d::Identity()));
  for (int k = 0; k < 5; ++k)
    CHECK(r(2, 1, k) == f(2, 1, 4 - k));
  for (int c = 0; c < 8; ++c) {
    const int i = (c & 1) ? 3 : 0, j = (c & 2) ? 2 : 0, k = (c & 4) ? 4 : 0;
    const Eigen::Vector3d w = f.geometry().index_to_world(Eigen::Vector3d(i, j, k));
    const Eigen::Vector3d idx = r.geometry().world_to_index(w);
    CHECK((idx - idx.array().round().matrix()).norm() < 1e-9);
    CHECK(r(static_cast<int>(std::lround(idx.x())), static_cast<int>(std::lround(idx.y())),
            static_cast<int>(std::lround(idx.z()))) == f(i, j, k));
  }
  const Volume twice = reorient_canonical(r);
  CHECK(twice.values() == r.values());
  CHECK(twice.geometry().matches(r.geometry()));
}

TEST_CASE("resample") {
  const Volume v = testutil::random_volume(grid(6, 5, 4, 1.5), 11);
  CHECK(resample(v, v.geometry()).values() == v.values());

  Volume ramp(grid(2, 1, 1), 0.0f);
  ramp(1, 0, 0) = 10.0f;
  Geometry mid = grid(1, 1, 1);
  mid.origin = {0.5, 0.0, 0.0};
  CHECK(resample(ramp, mid)[0] == doctest::Approx(5.0));

  Geometry outside = grid(1, 1, 1);
  outside.origin = {5.0, 0.0, 0.0};
  CHECK(resample(ramp, outside)[0] == kAirHU);

  LabelMap l(grid(4, 4, 4), std::int16_t{0});
  l(1, 2, 3) = 6;
  l(2, 2, 2) = 9;
  Geometry shifted = l.geometry();
  shifted.origin = {0.3, -0.4, 0.45};
  shifted.spacing = {0.7, 0.9, 1.1};
  const LabelMap rl = resample(l, shifted);
  for (std::int16_t x : rl.values())
    CHECK((x == 0 || x == 6 || x == 9));
  CHECK_THROWS_AS(resample(l, shifted, Interp::linear), Error);
}

TEST_CASE("crop_pad_z") {
  const Volume v = testutil::random_volume(grid(3, 3, 40), 5);
  CHECK(crop_pad_z(v, 0, 40, 40).values() == v.values());

  const Volume c = crop_pad_z(v, 10, 20, 16);
  REQUIRE(c.nz() == 16);
  for (int k : {0, 1, 2, 13, 14, 15})
    CHECK(c(1, 1, k) == kAirHU);
  for (int k = 3; k < 13; ++k)
    CHECK(c(2, 0, k) == v(2, 0, k + 7));
  // retained voxels keep their world position
  CHECK((c.geometry().index_to_world(Eigen::Vector3d(0, 0, 3)) -
         v.geometry().index_to_world(Eigen::Vector3d(0, 0, 10)))
            .norm() < 1e-9);

  // odd remainder: the extra pad slice goes above
  const Volume odd = crop_pad_z(v, 10, 20, 13);
  CHECK(odd(0, 0, 0) == kAirHU);
  CHECK(odd(0, 0, 1) == v(0, 0, 10));
  CHECK(odd(0, 0, 11) == kAirHU);
  CHECK(odd(0, 0, 12) == kAirHU);
}

TEST_CASE("downsample averages blocks") {
  Volume v(grid(4, 4, 4), 0.0f);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j)
      for (int i = 0; i < 4; ++i)
        v(i, j, k) = static_cast<float>(i + 4 * j + 16 * k);
  const Volume d = downsample(v, 2);
  REQUIRE(d.geometry().dims == std::array<int, 3>{2, 2, 2});
  CHECK(d(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5 + 16 + 17 + 20 + 21) / 8.0));
  CHECK((d.geometry().index_to_world(Eigen::Vector3d::Zero()) - Eigen::Vector3d::Constant(0.5))
            .norm() < 1e-12);
}

TEST_CASE("validation errors") {
  Geometry bad = grid(2, 2, 2);
  bad.spacing.x() = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  Volume v(grid(2, 2, 2), 0.0f);
  v[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate_volume(v), Error);
  LabelMap l(grid(2, 2, 2), std::int16_t{0});
  l[0] = 14;
  CHECK_THROWS_AS(validate_labels(l), Error);
}
