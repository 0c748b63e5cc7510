#include "helpers.hpp"

#include "katlas/atlas.hpp"
#include "katlas/phantom.hpp"

#include <doctest.h>

#include <json.hpp>

#include <fstream>

using namespace katlas;
using testutil::grid;

TEST_CASE("phase tags") {
  for (auto p : {Phase::non_contrast, Phase::early_arterial, Phase::late_arterial,
                 Phase::portal_venous, Phase::delayed})
    CHECK(parse_phase(phase_name(p)) == p);
  CHECK(std::string(phase_name(Phase::portal_venous)) == "portal_venous");
  CHECK_THROWS_AS(parse_phase("venous"), Error);
}

TEST_CASE("accumulator") {
  const Geometry g = grid(3, 3, 3);
  AtlasAccumulator empty(g);
  CHECK(empty.count() == 0);
  const Volume zero = empty.variance();
  for (float x : zero.values())
    CHECK(x == 0.0f);

  const Volume v = testutil::random_volume(g, 6);
  AtlasAccumulator same(g);
  for (int i = 0; i < 7; ++i)
    same.add(v);
  for (std::size_t n = 0; n < v.size(); ++n) {
    CHECK(same.variance()[n] <= 1e-6);
    CHECK(same.mean()[n] == doctest::Approx(v[n]).epsilon(1e-6));
  }

  AtlasAccumulator two(g);
  two.add(Volume(g, 10.0f));
  two.add(Volume(g, 20.0f));
  CHECK(two.mean()[5] == 15.0f);
  CHECK(two.variance()[5] == 25.0f);

  // order does not matter beyond rounding
  std::vector<Volume> vs;
  for (int i = 0; i < 5; ++i)
    vs.push_back(testutil::random_volume(g, 100 + i, -1000, 1000));
  AtlasAccumulator fwd(g), rev(g);
  for (int i = 0; i < 5; ++i) {
    fwd.add(vs[i]);
    rev.add(vs[4 - i]);
  }
  for (std::size_t n = 0; n < v.size(); ++n) {
    CHECK(std::abs(fwd.mean()[n] - rev.mean()[n]) < 1e-6 * std::max(1.0f, std::abs(fwd.mean()[n])));
    CHECK(std::abs(fwd.variance()[n] - rev.variance()[n]) <
          1e-6 * std::max(1.0f, fwd.variance()[n]));
  }

  CHECK_THROWS_AS(fwd.add(Volume(grid(2, 3, 3), 0.0f)), Error);
}

TEST_CASE("success filter") {
  PhantomParams p = atlas_phantom_params();
  p.dims = {32, 32, 32};
  p.spacing = Eigen::Vector3d::Constant(9.0);
  const Volume fixed = generate_phantom(p).volume;

  const SuccessReport self = success_filter(fixed, fixed);
  CHECK(self.success);
  CHECK(self.body_dice == 1.0);
  CHECK(self.ncc == doctest::Approx(1.0));
  CHECK(self.ncc_before == -1.0);

  const Volume air(fixed.geometry(), kAirHU);
  const SuccessReport none = success_filter(air, fixed);
  CHECK_FALSE(none.success);
  CHECK(none.body_dice == 0.0);

  // registration that makes NCC worse is rejected
  Volume noisy = fixed;
  for (std::size_t n = 0; n < noisy.size(); ++n)
    if (noisy[n] > -500)
      noisy[n] += static_cast<float>(((n * 7919) % 400) - 200);
  CHECK_FALSE(success_filter(noisy, fixed, &fixed).success);
  CHECK(success_filter(fixed, fixed, &noisy).success);
  CHECK(success_filter(noisy, fixed, &fixed, {0.9, false}).success);
}

TEST_CASE("bundle output") {
  testutil::TempDir dir("atlas");
  const Geometry g = grid(4, 4, 4);
  AtlasAccumulator acc(g);
  acc.add(Volume(g, 1.0f));
  SubjectRecord ok{"a", true, {}, ""}, bad{"b", false, {}, "registration_failed: x"};
  const AtlasBundle b = finish_bundle(Phase::delayed, acc, "atlas_labels.nii", {ok, bad});
  CHECK(b.count == 1);
  write_bundle(b, dir.path);
  CHECK(std::filesystem::exists(dir.path / "delayed_mean.nii"));
  CHECK(std::filesystem::exists(dir.path / "delayed_variance.nii"));
  std::ifstream in(dir.path / "delayed_report.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.dump().find("registration_failed") != std::string::npos);
}
