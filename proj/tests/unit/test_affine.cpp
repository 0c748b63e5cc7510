#include "helpers.hpp"
#include "oracles.hpp"

#include "katlas/affine.hpp"
#include "katlas/field.hpp"
#include "katlas/phantom.hpp"

#include <doctest.h>

#include <random>

using namespace katlas;
using testutil::grid;

namespace {

Volume textured(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 6.283);
  const double p1 = u(rng), p2 = u(rng), p3 = u(rng);
  Volume v(grid(n, n, n), 0.0f);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        v(i, j, k) = static_cast<float>(100 * std::sin(0.9 * i + p1) * std::cos(0.7 * j + p2) +
                                        80 * std::sin(0.5 * k + 0.6 * i + p3) +
                                        60 * std::cos(1.3 * j - 0.4 * k));
  return v;
}

Volume shift_x(const Volume& v, int s) {
  Volume out(v.geometry(), 0.0f);
  for (int k = 0; k < v.nz(); ++k)
    for (int j = 0; j < v.ny(); ++j)
      for (int i = 0; i < v.nx(); ++i)
        out(i, j, k) = v(std::clamp(i - s, 0, v.nx() - 1), j, k);
  return out;
}

std::vector<Correspondence> synth(const AffineTransform& a, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-80.0, 80.0);
  std::vector<Correspondence> c(n);
  for (auto& x : c) {
    x.fixed_mm = {u(rng), u(rng), u(rng)};
    x.moving_mm = a.apply(x.fixed_mm);
  }
  return c;
}

AffineTransform random_affine(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  AffineTransform a;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c)
      a.matrix(r, c) = (r == c ? 1.0 : 0.0) + u(rng);
    a.matrix(r, 3) = 50.0 * u(rng);
  }
  return a;
}

} // namespace

TEST_CASE("displacement labels are ordered by norm, then lexicographic") {
  const auto l = displacement_labels(1, 2);
  REQUIRE(l.size() == 27);
  CHECK(l[0] == std::array<int, 3>{0, 0, 0});
  CHECK(l[1] == std::array<int, 3>{-2, 0, 0});
  CHECK(l[6] == std::array<int, 3>{2, 0, 0});
  CHECK(l[7] == std::array<int, 3>{-2, -2, 0});
}

TEST_CASE("block matching") {
  const Volume f = textured(16, 4);
  const DescriptorVolume fd = ssc_descriptor(f);
  const BlockMatchParams p{4, 2, 1, 2};
  const auto pts = block_grid(f.geometry(), p.grid_spacing);
  CHECK(pts.size() == 4u * 4u * 4u);

  for (const auto& c : block_match(fd, fd, p))
    CHECK((c.moving_mm - c.fixed_mm).norm() == 0.0);

  // moving shifted by +1 voxel in x: brute force over the label set decides
  const Volume m = shift_x(f, 1);
  const DescriptorVolume md = ssc_descriptor(m);
  const auto corr = block_match(fd, md, p);
  const auto labels = displacement_labels(p.search_radius, p.step);
  int interior_shifts = 0;
  for (std::size_t q = 0; q < pts.size(); ++q) {
    double best = 1e9;
    std::array<int, 3> arg{};
    for (const auto& l : labels) {
      const double c = oracle::block_cost(fd.codes, md.codes, {16, 16, 16}, pts[q], l,
                                          p.cost_patch_radius, labels);
      if (c < best) {
        best = c;
        arg = l;
      }
    }
    const Eigen::Vector3d d = corr[q].moving_mm - corr[q].fixed_mm;
    CHECK(d == Eigen::Vector3d(arg[0], arg[1], arg[2]));
    const auto& pt = pts[q];
    if (pt[0] >= 4 && pt[0] <= 11 && pt[1] >= 3 && pt[1] <= 12 && pt[2] >= 3 && pt[2] <= 12) {
      CHECK(d == Eigen::Vector3d(1, 0, 0));
      ++interior_shifts;
    }
  }
  CHECK(interior_shifts > 0);
}

TEST_CASE("fit_affine") {
  const AffineTransform a = random_affine(5);
  const AffineTransform fit = fit_affine(synth(a, 60, 1));
  CHECK((fit.matrix - a.matrix).cwiseAbs().maxCoeff() < 1e-6);

  const AffineTransform id = fit_affine(synth(AffineTransform::identity(), 30, 2));
  CHECK((id.matrix - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);

  auto corr = synth(a, 100, 3);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> sign(0, 1);
  for (int i = 0; i < 20; ++i)
    corr[i * 5].moving_mm += Eigen::Vector3d(sign(rng) ? 30 : -30, sign(rng) ? 30 : -30,
                                             sign(rng) ? 30 : -30);
  const AffineTransform robust = fit_affine(corr, 0.2, 2);
  CHECK((robust.matrix - a.matrix).cwiseAbs().maxCoeff() < 1e-3);

  CHECK_THROWS_AS(fit_affine(synth(a, 3, 4)), Error);
}

TEST_CASE("affine json roundtrip and inverse") {
  testutil::TempDir dir("affine");
  const AffineTransform a = random_affine(8);
  write_affine(a, dir.path / "a.json");
  CHECK(read_affine(dir.path / "a.json").matrix == a.matrix);
  CHECK((a.then_after(a.inverse()).matrix - Eigen::Matrix4d::Identity()).norm() < 1e-12);
  AffineTransform s;
  s.matrix(1, 1) = 0.0;
  CHECK_THROWS_AS(s.inverse(), Error);
}

TEST_CASE("register_affine on phantoms") {
  PhantomParams p = atlas_phantom_params();
  p.dims = {64, 64, 64};
  p.spacing = Eigen::Vector3d::Constant(4.5);
  const Phantom ph = generate_phantom(p);
  const Geometry& g = ph.volume.geometry();

  const AffineTransform id = register_affine(ph.volume, ph.volume);
  CHECK(max_corner_error_voxels(id, AffineTransform::identity(), g) < 0.5);

  // translated moving image: Dice of body masks must not get worse
  AffineTransform shift;
  shift.matrix.block<3, 1>(0, 3) = Eigen::Vector3d(13.5, -9.0, 9.0);
  const Volume moving = warp_volume(ph.volume, DenseField::zeros(g), shift.inverse());
  const AffineTransform a = register_affine(ph.volume, moving);
  auto body_dice = [&](const Volume& v) {
    const auto fm = body_mask(ph.volume), mm = body_mask(v);
    long both = 0, nf = 0, nm = 0;
    for (std::size_t n = 0; n < fm.size(); ++n) {
      both += fm[n] && mm[n];
      nf += fm[n] != 0;
      nm += mm[n] != 0;
    }
    return 2.0 * both / static_cast<double>(nf + nm);
  };
  const double before = body_dice(moving);
  const double after = body_dice(warp_volume(moving, DenseField::zeros(g), a));
  CHECK(after >= before);
  CHECK(max_corner_error_voxels(a, shift, g) < 2.0);
}
