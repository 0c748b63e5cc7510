#include "helpers.hpp"
#include "oracles.hpp"

#include "katlas/metrics.hpp"

#include <doctest.h>

#include <json.hpp>

#include <fstream>

using namespace katlas;
using testutil::grid;

TEST_CASE("dice") {
  LabelMap p(grid(4, 4, 4), 0), g(grid(4, 4, 4), 0);
  p(0, 0, 0) = p(1, 0, 0) = 2;
  g(1, 0, 0) = g(2, 0, 0) = 2;
  CHECK(dice(p, g, 2) == 0.5);
  CHECK(dice(p, g, 5) == 1.0);
  CHECK(dice(p, p, 2) == 1.0);
  g(1, 0, 0) = 0;
  CHECK(dice(p, g, 2) == 0.0);
}

TEST_CASE("surface extraction") {
  LabelMap l(grid(5, 5, 5, 2.0), 0);
  CHECK_THROWS_AS(extract_surface(l, 1), Error);
  l(2, 2, 2) = 1;
  auto s = extract_surface(l, 1);
  REQUIRE(s.size() == 6);
  for (const auto& v : s)
    CHECK((v - l.geometry().index_to_world({2, 2, 2})).norm() == doctest::Approx(1.0));
  l(3, 2, 2) = 1;
  CHECK(extract_surface(l, 1).size() == 10);
}

TEST_CASE("msd and hd by hand") {
  const std::vector<Eigen::Vector3d> a{{0, 0, 0}, {3, 0, 0}};
  const std::vector<Eigen::Vector3d> b{{0, 0, 0}};
  CHECK(msd(a, b) == 1.5);
  CHECK(hd(a, b) == 3.0);
  CHECK(msd(b, a) == 0.0);
  CHECK(msd_symmetric(a, b) == 0.75);
  CHECK(hd_symmetric(a, b) == 3.0);
}

TEST_CASE("metrics agree with brute force on random small label maps") {
  std::mt19937_64 rng(77);
  int cases = 0;
  while (cases < 120) {
    LabelMap p(grid(4, 3, 3, 1.5), 0), g(grid(4, 3, 3, 1.5), 0);
    std::bernoulli_distribution on(0.15);
    for (std::size_t n = 0; n < p.size(); ++n) {
      p[n] = on(rng) ? 4 : 0;
      g[n] = on(rng) ? 4 : 0;
    }
    CHECK(dice(p, g, 4) == oracle::dice(p, g, 4));
    if (std::count(p.values().begin(), p.values().end(), 4) == 0 ||
        std::count(g.values().begin(), g.values().end(), 4) == 0)
      continue;
    const auto sp = extract_surface(p, 4), sg = extract_surface(g, 4);
    if (sp.size() > 30 || sg.size() > 30)
      continue;
    CHECK(sp == oracle::surface(p, 4));
    CHECK(msd(sp, sg) == oracle::msd(sp, sg));
    CHECK(hd(sp, sg) == oracle::hd(sp, sg));
    ++cases;
  }
}

TEST_CASE("wilcoxon signed rank") {
  const auto all_pos = wilcoxon_signed_rank({1, 2, 3, 4, 5, 6, 7, 8});
  CHECK(all_pos.exact);
  CHECK(all_pos.w_plus == 36.0);
  CHECK(all_pos.w_minus == 0.0);
  CHECK(all_pos.p == doctest::Approx(2.0 / 256.0));

  // signs chosen so w_plus = w_minus = n(n+1)/4
  const auto sym = wilcoxon_signed_rank({1, -2, -3, 4, -5, 6, 7, -8});
  CHECK(sym.w_plus == 18.0);
  CHECK(sym.w_minus == 18.0);
  CHECK(sym.p == doctest::Approx(1.0));

  // |d| ranks 3 1 4 5 2 6, negatives hold ranks 1 and 2; sums <= 3: {}, 1, 2, 3, 1+2
  const auto hand = wilcoxon_signed_rank({1.5, -0.5, 2, 3, -1, 4});
  CHECK(hand.w_minus == 3.0);
  CHECK(hand.w_plus == 18.0);
  CHECK(hand.p == doctest::Approx(10.0 / 64.0));

  CHECK(wilcoxon_signed_rank({0, 0, 1}).n == 1);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> d(0.3, 1.0);
  for (int n = 1; n <= 12; ++n) {
    std::vector<double> x(n);
    for (auto& v : x)
      v = std::round(d(rng) * 4) / 4; // produces ties and zeros
    const auto r = wilcoxon_signed_rank(x, WilcoxonMode::exact);
    const auto o = oracle::signed_rank_exact(x);
    CHECK(r.n == o.n);
    CHECK(r.w_plus == o.w_plus);
    CHECK(std::abs(r.p - o.p) < 1e-3);
  }

  std::vector<double> big;
  for (int i = 1; i <= 30; ++i)
    big.push_back(i % 4 == 0 ? -i : i);
  const auto normal = wilcoxon_signed_rank(big);
  // w_minus = 4 (1 + ... + 7) = 112, mean 232.5, variance 30 * 31 * 61 / 24
  CHECK_FALSE(normal.exact);
  CHECK(normal.w_minus == 112.0);
  CHECK(std::abs(normal.z) == doctest::Approx(120.5 / std::sqrt(30.0 * 31 * 61 / 24)));
  CHECK(normal.p == doctest::Approx(std::erfc(std::abs(normal.z) / std::sqrt(2.0))));
}

TEST_CASE("evaluate_labels") {
  LabelMap t(grid(8, 8, 8), 0);
  for (int k = 2; k < 5; ++k)
    for (int j = 2; j < 5; ++j)
      for (int i = 2; i < 5; ++i)
        t(i, j, k) = 2;
  LabelMap p = t;
  p(6, 6, 6) = 3;
  const auto rows = evaluate_labels(p, t, "s1");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].organ_id == 2);
  CHECK(rows[0].dice == 1.0);
  CHECK(*rows[0].msd_mm == 0.0);
  CHECK(rows[1].organ_id == 3);
  CHECK(rows[1].dice == 0.0);
  CHECK_FALSE(rows[1].msd_mm.has_value());

  testutil::TempDir dir("metrics");
  write_metrics(rows, dir.path / "m.json");
  std::ifstream in(dir.path / "m.json");
  const auto j = nlohmann::json::parse(in);
  CHECK(j.dump().find("\"s1\"") != std::string::npos);
}
