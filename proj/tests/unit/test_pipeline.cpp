#include "helpers.hpp"

#include "katlas/pipeline.hpp"

#include <doctest.h>

#include <fstream>

using namespace katlas;
namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

} // namespace

TEST_CASE("default configuration") {
  const PipelineConfig c;
  CHECK(c.crop_low == -5.0);
  CHECK(c.crop_high == 5.0);
  CHECK(c.deform.levels.size() == 5);
  CHECK(c.deform.levels.front().grid_spacing == 8);
  CHECK(c.deform.levels.back().grid_spacing == 4);
  CHECK(kClinicalAtlasSpacingMm == 0.86);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("config json") {
  const PipelineConfig c = config_from_json(R"({
    "crop_window": [-4, 4.5],
    "deform": {"levels": [{"grid_spacing": 6, "radius": 3, "quant": 2}], "alpha": 0.25},
    "success": {"min_body_dice": 0.8},
    "threads": 2,
    "scorer": "w.json"
  })", "/data/cfg");
  CHECK(c.crop_low == -4.0);
  CHECK(c.crop_high == 4.5);
  CHECK(c.deform.levels.size() == 1);
  CHECK(c.deform_params.alpha == 0.25);
  CHECK(c.success.min_body_dice == 0.8);
  CHECK(c.threads == 2);
  CHECK(*c.scorer_path == fs::path("/data/cfg/w.json"));

  const PipelineConfig back = config_from_json(config_to_json(c), "/data/cfg");
  CHECK(config_to_json(back) == config_to_json(c));

  CHECK(error_code([] { config_from_json("{"); }) == "invalid_json");
  CHECK(error_code([] { config_from_json("[1]"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"crop_window": [3, -3]})"); }) == "invalid_config");
  CHECK(error_code([] { config_from_json(R"({"threads": -2})"); }) == "invalid_config");
  CHECK(error_code([] {
          config_from_json(R"({"deform": {"levels": [{"grid_spacing": 4, "radius": 2}]}})");
        }) == "invalid_config");
  CHECK(error_code([] { read_config("/nonexistent/cfg.json"); }) == "missing_input");
}

TEST_CASE("manifest") {
  testutil::TempDir dir("manifest");
  for (const char* f : {"a.nii", "al.nii", "s1.nii", "s2.nii", "s1.scores.json"})
    write_text(dir.path / f, "x");
  write_text(dir.path / "m.json", R"({
    "atlas": {"volume": "a.nii", "labels": "al.nii"},
    "subjects": [
      {"id": "one", "volume": "s1.nii", "phase": "portal_venous", "scores": "s1.scores.json"},
      {"volume": "s2.nii", "phase": "delayed"}
    ]})");
  const CohortManifest m = read_manifest(dir.path / "m.json");
  REQUIRE(m.subjects.size() == 2);
  CHECK(m.atlas_volume == dir.path / "a.nii");
  CHECK(m.subjects[0].id == "one");
  CHECK(*m.subjects[0].scores == dir.path / "s1.scores.json");
  CHECK(m.subjects[1].id == "s2");
  CHECK(m.subjects[1].phase == Phase::delayed);
  CHECK_FALSE(m.subjects[1].labels.has_value());

  write_text(dir.path / "dup.json", R"({"atlas": {"volume": "a.nii", "labels": "al.nii"},
    "subjects": [{"id": "x", "volume": "s1.nii", "phase": "delayed"},
                 {"id": "x", "volume": "s2.nii", "phase": "delayed"}]})");
  CHECK(error_code([&] { read_manifest(dir.path / "dup.json"); }) == "invalid_manifest");

  write_text(dir.path / "phase.json", R"({"atlas": {"volume": "a.nii", "labels": "al.nii"},
    "subjects": [{"volume": "s1.nii", "phase": "arterial"}]})");
  CHECK(error_code([&] { read_manifest(dir.path / "phase.json"); }) == "invalid_phase");

  write_text(dir.path / "missing.json", R"({"atlas": {"volume": "a.nii", "labels": "al.nii"},
    "subjects": [{"volume": "nope.nii", "phase": "delayed"}]})");
  CHECK(error_code([&] { read_manifest(dir.path / "missing.json"); }) == "missing_input");

  write_text(dir.path / "shape.json", R"({"subjects": []})");
  CHECK(error_code([&] { read_manifest(dir.path / "shape.json"); }) == "invalid_manifest");
}

TEST_CASE("subject scores") {
  testutil::TempDir dir("scores");
  ManifestSubject s;
  s.volume = dir.path / "v.nii";
  const Volume v(testutil::grid(4, 4, 3), 0.0f);
  const PipelineConfig c;
  CHECK(error_code([&] { subject_scores(v, s, c); }) == "missing_scores");

  write_score_sidecar({1, 2, 3}, dir.path / "v.scores.json");
  CHECK(subject_scores(v, s, c) == std::vector<double>{1, 2, 3});

  // slices stored top to bottom come back in canonical order
  Geometry flipped = v.geometry();
  flipped.direction(2, 2) = -1.0;
  CHECK(subject_scores(Volume(flipped, 0.0f), s, c) == std::vector<double>{3, 2, 1});

  write_score_sidecar({1, 2}, dir.path / "v.scores.json");
  CHECK(error_code([&] { subject_scores(v, s, c); }) == "score_count_mismatch");
}
