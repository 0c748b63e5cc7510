#include "katlas/pipeline.hpp"

#include "katlas/nifti_io.hpp"
#include "katlas/volume_ops.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace katlas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in)
    throw Error("missing_input", std::string("cannot open ") + what + " " + path.string());
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error("invalid_json", path.string() + ": " + e.what());
  }
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

json matrix_json(const Eigen::Matrix4d& m) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c)
      a.push_back(m(r, c));
  return a;
}

} // namespace

void PipelineConfig::validate() const {
  if (!(crop_low < crop_high))
    throw Error("invalid_config", "crop window must satisfy low < high");
  if (affine.levels.empty())
    throw Error("invalid_config", "affine schedule needs at least one level");
  for (const auto& l : affine.levels)
    if (l.factor < 1 || l.iterations < 1 || l.match.grid_spacing < 1 ||
        l.match.search_radius < 0 || l.match.step < 1 || l.match.cost_patch_radius < 0)
      throw Error("invalid_config", "affine level entries out of range");
  if (affine.trim_fraction < 0.0 || affine.trim_fraction >= 1.0 || affine.rounds < 1 ||
      affine.salient_fraction <= 0.0 || affine.salient_fraction > 1.0)
    throw Error("invalid_config", "affine fit parameters out of range");
  try {
    deform.validate();
  } catch (const Error& e) {
    throw Error("invalid_config", e.what());
  }
  if (deform_params.alpha < 0.0)
    throw Error("invalid_config", "alpha must be non-negative");
  if (success.min_body_dice < 0.0 || success.min_body_dice > 1.0)
    throw Error("invalid_config", "min_body_dice must lie in [0, 1]");
  if (threads < 0 || inversion_max_iter < 1 || inversion_tol <= 0.0)
    throw Error("invalid_config", "threads/inversion settings out of range");
}

PipelineConfig config_from_json(const std::string& text, const fs::path& base_dir) {
  PipelineConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("invalid_json", e.what());
  }
  if (!j.is_object())
    throw Error("invalid_config", "config must be a JSON object");
  try {
    if (j.contains("crop_window")) {
      const auto w = j.at("crop_window").get<std::array<double, 2>>();
      c.crop_low = w[0];
      c.crop_high = w[1];
    }
    if (j.contains("affine")) {
      const json& a = j.at("affine");
      if (a.contains("levels")) {
        c.affine.levels.clear();
        for (const auto& l : a.at("levels")) {
          AffineLevel level{l.at("factor").get<int>(), {}, l.value("iterations", 3)};
          level.match.grid_spacing = l.value("grid_spacing", level.match.grid_spacing);
          level.match.search_radius = l.value("search_radius", level.match.search_radius);
          level.match.step = l.value("step", level.match.step);
          level.match.cost_patch_radius = l.value("cost_patch_radius", level.match.cost_patch_radius);
          c.affine.levels.push_back(level);
        }
      }
      c.affine.converged_corner_voxels =
          a.value("converged_corner_voxels", c.affine.converged_corner_voxels);
      c.affine.trim_fraction = a.value("trim_fraction", c.affine.trim_fraction);
      c.affine.rounds = a.value("rounds", c.affine.rounds);
      c.affine.salient_fraction = a.value("salient_fraction", c.affine.salient_fraction);
    }
    if (j.contains("deform")) {
      const json& d = j.at("deform");
      if (d.contains("levels")) {
        c.deform.levels.clear();
        for (const auto& l : d.at("levels"))
          c.deform.levels.push_back(
              {l.at("grid_spacing").get<int>(), l.at("radius").get<int>(), l.at("quant").get<int>()});
      }
      c.deform_params.alpha = d.value("alpha", c.deform_params.alpha);
      c.deform_params.cost_patch_radius =
          d.value("cost_patch_radius", c.deform_params.cost_patch_radius);
      c.deform_params.cost_patch_stride =
          d.value("cost_patch_stride", c.deform_params.cost_patch_stride);
    }
    if (j.contains("success")) {
      const json& s = j.at("success");
      c.success.min_body_dice = s.value("min_body_dice", c.success.min_body_dice);
      c.success.require_ncc_gain = s.value("require_ncc_gain", c.success.require_ncc_gain);
    }
    c.threads = j.value("threads", c.threads);
    if (j.contains("inversion")) {
      c.inversion_max_iter = j.at("inversion").value("max_iter", c.inversion_max_iter);
      c.inversion_tol = j.at("inversion").value("tol", c.inversion_tol);
    }
    c.symmetric_metrics = j.value("symmetric_metrics", c.symmetric_metrics);
    if (j.contains("scorer") && !j.at("scorer").is_null())
      c.scorer_path = resolve(base_dir, j.at("scorer").get<std::string>());
    if (j.contains("out") && !j.at("out").is_null())
      c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
  } catch (const json::exception& e) {
    throw Error("invalid_config", e.what());
  }
  c.validate();
  return c;
}

PipelineConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in)
    throw Error("missing_input", "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), path.parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  json levels = json::array();
  for (const auto& l : c.affine.levels)
    levels.push_back({{"factor", l.factor},
                      {"grid_spacing", l.match.grid_spacing},
                      {"search_radius", l.match.search_radius},
                      {"step", l.match.step},
                      {"cost_patch_radius", l.match.cost_patch_radius},
                      {"iterations", l.iterations}});
  json dlevels = json::array();
  for (const auto& l : c.deform.levels)
    dlevels.push_back({{"grid_spacing", l.grid_spacing}, {"radius", l.radius}, {"quant", l.quant}});
  json j{{"crop_window", {c.crop_low, c.crop_high}},
         {"affine",
          {{"levels", levels},
           {"converged_corner_voxels", c.affine.converged_corner_voxels},
           {"trim_fraction", c.affine.trim_fraction},
           {"rounds", c.affine.rounds},
           {"salient_fraction", c.affine.salient_fraction}}},
         {"deform",
          {{"levels", dlevels},
           {"alpha", c.deform_params.alpha},
           {"cost_patch_radius", c.deform_params.cost_patch_radius},
           {"cost_patch_stride", c.deform_params.cost_patch_stride}}},
         {"success",
          {{"min_body_dice", c.success.min_body_dice},
           {"require_ncc_gain", c.success.require_ncc_gain}}},
         {"threads", c.threads},
         {"inversion", {{"max_iter", c.inversion_max_iter}, {"tol", c.inversion_tol}}},
         {"symmetric_metrics", c.symmetric_metrics}};
  j["scorer"] = c.scorer_path ? json(c.scorer_path->string()) : json(nullptr);
  return j.dump(2);
}

CohortManifest read_manifest(const fs::path& path) {
  const json j = read_json_file(path, "manifest");
  const fs::path base = path.parent_path();
  CohortManifest m;
  auto existing = [&](const std::string& p) {
    fs::path r = resolve(base, p);
    if (!fs::exists(r))
      throw Error("missing_input", "manifest references missing file " + r.string());
    return r;
  };
  try {
    m.atlas_volume = existing(j.at("atlas").at("volume").get<std::string>());
    m.atlas_labels = existing(j.at("atlas").at("labels").get<std::string>());
    std::set<std::string> ids;
    for (const auto& s : j.at("subjects")) {
      ManifestSubject sub;
      sub.volume = existing(s.at("volume").get<std::string>());
      sub.id = s.contains("id") ? s.at("id").get<std::string>() : sub.volume.stem().string();
      sub.phase = parse_phase(s.at("phase").get<std::string>());
      if (s.contains("scores") && !s.at("scores").is_null())
        sub.scores = existing(s.at("scores").get<std::string>());
      if (s.contains("labels") && !s.at("labels").is_null())
        sub.labels = existing(s.at("labels").get<std::string>());
      if (!ids.insert(sub.id).second)
        throw Error("invalid_manifest", "duplicate subject id " + sub.id);
      m.subjects.push_back(std::move(sub));
    }
  } catch (const json::exception& e) {
    throw Error("invalid_manifest", path.string() + ": " + e.what());
  }
  return m;
}

std::vector<double> subject_scores(const Volume& native, const ManifestSubject& s,
                                   const PipelineConfig& config) {
  std::optional<fs::path> sidecar = s.scores;
  if (!sidecar && fs::exists(sidecar_path_for(s.volume)))
    sidecar = sidecar_path_for(s.volume);
  if (sidecar) {
    std::vector<double> scores = read_score_sidecar(*sidecar);
    if (static_cast<int>(scores.size()) != native.nz())
      throw Error("score_count_mismatch", "sidecar " + sidecar->string() + " has " +
                                              std::to_string(scores.size()) + " scores for " +
                                              std::to_string(native.nz()) + " slices");
    const Eigen::Matrix3d& d = native.geometry().direction;
    int slice_axis = 0;
    for (int r = 1; r < 3; ++r)
      if (std::abs(d(r, 2)) > std::abs(d(slice_axis, 2)))
        slice_axis = r;
    if (slice_axis != 2)
      throw Error("non_axial_slices", "sidecar scores need axial slices in " + s.volume.string());
    if (d(2, 2) < 0.0)
      std::reverse(scores.begin(), scores.end());
    return scores;
  }
  if (!config.scorer_path)
    throw Error("missing_scores", "no score sidecar or scorer weights for subject " + s.id);
  const LinearScorer scorer = read_scorer(*config.scorer_path);
  return score_slices(compute_slice_features(reorient_canonical(native)), scorer);
}

PreparedSubject prepare_subject(const Volume& native, const std::vector<double>& canonical_scores,
                                const Geometry& atlas, const PipelineConfig& config) {
  const Volume canon = reorient_canonical(native);
  if (static_cast<int>(canonical_scores.size()) != canon.nz())
    throw Error("score_count_mismatch", "one score per axial slice is required");
  PreparedSubject p;
  p.series = fit_linear_correction(canonical_scores);
  std::tie(p.first_slice, p.last_slice) =
      window_slice_range(p.series, config.crop_low, config.crop_high);
  const Volume voi = crop_pad_z(canon, p.first_slice, p.last_slice + 1);

  const Geometry& vg = voi.geometry();
  const Eigen::Vector3d centre = vg.index_to_world(
      0.5 * Eigen::Vector3d(vg.dims[0] - 1, vg.dims[1] - 1, vg.dims[2] - 1));
  Geometry grid;
  grid.spacing = atlas.spacing;
  grid.direction = atlas.direction;
  grid.dims = {atlas.dims[0], atlas.dims[1],
               std::max(1, static_cast<int>(std::lround(vg.dims[2] * vg.spacing.z() /
                                                        atlas.spacing.z())))};
  grid.origin = centre - grid.direction * grid.spacing.cwiseProduct(
                                              0.5 * Eigen::Vector3d(grid.dims[0] - 1,
                                                                    grid.dims[1] - 1,
                                                                    grid.dims[2] - 1));
  Volume v = crop_pad_z(resample(voi, grid), 0, grid.dims[2], atlas.dims[2]);
  p.to_subject.matrix =
      v.geometry().index_to_world_matrix() * atlas.index_to_world_matrix().inverse();
  v.set_geometry(atlas);
  p.volume = std::move(v);
  return p;
}

void write_prep(const PreparedSubject& p, const fs::path& path) {
  json j{{"to_subject", matrix_json(p.to_subject.matrix)},
         {"maps", "atlas_to_subject_world_mm"},
         {"voi", {p.first_slice, p.last_slice}},
         {"raw", p.series.raw},
         {"slope", p.series.slope},
         {"intercept", p.series.intercept},
         {"fitted", p.series.fitted}};
  write_json_file(j, path);
}

AffineTransform read_prep_affine(const fs::path& path) {
  const json j = read_json_file(path, "prep file");
  try {
    const auto m = j.at("to_subject").get<std::vector<double>>();
    if (m.size() != 16)
      throw Error("invalid_json", "to_subject needs 16 numbers");
    AffineTransform t;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        t.matrix(r, c) = m[r * 4 + c];
    return t;
  } catch (const json::exception& e) {
    throw Error("invalid_json", path.string() + ": " + e.what());
  }
}

SubjectResult run_subject(const AtlasInputs& atlas, const ManifestSubject& subject,
                          const PipelineConfig& config, bool transfer) {
  SubjectResult r;
  r.id = subject.id;
  r.phase = subject.phase;
  const Volume native = read_volume(subject.volume);
  validate_volume(native);
  r.prep = prepare_subject(native, subject_scores(native, subject, config),
                           atlas.volume.geometry(), config);
  spdlog::info("{}: VOI slices [{}, {}]", subject.id, r.prep.first_slice, r.prep.last_slice);

  r.affine = register_affine(atlas.volume, r.prep.volume, config.affine);
  const Volume affine_only =
      warp_volume(r.prep.volume, DenseField::zeros(atlas.volume.geometry()), r.affine);
  r.field = register_deform(atlas.volume, affine_only, config.deform, config.deform_params);
  r.registered = warp_volume(r.prep.volume, r.field, r.affine);
  r.report = success_filter(r.registered, atlas.volume, &r.prep.volume, config.success);
  spdlog::info("{}: body dice {:.4f}, ncc {:.4f} (before {:.4f}), {}", subject.id,
               r.report.body_dice, r.report.ncc, r.report.ncc_before,
               r.report.success ? "accepted" : "rejected");

  if (transfer) {
    r.inversion = invert_field(r.field, config.inversion_max_iter, config.inversion_tol);
    if (!r.inversion->converged)
      spdlog::info("{}: field inversion did not converge (mean residual {:.4f})", subject.id,
                   r.inversion->mean_residual);
    r.transferred = transfer_labels_with_inverse(atlas.labels, r.prep.to_subject.then_after(r.affine),
                                                 r.inversion->inverse, native.geometry());
    if (subject.labels) {
      const LabelMap truth = read_labels(*subject.labels);
      r.metrics = evaluate_labels(*r.transferred, truth, subject.id, config.symmetric_metrics);
    }
  }
  return r;
}

PipelineOutputs run_pipeline(const CohortManifest& manifest, const PipelineConfig& config,
                             const fs::path& out, bool transfer) {
  fs::create_directories(out / "subjects");
  AtlasInputs atlas{read_volume(manifest.atlas_volume), read_labels(manifest.atlas_labels)};
  validate_volume(atlas.volume);
  if (!atlas.labels.geometry().matches(atlas.volume.geometry()))
    throw Error("geometry_mismatch", "atlas labels do not share the atlas volume geometry");

  std::map<Phase, AtlasAccumulator> accumulators;
  std::map<Phase, std::vector<SubjectRecord>> records;
  PipelineOutputs result;
  json subjects = json::array();

  for (const auto& s : manifest.subjects) {
    accumulators.try_emplace(s.phase, atlas.volume.geometry());
    SubjectRecord rec;
    rec.id = s.id;
    json row{{"id", s.id}, {"phase", phase_name(s.phase)}};
    try {
      SubjectResult r = run_subject(atlas, s, config, transfer);
      const fs::path dir = out / "subjects" / s.id;
      fs::create_directories(dir);
      write_prep(r.prep, dir / "prep.json");
      write_affine(r.affine, dir / "affine.json");
      write_field(r.field, dir / "field.dfld");
      write_volume(r.registered, dir / "registered.nii");
      if (r.transferred)
        write_labels(*r.transferred, dir / "labels.nii");

      rec.success = r.report.success;
      rec.report = r.report;
      if (r.report.success)
        accumulators.at(s.phase).add(r.registered);
      row["success"] = r.report.success;
      row["body_dice"] = r.report.body_dice;
      row["ncc"] = r.report.ncc;
      row["ncc_before"] = r.report.ncc_before;
      row["voi"] = {r.prep.first_slice, r.prep.last_slice};
      if (r.inversion)
        row["inversion"] = {{"converged", r.inversion->converged},
                            {"iterations", r.inversion->iterations},
                            {"mean_residual", r.inversion->mean_residual},
                            {"max_residual", r.inversion->max_residual}};
      result.metrics.insert(result.metrics.end(), r.metrics.begin(), r.metrics.end());
      ++result.completed;
    } catch (const Error& e) {
      rec.error = e.code() + ": " + e.what();
    } catch (const std::exception& e) {
      rec.error = std::string("internal_error: ") + e.what();
    }
    if (!rec.error.empty()) {
      spdlog::error("{}: {}", s.id, rec.error);
      row["success"] = false;
      row["error"] = rec.error;
      ++result.failed;
    }
    records[s.phase].push_back(rec);
    subjects.push_back(row);
  }

  json phases = json::array();
  for (const auto& [phase, acc] : accumulators) {
    AtlasBundle b = finish_bundle(phase, acc, manifest.atlas_labels.string(), records[phase]);
    write_bundle(b, out);
    phases.push_back({{"phase", phase_name(phase)}, {"count", b.count}});
    result.bundles.push_back(std::move(b));
  }
  write_metrics(result.metrics, out / "metrics.json");
  // The thread count is left out so reports do not depend on it.
  json echoed = json::parse(config_to_json(config));
  echoed.erase("threads");
  write_json_file({{"atlas", manifest.atlas_volume.string()},
                   {"label_transfer", transfer},
                   {"config", echoed},
                   {"phases", phases},
                   {"subjects", subjects},
                   {"completed", result.completed},
                   {"failed", result.failed}},
                  out / "pipeline_report.json");
  return result;
}

} // namespace katlas
