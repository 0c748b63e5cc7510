#include "katlas/nifti_io.hpp"
#include "katlas/parallel.hpp"
#include "katlas/phantom.hpp"
#include "katlas/pipeline.hpp"
#include "katlas/render.hpp"
#include "katlas/volume_ops.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace katlas;

namespace {

struct Globals {
  std::string config;
  std::string manifest;
  std::string out;
  int threads = -1;
  std::uint64_t seed = 1;
};

PipelineConfig load_config(const Globals& g) {
  return g.config.empty() ? PipelineConfig{} : read_config(g.config);
}

void require(const std::string& value, const char* flag) {
  if (value.empty())
    throw Error("missing_argument", std::string(flag) + " is required");
}

void write_text(const std::string& text, const fs::path& path) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out << text << '\n';
}

ManifestSubject single_subject(const std::string& volume, const std::string& scores) {
  ManifestSubject s;
  s.volume = volume;
  s.id = s.volume.stem().string();
  if (!scores.empty())
    s.scores = fs::path(scores);
  return s;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
}

std::vector<Phase> parse_phases(const std::string& list) {
  std::vector<Phase> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(parse_phase(item));
  if (out.empty())
    throw Error("invalid_phase", "at least one phase is required");
  return out;
}

} // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("katlas");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* lvl = std::getenv("ATLAS_LOG"))
    spdlog::set_level(spdlog::level::from_str(lvl));

  CLI::App app{"Kidney-focused abdominal CT atlas toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Pipeline config JSON");
  app.add_option("--manifest", g.manifest, "Cohort manifest JSON");
  app.add_option("--out", g.out, "Output file or directory");
  app.add_option("--threads", g.threads, "Worker threads (default: config, then all cores)");
  app.add_option("--seed", g.seed, "Random seed for generated data");

  std::string volume, scores, reference, prep_out, fixed, moving, affine, field, inverse, labels,
      prep, pred, truth, subject_id, kind = "montage", plane = "axial",
      phases = "portal_venous";
  std::vector<std::string> inputs;
  bool as_labels = false, symmetric = false;
  double slice_frac = 0.5, vmax = 0.0;
  int slice = -1, cell_px = 8, subjects = 20;

  auto* score = app.add_subcommand("score", "Per-slice scores, linear fit and VOI range");
  score->add_option("--volume", volume)->required();
  score->add_option("--scores", scores, "Score sidecar");

  auto* crop = app.add_subcommand("crop", "Crop to the score window; with --reference also resample onto the atlas grid");
  crop->add_option("--volume", volume)->required();
  crop->add_option("--scores", scores, "Score sidecar");
  crop->add_option("--reference", reference, "Atlas volume");
  crop->add_option("--prep", prep_out, "Where to write the atlas-to-subject map (needs --reference)");

  auto* reg_affine = app.add_subcommand("reg-affine", "Affine registration, fixed world -> moving world");
  reg_affine->add_option("--fixed", fixed)->required();
  reg_affine->add_option("--moving", moving)->required();

  auto* reg_deform = app.add_subcommand("reg-deform", "Deformable registration on the fixed grid");
  reg_deform->add_option("--fixed", fixed)->required();
  reg_deform->add_option("--moving", moving)->required();
  reg_deform->add_option("--affine", affine, "Pre-alignment applied to the moving image");

  auto* warp = app.add_subcommand("warp", "Pull-back warp onto a reference grid");
  warp->add_option("--moving", moving)->required();
  warp->add_option("--reference", reference, "Volume giving the output grid")->required();
  warp->add_option("--field", field);
  warp->add_option("--affine", affine);
  warp->add_flag("--labels", as_labels, "Moving image is a label map (nearest neighbour)");

  auto* invert = app.add_subcommand("invert", "Fixed-point field inversion");
  invert->add_option("--field", field)->required();

  auto* transfer = app.add_subcommand("transfer-labels", "Map atlas labels into subject space");
  transfer->add_option("--atlas-labels", labels)->required();
  transfer->add_option("--subject", volume, "Subject volume giving the output grid")->required();
  transfer->add_option("--prep", prep, "prep.json from crop --reference");
  transfer->add_option("--affine", affine);
  auto* field_opt = transfer->add_option("--field", field, "Forward field, inverted here");
  transfer->add_option("--inverse", inverse, "Precomputed inverse field")->excludes(field_opt);

  auto* atlas_build = app.add_subcommand("atlas-build", "Register a cohort and build per-phase atlases");

  auto* evaluate = app.add_subcommand("evaluate", "Dice/MSD/HD per organ");
  evaluate->add_option("--pred", pred)->required();
  evaluate->add_option("--truth", truth)->required();
  evaluate->add_option("--subject", subject_id);
  evaluate->add_flag("--symmetric", symmetric, "Symmetric instead of directed distances");

  auto* render = app.add_subcommand("render", "PNG montage, variance heatmap or checkerboard");
  render->add_option("--kind", kind)->check(CLI::IsMember({"montage", "heatmap", "checkerboard"}));
  render->add_option("--input", inputs, "Volume(s), variance volume or field")->required();
  render->add_option("--plane", plane);
  render->add_option("--slice-frac", slice_frac);
  render->add_option("--slice", slice, "Slice index for checkerboards (default: middle)");
  render->add_option("--vmax", vmax, "Heatmap upper bound (default: max variance)");
  render->add_option("--cell-px", cell_px);

  auto* cohort = app.add_subcommand("phantom-cohort", "Write a randomized phantom cohort and manifest");
  cohort->add_option("--subjects", subjects);
  cohort->add_option("--phases", phases, "Comma-separated phase tags, assigned round-robin");

  auto* pipeline = app.add_subcommand("pipeline", "Full pipeline with label transfer and atlases");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << nlohmann::json{{"error", "invalid_arguments"}, {"message", e.what()}}.dump()
              << '\n';
    return 1;
  }

  try {
    const PipelineConfig config = load_config(g);
    set_threads(g.threads >= 0 ? g.threads : config.threads);
    if (g.out.empty() && config.out_dir)
      g.out = config.out_dir->string();

    if (score->parsed() || crop->parsed()) {
      require(g.out, "--out");
      const ManifestSubject s = single_subject(volume, scores);
      const Volume native = read_volume(volume);
      validate_volume(native);
      const std::vector<double> sc = subject_scores(native, s, config);
      if (score->parsed()) {
        const SliceScoreSeries series = fit_linear_correction(sc);
        const auto [first, last] = window_slice_range(series, config.crop_low, config.crop_high);
        write_text(nlohmann::json{{"raw", series.raw},
                                  {"slope", series.slope},
                                  {"intercept", series.intercept},
                                  {"fitted", series.fitted},
                                  {"voi", {first, last}}}
                       .dump(2),
                   g.out);
      } else if (reference.empty()) {
        ensure_parent(g.out);
        write_volume(crop_to_window(reorient_canonical(native), fit_linear_correction(sc),
                                    config.crop_low, config.crop_high),
                     g.out);
      } else {
        const PreparedSubject p =
            prepare_subject(native, sc, read_volume(reference).geometry(), config);
        ensure_parent(g.out);
        write_volume(p.volume, g.out);
        if (!prep_out.empty())
          write_prep(p, prep_out);
      }
    } else if (reg_affine->parsed()) {
      require(g.out, "--out");
      ensure_parent(g.out);
      write_affine(register_affine(read_volume(fixed), read_volume(moving), config.affine), g.out);
    } else if (reg_deform->parsed()) {
      require(g.out, "--out");
      const Volume f = read_volume(fixed);
      Volume m = read_volume(moving);
      if (!affine.empty() || !m.geometry().matches(f.geometry()))
        m = warp_volume(m, DenseField::zeros(f.geometry()),
                        affine.empty() ? AffineTransform::identity() : read_affine(affine));
      ensure_parent(g.out);
      write_field(register_deform(f, m, config.deform, config.deform_params), g.out);
    } else if (warp->parsed()) {
      require(g.out, "--out");
      const AffineTransform a = affine.empty() ? AffineTransform::identity() : read_affine(affine);
      // Field files carry dims and spacing only; placement comes from the reference.
      const Geometry rg = read_volume(reference).geometry();
      DenseField u = DenseField::zeros(rg);
      if (!field.empty()) {
        u = read_field(field);
        if (rg.dims != u.geometry.dims)
          throw Error("geometry_mismatch", "field and reference grids differ");
        u.geometry = rg;
      }
      ensure_parent(g.out);
      if (as_labels)
        write_labels(warp_volume(read_labels(moving), u, a), g.out);
      else
        write_volume(warp_volume(read_volume(moving), u, a), g.out);
    } else if (invert->parsed()) {
      require(g.out, "--out");
      const FieldInversion inv =
          invert_field(read_field(field), config.inversion_max_iter, config.inversion_tol);
      ensure_parent(g.out);
      write_field(inv.inverse, g.out);
      if (!inv.converged)
        spdlog::warn("inversion did not converge: mean residual {:.4f}", inv.mean_residual);
      std::cout << nlohmann::json{{"converged", inv.converged},
                                  {"iterations", inv.iterations},
                                  {"mean_residual", inv.mean_residual},
                                  {"max_residual", inv.max_residual}}
                       .dump()
                << '\n';
    } else if (transfer->parsed()) {
      require(g.out, "--out");
      const LabelMap atlas_labels = read_labels(labels);
      AffineTransform a = affine.empty() ? AffineTransform::identity() : read_affine(affine);
      if (!prep.empty())
        a = read_prep_affine(prep).then_after(a);
      DenseField inv_field = DenseField::zeros(atlas_labels.geometry());
      if (!field.empty()) {
        DenseField u = read_field(field);
        u.geometry = atlas_labels.geometry();
        inv_field = invert_field(u, config.inversion_max_iter, config.inversion_tol).inverse;
      } else if (!inverse.empty()) {
        inv_field = read_field(inverse);
      }
      inv_field.geometry = atlas_labels.geometry();
      ensure_parent(g.out);
      write_labels(transfer_labels_with_inverse(atlas_labels, a, inv_field,
                                                read_volume(volume).geometry()),
                   g.out);
    } else if (evaluate->parsed()) {
      require(g.out, "--out");
      ensure_parent(g.out);
      const std::string id = subject_id.empty() ? fs::path(pred).stem().string() : subject_id;
      write_metrics(evaluate_labels(read_labels(pred), read_labels(truth), id, symmetric), g.out);
    } else if (render->parsed()) {
      require(g.out, "--out");
      const Plane pl = parse_plane(plane);
      Raster r;
      if (kind == "montage") {
        std::vector<Volume> vols;
        for (const auto& p : inputs)
          vols.push_back(read_volume(p));
        r = render_montage(vols, pl, slice_frac);
      } else if (kind == "heatmap") {
        const Volume var = read_volume(inputs.at(0));
        double vm = vmax;
        if (vm <= 0.0) {
          for (float x : var.data())
            vm = std::max(vm, static_cast<double>(x));
          if (vm == 0.0) // e.g. a one-subject atlas
            vm = 1.0;
        }
        r = render_variance_heatmap(var, pl, slice_frac, vm);
      } else {
        const DenseField u = read_field(inputs.at(0));
        const int s = slice >= 0 ? slice : slice_index(u.geometry, pl, slice_frac);
        r = render_checkerboard_deformation(u, pl, s, cell_px);
      }
      ensure_parent(g.out);
      write_png(r, g.out);
    } else if (cohort->parsed()) {
      require(g.out, "--out");
      CohortOptions o;
      o.subjects = subjects;
      o.seed = g.seed;
      o.phases = parse_phases(phases);
      std::cout << write_phantom_cohort(g.out, o).string() << '\n';
    } else if (atlas_build->parsed() || pipeline->parsed()) {
      require(g.manifest, "--manifest");
      require(g.out, "--out");
      const PipelineOutputs r =
          run_pipeline(read_manifest(g.manifest), config, g.out, pipeline->parsed());
      std::cout << nlohmann::json{{"completed", r.completed}, {"failed", r.failed}}.dump() << '\n';
      if (r.completed == 0)
        throw Error("all_subjects_failed", "no subject completed; see pipeline_report.json");
    }
  } catch (const Error& e) {
    std::cerr << nlohmann::json{{"error", e.code()}, {"message", e.what()}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return 1;
  }
  return 0;
}
