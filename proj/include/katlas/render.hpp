#pragma once

#include "katlas/field.hpp"
#include "katlas/image.hpp"

#include <cstdint>
#include <filesystem>

namespace katlas {

enum class Plane { axial, coronal, sagittal };
Plane parse_plane(const std::string& s);

/// 8-bit raster, row-major, `channels` = 1 (gray) or 3 (RGB).
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t* at(int x, int y) {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * channels];
  }
  const std::uint8_t* at(int x, int y) const {
    return &pixels[(static_cast<std::size_t>(y) * width + x) * channels];
  }
};

/// Slices are shown with the in-plane axes (x,y), (x,z) or (y,z) as
/// (column, row) and the second axis pointing up. Slice index is
/// round(slice_frac * (n - 1)).
int slice_index(const Geometry& g, Plane plane, double slice_frac);

struct HuWindow {
  double low = -160.0;
  double high = 240.0;
};

/// Grayscale tiles placed left to right, one per volume.
Raster render_montage(const std::vector<Volume>& volumes, Plane plane, double slice_frac,
                      HuWindow window = {});

/// Ramp 0 -> vmax: yellow (255,255,0), orange (255,128,0), red (255,0,0).
std::array<std::uint8_t, 3> heat_color(double value, double vmax);
Raster render_variance_heatmap(const Volume& variance, Plane plane, double slice_frac,
                               double vmax);

/// Cell colour: hue by column, lightness by row, saturation by parity.
std::array<std::uint8_t, 3> checker_color(long col, long row);
/// Each pixel samples a checkerboard of `cell_px` cells at its displaced
/// in-plane position.
Raster render_checkerboard_deformation(const DenseField& field, Plane plane, int slice,
                                       int cell_px);

/// Deterministic non-interlaced PNG, no time or text chunks.
std::vector<std::uint8_t> encode_png(const Raster& r);
void write_png(const Raster& r, const std::filesystem::path& path);

} // namespace katlas
