#include "katlas/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace katlas {

Plane parse_plane(const std::string& s) {
  if (s == "axial")
    return Plane::axial;
  if (s == "coronal")
    return Plane::coronal;
  if (s == "sagittal")
    return Plane::sagittal;
  throw Error("invalid_plane", "plane must be axial, coronal or sagittal, got '" + s + "'");
}

namespace {

// (column axis, row axis, slice axis)
std::array<int, 3> plane_axes(Plane p) {
  switch (p) {
  case Plane::axial:
    return {0, 1, 2};
  case Plane::coronal:
    return {0, 2, 1};
  case Plane::sagittal:
    return {1, 2, 0};
  }
  return {0, 1, 2};
}

template <typename Fn>
Raster render_slice(const Geometry& g, Plane plane, int slice, int channels, Fn color) {
  const auto ax = plane_axes(plane);
  Raster r;
  r.width = g.dims[ax[0]];
  r.height = g.dims[ax[1]];
  r.channels = channels;
  r.pixels.assign(static_cast<std::size_t>(r.width) * r.height * channels, 0);
  for (int row = 0; row < r.height; ++row)
    for (int col = 0; col < r.width; ++col) {
      std::array<int, 3> ijk{};
      ijk[ax[0]] = col;
      ijk[ax[1]] = r.height - 1 - row;
      ijk[ax[2]] = slice;
      color(ijk, r.at(col, row));
    }
  return r;
}

std::uint8_t window_pixel(double v, const HuWindow& w) {
  const double t = (v - w.low) / (w.high - w.low);
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
}

std::array<std::uint8_t, 3> hsl_to_rgb(double h, double s, double l) {
  const double c = (1.0 - std::abs(2.0 * l - 1.0)) * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = l - c / 2.0;
  auto byte = [&](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * (v + m))); };
  return {byte(r), byte(g), byte(b)};
}

long floor_div(double v, int cell) { return static_cast<long>(std::floor(v / cell)); }

} // namespace

int slice_index(const Geometry& g, Plane plane, double slice_frac) {
  if (!(slice_frac >= 0.0 && slice_frac <= 1.0))
    throw Error("invalid_argument", "slice fraction must be in [0, 1]");
  const int n = g.dims[plane_axes(plane)[2]];
  return static_cast<int>(std::lround(slice_frac * (n - 1)));
}

Raster render_montage(const std::vector<Volume>& volumes, Plane plane, double slice_frac,
                      HuWindow window) {
  if (volumes.empty())
    throw Error("invalid_argument", "montage needs at least one volume");
  if (!(window.high > window.low))
    throw Error("invalid_argument", "HU window must have high > low");
  const Geometry& g = volumes.front().geometry();
  for (const auto& v : volumes)
    if (!v.geometry().matches(g))
      throw Error("geometry_mismatch", "montage volumes must share geometry");
  const int slice = slice_index(g, plane, slice_frac);
  Raster out;
  for (std::size_t t = 0; t < volumes.size(); ++t) {
    const Volume& v = volumes[t];
    const Raster tile = render_slice(g, plane, slice, 1, [&](const auto& ijk, std::uint8_t* px) {
      px[0] = window_pixel(v(ijk[0], ijk[1], ijk[2]), window);
    });
    if (t == 0) {
      out = tile;
      out.width = tile.width * static_cast<int>(volumes.size());
      out.pixels.assign(static_cast<std::size_t>(out.width) * out.height, 0);
    }
    for (int row = 0; row < tile.height; ++row)
      std::copy_n(tile.at(0, row), tile.width, out.at(static_cast<int>(t) * tile.width, row));
  }
  return out;
}

std::array<std::uint8_t, 3> heat_color(double value, double vmax) {
  const double t = std::clamp(value / vmax, 0.0, 1.0);
  const double green = t <= 0.5 ? 255.0 - 254.0 * t : 256.0 * (1.0 - t);
  return {255, static_cast<std::uint8_t>(std::lround(green)), 0};
}

Raster render_variance_heatmap(const Volume& variance, Plane plane, double slice_frac,
                               double vmax) {
  if (!(vmax > 0.0))
    throw Error("invalid_argument", "heatmap vmax must be positive");
  const Geometry& g = variance.geometry();
  return render_slice(g, plane, slice_index(g, plane, slice_frac), 3,
                      [&](const auto& ijk, std::uint8_t* px) {
                        const auto c = heat_color(variance(ijk[0], ijk[1], ijk[2]), vmax);
                        std::copy(c.begin(), c.end(), px);
                      });
}

std::array<std::uint8_t, 3> checker_color(long col, long row) {
  const double golden = 0.6180339887498949;
  double hue = std::fmod(static_cast<double>(col) * golden, 1.0);
  if (hue < 0)
    hue += 1.0;
  const long band = ((row % 5) + 5) % 5;
  const double lightness = 0.3 + 0.1 * static_cast<double>(band);
  const double saturation = ((col + row) % 2 == 0) ? 0.9 : 0.5;
  return hsl_to_rgb(hue, saturation, lightness);
}

Raster render_checkerboard_deformation(const DenseField& field, Plane plane, int slice,
                                       int cell_px) {
  if (cell_px < 1)
    throw Error("invalid_argument", "checkerboard cell size must be >= 1 pixel");
  const auto ax = plane_axes(plane);
  if (slice < 0 || slice >= field.geometry.dims[ax[2]])
    throw Error("invalid_argument", "slice index outside the field");
  return render_slice(field.geometry, plane, slice, 3, [&](const auto& ijk, std::uint8_t* px) {
    const Eigen::Vector3f& u = field.at(ijk[0], ijk[1], ijk[2]);
    const double a = ijk[ax[0]] + static_cast<double>(u[ax[0]]);
    const double b = ijk[ax[1]] + static_cast<double>(u[ax[1]]);
    const auto c = checker_color(floor_div(a, cell_px), floor_div(b, cell_px));
    std::copy(c.begin(), c.end(), px);
  });
}

std::vector<std::uint8_t> encode_png(const Raster& r) {
  if (r.width < 1 || r.height < 1 || (r.channels != 1 && r.channels != 3) ||
      r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw Error("invalid_argument", "malformed raster");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_error", "cannot initialise PNG encoder");
  }
  std::vector<std::uint8_t> bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png_error", "PNG encoding failed");
  }
  png_set_write_fn(
      png, &bytes,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        out->insert(out->end(), data, data + n);
      },
      nullptr);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, r.width, r.height, 8,
               r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y)
    png_write_row(png, const_cast<png_bytep>(r.at(0, y)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return bytes;
}

void write_png(const Raster& r, const std::filesystem::path& path) {
  const auto bytes = encode_png(r);
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("io_error", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace katlas
