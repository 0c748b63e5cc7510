#pragma once

#include "katlas/image.hpp"

#include <filesystem>

namespace katlas {

/// NIfTI-1 single-file (.nii / .nii.gz) I/O. Little-endian, 3D only.
/// Supported on-disk datatypes: uint8, int16, int32, float32, float64.
/// Geometry comes from the sform, falling back to the qform, then pixdim with
/// identity direction.
Volume read_volume(const std::filesystem::path& path);
/// As read_volume, but requires integer values in [0, 13].
LabelMap read_labels(const std::filesystem::path& path);

/// Volumes are written as float32, label maps as int16. A ".gz" suffix
/// selects gzip compression.
void write_volume(const Volume& v, const std::filesystem::path& path);
void write_labels(const LabelMap& l, const std::filesystem::path& path);

} // namespace katlas
