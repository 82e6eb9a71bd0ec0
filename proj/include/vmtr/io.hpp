#pragma once

// Raw little-endian f64 fields and 8-bit PGM previews.

#include "vmtr/grid.hpp"
#include "vmtr/phantom.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vmtr {

/// Row-major doubles, no header. Dimensions travel in the manifest.
void write_raw(const std::filesystem::path& path, const Field2D& f);
/// Throws IoError if the file is missing or its size is not ny * nx * 8 bytes.
Field2D read_raw(const std::filesystem::path& path, Eigen::Index ny, Eigen::Index nx);

/// y plane then x plane.
void write_raw(const std::filesystem::path& path, const VectorField2D& v);
VectorField2D read_raw_vector(const std::filesystem::path& path, Eigen::Index ny, Eigen::Index nx);

struct PgmWindow {
  double lo = 0.0;
  double hi = 0.0;
};

/// Binary P5, values min-max windowed to 0..255. A constant field maps to 0.
PgmWindow write_pgm(const std::filesystem::path& path, const Field2D& f);

struct PgmImage {
  Eigen::Index rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

PgmImage read_pgm(const std::filesystem::path& path);

}  // namespace vmtr
