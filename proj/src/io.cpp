#include "vmtr/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

namespace vmtr {

static_assert(std::endian::native == std::endian::little, "raw field I/O assumes a little-endian host");

void write_raw(const std::filesystem::path& path, const Field2D& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + path.string());
}

Field2D read_raw(const std::filesystem::path& path, Eigen::Index ny, Eigen::Index nx) {
  std::error_code ec;
  const auto bytes = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  if (bytes != static_cast<std::uintmax_t>(ny * nx) * sizeof(double))
    throw IoError(path.string() + ": expected " + std::to_string(ny * nx * 8) + " bytes, found " +
                  std::to_string(bytes));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Field2D f(ny, nx);
  in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(double)));
  if (!in) throw IoError("short read: " + path.string());
  return f;
}

void write_raw(const std::filesystem::path& path, const VectorField2D& v) {
  require_same_shape(v.y, v.x, "write_raw");
  Field2D stacked(2 * v.y.rows(), v.y.cols());
  stacked.topRows(v.y.rows()) = v.y;
  stacked.bottomRows(v.x.rows()) = v.x;
  write_raw(path, stacked);
}

VectorField2D read_raw_vector(const std::filesystem::path& path, Eigen::Index ny, Eigen::Index nx) {
  const Field2D stacked = read_raw(path, 2 * ny, nx);
  return VectorField2D(Field2D(stacked.topRows(ny)), Field2D(stacked.bottomRows(ny)));
}

PgmWindow write_pgm(const std::filesystem::path& path, const Field2D& f) {
  const PgmWindow w{f.minCoeff(), f.maxCoeff()};
  const double span = w.hi - w.lo;
  std::string body(static_cast<std::size_t>(f.size()), '\0');
  for (Eigen::Index k = 0; k < f.size(); ++k) {
    const double v = span > 0.0 ? (f.data()[k] - w.lo) / span * 255.0 : 0.0;
    body[static_cast<std::size_t>(k)] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << f.cols() << ' ' << f.rows() << "\n255\n";
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed: " + path.string());
  return w;
}

PgmImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  int maxval = 0;
  PgmImage img;
  in >> magic >> img.cols >> img.rows >> maxval;
  if (magic != "P5" || maxval != 255 || img.rows <= 0 || img.cols <= 0)
    throw FormatError(path.string() + ": not an 8-bit binary PGM");
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.rows * img.cols));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw FormatError(path.string() + ": truncated pixel data");
  return img;
}

}  // namespace vmtr
