#pragma once

#include "vmtr/grid.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace vmtr::testing {

inline Field2D random_field(Eigen::Index ny, Eigen::Index nx, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Field2D f(ny, nx);
  for (Eigen::Index k = 0; k < f.size(); ++k) f.data()[k] = dist(rng);
  return f;
}

inline VectorField2D random_vector_field(Eigen::Index ny, Eigen::Index nx, std::mt19937_64& rng) {
  return VectorField2D(random_field(ny, nx, rng), random_field(ny, nx, rng));
}

inline ComplexField2D random_complex_field(Eigen::Index ny, Eigen::Index nx, std::mt19937_64& rng) {
  const Field2D re = random_field(ny, nx, rng), im = random_field(ny, nx, rng);
  ComplexField2D c(ny, nx);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = {re.data()[k], im.data()[k]};
  return c;
}

/// Smooth displacement vanishing on the border, amplitude in pixels.
inline Deformation smooth_deformation(Eigen::Index ny, Eigen::Index nx, double amplitude, double phase = 0.0) {
  VectorField2D v = VectorField2D::Zero(ny, nx);
  const double pi = 3.14159265358979323846;
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j) {
      const double Y = static_cast<double>(i) / static_cast<double>(ny - 1);
      const double X = static_cast<double>(j) / static_cast<double>(nx - 1);
      const double b = std::sin(pi * Y) * std::sin(pi * X);
      v.y(i, j) = amplitude * b * std::cos(pi * X + phase);
      v.x(i, j) = amplitude * b * std::sin(2.0 * pi * Y + phase);
    }
  return Deformation(v);
}

inline double relative_gap(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / ("vmtr_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vmtr::testing
