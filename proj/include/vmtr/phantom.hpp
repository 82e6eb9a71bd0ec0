#pragma once

// Synthetic ground truth: ellipse phantoms, an analytic breathing-like motion
// family, simulated undersampled noisy acquisitions, and the dataset file format.

#include "vmtr/grid.hpp"
#include "vmtr/operators.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

namespace vmtr {

/// Ellipse in unit-square coordinates (y down, x right); angle in radians.
struct Ellipse {
  double cy = 0.5, cx = 0.5;
  double ry = 0.1, rx = 0.1;
  double angle = 0.0;
  double intensity = 1.0;
};

struct PhantomSpec {
  std::vector<Ellipse> ellipses;
  double background = 0.0;
  Eigen::Index ny = 128, nx = 128;
  double smoothing_px = 0.5;

  void validate() const;
  /// Torso-like default used by the experiments.
  static PhantomSpec torso(Eigen::Index ny = 128, Eigen::Index nx = 128);
};

/// Rasterises the ellipses at pixel centres (later entries overwrite), then Gaussian-smooths.
Field2D make_phantom(const PhantomSpec& spec);

/// Vertical displacement v_y = A sin(2 pi t / P + phase) b(Y, X) with
/// b = sin(pi X) sin(pi Y) Y^s / max, Y = i / (ny - 1), X = j / (nx - 1).
/// b vanishes on the boundary and peaks in the lower half of the image.
struct MotionSpec {
  double amplitude = 4.0;  // pixels of the grid the motion lives on
  double period = 8.0;     // frames
  double phase = 0.0;
  double smoothness = 1.0;  // exponent s
  Eigen::Index ny = 64, nx = 64;

  /// Rejects amplitudes for which min det grad(phi) <= 0.2 at any phase.
  void validate() const;
  double envelope(int t) const;
  double profile(double Y, double X) const;
  double profile_dY(double Y, double X) const;
  double profile_peak() const;
};

Deformation make_motion(const MotionSpec& spec, int t);
/// 1 + d v_y / d i evaluated analytically at the pixel centres.
Field2D motion_determinant(const MotionSpec& spec, int t);
/// Per-column Newton solve of i' + v_y(i', j) = i.
Deformation motion_inverse(const MotionSpec& spec, int t);

struct GroundTruth {
  Field2D u;                     // high resolution
  std::vector<Deformation> phi;  // frame-grid maps, one per frame
};

struct Dataset {
  std::vector<ComplexField2D> kspace;
  std::vector<SamplingMask> masks;
  Eigen::Index hr_ny = 0, hr_nx = 0, lr_ny = 0, lr_nx = 0;
  int factor = 1;
  double sigma_n = 0.0;
  std::optional<GroundTruth> truth;

  int frames() const { return static_cast<int>(kspace.size()); }
  void validate() const;
  Field2D zero_filled(int t) const;  // 0-based frame index
};

/// x_t = F_t((C u) o phi_t^{-1}) + noise with per-component std sigma_n on kept samples.
/// When `inverses` is empty the inverses are computed numerically.
Dataset simulate_acquisition(const Field2D& u_gt, const std::vector<Deformation>& motions,
                             const std::vector<Deformation>& inverses, const SystemOperator& op,
                             const std::vector<SamplingMask>& masks, double sigma_n, std::uint64_t seed);

/// Per-frame masks with seeds derived from `seed`.
std::vector<SamplingMask> make_masks(int frames, Eigen::Index ny, Eigen::Index nx, double acceleration,
                                     double center_fraction, std::uint64_t seed);

/// Everything needed to regenerate the moving torso experiment from one seed.
struct ExperimentSpec {
  int frames = 8;
  double acceleration = 4.0;
  double center_fraction = 0.08;
  double sigma_n = 0.01;
  double blur_sigma = 1.0;
  int factor = 2;
  Eigen::Index hr_size = 128;
  double amplitude = 4.0;  // frame-grid pixels
  double period = 8.0;
  std::uint64_t seed = 42;  // masks use seed, noise uses seed + 1

  void validate() const;
  MotionSpec motion() const;
  SystemOperatorSpec system() const;
};

/// Torso phantom, frames t = 1..T of the motion family, per-frame masks and noise.
Dataset simulate_experiment(const ExperimentSpec& spec);

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace vmtr
