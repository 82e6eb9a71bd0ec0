#pragma once

// Acquisition physics: the undersampled Fourier operator F = S A and the
// super-resolution system operator C = D B (window averaging after Gaussian blur).

#include "vmtr/grid.hpp"

#include <cstdint>

namespace vmtr {


struct SamplingMask {
  BoolField keep;
  double acceleration = 1.0;

  Eigen::Index rows() const { return keep.rows(); }
  Eigen::Index cols() const { return keep.cols(); }
  Eigen::Index kept_rows() const;
  Field2D as_field() const { return keep.cast<double>(); }

  static SamplingMask full(Eigen::Index ny, Eigen::Index nx);
};

/// Cartesian row undersampling: a fully sampled band of ceil(center_fraction * ny)
/// low-frequency rows plus seeded random rows until round(ny / acceleration) rows are kept.
SamplingMask make_mask(Eigen::Index ny, Eigen::Index nx, double acceleration, double center_fraction,
                       std::uint64_t seed);

/// Signed frequency index of DFT bin i on an n-point grid.
inline Eigen::Index signed_frequency(Eigen::Index i, Eigen::Index n) { return i < (n + 1) / 2 ? i : i - n; }

ComplexField2D apply_F(const Field2D& u, const SamplingMask& mask);
/// Real part of the adjoint; exact adjoint of apply_F restricted to real images.
Field2D apply_F_adjoint(const ComplexField2D& x, const SamplingMask& mask);
/// apply_F_adjoint(apply_F(u)).
Field2D apply_F_normal(const Field2D& u, const SamplingMask& mask);

struct SystemOperatorSpec {
  double blur_sigma = 1.0;
  int downsample_factor = 2;
  Eigen::Index hr_ny = 0;
  Eigen::Index hr_nx = 0;

  Eigen::Index lr_ny() const { return hr_ny / downsample_factor; }
  Eigen::Index lr_nx() const { return hr_nx / downsample_factor; }
};

/// C = D B. Separable, so it is stored as a pair of 1-D factors and applied as
/// C u = Cy * U * Cx^T.
class SystemOperator {
 public:
  SystemOperator() = default;
  explicit SystemOperator(const SystemOperatorSpec& spec);

  const SystemOperatorSpec& spec() const { return spec_; }

  Field2D apply(const Field2D& u) const;
  Field2D adjoint(const Field2D& f) const;
  /// C^T C u.
  Field2D normal(const Field2D& u) const;
  /// (I + c C^T C)^{-1} r, exact through the eigen-decompositions of the 1-D normal factors.
  Field2D solve_shifted(const Field2D& r, double c) const;

 private:
  SystemOperatorSpec spec_;
  Eigen::MatrixXd cy_, cx_;
  Eigen::MatrixXd ny_, nx_;
  Eigen::MatrixXd qy_, qx_;  // orthonormal eigenvectors of ny_, nx_
  Eigen::VectorXd ly_, lx_;  // and their eigenvalues
};

}  // namespace vmtr
