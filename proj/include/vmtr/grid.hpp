#pragma once

// Dense 2-D fields and the discrete operators shared by every other module.
//
// Conventions:
//   * Fields are row-major Eigen arrays indexed (row, col) = (y, x).
//   * Vector fields hold a y-component and an x-component.
//   * Matrix fields hold (m11, m12, m21, m22) with component 1 = x and
//     component 2 = y, i.e. m11 = d/dx of the x-component, m12 = d/dy of the
//     x-component, m21 = d/dx of the y-component, m22 = d/dy of the y-component.
//   * The discrete gradient is forward differences with a zero last difference
//     (Neumann); divergence is its exact negative adjoint.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace vmtr {

template <typename Scalar>
using Field = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Field2D = Field<double>;
using ComplexField2D = Field<std::complex<double>>;
using BoolField = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct VectorField {
  Field<Scalar> y;
  Field<Scalar> x;

  VectorField() = default;
  VectorField(Field<Scalar> y_component, Field<Scalar> x_component)
      : y(std::move(y_component)), x(std::move(x_component)) {
    if (y.rows() != x.rows() || y.cols() != x.cols())
      throw std::invalid_argument("VectorField: component grids differ in shape");
  }

  static VectorField Zero(Eigen::Index ny, Eigen::Index nx) {
    return VectorField(Field<Scalar>::Zero(ny, nx), Field<Scalar>::Zero(ny, nx));
  }

  Eigen::Index rows() const { return y.rows(); }
  Eigen::Index cols() const { return y.cols(); }

  VectorField& operator*=(Scalar s) {
    y *= s;
    x *= s;
    return *this;
  }
  VectorField& operator+=(const VectorField& o) {
    y += o.y;
    x += o.x;
    return *this;
  }
};

using VectorField2D = VectorField<double>;

template <typename Scalar>
struct MatrixField {
  Field<Scalar> m11, m12, m21, m22;

  static MatrixField Zero(Eigen::Index ny, Eigen::Index nx) {
    MatrixField m;
    m.m11 = m.m12 = m.m21 = m.m22 = Field<Scalar>::Zero(ny, nx);
    return m;
  }
  static MatrixField Identity(Eigen::Index ny, Eigen::Index nx) {
    MatrixField m = Zero(ny, nx);
    m.m11.setOnes();
    m.m22.setOnes();
    return m;
  }

  Eigen::Index rows() const { return m11.rows(); }
  Eigen::Index cols() const { return m11.cols(); }
};

using MatrixField2D = MatrixField<double>;

/// phi = Id + displacement, in pixel units. phi(i, j) = (i + v.y(i, j), j + v.x(i, j)).
struct Deformation {
  VectorField2D displacement;

  Deformation() = default;
  explicit Deformation(VectorField2D v) : displacement(std::move(v)) {}

  static Deformation identity(Eigen::Index ny, Eigen::Index nx) {
    return Deformation(VectorField2D::Zero(ny, nx));
  }

  Eigen::Index rows() const { return displacement.rows(); }
  Eigen::Index cols() const { return displacement.cols(); }
};

template <typename Derived, typename Other>
void require_same_shape(const Eigen::ArrayBase<Derived>& a, const Eigen::ArrayBase<Other>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

// ---------------------------------------------------------------------------
// Differential operators

template <typename Scalar>
VectorField<Scalar> gradient(const Field<Scalar>& f) {
  const Eigen::Index ny = f.rows(), nx = f.cols();
  VectorField<Scalar> g = VectorField<Scalar>::Zero(ny, nx);
  if (ny > 1) g.y.topRows(ny - 1) = f.bottomRows(ny - 1) - f.topRows(ny - 1);
  if (nx > 1) g.x.leftCols(nx - 1) = f.rightCols(nx - 1) - f.leftCols(nx - 1);
  return g;
}

template <typename Scalar>
Field<Scalar> divergence(const VectorField<Scalar>& v) {
  const Eigen::Index ny = v.rows(), nx = v.cols();
  Field<Scalar> d = Field<Scalar>::Zero(ny, nx);
  if (ny > 1) {
    d.row(0) += v.y.row(0);
    d.middleRows(1, ny - 2) += v.y.middleRows(1, ny - 2) - v.y.topRows(ny - 2);
    d.row(ny - 1) -= v.y.row(ny - 2);
  }
  if (nx > 1) {
    d.col(0) += v.x.col(0);
    d.middleCols(1, nx - 2) += v.x.middleCols(1, nx - 2) - v.x.leftCols(nx - 2);
    d.col(nx - 1) -= v.x.col(nx - 2);
  }
  return d;
}

template <typename Scalar>
Field<Scalar> laplacian(const Field<Scalar>& f) {
  return divergence(gradient(f));
}

/// Central differences (one-sided at the border); used for image gradients in
/// registration forces and edge detection.
Field2D central_difference_x(const Field2D& f);
Field2D central_difference_y(const Field2D& f);

// ---------------------------------------------------------------------------
// Interpolation and warping

/// Bilinear sample at continuous (y, x); coordinates clamp to the grid.
template <typename Scalar>
Scalar sample_bilinear(const Field<Scalar>& f, double y, double x) {
  const Eigen::Index ny = f.rows(), nx = f.cols();
  y = std::clamp(y, 0.0, static_cast<double>(ny - 1));
  x = std::clamp(x, 0.0, static_cast<double>(nx - 1));
  Eigen::Index i0 = static_cast<Eigen::Index>(std::floor(y));
  Eigen::Index j0 = static_cast<Eigen::Index>(std::floor(x));
  i0 = std::min<Eigen::Index>(i0, std::max<Eigen::Index>(ny - 2, 0));
  j0 = std::min<Eigen::Index>(j0, std::max<Eigen::Index>(nx - 2, 0));
  const Eigen::Index i1 = std::min<Eigen::Index>(i0 + 1, ny - 1);
  const Eigen::Index j1 = std::min<Eigen::Index>(j0 + 1, nx - 1);
  const double wy = y - static_cast<double>(i0);
  const double wx = x - static_cast<double>(j0);
  return (1.0 - wy) * ((1.0 - wx) * f(i0, j0) + wx * f(i0, j1)) +
         wy * ((1.0 - wx) * f(i1, j0) + wx * f(i1, j1));
}

/// (f o phi)(p) = f(phi(p)), bilinear with boundary clamping.
template <typename Scalar>
Field<Scalar> warp(const Field<Scalar>& f, const Deformation& d) {
  require_same_shape(f, d.displacement.y, "warp");
  Field<Scalar> out(f.rows(), f.cols());
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (Eigen::Index j = 0; j < f.cols(); ++j)
      out(i, j) = sample_bilinear(f, static_cast<double>(i) + d.displacement.y(i, j),
                                  static_cast<double>(j) + d.displacement.x(i, j));
  return out;
}

VectorField2D warp(const VectorField2D& v, const Deformation& d);

/// Transpose of warp(., d) as a linear map in the sampled field.
Field2D warp_adjoint(const Field2D& g, const Deformation& d);

// ---------------------------------------------------------------------------
// Jacobians

MatrixField2D jacobian(const Deformation& d);
Field2D determinant(const MatrixField2D& m);

// ---------------------------------------------------------------------------
// Fourier transform (unitary, DC at (0, 0))

ComplexField2D fft2(const ComplexField2D& f);
ComplexField2D fft2(const Field2D& f);
ComplexField2D ifft2(const ComplexField2D& f);

// ---------------------------------------------------------------------------
// Screened Poisson solve under the Neumann stencil: (I - c * laplacian) u = rhs.
// Diagonalised exactly by the orthonormal DCT-II.

Field2D solve_screened_poisson(const Field2D& rhs, double c);

/// Same operator with the boundary ring of pixels held at zero: the interior system uses
/// the 5-point stencil with zero neighbours outside and is diagonalised by the DST-I.
/// Boundary values of rhs are ignored and the result vanishes on the boundary ring.
Field2D solve_screened_poisson_dirichlet(const Field2D& rhs, double c);

/// Half-sample symmetric reflection of an index into [0, n): -1 -> 0, n -> n - 1.
inline Eigen::Index reflect_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// ---------------------------------------------------------------------------
// Gaussian smoothing (separable, reflective boundary, taps truncated at ceil(3 sigma)).

Eigen::VectorXd gaussian_kernel(double sigma);
Field2D gaussian_blur(const Field2D& f, double sigma);

// ---------------------------------------------------------------------------
// Pyramid transfer

/// 2x2 averaging; odd sizes round up with edge replication.
Field2D restrict_field(const Field2D& f);
/// Bilinear (cell-centred) upsampling to ny x nx; defaults to twice the size.
Field2D prolong_field(const Field2D& f, Eigen::Index ny = -1, Eigen::Index nx = -1);

VectorField2D restrict_field(const VectorField2D& v);
VectorField2D prolong_field(const VectorField2D& v, Eigen::Index ny = -1, Eigen::Index nx = -1);
MatrixField2D prolong_field(const MatrixField2D& m, Eigen::Index ny = -1, Eigen::Index nx = -1);

/// Displacements are in pixels, so they halve on restriction and double on prolongation.
Deformation restrict_deformation(const Deformation& d);
Deformation prolong_deformation(const Deformation& d, Eigen::Index ny = -1, Eigen::Index nx = -1);

// ---------------------------------------------------------------------------
// Small helpers

inline double inner(const Field2D& a, const Field2D& b) { return (a * b).sum(); }
inline double inner(const VectorField2D& a, const VectorField2D& b) {
  return (a.y * b.y).sum() + (a.x * b.x).sum();
}
inline double squared_norm(const Field2D& a) { return a.square().sum(); }
inline double squared_norm(const MatrixField2D& m) {
  return m.m11.square().sum() + m.m12.square().sum() + m.m21.square().sum() + m.m22.square().sum();
}

/// Pointwise Euclidean magnitude.
inline Field2D magnitude(const VectorField2D& v) { return (v.y.square() + v.x.square()).sqrt(); }

}  // namespace vmtr
