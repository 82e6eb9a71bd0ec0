#include "vmtr/grid.hpp"

#include <unsupported/Eigen/FFT>

#include <Eigen/Dense>

#include <numbers>
#include <vector>

namespace vmtr {

Field2D central_difference_x(const Field2D& f) {
  const Eigen::Index nx = f.cols();
  Field2D d = Field2D::Zero(f.rows(), nx);
  if (nx < 2) return d;
  if (nx > 2)
    d.middleCols(1, nx - 2) = 0.5 * (f.rightCols(nx - 2) - f.leftCols(nx - 2));
  d.col(0) = f.col(1) - f.col(0);
  d.col(nx - 1) = f.col(nx - 1) - f.col(nx - 2);
  return d;
}

Field2D central_difference_y(const Field2D& f) {
  const Eigen::Index ny = f.rows();
  Field2D d = Field2D::Zero(ny, f.cols());
  if (ny < 2) return d;
  if (ny > 2)
    d.middleRows(1, ny - 2) = 0.5 * (f.bottomRows(ny - 2) - f.topRows(ny - 2));
  d.row(0) = f.row(1) - f.row(0);
  d.row(ny - 1) = f.row(ny - 1) - f.row(ny - 2);
  return d;
}

VectorField2D warp(const VectorField2D& v, const Deformation& d) {
  return VectorField2D(warp(v.y, d), warp(v.x, d));
}

Field2D warp_adjoint(const Field2D& g, const Deformation& d) {
  require_same_shape(g, d.displacement.y, "warp_adjoint");
  const Eigen::Index ny = g.rows(), nx = g.cols();
  Field2D out = Field2D::Zero(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      double y = std::clamp(static_cast<double>(i) + d.displacement.y(i, j), 0.0,
                            static_cast<double>(ny - 1));
      double x = std::clamp(static_cast<double>(j) + d.displacement.x(i, j), 0.0,
                            static_cast<double>(nx - 1));
      Eigen::Index i0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(y)),
                                               std::max<Eigen::Index>(ny - 2, 0));
      Eigen::Index j0 = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(x)),
                                               std::max<Eigen::Index>(nx - 2, 0));
      const Eigen::Index i1 = std::min<Eigen::Index>(i0 + 1, ny - 1);
      const Eigen::Index j1 = std::min<Eigen::Index>(j0 + 1, nx - 1);
      const double wy = y - static_cast<double>(i0);
      const double wx = x - static_cast<double>(j0);
      const double v = g(i, j);
      out(i0, j0) += (1.0 - wy) * (1.0 - wx) * v;
      out(i0, j1) += (1.0 - wy) * wx * v;
      out(i1, j0) += wy * (1.0 - wx) * v;
      out(i1, j1) += wy * wx * v;
    }
  }
  return out;
}

MatrixField2D jacobian(const Deformation& d) {
  const VectorField2D gx = gradient(d.displacement.x);
  const VectorField2D gy = gradient(d.displacement.y);
  MatrixField2D m;
  m.m11 = 1.0 + gx.x;
  m.m12 = gx.y;
  m.m21 = gy.x;
  m.m22 = 1.0 + gy.y;
  return m;
}

Field2D determinant(const MatrixField2D& m) { return m.m11 * m.m22 - m.m12 * m.m21; }

namespace {

// Row-then-column 1-D transforms. Eigen's FFT keeps per-length plans inside the
// object, so each thread gets its own.
ComplexField2D transform(const ComplexField2D& in, bool inverse) {
  thread_local Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  const Eigen::Index ny = in.rows(), nx = in.cols();
  ComplexField2D out(ny, nx);
  std::vector<std::complex<double>> src, dst;

  src.resize(static_cast<std::size_t>(nx));
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) src[static_cast<std::size_t>(j)] = in(i, j);
    if (inverse)
      fft.inv(dst, src);
    else
      fft.fwd(dst, src);
    for (Eigen::Index j = 0; j < nx; ++j) out(i, j) = dst[static_cast<std::size_t>(j)];
  }
  src.resize(static_cast<std::size_t>(ny));
  for (Eigen::Index j = 0; j < nx; ++j) {
    for (Eigen::Index i = 0; i < ny; ++i) src[static_cast<std::size_t>(i)] = out(i, j);
    if (inverse)
      fft.inv(dst, src);
    else
      fft.fwd(dst, src);
    for (Eigen::Index i = 0; i < ny; ++i) out(i, j) = dst[static_cast<std::size_t>(i)];
  }
  out *= 1.0 / std::sqrt(static_cast<double>(ny * nx));
  return out;
}

}  // namespace

ComplexField2D fft2(const ComplexField2D& f) { return transform(f, false); }
ComplexField2D fft2(const Field2D& f) { return transform(f.cast<std::complex<double>>(), false); }
ComplexField2D ifft2(const ComplexField2D& f) { return transform(f, true); }

namespace {

// Orthonormal DCT-II matrix: row k is the k-th Neumann Laplacian eigenvector.
Eigen::MatrixXd dct_matrix(Eigen::Index n) {
  Eigen::MatrixXd q(n, n);
  const double nn = static_cast<double>(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
    for (Eigen::Index m = 0; m < n; ++m)
      q(k, m) = s * std::cos(std::numbers::pi * (static_cast<double>(m) + 0.5) *
                             static_cast<double>(k) / nn);
  }
  return q;
}

Eigen::ArrayXd neumann_eigenvalues(Eigen::Index n) {
  Eigen::ArrayXd lambda(n);
  for (Eigen::Index k = 0; k < n; ++k)
    lambda(k) = 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  return lambda;
}

// Orthonormal (and symmetric) DST-I on m points.
Eigen::MatrixXd dst_matrix(Eigen::Index m) {
  Eigen::MatrixXd q(m, m);
  const double mm = static_cast<double>(m + 1);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index j = 0; j < m; ++j)
      q(k, j) = std::sqrt(2.0 / mm) *
                std::sin(std::numbers::pi * static_cast<double>(j + 1) * static_cast<double>(k + 1) / mm);
  return q;
}

Eigen::ArrayXd dirichlet_eigenvalues(Eigen::Index m) {
  Eigen::ArrayXd lambda(m);
  for (Eigen::Index k = 0; k < m; ++k)
    lambda(k) = 2.0 - 2.0 * std::cos(std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(m + 1));
  return lambda;
}

}  // namespace

Field2D solve_screened_poisson_dirichlet(const Field2D& rhs, double c) {
  if (c < 0.0) throw std::invalid_argument("solve_screened_poisson_dirichlet: negative coefficient");
  const Eigen::Index ny = rhs.rows(), nx = rhs.cols();
  Field2D out = Field2D::Zero(ny, nx);
  if (ny < 3 || nx < 3) return out;
  const Eigen::Index my = ny - 2, mx = nx - 2;
  const Eigen::MatrixXd qy = dst_matrix(my);
  const Eigen::MatrixXd qx = dst_matrix(mx);
  const Eigen::ArrayXd ly = dirichlet_eigenvalues(my);
  const Eigen::ArrayXd lx = dirichlet_eigenvalues(mx);

  Eigen::MatrixXd coeffs = qy * rhs.block(1, 1, my, mx).matrix() * qx;
  for (Eigen::Index k = 0; k < my; ++k)
    for (Eigen::Index l = 0; l < mx; ++l) coeffs(k, l) /= 1.0 + c * (ly(k) + lx(l));
  out.block(1, 1, my, mx) = (qy * coeffs * qx).array();
  return out;
}

Field2D solve_screened_poisson(const Field2D& rhs, double c) {
  if (c < 0.0) throw std::invalid_argument("solve_screened_poisson: negative coefficient");
  const Eigen::Index ny = rhs.rows(), nx = rhs.cols();
  const Eigen::MatrixXd qy = dct_matrix(ny);
  const Eigen::MatrixXd qx = dct_matrix(nx);
  const Eigen::ArrayXd ly = neumann_eigenvalues(ny);
  const Eigen::ArrayXd lx = neumann_eigenvalues(nx);

  Eigen::MatrixXd coeffs = qy * rhs.matrix() * qx.transpose();
  for (Eigen::Index k = 0; k < ny; ++k)
    for (Eigen::Index l = 0; l < nx; ++l) coeffs(k, l) /= 1.0 + c * (ly(k) + lx(l));
  Field2D out = (qy.transpose() * coeffs * qx).array();
  return out;
}

Eigen::VectorXd gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  Eigen::VectorXd k(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t)
    k(t + radius) = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
  k /= k.sum();
  return k;
}

Field2D gaussian_blur(const Field2D& f, double sigma) {
  const Eigen::VectorXd k = gaussian_kernel(sigma);
  const Eigen::Index r = (k.size() - 1) / 2;
  const Eigen::Index ny = f.rows(), nx = f.cols();
  Field2D tmp = Field2D::Zero(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      for (Eigen::Index t = -r; t <= r; ++t) tmp(i, j) += k(t + r) * f(i, reflect_index(j + t, nx));
  Field2D out = Field2D::Zero(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index t = -r; t <= r; ++t) out.row(i) += k(t + r) * tmp.row(reflect_index(i + t, ny));
  return out;
}

Field2D restrict_field(const Field2D& f) {
  const Eigen::Index ny = f.rows(), nx = f.cols();
  const Eigen::Index cy = (ny + 1) / 2, cx = (nx + 1) / 2;
  Field2D out(cy, cx);
  for (Eigen::Index i = 0; i < cy; ++i) {
    const Eigen::Index i0 = 2 * i, i1 = std::min(2 * i + 1, ny - 1);
    for (Eigen::Index j = 0; j < cx; ++j) {
      const Eigen::Index j0 = 2 * j, j1 = std::min(2 * j + 1, nx - 1);
      out(i, j) = 0.25 * (f(i0, j0) + f(i0, j1) + f(i1, j0) + f(i1, j1));
    }
  }
  return out;
}

Field2D prolong_field(const Field2D& f, Eigen::Index ny, Eigen::Index nx) {
  if (ny < 0) ny = 2 * f.rows();
  if (nx < 0) nx = 2 * f.cols();
  Field2D out(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i) {
    const double y = (static_cast<double>(i) + 0.5) / 2.0 - 0.5;
    for (Eigen::Index j = 0; j < nx; ++j) {
      const double x = (static_cast<double>(j) + 0.5) / 2.0 - 0.5;
      out(i, j) = sample_bilinear(f, y, x);
    }
  }
  return out;
}

VectorField2D restrict_field(const VectorField2D& v) {
  return VectorField2D(restrict_field(v.y), restrict_field(v.x));
}

VectorField2D prolong_field(const VectorField2D& v, Eigen::Index ny, Eigen::Index nx) {
  return VectorField2D(prolong_field(v.y, ny, nx), prolong_field(v.x, ny, nx));
}

MatrixField2D prolong_field(const MatrixField2D& m, Eigen::Index ny, Eigen::Index nx) {
  MatrixField2D out;
  out.m11 = prolong_field(m.m11, ny, nx);
  out.m12 = prolong_field(m.m12, ny, nx);
  out.m21 = prolong_field(m.m21, ny, nx);
  out.m22 = prolong_field(m.m22, ny, nx);
  return out;
}

Deformation restrict_deformation(const Deformation& d) {
  VectorField2D v = restrict_field(d.displacement);
  v *= 0.5;
  return Deformation(std::move(v));
}

Deformation prolong_deformation(const Deformation& d, Eigen::Index ny, Eigen::Index nx) {
  VectorField2D v = prolong_field(d.displacement, ny, nx);
  v *= 2.0;
  return Deformation(std::move(v));
}

}  // namespace vmtr
