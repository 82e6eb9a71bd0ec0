#include "vmtr/operators.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace vmtr {

Eigen::Index SamplingMask::kept_rows() const {
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < keep.rows(); ++i) n += keep.row(i).any() ? 1 : 0;
  return n;
}

SamplingMask SamplingMask::full(Eigen::Index ny, Eigen::Index nx) {
  SamplingMask m;
  m.keep = BoolField::Constant(ny, nx, true);
  m.acceleration = 1.0;
  return m;
}

SamplingMask make_mask(Eigen::Index ny, Eigen::Index nx, double acceleration, double center_fraction,
                       std::uint64_t seed) {
  if (!(acceleration >= 1.0)) throw std::invalid_argument("make_mask: acceleration must be >= 1");
  if (!(center_fraction >= 0.0 && center_fraction < 1.0))
    throw std::invalid_argument("make_mask: center_fraction must lie in [0, 1)");
  if (ny <= 0 || nx <= 0) throw std::invalid_argument("make_mask: empty grid");

  SamplingMask mask;
  mask.acceleration = acceleration;
  mask.keep = BoolField::Constant(ny, nx, false);

  const auto target = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::llround(static_cast<double>(ny) / acceleration)), 1, ny);
  const auto center = std::clamp<Eigen::Index>(
      static_cast<Eigen::Index>(std::ceil(center_fraction * static_cast<double>(ny) - 1e-12)), 1, ny);

  // Rows ordered by |frequency|, ties broken towards the positive frequency.
  std::vector<Eigen::Index> by_frequency(static_cast<std::size_t>(ny));
  std::iota(by_frequency.begin(), by_frequency.end(), Eigen::Index{0});
  std::stable_sort(by_frequency.begin(), by_frequency.end(), [ny](Eigen::Index a, Eigen::Index b) {
    const Eigen::Index fa = signed_frequency(a, ny), fb = signed_frequency(b, ny);
    if (std::abs(fa) != std::abs(fb)) return std::abs(fa) < std::abs(fb);
    return fa > fb;
  });

  std::vector<Eigen::Index> kept(by_frequency.begin(), by_frequency.begin() + center);
  std::vector<Eigen::Index> rest(by_frequency.begin() + center, by_frequency.end());
  std::mt19937_64 rng(seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  for (std::size_t k = 0; static_cast<Eigen::Index>(kept.size()) < target && k < rest.size(); ++k)
    kept.push_back(rest[k]);

  for (Eigen::Index r : kept) mask.keep.row(r).setConstant(true);
  return mask;
}

ComplexField2D apply_F(const Field2D& u, const SamplingMask& mask) {
  require_same_shape(u, mask.keep, "apply_F");
  ComplexField2D k = fft2(u);
  return mask.keep.select(k, std::complex<double>(0.0, 0.0));
}

Field2D apply_F_adjoint(const ComplexField2D& x, const SamplingMask& mask) {
  require_same_shape(x, mask.keep, "apply_F_adjoint");
  const ComplexField2D masked = mask.keep.select(x, std::complex<double>(0.0, 0.0));
  return ifft2(masked).real();
}

Field2D apply_F_normal(const Field2D& u, const SamplingMask& mask) {
  return apply_F_adjoint(apply_F(u, mask), mask);
}

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

Eigen::SparseMatrix<double> blur_matrix(Eigen::Index n, double sigma) {
  const Eigen::VectorXd k = gaussian_kernel(sigma);
  const Eigen::Index r = (k.size() - 1) / 2;
  Triplets t;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index s = -r; s <= r; ++s) t.emplace_back(i, reflect_index(i + s, n), k(s + r));
  Eigen::SparseMatrix<double> m(n, n);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Eigen::SparseMatrix<double> pool_matrix(Eigen::Index n_lr, int d) {
  Triplets t;
  for (Eigen::Index i = 0; i < n_lr; ++i)
    for (int s = 0; s < d; ++s) t.emplace_back(i, i * d + s, 1.0 / d);
  Eigen::SparseMatrix<double> m(n_lr, n_lr * d);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

}  // namespace

SystemOperator::SystemOperator(const SystemOperatorSpec& spec) : spec_(spec) {
  if (!(spec.blur_sigma > 0.0)) throw std::invalid_argument("SystemOperator: blur_sigma must be positive");
  if (spec.downsample_factor < 1) throw std::invalid_argument("SystemOperator: downsample factor must be >= 1");
  if (spec.hr_ny <= 0 || spec.hr_nx <= 0 || spec.hr_ny % spec.downsample_factor != 0 ||
      spec.hr_nx % spec.downsample_factor != 0)
    throw std::invalid_argument("SystemOperator: high-resolution dims must be divisible by the factor");

  cy_ = Eigen::MatrixXd(pool_matrix(spec.lr_ny(), spec.downsample_factor) * blur_matrix(spec.hr_ny, spec.blur_sigma));
  cx_ = Eigen::MatrixXd(pool_matrix(spec.lr_nx(), spec.downsample_factor) * blur_matrix(spec.hr_nx, spec.blur_sigma));
  ny_ = cy_.transpose() * cy_;
  nx_ = cx_.transpose() * cx_;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ey(ny_), ex(nx_);
  qy_ = ey.eigenvectors();
  ly_ = ey.eigenvalues().cwiseMax(0.0);
  qx_ = ex.eigenvectors();
  lx_ = ex.eigenvalues().cwiseMax(0.0);
}

Field2D SystemOperator::apply(const Field2D& u) const {
  if (u.rows() != spec_.hr_ny || u.cols() != spec_.hr_nx)
    throw std::invalid_argument("SystemOperator::apply: dimension mismatch");
  return (cy_ * u.matrix() * cx_.transpose()).array();
}

Field2D SystemOperator::adjoint(const Field2D& f) const {
  if (f.rows() != spec_.lr_ny() || f.cols() != spec_.lr_nx())
    throw std::invalid_argument("SystemOperator::adjoint: dimension mismatch");
  return (cy_.transpose() * f.matrix() * cx_).array();
}

Field2D SystemOperator::normal(const Field2D& u) const {
  if (u.rows() != spec_.hr_ny || u.cols() != spec_.hr_nx)
    throw std::invalid_argument("SystemOperator::normal: dimension mismatch");
  return (ny_ * u.matrix() * nx_).array();
}

Field2D SystemOperator::solve_shifted(const Field2D& r, double c) const {
  if (r.rows() != spec_.hr_ny || r.cols() != spec_.hr_nx)
    throw std::invalid_argument("SystemOperator::solve_shifted: dimension mismatch");
  Eigen::MatrixXd s = qy_.transpose() * r.matrix() * qx_;
  s.array() /= (1.0 + c * (ly_ * lx_.transpose()).array());
  return (qy_ * s * qx_.transpose()).array();
}

}  // namespace vmtr
