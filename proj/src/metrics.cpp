#include "vmtr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vmtr {

double psnr(const Field2D& image, const Field2D& reference) {
  require_same_shape(image, reference, "psnr");
  const double mse = (image - reference).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = reference.maxCoeff();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kSsimRadius = 5;

Eigen::VectorXd ssim_window() {
  Eigen::VectorXd w(2 * kSsimRadius + 1);
  for (int k = -kSsimRadius; k <= kSsimRadius; ++k) w(k + kSsimRadius) = std::exp(-0.5 * k * k / (1.5 * 1.5));
  return w / w.sum();
}

// Separable filtering restricted to positions where the whole window fits.
Field2D filter_valid(const Field2D& f, const Eigen::VectorXd& w) {
  const Eigen::Index r = kSsimRadius;
  const Eigen::Index ny = f.rows() - 2 * r, nx = f.cols() - 2 * r;
  Field2D rows_done = Field2D::Zero(f.rows(), nx);
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      for (Eigen::Index k = 0; k <= 2 * r; ++k) rows_done(i, j) += w(k) * f(i, j + k);
  Field2D out = Field2D::Zero(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      for (Eigen::Index k = 0; k <= 2 * r; ++k) out(i, j) += w(k) * rows_done(i + k, j);
  return out;
}

}  // namespace

double ssim(const Field2D& image, const Field2D& reference) {
  require_same_shape(image, reference, "ssim");
  if (image.rows() <= 2 * kSsimRadius || image.cols() <= 2 * kSsimRadius)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const double range = reference.maxCoeff() - reference.minCoeff();
  const double L = range > 0.0 ? range : 1.0;
  const double c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  const Eigen::VectorXd w = ssim_window();
  const Field2D mx = filter_valid(image, w), my = filter_valid(reference, w);
  const Field2D sxx = filter_valid(image.square(), w) - mx.square();
  const Field2D syy = filter_valid(reference.square(), w) - my.square();
  const Field2D sxy = filter_valid(image * reference, w) - mx * my;
  const Field2D map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) /
                      ((mx.square() + my.square() + c1) * (sxx + syy + c2));
  return map.mean();
}

double endpoint_error(const Deformation& a, const Deformation& b) {
  require_same_shape(a.displacement.y, b.displacement.y, "endpoint_error");
  return ((a.displacement.y - b.displacement.y).square() + (a.displacement.x - b.displacement.x).square())
      .sqrt()
      .mean();
}

EndpointSummary endpoint_errors(const std::vector<Deformation>& estimated, const std::vector<Deformation>& truth) {
  if (estimated.size() != truth.size() || estimated.empty())
    throw std::invalid_argument("endpoint_errors: frame counts differ or are zero");
  EndpointSummary s;
  for (std::size_t t = 0; t < estimated.size(); ++t) s.per_frame.push_back(endpoint_error(estimated[t], truth[t]));
  for (double e : s.per_frame) {
    s.mean += e;
    s.max = std::max(s.max, e);
  }
  s.mean /= static_cast<double>(s.per_frame.size());
  return s;
}

Field2D mean_abs_difference(const std::vector<Field2D>& frames, const Field2D& reference) {
  if (frames.empty()) throw std::invalid_argument("mean_abs_difference: no frames");
  Field2D acc = Field2D::Zero(reference.rows(), reference.cols());
  for (const Field2D& f : frames) {
    require_same_shape(f, reference, "mean_abs_difference");
    acc += (f - reference).abs();
  }
  return acc / static_cast<double>(frames.size());
}

}  // namespace vmtr
