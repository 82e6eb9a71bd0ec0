#include "vmtr/tv.hpp"

#include "vmtr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace vmtr {

double tv(const Field2D& f) { return magnitude(gradient(f)).sum(); }

double weighted_tv(const Field2D& f, const Field2D& weight) {
  require_same_shape(f, weight, "weighted_tv");
  return (weight * magnitude(gradient(f))).sum();
}

namespace {

struct Sobel {
  Field2D gy, gx;
};

Sobel sobel(const Field2D& f) {
  const Eigen::Index ny = f.rows(), nx = f.cols();
  Sobel s{Field2D::Zero(ny, nx), Field2D::Zero(ny, nx)};
  auto at = [&](Eigen::Index i, Eigen::Index j) { return f(reflect_index(i, ny), reflect_index(j, nx)); };
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      s.gx(i, j) = (at(i - 1, j + 1) + 2.0 * at(i, j + 1) + at(i + 1, j + 1)) -
                   (at(i - 1, j - 1) + 2.0 * at(i, j - 1) + at(i + 1, j - 1));
      s.gy(i, j) = (at(i + 1, j - 1) + 2.0 * at(i + 1, j) + at(i + 1, j + 1)) -
                   (at(i - 1, j - 1) + 2.0 * at(i - 1, j) + at(i - 1, j + 1));
    }
  }
  return s;
}

}  // namespace

BoolField canny_edges(const Field2D& image, const CannyOptions& opts) {
  if (!(opts.sigma >= 0.0)) throw std::invalid_argument("canny: sigma must be >= 0");
  if (!(opts.low >= 0.0 && opts.low <= opts.high)) throw std::invalid_argument("canny: need 0 <= low <= high");
  const Eigen::Index ny = image.rows(), nx = image.cols();
  BoolField edges = BoolField::Constant(ny, nx, false);
  if (ny < 3 || nx < 3) return edges;

  const Field2D smooth = opts.sigma > 0.0 ? gaussian_blur(image, opts.sigma) : image;
  const Sobel s = sobel(smooth);
  const Field2D mag = (s.gx.square() + s.gy.square()).sqrt();
  const double peak = mag.maxCoeff();
  if (!(peak > 0.0)) return edges;

  auto mag_at = [&](Eigen::Index i, Eigen::Index j) {
    return (i < 0 || j < 0 || i >= ny || j >= nx) ? 0.0 : mag(i, j);
  };
  BoolField thin = BoolField::Constant(ny, nx, false);
  for (Eigen::Index i = 0; i < ny; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) {
      const double m = mag(i, j);
      if (!(m > 0.0)) continue;
      const auto di = static_cast<Eigen::Index>(std::lround(s.gy(i, j) / m));
      const auto dj = static_cast<Eigen::Index>(std::lround(s.gx(i, j) / m));
      // Ties along the gradient go to the pixel on the negative side, so plateaus stay one pixel wide.
      thin(i, j) = m >= mag_at(i + di, j + dj) && m > mag_at(i - di, j - dj);
    }
  }

  const double high = opts.high * peak, low = opts.low * peak;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> stack;
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      if (thin(i, j) && mag(i, j) >= high) {
        edges(i, j) = true;
        stack.emplace_back(i, j);
      }
  while (!stack.empty()) {
    const auto [i, j] = stack.back();
    stack.pop_back();
    for (Eigen::Index a = -1; a <= 1; ++a)
      for (Eigen::Index b = -1; b <= 1; ++b) {
        const Eigen::Index r = i + a, c = j + b;
        if (r < 0 || c < 0 || r >= ny || c >= nx || edges(r, c)) continue;
        if (thin(r, c) && mag(r, c) >= low) {
          edges(r, c) = true;
          stack.emplace_back(r, c);
        }
      }
  }
  return edges;
}

WeightField canny_weights(const Field2D& recon, const CannyOptions& opts) {
  if (!(opts.floor > 0.0 && opts.floor <= 1.0)) throw std::invalid_argument("canny: floor must lie in (0, 1]");
  const BoolField edges = canny_edges(recon, opts);
  return {edges.select(Field2D::Constant(recon.rows(), recon.cols(), opts.floor), 1.0), opts.floor};
}

WeightField canny_weights(const Field2D& recon, double sigma, double low, double high, double floor) {
  return canny_weights(recon, CannyOptions{sigma, low, high, floor});
}

double prox_objective(const Field2D& f, const Field2D& h, double theta, const Field2D& weight) {
  return 0.5 / theta * squared_norm(f - h) + weighted_tv(f, weight);
}

namespace {

void clamp_to_ball(VectorField2D& p, const Field2D& radius) {
  const Field2D scale = (radius / magnitude(p).max(1e-300)).min(1.0);
  p.y *= scale;
  p.x *= scale;
}

}  // namespace

ChambolleResult chambolle_prox(const Field2D& h, double theta, const Field2D& weight, const ChambolleOptions& opts,
                               const VectorField2D* p0, const ChambolleObserver& observer) {
  require_same_shape(h, weight, "chambolle_prox");
  if (!(theta > 0.0)) throw std::invalid_argument("chambolle_prox: theta must be positive");
  if (!(opts.step > 0.0 && opts.step <= 0.125 + 1e-15))
    throw std::invalid_argument("chambolle_prox: step must lie in (0, 1/8]");
  if (!(weight > 0.0).all()) throw std::invalid_argument("chambolle_prox: weights must be positive");

  ChambolleResult r;
  if (p0 && p0->rows() == h.rows() && p0->cols() == h.cols()) {
    r.p = *p0;
    clamp_to_ball(r.p, weight);
  } else {
    r.p = VectorField2D::Zero(h.rows(), h.cols());
  }
  const Field2D h_scaled = h / theta;
  const double dt = opts.step;
  for (int n = 0; n < opts.iterations; ++n) {
    const VectorField2D q = gradient(Field2D(divergence(r.p) - h_scaled));
    const Field2D denom = 1.0 + dt / weight * magnitude(q);
    VectorField2D next{(r.p.y + dt * q.y) / denom, (r.p.x + dt * q.x) / denom};
    clamp_to_ball(next, weight);  // round-off only; the update keeps |p| <= weight
    const double change =
        std::max((next.y - r.p.y).abs().maxCoeff(), (next.x - r.p.x).abs().maxCoeff());
    r.p = std::move(next);
    r.iterations = n + 1;
    if (observer) observer(r.iterations, r.p, Field2D(h - theta * divergence(r.p)));
    if (opts.tol > 0.0 && change < opts.tol) break;
  }
  r.f = h - theta * divergence(r.p);
  return r;
}

PrimalDualResult primal_dual_tv(const QuadraticData& data, const PrimalDualOptions& opts, const Field2D& u0,
                                const VectorField2D* y0) {
  if (!data.normal) throw std::invalid_argument("primal_dual_tv: missing normal operator");
  require_same_shape(u0, data.rhs, "primal_dual_tv");
  if (!(opts.alpha >= 0.0)) throw std::invalid_argument("primal_dual_tv: alpha must be >= 0");
  if (!(opts.tau > 0.0 && opts.sigma > 0.0 && opts.tau * opts.sigma * 8.0 <= 1.0 + 1e-12))
    throw std::invalid_argument("primal_dual_tv: need tau sigma ||grad||^2 <= 1");
  if (!(data.weight >= 0.0)) throw std::invalid_argument("primal_dual_tv: data weight must be >= 0");

  PrimalDualResult r;
  r.u = u0;
  if (y0 && y0->rows() == u0.rows() && y0->cols() == u0.cols())
    r.y = *y0;
  else
    r.y = VectorField2D::Zero(u0.rows(), u0.cols());
  const Field2D radius = Field2D::Constant(u0.rows(), u0.cols(), opts.alpha);
  clamp_to_ball(r.y, radius);

  const double tw = opts.tau * data.weight;
  const auto system = [&](const Field2D& x) -> Field2D { return x + tw * data.normal(x); };
  const Field2D scaled_rhs = tw * data.rhs;

  Field2D u_bar = r.u;
  for (int k = 0; k < opts.iterations; ++k) {
    const VectorField2D gu = gradient(u_bar);
    r.y.y += opts.sigma * gu.y;
    r.y.x += opts.sigma * gu.x;
    clamp_to_ball(r.y, radius);

    const Field2D b = r.u + opts.tau * divergence(r.y) + scaled_rhs;
    Field2D u_next = r.u;
    const CgResult cg =
        data.shifted_inverse
            ? preconditioned_conjugate_gradient(
                  system, [&](const Field2D& r) { return data.shifted_inverse(r, tw); }, b, u_next, opts.cg_tol,
                  opts.cg_max)
            : conjugate_gradient(system, b, u_next, opts.cg_tol, opts.cg_max);
    r.max_cg_residual = std::max(r.max_cg_residual, cg.relative_residual);
    if (!cg.converged) ++r.cg_failures;

    const double change = std::sqrt(squared_norm(u_next - r.u));
    const double scale = std::sqrt(squared_norm(r.u));
    u_bar = 2.0 * u_next - r.u;
    r.u = std::move(u_next);
    r.iterations = k + 1;
    if (opts.tol > 0.0 && scale > 0.0 && change / scale < opts.tol) break;
  }
  return r;
}

PrimalDualResult primal_dual_tv(double data_weight, const Field2D& data_image, const Field2D& u0,
                                const std::function<Field2D(const Field2D&)>& apply_C,
                                const std::function<Field2D(const Field2D&)>& apply_C_adjoint,
                                const PrimalDualOptions& opts) {
  QuadraticData data;
  data.weight = data_weight;
  data.normal = [&](const Field2D& x) { return apply_C_adjoint(apply_C(x)); };
  data.rhs = apply_C_adjoint(data_image);
  data.data_sq_norm = squared_norm(data_image);
  return primal_dual_tv(data, opts, u0);
}

double tv_least_squares_objective(const QuadraticData& data, double alpha, const Field2D& u) {
  return data.value(u) + alpha * tv(u);
}

}  // namespace vmtr
