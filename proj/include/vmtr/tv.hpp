#pragma once

// Total variation: isotropic TV, edge-weighted TV, Canny-derived weights, the
// weighted Chambolle projection for the TV prox, and a primal-dual solver for
// TV-regularised least squares.

#include "vmtr/grid.hpp"

#include <functional>

namespace vmtr {

/// Per-pixel weight in [floor, 1].
struct WeightField {
  Field2D g;
  double floor = 0.01;

  static WeightField ones(Eigen::Index ny, Eigen::Index nx, double floor = 0.01) {
    return {Field2D::Ones(ny, nx), floor};
  }
};

double tv(const Field2D& f);
double weighted_tv(const Field2D& f, const Field2D& weight);
inline double weighted_tv(const Field2D& f, const WeightField& g) { return weighted_tv(f, g.g); }

struct CannyOptions {
  double sigma = 1.5;        // std-dev of the pre-smoothing Gaussian
  double low = 0.1;          // hysteresis thresholds, relative to the max gradient magnitude
  double high = 0.2;
  double floor = 0.01;
};

/// Binary Canny edge map (Sobel gradients, non-maximum suppression, hysteresis).
BoolField canny_edges(const Field2D& image, const CannyOptions& opts);

/// g = floor on Canny edges of G_sigma * recon, 1 elsewhere.
WeightField canny_weights(const Field2D& recon, const CannyOptions& opts);
WeightField canny_weights(const Field2D& recon, double sigma, double low, double high, double floor);

struct ChambolleOptions {
  int iterations = 500;
  double step = 0.125;  // <= 1/8
  double tol = 1e-6;    // early exit on max |p^{n+1} - p^n|; 0 disables
};

struct ChambolleResult {
  Field2D f;
  VectorField2D p;
  int iterations = 0;
};

using ChambolleObserver = std::function<void(int iteration, const VectorField2D& p, const Field2D& f)>;

/// Approximate argmin_f 1/(2 theta) |f - h|^2 + sum weight |grad f| via the dual fixed point
///   p <- (p + dt grad(div p - h/theta)) / (1 + dt/weight |grad(div p - h/theta)|),
///   f  = h - theta div p.
/// Starts from p0 when given, else zero.
ChambolleResult chambolle_prox(const Field2D& h, double theta, const Field2D& weight, const ChambolleOptions& opts,
                               const VectorField2D* p0 = nullptr, const ChambolleObserver& observer = {});

/// (1/(2 theta)) |f - h|^2 + TV_weight(f).
double prox_objective(const Field2D& f, const Field2D& h, double theta, const Field2D& weight);

/// (w/2) |C u - b|^2 through its normal equations: only C^T C, C^T b and |b|^2 are needed.
struct QuadraticData {
  double weight = 1.0;
  std::function<Field2D(const Field2D&)> normal;
  Field2D rhs;
  double data_sq_norm = 0.0;
  /// Optional (I + c normal)^{-1}, used to precondition the primal CG solve.
  std::function<Field2D(const Field2D&, double)> shifted_inverse;

  double value(const Field2D& u) const {
    return 0.5 * weight * (inner(u, normal(u)) - 2.0 * inner(u, rhs) + data_sq_norm);
  }
};

struct PrimalDualOptions {
  double alpha = 0.01;
  int iterations = 500;
  double tau = 0.35355339059327373;    // 1/sqrt(8)
  double sigma = 0.35355339059327373;  // 1/sqrt(8)
  double cg_tol = 1e-8;
  int cg_max = 500;
  double tol = 0.0;  // early exit on |u^{k+1} - u^k| / |u^k|; 0 disables
};

struct PrimalDualResult {
  Field2D u;
  VectorField2D y;
  int iterations = 0;
  double max_cg_residual = 0.0;
  int cg_failures = 0;
};

/// Chambolle-Pock iterations for min_u data.value(u) + alpha TV(u):
///   y <- proj_{|y| <= alpha}(y + sigma grad ubar)
///   u <- (I + tau w C^T C)^{-1} (u + tau div y + tau w C^T b)   (CG)
///   ubar = 2 u_new - u_old
PrimalDualResult primal_dual_tv(const QuadraticData& data, const PrimalDualOptions& opts, const Field2D& u0,
                                const VectorField2D* y0 = nullptr);

/// Convenience form taking C and C^T directly.
PrimalDualResult primal_dual_tv(double data_weight, const Field2D& data_image, const Field2D& u0,
                                const std::function<Field2D(const Field2D&)>& apply_C,
                                const std::function<Field2D(const Field2D&)>& apply_C_adjoint,
                                const PrimalDualOptions& opts);

double tv_least_squares_objective(const QuadraticData& data, double alpha, const Field2D& u);

}  // namespace vmtr
