#pragma once

// Reference solvers written independently of the library's TV code.

#include "vmtr/grid.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>

namespace vmtr::testing {

inline void project_ball(VectorField2D& p, const Field2D& radius) {
  const Field2D m = magnitude(p);
  for (Eigen::Index k = 0; k < m.size(); ++k)
    if (m.data()[k] > radius.data()[k]) {
      const double s = radius.data()[k] / m.data()[k];
      p.y.data()[k] *= s;
      p.x.data()[k] *= s;
    }
}

inline double isotropic_tv(const Field2D& f, const Field2D& weight) {
  return (weight * magnitude(gradient(f))).sum();
}

/// Accelerated primal-dual iterations (strong convexity 1/theta) for
/// min_f 1/(2 theta)|f - h|^2 + sum weight |grad f|.
inline Field2D rof_primal_dual(const Field2D& h, double theta, const Field2D& weight, int iterations) {
  Field2D f = h, fbar = h;
  VectorField2D y = VectorField2D::Zero(h.rows(), h.cols());
  double tau = 0.25, sigma = 0.5;  // tau * sigma * 8 = 1
  const double gamma = 1.0 / theta;
  for (int n = 0; n < iterations; ++n) {
    VectorField2D g = gradient(fbar);
    y.y += sigma * g.y;
    y.x += sigma * g.x;
    project_ball(y, weight);
    const Field2D prev = f;
    // prox of tau/(2 theta)|f - h|^2 at f + tau div y
    f = (f + tau * divergence(y) + (tau / theta) * h) / (1.0 + tau / theta);
    const double t = 1.0 / std::sqrt(1.0 + 2.0 * gamma * tau);
    tau *= t;
    sigma /= t;
    fbar = f + t * (f - prev);
  }
  return f;
}

/// Dense matrix of a linear map on ny x nx fields (row-major flattening).
template <typename Op>
Eigen::MatrixXd dense_matrix(const Op& op, Eigen::Index ny, Eigen::Index nx, Eigen::Index out_size) {
  Eigen::MatrixXd M(out_size, ny * nx);
  for (Eigen::Index k = 0; k < ny * nx; ++k) {
    Field2D e = Field2D::Zero(ny, nx);
    e.data()[k] = 1.0;
    const Field2D col = op(e);
    M.col(k) = Eigen::Map<const Eigen::VectorXd>(col.data(), col.size());
  }
  return M;
}

/// FISTA projected gradient on the dual of min_u w/2 |C u - b|^2 + alpha TV(u), C injective:
///   min_{|p| <= alpha} 1/2 (c + div p)^T A^{-1} (c + div p),  A = w C^T C,  c = w C^T b,
/// with u = A^{-1}(c + div p).
inline Field2D tv_least_squares_dual(const Eigen::MatrixXd& C, const Eigen::VectorXd& b, double w, double alpha,
                                     Eigen::Index ny, Eigen::Index nx, int iterations) {
  const Eigen::MatrixXd A = w * C.transpose() * C;
  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  const Eigen::VectorXd c = w * C.transpose() * b;
  const double lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A).eigenvalues().minCoeff();
  const double step = lmin / 8.0;
  const Field2D radius = Field2D::Constant(ny, nx, alpha);

  auto primal = [&](const VectorField2D& p) {
    const Field2D d = divergence(p);
    const Eigen::VectorXd rhs = c + Eigen::Map<const Eigen::VectorXd>(d.data(), d.size());
    const Eigen::VectorXd u = llt.solve(rhs);
    return Field2D(Eigen::Map<const Field2D>(u.data(), ny, nx));
  };

  VectorField2D p = VectorField2D::Zero(ny, nx), q = p;
  double t = 1.0;
  for (int n = 0; n < iterations; ++n) {
    // d/dp of the dual objective is -grad(u(p)).
    const VectorField2D g = gradient(primal(q));
    VectorField2D next(q.y + step * g.y, q.x + step * g.x);
    project_ball(next, radius);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    q = VectorField2D(next.y + beta * (next.y - p.y), next.x + beta * (next.x - p.x));
    p = std::move(next);
    t = t_next;
  }
  return primal(p);
}

}  // namespace vmtr::testing
