#pragma once

#include "vmtr/grid.hpp"

#include <cmath>

namespace vmtr {

struct CgResult {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

/// Conjugate gradients for a symmetric positive (semi)definite operator acting on fields.
/// x holds the initial guess on entry and the solution on exit.
template <typename Op>
CgResult conjugate_gradient(const Op& apply, const Field2D& b, Field2D& x, double tol, int max_iter) {
  CgResult result;
  const double b_norm = std::sqrt(squared_norm(b));
  if (b_norm == 0.0) {
    x.setZero();
    result.converged = true;
    return result;
  }
  Field2D r = b - apply(x);
  double rr = squared_norm(r);
  result.relative_residual = std::sqrt(rr) / b_norm;
  if (result.relative_residual <= tol) {
    result.converged = true;
    return result;
  }
  Field2D p = r;
  for (int k = 0; k < max_iter; ++k) {
    const Field2D ap = apply(p);
    const double pap = inner(p, ap);
    if (!(pap > 0.0)) break;
    const double a = rr / pap;
    x += a * p;
    r -= a * ap;
    const double rr_next = squared_norm(r);
    result.iterations = k + 1;
    result.relative_residual = std::sqrt(rr_next) / b_norm;
    if (result.relative_residual <= tol) {
      result.converged = true;
      break;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  // The recursive residual drifts from the true one; report the true value.
  result.relative_residual = std::sqrt(squared_norm(b - apply(x))) / b_norm;
  result.converged = result.relative_residual <= tol;
  return result;
}

/// Preconditioned conjugate gradients; `precondition` applies an SPD approximation of the inverse.
template <typename Op, typename Precond>
CgResult preconditioned_conjugate_gradient(const Op& apply, const Precond& precondition, const Field2D& b,
                                           Field2D& x, double tol, int max_iter) {
  CgResult result;
  const double b_norm = std::sqrt(squared_norm(b));
  if (b_norm == 0.0) {
    x.setZero();
    result.converged = true;
    return result;
  }
  Field2D r = b - apply(x);
  result.relative_residual = std::sqrt(squared_norm(r)) / b_norm;
  if (result.relative_residual <= tol) {
    result.converged = true;
    return result;
  }
  Field2D zr = precondition(r);
  Field2D p = zr;
  double rz = inner(r, zr);
  for (int k = 0; k < max_iter; ++k) {
    const Field2D ap = apply(p);
    const double pap = inner(p, ap);
    if (!(pap > 0.0)) break;
    const double a = rz / pap;
    x += a * p;
    r -= a * ap;
    result.iterations = k + 1;
    result.relative_residual = std::sqrt(squared_norm(r)) / b_norm;
    if (result.relative_residual <= tol) break;
    zr = precondition(r);
    const double rz_next = inner(r, zr);
    p = zr + (rz_next / rz) * p;
    rz = rz_next;
  }
  result.relative_residual = std::sqrt(squared_norm(b - apply(x))) / b_norm;
  result.converged = result.relative_residual <= tol;
  return result;
}

}  // namespace vmtr
