#pragma once

// Hyperelastic registration with the Ogden-type stored energy
//
//   W(F) = a1 |F|_F^4 + a2 (det F - 1/det F)^4   if det F > 0,   +inf otherwise,
//
// relaxed through an auxiliary field z ~ grad(v) (phi = Id + v):
//
//   sum_x W(I + z) + gamma1/2 |z - grad v|^2 + gamma2/2 |moving o phi - fixed|^2.
//
// z is updated by a semi-implicit gradient flow, v by a semi-implicit flow whose
// Laplacian part is solved exactly. Regridding restarts phi from the identity
// whenever its Jacobian determinant drops under a tolerance.

#include "vmtr/grid.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace vmtr {

struct OgdenParams {
  double a1 = 1.0;
  double a2 = 50.0;

  void validate() const;
};

/// W at one matrix; +inf when det <= 0.
double ogden_density(double m11, double m12, double m21, double m22, const OgdenParams& p);

/// Sum over pixels of W(F(x)). Returns +infinity if any det F <= 0; callers test with std::isinf.
double ogden_energy(const MatrixField2D& F, const OgdenParams& p);

/// Forward-difference displacement gradient in the (11, 12, 21, 22) = (dvx/dx, dvx/dy,
/// dvy/dx, dvy/dy) layout.
MatrixField2D displacement_gradient(const VectorField2D& v);

MatrixField2D plus_identity(const MatrixField2D& z);

/// sum_x W(I + z) + gamma1/2 |z - grad v|^2.
double z_energy(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1);

/// Minus the gradient of z_energy with respect to z.
MatrixField2D z_drift(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1);

/// One semi-implicit step
///   z <- (z + dt (-dW/dz + gamma1 grad v)) / (1 + dt gamma1).
/// Empty when det(I + z) <= 0 somewhere, before or after the step.
std::optional<MatrixField2D> update_z(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p,
                                      double gamma1, double dt);

/// gamma1/2 |z - grad v|^2 + gamma2/2 |moving o phi - fixed|^2.
double phi_energy(const Deformation& phi, const MatrixField2D& z, const Field2D& moving, const Field2D& fixed,
                  double gamma1, double gamma2);

/// One semi-implicit step of the phi flow:
///   (I - dt gamma1 Lap) v' = v - dt [gamma1 div z + gamma2 (h o phi - Cu) grad h(phi)].
/// grad h is taken with central differences and then warped. The displacement is held at
/// zero on the boundary ring (maps are the identity on the boundary).
Deformation update_phi(const Deformation& phi, const MatrixField2D& z, const Field2D& h, const Field2D& cu,
                       double gamma1, double gamma2, double dt);

/// Adaptive time step: halves on rejection, grows on acceptance.
struct StepControl {
  double dt = 1e-3;
  double dt_min = 1e-6;
  double dt_max = 1e-3;
  double grow = 2.0;
};

/// update_z with step halving until det(I + z) > 0 and z_energy does not increase.
/// Leaves z untouched (and returns false) once dt would fall below dt_min.
bool relax_z(MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1, StepControl& step);

/// update_phi with backtracking on phi_energy; candidates with det grad(phi) <= 0 are rejected.
bool descend_phi(Deformation& phi, const MatrixField2D& z, const Field2D& moving, const Field2D& fixed,
                 double gamma1, double gamma2, StepControl& step);

struct InversionResult {
  Deformation inverse;
  int iterations = 0;
  double residual_px = 0.0;
  bool converged = false;
};

/// Fixed point w <- -v(x + w) from w = 0; phi^-1 = Id + w.
InversionResult invert_deformation(const Deformation& phi, int max_iter = 50, double tol_px = 1e-3);

/// det grad(phi^-1) computed as 1 / (det grad phi o phi^-1). Throws std::domain_error
/// if the forward determinant is not positive.
Field2D det_inverse_jacobian(const Deformation& phi, const Deformation& phi_inv);

/// (a o b)(x) = a(b(x)).
Deformation compose_deformations(const Deformation& a, const Deformation& b);

struct RegridState {
  int regrid_count = 0;
  std::vector<Deformation> saved_maps;
  double tol = 0.05;
};

/// After a z/phi update: if min det grad(phi) < tol, the moving image is warped by
/// `previous`, `previous` is saved, and phi, z restart from the identity. Returns
/// true when a regrid happened.
bool regrid_step(RegridState& state, const Deformation& previous, Deformation& phi, MatrixField2D& z,
                 Field2D& moving);

/// saved(1) o ... o saved(count) o current.
Deformation composed_map(const RegridState& state, const Deformation& current);

struct RegistrationParams {
  OgdenParams ogden;
  double gamma1 = 5.0;
  double gamma2 = 1e5;
  double dt_z = 1e-3;
  double dt_min = 1e-6;
  double dt_phi = 1e-3;
  double dt_phi_max = 1e3;
  double regrid_tol = 0.05;
  int iterations = 200;
  int levels = 2;
};

struct RegistrationResult {
  Deformation phi;  // composed map including regrid history
  RegridState regrid;  // finest level
  int total_regrids = 0;
  int levels_used = 1;
  double min_det = 1.0;
  std::vector<std::string> warnings;
};

/// Single-level registration of moving onto fixed (moving o phi ~ fixed) with regridding.
RegistrationResult register_single_level(const Field2D& moving, const Field2D& fixed,
                                         const RegistrationParams& params, const Deformation& init);

using LevelSolver =
    std::function<Deformation(const Field2D& moving, const Field2D& fixed, const Deformation& init, int level)>;

struct MultiscaleResult {
  Deformation phi;
  int levels_used = 1;
  std::vector<std::string> warnings;
};

/// Restricts both images levels - 1 times, solves coarsest first, prolongs the deformation
/// (displacement x2) to seed the next level. Levels whose grids would fall under 8 pixels
/// are dropped with a warning.
MultiscaleResult multiscale_register(const Field2D& moving, const Field2D& fixed, int levels,
                                     const LevelSolver& solve_level);

/// multiscale_register driving register_single_level.
RegistrationResult register_images(const Field2D& moving, const Field2D& fixed, const RegistrationParams& params);

}  // namespace vmtr
