#include "vmtr/registration.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace vmtr {

void OgdenParams::validate() const {
  if (!(a1 > 0.0) || !(a2 > 0.0)) throw std::invalid_argument("OgdenParams: a1 and a2 must be positive");
}

double ogden_density(double m11, double m12, double m21, double m22, const OgdenParams& p) {
  const double det = m11 * m22 - m12 * m21;
  if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
  const double n2 = m11 * m11 + m12 * m12 + m21 * m21 + m22 * m22;
  const double area = det - 1.0 / det;
  return p.a1 * n2 * n2 + p.a2 * area * area * area * area;
}

double ogden_energy(const MatrixField2D& F, const OgdenParams& p) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    for (Eigen::Index j = 0; j < F.cols(); ++j) {
      const double w = ogden_density(F.m11(i, j), F.m12(i, j), F.m21(i, j), F.m22(i, j), p);
      if (std::isinf(w)) return w;
      total += w;
    }
  return total;
}

MatrixField2D displacement_gradient(const VectorField2D& v) {
  const VectorField2D gx = gradient(v.x);
  const VectorField2D gy = gradient(v.y);
  MatrixField2D g;
  g.m11 = gx.x;
  g.m12 = gx.y;
  g.m21 = gy.x;
  g.m22 = gy.y;
  return g;
}

MatrixField2D plus_identity(const MatrixField2D& z) {
  MatrixField2D f = z;
  f.m11 += 1.0;
  f.m22 += 1.0;
  return f;
}

double z_energy(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1) {
  const double w = ogden_energy(plus_identity(z), p);
  if (std::isinf(w)) return w;
  const MatrixField2D g = displacement_gradient(v);
  const double penalty = (z.m11 - g.m11).square().sum() + (z.m12 - g.m12).square().sum() +
                         (z.m21 - g.m21).square().sum() + (z.m22 - g.m22).square().sum();
  return w + 0.5 * gamma1 * penalty;
}

namespace {

// dW/dF at F = I + z, written into the four components.
struct OgdenGradient {
  double d11, d12, d21, d22;
};

OgdenGradient ogden_gradient(double z11, double z12, double z21, double z22, const OgdenParams& p) {
  const double f11 = 1.0 + z11, f12 = z12, f21 = z21, f22 = 1.0 + z22;
  const double n2 = f11 * f11 + f12 * f12 + f21 * f21 + f22 * f22;
  const double det = f11 * f22 - f12 * f21;
  const double area = det - 1.0 / det;
  const double c0 = area * area * area;
  const double c1 = 1.0 + 1.0 / (det * det);
  const double a = 4.0 * p.a1 * n2;
  const double b = 4.0 * p.a2 * c0 * c1;
  return {a * f11 + b * f22, a * f12 - b * f21, a * f21 - b * f12, a * f22 + b * f11};
}

bool positive_det_plus_identity(const MatrixField2D& z) {
  return ((1.0 + z.m11) * (1.0 + z.m22) - z.m12 * z.m21 > 0.0).all();
}

}  // namespace

MatrixField2D z_drift(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1) {
  const MatrixField2D g = displacement_gradient(v);
  MatrixField2D d = MatrixField2D::Zero(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const OgdenGradient w = ogden_gradient(z.m11(i, j), z.m12(i, j), z.m21(i, j), z.m22(i, j), p);
      d.m11(i, j) = -w.d11 - gamma1 * (z.m11(i, j) - g.m11(i, j));
      d.m12(i, j) = -w.d12 - gamma1 * (z.m12(i, j) - g.m12(i, j));
      d.m21(i, j) = -w.d21 - gamma1 * (z.m21(i, j) - g.m21(i, j));
      d.m22(i, j) = -w.d22 - gamma1 * (z.m22(i, j) - g.m22(i, j));
    }
  return d;
}

std::optional<MatrixField2D> update_z(const MatrixField2D& z, const VectorField2D& v, const OgdenParams& p,
                                      double gamma1, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("update_z: dt must be positive");
  if (!positive_det_plus_identity(z)) return std::nullopt;
  const MatrixField2D g = displacement_gradient(v);
  const double scale = 1.0 / (1.0 + dt * gamma1);
  MatrixField2D out = MatrixField2D::Zero(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const OgdenGradient w = ogden_gradient(z.m11(i, j), z.m12(i, j), z.m21(i, j), z.m22(i, j), p);
      out.m11(i, j) = scale * (z.m11(i, j) + dt * (-w.d11 + gamma1 * g.m11(i, j)));
      out.m12(i, j) = scale * (z.m12(i, j) + dt * (-w.d12 + gamma1 * g.m12(i, j)));
      out.m21(i, j) = scale * (z.m21(i, j) + dt * (-w.d21 + gamma1 * g.m21(i, j)));
      out.m22(i, j) = scale * (z.m22(i, j) + dt * (-w.d22 + gamma1 * g.m22(i, j)));
    }
  if (!positive_det_plus_identity(out)) return std::nullopt;
  return out;
}

double phi_energy(const Deformation& phi, const MatrixField2D& z, const Field2D& moving, const Field2D& fixed,
                  double gamma1, double gamma2) {
  const MatrixField2D g = displacement_gradient(phi.displacement);
  const double penalty = (z.m11 - g.m11).square().sum() + (z.m12 - g.m12).square().sum() +
                         (z.m21 - g.m21).square().sum() + (z.m22 - g.m22).square().sum();
  const double data = (warp(moving, phi) - fixed).square().sum();
  return 0.5 * gamma1 * penalty + 0.5 * gamma2 * data;
}

Deformation update_phi(const Deformation& phi, const MatrixField2D& z, const Field2D& h, const Field2D& cu,
                       double gamma1, double gamma2, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("update_phi: dt must be positive");
  require_same_shape(h, phi.displacement.y, "update_phi");
  require_same_shape(cu, phi.displacement.y, "update_phi");

  const Field2D residual = warp(h, phi) - cu;
  const Field2D hx = warp(Field2D(central_difference_x(h)), phi);
  const Field2D hy = warp(Field2D(central_difference_y(h)), phi);

  // Rows of z: (z11, z12) pairs with the x-component, (z21, z22) with the y-component.
  const Field2D div_z1 = divergence(VectorField2D(z.m12, z.m11));
  const Field2D div_z2 = divergence(VectorField2D(z.m22, z.m21));

  const Field2D rhs_x = phi.displacement.x - dt * (gamma1 * div_z1 + gamma2 * residual * hx);
  const Field2D rhs_y = phi.displacement.y - dt * (gamma1 * div_z2 + gamma2 * residual * hy);
  const double c = dt * gamma1;
  // Displacements vanish on the boundary, so the implicit part is a Dirichlet solve.
  return Deformation(
      VectorField2D(solve_screened_poisson_dirichlet(rhs_y, c), solve_screened_poisson_dirichlet(rhs_x, c)));
}

bool relax_z(MatrixField2D& z, const VectorField2D& v, const OgdenParams& p, double gamma1, StepControl& step) {
  const double before = z_energy(z, v, p, gamma1);
  while (step.dt >= step.dt_min) {
    if (auto next = update_z(z, v, p, gamma1, step.dt)) {
      const double after = z_energy(*next, v, p, gamma1);
      if (after <= before) {
        z = std::move(*next);
        step.dt = std::min(step.dt * step.grow, step.dt_max);
        return true;
      }
    }
    step.dt *= 0.5;
  }
  step.dt = step.dt_min;
  return false;
}

bool descend_phi(Deformation& phi, const MatrixField2D& z, const Field2D& moving, const Field2D& fixed,
                 double gamma1, double gamma2, StepControl& step) {
  const double before = phi_energy(phi, z, moving, fixed, gamma1, gamma2);
  while (step.dt >= step.dt_min) {
    Deformation next = update_phi(phi, z, moving, fixed, gamma1, gamma2, step.dt);
    // A folded candidate is an overshoot of the flow, not a regridding event.
    const bool folded = !(determinant(jacobian(next)).minCoeff() > 0.0);
    const double after = folded ? before + 1.0 : phi_energy(next, z, moving, fixed, gamma1, gamma2);
    if (after <= before) {
      phi = std::move(next);
      step.dt = std::min(step.dt * step.grow, step.dt_max);
      return true;
    }
    step.dt *= 0.5;
  }
  step.dt = step.dt_min;
  return false;
}

InversionResult invert_deformation(const Deformation& phi, int max_iter, double tol_px) {
  const Eigen::Index ny = phi.rows(), nx = phi.cols();
  InversionResult result;
  VectorField2D w = VectorField2D::Zero(ny, nx);
  const VectorField2D& v = phi.displacement;
  for (int it = 0; it < max_iter; ++it) {
    VectorField2D next = warp(v, Deformation(w));
    next *= -1.0;
    const double change =
        std::max((next.y - w.y).abs().maxCoeff(), (next.x - w.x).abs().maxCoeff());
    w = std::move(next);
    result.iterations = it + 1;
    result.residual_px = change;
    if (change < tol_px) {
      result.converged = true;
      break;
    }
  }
  if (max_iter <= 0) result.converged = true;
  result.inverse = Deformation(std::move(w));
  return result;
}

Field2D det_inverse_jacobian(const Deformation& phi, const Deformation& phi_inv) {
  const Field2D det = determinant(jacobian(phi));
  if (!(det > 0.0).all()) throw std::domain_error("det_inverse_jacobian: non-positive Jacobian determinant");
  return warp(det, phi_inv).inverse();
}

Deformation compose_deformations(const Deformation& a, const Deformation& b) {
  VectorField2D v = warp(a.displacement, b);
  v += b.displacement;
  return Deformation(std::move(v));
}

bool regrid_step(RegridState& state, const Deformation& previous, Deformation& phi, MatrixField2D& z,
                 Field2D& moving) {
  const Field2D det = determinant(jacobian(phi));
  if (det.minCoeff() >= state.tol) return false;
  ++state.regrid_count;
  moving = warp(moving, previous);
  state.saved_maps.push_back(previous);
  phi = Deformation::identity(phi.rows(), phi.cols());
  z = MatrixField2D::Zero(z.rows(), z.cols());
  return true;
}

Deformation composed_map(const RegridState& state, const Deformation& current) {
  Deformation out = current;
  for (auto it = state.saved_maps.rbegin(); it != state.saved_maps.rend(); ++it)
    out = compose_deformations(*it, out);
  return out;
}

RegistrationResult register_single_level(const Field2D& moving, const Field2D& fixed,
                                         const RegistrationParams& params, const Deformation& init) {
  params.ogden.validate();
  require_same_shape(moving, fixed, "register_single_level");
  RegistrationResult result;
  result.regrid.tol = params.regrid_tol;

  Field2D work = moving;
  Deformation phi = init;
  MatrixField2D z = displacement_gradient(phi.displacement);
  StepControl z_step{params.dt_z, params.dt_min, params.dt_z};
  StepControl phi_step{params.dt_phi, 1e-12, params.dt_phi_max, 1.5};

  for (int n = 0; n < params.iterations; ++n) {
    const Deformation previous = phi;
    relax_z(z, phi.displacement, params.ogden, params.gamma1, z_step);
    descend_phi(phi, z, work, fixed, params.gamma1, params.gamma2, phi_step);
    regrid_step(result.regrid, previous, phi, z, work);
  }
  result.phi = composed_map(result.regrid, phi);
  result.min_det = determinant(jacobian(result.phi)).minCoeff();
  return result;
}

MultiscaleResult multiscale_register(const Field2D& moving, const Field2D& fixed, int levels,
                                     const LevelSolver& solve_level) {
  require_same_shape(moving, fixed, "multiscale_register");
  MultiscaleResult result;
  levels = std::max(levels, 1);
  int usable = 1;
  Eigen::Index ny = moving.rows(), nx = moving.cols();
  while (usable < levels) {
    const Eigen::Index cy = (ny + 1) / 2, cx = (nx + 1) / 2;
    if (std::min(cy, cx) < 8) break;
    ny = cy;
    nx = cx;
    ++usable;
  }
  if (usable < levels)
    result.warnings.push_back("multiscale_register: grid too small for " + std::to_string(levels) +
                              " levels, using " + std::to_string(usable));
  result.levels_used = usable;

  std::vector<Field2D> mov{moving}, fix{fixed};
  for (int l = 1; l < usable; ++l) {
    mov.push_back(restrict_field(mov.back()));
    fix.push_back(restrict_field(fix.back()));
  }

  Deformation phi = Deformation::identity(mov.back().rows(), mov.back().cols());
  for (int l = usable - 1; l >= 0; --l) {
    const auto& m = mov[static_cast<std::size_t>(l)];
    if (phi.rows() != m.rows() || phi.cols() != m.cols()) phi = prolong_deformation(phi, m.rows(), m.cols());
    phi = solve_level(m, fix[static_cast<std::size_t>(l)], phi, l);
  }
  result.phi = std::move(phi);
  return result;
}

RegistrationResult register_images(const Field2D& moving, const Field2D& fixed, const RegistrationParams& params) {
  RegistrationResult finest;
  int total_regrids = 0;
  auto solve = [&](const Field2D& m, const Field2D& f, const Deformation& init, int level) {
    RegistrationResult r = register_single_level(m, f, params, init);
    total_regrids += r.regrid.regrid_count;
    if (level == 0) finest = r;
    return r.phi;
  };
  MultiscaleResult ms = multiscale_register(moving, fixed, params.levels, solve);
  finest.phi = ms.phi;
  finest.levels_used = ms.levels_used;
  finest.warnings = ms.warnings;
  finest.total_regrids = total_regrids;
  finest.min_det = determinant(jacobian(finest.phi)).minCoeff();
  return finest;
}

}  // namespace vmtr
