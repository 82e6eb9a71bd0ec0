#include "vmtr/solver.hpp"

#include "vmtr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vmtr {

namespace {

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw std::invalid_argument(std::string(field) + ": " + what);
}

}  // namespace

void SolverParams::validate() const {
  require(a1 > 0.0, "a1", "must be positive");
  require(a2 > 0.0, "a2", "must be positive");
  require(gamma1 > 0.0, "gamma1", "must be positive");
  require(gamma2 > 0.0, "gamma2", "must be positive");
  require(gamma3 > 0.0, "gamma3", "must be positive");
  require(theta > 0.0, "theta", "must be positive");
  require(sigma > 0.0, "sigma", "must be positive");
  require(levels_k >= 1, "levels_k", "must be at least 1");
  require(iters_nn >= 1, "iters_nn", "must be at least 1");
  require(alpha > 0.0, "alpha", "must be positive");
  require(dt > 0.0, "dt", "must be positive");
  require(dt_phi > 0.0, "dt_phi", "must be positive");
  require(dt_phi_max >= dt_phi, "dt_phi_max", "must be >= dt_phi");
  require(regrid_tol > 0.0 && regrid_tol < 1.0, "regrid_tol", "must lie in (0, 1)");
  require(delta_weight > 0.0, "delta_weight", "must be positive");
  require(chambolle_step > 0.0 && chambolle_step <= 0.125, "chambolle_step", "must lie in (0, 1/8]");
  require(pd_tau > 0.0, "pd_tau", "must be positive");
  require(pd_sigma > 0.0, "pd_sigma", "must be positive");
  require(pd_tau * pd_sigma * 8.0 <= 1.0 + 1e-12, "pd_tau", "pd_tau * pd_sigma * 8 must be <= 1");
  require(cg_tol > 0.0, "cg_tol", "must be positive");
  require(cg_max >= 1, "cg_max", "must be at least 1");
  require(inv_max_iter >= 1, "inv_max_iter", "must be at least 1");
  require(inv_tol_px > 0.0, "inv_tol_px", "must be positive");
  require(outer_iters >= 1, "outer_iters", "must be at least 1");
  require(canny_low > 0.0, "canny_low", "must be positive");
  require(canny_high >= canny_low, "canny_high", "must be >= canny_low");
  require(floor_c > 0.0 && floor_c <= 1.0, "floor_c", "must lie in (0, 1]");
  require(blur_sigma > 0.0, "blur_sigma", "must be positive");
  require(inner_tol > 0.0, "inner_tol", "must be positive");
  require(stop_tol >= 0.0, "stop_tol", "must be >= 0 (0 disables early stopping)");
}

LevelProblem make_problem(const Dataset& d, const SolverParams& params) {
  d.validate();
  LevelProblem p;
  p.kspace = d.kspace;
  p.masks = d.masks;
  p.op = SystemOperator({params.blur_sigma, d.factor, d.hr_ny, d.hr_nx});
  for (int t = 0; t < d.frames(); ++t) p.zero_filled.push_back(d.zero_filled(t));
  return p;
}

LevelProblem coarsen(const LevelProblem& p) {
  const Eigen::Index ny = p.lr_ny(), nx = p.lr_nx();
  const SystemOperatorSpec& s = p.op.spec();
  if (ny % 2 != 0 || nx % 2 != 0 || s.hr_ny % 2 != 0 || s.hr_nx % 2 != 0)
    throw std::invalid_argument("coarsen: grid dims must be even");
  const Eigen::Index cy = ny / 2, cx = nx / 2;
  LevelProblem c;
  c.op = SystemOperator({s.blur_sigma / 2.0, s.downsample_factor, s.hr_ny / 2, s.hr_nx / 2});
  for (int t = 0; t < p.frames(); ++t) {
    const auto& x = p.kspace[static_cast<std::size_t>(t)];
    const auto& m = p.masks[static_cast<std::size_t>(t)].keep;
    ComplexField2D xc(cy, cx);
    SamplingMask mc;
    mc.keep = BoolField::Constant(cy, cx, false);
    for (Eigen::Index i = 0; i < cy; ++i) {
      const Eigen::Index fi = (signed_frequency(i, cy) + ny) % ny;
      for (Eigen::Index j = 0; j < cx; ++j) {
        const Eigen::Index fj = (signed_frequency(j, cx) + nx) % nx;
        xc(i, j) = 0.5 * x(fi, fj);
        mc.keep(i, j) = m(fi, fj);
      }
    }
    const Eigen::Index kept = mc.kept_rows();
    mc.acceleration = kept > 0 ? static_cast<double>(cy) / static_cast<double>(kept) : 1.0;
    c.zero_filled.push_back(apply_F_adjoint(xc, mc));
    c.kspace.push_back(std::move(xc));
    c.masks.push_back(std::move(mc));
  }
  return c;
}

std::vector<std::string> EnergyBreakdown::names() {
  return {"ogden", "z_penalty", "data", "tv_u", "coupling", "f_penalty", "wtv_f"};
}

std::vector<double> EnergyBreakdown::parts() const {
  return {ogden, z_penalty, data, tv_u, coupling, f_penalty, wtv_f};
}

void refresh_inverse(FrameState& s, const SolverParams& params) {
  const Deformation eff = s.effective();
  s.phi_inv = invert_deformation(eff, params.inv_max_iter, params.inv_tol_px).inverse;
  s.det_inv = det_inverse_jacobian(eff, s.phi_inv);
}

JointState init_state(const LevelProblem& p, const SolverParams& params) {
  if (p.frames() == 0) throw std::invalid_argument("init_state: empty dataset");
  const Eigen::Index ny = p.lr_ny(), nx = p.lr_nx();
  JointState s;
  Field2D mean_h = Field2D::Zero(ny, nx);
  for (int t = 0; t < p.frames(); ++t) {
    FrameState f;
    f.phi = Deformation::identity(ny, nx);
    f.saved = Deformation::identity(ny, nx);
    f.phi_inv = Deformation::identity(ny, nx);
    f.det_inv = Field2D::Ones(ny, nx);
    f.z = MatrixField2D::Zero(ny, nx);
    f.h = p.zero_filled[static_cast<std::size_t>(t)];
    f.f = f.h;
    f.g = canny_weights(f.h, params.sigma, params.canny_low, params.canny_high, params.floor_c);
    f.regrid.tol = params.regrid_tol;
    f.dual = VectorField2D::Zero(ny, nx);
    f.z_step = StepControl{params.dt, 1e-9, params.dt, 2.0};
    f.phi_step = StepControl{params.dt_phi, 1e-12, params.dt_phi_max, 1.5};
    mean_h += f.h;
    s.frames.push_back(std::move(f));
  }
  mean_h /= static_cast<double>(p.frames());
  Field2D u = p.op.adjoint(mean_h);
  const double cu_norm = std::sqrt(squared_norm(p.op.apply(u)));
  if (cu_norm > 0.0) u *= std::sqrt(squared_norm(mean_h)) / cu_norm;
  s.u = std::move(u);
  s.u_dual = VectorField2D::Zero(s.u.rows(), s.u.cols());
  return s;
}

namespace {

Field2D symmetric_mask(const SamplingMask& mask) {
  const Eigen::Index ny = mask.rows(), nx = mask.cols();
  Field2D m(ny, nx);
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      m(i, j) = 0.5 * ((mask.keep(i, j) ? 1.0 : 0.0) + (mask.keep((ny - i) % ny, (nx - j) % nx) ? 1.0 : 0.0));
  return m;
}

// Terms of the objective that involve h_t (without the 1/T factor).
double h_energy(const Field2D& h, const FrameState& s, const Field2D& cu_warped, const ComplexField2D& x,
                const SamplingMask& mask, const SolverParams& params) {
  const double data = 0.5 * params.gamma3 * (apply_F(h, mask) - x).abs2().sum();
  const double coupling = 0.5 * params.gamma2 * (s.det_inv * (h - cu_warped).square()).sum();
  const double fit = 0.5 / params.theta * squared_norm(s.f - h);
  return data + coupling + fit;
}

Field2D diagonal_h_solve(const Field2D& cu_warped, double mean_det, const FrameState& s, const Field2D& adjoint_data,
                         const SamplingMask& mask, const SolverParams& params) {
  const Field2D rhs = params.gamma2 * mean_det * cu_warped + params.gamma3 * adjoint_data + s.f / params.theta;
  const Field2D denom = params.gamma2 * mean_det + params.gamma3 * symmetric_mask(mask) + 1.0 / params.theta;
  ComplexField2D k = fft2(rhs);
  k /= denom.cast<std::complex<double>>();
  return ifft2(k).real();
}

}  // namespace

Field2D h_system_apply(const Field2D& h, const Field2D& det_inv, const SamplingMask& mask,
                       const SolverParams& params) {
  return params.gamma2 * det_inv * h + params.gamma3 * apply_F_normal(h, mask) + h / params.theta;
}

Field2D h_system_rhs(const JointState& s, int t, const LevelProblem& p, const SolverParams& params) {
  const auto idx = static_cast<std::size_t>(t);
  const FrameState& f = s.frames.at(idx);
  const Field2D cu_warped = warp(p.op.apply(s.u), f.phi_inv);
  return params.gamma2 * f.det_inv * cu_warped + params.gamma3 * p.zero_filled[idx] + f.f / params.theta;
}

Field2D update_h(const JointState& s, int t, const LevelProblem& p, const SolverParams& params, HUpdateInfo* info) {
  const auto idx = static_cast<std::size_t>(t);
  const FrameState& f = s.frames.at(idx);
  const SamplingMask& mask = p.masks[idx];
  const Field2D cu_warped = warp(p.op.apply(s.u), f.phi_inv);
  HUpdateInfo local;
  Field2D h;
  if (params.h_mode == HMode::cg) {
    const Field2D rhs =
        params.gamma2 * f.det_inv * cu_warped + params.gamma3 * p.zero_filled[idx] + f.f / params.theta;
    h = f.h;
    const auto op = [&](const Field2D& x) { return h_system_apply(x, f.det_inv, mask, params); };
    // The mean-determinant system is diagonal in k-space and serves as preconditioner.
    const Field2D diag =
        params.gamma2 * f.det_inv.mean() + params.gamma3 * symmetric_mask(mask) + 1.0 / params.theta;
    const auto precond = [&](const Field2D& r) {
      ComplexField2D k = fft2(r);
      k /= diag.cast<std::complex<double>>();
      return Field2D(ifft2(k).real());
    };
    const CgResult cg = preconditioned_conjugate_gradient(op, precond, rhs, h, params.cg_tol, params.cg_max);
    local.cg_iterations = cg.iterations;
    local.relative_residual = cg.relative_residual;
    if (!cg.converged || !h.allFinite()) {
      local.fell_back = true;
      h = diagonal_h_solve(cu_warped, f.det_inv.mean(), f, p.zero_filled[idx], mask, params);
    }
  } else {
    h = diagonal_h_solve(cu_warped, f.det_inv.mean(), f, p.zero_filled[idx], mask, params);
  }
  if (info) *info = local;
  return h;
}

EnergyBreakdown objective_value(const JointState& s, const LevelProblem& p, const SolverParams& params) {
  EnergyBreakdown e;
  const OgdenParams og = params.ogden();
  const Field2D cu = p.op.apply(s.u);
  const double inv_t = 1.0 / static_cast<double>(p.frames());
  for (int t = 0; t < p.frames(); ++t) {
    const auto idx = static_cast<std::size_t>(t);
    const FrameState& f = s.frames[idx];
    e.ogden += inv_t * ogden_energy(plus_identity(f.z), og);
    const MatrixField2D g = displacement_gradient(f.phi.displacement);
    e.z_penalty += inv_t * 0.5 * params.gamma1 *
                   ((f.z.m11 - g.m11).square().sum() + (f.z.m12 - g.m12).square().sum() +
                    (f.z.m21 - g.m21).square().sum() + (f.z.m22 - g.m22).square().sum());
    e.data += inv_t * 0.5 * params.gamma3 * (apply_F(f.h, p.masks[idx]) - p.kspace[idx]).abs2().sum();
    e.coupling += inv_t * 0.5 * params.gamma2 * (f.det_inv * (f.h - warp(cu, f.phi_inv)).square()).sum();
    e.f_penalty += inv_t * 0.5 / params.theta * squared_norm(f.f - f.h);
    e.wtv_f += inv_t * params.delta_weight * weighted_tv(f.f, f.g);
  }
  e.tv_u = params.alpha * tv(s.u);
  e.total = e.ogden + e.z_penalty + e.data + e.tv_u + e.coupling + e.f_penalty + e.wtv_f;
  return e;
}

namespace {

struct PhiCandidate {
  double energy = std::numeric_limits<double>::infinity();
  Deformation phi_inv;
  Field2D det_inv;
};

// gamma1/2 |z - grad v|^2 + gamma2/2 |(h - Cu o phi_eff^-1) sqrt(det)|^2 for a trial current map.
PhiCandidate phi_block(const Deformation& phi, const FrameState& s, const Field2D& cu, const SolverParams& params) {
  PhiCandidate c;
  const Deformation eff = compose_deformations(s.saved, phi);
  if (!(determinant(jacobian(eff)) > 0.0).all()) return c;
  c.phi_inv = invert_deformation(eff, params.inv_max_iter, params.inv_tol_px).inverse;
  c.det_inv = det_inverse_jacobian(eff, c.phi_inv);
  const MatrixField2D g = displacement_gradient(phi.displacement);
  const double penalty = (s.z.m11 - g.m11).square().sum() + (s.z.m12 - g.m12).square().sum() +
                         (s.z.m21 - g.m21).square().sum() + (s.z.m22 - g.m22).square().sum();
  const double coupling = (c.det_inv * (s.h - warp(cu, c.phi_inv)).square()).sum();
  c.energy = 0.5 * params.gamma1 * penalty + 0.5 * params.gamma2 * coupling;
  return c;
}

// Returns true on a regrid event.
bool phi_step(FrameState& s, const Field2D& cu, const SolverParams& params, SweepReport& report) {
  constexpr int kMaxTrials = 8;
  const PhiCandidate current = phi_block(s.phi, s, cu, params);
  const Field2D moving = warp(s.h, s.saved);
  StepControl& step = s.phi_step;
  for (int trial = 0; trial < kMaxTrials && step.dt >= step.dt_min; ++trial) {
    Deformation next = update_phi(s.phi, s.z, moving, cu, params.gamma1, params.gamma2, step.dt);
    const double min_det = determinant(jacobian(next)).minCoeff();
    PhiCandidate cand = min_det > 0.0 ? phi_block(next, s, cu, params) : PhiCandidate{};
    if (!(cand.energy <= current.energy)) {
      step.dt *= 0.5;
      continue;
    }
    step.dt = std::min(step.dt * step.grow, step.dt_max);
    if (min_det < s.regrid.tol) {
      // The accepted step would bring the map too close to folding: keep the previous
      // map as a saved piece and restart from the identity.
      ++s.regrid.regrid_count;
      s.regrid.saved_maps.push_back(s.phi);
      s.saved = compose_deformations(s.saved, s.phi);
      s.phi = Deformation::identity(s.phi.rows(), s.phi.cols());
      s.z = MatrixField2D::Zero(s.z.rows(), s.z.cols());
      s.z_step.dt = s.z_step.dt_max;
      refresh_inverse(s, params);
      return true;
    }
    s.phi = std::move(next);
    s.phi_inv = std::move(cand.phi_inv);
    s.det_inv = std::move(cand.det_inv);
    return false;
  }
  ++report.rejected_updates;
  return false;
}

double u_block(const Field2D& u, const JointState& s, const LevelProblem& p, const SolverParams& params) {
  const Field2D cu = p.op.apply(u);
  double coupling = 0.0;
  for (const FrameState& f : s.frames) coupling += (f.det_inv * (f.h - warp(cu, f.phi_inv)).square()).sum();
  return params.alpha * tv(u) + 0.5 * params.gamma2 * coupling / static_cast<double>(p.frames());
}

}  // namespace

SweepReport outer_iterate(JointState& s, const LevelProblem& p, const SolverParams& params, int level) {
  SweepReport report;
  const OgdenParams og = params.ogden();
  const Field2D cu = p.op.apply(s.u);

  for (int t = 0; t < p.frames(); ++t) {
    const auto idx = static_cast<std::size_t>(t);
    FrameState& f = s.frames[idx];

    if (!relax_z(f.z, f.phi.displacement, og, params.gamma1, f.z_step)) ++report.rejected_updates;
    if (phi_step(f, cu, params, report)) report.regrid_event = true;

    const Field2D cu_warped = warp(cu, f.phi_inv);
    HUpdateInfo info;
    Field2D h = update_h(s, t, p, params, &info);
    if (info.fell_back) {
      ++report.cg_failures;
      report.warnings.push_back("update_h: CG did not converge for frame " + std::to_string(t + 1) +
                                ", used the diagonal solve");
    }
    const double h_before = h_energy(f.h, f, cu_warped, p.kspace[idx], p.masks[idx], params);
    if (h_energy(h, f, cu_warped, p.kspace[idx], p.masks[idx], params) <= h_before)
      f.h = std::move(h);
    else
      ++report.rejected_updates;

    const Field2D weight = params.delta_weight * f.g.g;
    ChambolleResult prox = chambolle_prox(f.h, params.theta, weight,
                                          {params.iters_nn, params.chambolle_step, params.inner_tol}, &f.dual);
    f.dual = std::move(prox.p);
    if (prox_objective(prox.f, f.h, params.theta, weight) <= prox_objective(f.f, f.h, params.theta, weight))
      f.f = std::move(prox.f);
    else
      ++report.rejected_updates;
  }

  Field2D mean_warped = Field2D::Zero(p.lr_ny(), p.lr_nx());
  for (const FrameState& f : s.frames) mean_warped += warp(f.h, f.effective());
  mean_warped /= static_cast<double>(p.frames());
  QuadraticData data;
  data.weight = params.gamma2;
  data.normal = [&](const Field2D& x) { return p.op.normal(x); };
  data.shifted_inverse = [&](const Field2D& r, double c) { return p.op.solve_shifted(r, c); };
  data.rhs = p.op.adjoint(mean_warped);
  data.data_sq_norm = squared_norm(mean_warped);
  PrimalDualOptions opts;
  opts.alpha = params.alpha;
  opts.iterations = params.iters_nn;
  opts.tau = params.pd_tau;
  opts.sigma = params.pd_sigma;
  opts.cg_tol = params.cg_tol;
  opts.cg_max = params.cg_max;
  opts.tol = params.inner_tol;
  PrimalDualResult pd = primal_dual_tv(data, opts, s.u, &s.u_dual);
  report.cg_failures += pd.cg_failures;
  s.u_dual = std::move(pd.y);
  if (u_block(pd.u, s, p, params) <= u_block(s.u, s, p, params))
    s.u = std::move(pd.u);
  else
    ++report.rejected_updates;

  TraceEntry entry;
  entry.level = level;
  entry.sweep = s.trace.empty() || s.trace.back().level != level ? 1 : s.trace.back().sweep + 1;
  entry.regrid_event = report.regrid_event;
  entry.energy = objective_value(s, p, params);
  s.trace.push_back(entry);
  return report;
}

int count_monotone_violations(const std::vector<TraceEntry>& trace, double tol) {
  int violations = 0;
  for (std::size_t k = 1; k < trace.size(); ++k) {
    const TraceEntry& prev = trace[k - 1];
    const TraceEntry& cur = trace[k];
    if (cur.level != prev.level || cur.regrid_event) continue;
    if (cur.energy.total > prev.energy.total + tol * std::abs(prev.energy.total)) ++violations;
  }
  return violations;
}

namespace {

SolverParams level_params(const SolverParams& params, int level) {
  SolverParams q = params;
  q.sigma = params.sigma / std::pow(2.0, level);
  return q;
}

void prolong_into(const JointState& coarse, JointState& fine, const SolverParams& params) {
  fine.u = prolong_field(coarse.u, fine.u.rows(), fine.u.cols());
  fine.u_dual = VectorField2D::Zero(fine.u.rows(), fine.u.cols());
  for (std::size_t t = 0; t < fine.frames.size(); ++t) {
    const FrameState& c = coarse.frames[t];
    FrameState& f = fine.frames[t];
    const Eigen::Index ny = f.h.rows(), nx = f.h.cols();
    f.phi = prolong_deformation(c.phi, ny, nx);
    f.saved = prolong_deformation(c.saved, ny, nx);
    f.regrid.regrid_count = c.regrid.regrid_count;
    f.regrid.saved_maps.clear();
    for (const Deformation& m : c.regrid.saved_maps) f.regrid.saved_maps.push_back(prolong_deformation(m, ny, nx));
    f.z = prolong_field(c.z, ny, nx);
    f.h = prolong_field(c.h, ny, nx);
    f.f = prolong_field(c.f, ny, nx);
    refresh_inverse(f, params);
  }
}

}  // namespace

SolveResult solve_joint(const Dataset& d, const SolverParams& params) {
  params.validate();
  SolveResult result;

  std::vector<LevelProblem> problems{make_problem(d, params)};
  while (static_cast<int>(problems.size()) < params.levels_k) {
    const LevelProblem& last = problems.back();
    const bool even = last.lr_ny() % 2 == 0 && last.lr_nx() % 2 == 0 && last.op.spec().hr_ny % 2 == 0 &&
                      last.op.spec().hr_nx % 2 == 0;
    if (!even || std::min(last.lr_ny(), last.lr_nx()) / 2 < 8) {
      result.warnings.push_back("solve_joint: grid too small for " + std::to_string(params.levels_k) +
                                " levels, using " + std::to_string(problems.size()));
      break;
    }
    problems.push_back(coarsen(last));
  }

  JointState state;
  std::vector<TraceEntry> trace;
  for (int level = static_cast<int>(problems.size()) - 1; level >= 0; --level) {
    const LevelProblem& p = problems[static_cast<std::size_t>(level)];
    const SolverParams lp = level_params(params, level);
    JointState next = init_state(p, lp);
    if (level + 1 < static_cast<int>(problems.size())) prolong_into(state, next, lp);
    state = std::move(next);
    state.trace.push_back({level, 0, false, objective_value(state, p, lp)});

    for (int sweep = 0; sweep < params.outer_iters; ++sweep) {
      SweepReport r = outer_iterate(state, p, lp, level);
      ++result.sweeps;
      result.rejected_updates += r.rejected_updates;
      result.cg_failures += r.cg_failures;
      for (auto& w : r.warnings) result.warnings.push_back(std::move(w));
      const auto n = state.trace.size();
      if (params.stop_tol > 0.0 && sweep >= 5) {
        const double old = state.trace[n - 6].energy.total, now = state.trace[n - 1].energy.total;
        if ((old - now) < params.stop_tol * std::abs(old)) break;
      }
    }
    trace.insert(trace.end(), state.trace.begin(), state.trace.end());
    state.trace.clear();
  }

  result.u = state.u;
  for (const FrameState& f : state.frames) {
    result.phi.push_back(f.effective());
    result.h.push_back(f.h);
    result.regrid_counts.push_back(f.regrid.regrid_count);
    result.min_det.push_back(determinant(jacobian(result.phi.back())).minCoeff());
  }
  result.trace = std::move(trace);
  result.monotone_violations = count_monotone_violations(result.trace);
  return result;
}

SolveResult solve_sequential(const Dataset& d, const SolverParams& params) {
  params.validate();
  const LevelProblem p = make_problem(d, params);
  SolveResult result;

  PrimalDualOptions opts;
  opts.alpha = params.alpha;
  opts.iterations = params.iters_nn;
  opts.tau = params.pd_tau;
  opts.sigma = params.pd_sigma;
  opts.cg_tol = params.cg_tol;
  opts.cg_max = params.cg_max;
  opts.tol = params.inner_tol;

  for (int t = 0; t < p.frames(); ++t) {
    const auto idx = static_cast<std::size_t>(t);
    QuadraticData data;
    data.weight = params.gamma3;
    data.normal = [&p, idx](const Field2D& x) { return apply_F_normal(x, p.masks[idx]); };
    const Field2D sym = symmetric_mask(p.masks[idx]);
    data.shifted_inverse = [sym](const Field2D& r, double c) {
      ComplexField2D k = fft2(r);
      k /= (1.0 + c * sym).cast<std::complex<double>>();
      return Field2D(ifft2(k).real());
    };
    data.rhs = p.zero_filled[idx];
    data.data_sq_norm = p.kspace[idx].abs2().sum();
    PrimalDualResult r = primal_dual_tv(data, opts, p.zero_filled[idx]);
    result.cg_failures += r.cg_failures;
    result.stage_reconstructions.push_back(std::move(r.u));
  }

  RegistrationParams reg;
  reg.ogden = params.ogden();
  reg.gamma1 = params.gamma1;
  reg.gamma2 = params.gamma2;
  reg.dt_z = params.dt;
  reg.dt_phi = params.dt_phi;
  reg.dt_phi_max = params.dt_phi_max;
  reg.regrid_tol = params.regrid_tol;
  reg.iterations = params.outer_iters;
  reg.levels = params.levels_k;

  const Field2D& reference = result.stage_reconstructions.front();
  Field2D mean_warped = Field2D::Zero(p.lr_ny(), p.lr_nx());
  for (int t = 0; t < p.frames(); ++t) {
    const auto idx = static_cast<std::size_t>(t);
    const Field2D& frame = result.stage_reconstructions[idx];
    if (t == 0) {
      result.phi.push_back(Deformation::identity(p.lr_ny(), p.lr_nx()));
      result.regrid_counts.push_back(0);
    } else {
      RegistrationResult r = register_images(frame, reference, reg);
      for (auto& w : r.warnings) result.warnings.push_back(std::move(w));
      result.phi.push_back(std::move(r.phi));
      result.regrid_counts.push_back(r.total_regrids);
    }
    result.min_det.push_back(determinant(jacobian(result.phi.back())).minCoeff());
    result.stage_registered.push_back(warp(frame, result.phi.back()));
    mean_warped += result.stage_registered.back();
  }
  mean_warped /= static_cast<double>(p.frames());

  QuadraticData data;
  data.weight = params.gamma2;
  data.normal = [&p](const Field2D& x) { return p.op.normal(x); };
  data.shifted_inverse = [&p](const Field2D& r, double c) { return p.op.solve_shifted(r, c); };
  data.rhs = p.op.adjoint(mean_warped);
  data.data_sq_norm = squared_norm(mean_warped);
  Field2D u0 = data.rhs;
  const double cu_norm = std::sqrt(squared_norm(p.op.apply(u0)));
  if (cu_norm > 0.0) u0 *= std::sqrt(squared_norm(mean_warped)) / cu_norm;
  PrimalDualResult sr = primal_dual_tv(data, opts, u0);
  result.cg_failures += sr.cg_failures;
  result.u = std::move(sr.u);
  result.h = result.stage_reconstructions;
  return result;
}

}  // namespace vmtr
