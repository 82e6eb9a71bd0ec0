#pragma once

// Alternating minimisation of the joint reconstruction / registration /
// super-resolution energy
//
//   1/T sum_t [ W(I + z_t) + g1/2 |z_t - grad v_t|^2 + g3/2 |F_t h_t - x_t|^2
//             + g2/2 |(h_t - (C u) o phi_t^-1) sqrt(det grad phi_t^-1)|^2
//             + 1/(2 theta) |f_t - h_t|^2 + delta TV_{g_t}(f_t) ]  +  alpha TV(u)
//
// and the reconstruct-register-super-resolve baseline built from the same pieces.

#include "vmtr/grid.hpp"
#include "vmtr/operators.hpp"
#include "vmtr/phantom.hpp"
#include "vmtr/registration.hpp"
#include "vmtr/tv.hpp"

#include <string>
#include <vector>

namespace vmtr {

enum class HMode { cg, diagonal };

struct SolverParams {
  double a1 = 1.0;
  double a2 = 50.0;
  double gamma1 = 5.0;
  double gamma2 = 1e5;
  double gamma3 = 15.0;
  double theta = 5.0;
  double sigma = 1.5;  // Canny pre-smoothing std-dev
  int levels_k = 2;
  int iters_nn = 500;  // Chambolle and primal-dual iteration caps
  double alpha = 0.01;

  double dt = 1e-3;          // z flow step (upper bound of the adaptive step)
  double dt_phi = 1e-3;      // initial phi flow step
  double dt_phi_max = 1e3;
  double regrid_tol = 0.05;
  double delta_weight = 1.0;
  double chambolle_step = 0.125;
  double pd_tau = 0.35355339059327373;
  double pd_sigma = 0.35355339059327373;
  double cg_tol = 1e-8;
  int cg_max = 500;
  int inv_max_iter = 50;
  double inv_tol_px = 1e-3;
  int outer_iters = 200;
  double canny_low = 0.1;
  double canny_high = 0.2;
  double floor_c = 0.01;

  double blur_sigma = 1.0;    // C = D B blur std-dev, high-resolution pixels
  double inner_tol = 1e-6;    // early exit of the Chambolle / primal-dual loops
  double stop_tol = 1e-7;     // relative energy decrease over 5 sweeps; 0 runs all sweeps
  HMode h_mode = HMode::cg;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  OgdenParams ogden() const { return {a1, a2}; }
};

/// Dataset pieces at one pyramid level.
struct LevelProblem {
  std::vector<ComplexField2D> kspace;
  std::vector<SamplingMask> masks;
  std::vector<Field2D> zero_filled;  // F_t^* x_t
  SystemOperator op;

  int frames() const { return static_cast<int>(kspace.size()); }
  Eigen::Index lr_ny() const { return op.spec().lr_ny(); }
  Eigen::Index lr_nx() const { return op.spec().lr_nx(); }
};

LevelProblem make_problem(const Dataset& d, const SolverParams& params);
/// Keeps the central half of k-space (scaled by 1/2 to stay unitary) and halves the blur.
LevelProblem coarsen(const LevelProblem& p);

struct FrameState {
  Deformation phi;        // current map since the last regrid
  Deformation saved;      // composition of the maps saved at regrids (identity if none)
  Deformation phi_inv;    // inverse of effective()
  Field2D det_inv;        // det grad(phi_inv), = 1 / (det grad(effective()) o phi_inv)
  MatrixField2D z;
  Field2D h, f;
  WeightField g;
  RegridState regrid;
  VectorField2D dual;     // Chambolle warm start
  StepControl z_step, phi_step;

  Deformation effective() const { return compose_deformations(saved, phi); }
};

struct EnergyBreakdown {
  double ogden = 0, z_penalty = 0, data = 0, tv_u = 0, coupling = 0, f_penalty = 0, wtv_f = 0;
  double total = 0;

  static std::vector<std::string> names();
  std::vector<double> parts() const;
};

struct TraceEntry {
  int level = 0;
  int sweep = 0;  // 0 is the initial state of the level
  bool regrid_event = false;
  EnergyBreakdown energy;
};

struct JointState {
  Field2D u;
  VectorField2D u_dual;
  std::vector<FrameState> frames;
  std::vector<TraceEntry> trace;
};

/// h_t = f_t = F^* x_t, identity maps, z = 0, Canny weights, u = C^T mean(h) rescaled so that
/// |C u| = |mean h|.
JointState init_state(const LevelProblem& p, const SolverParams& params);

/// Recomputes phi_inv and det_inv from phi and saved.
void refresh_inverse(FrameState& s, const SolverParams& params);

struct HUpdateInfo {
  int cg_iterations = 0;
  double relative_residual = 0.0;
  bool fell_back = false;
};

/// Minimiser over h_t of the h-dependent terms (both modes solve the same normal equations;
/// diagonal mode replaces det grad phi^-1 by its mean).
Field2D update_h(const JointState& s, int t, const LevelProblem& p, const SolverParams& params,
                 HUpdateInfo* info = nullptr);

/// The h system operator and right-hand side (cg form), exposed for residual checks.
Field2D h_system_apply(const Field2D& h, const Field2D& det_inv, const SamplingMask& mask,
                       const SolverParams& params);
Field2D h_system_rhs(const JointState& s, int t, const LevelProblem& p, const SolverParams& params);

EnergyBreakdown objective_value(const JointState& s, const LevelProblem& p, const SolverParams& params);

struct SweepReport {
  bool regrid_event = false;
  int rejected_updates = 0;
  int cg_failures = 0;
  std::vector<std::string> warnings;
};

/// One sweep: per frame z, phi (+ regrid check), inverse, h, f; then u. Appends to the trace.
SweepReport outer_iterate(JointState& s, const LevelProblem& p, const SolverParams& params, int level = 0);

struct SolveResult {
  Field2D u;
  std::vector<Deformation> phi;      // effective maps, frame grid
  std::vector<Field2D> h;
  std::vector<TraceEntry> trace;
  std::vector<int> regrid_counts;    // summed over levels
  std::vector<double> min_det;
  int monotone_violations = 0;
  int rejected_updates = 0;
  int cg_failures = 0;
  int sweeps = 0;
  std::vector<std::string> warnings;
  // Sequential pipeline intermediates (empty for the joint solve).
  std::vector<Field2D> stage_reconstructions;
  std::vector<Field2D> stage_registered;
};

/// Counts sweeps whose total exceeds its predecessor by more than tol (relative), skipping
/// regrid sweeps and level boundaries.
int count_monotone_violations(const std::vector<TraceEntry>& trace, double tol = 1e-8);

SolveResult solve_joint(const Dataset& d, const SolverParams& params);
SolveResult solve_sequential(const Dataset& d, const SolverParams& params);

}  // namespace vmtr
