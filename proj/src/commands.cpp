#include "vmtr/commands.hpp"

#include "vmtr/io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace vmtr {

namespace fs = std::filesystem;

namespace {

std::string frame_file(const std::string& stem, int t, const std::string& ext) {
  return stem + "_" + std::to_string(t) + ext;
}

std::string format(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (const T& v : values) {
    if (!out.empty()) out += ' ';
    if constexpr (std::is_floating_point_v<T>)
      out += format(v);
    else
      out += std::to_string(v);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

bool all_finite(const Field2D& f) { return f.allFinite(); }

std::string energy_csv(const std::vector<TraceEntry>& trace) {
  std::string out = "iteration,level,sweep,regrid";
  for (const std::string& n : EnergyBreakdown::names()) out += "," + n;
  out += ",total\n";
  int iteration = 0;
  for (const TraceEntry& e : trace) {
    out += std::to_string(iteration++) + "," + std::to_string(e.level) + "," + std::to_string(e.sweep) + "," +
           (e.regrid_event ? "1" : "0");
    for (double v : e.energy.parts()) out += "," + format(v);
    out += "," + format(e.energy.total) + "\n";
  }
  return out;
}

const std::string& require_key(const std::map<std::string, std::string>& m, const std::string& key,
                               const fs::path& where) {
  const auto it = m.find(key);
  if (it == m.end()) throw IoError(where.string() + ": missing entry '" + key + "'");
  return it->second;
}

template <typename T>
T manifest_number(const std::string& s, const std::string& key) {
  std::istringstream in(s);
  T v{};
  if (!(in >> v) || !(in >> std::ws).eof()) throw FormatError("manifest: malformed " + key + " '" + s + "'");
  return v;
}

std::pair<Eigen::Index, Eigen::Index> parse_dims(const std::string& s, const std::string& key) {
  const auto w = split_words(s);
  if (w.size() != 2) throw FormatError("manifest: malformed " + key);
  return {manifest_number<Eigen::Index>(w[0], key), manifest_number<Eigen::Index>(w[1], key)};
}

}  // namespace

void cmd_simulate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset d = simulate_experiment(cfg.experiment);
  if (cfg.dataset.has_parent_path()) ensure_directory(cfg.dataset.parent_path());
  save_dataset(d, cfg.dataset);
  log << "simulate: T=" << d.frames() << " hr=" << d.hr_ny << "x" << d.hr_nx << " frame=" << d.lr_ny << "x"
      << d.lr_nx << " accel=" << cfg.experiment.acceleration << " sigma_n=" << d.sigma_n
      << " seed=" << cfg.experiment.seed << " -> " << cfg.dataset.string() << "\n";
}

void cmd_reconstruct(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset d = load_dataset(cfg.dataset);
  ensure_directory(cfg.out);

  const auto start = std::chrono::steady_clock::now();
  const SolveResult r = cfg.mode == RunMode::joint ? solve_joint(d, cfg.solver) : solve_sequential(d, cfg.solver);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!all_finite(r.u)) throw NumericalError("reconstruct: u contains non-finite values");
  for (std::size_t t = 0; t < r.phi.size(); ++t) {
    if (!all_finite(r.phi[t].displacement.y) || !all_finite(r.phi[t].displacement.x))
      throw NumericalError("reconstruct: displacement of frame " + std::to_string(t + 1) + " is not finite");
    if (!(r.min_det[t] > 0.0))
      throw NumericalError("reconstruct: deformation of frame " + std::to_string(t + 1) + " folds (min det " +
                           format(r.min_det[t]) + ")");
  }

  std::ostringstream manifest;
  manifest << "# vmtr run manifest\n";
  manifest << "version=" << kVersion << "\n";
  manifest << "eigen=" << EIGEN_WORLD_VERSION << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n";
  manifest << "mode=" << get_config_value(cfg, "mode") << "\n";
  manifest << "u_dims=" << r.u.rows() << " " << r.u.cols() << "\n";
  manifest << "frame_dims=" << d.lr_ny << " " << d.lr_nx << "\n";
  manifest << "frames=" << d.frames() << "\n";
  manifest << "factor=" << d.factor << "\n";
  manifest << "raw_layout=row-major little-endian f64; v_t files hold the y plane then the x plane (pixels)\n";
  manifest << "wall_time_s=" << format(wall) << "\n";
  manifest << "sweeps=" << r.sweeps << "\n";
  manifest << "rejected_updates=" << r.rejected_updates << "\n";
  manifest << "monotone_violations=" << r.monotone_violations << "\n";
  manifest << "cg_failures=" << r.cg_failures << "\n";
  manifest << "regrid_counts=" << join(r.regrid_counts) << "\n";
  manifest << "min_det=" << join(r.min_det) << "\n";
  manifest << "has_h=" << (cfg.export_h ? 1 : 0) << "\n";
  for (const std::string& w : r.warnings) manifest << "warning=" << w << "\n";
  std::istringstream echo(dump_config(cfg));
  for (std::string line; std::getline(echo, line);) manifest << "config." << line << "\n";

  write_raw(cfg.out / "u.f64.raw", r.u);
  const PgmWindow uw = write_pgm(cfg.out / "u.pgm", r.u);
  manifest << "u_pgm_window=" << format(uw.lo) << " " << format(uw.hi) << "\n";
  for (std::size_t t = 0; t < r.phi.size(); ++t) {
    const int frame = static_cast<int>(t) + 1;
    write_raw(cfg.out / frame_file("v_t", frame, ".f64.raw"), r.phi[t].displacement);
    if (cfg.export_h) write_raw(cfg.out / frame_file("h_t", frame, ".f64.raw"), r.h[t]);
  }
  if (cfg.export_stages) {
    for (std::size_t t = 0; t < r.stage_reconstructions.size(); ++t) {
      const int frame = static_cast<int>(t) + 1;
      write_raw(cfg.out / frame_file("stage_recon_t", frame, ".f64.raw"), r.stage_reconstructions[t]);
      const PgmWindow w = write_pgm(cfg.out / frame_file("stage_recon_t", frame, ".pgm"), r.stage_reconstructions[t]);
      manifest << frame_file("stage_recon_t", frame, "_pgm_window=") << format(w.lo) << " " << format(w.hi) << "\n";
    }
    for (std::size_t t = 0; t < r.stage_registered.size(); ++t) {
      const int frame = static_cast<int>(t) + 1;
      write_raw(cfg.out / frame_file("stage_registered_t", frame, ".f64.raw"), r.stage_registered[t]);
      const PgmWindow w = write_pgm(cfg.out / frame_file("stage_registered_t", frame, ".pgm"), r.stage_registered[t]);
      manifest << frame_file("stage_registered_t", frame, "_pgm_window=") << format(w.lo) << " " << format(w.hi)
               << "\n";
    }
  }
  write_text(cfg.out / "energy.csv", energy_csv(r.trace));
  write_text(cfg.out / "manifest.txt", manifest.str());

  log << "reconstruct: mode=" << get_config_value(cfg, "mode") << " sweeps=" << r.sweeps
      << " monotone_violations=" << r.monotone_violations << " cg_failures=" << r.cg_failures
      << " wall=" << format(wall) << "s -> " << cfg.out.string() << "\n";
  for (const std::string& w : r.warnings) log << "warning: " << w << "\n";
}

std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path.string() + ": malformed line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

MetricsReport evaluate_results(const fs::path& result_dir, const Dataset& d) {
  d.validate();
  const fs::path manifest_path = result_dir / "manifest.txt";
  const auto manifest = read_manifest(manifest_path);
  const auto [uy, ux] = parse_dims(require_key(manifest, "u_dims", manifest_path), "u_dims");
  const auto [fy, fx] = parse_dims(require_key(manifest, "frame_dims", manifest_path), "frame_dims");
  const int frames = manifest_number<int>(require_key(manifest, "frames", manifest_path), "frames");
  const double blur_sigma = manifest_number<double>(require_key(manifest, "config.blur_sigma", manifest_path), "blur_sigma");
  if (frames != d.frames() || fy != d.lr_ny || fx != d.lr_nx || uy != d.hr_ny || ux != d.hr_nx)
    throw FormatError("evaluate: result directory does not match the dataset dimensions");
  if (require_key(manifest, "has_h", manifest_path) != "1")
    throw IoError("evaluate: result directory was written with export_h=false");

  const Field2D u = read_raw(result_dir / "u.f64.raw", uy, ux);
  const SystemOperator op({blur_sigma, d.factor, d.hr_ny, d.hr_nx});
  const Field2D cu = op.apply(u);

  MetricsReport m;
  std::vector<Deformation> phi;
  std::vector<Field2D> corrected, uncorrected;
  const Field2D reference = d.zero_filled(0);
  for (int t = 0; t < frames; ++t) {
    phi.emplace_back(read_raw_vector(result_dir / frame_file("v_t", t + 1, ".f64.raw"), fy, fx));
    const Field2D h = read_raw(result_dir / frame_file("h_t", t + 1, ".f64.raw"), fy, fx);
    corrected.push_back(warp(h, phi.back()));
    uncorrected.push_back(d.zero_filled(t));

    m.det.push_back(determinant(jacobian(phi.back())));
    const InversionResult inv = invert_deformation(phi.back(), 200, 1e-8);
    m.det_inv.push_back(determinant(jacobian(inv.inverse)));
    m.min_det.push_back(m.det.back().minCoeff());
    m.min_det_inv.push_back(m.det_inv.back().minCoeff());
  }
  const auto counts = split_words(require_key(manifest, "regrid_counts", manifest_path));
  for (const std::string& c : counts) m.regrid_counts.push_back(manifest_number<int>(c, "regrid_counts"));

  m.diffmap_uncorrected = mean_abs_difference(uncorrected, reference);
  m.diffmap_corrected = mean_abs_difference(corrected, cu);
  m.diff_uncorrected = m.diffmap_uncorrected.mean();
  m.diff_corrected = m.diffmap_corrected.mean();

  if (d.truth) {
    m.has_truth = true;
    m.psnr_db = psnr(u, d.truth->u);
    m.psnr_exact = std::isinf(m.psnr_db);
    m.ssim = ssim(u, d.truth->u);
    m.endpoint = endpoint_errors(phi, d.truth->phi);
  }
  return m;
}

std::string MetricsReport::to_csv() const {
  std::string out = "metric,frame,value\n";
  auto row = [&out](const std::string& name, int frame, const std::string& value) {
    out += name + "," + std::to_string(frame) + "," + value + "\n";
  };
  row("has_ground_truth", 0, has_truth ? "1" : "0");
  row("psnr_db", 0, has_truth ? format(psnr_db) : "NA");
  row("psnr_exact", 0, has_truth ? (psnr_exact ? "1" : "0") : "NA");
  row("ssim", 0, has_truth ? format(ssim) : "NA");
  row("endpoint_error_mean_px", 0, has_truth ? format(endpoint.mean) : "NA");
  row("endpoint_error_max_px", 0, has_truth ? format(endpoint.max) : "NA");
  row("diff_uncorrected_mean", 0, format(diff_uncorrected));
  row("diff_corrected_mean", 0, format(diff_corrected));
  row("diff_ratio", 0, diff_uncorrected > 0.0 ? format(diff_corrected / diff_uncorrected) : "NA");
  for (std::size_t t = 0; t < min_det.size(); ++t) {
    const int frame = static_cast<int>(t) + 1;
    row("endpoint_error_px", frame, has_truth ? format(endpoint.per_frame[t]) : "NA");
    row("min_det", frame, format(min_det[t]));
    row("min_det_inv", frame, format(min_det_inv[t]));
    row("regrid_count", frame, t < regrid_counts.size() ? std::to_string(regrid_counts[t]) : "NA");
  }
  return out;
}

MetricsReport cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const Dataset d = load_dataset(cfg.dataset);
  MetricsReport m = evaluate_results(cfg.out, d);

  write_text(cfg.out / "metrics.csv", m.to_csv());
  std::ostringstream windows;
  auto record = [&](const std::string& name, const Field2D& f) {
    const PgmWindow w = write_pgm(cfg.out / (name + ".pgm"), f);
    windows << "evaluate." << name << "_pgm_window=" << format(w.lo) << " " << format(w.hi) << "\n";
  };
  record("diffmap_uncorrected", m.diffmap_uncorrected);
  record("diffmap_corrected", m.diffmap_corrected);
  for (std::size_t t = 0; t < m.det.size(); ++t) {
    record(frame_file("det", static_cast<int>(t) + 1, ""), m.det[t]);
    record(frame_file("det_inv", static_cast<int>(t) + 1, ""), m.det_inv[t]);
  }
  windows << "evaluate.ssim=K1 0.01, K2 0.03, 11x11 Gaussian window std-dev 1.5, range of reference\n";
  windows << "evaluate.uncorrected_reference_frame=1\n";

  // Rewrite the manifest without stale evaluate.* lines so repeated evaluation is idempotent.
  const fs::path manifest_path = cfg.out / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read " + manifest_path.string());
  std::string kept;
  for (std::string line; std::getline(in, line);)
    if (line.rfind("evaluate.", 0) != 0) kept += line + "\n";
  in.close();
  write_text(manifest_path, kept + windows.str());

  log << "evaluate: ";
  if (m.has_truth)
    log << "psnr=" << format(m.psnr_db) << (m.psnr_exact ? " (exact)" : "") << " ssim=" << format(m.ssim)
        << " epe_mean=" << format(m.endpoint.mean) << " epe_max=" << format(m.endpoint.max) << " ";
  log << "diff corrected/uncorrected=" << format(m.diff_corrected) << "/" << format(m.diff_uncorrected) << "\n";
  return m;
}

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (command == "simulate")
      cmd_simulate(cfg, log);
    else if (command == "reconstruct")
      cmd_reconstruct(cfg, log);
    else if (command == "evaluate")
      cmd_evaluate(cfg, log);
    else {
      err << "unknown command '" << command << "'\n";
      return 1;
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    err << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace vmtr
