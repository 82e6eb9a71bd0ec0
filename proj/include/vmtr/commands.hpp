#pragma once

// simulate / reconstruct / evaluate, as called by the vmtr tool and the tests.

#include "vmtr/config.hpp"
#include "vmtr/metrics.hpp"

#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vmtr {

inline constexpr const char* kVersion = "0.1.0";

/// Raised for non-finite results or folded deformations (exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Writes cfg.dataset from cfg.experiment and prints a one-line summary.
void cmd_simulate(const RunConfig& cfg, std::ostream& log);

/// Loads cfg.dataset, runs the solver selected by cfg.mode and writes the result files to cfg.out.
void cmd_reconstruct(const RunConfig& cfg, std::ostream& log);

/// Everything cmd_evaluate derives from a result directory and its dataset.
struct MetricsReport {
  bool has_truth = false;
  double psnr_db = 0.0;
  bool psnr_exact = false;
  double ssim = 0.0;
  EndpointSummary endpoint;
  std::vector<double> min_det, min_det_inv;
  std::vector<int> regrid_counts;
  double diff_uncorrected = 0.0;  // pixel means of the maps below
  double diff_corrected = 0.0;
  Field2D diffmap_uncorrected, diffmap_corrected;
  std::vector<Field2D> det, det_inv;

  /// metric,frame,value rows; frame 0 means "all frames".
  std::string to_csv() const;
};

/// Reads only persisted files from `result_dir` (manifest, u, v_t, h_t).
MetricsReport evaluate_results(const std::filesystem::path& result_dir, const Dataset& d);

/// Writes metrics.csv, difference and determinant maps into cfg.out and records the PGM windows.
MetricsReport cmd_evaluate(const RunConfig& cfg, std::ostream& log);

/// key=value lines; '#' lines skipped. Repeated keys keep the last value.
std::map<std::string, std::string> read_manifest(const std::filesystem::path& path);

/// Runs one command and maps failures to exit codes: 1 config, 2 I/O, 3 numerical.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& log, std::ostream& err);

}  // namespace vmtr
