#include "support.hpp"
#include "vmtr/commands.hpp"
#include "vmtr/io.hpp"

#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

using namespace vmtr;
using namespace vmtr::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// CRC32 of everything before the 4-byte trailer, checked against the stored trailer.
unsigned long crc_of(const fs::path& p) {
  const std::string bytes = slurp(p);
  REQUIRE(bytes.size() > 4);
  const auto n = static_cast<uInt>(bytes.size() - 4);
  const unsigned long crc = crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), n);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + n, 4);
  CHECK(stored == crc);
  return crc;
}

RunConfig small_config(const fs::path& dir) {
  RunConfig c;
  c.experiment.frames = 2;
  c.experiment.hr_size = 32;
  c.experiment.amplitude = 1.0;
  c.solver.levels_k = 1;
  c.solver.outer_iters = 3;
  c.solver.iters_nn = 50;
  c.dataset = dir / "data.vmtd";
  c.out = dir / "out";
  return c;
}

std::string frame_name(const std::string& stem, int t, const std::string& ext) {
  return stem + "_" + std::to_string(t) + ext;
}

// Result directory written by hand: manifest plus u, v_t and h_t.
void write_result(const fs::path& out, const Dataset& d, const Field2D& u, const std::vector<Deformation>& phi,
                  const std::vector<Field2D>& h, double blur_sigma) {
  fs::create_directories(out);
  std::ofstream m(out / "manifest.txt");
  m << "u_dims=" << d.hr_ny << " " << d.hr_nx << "\n";
  m << "frame_dims=" << d.lr_ny << " " << d.lr_nx << "\n";
  m << "frames=" << d.frames() << "\nhas_h=1\nconfig.blur_sigma=" << blur_sigma << "\nregrid_counts=";
  for (int t = 0; t < d.frames(); ++t) m << (t ? " " : "") << 0;
  m << "\n";
  write_raw(out / "u.f64.raw", u);
  for (int t = 0; t < d.frames(); ++t) {
    write_raw(out / frame_name("v_t", t + 1, ".f64.raw"), phi[static_cast<std::size_t>(t)].displacement);
    write_raw(out / frame_name("h_t", t + 1, ".f64.raw"), h[static_cast<std::size_t>(t)]);
  }
}

Deformation translation(Eigen::Index n, double dx) {
  VectorField2D v = VectorField2D::Zero(n, n);
  v.x.setConstant(dx);
  return Deformation(v);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VMTR_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("simulate writes a loadable, reproducible dataset") {
  const fs::path dir = scratch_dir("cmd_sim");
  RunConfig c = small_config(dir);
  std::ostringstream log;
  cmd_simulate(c, log);
  CHECK(log.str().find("T=2") != std::string::npos);
  const Dataset d = load_dataset(c.dataset);
  CHECK(d.frames() == 2);
  CHECK(d.hr_ny == 32);
  CHECK(d.lr_ny == 16);
  CHECK(d.factor == 2);
  CHECK(d.sigma_n == c.experiment.sigma_n);
  REQUIRE(d.truth.has_value());

  const unsigned long first = crc_of(c.dataset);
  c.dataset = dir / "again.vmtd";
  cmd_simulate(c, log);
  CHECK(crc_of(c.dataset) == first);
  CHECK(slurp(c.dataset) == slurp(dir / "data.vmtd"));

  c.experiment.seed = 43;
  c.dataset = dir / "other.vmtd";
  cmd_simulate(c, log);
  CHECK(crc_of(c.dataset) != first);

  c.experiment.acceleration = 1.0;
  c.dataset = dir / "full.vmtd";
  cmd_simulate(c, log);
  for (const SamplingMask& m : load_dataset(c.dataset).masks) CHECK(m.keep.all());
}

TEST_CASE("reconstruct writes every declared file") {
  const fs::path dir = scratch_dir("cmd_rec");
  RunConfig c = small_config(dir);
  std::ostringstream log;
  cmd_simulate(c, log);
  cmd_reconstruct(c, log);
  for (const char* f : {"u.f64.raw", "u.pgm", "energy.csv", "manifest.txt", "v_t_1.f64.raw", "v_t_2.f64.raw",
                        "h_t_1.f64.raw", "h_t_2.f64.raw"})
    CHECK_MESSAGE(fs::exists(c.out / f), f);
  CHECK(fs::file_size(c.out / "u.f64.raw") == 32 * 32 * 8);
  CHECK(fs::file_size(c.out / "v_t_1.f64.raw") == 2 * 16 * 16 * 8);

  const auto manifest = read_manifest(c.out / "manifest.txt");
  CHECK(manifest.at("u_dims") == "32 32");
  CHECK(manifest.at("frame_dims") == "16 16");
  CHECK(manifest.at("mode") == "joint");
  CHECK(manifest.at("version") == kVersion);
  CHECK(manifest.count("wall_time_s") == 1);
  CHECK(manifest.at("config.outer_iters") == "3");

  // total column equals the row sum of the term columns
  std::istringstream csv(slurp(c.out / "energy.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("iteration,level,sweep,regrid,", 0) == 0);
  CHECK(header.substr(header.size() - 6) == ",total");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) {
    std::vector<double> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(std::stod(cell));
    double sum = 0.0;
    for (std::size_t k = 4; k + 1 < cells.size(); ++k) sum += cells[k];
    CHECK(relative_gap(sum, cells.back()) <= 1e-12);
    ++rows;
  }
  CHECK(rows >= 2);

  c.out = dir / "seq";
  c.mode = RunMode::sequential;
  cmd_reconstruct(c, log);
  for (int t = 1; t <= 2; ++t) {
    CHECK(fs::exists(c.out / frame_name("stage_recon_t", t, ".f64.raw")));
    CHECK(fs::exists(c.out / frame_name("stage_recon_t", t, ".pgm")));
    CHECK(fs::exists(c.out / frame_name("stage_registered_t", t, ".f64.raw")));
    CHECK(fs::exists(c.out / frame_name("stage_registered_t", t, ".pgm")));
  }
  CHECK(read_manifest(c.out / "manifest.txt").at("mode") == "sequential");
}

TEST_CASE("evaluate on the true solution reports an exact reconstruction") {
  const fs::path dir = scratch_dir("cmd_eval_exact");
  RunConfig c = small_config(dir);
  std::ostringstream log;
  cmd_simulate(c, log);
  const Dataset d = load_dataset(c.dataset);
  const SystemOperator op(c.experiment.system());
  const Field2D cu = op.apply(d.truth->u);
  std::vector<Field2D> h;
  for (const Deformation& phi : d.truth->phi) h.push_back(warp(cu, invert_deformation(phi, 200, 1e-10).inverse));
  write_result(c.out, d, d.truth->u, d.truth->phi, h, c.experiment.blur_sigma);

  const MetricsReport m = cmd_evaluate(c, log);
  CHECK(std::isinf(m.psnr_db));
  CHECK(m.psnr_exact);
  CHECK(m.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.endpoint.mean == 0.0);
  CHECK(m.endpoint.max == 0.0);
  const std::string csv = slurp(c.out / "metrics.csv");
  CHECK(csv.find("psnr_exact,0,1") != std::string::npos);
  CHECK(csv.find("psnr_db,0,inf") != std::string::npos);
  for (const char* f : {"diffmap_uncorrected.pgm", "diffmap_corrected.pgm", "det_1.pgm", "det_2.pgm"})
    CHECK_MESSAGE(fs::exists(c.out / f), f);
  const auto manifest = read_manifest(c.out / "manifest.txt");
  CHECK(manifest.count("evaluate.diffmap_corrected_pgm_window") == 1);
  CHECK(manifest.at("evaluate.uncorrected_reference_frame") == "1");

  // evaluation reads only the files, so a repeat gives the same report
  cmd_evaluate(c, log);
  CHECK(slurp(c.out / "metrics.csv") == csv);
  CHECK(evaluate_results(c.out, d).to_csv() == csv);
}

TEST_CASE("evaluate without ground truth flags the missing metrics") {
  const fs::path dir = scratch_dir("cmd_eval_nogt");
  RunConfig c = small_config(dir);
  std::ostringstream log;
  cmd_simulate(c, log);
  Dataset d = load_dataset(c.dataset);
  const Field2D u = d.truth->u;
  const auto phi = d.truth->phi;
  d.truth.reset();
  save_dataset(d, c.dataset);
  std::vector<Field2D> h{d.zero_filled(0), d.zero_filled(1)};
  write_result(c.out, d, u, phi, h, 1.0);
  const MetricsReport m = cmd_evaluate(c, log);
  CHECK_FALSE(m.has_truth);
  const std::string csv = slurp(c.out / "metrics.csv");
  CHECK(csv.find("psnr_db,0,NA") != std::string::npos);
  CHECK(csv.find("has_ground_truth,0,0") != std::string::npos);
}

TEST_CASE("identity maps on static data give equal difference maps") {
  const fs::path dir = scratch_dir("cmd_eval_static");
  const Field2D u = make_phantom(PhantomSpec::torso(32, 32));
  const SystemOperator op({1.0, 2, 32, 32});
  const std::vector<Deformation> id(3, Deformation::identity(16, 16));
  const Dataset d = simulate_acquisition(u, id, id, op, make_masks(3, 16, 16, 1.0, 0.08, 3), 0.0, 4);
  std::vector<Field2D> h;
  for (int t = 0; t < 3; ++t) h.push_back(d.zero_filled(t));
  write_result(dir, d, u, id, h, 1.0);
  const MetricsReport m = evaluate_results(dir, d);
  CHECK((m.diffmap_corrected - m.diffmap_uncorrected).abs().maxCoeff() <= 1e-12);
  CHECK(m.endpoint.mean == 0.0);
  for (double v : m.min_det) CHECK(v == 1.0);
}

TEST_CASE("known translation is corrected") {
  const fs::path dir = scratch_dir("cmd_eval_shift");
  const Field2D u = make_phantom(PhantomSpec::torso(64, 64));
  const SystemOperator op({1.0, 2, 64, 64});
  const std::vector<Deformation> motion{Deformation::identity(32, 32), translation(32, 2.0)};
  const std::vector<Deformation> inverse{Deformation::identity(32, 32), translation(32, -2.0)};
  const Dataset d = simulate_acquisition(u, motion, inverse, op, make_masks(2, 32, 32, 1.0, 0.08, 3), 0.0, 4);
  std::vector<Field2D> h{d.zero_filled(0), d.zero_filled(1)};
  write_result(dir, d, u, motion, h, 1.0);
  const MetricsReport m = evaluate_results(dir, d);
  CHECK(m.endpoint.mean == 0.0);
  MESSAGE("uncorrected ", m.diff_uncorrected, " corrected ", m.diff_corrected);
  CHECK(m.diff_uncorrected > 5.0 * m.diff_corrected);
}

TEST_CASE("evaluate rejects missing or mismatched result files") {
  const fs::path dir = scratch_dir("cmd_eval_missing");
  RunConfig c = small_config(dir);
  std::ostringstream log;
  cmd_simulate(c, log);
  CHECK_THROWS_AS(cmd_evaluate(c, log), IoError);
  cmd_reconstruct(c, log);
  fs::remove(c.out / "h_t_2.f64.raw");
  CHECK_THROWS_AS(cmd_evaluate(c, log), IoError);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch_dir("cmd_exit");
  const std::string base = " --hr-size 32 --frames 2 --amplitude 1 --levels_k 1 --outer_iters 2 --dataset " +
                           (dir / "d.vmtd").string() + " --out " + (dir / "out").string();
  CHECK(run_cli("simulate" + base) == 0);
  CHECK(run_cli("simulate --gamma1=-1" + base) == 1);
  CHECK(run_cli("simulate --no-such-key=1" + base) == 1);
  CHECK(run_cli("reconstruct --dataset " + (dir / "absent.vmtd").string()) == 2);
  CHECK(run_cli("evaluate" + base) == 2);

  // non-finite data surfaces as a numerical failure
  Dataset d = load_dataset(dir / "d.vmtd");
  d.kspace[1](0, 0) = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  save_dataset(d, dir / "nan.vmtd");
  CHECK(run_cli("reconstruct --levels_k 1 --outer_iters 2 --dataset " + (dir / "nan.vmtd").string() + " --out " +
                (dir / "nan").string()) == 3);
  CHECK(run_cli("reconstruct" + base) == 0);
  CHECK(run_cli("evaluate" + base) == 0);
  CHECK(run_cli("--version") == 0);
}
