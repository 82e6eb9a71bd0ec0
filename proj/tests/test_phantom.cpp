#include "support.hpp"
#include "vmtr/phantom.hpp"
#include "vmtr/registration.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace vmtr;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "vmtr_test_phantom";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Dataset small_dataset(bool with_truth, double sigma_n = 0.01) {
  ExperimentSpec e;
  e.frames = 3;
  e.hr_size = 32;
  e.amplitude = 1.0;
  e.sigma_n = sigma_n;
  Dataset d = simulate_experiment(e);
  if (!with_truth) d.truth.reset();
  return d;
}

}  // namespace

TEST_CASE("phantom rasterisation") {
  PhantomSpec empty;
  empty.ellipses.clear();
  empty.background = 0.25;
  empty.ny = 20;
  empty.nx = 24;
  CHECK((make_phantom(empty) - 0.25).abs().maxCoeff() < 1e-15);

  PhantomSpec disk;
  disk.ny = disk.nx = 128;
  disk.smoothing_px = 0.0;
  disk.ellipses = {Ellipse{0.5, 0.5, 0.25, 0.25, 0.0, 1.0}};
  const Field2D f = make_phantom(disk);
  const double r = 0.25 * 128.0;
  const double count = (f > 0.5).cast<double>().sum();
  CHECK(std::abs(count - M_PI * r * r) <= 0.03 * M_PI * r * r);

  const Field2D torso = make_phantom(PhantomSpec::torso());
  double top = 0.0;
  for (const Ellipse& e : PhantomSpec::torso().ellipses) top = std::max(top, e.intensity);
  CHECK(torso.minCoeff() >= 0.0);
  CHECK(torso.maxCoeff() <= top + 1e-12);
}

TEST_CASE("motion family") {
  const MotionSpec m;
  for (int t : {4, 8}) CHECK(magnitude(make_motion(m, t).displacement).maxCoeff() < 1e-12);
  CHECK(magnitude(make_motion(m, 2).displacement).maxCoeff() == doctest::Approx(m.amplitude).epsilon(1e-3));
  CHECK(make_motion(m, 1).displacement.x.abs().maxCoeff() == 0.0);

  for (int t = 1; t <= 8; ++t) {
    const Field2D analytic = motion_determinant(m, t);
    const Field2D numeric = determinant(jacobian(make_motion(m, t)));
    CHECK(analytic.minCoeff() > 0.2);
    CHECK(numeric.minCoeff() > 0.2);
    const Eigen::Index n = m.ny - 4;
    // Forward differences sit half a pixel off the analytic point value.
    CHECK(((analytic - numeric).abs() / analytic).block(2, 2, n, n).maxCoeff() <= 0.02);
  }

  MotionSpec wild;
  wild.amplitude = 40.0;
  CHECK_THROWS_AS(wild.validate(), std::invalid_argument);
}

TEST_CASE("motion inverse") {
  const MotionSpec m;
  const Deformation phi = make_motion(m, 2);
  const Deformation inv = motion_inverse(m, 2);
  CHECK(magnitude(compose_deformations(phi, inv).displacement).maxCoeff() < 0.05);
}

TEST_CASE("noiseless static acquisition reproduces C u") {
  const Field2D u = make_phantom(PhantomSpec::torso(32, 32));
  const SystemOperator op({1.0, 2, 32, 32});
  std::vector<Deformation> id(2, Deformation::identity(16, 16));
  std::vector<SamplingMask> full(2, SamplingMask::full(16, 16));
  const Dataset d = simulate_acquisition(u, id, id, op, full, 0.0, 1);
  for (int t = 0; t < 2; ++t) CHECK((d.zero_filled(t) - op.apply(u)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("noise statistics and masking") {
  const Field2D u = make_phantom(PhantomSpec::torso(128, 128));
  const SystemOperator op({1.0, 2, 128, 128});
  const auto masks = make_masks(8, 64, 64, 4.0, 0.08, 3);
  std::vector<Deformation> id(8, Deformation::identity(64, 64));
  const Dataset clean = simulate_acquisition(u, id, id, op, masks, 0.0, 5);
  const Dataset noisy = simulate_acquisition(u, id, id, op, masks, 0.01, 5);
  double power = 0.0;
  double kept = 0.0;
  for (int t = 0; t < 8; ++t) {
    const auto& m = masks[static_cast<std::size_t>(t)].keep;
    const ComplexField2D eta = noisy.kspace[static_cast<std::size_t>(t)] - clean.kspace[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < 64; ++i)
      for (Eigen::Index j = 0; j < 64; ++j) {
        if (m(i, j)) {
          power += std::norm(eta(i, j));
          kept += 1.0;
        } else {
          CHECK(noisy.kspace[static_cast<std::size_t>(t)](i, j) == std::complex<double>(0.0, 0.0));
        }
      }
  }
  CHECK(std::abs(power / kept - 2e-4) <= 0.05 * 2e-4);
}

TEST_CASE("simulated data is consistent with the forward model") {
  ExperimentSpec e;
  e.frames = 4;
  e.hr_size = 64;
  e.amplitude = 2.0;
  const Dataset noisy = simulate_experiment(e);
  e.sigma_n = 0.0;
  const Dataset clean = simulate_experiment(e);
  REQUIRE(noisy.truth);
  const SystemOperator op(e.system());
  const MotionSpec ms = e.motion();
  for (int t = 0; t < 4; ++t) {
    const auto idx = static_cast<std::size_t>(t);
    const Field2D h = warp(op.apply(noisy.truth->u), motion_inverse(ms, t + 1));
    const ComplexField2D residual = apply_F(h, noisy.masks[idx]) - noisy.kspace[idx];
    const ComplexField2D eta = noisy.kspace[idx] - clean.kspace[idx];
    CHECK(vmtr::testing::relative_gap(residual.abs2().sum(), eta.abs2().sum()) < 1e-10);
  }
}

TEST_CASE("experiment determinism") {
  const Dataset a = small_dataset(true), b = small_dataset(true);
  for (int t = 0; t < a.frames(); ++t) {
    CHECK((a.kspace[static_cast<std::size_t>(t)] - b.kspace[static_cast<std::size_t>(t)]).abs().maxCoeff() == 0.0);
    CHECK((a.masks[static_cast<std::size_t>(t)].keep == b.masks[static_cast<std::size_t>(t)].keep).all());
  }
  ExperimentSpec bad;
  bad.hr_size = 33;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("dataset file round trip") {
  const Dataset d = small_dataset(true);
  const auto p1 = scratch("a.vmtd"), p2 = scratch("b.vmtd");
  save_dataset(d, p1);
  const Dataset back = load_dataset(p1);
  save_dataset(back, p2);
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(back.frames() == d.frames());
  CHECK(back.hr_ny == d.hr_ny);
  CHECK(back.sigma_n == d.sigma_n);
  REQUIRE(back.truth);
  CHECK((back.truth->u - d.truth->u).abs().maxCoeff() == 0.0);
  CHECK(back.masks[1].acceleration == d.masks[1].acceleration);

  const Dataset bare = small_dataset(false);
  save_dataset(bare, p1);
  CHECK_FALSE(load_dataset(p1).truth.has_value());
}

TEST_CASE("dataset file corruption is detected") {
  const auto p = scratch("c.vmtd");
  save_dataset(small_dataset(true), p);
  const std::string good = read_bytes(p);

  std::string bad = good;
  bad[0] = 'X';
  write_bytes(p, bad);
  CHECK_THROWS_AS(load_dataset(p), FormatError);

  bad = good;
  bad[good.size() / 2] ^= 0x5A;
  write_bytes(p, bad);
  CHECK_THROWS_AS(load_dataset(p), FormatError);

  write_bytes(p, good.substr(0, good.size() - 9));
  CHECK_THROWS_AS(load_dataset(p), FormatError);

  CHECK_THROWS_AS(load_dataset(scratch("missing.vmtd")), IoError);
}
