#include "vmtr/phantom.hpp"

#include "vmtr/registration.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>

namespace vmtr {

namespace {

struct Extent {
  double y, x;
};

Extent half_extent(const Ellipse& e) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  return {std::hypot(e.rx * s, e.ry * c), std::hypot(e.rx * c, e.ry * s)};
}

}  // namespace

void PhantomSpec::validate() const {
  if (ny <= 0 || nx <= 0) throw std::invalid_argument("PhantomSpec: empty grid");
  if (!(background >= 0.0 && background <= 1.0)) throw std::invalid_argument("PhantomSpec: background outside [0, 1]");
  if (!(smoothing_px >= 0.0)) throw std::invalid_argument("PhantomSpec: smoothing must be >= 0");
  for (const Ellipse& e : ellipses) {
    if (!(e.intensity >= 0.0 && e.intensity <= 1.0))
      throw std::invalid_argument("PhantomSpec: ellipse intensity outside [0, 1]");
    if (!(e.ry > 0.0 && e.rx > 0.0)) throw std::invalid_argument("PhantomSpec: ellipse semi-axes must be positive");
    const Extent h = half_extent(e);
    if (e.cy - h.y < 0.0 || e.cy + h.y > 1.0 || e.cx - h.x < 0.0 || e.cx + h.x > 1.0)
      throw std::invalid_argument("PhantomSpec: ellipse leaves the unit square");
  }
}

PhantomSpec PhantomSpec::torso(Eigen::Index ny, Eigen::Index nx) {
  PhantomSpec s;
  s.ny = ny;
  s.nx = nx;
  s.background = 0.0;
  s.ellipses = {
      {0.50, 0.50, 0.44, 0.40, 0.0, 0.35},    // body
      {0.32, 0.30, 0.13, 0.08, 0.15, 0.08},   // left lung
      {0.32, 0.70, 0.13, 0.08, -0.15, 0.08},  // right lung
      {0.64, 0.36, 0.14, 0.19, 0.35, 0.62},   // liver
      {0.38, 0.54, 0.11, 0.13, -0.4, 0.80},   // heart wall
      {0.38, 0.56, 0.055, 0.065, -0.4, 1.0},  // cavity
      {0.63, 0.68, 0.08, 0.07, 0.0, 0.50},    // stomach
      {0.80, 0.50, 0.04, 0.04, 0.0, 0.90},    // vessel
      {0.72, 0.30, 0.03, 0.05, 0.6, 0.95},    // lesion
  };
  return s;
}

Field2D make_phantom(const PhantomSpec& spec) {
  spec.validate();
  Field2D img = Field2D::Constant(spec.ny, spec.nx, spec.background);
  for (const Ellipse& e : spec.ellipses) {
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    for (Eigen::Index i = 0; i < spec.ny; ++i) {
      const double dy = (static_cast<double>(i) + 0.5) / static_cast<double>(spec.ny) - e.cy;
      for (Eigen::Index j = 0; j < spec.nx; ++j) {
        const double dx = (static_cast<double>(j) + 0.5) / static_cast<double>(spec.nx) - e.cx;
        const double a = dx * c + dy * s;
        const double b = -dx * s + dy * c;
        if ((a / e.rx) * (a / e.rx) + (b / e.ry) * (b / e.ry) <= 1.0) img(i, j) = e.intensity;
      }
    }
  }
  return spec.smoothing_px > 0.0 ? gaussian_blur(img, spec.smoothing_px) : img;
}

double MotionSpec::envelope(int t) const {
  return std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
}

double MotionSpec::profile_peak() const {
  // max over Y of sin(pi Y) Y^s; dense scan then golden-section refinement.
  auto g = [this](double y) { return std::sin(std::numbers::pi * y) * std::pow(y, smoothness); };
  double best = 0.5;
  for (int k = 1; k < 1000; ++k) {
    const double y = k / 1000.0;
    if (g(y) > g(best)) best = y;
  }
  double lo = std::max(0.0, best - 1e-3), hi = std::min(1.0, best + 1e-3);
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int k = 0; k < 60; ++k) {
    const double m1 = hi - r * (hi - lo), m2 = lo + r * (hi - lo);
    if (g(m1) < g(m2))
      lo = m1;
    else
      hi = m2;
  }
  return g(0.5 * (lo + hi));
}

namespace {

// b and its Y-derivative with the normalising peak computed once.
struct Bump {
  double s, peak;

  double value(double Y, double X) const {
    return std::sin(std::numbers::pi * X) * std::sin(std::numbers::pi * Y) * std::pow(Y, s) / peak;
  }
  double dY(double Y, double X) const {
    const double pi = std::numbers::pi;
    const double tail = (Y > 0.0 && s > 0.0) ? s * std::pow(Y, s - 1.0) * std::sin(pi * Y) : 0.0;
    return std::sin(pi * X) * (pi * std::cos(pi * Y) * std::pow(Y, s) + tail) / peak;
  }
};

Bump bump_of(const MotionSpec& m) { return {m.smoothness, m.profile_peak()}; }

}  // namespace

double MotionSpec::profile(double Y, double X) const { return bump_of(*this).value(Y, X); }

double MotionSpec::profile_dY(double Y, double X) const { return bump_of(*this).dY(Y, X); }

void MotionSpec::validate() const {
  if (ny < 2 || nx < 2) throw std::invalid_argument("MotionSpec: grid must be at least 2x2");
  if (!(period > 0.0)) throw std::invalid_argument("MotionSpec: period must be positive");
  if (!(amplitude >= 0.0)) throw std::invalid_argument("MotionSpec: amplitude must be >= 0");
  if (!(smoothness >= 0.0)) throw std::invalid_argument("MotionSpec: smoothness must be >= 0");
  const Bump b = bump_of(*this);
  double steepest = 0.0;
  for (Eigen::Index i = 0; i < ny; ++i)
    for (Eigen::Index j = 0; j < nx; ++j)
      steepest = std::max(steepest, std::abs(b.dY(static_cast<double>(i) / static_cast<double>(ny - 1),
                                                         static_cast<double>(j) / static_cast<double>(nx - 1))));
  if (!(1.0 - amplitude * steepest / static_cast<double>(ny - 1) > 0.2))
    throw std::invalid_argument("MotionSpec: amplitude too large, det grad(phi) would drop to 0.2 or below");
}

Deformation make_motion(const MotionSpec& spec, int t) {
  spec.validate();
  const double a = spec.amplitude * spec.envelope(t);
  const Bump b = bump_of(spec);
  VectorField2D v = VectorField2D::Zero(spec.ny, spec.nx);
  for (Eigen::Index i = 0; i < spec.ny; ++i)
    for (Eigen::Index j = 0; j < spec.nx; ++j)
      v.y(i, j) = a * b.value(static_cast<double>(i) / static_cast<double>(spec.ny - 1),
                                   static_cast<double>(j) / static_cast<double>(spec.nx - 1));
  return Deformation(std::move(v));
}

Field2D motion_determinant(const MotionSpec& spec, int t) {
  spec.validate();
  const double a = spec.amplitude * spec.envelope(t) / static_cast<double>(spec.ny - 1);
  const Bump b = bump_of(spec);
  Field2D det(spec.ny, spec.nx);
  for (Eigen::Index i = 0; i < spec.ny; ++i)
    for (Eigen::Index j = 0; j < spec.nx; ++j)
      det(i, j) = 1.0 + a * b.dY(static_cast<double>(i) / static_cast<double>(spec.ny - 1),
                                            static_cast<double>(j) / static_cast<double>(spec.nx - 1));
  return det;
}

Deformation motion_inverse(const MotionSpec& spec, int t) {
  spec.validate();
  const double a = spec.amplitude * spec.envelope(t);
  const double top = static_cast<double>(spec.ny - 1);
  const Bump b = bump_of(spec);
  VectorField2D w = VectorField2D::Zero(spec.ny, spec.nx);
  for (Eigen::Index j = 0; j < spec.nx; ++j) {
    const double X = static_cast<double>(j) / static_cast<double>(spec.nx - 1);
    for (Eigen::Index i = 0; i < spec.ny; ++i) {
      const double target = static_cast<double>(i);
      // The map y -> y + v(y) is increasing and fixes both ends, so [0, top] brackets the root.
      double lo = 0.0, hi = top, y = target;
      for (int k = 0; k < 100; ++k) {
        const double r = y + a * b.value(y / top, X) - target;
        if (std::abs(r) < 1e-13) break;
        if (r > 0.0)
          hi = y;
        else
          lo = y;
        const double slope = 1.0 + a * b.dY(y / top, X) / top;
        double next = y - r / slope;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        y = next;
      }
      w.y(i, j) = y - target;
    }
  }
  return Deformation(std::move(w));
}

void Dataset::validate() const {
  if (kspace.empty()) throw std::invalid_argument("Dataset: no frames");
  if (masks.size() != kspace.size()) throw std::invalid_argument("Dataset: mask count differs from frame count");
  if (factor < 1 || hr_ny != lr_ny * factor || hr_nx != lr_nx * factor)
    throw std::invalid_argument("Dataset: high-resolution dims must equal frame dims times the factor");
  for (std::size_t t = 0; t < kspace.size(); ++t) {
    if (kspace[t].rows() != lr_ny || kspace[t].cols() != lr_nx)
      throw std::invalid_argument("Dataset: frame " + std::to_string(t + 1) + " has wrong dims");
    if (masks[t].rows() != lr_ny || masks[t].cols() != lr_nx)
      throw std::invalid_argument("Dataset: mask " + std::to_string(t + 1) + " has wrong dims");
  }
  if (truth) {
    if (truth->u.rows() != hr_ny || truth->u.cols() != hr_nx)
      throw std::invalid_argument("Dataset: ground-truth image has wrong dims");
    if (truth->phi.size() != kspace.size()) throw std::invalid_argument("Dataset: ground-truth motion count differs");
    for (const Deformation& d : truth->phi)
      if (d.rows() != lr_ny || d.cols() != lr_nx) throw std::invalid_argument("Dataset: ground-truth motion dims");
  }
}

Field2D Dataset::zero_filled(int t) const {
  return apply_F_adjoint(kspace.at(static_cast<std::size_t>(t)), masks.at(static_cast<std::size_t>(t)));
}

std::vector<SamplingMask> make_masks(int frames, Eigen::Index ny, Eigen::Index nx, double acceleration,
                                     double center_fraction, std::uint64_t seed) {
  std::vector<SamplingMask> masks;
  for (int t = 0; t < frames; ++t)
    masks.push_back(make_mask(ny, nx, acceleration, center_fraction,
                              seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(t + 1)));
  return masks;
}

Dataset simulate_acquisition(const Field2D& u_gt, const std::vector<Deformation>& motions,
                             const std::vector<Deformation>& inverses, const SystemOperator& op,
                             const std::vector<SamplingMask>& masks, double sigma_n, std::uint64_t seed) {
  if (motions.empty()) throw std::invalid_argument("simulate_acquisition: no frames");
  if (masks.size() != motions.size()) throw std::invalid_argument("simulate_acquisition: mask count differs");
  if (!inverses.empty() && inverses.size() != motions.size())
    throw std::invalid_argument("simulate_acquisition: inverse count differs");
  if (!(sigma_n >= 0.0)) throw std::invalid_argument("simulate_acquisition: sigma_n must be >= 0");

  const SystemOperatorSpec& s = op.spec();
  Dataset d;
  d.hr_ny = s.hr_ny;
  d.hr_nx = s.hr_nx;
  d.lr_ny = s.lr_ny();
  d.lr_nx = s.lr_nx();
  d.factor = s.downsample_factor;
  d.sigma_n = sigma_n;
  d.masks = masks;

  const Field2D cu = op.apply(u_gt);
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ull);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t t = 0; t < motions.size(); ++t) {
    if (motions[t].rows() != d.lr_ny || motions[t].cols() != d.lr_nx)
      throw std::invalid_argument("simulate_acquisition: motion dims differ from frame dims");
    const Deformation inv = inverses.empty() ? invert_deformation(motions[t], 200, 1e-10).inverse : inverses[t];
    ComplexField2D x = apply_F(warp(cu, inv), masks[t]);
    if (sigma_n > 0.0)
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          if (masks[t].keep(i, j)) {
            const double re = sigma_n * noise(rng);
            const double im = sigma_n * noise(rng);
            x(i, j) += std::complex<double>(re, im);
          }
    d.kspace.push_back(std::move(x));
  }
  d.truth = GroundTruth{u_gt, motions};
  d.validate();
  return d;
}

void ExperimentSpec::validate() const {
  if (frames < 1) throw std::invalid_argument("frames: must be >= 1");
  if (!(acceleration >= 1.0)) throw std::invalid_argument("accel: must be >= 1");
  if (!(center_fraction > 0.0 && center_fraction <= 1.0))
    throw std::invalid_argument("center_fraction: must lie in (0, 1]");
  if (!(sigma_n >= 0.0)) throw std::invalid_argument("sigma_n: must be >= 0");
  if (!(blur_sigma > 0.0)) throw std::invalid_argument("blur_sigma: must be > 0");
  if (factor < 1) throw std::invalid_argument("factor: must be >= 1");
  if (hr_size < 8 || hr_size % factor != 0)
    throw std::invalid_argument("hr_size: must be >= 8 and divisible by factor");
  motion().validate();
}

MotionSpec ExperimentSpec::motion() const {
  MotionSpec m;
  m.amplitude = amplitude;
  m.period = period;
  m.ny = hr_size / factor;
  m.nx = hr_size / factor;
  return m;
}

SystemOperatorSpec ExperimentSpec::system() const { return {blur_sigma, factor, hr_size, hr_size}; }

Dataset simulate_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const Field2D u = make_phantom(PhantomSpec::torso(spec.hr_size, spec.hr_size));
  const MotionSpec ms = spec.motion();
  std::vector<Deformation> motions, inverses;
  for (int t = 1; t <= spec.frames; ++t) {
    motions.push_back(make_motion(ms, t));
    inverses.push_back(motion_inverse(ms, t));
  }
  const SystemOperator op(spec.system());
  const auto masks = make_masks(spec.frames, ms.ny, ms.nx, spec.acceleration, spec.center_fraction, spec.seed);
  return simulate_acquisition(u, motions, inverses, op, masks, spec.sigma_n, spec.seed + 1);
}

namespace {

static_assert(std::endian::native == std::endian::little, "dataset I/O assumes a little-endian host");

constexpr char kMagic[4] = {'V', 'M', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T value) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf_.append(bytes, sizeof(T));
  }
  void put_bytes(const char* p, std::size_t n) { buf_.append(p, n); }
  std::string& data() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  unsigned char byte() { return static_cast<unsigned char>(get<char>()); }
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("dataset: truncated file");
  }
  std::size_t position() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  d.validate();
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(d.truth ? 1u : 0u);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.frames()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.hr_ny));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.hr_nx));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.lr_ny));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.lr_nx));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.factor));
  w.put<double>(d.sigma_n);
  for (int t = 0; t < d.frames(); ++t) {
    const auto& mask = d.masks[static_cast<std::size_t>(t)].keep;
    const auto& x = d.kspace[static_cast<std::size_t>(t)];
    for (Eigen::Index i = 0; i < d.lr_ny; ++i)
      for (Eigen::Index j = 0; j < d.lr_nx; ++j) w.put<std::uint8_t>(mask(i, j) ? 1 : 0);
    for (Eigen::Index i = 0; i < d.lr_ny; ++i)
      for (Eigen::Index j = 0; j < d.lr_nx; ++j) {
        w.put<double>(x(i, j).real());
        w.put<double>(x(i, j).imag());
      }
  }
  if (d.truth) {
    for (Eigen::Index i = 0; i < d.hr_ny; ++i)
      for (Eigen::Index j = 0; j < d.hr_nx; ++j) w.put<double>(d.truth->u(i, j));
    for (const Deformation& phi : d.truth->phi) {
      for (const Field2D* plane : {&phi.displacement.y, &phi.displacement.x})
        for (Eigen::Index i = 0; i < d.lr_ny; ++i)
          for (Eigen::Index j = 0; j < d.lr_nx; ++j) w.put<double>((*plane)(i, j));
    }
  }
  w.put<std::uint32_t>(crc_of(w.data().data(), w.data().size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("dataset: bad magic");
  if (buf.size() < 48) throw FormatError("dataset: truncated file");

  const std::size_t body = buf.size() - 4;
  Reader r(buf, body);
  r.get<std::uint32_t>();  // magic
  if (r.get<std::uint32_t>() != kVersion) throw FormatError("dataset: unsupported version");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + body, 4);
  if (stored_crc != crc_of(buf.data(), body)) throw FormatError("dataset: checksum mismatch");

  const std::uint32_t flags = r.get<std::uint32_t>();
  if (flags & ~1u) throw FormatError("dataset: unknown flag bits");
  Dataset d;
  const std::uint32_t frames = r.get<std::uint32_t>();
  d.hr_ny = r.get<std::uint32_t>();
  d.hr_nx = r.get<std::uint32_t>();
  d.lr_ny = r.get<std::uint32_t>();
  d.lr_nx = r.get<std::uint32_t>();
  d.factor = static_cast<int>(r.get<std::uint32_t>());
  d.sigma_n = r.get<double>();
  if (frames == 0 || d.lr_ny == 0 || d.lr_nx == 0) throw FormatError("dataset: empty header dims");
  const auto pixels = static_cast<std::size_t>(d.lr_ny * d.lr_nx);
  r.need(static_cast<std::size_t>(frames) * pixels * 17);

  for (std::uint32_t t = 0; t < frames; ++t) {
    SamplingMask mask;
    mask.keep = BoolField::Constant(d.lr_ny, d.lr_nx, false);
    for (Eigen::Index i = 0; i < d.lr_ny; ++i)
      for (Eigen::Index j = 0; j < d.lr_nx; ++j) {
        const unsigned char b = r.byte();
        if (b > 1) throw FormatError("dataset: mask byte is not 0/1");
        mask.keep(i, j) = b == 1;
      }
    const Eigen::Index kept = mask.kept_rows();
    mask.acceleration = kept > 0 ? static_cast<double>(d.lr_ny) / static_cast<double>(kept) : 1.0;
    ComplexField2D x(d.lr_ny, d.lr_nx);
    for (Eigen::Index i = 0; i < d.lr_ny; ++i)
      for (Eigen::Index j = 0; j < d.lr_nx; ++j) {
        const double re = r.get<double>();
        const double im = r.get<double>();
        x(i, j) = {re, im};
      }
    d.masks.push_back(std::move(mask));
    d.kspace.push_back(std::move(x));
  }
  if (flags & 1u) {
    GroundTruth gt;
    gt.u = Field2D(d.hr_ny, d.hr_nx);
    for (Eigen::Index i = 0; i < d.hr_ny; ++i)
      for (Eigen::Index j = 0; j < d.hr_nx; ++j) gt.u(i, j) = r.get<double>();
    for (std::uint32_t t = 0; t < frames; ++t) {
      VectorField2D v = VectorField2D::Zero(d.lr_ny, d.lr_nx);
      for (Field2D* plane : {&v.y, &v.x})
        for (Eigen::Index i = 0; i < d.lr_ny; ++i)
          for (Eigen::Index j = 0; j < d.lr_nx; ++j) (*plane)(i, j) = r.get<double>();
      gt.phi.emplace_back(std::move(v));
    }
    d.truth = std::move(gt);
  }
  if (r.position() != body) throw FormatError("dataset: trailing bytes before checksum");
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("dataset: inconsistent header: ") + e.what());
  }
  return d;
}

}  // namespace vmtr
