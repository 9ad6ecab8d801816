#include "cloudtomo/optics.hpp"

#include "cloudtomo/errors.hpp"
#include "cloudtomo/io.hpp"
#include "cloudtomo/mie.hpp"
#include "cloudtomo/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cloudtomo {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr char kCacheMagic[] = "CLOUDTOMO-OPTICS-1\n";

// Exact integral of a piecewise-linear f(theta) times sin(theta) over the axis (radians).
double integrate_sin_weighted(const std::vector<double>& angles_deg, const Eigen::ArrayXd& f) {
  double total = 0.0;
  for (std::size_t a = 0; a + 1 < angles_deg.size(); ++a) {
    const double lo = angles_deg[a] * kPi / 180.0;
    const double hi = angles_deg[a + 1] * kPi / 180.0;
    const double h = hi - lo;
    const double slope = (f[a + 1] - f[a]) / h;
    total += f[a] * (std::cos(lo) - std::cos(hi)) +
             slope * (std::sin(hi) - std::sin(lo) - h * std::cos(hi));
  }
  return total;
}

struct Span {
  std::size_t i = 0;
  double t = 0.0;
  double h = 1.0;
  bool clamped = false;
};

Span locate(const std::vector<double>& axis, double x) {
  const std::size_t n = axis.size();
  if (n < 2) return {0, 0.0, 1.0, true};
  if (x <= axis.front()) return {0, 0.0, axis[1] - axis[0], x < axis.front()};
  if (x >= axis.back()) return {n - 2, 1.0, axis[n - 1] - axis[n - 2], x > axis.back()};
  const auto it = std::upper_bound(axis.begin(), axis.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - axis.begin()) - 1;
  const double h = axis[i + 1] - axis[i];
  return {i, (x - axis[i]) / h, h, false};
}

struct Hermite {
  double value;
  double slope;
};

Hermite hermite(const Span& s, double v0, double m0, double v1, double m1) {
  const double t = s.t, t2 = t * t, t3 = t2 * t;
  const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
  const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
  const double value = h00 * v0 + h10 * s.h * m0 + h01 * v1 + h11 * s.h * m1;
  if (s.clamped) return {value, 0.0};
  const double g00 = 6 * t2 - 6 * t, g10 = 3 * t2 - 4 * t + 1;
  const double g01 = -6 * t2 + 6 * t, g11 = 3 * t2 - 2 * t;
  return {value, (g00 * v0 + g10 * s.h * m0 + g01 * v1 + g11 * s.h * m1) / s.h};
}

template <typename Vec>
Vec central_slopes(const std::vector<double>& axis, const Vec& v) {
  const Eigen::Index n = v.rows();
  Vec slopes(v.rows(), v.cols());
  if (n < 2) {
    slopes.setZero();
    return slopes;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index lo = std::max<Eigen::Index>(i - 1, 0);
    const Eigen::Index hi = std::min<Eigen::Index>(i + 1, n - 1);
    slopes.row(i) = (v.row(hi) - v.row(lo)) / (axis[hi] - axis[lo]);
  }
  return slopes;
}

void put(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename Derived>
void put_array(std::string& out, const Eigen::DenseBase<Derived>& a) {
  const Eigen::Index count = a.size();
  put(out, &count, sizeof(count));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic> m = a;
  put(out, m.data(), sizeof(double) * static_cast<std::size_t>(count));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  void get(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw std::runtime_error("truncated optics cache");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  void get_matrix(Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
    Eigen::Index count = 0;
    get(&count, sizeof(count));
    if (count != rows * cols) throw std::runtime_error("optics cache shape mismatch");
    m.resize(rows, cols);
    get(m.data(), sizeof(double) * static_cast<std::size_t>(count));
  }
  void get_vector(Eigen::VectorXd& v, Eigen::Index rows) {
    Eigen::MatrixXd m;
    get_matrix(m, rows, 1);
    v = m.col(0);
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<double> OpticsTableSpec::re_axis() const {
  if (!(re_step > 0.0) || !(re_max >= re_min) || !(re_min > 0.0))
    throw std::invalid_argument("invalid r_e axis");
  const int steps = static_cast<int>(std::lround((re_max - re_min) / re_step));
  std::vector<double> axis(static_cast<std::size_t>(steps) + 1);
  for (int i = 0; i <= steps; ++i) axis[i] = re_min + i * re_step;
  return axis;
}

std::vector<double> OpticsTableSpec::angle_axis() const {
  if (angle_count < 2) throw std::invalid_argument("angle axis needs at least two nodes");
  std::vector<double> axis(static_cast<std::size_t>(angle_count));
  for (int a = 0; a < angle_count; ++a) axis[a] = 180.0 * a / (angle_count - 1);
  return axis;
}

std::string OpticsTableSpec::cache_key() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "grid=2;lambda_nm=%.17g;m=%.17g%+.17gi;ve=%.17g;re=%.17g:%.17g:%.17g;angles=%d;radii=%d",
                wavelength_nm, refractive_index.real(), refractive_index.imag(), effective_variance, re_min,
                re_max, re_step, angle_count, radius_nodes);
  return buf;
}

BulkOpticsNode bulk_from_distribution(const DropletDistribution& dist, double wavelength_nm,
                                      std::complex<double> m, std::span<const double> angles_deg,
                                      int radius_nodes) {
  dist.validate();
  if (!(wavelength_nm > 0.0)) throw std::domain_error("wavelength must be positive");
  if (radius_nodes < 2) throw std::invalid_argument("radius grid needs at least two nodes");
  using boost::math::gamma_p;
  using boost::math::gamma_p_inv;
  using boost::math::gamma_q;

  // Cross-section weight r^2 n(r) is Gamma(1/v_e, theta); volume weight r^3 n(r) is Gamma(1/v_e + 1, theta).
  const double theta = dist.scale();
  const double area_shape = 1.0 / dist.effective_variance;
  const double r_lo = theta * gamma_p_inv(area_shape, 1e-9);
  const double r_hi = std::max(dist.effective_radius * (1.0 + 20.0 * dist.effective_variance),
                               theta * gamma_p_inv(area_shape + 1.0, 1.0 - 1e-9));
  const double tail = std::max(gamma_p(area_shape, r_lo / theta) + gamma_q(area_shape, r_hi / theta),
                               gamma_p(area_shape + 1.0, r_lo / theta) +
                                   gamma_q(area_shape + 1.0, r_hi / theta));
  if (tail > 1e-4) throw NumericalError("radius quadrature misses more than 1e-4 of the distribution");

  const double wavelength_um = wavelength_nm * 1e-3;
  const double wavenumber = 2.0 * kPi / wavelength_um;
  const std::size_t nang = angles_deg.size();
  // The support scales with r_e, so du depends only on v_e. Snapping the grid to the global
  // lattice exp(j du) makes every r_e node sample the same radii, which keeps unresolved
  // Mie resonances from adding node-to-node noise to the table.
  const double du = std::log(r_hi / r_lo) / (radius_nodes - 1);
  const double j0 = std::floor(std::log(r_lo) / du);
  const DropletDistribution unit{1.0, dist.effective_radius, dist.effective_variance};

  double c_ext = 0.0, c_sca = 0.0, volume = 0.0;
  Eigen::ArrayXd s11 = Eigen::ArrayXd::Zero(nang), s12 = s11, s33 = s11, s34 = s11;
  for (int q = 0; q <= radius_nodes; ++q) {
    const double r = std::exp((j0 + q) * du);
    // Trapezoid in ln r: dr = r du.
    const double w = gamma_density(unit, r) * r * du * ((q == 0 || q == radius_nodes) ? 0.5 : 1.0);
    if (w == 0.0) continue;
    const MieResult mie = mie_single(wavenumber * r, m, angles_deg);
    const double geometric = kPi * r * r;
    c_ext += w * mie.q_ext * geometric;
    c_sca += w * mie.q_sca * geometric;
    volume += w * r * r * r;
    for (std::size_t a = 0; a < nang; ++a) {
      const double n1 = std::norm(mie.s1[a]), n2 = std::norm(mie.s2[a]);
      const std::complex<double> cross = mie.s1[a] * std::conj(mie.s2[a]);
      s11[a] += w * 0.5 * (n1 + n2);
      s12[a] += w * 0.5 * (n2 - n1);
      s33[a] += w * cross.real();
      s34[a] += w * -cross.imag();
    }
  }

  BulkOpticsNode node;
  node.effective_radius = dist.effective_radius;
  node.tail_mass = tail;
  // C in um^2 -> m^2; volume in um^3 -> m^3.
  node.mass_extinction = c_ext * 1e-12 / (4.0 / 3.0 * kPi * kWaterDensity * volume * 1e-18);
  node.single_scatter_albedo = std::min(1.0, c_sca / c_ext);
  const double to_phase = 4.0 * kPi / (wavenumber * wavenumber * c_sca);
  node.p11 = s11 * to_phase;
  node.p12 = s12 * to_phase;
  node.p33 = s33 * to_phase;
  node.p34 = s34 * to_phase;
  const std::vector<double> axis(angles_deg.begin(), angles_deg.end());
  node.normalization = 0.5 * integrate_sin_weighted(axis, node.p11);
  node.p11 /= node.normalization;
  node.p12 /= node.normalization;
  node.p33 /= node.normalization;
  node.p34 /= node.normalization;
  return node;
}

Eigen::Matrix4d rayleigh_phase(double theta_deg) {
  const double c = std::cos(theta_deg * kPi / 180.0);
  const double s2 = 1.0 - c * c;
  Eigen::Matrix4d p = Eigen::Matrix4d::Zero();
  p(0, 0) = p(1, 1) = 0.75 * (1.0 + c * c);
  p(0, 1) = p(1, 0) = -0.75 * s2;
  p(2, 2) = p(3, 3) = 1.5 * c;
  return p;
}

BulkOpticsTable BulkOpticsTable::build(const OpticsTableSpec& spec) {
  BulkOpticsTable table;
  table.spec_ = spec;
  table.re_axis_ = spec.re_axis();
  table.angle_axis_ = spec.angle_axis();
  const int nre = table.re_count(), nang = table.angle_count();
  std::vector<BulkOpticsNode> nodes(static_cast<std::size_t>(nre));
  parallel_for(nodes.size(), [&](std::size_t i) {
    const DropletDistribution dist{1.0, table.re_axis_[i], spec.effective_variance};
    nodes[i] = bulk_from_distribution(dist, spec.wavelength_nm, spec.refractive_index, table.angle_axis_,
                                      spec.radius_nodes);
  });
  table.mass_ext_.resize(nre);
  table.albedo_.resize(nre);
  table.p11_.resize(nre, nang);
  table.p12_.resize(nre, nang);
  table.p33_.resize(nre, nang);
  table.p34_.resize(nre, nang);
  for (int i = 0; i < nre; ++i) {
    table.mass_ext_[i] = nodes[i].mass_extinction;
    table.albedo_[i] = nodes[i].single_scatter_albedo;
    table.p11_.row(i) = nodes[i].p11.matrix().transpose();
    table.p12_.row(i) = nodes[i].p12.matrix().transpose();
    table.p33_.row(i) = nodes[i].p33.matrix().transpose();
    table.p34_.row(i) = nodes[i].p34.matrix().transpose();
  }
  table.finalize();
  return table;
}

void BulkOpticsTable::finalize() {
  d_mass_ext_ = central_slopes(re_axis_, mass_ext_);
  d_albedo_ = central_slopes(re_axis_, albedo_);
  dp11_ = central_slopes(re_axis_, p11_);
  dp12_ = central_slopes(re_axis_, p12_);
}

OpticsSample BulkOpticsTable::sample(double re) const {
  const Span s = locate(re_axis_, re);
  if (re_axis_.size() < 2) return {mass_ext_[0], 0.0, albedo_[0], 0.0};
  const auto k = hermite(s, mass_ext_[s.i], d_mass_ext_[s.i], mass_ext_[s.i + 1], d_mass_ext_[s.i + 1]);
  const auto w = hermite(s, albedo_[s.i], d_albedo_[s.i], albedo_[s.i + 1], d_albedo_[s.i + 1]);
  return {k.value, k.slope, w.value, w.slope};
}

BulkOpticsTable::PhaseSlice BulkOpticsTable::phase_slice(double theta_deg) const {
  const Span a = locate(angle_axis_, theta_deg);
  PhaseSlice slice;
  slice.table_ = this;
  const double w0 = 1.0 - a.t, w1 = a.t;
  slice.p11_ = w0 * p11_.col(a.i) + w1 * p11_.col(a.i + 1);
  slice.p12_ = w0 * p12_.col(a.i) + w1 * p12_.col(a.i + 1);
  slice.dp11_ = w0 * dp11_.col(a.i) + w1 * dp11_.col(a.i + 1);
  slice.dp12_ = w0 * dp12_.col(a.i) + w1 * dp12_.col(a.i + 1);
  return slice;
}

PhaseSample BulkOpticsTable::PhaseSlice::at(double re) const {
  const auto& axis = table_->re_axis_;
  if (axis.size() < 2) return {p11_[0], 0.0, p12_[0], 0.0};
  const Span s = locate(axis, re);
  const auto a = hermite(s, p11_[s.i], dp11_[s.i], p11_[s.i + 1], dp11_[s.i + 1]);
  const auto b = hermite(s, p12_[s.i], dp12_[s.i], p12_[s.i + 1], dp12_[s.i + 1]);
  return {a.value, a.slope, b.value, b.slope};
}

PhaseSample BulkOpticsTable::phase(double re, double theta_deg) const {
  return phase_slice(theta_deg).at(re);
}

std::string BulkOpticsTable::payload() const {
  std::string out;
  const std::string key = spec_.cache_key();
  const std::uint64_t key_len = key.size();
  put(out, &key_len, sizeof key_len);
  out += key;
  const std::int64_t nre = re_count(), nang = angle_count();
  put(out, &nre, sizeof nre);
  put(out, &nang, sizeof nang);
  put_array(out, mass_ext_);
  put_array(out, albedo_);
  put_array(out, p11_);
  put_array(out, p12_);
  put_array(out, p33_);
  put_array(out, p34_);
  return out;
}

void BulkOpticsTable::save(const std::filesystem::path& file) const {
  const std::string body = payload();
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write optics cache " + file.string());
  out << kCacheMagic << sha256_hex(body) << '\n' << body;
}

std::optional<BulkOpticsTable> BulkOpticsTable::load(const OpticsTableSpec& spec,
                                                     const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string data = buffer.str();
  const std::size_t magic_len = std::strlen(kCacheMagic);
  const std::size_t header = magic_len + 65;
  if (data.size() < header || data.compare(0, magic_len, kCacheMagic) != 0) return std::nullopt;
  const std::string digest = data.substr(magic_len, 64);
  const std::string_view body(data.data() + header, data.size() - header);
  if (sha256_hex(body) != digest) return std::nullopt;

  try {
    Reader reader(body);
    std::uint64_t key_len = 0;
    reader.get(&key_len, sizeof key_len);
    if (key_len > body.size()) return std::nullopt;
    std::string key(key_len, '\0');
    reader.get(key.data(), key_len);
    if (key != spec.cache_key()) return std::nullopt;
    BulkOpticsTable table;
    table.spec_ = spec;
    table.re_axis_ = spec.re_axis();
    table.angle_axis_ = spec.angle_axis();
    std::int64_t nre = 0, nang = 0;
    reader.get(&nre, sizeof nre);
    reader.get(&nang, sizeof nang);
    if (nre != table.re_count() || nang != table.angle_count()) return std::nullopt;
    reader.get_vector(table.mass_ext_, nre);
    reader.get_vector(table.albedo_, nre);
    reader.get_matrix(table.p11_, nre, nang);
    reader.get_matrix(table.p12_, nre, nang);
    reader.get_matrix(table.p33_, nre, nang);
    reader.get_matrix(table.p34_, nre, nang);
    if (!reader.done()) return std::nullopt;
    table.finalize();
    return table;
  } catch (const std::runtime_error&) {
    return std::nullopt;
  }
}

BulkOpticsTable BulkOpticsTable::load_or_build(const OpticsTableSpec& spec, const std::filesystem::path& cache) {
  if (auto cached = load(spec, cache)) return std::move(*cached);
  BulkOpticsTable table = build(spec);
  if (cache.has_parent_path()) std::filesystem::create_directories(cache.parent_path());
  table.save(cache);
  return table;
}

}  // namespace cloudtomo
