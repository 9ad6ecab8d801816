#include "cloudtomo/render.hpp"

#include "cloudtomo/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace cloudtomo {

Eigen::ArrayXd StokesImage::dolp() const {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(size());
  for (Eigen::Index p = 0; p < size(); ++p) {
    if (I[p] > 0.0) out[p] = std::hypot(Q[p], U[p]) / I[p];
  }
  return out;
}

double StokesImage::max_channel() const {
  if (size() == 0) return 0.0;
  return (I + (Q.square() + U.square()).sqrt()).maxCoeff();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kRowBlock = 8;

struct BoxGeometry {
  Eigen::Vector3d lo, hi, step;
  std::array<int, 3> n;

  explicit BoxGeometry(const VoxelCloud& cloud)
      : lo(cloud.box_min()), hi(cloud.box_max()), step(cloud.voxel_size),
        n{cloud.dims()[0], cloud.dims()[1], cloud.dims()[2]} {}

  Eigen::Index flat(const std::array<int, 3>& idx) const {
    return (static_cast<Eigen::Index>(idx[0]) * n[1] + idx[1]) * n[2] + idx[2];
  }
};

// Amanatides-Woo stepping through the voxel grid.
template <typename Visit>
void march(const BoxGeometry& g, const Eigen::Vector3d& o, const Eigen::Vector3d& dir, double t_min, double t_max,
           Visit&& visit) {
  double t0 = t_min, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (o[a] < g.lo[a] || o[a] > g.hi[a]) return;
      continue;
    }
    double ta = (g.lo[a] - o[a]) / dir[a];
    double tb = (g.hi[a] - o[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return;

  std::array<int, 3> idx{}, stp{};
  std::array<double, 3> t_next{}, t_delta{};
  for (int a = 0; a < 3; ++a) {
    const double rel = (o[a] + t0 * dir[a] - g.lo[a]) / g.step[a];
    int i = static_cast<int>(std::floor(rel));
    if (dir[a] < 0.0 && rel == static_cast<double>(i)) --i;
    idx[a] = std::clamp(i, 0, g.n[a] - 1);
    if (dir[a] > 0.0) {
      stp[a] = 1;
      t_next[a] = (g.lo[a] + (idx[a] + 1) * g.step[a] - o[a]) / dir[a];
      t_delta[a] = g.step[a] / dir[a];
    } else if (dir[a] < 0.0) {
      stp[a] = -1;
      t_next[a] = (g.lo[a] + idx[a] * g.step[a] - o[a]) / dir[a];
      t_delta[a] = -g.step[a] / dir[a];
    } else {
      stp[a] = 0;
      t_next[a] = kInf;
      t_delta[a] = kInf;
    }
  }

  double t = t0;
  for (;;) {
    int a = 0;
    if (t_next[1] < t_next[a]) a = 1;
    if (t_next[2] < t_next[a]) a = 2;
    const double te = std::min(t_next[a], t1);
    if (te > t) {
      visit(g.flat(idx), t, te);
      t = te;
    }
    if (t_next[a] >= t1) break;
    idx[a] += stp[a];
    if (idx[a] < 0 || idx[a] >= g.n[a]) break;
    t_next[a] += t_delta[a];
  }
}

// phi(x) = (1 - e^-x) / x and its derivative.
double phi(double x) {
  if (std::abs(x) < 1e-2) return 1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0 + x * x * x * x / 120.0;
  return -std::expm1(-x) / x;
}

double dphi(double x) {
  if (std::abs(x) < 1e-2) return -0.5 + x / 3.0 - x * x / 8.0 + x * x * x / 30.0 - x * x * x * x / 144.0;
  return (std::exp(-x) * (1.0 + x) - 1.0) / (x * x);
}

// Per-voxel optical properties for one render.
struct Medium {
  BoxGeometry geo;
  std::vector<double> beta, mol, k, dk, w0, dw0, lwc, re;
  std::vector<std::uint8_t> masked, sampled;

  Medium(const VoxelCloud& cloud, const BulkOpticsTable& optics, const RenderOptions& opt) : geo(cloud) {
    const Eigen::Index n = cloud.voxel_count();
    beta.assign(n, 0.0);
    mol.assign(n, 0.0);
    k.assign(n, 0.0);
    dk.assign(n, 0.0);
    w0.assign(n, 0.0);
    dw0.assign(n, 0.0);
    lwc.assign(n, 0.0);
    re.assign(n, 0.0);
    masked.assign(n, 0);
    sampled.assign(n, 0);
    for (Eigen::Index v = 0; v < n; ++v) {
      if (opt.rayleigh) {
        const auto ijk = cloud.lwc.unravel(v);
        mol[v] = opt.rayleigh_beta0 * std::exp(-cloud.layer_altitude(ijk[2]) / opt.rayleigh_scale_height);
      }
      if (cloud.mask[v]) {
        const OpticsSample s = optics.sample(cloud.re[v]);
        masked[v] = 1;
        lwc[v] = cloud.lwc[v];
        re[v] = cloud.re[v];
        k[v] = s.mass_extinction;
        dk[v] = s.d_mass_extinction;
        w0[v] = s.albedo;
        dw0[v] = s.d_albedo;
      }
      beta[v] = k[v] * lwc[v] + mol[v];
      sampled[v] = masked[v] || mol[v] > 0.0;
    }
  }

  double tau_to_sun(const Eigen::Vector3d& x, const Eigen::Vector3d& sun) const {
    double tau = 0.0;
    march(geo, x, sun, 0.0, kInf, [&](Eigen::Index v, double a, double b) { tau += beta[v] * (b - a); });
    return tau;
  }
};

struct Segment {
  Eigen::Index voxel;
  double t0, t1, tau_in;
  int first_node = -1;  // nodes first_node .. first_node + substeps
  int substeps = 0;
};

struct Node {
  double t;
  double E;
  double G = 0.0;
};

struct GradientAccumulator {
  std::vector<double> direct_lwc, direct_re, beta;
  explicit GradientAccumulator(std::size_t n) : direct_lwc(n, 0.0), direct_re(n, 0.0), beta(n, 0.0) {}
};

struct RayContext {
  const Medium& medium;
  const BulkOpticsTable& optics;
  const RenderOptions& opt;
  Eigen::Vector3d sun;
  double irradiance;
};

// Integrates one ray; when acc is given, also backpropagates the adjoint weights
// (wI, wQ, wU), already scaled by the ray's share of the pixel.
Eigen::Vector3d trace(const RayContext& ctx, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                      const Eigen::Vector3d* weights, GradientAccumulator* acc, std::vector<Segment>& segs,
                      std::vector<Node>& nodes) {
  const Medium& med = ctx.medium;
  const double c = std::clamp(ctx.sun.dot(dir), -1.0, 1.0);
  const double theta = std::acos(c) * 180.0 / std::numbers::pi;
  const auto slice = ctx.optics.phase_slice(theta);
  const double p11_mol = 0.75 * (1.0 + c * c);
  const double p12_mol = -0.75 * (1.0 - c * c);

  // Rotation from the scattering plane into the meridian frame of omega = -dir.
  const Eigen::Vector3d omega = -dir;
  const MeridianFrame mf = meridian_frame(omega);
  Eigen::Vector3d e_par = -ctx.sun - (-ctx.sun.dot(omega)) * omega;
  double cos2 = 1.0, sin2 = 0.0;
  if (e_par.norm() > 1e-12) {
    e_par.normalize();
    const double el = e_par.dot(mf.l), eb = e_par.dot(mf.b);
    const double n2 = el * el + eb * eb;
    cos2 = (el * el - eb * eb) / n2;
    sin2 = 2.0 * el * eb / n2;
  }
  const double scale = ctx.irradiance / (4.0 * std::numbers::pi);

  segs.clear();
  nodes.clear();
  double tau = 0.0;
  march(med.geo, origin, dir, 0.0, kInf, [&](Eigen::Index v, double a, double b) {
    segs.push_back({v, a, b, tau});
    tau += med.beta[v] * (b - a);
  });
  const double tau_total = tau;

  bool prev_sampled = false;
  for (Segment& s : segs) {
    if (!med.sampled[s.voxel]) {
      prev_sampled = false;
      continue;
    }
    const double len = s.t1 - s.t0;
    s.substeps = std::max(1, static_cast<int>(std::ceil(len / ctx.opt.max_substep)));
    const double h = len / s.substeps;
    const double b = med.beta[s.voxel];
    int j0 = 0;
    if (prev_sampled) {
      s.first_node = static_cast<int>(nodes.size()) - 1;
      j0 = 1;
    } else {
      s.first_node = static_cast<int>(nodes.size());
    }
    for (int j = j0; j <= s.substeps; ++j) {
      const double t = j == s.substeps ? s.t1 : s.t0 + j * h;
      const double tau_cam = s.tau_in + b * (t - s.t0);
      nodes.push_back({t, tau_cam + med.tau_to_sun(origin + t * dir, ctx.sun)});
    }
    prev_sampled = true;
  }

  Eigen::Vector3d stokes = Eigen::Vector3d::Zero();
  const double wp = weights ? (*weights)[1] * cos2 + (*weights)[2] * sin2 : 0.0;
  const double wI = weights ? (*weights)[0] : 0.0;

  for (const Segment& s : segs) {
    if (s.first_node < 0) continue;
    const Eigen::Index v = s.voxel;
    PhaseSample ps;
    if (med.masked[v]) ps = slice.at(med.re[v]);
    const double scat = med.w0[v] * med.k[v] * med.lwc[v];
    const double coef_i = scale * (scat * ps.p11 + med.mol[v] * p11_mol);
    const double coef_p = scale * (scat * ps.p12 + med.mol[v] * p12_mol);
    double J_sum = 0.0;
    for (int j = 0; j < s.substeps; ++j) {
      Node& na = nodes[s.first_node + j];
      Node& nb = nodes[s.first_node + j + 1];
      const double h = nb.t - na.t;
      const double x = nb.E - na.E;
      const double e = std::exp(-na.E);
      const double J = h * e * phi(x);
      J_sum += J;
      if (acc) {
        const double a_v = wI * coef_i + wp * coef_p;
        const double dJb = h * e * dphi(x);
        na.G += a_v * (-J - dJb);
        nb.G += a_v * dJb;
      }
    }
    stokes[0] += coef_i * J_sum;
    stokes[1] += coef_p * cos2 * J_sum;
    stokes[2] += coef_p * sin2 * J_sum;
    if (acc && med.masked[v]) {
      const double proj = wI * ps.p11 + wp * ps.p12;
      const double dproj = wI * ps.d_p11 + wp * ps.d_p12;
      const double wk = med.w0[v] * med.k[v];
      const double dwk = med.dw0[v] * med.k[v] + med.w0[v] * med.dk[v];
      acc->direct_lwc[v] += scale * J_sum * wk * proj;
      acc->direct_re[v] += scale * J_sum * med.lwc[v] * (dwk * proj + wk * dproj);
    }
  }

  // Lambertian floor at z = 0, seen through the whole box.
  if (ctx.opt.surface_albedo > 0.0 && dir.z() < 0.0 && ctx.sun.z() > 0.0 && origin.z() > 0.0) {
    const double tg = -origin.z() / dir.z();
    const Eigen::Vector3d xg = origin + tg * dir;
    const double E = tau_total + med.tau_to_sun(xg, ctx.sun);
    const double R = ctx.opt.surface_albedo / std::numbers::pi * ctx.irradiance * ctx.sun.z() * std::exp(-E);
    stokes[0] += R;
    if (acc) nodes.push_back({tg, E, -wI * R});
  }

  if (acc) {
    // Camera-side attenuation: dE_p/dbeta_i is the path length inside voxel i before p.
    std::vector<double> suffix(nodes.size() + 1, 0.0);
    for (int p = static_cast<int>(nodes.size()) - 1; p >= 0; --p) suffix[p] = suffix[p + 1] + nodes[p].G;
    int later = static_cast<int>(nodes.size());  // first node after the current segment
    for (auto it = segs.rbegin(); it != segs.rend(); ++it) {
      const Segment& s = *it;
      const double len = s.t1 - s.t0;
      if (s.first_node >= 0) {
        const int last = s.first_node + s.substeps;
        if (med.masked[s.voxel]) {
          double g = len * suffix[last];
          for (int p = s.first_node + 1; p < last; ++p) g += nodes[p].G * (nodes[p].t - s.t0);
          acc->beta[s.voxel] += g;
        }
        later = s.first_node;
      } else if (med.masked[s.voxel]) {
        acc->beta[s.voxel] += len * suffix[later];
      }
    }
    // Sun-side attenuation.
    for (const Node& nd : nodes) {
      if (nd.G == 0.0) continue;
      march(med.geo, origin + nd.t * dir, ctx.sun, 0.0, kInf, [&](Eigen::Index v, double a, double b) {
        if (med.masked[v]) acc->beta[v] += nd.G * (b - a);
      });
    }
  }
  return stokes;
}

}  // namespace

void traverse_voxels(const VoxelCloud& cloud, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double t_min,
                     double t_max, const std::function<void(Eigen::Index, double, double)>& visit) {
  march(BoxGeometry(cloud), origin, dir, t_min, t_max, visit);
}

double optical_depth(const VoxelCloud& cloud, const BulkOpticsTable& optics, const Eigen::Vector3d& a,
                     const Eigen::Vector3d& b) {
  const double length = (b - a).norm();
  if (length == 0.0) return 0.0;
  const Eigen::Vector3d dir = (b - a) / length;
  double tau = 0.0;
  march(BoxGeometry(cloud), a, dir, 0.0, length, [&](Eigen::Index v, double t0, double t1) {
    if (cloud.mask[v] && cloud.lwc[v] > 0.0) tau += optics.sample(cloud.re[v]).mass_extinction * cloud.lwc[v] * (t1 - t0);
  });
  return tau;
}

SingleScatterModel::SingleScatterModel(std::shared_ptr<const BulkOpticsTable> optics, RenderOptions options)
    : optics_(std::move(optics)), options_(options) {
  if (!optics_) throw std::invalid_argument("optics table required");
  if (options_.supersample < 1) throw std::invalid_argument("supersample must be at least 1");
  if (!(options_.max_substep > 0.0)) throw std::invalid_argument("max_substep must be positive");
  if (options_.surface_albedo < 0.0 || options_.surface_albedo > 1.0)
    throw std::invalid_argument("surface albedo must lie in [0, 1]");
}

StokesImage SingleScatterModel::render(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun) const {
  return run(cloud, camera, sun, nullptr, nullptr);
}

StokesImage SingleScatterModel::render_with_gradient(const VoxelCloud& cloud, const Camera& camera,
                                                     const SunGeometry& sun, const StokesImage& adjoint,
                                                     CloudGradient& gradient) const {
  return run(cloud, camera, sun, &adjoint, &gradient);
}

StokesImage SingleScatterModel::run(const VoxelCloud& cloud, const Camera& camera, const SunGeometry& sun,
                                    const StokesImage* adjoint, CloudGradient* gradient) const {
  camera.validate();
  const Medium medium(cloud, *optics_, options_);
  const RayContext ctx{medium, *optics_, options_, sun.direction(), sun.irradiance};

  const int w = camera.resolution, h = camera.resolution;
  if (adjoint && (adjoint->width != w || adjoint->height != h))
    throw std::invalid_argument("adjoint image shape does not match the camera");
  StokesImage img(w, h);

  const Eigen::Vector3d right = camera.right(), up = camera.up();
  const double pix = camera.pixel_pitch / camera.focal_length;
  const int n = options_.supersample;
  const double share = 1.0 / (n * n);

  const int blocks = (h + kRowBlock - 1) / kRowBlock;
  const std::size_t nvox = static_cast<std::size_t>(cloud.voxel_count());
  std::vector<GradientAccumulator> partial;
  if (gradient) partial.assign(blocks, GradientAccumulator(nvox));

  parallel_for(static_cast<std::size_t>(blocks), [&](std::size_t block) {
    std::vector<Segment> segs;
    std::vector<Node> nodes;
    GradientAccumulator* acc = gradient ? &partial[block] : nullptr;
    const int row_end = std::min(h, static_cast<int>(block + 1) * kRowBlock);
    for (int row = static_cast<int>(block) * kRowBlock; row < row_end; ++row) {
      for (int col = 0; col < w; ++col) {
        const Eigen::Index p = static_cast<Eigen::Index>(row) * w + col;
        Eigen::Vector3d weights = Eigen::Vector3d::Zero();
        if (adjoint) weights = share * Eigen::Vector3d(adjoint->I[p], adjoint->Q[p], adjoint->U[p]);
        Eigen::Vector3d sum = Eigen::Vector3d::Zero();
        for (int sb = 0; sb < n; ++sb) {
          for (int sa = 0; sa < n; ++sa) {
            const double u = col + (sa + 0.5) / n - 0.5 * w;
            const double v = row + (sb + 0.5) / n - 0.5 * h;
            Eigen::Vector3d dir = camera.optical_axis + (u * pix) * right + (v * pix) * up;
            dir /= dir.norm();
            sum += trace(ctx, camera.position, dir, adjoint ? &weights : nullptr, acc, segs, nodes);
          }
        }
        sum *= share;
        img.I[p] = sum[0];
        img.Q[p] = sum[1];
        img.U[p] = sum[2];
      }
    }
  });

  if (gradient) {
    gradient->lwc = Grid3<double>(cloud.dims());
    gradient->re = Grid3<double>(cloud.dims());
    for (const GradientAccumulator& acc : partial) {
      for (std::size_t v = 0; v < nvox; ++v) {
        if (!medium.masked[v]) continue;
        gradient->lwc[v] += acc.direct_lwc[v] + medium.k[v] * acc.beta[v];
        gradient->re[v] += acc.direct_re[v] + medium.dk[v] * medium.lwc[v] * acc.beta[v];
      }
    }
  }
  return img;
}

std::vector<StokesImage> render_views(const ForwardModel& model, const VoxelCloud& cloud,
                                      const std::vector<Camera>& cameras, const SunGeometry& sun) {
  std::vector<StokesImage> out(cameras.size());
  parallel_for(cameras.size(), [&](std::size_t i) { out[i] = model.render(cloud, cameras[i], sun); });
  return out;
}

}  // namespace cloudtomo
