#include "cloudtomo/retrieval.hpp"

#include "cloudtomo/errors.hpp"
#include "cloudtomo/io.hpp"
#include "cloudtomo/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cloudtomo {

namespace {

void check_shapes(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  if (sim.size() != meas.size()) throw std::invalid_argument("simulated and measured view counts differ");
  for (std::size_t v = 0; v < sim.size(); ++v) {
    if (!sim[v].same_shape(meas[v])) throw std::invalid_argument("view " + std::to_string(v) + " shape mismatch");
  }
}

template <typename Field>
double half_squared(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas, Field field) {
  check_shapes(sim, meas);
  double sum = 0.0;
  for (std::size_t v = 0; v < sim.size(); ++v) sum += 0.5 * (field(sim[v]) - field(meas[v])).square().sum();
  return sum;
}

// Pixel mask of the DoLP comparison for one view.
std::vector<std::uint8_t> dolp_support(const StokesImage& sim, const StokesImage& meas) {
  const double sim_floor = kDolpFloor * (sim.size() ? sim.I.maxCoeff() : 0.0);
  const double meas_floor = kDolpFloor * (meas.size() ? meas.I.maxCoeff() : 0.0);
  std::vector<std::uint8_t> keep(static_cast<std::size_t>(sim.size()), 0);
  for (Eigen::Index p = 0; p < sim.size(); ++p) {
    keep[p] = sim.I[p] > 0.0 && meas.I[p] > 0.0 && sim.I[p] >= sim_floor && meas.I[p] >= meas_floor;
  }
  return keep;
}

}  // namespace

double cost_radiance(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  return half_squared(sim, meas, [](const StokesImage& s) -> const Eigen::ArrayXd& { return s.I; });
}

double cost_q(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  return half_squared(sim, meas, [](const StokesImage& s) -> const Eigen::ArrayXd& { return s.Q; });
}

double cost_u(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  return half_squared(sim, meas, [](const StokesImage& s) -> const Eigen::ArrayXd& { return s.U; });
}

double cost_stokes(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  return cost_radiance(sim, meas) + cost_q(sim, meas) + cost_u(sim, meas);
}

DolpCost cost_dolp(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas) {
  check_shapes(sim, meas);
  DolpCost out;
  for (std::size_t v = 0; v < sim.size(); ++v) {
    const auto keep = dolp_support(sim[v], meas[v]);
    for (Eigen::Index p = 0; p < sim[v].size(); ++p) {
      if (!keep[p]) {
        ++out.excluded;
        continue;
      }
      const double d = std::hypot(sim[v].Q[p], sim[v].U[p]) / sim[v].I[p];
      const double y = std::hypot(meas[v].Q[p], meas[v].U[p]) / meas[v].I[p];
      out.value += 0.5 * (d - y) * (d - y);
    }
  }
  return out;
}

VoxelCloud monotonic_profile(double alpha_lwc, double alpha_re, const VoxelCloud& shape, double lwc_min,
                             double re_min) {
  if (alpha_lwc < 0.0 || alpha_re < 0.0) throw std::invalid_argument("profile slopes must be nonnegative");
  VoxelCloud out = shape.empty_like();
  const double z0 = shape.lowest_masked_altitude();
  const auto& d = shape.dims();
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        if (!shape.mask(i, j, k)) continue;
        const double z_km = (shape.layer_altitude(k) - z0) / 1000.0;
        out.lwc(i, j, k) = alpha_lwc * z_km + lwc_min;
        out.re(i, j, k) = alpha_re * std::cbrt(z_km) + re_min;
      }
  return out;
}

VoxelCloud homogeneous_profile(double lwc, double re, const VoxelCloud& shape) {
  if (!(lwc > 0.0 && re > 0.0)) throw std::invalid_argument("homogeneous values must be positive");
  VoxelCloud out = shape.empty_like();
  for (Eigen::Index v = 0; v < out.voxel_count(); ++v) {
    if (!out.mask[v]) continue;
    out.lwc[v] = lwc;
    out.re[v] = re;
  }
  return out;
}

std::string to_string(InitMethod method) {
  switch (method) {
    case InitMethod::HTypical: return "H_Typical";
    case InitMethod::HStokes: return "H_Stokes";
    case InitMethod::MStokes: return "M_Stokes";
    case InitMethod::MDolp: return "M_DoLP";
  }
  return "?";
}

InitMethod parse_init_method(std::string_view name) {
  for (InitMethod m : {InitMethod::HTypical, InitMethod::HStokes, InitMethod::MStokes, InitMethod::MDolp}) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown initialization method '" + std::string(name) + "'");
}

std::vector<double> GridAxis::values() const {
  std::vector<double> out(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out[i] = count == 1 ? min : min + (max - min) * i / (count - 1);
  return out;
}

void InitConfig::validate() const {
  for (const GridAxis* a : {&alpha_lwc, &alpha_re, &lwc, &re}) {
    if (a->count < 1) throw std::invalid_argument("search grids need at least one node");
    if (!(a->min >= 0.0 && a->max >= a->min)) throw std::invalid_argument("search ranges must satisfy 0 <= min <= max");
  }
  if (!(lwc.min > 0.0 && re.min > 0.0)) throw std::invalid_argument("homogeneous search values must be positive");
  if (!(typical_lwc > 0.0 && typical_re > 0.0)) throw std::invalid_argument("typical values must be positive");
  if (!(lwc_min >= 0.0 && re_min > 0.0)) throw std::invalid_argument("profile floors must be positive");
}

InitResult grid_search_init(const InitConfig& config, const MeasurementSet& meas, const ForwardModel& model,
                            const VoxelCloud& shape) {
  config.validate();
  InitResult out;
  out.method = config.method;
  if (config.method == InitMethod::HTypical) {
    out.param_lwc = config.typical_lwc;
    out.param_re = config.typical_re;
    out.cloud = homogeneous_profile(config.typical_lwc, config.typical_re, shape);
    return out;
  }
  if (meas.views.empty()) throw std::invalid_argument("grid search needs measurements");

  const bool monotonic = config.method != InitMethod::HStokes;
  const std::vector<double> ax_l = monotonic ? config.alpha_lwc.values() : config.lwc.values();
  const std::vector<double> ax_r = monotonic ? config.alpha_re.values() : config.re.values();
  auto make = [&](std::size_t il, std::size_t ir) {
    return monotonic ? monotonic_profile(ax_l[il], ax_r[ir], shape, config.lwc_min, config.re_min)
                     : homogeneous_profile(ax_l[il], ax_r[ir], shape);
  };

  const std::vector<Camera> cams = meas.cameras();
  const std::vector<StokesImage> y = meas.images();
  const std::size_t nl = ax_l.size(), nr = ax_r.size();
  out.surface = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nl), static_cast<Eigen::Index>(nr));
  std::vector<long> excluded(nl * nr, 0);

  parallel_for(nl * nr, [&](std::size_t node) {
    const std::size_t il = node / nr, ir = node % nr;
    try {
      const VoxelCloud cloud = make(il, ir);
      std::vector<StokesImage> sim;
      sim.reserve(cams.size());
      for (const Camera& cam : cams) sim.push_back(model.render(cloud, cam, meas.sun));
      if (config.method == InitMethod::MDolp) {
        const DolpCost c = cost_dolp(sim, y);
        out.surface(il, ir) = c.value;
        excluded[node] = c.excluded;
      } else {
        out.surface(il, ir) = cost_stokes(sim, y);
      }
    } catch (const std::exception& e) {
      const std::string where = "grid node (" + std::to_string(il) + ", " + std::to_string(ir) + "): " + e.what();
      if (dynamic_cast<const NumericalError*>(&e)) throw NumericalError(where);
      throw std::runtime_error(where);
    }
  });

  double best = std::numeric_limits<double>::infinity();
  for (std::size_t il = 0; il < nl; ++il)
    for (std::size_t ir = 0; ir < nr; ++ir) {
      const double c = out.surface(il, ir);
      if (!std::isfinite(c)) throw NumericalError("non-finite cost at grid node (" + std::to_string(il) + ", " +
                                                  std::to_string(ir) + ")");
      if (c < best) {
        best = c;
        out.index_lwc = static_cast<int>(il);
        out.index_re = static_cast<int>(ir);
      }
    }
  out.param_lwc = ax_l[out.index_lwc];
  out.param_re = ax_r[out.index_re];
  out.dolp_excluded = excluded[out.index_lwc * nr + out.index_re];
  out.cloud = make(out.index_lwc, out.index_re);
  return out;
}

void Preconditioner::validate() const {
  if (!(lwc > 0.0 && re > 0.0)) throw std::invalid_argument("preconditioning factors must be positive");
}

ScaledVariables precondition(const VoxelCloud& cloud, const Preconditioner& pc) {
  const Eigen::Index n = cloud.masked_count();
  ScaledVariables out{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
  Eigen::Index i = 0;
  for (Eigen::Index v = 0; v < cloud.voxel_count(); ++v) {
    if (!cloud.mask[v]) continue;
    out.lwc[i] = pc.lwc * cloud.lwc[v];
    out.re[i] = pc.re * cloud.re[v];
    ++i;
  }
  return out;
}

void unprecondition(const ScaledVariables& vars, const Preconditioner& pc, VoxelCloud& cloud) {
  if (vars.lwc.size() != cloud.masked_count() || vars.re.size() != cloud.masked_count())
    throw std::invalid_argument("variable count does not match the mask");
  Eigen::Index i = 0;
  for (Eigen::Index v = 0; v < cloud.voxel_count(); ++v) {
    if (!cloud.mask[v]) continue;
    cloud.lwc[v] = vars.lwc[i] / pc.lwc;
    cloud.re[v] = vars.re[i] / pc.re;
    ++i;
  }
}

ScaledVariables precondition_gradient(const CloudGradient& gradient, const VoxelCloud& cloud,
                                      const Preconditioner& pc) {
  const Eigen::Index n = cloud.masked_count();
  ScaledVariables out{Eigen::ArrayXd(n), Eigen::ArrayXd(n)};
  Eigen::Index i = 0;
  for (Eigen::Index v = 0; v < cloud.voxel_count(); ++v) {
    if (!cloud.mask[v]) continue;
    out.lwc[i] = gradient.lwc[v] / pc.lwc;
    out.re[i] = gradient.re[v] / pc.re;
    ++i;
  }
  return out;
}

std::string to_string(RetrievalMode mode) { return mode == RetrievalMode::Joint ? "joint" : "alternating"; }

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::Joint: return "joint";
    case Phase::LwcOnly: return "lwc_only";
    case Phase::ReOnly: return "re_only";
  }
  return "?";
}

std::string to_string(RetrievalCost cost) { return cost == RetrievalCost::Stokes ? "stokes" : "stokes+dolp"; }

RetrievalMode parse_retrieval_mode(std::string_view name) {
  if (name == "joint") return RetrievalMode::Joint;
  if (name == "alternating") return RetrievalMode::Alternating;
  throw std::invalid_argument("unknown retrieval mode '" + std::string(name) + "'");
}

RetrievalCost parse_retrieval_cost(std::string_view name) {
  if (name == "stokes") return RetrievalCost::Stokes;
  if (name == "stokes+dolp") return RetrievalCost::StokesDolp;
  throw std::invalid_argument("unknown retrieval cost '" + std::string(name) + "'");
}

void RetrievalOptions::validate() const {
  preconditioner.validate();
  if (max_iterations < 1 || window < 1 || max_cycles < 1 || max_backtracks < 1)
    throw std::invalid_argument("iteration limits must be positive");
  if (!(phase_tolerance >= 0.0 && cycle_tolerance >= 0.0)) throw std::invalid_argument("tolerances must be nonnegative");
  if (!(armijo > 0.0 && armijo < 1.0 && shrink > 0.0 && shrink < 1.0))
    throw std::invalid_argument("line-search constants must lie in (0, 1)");
  if (!(re_min > 0.0 && re_max > re_min)) throw std::invalid_argument("r_e bounds must satisfy 0 < min < max");
}

double objective(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas, RetrievalCost cost) {
  double f = cost_stokes(sim, meas);
  if (cost == RetrievalCost::StokesDolp) f += cost_dolp(sim, meas).value;
  return f;
}

namespace {

// Adjoint images d(objective)/d(I, Q, U) for simulated views.
std::vector<StokesImage> adjoint_images(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas,
                                        RetrievalCost cost) {
  std::vector<StokesImage> adj(sim.size());
  for (std::size_t v = 0; v < sim.size(); ++v) {
    StokesImage a(sim[v].width, sim[v].height);
    a.I = sim[v].I - meas[v].I;
    a.Q = sim[v].Q - meas[v].Q;
    a.U = sim[v].U - meas[v].U;
    if (cost == RetrievalCost::StokesDolp) {
      const auto keep = dolp_support(sim[v], meas[v]);
      for (Eigen::Index p = 0; p < a.size(); ++p) {
        if (!keep[p]) continue;
        const double I = sim[v].I[p], Q = sim[v].Q[p], U = sim[v].U[p];
        const double P = std::hypot(Q, U);
        const double d = P / I;
        const double r = d - std::hypot(meas[v].Q[p], meas[v].U[p]) / meas[v].I[p];
        a.I[p] += -r * d / I;
        if (P > 0.0) {
          a.Q[p] += r * Q / (I * P);
          a.U[p] += r * U / (I * P);
        }
      }
    }
    adj[v] = std::move(a);
  }
  return adj;
}

void gradient_from(const MeasurementSet& meas, const VoxelCloud& cloud, const ForwardModel& model, RetrievalCost cost,
                   const std::vector<StokesImage>& sim, const std::vector<StokesImage>& y, CloudGradient& gradient) {
  const std::vector<StokesImage> adj = adjoint_images(sim, y, cost);
  std::vector<CloudGradient> per_view(meas.views.size());
  parallel_for(meas.views.size(), [&](std::size_t v) {
    model.render_with_gradient(cloud, meas.views[v].camera, meas.sun, adj[v], per_view[v]);
  });
  gradient.lwc = Grid3<double>(cloud.dims());
  gradient.re = Grid3<double>(cloud.dims());
  for (const CloudGradient& g : per_view) {
    gradient.lwc.array() += g.lwc.array();
    gradient.re.array() += g.re.array();
  }
}

class Descent {
 public:
  Descent(const MeasurementSet& meas, const ForwardModel& model, const RetrievalOptions& opt)
      : meas_(meas), model_(model), opt_(opt), cams_(meas.cameras()), y_(meas.images()) {}

  double evaluate(const VoxelCloud& cloud) {
    sim_ = render_views(model_, cloud, cams_, meas_.sun);
    const double f = objective(sim_, y_, opt_.cost);
    if (!std::isfinite(f)) {
      std::string where;
      if (!opt_.failure_dump.empty()) {
        save_grid(opt_.failure_dump, cloud);
        where = "; iterate written to " + opt_.failure_dump.string();
      }
      throw NumericalError("non-finite retrieval cost" + where);
    }
    return f;
  }

  // Runs one phase from cloud (whose images are in sim_ and cost is f) and returns the final cost.
  double run_phase(VoxelCloud& cloud, double f, Phase phase, int cycle, RetrievalResult& result) {
    const bool move_lwc = phase != Phase::ReOnly;
    const bool move_re = phase != Phase::LwcOnly;
    const Preconditioner& pc = opt_.preconditioner;
    const double lo_l = 0.0, lo_r = pc.re * opt_.re_min, hi_r = pc.re * opt_.re_max;

    PhaseRecord rec{cycle, phase, 0, f, f, false};
    std::vector<double> costs{f};
    result.history.push_back({cycle, phase, 0, f, 0.0});

    CloudGradient grad;
    double t = -1.0;
    ScaledVariables u_prev, g_prev;
    for (int it = 1; it <= opt_.max_iterations; ++it) {
      if (f == 0.0) {
        rec.converged = true;
        break;
      }
      gradient_from(meas_, cloud, model_, opt_.cost, sim_, y_, grad);
      const ScaledVariables g = precondition_gradient(grad, cloud, pc);
      const ScaledVariables u = precondition(cloud, pc);
      double gnorm2 = 0.0;
      if (move_lwc) gnorm2 += g.lwc.square().sum();
      if (move_re) gnorm2 += g.re.square().sum();
      if (!(gnorm2 > 0.0)) {
        rec.converged = true;
        break;
      }
      if (t < 0.0) {
        t = 1.0 / std::sqrt(gnorm2);
      } else {
        // Barzilai-Borwein trial step from the last accepted move.
        double ss = 0.0, sy = 0.0;
        if (move_lwc) {
          ss += (u.lwc - u_prev.lwc).square().sum();
          sy += ((u.lwc - u_prev.lwc) * (g.lwc - g_prev.lwc)).sum();
        }
        if (move_re) {
          ss += (u.re - u_prev.re).square().sum();
          sy += ((u.re - u_prev.re) * (g.re - g_prev.re)).sum();
        }
        if (sy > 0.0 && std::isfinite(ss / sy)) t = ss / sy;
      }
      u_prev = u;
      g_prev = g;

      bool accepted = false;
      VoxelCloud cand = cloud;
      double f_cand = f;
      for (int bt = 0; bt < opt_.max_backtracks; ++bt, t *= opt_.shrink) {
        double slope = 0.0;
        Eigen::Index i = 0;
        for (Eigen::Index v = 0; v < cloud.voxel_count(); ++v) {
          if (!cloud.mask[v]) continue;
          if (move_lwc) {
            const double un = std::max(lo_l, u.lwc[i] - t * g.lwc[i]);
            slope += g.lwc[i] * (un - u.lwc[i]);
            cand.lwc[v] = un / pc.lwc;
          }
          if (move_re) {
            const double un = std::clamp(u.re[i] - t * g.re[i], lo_r, hi_r);
            slope += g.re[i] * (un - u.re[i]);
            cand.re[v] = un / pc.re;
          }
          ++i;
        }
        if (slope == 0.0) break;  // pinned at the bounds
        f_cand = evaluate(cand);
        if (f_cand <= f + opt_.armijo * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // No admissible decrease left along the projected gradient.
        sim_ = render_views(model_, cloud, cams_, meas_.sun);
        rec.converged = true;
        break;
      }
      cloud = std::move(cand);
      f = f_cand;
      costs.push_back(f);
      rec.iterations = it;
      result.history.push_back({cycle, phase, it, f, t});
      t *= 2.0;  // fallback when the curvature estimate is not positive
      const std::size_t n = costs.size();
      if (n > static_cast<std::size_t>(opt_.window)) {
        const double past = costs[n - 1 - opt_.window];
        if (past - f <= opt_.phase_tolerance * past) {
          rec.converged = true;
          break;
        }
      }
    }
    rec.end_cost = f;
    result.phases.push_back(rec);
    return f;
  }

 private:
  const MeasurementSet& meas_;
  const ForwardModel& model_;
  const RetrievalOptions& opt_;
  std::vector<Camera> cams_;
  std::vector<StokesImage> y_;
  std::vector<StokesImage> sim_;
};

}  // namespace

double objective_gradient(const MeasurementSet& meas, const VoxelCloud& cloud, const ForwardModel& model,
                          RetrievalCost cost, CloudGradient& gradient) {
  const std::vector<StokesImage> y = meas.images();
  const std::vector<StokesImage> sim = render_views(model, cloud, meas.cameras(), meas.sun);
  gradient_from(meas, cloud, model, cost, sim, y, gradient);
  return objective(sim, y, cost);
}

RetrievalResult retrieve(const MeasurementSet& meas, const VoxelCloud& init, const ForwardModel& model,
                         const RetrievalOptions& options) {
  options.validate();
  if (meas.views.empty()) throw std::invalid_argument("retrieval needs measurements");
  init.validate(options.re_min, options.re_max);

  RetrievalResult result;
  result.cloud = init;
  Descent descent(meas, model, options);
  double f = descent.evaluate(result.cloud);
  result.initial_cost = f;

  if (options.freeze_re) {
    f = descent.run_phase(result.cloud, f, Phase::LwcOnly, 0, result);
  } else if (options.mode == RetrievalMode::Joint) {
    f = descent.run_phase(result.cloud, f, Phase::Joint, 0, result);
  } else {
    for (int cycle = 0; cycle < options.max_cycles; ++cycle) {
      const double start = f;
      f = descent.run_phase(result.cloud, f, Phase::LwcOnly, cycle, result);
      f = descent.run_phase(result.cloud, f, Phase::ReOnly, cycle, result);
      if (f == 0.0 || start - f < options.cycle_tolerance * start) break;
    }
  }
  result.final_cost = f;
  return result;
}

}  // namespace cloudtomo
