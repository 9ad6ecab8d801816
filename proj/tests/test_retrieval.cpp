#include "cloudtomo/errors.hpp"
#include "cloudtomo/io.hpp"
#include "cloudtomo/microphysics.hpp"
#include "cloudtomo/retrieval.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

using namespace cloudtomo;

namespace {

StokesImage image(std::initializer_list<double> i, std::initializer_list<double> q, std::initializer_list<double> u) {
  StokesImage s(static_cast<int>(i.size()), 1);
  int p = 0;
  for (double v : i) s.I[p++] = v;
  p = 0;
  for (double v : q) s.Q[p++] = v;
  p = 0;
  for (double v : u) s.U[p++] = v;
  return s;
}

VoxelCloud box_shape(int nx, int ny, int nz, double voxel = 20.0) {
  VoxelCloud c({nx, ny, nz}, Eigen::Vector3d::Constant(voxel), 600.0, 0.1);
  c.mask.array().setConstant(1);
  return c;
}

class NanModel : public ForwardModel {
 public:
  StokesImage render(const VoxelCloud&, const Camera& camera, const SunGeometry&) const override {
    StokesImage s(camera.resolution, camera.resolution);
    s.I.setConstant(std::numeric_limits<double>::quiet_NaN());
    return s;
  }
  StokesImage render_with_gradient(const VoxelCloud& c, const Camera& camera, const SunGeometry& sun,
                                   const StokesImage&, CloudGradient& g) const override {
    g.lwc = Grid3<double>(c.dims());
    g.re = Grid3<double>(c.dims());
    return render(c, camera, sun);
  }
};

void check_monotone(const RetrievalResult& r) {
  double prev = r.initial_cost;
  for (const IterationRecord& it : r.history) {
    CHECK(it.cost <= prev);
    prev = it.cost;
  }
  CHECK(r.final_cost == prev);
  CHECK(r.final_cost <= r.initial_cost);
}

}  // namespace

TEST_CASE("cost functions") {
  const std::vector<StokesImage> sim{image({1.0, 2.0}, {0.1, 0.0}, {0.0, -0.2})};
  const std::vector<StokesImage> meas{image({1.5, 2.0}, {0.0, 0.3}, {0.0, 0.0})};
  CHECK(cost_radiance(sim, meas) == doctest::Approx(0.125));
  CHECK(cost_q(sim, meas) == doctest::Approx(0.5 * (0.01 + 0.09)));
  CHECK(cost_u(sim, meas) == doctest::Approx(0.02));
  CHECK(cost_stokes(sim, meas) == doctest::Approx(0.125 + 0.05 + 0.02));
  const DolpCost d = cost_dolp(sim, meas);
  const double e0 = 0.1 / 1.0 - 0.0, e1 = 0.2 / 2.0 - 0.3 / 2.0;
  CHECK(d.value == doctest::Approx(0.5 * (e0 * e0 + e1 * e1)));
  CHECK(d.excluded == 0);
  CHECK(objective(sim, meas, RetrievalCost::StokesDolp) == doctest::Approx(cost_stokes(sim, meas) + d.value));
  CHECK(cost_stokes(meas, meas) == 0.0);

  SUBCASE("dark pixels are left out of the DoLP cost") {
    const std::vector<StokesImage> s2{image({1.0, 0.0, 1e-9}, {0.5, 0.0, 1e-9}, {0, 0, 0})};
    const std::vector<StokesImage> m2{image({1.0, 1.0, 1.0}, {0.0, 0.1, 0.0}, {0, 0, 0})};
    const DolpCost c = cost_dolp(s2, m2);
    CHECK(c.excluded == 2);
    CHECK(c.value == doctest::Approx(0.125));
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(cost_stokes(sim, {}), std::invalid_argument);
    CHECK_THROWS_AS(cost_stokes(sim, {StokesImage(3, 1)}), std::invalid_argument);
  }
}

TEST_CASE("parametric profiles") {
  VoxelCloud shape = box_shape(3, 2, 4);
  shape.mask(0, 0, 0) = 0;
  const VoxelCloud m = monotonic_profile(0.8, 9.0, shape, 1e-4, 3.0);
  CHECK(m.lwc(0, 0, 0) == 0.0);
  CHECK(m.re(0, 0, 0) == 0.0);
  for (int k = 0; k < 4; ++k) {
    const double z = k * 0.02;
    CHECK(m.lwc(1, 1, k) == doctest::Approx(0.8 * z + 1e-4));
    CHECK(m.re(2, 0, k) == doctest::Approx(9.0 * std::cbrt(z) + 3.0));
  }
  SUBCASE("the profile starts at the lowest masked layer") {
    VoxelCloud high = box_shape(2, 2, 3);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) high.mask(i, j, 0) = 0;
    const VoxelCloud p = monotonic_profile(1.0, 5.0, high);
    CHECK(p.lwc(0, 0, 1) == doctest::Approx(kLwcMin));
    CHECK(p.re(0, 0, 1) == doctest::Approx(kReMin));
  }
  const VoxelCloud h = homogeneous_profile(0.2, 11.0, shape);
  CHECK(h.lwc(2, 1, 3) == 0.2);
  CHECK(h.lwc(0, 0, 0) == 0.0);
  CHECK_THROWS_AS(monotonic_profile(-1.0, 1.0, shape), std::invalid_argument);
  CHECK_THROWS_AS(homogeneous_profile(0.0, 1.0, shape), std::invalid_argument);
}

TEST_CASE("preconditioning round trip") {
  const VoxelCloud c = test::random_cloud(4, 20.0, 3);
  for (const Preconditioner pc : {Preconditioner{}, Preconditioner{15.0, 0.01}}) {
    const ScaledVariables x = precondition(c, pc);
    CHECK(x.lwc[5] == doctest::Approx(pc.lwc * c.lwc[5]));
    VoxelCloud back = c;
    back.lwc.array().setZero();
    back.re.array().setZero();
    unprecondition(x, pc, back);
    CHECK(((back.lwc.array() - c.lwc.array()).abs() <= 1e-15 * c.lwc.array().abs()).all());
    CHECK(((back.re.array() - c.re.array()).abs() <= 1e-15 * c.re.array().abs()).all());

    CloudGradient g{Grid3<double>(c.dims()), Grid3<double>(c.dims())};
    g.lwc.array().setConstant(2.0);
    g.re.array().setConstant(3.0);
    const ScaledVariables gs = precondition_gradient(g, c, pc);
    CHECK(gs.lwc[0] == doctest::Approx(2.0 / pc.lwc));
    CHECK(gs.re[0] == doctest::Approx(3.0 / pc.re));
  }
  CHECK_THROWS_AS((Preconditioner{0.0, 1.0}.validate()), std::invalid_argument);
  ScaledVariables wrong{Eigen::ArrayXd(2), Eigen::ArrayXd(2)};
  VoxelCloud target = c;
  CHECK_THROWS_AS(unprecondition(wrong, Preconditioner{}, target), std::invalid_argument);
}

TEST_CASE("names round trip") {
  for (InitMethod m : {InitMethod::HTypical, InitMethod::HStokes, InitMethod::MStokes, InitMethod::MDolp})
    CHECK(parse_init_method(to_string(m)) == m);
  CHECK(parse_retrieval_mode("joint") == RetrievalMode::Joint);
  CHECK(parse_retrieval_mode(to_string(RetrievalMode::Alternating)) == RetrievalMode::Alternating);
  CHECK(parse_retrieval_cost(to_string(RetrievalCost::StokesDolp)) == RetrievalCost::StokesDolp);
  CHECK_THROWS_AS(parse_init_method("M_dolp"), std::invalid_argument);
  CHECK_THROWS_AS(parse_retrieval_mode("both"), std::invalid_argument);
  CHECK_THROWS_AS(parse_retrieval_cost("l1"), std::invalid_argument);
  GridAxis a{1.0, 2.0, 5};
  CHECK(a.values() == std::vector<double>{1.0, 1.25, 1.5, 1.75, 2.0});
  CHECK(GridAxis{3.0, 4.0, 1}.values() == std::vector<double>{3.0});
}

TEST_CASE("objective gradient matches finite differences") {
  const SingleScatterModel model(test::small_optics());
  const VoxelCloud truth = test::random_cloud(3, 20.0, 21);
  const MeasurementSet meas = test::render_measurements(model, truth, test::near_views(truth, 3, 8, 5000.0, 10.0));
  VoxelCloud x = test::random_cloud(3, 20.0, 22);
  for (RetrievalCost cost : {RetrievalCost::Stokes, RetrievalCost::StokesDolp}) {
    CAPTURE(to_string(cost));
    CloudGradient g;
    const double f = objective_gradient(meas, x, model, cost, g);
    CHECK(f > 0.0);
    const double scale_l = g.lwc.array().abs().maxCoeff(), scale_r = g.re.array().abs().maxCoeff();
    for (Eigen::Index v = 0; v < x.voxel_count(); ++v) {
      auto fd = [&](Grid3<double> VoxelCloud::*field, double h) {
        VoxelCloud a = x, b = x;
        (a.*field)[v] += h;
        (b.*field)[v] -= h;
        const auto sa = render_views(model, a, meas.cameras(), meas.sun);
        const auto sb = render_views(model, b, meas.cameras(), meas.sun);
        return (objective(sa, meas.images(), cost) - objective(sb, meas.images(), cost)) / (2 * h);
      };
      const double dl = fd(&VoxelCloud::lwc, 1e-6 * x.lwc[v]);
      const double dr = fd(&VoxelCloud::re, 1e-5);
      CHECK(std::abs(g.lwc[v] - dl) <= 1e-4 * std::max(std::abs(dl), 1e-3 * scale_l));
      CHECK(std::abs(g.re[v] - dr) <= 1e-4 * std::max(std::abs(dr), 1e-3 * scale_r));
    }
  }
}

TEST_CASE("grid search recovers the generating node") {
  const SingleScatterModel model(test::small_optics());
  const VoxelCloud shape = box_shape(4, 4, 3);
  InitConfig cfg;
  cfg.alpha_lwc = {0.2, 1.0, 5};
  cfg.alpha_re = {3.0, 15.0, 5};
  cfg.re_min = 4.5;
  const auto cams = test::near_views(shape, 4, 10, 5000.0, 10.0);
  const VoxelCloud truth =
      monotonic_profile(cfg.alpha_lwc.values()[2], cfg.alpha_re.values()[3], shape, cfg.lwc_min, cfg.re_min);
  const MeasurementSet meas = test::render_measurements(model, truth, cams);
  for (InitMethod m : {InitMethod::MStokes, InitMethod::MDolp}) {
    CAPTURE(to_string(m));
    cfg.method = m;
    const InitResult r = grid_search_init(cfg, meas, model, shape);
    CHECK(r.index_lwc == 2);
    CHECK(r.index_re == 3);
    CHECK(r.surface(2, 3) == 0.0);
    CHECK(r.cloud == truth);
    CHECK(r.surface.rows() == 5);
  }
  SUBCASE("homogeneous search") {
    InitConfig h = cfg;
    h.method = InitMethod::HStokes;
    h.lwc = {0.1, 0.4, 4};
    h.re = {6.0, 12.0, 4};
    const MeasurementSet hm = test::render_measurements(model, homogeneous_profile(0.3, 8.0, shape), cams);
    const InitResult r = grid_search_init(h, hm, model, shape);
    CHECK(r.param_lwc == doctest::Approx(0.3));
    CHECK(r.param_re == doctest::Approx(8.0));
  }
  SUBCASE("typical values need no measurements") {
    InitConfig t = cfg;
    t.method = InitMethod::HTypical;
    const InitResult r = grid_search_init(t, MeasurementSet{}, model, shape);
    CHECK(r.cloud.lwc(1, 1, 1) == 0.01);
    CHECK(r.cloud.re(1, 1, 1) == 12.0);
    CHECK(r.index_lwc == -1);
  }
  SUBCASE("invalid grids") {
    InitConfig bad = cfg;
    bad.alpha_re.count = 0;
    CHECK_THROWS_AS(grid_search_init(bad, meas, model, shape), std::invalid_argument);
  }
}

TEST_CASE("descent never increases the cost") {
  const SingleScatterModel model(test::small_optics());
  const VoxelCloud truth = test::random_cloud(3, 20.0, 31);
  const MeasurementSet meas = test::render_measurements(model, truth, test::near_views(truth, 4, 8, 5000.0, 10.0));
  const VoxelCloud init = homogeneous_profile(0.15, 9.5, truth);
  RetrievalOptions opt;
  opt.max_iterations = 25;
  opt.max_cycles = 3;
  opt.re_min = 4.0;
  opt.re_max = 16.0;

  SUBCASE("alternating") {
    const RetrievalResult r = retrieve(meas, init, model, opt);
    check_monotone(r);
    REQUIRE(r.phases.size() >= 2);
    for (std::size_t p = 0; p < r.phases.size(); ++p) {
      CHECK(r.phases[p].phase == (p % 2 == 0 ? Phase::LwcOnly : Phase::ReOnly));
      CHECK(r.phases[p].cycle == static_cast<int>(p / 2));
      CHECK(r.phases[p].iterations <= opt.max_iterations);
      if (p > 0) CHECK(r.phases[p].start_cost == r.phases[p - 1].end_cost);
    }
    CHECK(r.final_cost < 0.5 * r.initial_cost);
    for (Eigen::Index v = 0; v < truth.voxel_count(); ++v) {
      CHECK(r.cloud.lwc[v] >= 0.0);
      CHECK(r.cloud.re[v] >= opt.re_min);
      CHECK(r.cloud.re[v] <= opt.re_max);
    }
  }
  SUBCASE("joint") {
    opt.mode = RetrievalMode::Joint;
    const RetrievalResult r = retrieve(meas, init, model, opt);
    check_monotone(r);
    REQUIRE(r.phases.size() == 1);
    CHECK(r.phases[0].phase == Phase::Joint);
    CHECK(r.final_cost < r.initial_cost);
  }
  SUBCASE("frozen r_e") {
    opt.freeze_re = true;
    const RetrievalResult r = retrieve(meas, init, model, opt);
    check_monotone(r);
    CHECK(r.cloud.re == init.re);
    CHECK_FALSE(r.cloud.lwc == init.lwc);
  }
  SUBCASE("DoLP term") {
    opt.cost = RetrievalCost::StokesDolp;
    opt.max_cycles = 1;
    check_monotone(retrieve(meas, init, model, opt));
  }
  SUBCASE("the truth is a fixed point") {
    const RetrievalResult r = retrieve(meas, truth, model, opt);
    CHECK(r.initial_cost == 0.0);
    CHECK(r.cloud == truth);
  }
  SUBCASE("invalid options") {
    opt.max_iterations = 0;
    CHECK_THROWS_AS(retrieve(meas, init, model, opt), std::invalid_argument);
    opt.max_iterations = 5;
    opt.re_max = 1.0;
    CHECK_THROWS_AS(retrieve(meas, init, model, opt), std::invalid_argument);
  }
}

TEST_CASE("a non-finite cost aborts with a dump") {
  const auto dir = test::scratch_dir("nan");
  const VoxelCloud init = test::random_cloud(2, 20.0, 4);
  MeasurementSet meas;
  Camera cam;
  cam.resolution = 4;
  meas.views.push_back({cam, 0, false, StokesImage(4, 4)});
  RetrievalOptions opt;
  opt.failure_dump = dir / "failure.grid";
  CHECK_THROWS_AS(retrieve(meas, init, NanModel{}, opt), NumericalError);
  REQUIRE(std::filesystem::exists(opt.failure_dump));
  CHECK(load_grid(opt.failure_dump) == init);
}

TEST_CASE("noiseless monotonic scene improves on its initialization") {
  const SingleScatterModel model(test::small_optics());
  const VoxelCloud shape = box_shape(5, 5, 5);
  InitConfig cfg;
  cfg.method = InitMethod::MDolp;
  cfg.alpha_lwc = {0.2, 1.6, 8};
  cfg.alpha_re = {3.0, 15.0, 7};
  cfg.re_min = 4.5;
  // With the default floor the base layer holds almost no water and its r_e is unobservable.
  cfg.lwc_min = 0.02;
  const VoxelCloud truth = monotonic_profile(0.85, 8.3, shape, cfg.lwc_min, cfg.re_min);
  const MeasurementSet meas = test::render_measurements(model, truth, test::near_views(shape, 9, 16, 5000.0, 10.0));
  const InitResult init = grid_search_init(cfg, meas, model, shape);
  RetrievalOptions opt;
  opt.max_iterations = 400;
  opt.max_cycles = 3;
  opt.re_min = 4.0;
  opt.re_max = 16.0;
  const RetrievalResult r = retrieve(meas, init.cloud, model, opt);
  const ErrorReport e0 = epsilon_errors(init.cloud, truth), e1 = epsilon_errors(r.cloud, truth);
  MESSAGE("eps_lwc " << e0.eps_lwc << " -> " << e1.eps_lwc << ", eps_re " << e0.eps_re << " -> " << e1.eps_re);
  CHECK(e1.eps_lwc < e0.eps_lwc);
  CHECK(e1.eps_re < e0.eps_re);
  check_monotone(r);
}
