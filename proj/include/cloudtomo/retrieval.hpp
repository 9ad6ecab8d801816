#pragma once

#include "cloudtomo/cloud.hpp"
#include "cloudtomo/measurements.hpp"
#include "cloudtomo/render.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cloudtomo {

// ---- costs -------------------------------------------------------------------

/// Pixels whose simulated or measured I falls below this fraction of the view's
/// maximum are left out of the DoLP cost.
inline constexpr double kDolpFloor = 1e-6;

double cost_radiance(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas);
double cost_q(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas);
double cost_u(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas);
double cost_stokes(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas);

struct DolpCost {
  double value = 0.0;
  long excluded = 0;  // pixels below the intensity floor
};
DolpCost cost_dolp(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas);

// ---- parametric profiles -------------------------------------------------------

/// LWC = alpha_lwc (Z - Z0) + lwc_min and r_e = alpha_re (Z - Z0)^(1/3) + re_min inside
/// the mask of shape, Z in km at voxel centers and Z0 the lowest masked center; zero outside.
VoxelCloud monotonic_profile(double alpha_lwc, double alpha_re, const VoxelCloud& shape,
                             double lwc_min = kLwcMin, double re_min = kReMin);

VoxelCloud homogeneous_profile(double lwc, double re, const VoxelCloud& shape);

// ---- initialization ------------------------------------------------------------

enum class InitMethod { HTypical, HStokes, MStokes, MDolp };
std::string to_string(InitMethod method);
/// Accepts H_Typical, H_Stokes, M_Stokes, M_DoLP; throws std::invalid_argument otherwise.
InitMethod parse_init_method(std::string_view name);

struct GridAxis {
  double min = 0.0;
  double max = 0.0;
  int count = 16;
  std::vector<double> values() const;
};

struct InitConfig {
  InitMethod method = InitMethod::MDolp;
  GridAxis alpha_lwc{0.1, 1.6, 16};  // g/m^3/km
  GridAxis alpha_re{3.0, 15.0, 16};  // um/km^(1/3)
  GridAxis lwc{0.1, 1.6, 16};        // g/m^3, homogeneous search
  GridAxis re{3.0, 15.0, 16};        // um, homogeneous search
  double typical_lwc = 0.01;
  double typical_re = 12.0;
  double lwc_min = kLwcMin;
  double re_min = kReMin;

  void validate() const;
};

struct InitResult {
  InitMethod method = InitMethod::HTypical;
  double param_lwc = 0.0;  // alpha_lwc or LWC
  double param_re = 0.0;   // alpha_re or r_e
  int index_lwc = -1;      // grid node, -1 without a search
  int index_re = -1;
  VoxelCloud cloud;
  Eigen::MatrixXd surface;  // rows: LWC axis, columns: r_e axis
  long dolp_excluded = 0;   // at the chosen node
};

/// Renders every grid node and picks the cost minimum (first in row-major order on ties).
InitResult grid_search_init(const InitConfig& config, const MeasurementSet& meas, const ForwardModel& model,
                            const VoxelCloud& shape);

// ---- preconditioning -----------------------------------------------------------

struct Preconditioner {
  double lwc = 10.0;
  double re = 0.1;
  void validate() const;
};

/// Optimization variables (Pi_LWC LWC, Pi_re r_e) over the masked voxels in flat order.
struct ScaledVariables {
  Eigen::ArrayXd lwc;
  Eigen::ArrayXd re;
};

ScaledVariables precondition(const VoxelCloud& cloud, const Preconditioner& pc);
/// Writes the unscaled values back into the masked voxels of cloud.
void unprecondition(const ScaledVariables& vars, const Preconditioner& pc, VoxelCloud& cloud);
/// Gradient with respect to the scaled variables: dC/d(Pi x) = (1 / Pi) dC/dx.
ScaledVariables precondition_gradient(const CloudGradient& gradient, const VoxelCloud& cloud,
                                      const Preconditioner& pc);

// ---- descent -------------------------------------------------------------------

enum class RetrievalMode { Joint, Alternating };
enum class Phase { Joint, LwcOnly, ReOnly };
enum class RetrievalCost { Stokes, StokesDolp };
std::string to_string(RetrievalMode mode);
std::string to_string(Phase phase);
std::string to_string(RetrievalCost cost);
RetrievalMode parse_retrieval_mode(std::string_view name);
RetrievalCost parse_retrieval_cost(std::string_view name);

struct RetrievalOptions {
  RetrievalMode mode = RetrievalMode::Alternating;
  RetrievalCost cost = RetrievalCost::Stokes;
  Preconditioner preconditioner;
  bool freeze_re = false;
  int max_iterations = 500;      // per phase
  int window = 10;               // iterations for the phase convergence test
  double phase_tolerance = 1e-4; // relative decrease over the window
  double cycle_tolerance = 1e-3; // relative decrease over an LWC + r_e cycle
  int max_cycles = 50;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 60;
  double re_min = kReMin;
  double re_max = kReMax;
  std::filesystem::path failure_dump;  // iterate written here on a non-finite cost

  void validate() const;
};

struct IterationRecord {
  int cycle = 0;
  Phase phase = Phase::Joint;
  int iteration = 0;  // within the phase; 0 is the phase start
  double cost = 0.0;
  double step = 0.0;
};

struct PhaseRecord {
  int cycle = 0;
  Phase phase = Phase::Joint;
  int iterations = 0;
  double start_cost = 0.0;
  double end_cost = 0.0;
  bool converged = false;
};

struct RetrievalResult {
  VoxelCloud cloud;
  std::vector<IterationRecord> history;
  std::vector<PhaseRecord> phases;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

/// Retrieval objective: cost_stokes, plus cost_dolp for RetrievalCost::StokesDolp.
double objective(const std::vector<StokesImage>& sim, const std::vector<StokesImage>& meas, RetrievalCost cost);

/// Objective and its gradient with respect to every voxel's LWC and r_e.
double objective_gradient(const MeasurementSet& meas, const VoxelCloud& cloud, const ForwardModel& model,
                          RetrievalCost cost, CloudGradient& gradient);

/// Projected gradient descent with Armijo backtracking on the preconditioned
/// variables, jointly or alternating LWC-only and r_e-only phases starting with LWC.
/// Throws NumericalError on a non-finite cost.
RetrievalResult retrieve(const MeasurementSet& meas, const VoxelCloud& init, const ForwardModel& model,
                         const RetrievalOptions& options);

}  // namespace cloudtomo
