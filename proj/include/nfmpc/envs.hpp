#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nfmpc/common.hpp"

namespace nfmpc {

struct PlanarState {
  double px = 0.0, py = 0.0;
  double vx = 0.0, vy = 0.0;

  Vec to_vec() const { return {px, py, vx, vy}; }
};

struct Disc {
  double cx = 0.0, cy = 0.0;
  double radius = 0.0;
};

struct EnvContext {
  std::vector<Disc> obstacles;
  PlanarState start;
  double goal_x = 0.0, goal_y = 0.0;
  double bound_lo = -10.0, bound_hi = 10.0;  // square map
  bool dynamic = false;
  double drift_scale = 0.0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static EnvContext from_json(const nlohmann::json& j);
};

struct CostWeights {
  double goal = 1.0;
  double bound = 100.0;
  double collision = 1000.0;
  double control = 1e-4;
  double collision_margin = 0.0;  // cost activates when sdf < margin
  bool terminal_cost = true;
};

inline constexpr double kPlanarDt = 0.1;
inline constexpr double kPlanarNoiseSigma = 1.0;
inline constexpr double kControlLimit = 10.0;

/// One step of the double integrator. Controls are clamped to +/-kControlLimit
/// before integration; sigma > 0 adds Gaussian noise to the (clamped) control.
/// The prediction model is this function with sigma = 0.
PlanarState double_integrator_step(const PlanarState& state, double ux, double uy, double dt,
                                   double sigma, Rng* rng);

/// Signed distance to the nearest obstacle boundary; negative inside,
/// +infinity when there are no obstacles.
double sdf_query(const EnvContext& ctx, double px, double py);

double bound_cost(const PlanarState& state, double lo, double hi);

double stage_cost(const PlanarState& state, double ux, double uy, const EnvContext& ctx,
                  const CostWeights& weights);

double terminal_cost(const PlanarState& state, const EnvContext& ctx, const CostWeights& weights);

/// Total cost of rolling out `controls` (horizon-major, M=2 per step) from
/// `state` with the noiseless prediction model.
double rollout_cost(const PlanarState& state, ConstSpan controls, const EnvContext& ctx,
                    const CostWeights& weights);

struct EnvGenParams {
  int obstacle_count = 8;
  double radius = 0.8;
  double bound_lo = -10.0, bound_hi = 10.0;
  double clearance = 1.0;          // min sdf at start/goal placement
  double min_start_goal_dist = 8.0;
  double drift_scale = 0.15;       // for the dynamic variant
  int max_retries = 1000;

  nlohmann::json to_json() const;
  static EnvGenParams from_json(const nlohmann::json& j);
};

enum class EnvKind { kGrid, kRandom, kRandomDynamic };
EnvKind env_kind_from_string(const std::string& s);
std::string to_string(EnvKind kind);

/// Grid layouts are a pure function of the params (obstacles fixed, start and
/// goal seeded); random layouts are a pure function of (kind, seed, params).
EnvContext generate_env(EnvKind kind, std::uint64_t seed, const EnvGenParams& params);

/// Gaussian drift of every obstacle, clipped to map bounds; a perturbation
/// that would come within `clearance` of the robot or goal leaves that
/// obstacle in place.
void obstacle_drift(EnvContext& ctx, double robot_x, double robot_y, double clearance, Rng& rng);

enum class Outcome { kSuccess, kCollision, kTimeout };
std::string to_string(Outcome o);

inline constexpr double kGoalTolerance = 0.5;

/// Scans the trajectory in time order: a collision ends the episode
/// regardless of later goal arrival.
Outcome episode_outcome(const std::vector<PlanarState>& trajectory, const EnvContext& ctx,
                        double goal_tolerance = kGoalTolerance);

/// Conditioning vector for the flow: [state(4), goal(2), obstacle centers...].
/// With `use_current_state` unset, the episode's start state is used instead.
Vec make_context_vector(const EnvContext& ctx, const PlanarState& state, bool use_current_state,
                        bool include_obstacles);

}  // namespace nfmpc
