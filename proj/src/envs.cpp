#include "nfmpc/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace nfmpc {

nlohmann::json EnvContext::to_json() const {
  nlohmann::json obs = nlohmann::json::array();
  for (const Disc& d : obstacles) obs.push_back({{"cx", d.cx}, {"cy", d.cy}, {"r", d.radius}});
  return nlohmann::json{{"obstacles", obs},
                        {"start", {start.px, start.py, start.vx, start.vy}},
                        {"goal", {goal_x, goal_y}},
                        {"bounds", {bound_lo, bound_hi}},
                        {"dynamic", dynamic},
                        {"drift_scale", drift_scale},
                        {"seed", seed}};
}

EnvContext EnvContext::from_json(const nlohmann::json& j) {
  EnvContext ctx;
  for (const auto& o : j.at("obstacles"))
    ctx.obstacles.push_back({o.at("cx").get<double>(), o.at("cy").get<double>(),
                             o.at("r").get<double>()});
  const auto& s = j.at("start");
  ctx.start = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(),
               s.at(3).get<double>()};
  ctx.goal_x = j.at("goal").at(0).get<double>();
  ctx.goal_y = j.at("goal").at(1).get<double>();
  ctx.bound_lo = j.at("bounds").at(0).get<double>();
  ctx.bound_hi = j.at("bounds").at(1).get<double>();
  ctx.dynamic = j.at("dynamic").get<bool>();
  ctx.drift_scale = j.at("drift_scale").get<double>();
  ctx.seed = j.at("seed").get<std::uint64_t>();
  return ctx;
}

PlanarState double_integrator_step(const PlanarState& state, double ux, double uy, double dt,
                                   double sigma, Rng* rng) {
  ux = std::clamp(ux, -kControlLimit, kControlLimit);
  uy = std::clamp(uy, -kControlLimit, kControlLimit);
  if (sigma > 0.0) {
    check_config(rng != nullptr, "stochastic step needs an rng");
    ux += sigma * rng->normal();
    uy += sigma * rng->normal();
  }
  PlanarState next;
  next.px = state.px + dt * state.vx;
  next.py = state.py + dt * state.vy;
  next.vx = state.vx + dt * ux;
  next.vy = state.vy + dt * uy;
  return next;
}

double sdf_query(const EnvContext& ctx, double px, double py) {
  double best = std::numeric_limits<double>::infinity();
  for (const Disc& d : ctx.obstacles) {
    const double dist = std::hypot(px - d.cx, py - d.cy) - d.radius;
    best = std::min(best, dist);
  }
  return best;
}

double bound_cost(const PlanarState& state, double lo, double hi) {
  double c = 0.0;
  for (double p : {state.px, state.py}) {
    if (p > hi || p < lo) {
      const double dhi = (p - hi) * (p - hi);
      const double dlo = (p - lo) * (p - lo);
      c += std::min(dhi, dlo);
    }
  }
  return c;
}

double stage_cost(const PlanarState& state, double ux, double uy, const EnvContext& ctx,
                  const CostWeights& weights) {
  const double gx = state.px - ctx.goal_x;
  const double gy = state.py - ctx.goal_y;
  // goal state has zero target velocity
  const double goal_term = gx * gx + gy * gy + state.vx * state.vx + state.vy * state.vy;
  const double sdf = sdf_query(ctx, state.px, state.py);
  const double collision_term = std::max(0.0, weights.collision_margin - sdf);
  const double control_term = ux * ux + uy * uy;
  return weights.goal * goal_term + weights.bound * bound_cost(state, ctx.bound_lo, ctx.bound_hi) +
         weights.collision * collision_term + weights.control * control_term;
}

double terminal_cost(const PlanarState& state, const EnvContext& ctx,
                     const CostWeights& weights) {
  if (!weights.terminal_cost) return 0.0;
  const double gx = state.px - ctx.goal_x;
  const double gy = state.py - ctx.goal_y;
  return weights.goal *
         (gx * gx + gy * gy + state.vx * state.vx + state.vy * state.vy);
}

double rollout_cost(const PlanarState& state, ConstSpan controls, const EnvContext& ctx,
                    const CostWeights& weights) {
  check_dim(controls.size() % 2 == 0, "planar controls come in (ax, ay) pairs");
  PlanarState x = state;
  double total = 0.0;
  for (std::size_t h = 0; h < controls.size(); h += 2) {
    const double ux = std::clamp(controls[h], -kControlLimit, kControlLimit);
    const double uy = std::clamp(controls[h + 1], -kControlLimit, kControlLimit);
    total += stage_cost(x, ux, uy, ctx, weights);
    x = double_integrator_step(x, ux, uy, kPlanarDt, 0.0, nullptr);
  }
  return total + terminal_cost(x, ctx, weights);
}

nlohmann::json EnvGenParams::to_json() const {
  return nlohmann::json{{"obstacle_count", obstacle_count},
                        {"radius", radius},
                        {"bounds", {bound_lo, bound_hi}},
                        {"clearance", clearance},
                        {"min_start_goal_dist", min_start_goal_dist},
                        {"drift_scale", drift_scale},
                        {"max_retries", max_retries}};
}

EnvGenParams EnvGenParams::from_json(const nlohmann::json& j) {
  EnvGenParams p;
  p.obstacle_count = j.value("obstacle_count", p.obstacle_count);
  p.radius = j.value("radius", p.radius);
  if (j.contains("bounds")) {
    p.bound_lo = j.at("bounds").at(0).get<double>();
    p.bound_hi = j.at("bounds").at(1).get<double>();
  }
  p.clearance = j.value("clearance", p.clearance);
  p.min_start_goal_dist = j.value("min_start_goal_dist", p.min_start_goal_dist);
  p.drift_scale = j.value("drift_scale", p.drift_scale);
  p.max_retries = j.value("max_retries", p.max_retries);
  return p;
}

EnvKind env_kind_from_string(const std::string& s) {
  if (s == "grid") return EnvKind::kGrid;
  if (s == "random") return EnvKind::kRandom;
  if (s == "random-dynamic") return EnvKind::kRandomDynamic;
  throw ConfigError("unknown environment kind '" + s + "'");
}

std::string to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::kGrid: return "grid";
    case EnvKind::kRandom: return "random";
    case EnvKind::kRandomDynamic: return "random-dynamic";
  }
  return "random";
}

namespace {

// A point with sdf >= clearance, strictly inside the map.
bool sample_clear_point(const EnvContext& ctx, const EnvGenParams& p, Rng& rng, double* x,
                        double* y) {
  for (int attempt = 0; attempt < p.max_retries; ++attempt) {
    const double margin = 0.5;
    const double px = rng.uniform(p.bound_lo + margin, p.bound_hi - margin);
    const double py = rng.uniform(p.bound_lo + margin, p.bound_hi - margin);
    if (sdf_query(ctx, px, py) >= p.clearance) {
      *x = px;
      *y = py;
      return true;
    }
  }
  return false;
}

}  // namespace

EnvContext generate_env(EnvKind kind, std::uint64_t seed, const EnvGenParams& p) {
  check_config(p.obstacle_count >= 0, "obstacle count must be nonnegative");
  check_config(p.bound_hi > p.bound_lo, "map bounds inverted");
  EnvContext ctx;
  ctx.bound_lo = p.bound_lo;
  ctx.bound_hi = p.bound_hi;
  ctx.seed = seed;
  ctx.dynamic = kind == EnvKind::kRandomDynamic;
  ctx.drift_scale = ctx.dynamic ? p.drift_scale : 0.0;

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  if (kind == EnvKind::kGrid) {
    // Lattice of obstacle slots, centre cell left open.
    int side = 1;
    while (side * side - 1 < p.obstacle_count) ++side;
    const double span = (p.bound_hi - p.bound_lo) * 0.6;
    const double step = side > 1 ? span / (side - 1) : 0.0;
    const double origin = -span / 2.0;
    int placed = 0;
    for (int i = 0; i < side && placed < p.obstacle_count; ++i) {
      for (int j = 0; j < side && placed < p.obstacle_count; ++j) {
        if (side % 2 == 1 && i == side / 2 && j == side / 2) continue;
        ctx.obstacles.push_back({origin + i * step, origin + j * step, p.radius});
        ++placed;
      }
    }
  } else {
    const double margin = p.radius;
    for (int i = 0; i < p.obstacle_count; ++i) {
      ctx.obstacles.push_back({rng.uniform(p.bound_lo + margin, p.bound_hi - margin),
                               rng.uniform(p.bound_lo + margin, p.bound_hi - margin), p.radius});
    }
  }

  double sx, sy, gx, gy;
  if (!sample_clear_point(ctx, p, rng, &sx, &sy))
    throw ConfigError("environment generation: no clear start after retries");
  bool goal_ok = false;
  for (int attempt = 0; attempt < p.max_retries && !goal_ok; ++attempt) {
    if (!sample_clear_point(ctx, p, rng, &gx, &gy)) break;
    goal_ok = std::hypot(gx - sx, gy - sy) >= p.min_start_goal_dist;
  }
  if (!goal_ok) throw ConfigError("environment generation: no clear goal after retries");
  ctx.start = {sx, sy, 0.0, 0.0};
  ctx.goal_x = gx;
  ctx.goal_y = gy;
  return ctx;
}

void obstacle_drift(EnvContext& ctx, double robot_x, double robot_y, double clearance, Rng& rng) {
  if (!ctx.dynamic || ctx.drift_scale <= 0.0) return;
  for (Disc& d : ctx.obstacles) {
    const double nx = std::clamp(d.cx + ctx.drift_scale * rng.normal(), ctx.bound_lo,
                                 ctx.bound_hi);
    const double ny = std::clamp(d.cy + ctx.drift_scale * rng.normal(), ctx.bound_lo,
                                 ctx.bound_hi);
    const double robot_dist = std::hypot(nx - robot_x, ny - robot_y) - d.radius;
    const double goal_dist = std::hypot(nx - ctx.goal_x, ny - ctx.goal_y) - d.radius;
    if (robot_dist < clearance || goal_dist < clearance) continue;
    d.cx = nx;
    d.cy = ny;
  }
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kSuccess: return "success";
    case Outcome::kCollision: return "collision";
    case Outcome::kTimeout: return "timeout";
  }
  return "timeout";
}

Outcome episode_outcome(const std::vector<PlanarState>& trajectory, const EnvContext& ctx,
                        double goal_tolerance) {
  for (const PlanarState& x : trajectory) {
    if (sdf_query(ctx, x.px, x.py) < 0.0) return Outcome::kCollision;
    if (std::hypot(x.px - ctx.goal_x, x.py - ctx.goal_y) <= goal_tolerance)
      return Outcome::kSuccess;
  }
  return Outcome::kTimeout;
}

Vec make_context_vector(const EnvContext& ctx, const PlanarState& state, bool use_current_state,
                        bool include_obstacles) {
  const PlanarState& s = use_current_state ? state : ctx.start;
  Vec c{s.px, s.py, s.vx, s.vy, ctx.goal_x, ctx.goal_y};
  if (include_obstacles) {
    for (const Disc& d : ctx.obstacles) {
      c.push_back(d.cx);
      c.push_back(d.cy);
    }
  }
  return c;
}

}  // namespace nfmpc
