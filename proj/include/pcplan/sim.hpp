#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pcplan/planner.hpp"
#include "pcplan/scenario.hpp"

namespace pcplan {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt + 1));
}

// Arc-length projection of a point onto a polyline.
struct RouteProjection {
    double s = 0.0;       // arc length at the closest point
    double lateral = 0.0; // unsigned lateral offset
};

inline RouteProjection project_on_route(const std::vector<Vec2>& route, const Vec2& p) {
    RouteProjection best;
    double best_d2 = std::numeric_limits<double>::infinity();
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        const Vec2 a = route[i];
        const Vec2 d = route[i + 1] - a;
        const double len2 = norm_sq(d);
        const double len = std::sqrt(len2);
        const double t = len2 > 0.0 ? std::clamp(dot(p - a, d) / len2, 0.0, 1.0) : 0.0;
        const Vec2 proj = a + t * d;
        const double d2 = norm_sq(p - proj);
        if (d2 < best_d2) {
            best_d2 = d2;
            best.s = cum + t * len;
            best.lateral = std::sqrt(d2);
        }
        cum += len;
    }
    return best;
}

inline double route_length(const std::vector<Vec2>& route) {
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < route.size(); ++i) cum += norm(route[i + 1] - route[i]);
    return cum;
}

inline Waypoint route_pose(const std::vector<Vec2>& route, const std::vector<double>& cum,
                           double s) {
    const double sc = std::clamp(s, 0.0, cum.back());
    std::size_t i = 0;
    while (i + 2 < route.size() && cum[i + 1] < sc) ++i;
    const Vec2 a = route[i];
    const Vec2 d = route[i + 1] - a;
    const double len = cum[i + 1] - cum[i];
    const double t = len > 1e-12 ? (sc - cum[i]) / len : 0.0;
    const Vec2 pos = a + t * d;
    const Vec2 dir = len > 1e-12 ? d / len : Vec2{1.0, 0.0};
    return {pos.x, pos.y, dir.x, dir.y};
}

} // namespace detail

// ---------------------------------------------------------------------------
// World state
// ---------------------------------------------------------------------------

struct AgentRuntime {
    AgentSpec spec;
    EgoState state;
    double progress = 0.0; // arc length along the agent's route
    std::vector<double> route_cum;
};

struct World {
    EgoState ego;
    VehicleShape ego_shape;
    std::vector<AgentRuntime> agents;
    std::vector<Vec2> route;
    double speed_limit = 15.0;
    double corridor_half_width = 3.0;
    double time = 0.0;
};

inline World make_world(const Scenario& sc, const VehicleShape& ego_shape = {}) {
    World w;
    w.ego = sc.ego_start;
    w.ego_shape = ego_shape;
    w.route = sc.route;
    w.speed_limit = sc.speed_limit;
    w.corridor_half_width = sc.corridor_half_width;
    for (const AgentSpec& spec : sc.agents) {
        AgentRuntime rt;
        rt.spec = spec;
        rt.state = spec.start;
        if (spec.route.size() >= 2) {
            rt.route_cum.resize(spec.route.size(), 0.0);
            for (std::size_t i = 1; i < spec.route.size(); ++i) {
                rt.route_cum[i] =
                    rt.route_cum[i - 1] + norm(spec.route[i] - spec.route[i - 1]);
            }
            rt.progress = detail::project_on_route(spec.route, spec.start.position()).s;
        }
        w.agents.push_back(std::move(rt));
    }
    return w;
}

namespace detail {

// IDM acceleration toward the nearest leader on the agent's lane. The ego
// counts as a leader when it sits on the lane within the gap horizon.
inline double idm_accel(const World& w, const AgentRuntime& me) {
    const IdmParams& p = me.spec.idm;
    const double v = me.state.v;

    double gap = std::numeric_limits<double>::infinity();
    double lead_v = 0.0;
    const double my_s = me.progress;
    constexpr double lane_half_width = 2.0; // same-lane test
    constexpr double gap_horizon = 100.0;   // m

    const auto consider = [&](const Vec2& pos, double speed, const VehicleShape& shape) {
        const RouteProjection proj = project_on_route(me.spec.route, pos);
        if (proj.lateral > lane_half_width) return;
        const double ds = proj.s - my_s;
        if (ds <= 0.0 || ds > gap_horizon) return;
        const double bumper =
            ds + shape.rear_offset() - me.spec.shape.front_offset();
        if (bumper < gap) {
            gap = bumper;
            lead_v = speed;
        }
    };

    for (const AgentRuntime& other : w.agents) {
        if (&other == &me) continue;
        consider(other.state.position(), other.state.v, other.spec.shape);
    }
    consider(w.ego.position(), w.ego.v, w.ego_shape);

    double interaction = 0.0;
    if (std::isfinite(gap)) {
        const double dv = v - lead_v;
        const double s_star =
            p.min_gap + std::max(0.0, v * p.time_headway +
                                          v * dv / (2.0 * std::sqrt(p.max_accel *
                                                                    p.comfortable_decel)));
        const double s = std::max(gap, 0.1);
        interaction = (s_star / s) * (s_star / s);
    }
    const double free_flow = std::pow(v / p.desired_speed, p.exponent);
    double a = p.max_accel * (1.0 - free_flow - interaction);
    return std::clamp(a, -9.0, p.max_accel);
}

inline void advance_along_route(AgentRuntime& rt, double ds) {
    rt.progress += ds;
    const Waypoint pose = route_pose(rt.spec.route, rt.route_cum, rt.progress);
    rt.state.x = pose.x;
    rt.state.y = pose.y;
    if (rt.progress < rt.route_cum.back()) rt.state.theta = pose.heading();
}

} // namespace detail

// Advances the ego by the bicycle model and every agent by its behavior
// policy along its lane polyline. All IDM accelerations are evaluated on the
// pre-step snapshot so the update is simultaneous, not sequential.
inline void step_world(World& w, const Control& ego_control, double dt,
                       const ControlLimits& limits = {}) {
    std::vector<double> idm_accels(w.agents.size(), 0.0);
    for (std::size_t i = 0; i < w.agents.size(); ++i) {
        if (w.agents[i].spec.behavior == AgentBehavior::idm_lane_follow) {
            idm_accels[i] = detail::idm_accel(w, w.agents[i]);
        }
    }

    w.ego = step(w.ego, ego_control, dt, w.ego_shape.wheelbase, limits);
    for (std::size_t i = 0; i < w.agents.size(); ++i) {
        AgentRuntime& rt = w.agents[i];
        switch (rt.spec.behavior) {
            case AgentBehavior::stopped:
                break;
            case AgentBehavior::constant_velocity:
                if (rt.spec.route.size() >= 2) {
                    detail::advance_along_route(rt, rt.state.v * dt);
                } else {
                    rt.state.x += rt.state.v * std::cos(rt.state.theta) * dt;
                    rt.state.y += rt.state.v * std::sin(rt.state.theta) * dt;
                }
                break;
            case AgentBehavior::idm_lane_follow:
                detail::advance_along_route(rt, rt.state.v * dt);
                rt.state.v = std::max(0.0, rt.state.v + idm_accels[i] * dt);
                break;
        }
    }
    w.time += dt;
}

// First agent whose physical capsule overlaps the ego (no safety margin).
inline std::optional<std::pair<int, double>> detect_collision(const World& w) {
    const Capsule ego_cap = ego_capsule(w.ego, w.ego_shape);
    for (const AgentRuntime& rt : w.agents) {
        const Capsule cap = capsule_at(rt.state.position(), rt.state.theta, rt.spec.shape);
        const double d = capsule_distance(ego_cap, cap);
        if (d < 0.0) return std::make_pair(rt.spec.id, -d);
    }
    return std::nullopt;
}

// Constant-velocity capsule time-to-collision, capped.
inline double time_to_collision(const World& w, double cap_s = 10.0, double dt = 0.1) {
    double best = cap_s;
    for (const AgentRuntime& rt : w.agents) {
        for (double t = dt; t < best; t += dt) {
            EgoState e = w.ego;
            e.x += e.v * std::cos(e.theta) * t;
            e.y += e.v * std::sin(e.theta) * t;
            EgoState a = rt.state;
            a.x += a.v * std::cos(a.theta) * t;
            a.y += a.v * std::sin(a.theta) * t;
            const double d = capsule_distance(
                ego_capsule(e, w.ego_shape), capsule_at(a.position(), a.theta, rt.spec.shape));
            if (d <= 0.0) {
                best = std::min(best, t);
                break;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Simplified composite score: product of hard multipliers times the weighted
// average of soft metrics (TTC 5, progress 5, speed 4, comfort 2).
struct ScoreParts {
    bool collided = false;
    bool corridor_compliant = true;
    bool progress_above_min = true; // at least 20% of the reference progress
    double ttc = 1.0;               // fraction of steps with TTC >= 3 s
    double progress_ratio = 1.0;    // progress / achievable reference
    double speed_compliance = 1.0;  // fraction of steps within the limit
    double comfort = 1.0;           // fraction of steps within accel/jerk bounds
};

inline double composite_score(const ScoreParts& parts) {
    const double multiplier = (parts.collided ? 0.0 : 1.0) *
                              (parts.corridor_compliant ? 1.0 : 0.0) *
                              (parts.progress_above_min ? 1.0 : 0.5);
    const double soft = (5.0 * parts.ttc + 5.0 * parts.progress_ratio +
                         4.0 * parts.speed_compliance + 2.0 * parts.comfort) /
                        16.0;
    return std::clamp(multiplier * soft, 0.0, 1.0);
}

struct StepTrace {
    double time = 0.0;
    EgoState ego;
    Control control;
    std::vector<std::pair<int, EgoState>> agents;
    std::vector<std::pair<int, double>> h_critical; // barrier per critical agent
    double min_ttc = 10.0;
    double final_slack_rate = 0.0; // of this cycle's emitted correction
    double max_slack = 0.0;
    bool infeasible_start = false;
};

struct SimResult {
    std::string scenario;
    std::uint64_t seed = 0;
    PlannerMode mode = PlannerMode::full;

    bool collided = false;
    int collided_agent = -1;
    double min_h = std::numeric_limits<double>::infinity();          // all agents
    double min_h_critical = std::numeric_limits<double>::infinity(); // critical agents
    double composite = 0.0;
    double progress = 0.0;
    double max_abs_accel = 0.0;
    double max_abs_jerk = 0.0;

    double max_final_slack = 0.0;       // max over cycles
    double mean_final_slack_rate = 0.0; // mean over cycles
    std::vector<double> slack_profile;  // mean per denoising step (chronological)

    ScoreParts parts;
    std::vector<StepTrace> traces;
};

// Planning context for one replanning cycle: current ego state, the route,
// constant-velocity neighbor predictions over the horizon, and the cycle's
// derived seed.
inline SceneContext plan_context(const Scenario& sc, const World& w, int step_index) {
    SceneContext ctx;
    ctx.ego0 = w.ego;
    ctx.route = sc.route;
    ctx.rng_seed = detail::mix_seed(sc.seed, std::uint64_t(step_index));
    ctx.horizon_steps = sc.horizon_steps;
    ctx.dt = sc.dt;
    ctx.cruise_speed = sc.cruise_speed;
    for (const AgentRuntime& rt : w.agents) {
        NeighborTrack nb;
        nb.id = rt.spec.id;
        nb.shape = rt.spec.shape;
        nb.prediction.dt = sc.dt;
        nb.prediction.waypoints.resize(std::size_t(sc.horizon_steps));
        for (int k = 0; k < sc.horizon_steps; ++k) {
            const double t = sc.dt * double(k);
            nb.prediction.waypoints[std::size_t(k)] = {
                rt.state.x + rt.state.v * std::cos(rt.state.theta) * t,
                rt.state.y + rt.state.v * std::sin(rt.state.theta) * t,
                std::cos(rt.state.theta), std::sin(rt.state.theta)};
        }
        ctx.neighbor_tracks.push_back(std::move(nb));
    }
    return ctx;
}

// Closed-loop run: replan -> execute first action -> advance world -> check
// collision, at the scenario rate, aborting on collision. Deterministic per
// (scenario, config, denoiser params).
inline SimResult run_scenario(const Scenario& sc, const PlannerConfig& config,
                              const SyntheticDenoiserParams& dparams = {}) {
    World w = make_world(sc, config.ego_shape);
    const int steps = int(std::lround(sc.duration / sc.dt));
    const int t_total = config.schedule.steps();

    SimResult result;
    result.scenario = sc.name;
    result.seed = sc.seed;
    result.mode = config.mode;
    result.slack_profile.assign(std::size_t(t_total), 0.0);
    result.traces.reserve(std::size_t(steps));

    const double start_s = detail::project_on_route(sc.route, w.ego.position()).s;
    const double route_len = detail::route_length(sc.route);
    const double reference_progress =
        std::min(route_len - start_s, sc.cruise_speed * sc.duration);

    int ttc_ok = 0, speed_ok = 0, comfort_ok = 0;
    bool corridor_ok = true;
    double prev_accel = 0.0;
    int cycles = 0;

    for (int i = 0; i < steps; ++i) {
        const SceneContext ctx = plan_context(sc, w, i);
        SyntheticDenoiser denoiser(ctx, config.schedule, dparams);
        const auto [control, rec] = replan_cycle(ctx, denoiser, config);

        ++cycles;
        result.mean_final_slack_rate += rec.final_slack_rate;
        result.max_final_slack = std::max(result.max_final_slack, rec.final_max_slack);
        for (std::size_t t = 0; t < rec.per_step_slack_rate.size(); ++t) {
            result.slack_profile[t] += rec.per_step_slack_rate[t];
        }

        StepTrace trace;
        trace.control = control;
        trace.final_slack_rate = rec.final_slack_rate;
        trace.max_slack = rec.final_max_slack;
        trace.infeasible_start = rec.infeasible_start;

        step_world(w, control, sc.dt, config.limits);

        trace.time = w.time; // timestamp of the recorded post-step state
        trace.ego = w.ego;
        for (const AgentRuntime& rt : w.agents) trace.agents.push_back({rt.spec.id, rt.state});

        // barrier bookkeeping after the step
        for (const AgentRuntime& rt : w.agents) {
            const Capsule cap = capsule_at(rt.state.position(), rt.state.theta, rt.spec.shape);
            const double h = barrier(w.ego, config.ego_shape, cap, config.barrier);
            result.min_h = std::min(result.min_h, h);
            if (rec.critical_final.count(rt.spec.id)) {
                result.min_h_critical = std::min(result.min_h_critical, h);
                trace.h_critical.push_back({rt.spec.id, h});
            }
        }

        const double ttc = time_to_collision(w);
        trace.min_ttc = ttc;
        if (ttc >= 3.0) ++ttc_ok;
        if (w.ego.v <= sc.speed_limit + 0.1) ++speed_ok;
        const double jerk = (control.accel - prev_accel) / sc.dt;
        if (std::abs(control.accel) <= 3.0 && std::abs(jerk) <= 5.0) ++comfort_ok;
        result.max_abs_accel = std::max(result.max_abs_accel, std::abs(control.accel));
        result.max_abs_jerk = std::max(result.max_abs_jerk, std::abs(jerk));
        prev_accel = control.accel;

        const detail::RouteProjection proj = detail::project_on_route(sc.route, w.ego.position());
        if (proj.lateral > sc.corridor_half_width) corridor_ok = false;
        result.progress = std::max(result.progress, proj.s - start_s);

        result.traces.push_back(std::move(trace));

        if (const auto hit = detect_collision(w)) {
            result.collided = true;
            result.collided_agent = hit->first;
            break;
        }
    }

    if (cycles > 0) {
        result.mean_final_slack_rate /= double(cycles);
        for (double& r : result.slack_profile) r /= double(cycles);
    }

    const int counted = int(result.traces.size());
    result.parts.collided = result.collided;
    result.parts.corridor_compliant = corridor_ok;
    result.parts.progress_above_min =
        reference_progress <= 0.0 || result.progress >= 0.2 * reference_progress;
    result.parts.ttc = counted > 0 ? double(ttc_ok) / counted : 1.0;
    result.parts.progress_ratio =
        reference_progress > 0.0 ? std::clamp(result.progress / reference_progress, 0.0, 1.0)
                                 : 1.0;
    result.parts.speed_compliance = counted > 0 ? double(speed_ok) / counted : 1.0;
    result.parts.comfort = counted > 0 ? double(comfort_ok) / counted : 1.0;
    result.composite = composite_score(result.parts);
    return result;
}

} // namespace pcplan
