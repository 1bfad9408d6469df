#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcplan/diffusion.hpp"
#include "pcplan/dynamics.hpp"

namespace pcplan {

inline constexpr int kScenarioSchemaVersion = 1;

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class AgentBehavior { idm_lane_follow, constant_velocity, stopped };

inline const char* to_string(AgentBehavior b) {
    switch (b) {
        case AgentBehavior::idm_lane_follow: return "idm_lane_follow";
        case AgentBehavior::constant_velocity: return "constant_velocity";
        case AgentBehavior::stopped: return "stopped";
    }
    return "unknown";
}

inline AgentBehavior agent_behavior_from_string(const std::string& s) {
    if (s == "idm_lane_follow") return AgentBehavior::idm_lane_follow;
    if (s == "constant_velocity") return AgentBehavior::constant_velocity;
    if (s == "stopped") return AgentBehavior::stopped;
    throw ScenarioError("unknown agent behavior: " + s);
}

// Standard IDM car-following parameters.
struct IdmParams {
    double desired_speed = 9.0;     // m/s
    double time_headway = 1.5;      // s
    double min_gap = 2.0;           // m
    double max_accel = 1.5;         // m/s^2
    double comfortable_decel = 2.5; // m/s^2
    double exponent = 4.0;
};

struct AgentSpec {
    int id = 0;
    EgoState start;
    VehicleShape shape;
    AgentBehavior behavior = AgentBehavior::constant_velocity;
    std::vector<Vec2> route; // lane polyline the agent follows
    IdmParams idm;
};

struct Scenario {
    std::string name;
    EgoState ego_start;
    std::vector<Vec2> route; // ego reference path
    std::vector<AgentSpec> agents;
    double duration = 15.0;           // s
    std::uint64_t seed = 0;
    double speed_limit = 15.0;        // m/s
    double corridor_half_width = 3.0; // m, drivable corridor around the route
    double cruise_speed = 9.0;        // m/s target of the nominal profile
    double dt = 0.1;                  // s
    int horizon_steps = 80;           // K
};

// ---------------------------------------------------------------------------
// JSON serialization (scenario file schema)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const EgoState& s) {
    return {{"x", s.x}, {"y", s.y}, {"theta", s.theta}, {"delta", s.delta}, {"v", s.v}};
}

inline EgoState ego_state_from_json(const nlohmann::json& j) {
    return {j.at("x").get<double>(), j.at("y").get<double>(), j.at("theta").get<double>(),
            j.value("delta", 0.0), j.at("v").get<double>()};
}

inline nlohmann::json to_json(const VehicleShape& s) {
    return {{"axis_length", s.axis_length}, {"half_width", s.half_width},
            {"wheelbase", s.wheelbase}};
}

inline VehicleShape vehicle_shape_from_json(const nlohmann::json& j) {
    VehicleShape s;
    s.axis_length = j.value("axis_length", s.axis_length);
    s.half_width = j.value("half_width", s.half_width);
    s.wheelbase = j.value("wheelbase", s.wheelbase);
    return s;
}

inline nlohmann::json route_to_json(const std::vector<Vec2>& route) {
    nlohmann::json out = nlohmann::json::array();
    for (const Vec2& p : route) out.push_back({p.x, p.y});
    return out;
}

inline std::vector<Vec2> route_from_json(const nlohmann::json& j) {
    std::vector<Vec2> out;
    for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    return out;
}

inline nlohmann::json to_json(const IdmParams& p) {
    return {{"desired_speed", p.desired_speed}, {"time_headway", p.time_headway},
            {"min_gap", p.min_gap},             {"max_accel", p.max_accel},
            {"comfortable_decel", p.comfortable_decel}, {"exponent", p.exponent}};
}

inline IdmParams idm_from_json(const nlohmann::json& j) {
    IdmParams p;
    p.desired_speed = j.value("desired_speed", p.desired_speed);
    p.time_headway = j.value("time_headway", p.time_headway);
    p.min_gap = j.value("min_gap", p.min_gap);
    p.max_accel = j.value("max_accel", p.max_accel);
    p.comfortable_decel = j.value("comfortable_decel", p.comfortable_decel);
    p.exponent = j.value("exponent", p.exponent);
    return p;
}

inline nlohmann::json to_json(const Scenario& sc) {
    nlohmann::json agents = nlohmann::json::array();
    for (const AgentSpec& a : sc.agents) {
        agents.push_back({{"id", a.id},
                          {"behavior", to_string(a.behavior)},
                          {"start", to_json(a.start)},
                          {"shape", to_json(a.shape)},
                          {"route", route_to_json(a.route)},
                          {"idm", to_json(a.idm)}});
    }
    return {{"schema_version", kScenarioSchemaVersion},
            {"name", sc.name},
            {"seed", sc.seed},
            {"duration_s", sc.duration},
            {"speed_limit", sc.speed_limit},
            {"corridor_half_width", sc.corridor_half_width},
            {"cruise_speed", sc.cruise_speed},
            {"dt", sc.dt},
            {"horizon_steps", sc.horizon_steps},
            {"ego_start", to_json(sc.ego_start)},
            {"route", route_to_json(sc.route)},
            {"agents", agents}};
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    try {
        const int version = j.at("schema_version").get<int>();
        if (version != kScenarioSchemaVersion) {
            throw ScenarioError("unsupported scenario schema_version " + std::to_string(version));
        }
        Scenario sc;
        sc.name = j.at("name").get<std::string>();
        sc.seed = j.value("seed", std::uint64_t(0));
        sc.duration = j.at("duration_s").get<double>();
        sc.speed_limit = j.value("speed_limit", sc.speed_limit);
        sc.corridor_half_width = j.value("corridor_half_width", sc.corridor_half_width);
        sc.cruise_speed = j.value("cruise_speed", sc.cruise_speed);
        sc.dt = j.value("dt", sc.dt);
        sc.horizon_steps = j.value("horizon_steps", sc.horizon_steps);
        sc.ego_start = ego_state_from_json(j.at("ego_start"));
        sc.route = route_from_json(j.at("route"));
        if (j.contains("agents")) {
            for (const auto& a : j.at("agents")) {
                AgentSpec spec;
                spec.id = a.at("id").get<int>();
                spec.behavior = agent_behavior_from_string(a.at("behavior").get<std::string>());
                spec.start = ego_state_from_json(a.at("start"));
                if (a.contains("shape")) spec.shape = vehicle_shape_from_json(a.at("shape"));
                if (a.contains("route")) spec.route = route_from_json(a.at("route"));
                if (a.contains("idm")) spec.idm = idm_from_json(a.at("idm"));
                sc.agents.push_back(std::move(spec));
            }
        }
        if (sc.route.size() < 2) throw ScenarioError("scenario route needs at least 2 points");
        if (!(sc.duration > 0.0)) throw ScenarioError("scenario duration must be positive");
        if (!(sc.dt > 0.0)) throw ScenarioError("scenario dt must be positive");
        return sc;
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(std::string("invalid scenario file: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Seeded scenario generators (one battery per situation class)
// ---------------------------------------------------------------------------

namespace detail {

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<Vec2> straight_route(double length) {
    return {{0.0, 0.0}, {length, 0.0}};
}

// time (s) at which the nominal route-following profile reaches arc length s
inline double nominal_arrival_time(const Scenario& sc, double target_s) {
    SceneContext ctx;
    ctx.ego0 = sc.ego_start;
    ctx.route = sc.route;
    ctx.cruise_speed = sc.cruise_speed;
    ctx.dt = sc.dt;
    ctx.horizon_steps = int(std::lround(sc.duration / sc.dt)) + 1;
    const Trajectory nominal = SyntheticDenoiser::nominal_trajectory(ctx);
    double s = 0.0;
    for (std::size_t k = 1; k < nominal.size(); ++k) {
        s += norm(nominal.waypoints[k].position() - nominal.waypoints[k - 1].position());
        if (s >= target_s) return double(k) * sc.dt;
    }
    return double(nominal.size()) * sc.dt;
}

} // namespace detail

// Free road, no agents. Baseline for score regressions.
inline Scenario make_empty_road(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 2654435761ull + 17);
    Scenario sc;
    sc.name = "empty_road";
    sc.seed = seed;
    sc.route = detail::straight_route(220.0);
    sc.ego_start = {0, 0, 0, 0, detail::uniform_in(rng, 7.0, 9.5)};
    sc.cruise_speed = detail::uniform_in(rng, 8.5, 9.5);
    return sc;
}

// Stopped vehicle on the ego lane; the nominal plan drives straight through
// it, so the unfiltered planner collides by construction.
inline Scenario make_headon(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 2654435761ull + 29);
    Scenario sc;
    sc.name = "headon";
    sc.seed = seed;
    sc.route = detail::straight_route(220.0);
    sc.ego_start = {0, 0, 0, 0, detail::uniform_in(rng, 7.0, 9.5)};
    sc.cruise_speed = detail::uniform_in(rng, 8.5, 9.5);

    AgentSpec blocker;
    blocker.id = 1;
    blocker.behavior = AgentBehavior::stopped;
    const double x = detail::uniform_in(rng, 30.0, 48.0);
    const double y = detail::uniform_in(rng, -0.3, 0.3);
    const double heading = detail::uniform_in(rng, -0.08, 0.08);
    blocker.start = {x, y, heading, 0, 0};
    blocker.route = {{x, y}, {x + 10.0 * std::cos(heading), y + 10.0 * std::sin(heading)}};
    sc.agents.push_back(blocker);
    return sc;
}

// Unprotected left turn across oncoming traffic: the ego route turns left
// through the oncoming lane; one or two oncoming vehicles are timed to reach
// the conflict point as the nominal profile does.
inline Scenario make_crossing(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 2654435761ull + 43);
    Scenario sc;
    sc.name = "crossing";
    sc.seed = seed;
    sc.ego_start = {0, 0, 0, 0, detail::uniform_in(rng, 5.5, 7.0)};
    sc.cruise_speed = detail::uniform_in(rng, 6.5, 7.5);

    // straight approach, left-turn arc of radius R, then north
    const double approach = detail::uniform_in(rng, 25.0, 32.0);
    const double radius = detail::uniform_in(rng, 10.0, 13.0);
    const double lane_y = detail::uniform_in(rng, 4.2, 4.8); // oncoming lane center
    std::vector<Vec2> route;
    route.push_back({0.0, 0.0});
    route.push_back({approach, 0.0});
    const Vec2 center{approach, radius};
    for (int i = 1; i <= 12; ++i) {
        const double phi = (M_PI / 2.0) * double(i) / 12.0;
        route.push_back({center.x + radius * std::sin(phi), center.y - radius * std::cos(phi)});
    }
    const Vec2 turn_end = route.back(); // heading +y
    route.push_back({turn_end.x, turn_end.y + 120.0});
    sc.route = route;

    // conflict point: where the arc crosses the oncoming lane center
    const double cos_phi = 1.0 - lane_y / radius;
    const double phi_c = std::acos(std::clamp(cos_phi, -1.0, 1.0));
    const double conflict_x = approach + radius * std::sin(phi_c);
    const double conflict_s = approach + radius * phi_c;
    const double t_conflict = detail::nominal_arrival_time(sc, conflict_s);

    // one oncoming car timed to sweep the conflict shortly after the nominal
    // profile enters the lane: a T-bone for a planner that ignores it, a
    // predictable yield for one that doesn't. It does not react — the
    // rare-event case the filter exists for.
    const double v_oncoming = detail::uniform_in(rng, 5.5, 7.0);
    const double delay = detail::uniform_in(rng, 0.6, 1.2);
    AgentSpec oncoming;
    oncoming.id = 1;
    oncoming.behavior = AgentBehavior::constant_velocity;
    const double start_x = conflict_x + v_oncoming * (t_conflict + delay);
    oncoming.start = {start_x, lane_y, M_PI, 0, v_oncoming};
    oncoming.route = {{start_x, lane_y}, {-80.0, lane_y}};
    sc.agents.push_back(oncoming);

    if (seed % 2 == 0) {
        AgentSpec trailer = oncoming;
        trailer.id = 2;
        trailer.behavior = AgentBehavior::idm_lane_follow;
        trailer.idm.desired_speed = v_oncoming;
        const double gap = detail::uniform_in(rng, 20.0, 32.0);
        trailer.start.x = start_x + gap;
        trailer.route = {{trailer.start.x, lane_y}, {-80.0, lane_y}};
        sc.agents.push_back(trailer);
    }
    return sc;
}

// Slower vehicle merging into the ego lane just ahead.
inline Scenario make_merging(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 2654435761ull + 61);
    Scenario sc;
    sc.name = "merging";
    sc.seed = seed;
    sc.route = detail::straight_route(220.0);
    sc.ego_start = {0, 0, 0, 0, detail::uniform_in(rng, 7.0, 9.0)};
    sc.cruise_speed = detail::uniform_in(rng, 8.5, 9.5);

    const double merge_x = detail::uniform_in(rng, 45.0, 60.0);
    const double ramp_len = 40.0;
    const double lead_time = detail::uniform_in(rng, 0.4, 1.2);
    const double t_ego = detail::nominal_arrival_time(sc, merge_x);
    const double v_merge = detail::uniform_in(rng, 5.5, 7.5);

    AgentSpec merger;
    merger.id = 1;
    merger.behavior = AgentBehavior::idm_lane_follow;
    merger.idm.desired_speed = v_merge;
    // ramp joins the lane at merge_x; the agent reaches it lead_time before the ego
    const double travel = v_merge * std::max(0.5, t_ego - lead_time);
    const double s_start = std::max(0.0, ramp_len - travel);
    const Vec2 ramp_begin{merge_x - ramp_len, -6.0};
    const Vec2 ramp_end{merge_x, 0.0};
    const Vec2 dir = (ramp_end - ramp_begin) / norm(ramp_end - ramp_begin);
    const Vec2 pos = ramp_begin + s_start * dir;
    merger.start = {pos.x, pos.y, std::atan2(dir.y, dir.x), 0, v_merge};
    merger.route = {ramp_begin, ramp_end, {220.0, 0.0}};
    sc.agents.push_back(merger);
    return sc;
}

// Lead vehicle cruising ahead of the ego brakes hard for a stopped car
// further down the lane.
inline Scenario make_lead_brake(std::uint64_t seed) {
    std::mt19937_64 rng(seed * 2654435761ull + 71);
    Scenario sc;
    sc.name = "lead_brake";
    sc.seed = seed;
    sc.route = detail::straight_route(220.0);
    sc.ego_start = {0, 0, 0, 0, detail::uniform_in(rng, 7.0, 9.0)};
    sc.cruise_speed = detail::uniform_in(rng, 8.5, 9.5);

    AgentSpec lead;
    lead.id = 1;
    lead.behavior = AgentBehavior::idm_lane_follow;
    const double lead_x = detail::uniform_in(rng, 26.0, 36.0);
    const double lead_v = detail::uniform_in(rng, 7.5, 9.0);
    lead.idm.desired_speed = lead_v;
    lead.start = {lead_x, 0, 0, 0, lead_v};
    lead.route = {{lead_x, 0.0}, {220.0, 0.0}};
    sc.agents.push_back(lead);

    AgentSpec wall;
    wall.id = 2;
    wall.behavior = AgentBehavior::stopped;
    const double wall_x = lead_x + detail::uniform_in(rng, 50.0, 65.0);
    wall.start = {wall_x, 0, 0, 0, 0};
    wall.route = {{wall_x, 0.0}, {wall_x + 10.0, 0.0}};
    sc.agents.push_back(wall);
    return sc;
}

inline const std::vector<std::string>& battery_names() {
    static const std::vector<std::string> names{"headon", "crossing", "merging", "lead_brake",
                                                "empty_road"};
    return names;
}

inline Scenario make_scenario(const std::string& battery, std::uint64_t seed) {
    if (battery == "headon") return make_headon(seed);
    if (battery == "crossing") return make_crossing(seed);
    if (battery == "merging") return make_merging(seed);
    if (battery == "lead_brake") return make_lead_brake(seed);
    if (battery == "empty_road") return make_empty_road(seed);
    throw ScenarioError("unknown battery: " + battery);
}

inline std::vector<Scenario> make_battery(const std::string& battery, int count) {
    std::vector<Scenario> out;
    out.reserve(std::size_t(count));
    for (int i = 0; i < count; ++i) out.push_back(make_scenario(battery, std::uint64_t(i)));
    return out;
}

} // namespace pcplan
