#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "pcplan/geometry.hpp"

namespace pcplan {

// Kinematic bicycle state. The (x, y) reference point is the rear axle
// center; heading is wrapped to (-pi, pi].
struct EgoState {
    double x = 0.0;     // m
    double y = 0.0;     // m
    double theta = 0.0; // rad
    double delta = 0.0; // steering angle, rad
    double v = 0.0;     // m/s, never negative

    Vec2 position() const { return {x, y}; }
};

struct Control {
    double accel = 0.0;     // m/s^2
    double delta_cmd = 0.0; // commanded steering angle, rad
};

struct ControlLimits {
    double accel_min = -6.0;     // m/s^2
    double accel_max = 3.0;      // m/s^2
    double delta_max = 0.6;      // rad
    double delta_rate_max = 0.7; // rad/s; infinity disables the rate limit
};

// Footprint and wheelbase. The capsule axis runs from the rear-end center to
// the front-end center; with the rear-axle reference point the axis spans
// [-(axis_length - wheelbase)/2, (axis_length + wheelbase)/2] along the
// heading (equal front/rear overhangs).
struct VehicleShape {
    double axis_length = 4.6; // m, rear-end center to front-end center
    double half_width = 1.0;  // m
    double wheelbase = 2.9;   // m

    double rear_offset() const { return -0.5 * (axis_length - wheelbase); }
    double front_offset() const { return rear_offset() + axis_length; }
};

// Planner-facing waypoint sequence, K x (x, y, cos theta, sin theta). The
// heading channels need not be normalized while the trajectory is a noisy
// diffusion iterate.
struct Waypoint {
    double x = 0.0;
    double y = 0.0;
    double cos_h = 1.0;
    double sin_h = 0.0;

    Vec2 position() const { return {x, y}; }
    double heading() const { return std::atan2(sin_h, cos_h); }
};

struct Trajectory {
    std::vector<Waypoint> waypoints;
    double dt = 0.1; // s

    std::size_t size() const { return waypoints.size(); }
};

inline Waypoint waypoint_from_state(const EgoState& s) {
    return {s.x, s.y, std::cos(s.theta), std::sin(s.theta)};
}

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * M_PI;
    double w = std::fmod(a + M_PI, two_pi);
    if (w <= 0.0) w += two_pi;
    return w - M_PI;
}

inline Capsule capsule_at(const Vec2& position, double heading, const VehicleShape& shape) {
    const Vec2 dir{std::cos(heading), std::sin(heading)};
    return {{position + shape.rear_offset() * dir, position + shape.front_offset() * dir},
            shape.half_width};
}

inline Capsule ego_capsule(const EgoState& s, const VehicleShape& shape) {
    return capsule_at(s.position(), s.theta, shape);
}

// Forward-Euler bicycle step. Steering is commanded directly (clamped to
// +-delta_max and rate-limited against the current state); the heading
// derivative uses the newly commanded steering, matching a propagate step
// that evaluates f at (a_k, delta_nom_k).
inline EgoState step(const EgoState& s, const Control& u, double dt, double wheelbase,
                     const ControlLimits& lim = {}) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");

    double delta = std::clamp(u.delta_cmd, -lim.delta_max, lim.delta_max);
    if (std::isfinite(lim.delta_rate_max)) {
        const double max_change = lim.delta_rate_max * dt;
        delta = std::clamp(delta, s.delta - max_change, s.delta + max_change);
        delta = std::clamp(delta, -lim.delta_max, lim.delta_max);
    }

    EgoState n;
    n.x = s.x + s.v * std::cos(s.theta) * dt;
    n.y = s.y + s.v * std::sin(s.theta) * dt;
    n.theta = wrap_angle(s.theta + s.v * std::tan(delta) / wheelbase * dt);
    n.delta = delta;
    n.v = std::max(0.0, s.v + u.accel * dt);
    return n;
}

inline std::vector<EgoState> rollout(const EgoState& initial, const std::vector<Control>& controls,
                                     double dt, double wheelbase, const ControlLimits& lim = {}) {
    std::vector<EgoState> states;
    states.reserve(controls.size() + 1);
    states.push_back(initial);
    for (const Control& u : controls) {
        states.push_back(step(states.back(), u, dt, wheelbase, lim));
    }
    return states;
}

// Converts waypoints to 5-D states: headings via atan2 (normalizing), speeds
// from position spacing (first speed = v0), steering zeroed.
inline std::vector<EgoState> waypoints_to_states(const Trajectory& traj, double v0) {
    if (traj.size() < 2) throw std::invalid_argument("waypoints_to_states: need K >= 2");
    std::vector<EgoState> states(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const Waypoint& w = traj.waypoints[i];
        states[i].x = w.x;
        states[i].y = w.y;
        states[i].theta = w.heading();
        states[i].delta = 0.0;
        states[i].v = i == 0 ? v0
                             : norm(w.position() - traj.waypoints[i - 1].position()) / traj.dt;
    }
    return states;
}

// Gradient of the capsule distance (equivalently of any barrier offset by a
// constant) with respect to the full ego state. Distance depends on the pose
// only, so the steering and speed components are identically zero.
struct StateGradient {
    std::array<double, 5> d{}; // d/dx, d/dy, d/dtheta, d/ddelta, d/dv
    bool non_unique = false;
    bool at_contact = false;
};

inline StateGradient distance_gradient(const EgoState& ego, const VehicleShape& ego_shape,
                                       const Capsule& other) {
    const PoseGradient g = mounted_segment_gradient(ego.position(), ego.theta,
                                                    ego_shape.rear_offset(),
                                                    ego_shape.front_offset(), other.axis);
    StateGradient out;
    out.d = {g.dx, g.dy, g.dheading, 0.0, 0.0};
    out.non_unique = g.non_unique;
    out.at_contact = g.at_contact;
    return out;
}

// ---------------------------------------------------------------------------
// Linearized-LQR waypoint tracker
// ---------------------------------------------------------------------------

struct TrackerParams {
    double q_lateral = 1.0;      // weight on cross-track error
    double q_heading = 2.0;      // weight on heading error
    double r_steer = 8.0;        // weight on the steering input
    double speed_gain = 1.5;     // 1/s, proportional speed tracking
    double min_gain_speed = 0.5; // m/s; below this the frozen low-speed gain is used
    double speed_bucket = 0.1;   // m/s; gain cache quantization
    double riccati_tol = 1e-9;
    int riccati_max_iter = 100000;
};

struct LqrGain {
    double k_lateral = 0.0;
    double k_heading = 0.0;
};

struct LqrSolveInfo {
    LqrGain gain;
    double residual = 0.0;
    int iterations = 0;
};

// Discrete Riccati fixed point for the lateral error dynamics
//   e' = A e + B u,  A = [[1, v dt], [0, 1]],  B = [0, v dt / L]
// with Q = diag(q_lateral, q_heading), R = r_steer.
inline LqrSolveInfo solve_lateral_lqr_info(double speed, double dt, double wheelbase,
                                           const TrackerParams& p = {}) {
    const double a12 = speed * dt;
    const double b2 = speed * dt / wheelbase;

    LqrSolveInfo info;
    double p11 = p.q_lateral, p12 = 0.0, p22 = p.q_heading;
    for (int it = 0; it < p.riccati_max_iter; ++it) {
        // M = P A with A = [[1, a12], [0, 1]]
        const double m11 = p11;
        const double m12 = p11 * a12 + p12;
        const double m21 = p12;
        const double m22 = p12 * a12 + p22;
        // B^T P B and B^T P A (B = [0, b2])
        const double btpb = b2 * p22 * b2;
        const double btpa1 = b2 * m21;
        const double btpa2 = b2 * m22;
        const double inv = 1.0 / (p.r_steer + btpb);
        // P' = Q + A^T P A - (B^T P A)^T inv (B^T P A)
        const double n11 = p.q_lateral + m11 - btpa1 * inv * btpa1;
        const double n12 = m12 - btpa1 * inv * btpa2;
        const double n22 = p.q_heading + a12 * m12 + m22 - btpa2 * inv * btpa2;

        const double resid = std::max({std::abs(n11 - p11), std::abs(n12 - p12),
                                       std::abs(n22 - p22)});
        p11 = n11;
        p12 = n12;
        p22 = n22;
        info.residual = resid;
        info.iterations = it + 1;
        if (resid <= p.riccati_tol) break;
    }

    const double btpb = b2 * p22 * b2;
    const double inv = 1.0 / (p.r_steer + btpb);
    info.gain.k_lateral = inv * b2 * p12;
    info.gain.k_heading = inv * b2 * (p12 * a12 + p22);
    return info;
}

inline LqrGain solve_lateral_lqr(double speed, double dt, double wheelbase,
                                 const TrackerParams& p = {}) {
    return solve_lateral_lqr_info(speed, dt, wheelbase, p).gain;
}

// Gains cached per quantized speed bucket; the cache is thread-local so
// concurrent callers never share mutable state. Gains are a pure function of
// the bucket, so results do not depend on call order.
inline LqrGain lateral_lqr_gain(double speed, double dt, double wheelbase,
                                const TrackerParams& p = {}) {
    const double v = std::max(speed, p.min_gain_speed);
    const long bucket = std::lround(v / p.speed_bucket);
    struct Key {
        long bucket;
        double dt;
        double wheelbase;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const {
            std::size_t h = std::hash<long>()(k.bucket);
            h ^= std::hash<double>()(k.dt) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            h ^= std::hash<double>()(k.wheelbase) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            return h;
        }
    };
    thread_local std::unordered_map<Key, LqrGain, KeyHash> cache;
    const Key key{bucket, dt, wheelbase};
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const LqrGain gain = solve_lateral_lqr(bucket * p.speed_bucket, dt, wheelbase, p);
    cache.emplace(key, gain);
    return gain;
}

// LQR tracking of the remaining waypoints [begin_index, K). Returns the
// nominal control: steering from the lateral-error LQR about the nearest
// reference point (plus curvature feedforward), acceleration from
// proportional tracking of the finite-difference speed profile.
inline Control track(const EgoState& state, const Trajectory& traj, std::size_t begin_index,
                     double wheelbase, const ControlLimits& lim = {},
                     const TrackerParams& p = {}) {
    const std::size_t k_total = traj.size();
    if (begin_index >= k_total) throw std::invalid_argument("track: no waypoints remain");

    // nearest reference point within the remaining slice
    std::size_t nearest = begin_index;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = begin_index; i < k_total; ++i) {
        const double d2 = norm_sq(traj.waypoints[i].position() - state.position());
        if (d2 < best) {
            best = d2;
            nearest = i;
        }
    }

    const Waypoint& ref = traj.waypoints[nearest];
    const double theta_ref = ref.heading();
    const double sr = std::sin(theta_ref);
    const double cr = std::cos(theta_ref);
    const double e_lat = -sr * (state.x - ref.x) + cr * (state.y - ref.y);
    const double e_head = wrap_angle(state.theta - theta_ref);

    // reference speed from waypoint spacing
    double v_ref = 0.0;
    if (nearest + 1 < k_total) {
        v_ref = norm(traj.waypoints[nearest + 1].position() - ref.position()) / traj.dt;
    } else if (nearest > 0) {
        v_ref = norm(ref.position() - traj.waypoints[nearest - 1].position()) / traj.dt;
    }

    // curvature feedforward from consecutive reference headings
    double delta_ff = 0.0;
    if (nearest + 1 < k_total) {
        const double ds = norm(traj.waypoints[nearest + 1].position() - ref.position());
        if (ds > 1e-9) {
            const double dtheta = wrap_angle(traj.waypoints[nearest + 1].heading() - theta_ref);
            delta_ff = std::atan(wheelbase * dtheta / ds);
        }
    }

    const LqrGain k = lateral_lqr_gain(v_ref, traj.dt, wheelbase, p);

    Control u;
    u.delta_cmd = std::clamp(delta_ff - k.k_lateral * e_lat - k.k_heading * e_head,
                             -lim.delta_max, lim.delta_max);
    u.accel = std::clamp(p.speed_gain * (v_ref - state.v), lim.accel_min, lim.accel_max);
    return u;
}

} // namespace pcplan
