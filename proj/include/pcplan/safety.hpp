#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pcplan/dynamics.hpp"
#include "pcplan/geometry.hpp"

namespace pcplan {

struct BarrierParams {
    double d_safe = 0.3;        // m, safety margin on top of the capsule distance
    double gamma = 1.0;         // 1/s, slope of the linear class-K function
    double slack_penalty = 1e6; // quadratic weight on constraint relaxation
    double v_max = 15.0;        // m/s, speed bound inside the QP
};

// Slack above this is counted as "activated" in all logs and rates.
inline constexpr double kSlackActive = 1e-6; // m/s

// One velocity-level constraint: dh_dv * v >= -gamma * h (- slack).
struct BarrierEval {
    double h = 0.0;          // barrier value, m
    double dh_dv = 0.0;      // velocity coefficient of the barrier derivative
    int agent_id = -1;
    bool degenerate = false; // subgradient fallback in effect (parallel or contact)
};

// h = capsule distance between the ego footprint and the other body, minus
// the safety margin. capsule_distance already subtracts both half widths.
inline double barrier(const EgoState& ego, const VehicleShape& ego_shape, const Capsule& other,
                      const BarrierParams& params) {
    return capsule_distance(ego_capsule(ego, ego_shape), other) - params.d_safe;
}

struct VelocityCoefficient {
    double value = 0.0;
    bool degenerate = false;
};

// Coefficient of v in the barrier time derivative under fixed steering:
// dh/dx cos(theta) + dh/dy sin(theta) + dh/dtheta tan(delta_nom)/L.
// For parallel or touching configurations a flagged subgradient is returned.
inline VelocityCoefficient dh_dv(const EgoState& ego, const VehicleShape& ego_shape,
                                 const Capsule& other, double delta_nom, double wheelbase) {
    const StateGradient g = distance_gradient(ego, ego_shape, other);
    VelocityCoefficient out;
    out.value = g.d[0] * std::cos(ego.theta) + g.d[1] * std::sin(ego.theta) +
                g.d[2] * std::tan(delta_nom) / wheelbase;
    out.degenerate = g.non_unique || g.at_contact;
    return out;
}

struct SafeSpeedResult {
    double v_star = 0.0;
    std::vector<double> slack; // per eval, m/s
    bool modified = false;     // v_star differs from the nominal request
    double max_slack = 0.0;
};

// Minimally modified safe speed:
//   min (v - v_nom)^2 + slack_penalty * ||xi||^2
//   s.t. dh_dv_j v >= -gamma h_j - xi_j,  xi_j >= 0,  0 <= v <= v_max.
// Solved exactly in two stages. When the hard constraints admit a speed
// (always the case when all h >= 0, since v = 0 satisfies every upper bound
// gamma h / |dh_dv| >= 0), the slack is identically zero and v_nom is clamped
// into the feasible interval. Otherwise the penalized piecewise quadratic in
// v is minimized in closed form over its breakpoint intervals.
inline SafeSpeedResult safe_speed(double v_nom, const std::vector<BarrierEval>& evals,
                                  const BarrierParams& p) {
    SafeSpeedResult out;
    out.slack.assign(evals.size(), 0.0);

    double lb = 0.0;
    double ub = p.v_max;
    bool forced_slack = false; // violated constraints with zero coefficient
    for (const BarrierEval& ev : evals) {
        const double rhs = -p.gamma * ev.h;
        if (ev.dh_dv < 0.0) {
            ub = std::min(ub, rhs / ev.dh_dv);
        } else if (ev.dh_dv > 0.0) {
            lb = std::max(lb, rhs / ev.dh_dv);
        } else if (rhs > 0.0) {
            forced_slack = true;
        }
    }

    if (lb <= ub) {
        out.v_star = std::clamp(v_nom, lb, ub);
        if (forced_slack) {
            for (std::size_t j = 0; j < evals.size(); ++j) {
                if (evals[j].dh_dv == 0.0) {
                    out.slack[j] = std::max(0.0, -p.gamma * evals[j].h);
                }
            }
        }
    } else {
        // Exact minimizer of F(v) = (v - v_nom)^2 + w sum_j max(0, rhs_j - dh_j v)^2
        // over [0, v_max]: F is piecewise quadratic with breakpoints where each
        // max() switches.
        std::vector<double> knots{0.0, p.v_max};
        for (const BarrierEval& ev : evals) {
            if (ev.dh_dv != 0.0) {
                const double z = -p.gamma * ev.h / ev.dh_dv;
                if (z > 0.0 && z < p.v_max) knots.push_back(z);
            }
        }
        std::sort(knots.begin(), knots.end());

        const auto penalized = [&](double v) {
            double f = (v - v_nom) * (v - v_nom);
            for (const BarrierEval& ev : evals) {
                const double xi = std::max(0.0, -p.gamma * ev.h - ev.dh_dv * v);
                f += p.slack_penalty * xi * xi;
            }
            return f;
        };

        double best_v = 0.0;
        double best_f = penalized(0.0);
        for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
            const double a = knots[i], b = knots[i + 1];
            if (!(b > a)) continue;
            const double mid = 0.5 * (a + b);
            double sum_gr = 0.0; // sum over active constraints of dh_j * rhs_j
            double sum_gg = 0.0; // sum of dh_j^2
            for (const BarrierEval& ev : evals) {
                const double rhs = -p.gamma * ev.h;
                if (rhs - ev.dh_dv * mid > 0.0) {
                    sum_gr += ev.dh_dv * rhs;
                    sum_gg += ev.dh_dv * ev.dh_dv;
                }
            }
            const double v_opt = (v_nom + p.slack_penalty * sum_gr) /
                                 (1.0 + p.slack_penalty * sum_gg);
            for (const double cand : {std::clamp(v_opt, a, b), b}) {
                const double f = penalized(cand);
                if (f < best_f) {
                    best_f = f;
                    best_v = cand;
                }
            }
        }
        out.v_star = best_v;
        for (std::size_t j = 0; j < evals.size(); ++j) {
            out.slack[j] = std::max(0.0, -p.gamma * evals[j].h - evals[j].dh_dv * out.v_star);
        }
    }

    for (const double s : out.slack) out.max_slack = std::max(out.max_slack, s);
    out.modified = out.v_star != v_nom;
    return out;
}

// Predicted motion of one safety-critical neighbor, time-aligned with the
// ego plan (pose j of the prediction pairs with rollout step j).
struct NeighborTrack {
    int id = -1;
    Trajectory prediction;
    VehicleShape shape;
};

struct FilterResult {
    Trajectory corrected;                        // same K and dt as the input plan
    std::vector<Control> controls;               // K-1 executable controls
    std::vector<std::vector<double>> slack_used; // [step][neighbor]
    std::vector<std::uint8_t> qp_active;         // per step: QP modified speed or used slack
    std::vector<std::uint8_t> accel_clamped;     // per step: recovery hit the accel bounds
    bool infeasible_start = false;               // some h < 0 at the initial state
    double max_slack = 0.0;
    double slack_activation_rate = 0.0;          // fraction of steps with slack > kSlackActive
};

namespace detail {

inline void check_filter_inputs(const Trajectory& plan,
                                const std::vector<NeighborTrack>& neighbors) {
    if (plan.size() < 2) throw std::invalid_argument("safety filter: plan needs K >= 2");
    for (const NeighborTrack& nb : neighbors) {
        if (nb.prediction.size() < plan.size()) {
            throw std::invalid_argument("safety filter: neighbor prediction shorter than plan");
        }
    }
}

inline Capsule neighbor_capsule(const NeighborTrack& nb, std::size_t k) {
    const Waypoint& wp = nb.prediction.waypoints[k];
    return capsule_at(wp.position(), wp.heading(), nb.shape);
}

} // namespace detail

// Path-consistent capsule-barrier safety filter: sequentially tracks the plan
// with the LQR, projects
// the nominal speed onto the CBF-admissible set against every critical
// neighbor, recovers the acceleration, and propagates the bicycle model. The
// output rollout is dynamically feasible by construction and steering is
// never modified by the QP. When no constraint binds at a step, the nominal
// control passes through bit-identically.
inline FilterResult pc_cbf(const Trajectory& plan, const EgoState& ego0,
                           const std::vector<NeighborTrack>& neighbors,
                           const VehicleShape& ego_shape, const BarrierParams& params,
                           const ControlLimits& limits = {}, const TrackerParams& tracker = {}) {
    detail::check_filter_inputs(plan, neighbors);

    const std::size_t k_total = plan.size();
    const double dt = plan.dt;

    FilterResult out;
    out.corrected.dt = dt;
    out.corrected.waypoints.reserve(k_total);
    out.controls.reserve(k_total - 1);

    EgoState state = ego0;
    out.corrected.waypoints.push_back(waypoint_from_state(state));

    for (const NeighborTrack& nb : neighbors) {
        if (barrier(state, ego_shape, detail::neighbor_capsule(nb, 0), params) < 0.0) {
            out.infeasible_start = true;
        }
    }

    int active_steps = 0;
    for (std::size_t k = 0; k + 1 < k_total; ++k) {
        const Control nominal = track(state, plan, k + 1, ego_shape.wheelbase, limits, tracker);
        const double v_nom = state.v + nominal.accel * dt;

        std::vector<BarrierEval> evals;
        evals.reserve(neighbors.size());
        for (const NeighborTrack& nb : neighbors) {
            const Capsule cap = detail::neighbor_capsule(nb, k);
            BarrierEval ev;
            ev.agent_id = nb.id;
            ev.h = barrier(state, ego_shape, cap, params);
            const VelocityCoefficient c =
                dh_dv(state, ego_shape, cap, nominal.delta_cmd, ego_shape.wheelbase);
            ev.dh_dv = c.value;
            ev.degenerate = c.degenerate;
            evals.push_back(ev);
        }

        const SafeSpeedResult ss = safe_speed(v_nom, evals, params);

        Control exec = nominal;
        bool clamped = false;
        if (ss.modified) {
            const double a = (ss.v_star - state.v) / dt;
            exec.accel = std::clamp(a, limits.accel_min, limits.accel_max);
            clamped = exec.accel != a; // saturated step: potential invariance gap
        }

        state = step(state, exec, dt, ego_shape.wheelbase, limits);
        out.corrected.waypoints.push_back(waypoint_from_state(state));
        out.controls.push_back(exec);
        out.slack_used.push_back(ss.slack);
        out.accel_clamped.push_back(clamped);
        const bool active = ss.modified || ss.max_slack > kSlackActive;
        out.qp_active.push_back(active);
        if (ss.max_slack > kSlackActive) ++active_steps;
        out.max_slack = std::max(out.max_slack, ss.max_slack);
    }
    out.slack_activation_rate = double(active_steps) / double(k_total - 1);
    return out;
}

// Ablation filter: keeps the plan's geometric path fixed and re-times
// progress along its arc length so each step's speed satisfies safe_speed.
// No dynamics are propagated, so heading-rate/steering feasibility is not
// guaranteed; the emitted controls are the implied pseudo-controls only.
inline FilterResult arc_reparam(const Trajectory& plan, const EgoState& ego0,
                                const std::vector<NeighborTrack>& neighbors,
                                const VehicleShape& ego_shape, const BarrierParams& params,
                                const ControlLimits& limits = {},
                                const TrackerParams& tracker = {}) {
    (void)tracker;
    detail::check_filter_inputs(plan, neighbors);

    const std::size_t k_total = plan.size();
    const double dt = plan.dt;

    // arc-length table over the plan polyline
    std::vector<double> cum(k_total, 0.0);
    for (std::size_t i = 1; i < k_total; ++i) {
        cum[i] = cum[i - 1] +
                 norm(plan.waypoints[i].position() - plan.waypoints[i - 1].position());
    }

    const auto segment_of = [&](double s) -> std::size_t {
        std::size_t i = std::size_t(std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
        if (i > 0) --i;
        return std::min(i, k_total - 2);
    };
    const auto pose_at = [&](double s) -> Waypoint {
        const std::size_t i = segment_of(s);
        const Vec2 a = plan.waypoints[i].position();
        const Vec2 b = plan.waypoints[i + 1].position();
        const double len = cum[i + 1] - cum[i];
        const double t = len > 1e-12 ? std::clamp((s - cum[i]) / len, 0.0, 1.0) : 0.0;
        const Vec2 pos = a + t * (b - a);
        Waypoint wp{pos.x, pos.y, plan.waypoints[i].cos_h, plan.waypoints[i].sin_h};
        if (len > 1e-12) {
            const Vec2 dir = (b - a) / len;
            wp.cos_h = dir.x;
            wp.sin_h = dir.y;
        }
        return wp;
    };

    FilterResult out;
    out.corrected.dt = dt;
    out.corrected.waypoints.reserve(k_total);
    out.controls.reserve(k_total - 1);

    // anchor the re-timing at the actual ego state's arc position, not the
    // (noisy) first plan waypoint
    double s = 0.0;
    {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < k_total; ++i) {
            const Vec2 a = plan.waypoints[i].position();
            const Vec2 d = plan.waypoints[i + 1].position() - a;
            const double len2 = norm_sq(d);
            const double t = len2 > 0.0
                                 ? std::clamp(dot(ego0.position() - a, d) / len2, 0.0, 1.0)
                                 : 0.0;
            const double d2 = norm_sq(a + t * d - ego0.position());
            if (d2 < best) {
                best = d2;
                s = cum[i] + t * std::sqrt(len2);
            }
        }
    }
    double v_prev = ego0.v;
    bool modified = false;
    Waypoint pose = pose_at(s);
    out.corrected.waypoints.push_back(pose);

    for (const NeighborTrack& nb : neighbors) {
        if (barrier(ego0, ego_shape, detail::neighbor_capsule(nb, 0), params) < 0.0) {
            out.infeasible_start = true;
        }
    }

    int active_steps = 0;
    for (std::size_t k = 0; k + 1 < k_total; ++k) {
        const std::size_t seg = segment_of(s);
        const double seg_len = cum[seg + 1] - cum[seg];
        const double v_plan = s >= cum.back() ? 0.0 : seg_len / dt;

        // the first constraint is evaluated at the true current state; the
        // clamped projection can otherwise lag a vehicle that has overrun
        // the plan's own stop point, silently relaxing the bound
        const EgoState st = k == 0 ? ego0
                                   : EgoState{pose.x, pose.y, pose.heading(), 0.0, v_prev};
        std::vector<BarrierEval> evals;
        evals.reserve(neighbors.size());
        for (const NeighborTrack& nb : neighbors) {
            const Capsule cap = detail::neighbor_capsule(nb, k);
            BarrierEval ev;
            ev.agent_id = nb.id;
            ev.h = barrier(st, ego_shape, cap, params);
            const VelocityCoefficient c = dh_dv(st, ego_shape, cap, 0.0, ego_shape.wheelbase);
            ev.dh_dv = c.value;
            ev.degenerate = c.degenerate;
            evals.push_back(ev);
        }

        const SafeSpeedResult ss = safe_speed(v_plan, evals, params);
        if (ss.modified) modified = true;

        const double ds = ss.v_star * dt;
        const Waypoint next = pose_at(s + ds);

        Control pseudo;
        pseudo.accel = std::clamp((ss.v_star - v_prev) / dt, limits.accel_min, limits.accel_max);
        if (ds > 0.05) { // steering from path curvature is meaningless when barely moving
            const double dheading = wrap_angle(next.heading() - pose.heading());
            pseudo.delta_cmd = std::clamp(std::atan(ego_shape.wheelbase * dheading / ds),
                                          -limits.delta_max, limits.delta_max);
        }

        s += ds;
        pose = next;
        out.corrected.waypoints.push_back(pose);
        out.controls.push_back(pseudo);
        out.slack_used.push_back(ss.slack);
        out.accel_clamped.push_back(false);
        const bool active = ss.modified || ss.max_slack > kSlackActive;
        out.qp_active.push_back(active);
        if (ss.max_slack > kSlackActive) ++active_steps;
        out.max_slack = std::max(out.max_slack, ss.max_slack);
        v_prev = ss.v_star;
    }
    out.slack_activation_rate = double(active_steps) / double(k_total - 1);

    if (!modified) out.corrected = plan; // untouched plan passes through verbatim
    return out;
}

} // namespace pcplan
