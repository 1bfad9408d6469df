#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pcplan/diffusion.hpp"
#include "pcplan/dynamics.hpp"
#include "pcplan/safety.hpp"

namespace pcplan {

enum class PlannerMode {
    full,               // correction at every denoising step (the full stack)
    post_hoc_only,      // plain reverse diffusion, one correction at the end
    no_selective_filter, // all agents are critical from the first step
    arc_reparam,        // in-loop correction by arc re-timing, no dynamics
    unfiltered          // plain reverse diffusion + LQR tracking, no safety
};

inline const char* to_string(PlannerMode m) {
    switch (m) {
        case PlannerMode::full: return "full";
        case PlannerMode::post_hoc_only: return "post_hoc_only";
        case PlannerMode::no_selective_filter: return "no_selective_filter";
        case PlannerMode::arc_reparam: return "arc_reparam";
        case PlannerMode::unfiltered: return "unfiltered";
    }
    return "unknown";
}

inline PlannerMode planner_mode_from_string(const std::string& s) {
    if (s == "full") return PlannerMode::full;
    if (s == "post_hoc_only") return PlannerMode::post_hoc_only;
    if (s == "no_selective_filter") return PlannerMode::no_selective_filter;
    if (s == "arc_reparam") return PlannerMode::arc_reparam;
    if (s == "unfiltered") return PlannerMode::unfiltered;
    throw std::invalid_argument("unknown planner mode: " + s);
}

// Monotonically accumulated set of safety-critical agent identifiers.
struct CriticalSet {
    std::set<int> ids;
    double eta = 2.0; // m, inclusion threshold on the minimum barrier value
};

struct PlannerConfig {
    PlannerMode mode = PlannerMode::full;
    double eta = 2.0; // m
    BarrierParams barrier;
    DenoiseSchedule schedule = DenoiseSchedule::cosine(20);
    VehicleShape ego_shape;
    ControlLimits limits;
    TrackerParams tracker;
};

struct PlanRecord {
    Trajectory final;
    std::vector<Control> controls;
    // slack activation rate of the correction at each denoising step,
    // chronological: index 0 is the first (noisiest) step t = T
    std::vector<double> per_step_slack_rate;
    std::vector<std::set<int>> critical_history; // snapshot after each step's accumulation
    std::set<int> critical_final;
    double final_slack_rate = 0.0; // rate of the correction that produced `final`
    double final_max_slack = 0.0;
    bool infeasible_start = false; // some critical h < 0 at the current state; handled by slack
};

// Agents whose predicted minimum barrier value along the plan estimate falls
// at or below eta.
inline std::set<int> proximity_filter(const Trajectory& plan_estimate,
                                      const std::vector<NeighborTrack>& neighbors,
                                      const VehicleShape& ego_shape, const BarrierParams& params,
                                      double eta) {
    std::set<int> out;
    for (const NeighborTrack& nb : neighbors) {
        const std::size_t k_total = std::min(plan_estimate.size(), nb.prediction.size());
        double h_min = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < k_total; ++k) {
            const Waypoint& we = plan_estimate.waypoints[k];
            const Waypoint& wn = nb.prediction.waypoints[k];
            const Capsule ego_cap = capsule_at(we.position(), we.heading(), ego_shape);
            const Capsule nb_cap = capsule_at(wn.position(), wn.heading(), nb.shape);
            h_min = std::min(h_min, capsule_distance(ego_cap, nb_cap) - params.d_safe);
        }
        if (h_min <= eta) out.insert(nb.id);
    }
    return out;
}

namespace detail {

inline std::vector<NeighborTrack> select_neighbors(const std::vector<NeighborTrack>& all,
                                                   const std::set<int>& ids) {
    std::vector<NeighborTrack> out;
    out.reserve(ids.size());
    for (const NeighborTrack& nb : all) {
        if (ids.count(nb.id)) out.push_back(nb);
    }
    return out;
}

} // namespace detail

// One full planning pass: reverse diffusion with per-step critical-agent
// accumulation and safety correction (per the configured mode), returning an
// executable, safety-filtered trajectory plus the slack and critical-set
// logs. Pure function of (context, denoiser, config) for a fixed seed.
inline PlanRecord plan(const SceneContext& ctx, Denoiser& denoiser, const PlannerConfig& config) {
    const DenoiseSchedule& sched = config.schedule;
    const int t_total = sched.steps();

    PlanRecord rec;
    rec.per_step_slack_rate.assign(std::size_t(t_total), 0.0);

    std::set<int> critical;
    const bool in_loop = config.mode == PlannerMode::full ||
                         config.mode == PlannerMode::no_selective_filter ||
                         config.mode == PlannerMode::arc_reparam;

    FilterResult last_filter;
    int last_filter_t = -1;

    CorrectionHook hook;
    if (in_loop) {
        hook = [&](const Trajectory& world, int t) -> Trajectory {
            if (config.mode == PlannerMode::no_selective_filter) {
                for (const NeighborTrack& nb : ctx.neighbor_tracks) critical.insert(nb.id);
            } else {
                const std::set<int> near = proximity_filter(world, ctx.neighbor_tracks,
                                                            config.ego_shape, config.barrier,
                                                            config.eta);
                critical.insert(near.begin(), near.end());
            }
            rec.critical_history.push_back(critical);
            if (critical.empty()) return world; // untouched: plain reverse step

            const std::vector<NeighborTrack> active =
                detail::select_neighbors(ctx.neighbor_tracks, critical);
            FilterResult f =
                config.mode == PlannerMode::arc_reparam
                    ? arc_reparam(world, ctx.ego0, active, config.ego_shape, config.barrier,
                                  config.limits, config.tracker)
                    : pc_cbf(world, ctx.ego0, active, config.ego_shape, config.barrier,
                             config.limits, config.tracker);
            rec.per_step_slack_rate[std::size_t(t_total - t)] = f.slack_activation_rate;
            rec.infeasible_start = rec.infeasible_start || f.infeasible_start;
            last_filter = std::move(f);
            last_filter_t = t;
            return last_filter.corrected;
        };
    }

    const Trajectory tau0 = ddpm_sample(denoiser, ctx, sched, hook);

    if (in_loop && last_filter_t == 1) {
        // the t = 1 correction is the final trajectory (alpha_bar_0 = 1 and
        // sigma = 0 make the last reverse step the corrected estimate itself)
        rec.final = last_filter.corrected;
        rec.controls = last_filter.controls;
        rec.final_slack_rate = last_filter.slack_activation_rate;
        rec.final_max_slack = last_filter.max_slack;
    } else {
        // post-hoc correction (or no critical agents / unfiltered tracking)
        if (config.mode == PlannerMode::post_hoc_only) {
            critical = proximity_filter(tau0, ctx.neighbor_tracks, config.ego_shape,
                                        config.barrier, config.eta);
            rec.critical_history.push_back(critical);
        }
        const std::vector<NeighborTrack> active =
            config.mode == PlannerMode::unfiltered
                ? std::vector<NeighborTrack>{}
                : detail::select_neighbors(ctx.neighbor_tracks, critical);
        FilterResult f = config.mode == PlannerMode::arc_reparam
                             ? arc_reparam(tau0, ctx.ego0, active, config.ego_shape,
                                           config.barrier, config.limits, config.tracker)
                             : pc_cbf(tau0, ctx.ego0, active, config.ego_shape, config.barrier,
                                      config.limits, config.tracker);
        rec.infeasible_start = rec.infeasible_start || f.infeasible_start;
        rec.final = f.corrected;
        rec.controls = f.controls;
        rec.final_slack_rate = f.slack_activation_rate;
        rec.final_max_slack = f.max_slack;
    }
    rec.critical_final = critical;
    return rec;
}

// One receding-horizon cycle: plan and return the first action. The critical
// set does not persist across cycles (each plan() call accumulates afresh).
inline std::pair<Control, PlanRecord> replan_cycle(const SceneContext& ctx, Denoiser& denoiser,
                                                   const PlannerConfig& config) {
    PlanRecord rec = plan(ctx, denoiser, config);
    const Control first = rec.controls.front();
    return {first, std::move(rec)};
}

} // namespace pcplan
