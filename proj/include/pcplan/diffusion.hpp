#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

#include "pcplan/dynamics.hpp"
#include "pcplan/safety.hpp"

namespace pcplan {

// Cumulative noise schedule alpha_bar_0..T (alpha_bar_0 = 1, strictly
// decreasing, all in (0, 1]) plus per-step sampling noise scales sigma_1..T.
class DenoiseSchedule {
  public:
    DenoiseSchedule(std::vector<double> alpha_bar, std::vector<double> sigma)
        : alpha_bar_(std::move(alpha_bar)), sigma_(std::move(sigma)) {
        if (alpha_bar_.size() < 2) {
            throw std::invalid_argument("DenoiseSchedule: need at least one step");
        }
        if (alpha_bar_.front() != 1.0) {
            throw std::invalid_argument("DenoiseSchedule: alpha_bar_0 must be 1");
        }
        for (std::size_t t = 1; t < alpha_bar_.size(); ++t) {
            if (!(alpha_bar_[t] > 0.0) || !(alpha_bar_[t] < alpha_bar_[t - 1])) {
                throw std::invalid_argument(
                    "DenoiseSchedule: alpha_bar must be strictly decreasing within (0, 1]");
            }
        }
        if (sigma_.size() != alpha_bar_.size()) {
            throw std::invalid_argument("DenoiseSchedule: sigma must have T+1 entries");
        }
        for (const double s : sigma_) {
            if (!(s >= 0.0)) throw std::invalid_argument("DenoiseSchedule: sigma must be >= 0");
        }
    }

    // Cosine schedule with the per-step noise increment clipped at 0.999 so
    // alpha_bar_T stays positive. sigma_scale = 0 gives deterministic
    // sampling; sigma_scale = 1 gives the standard posterior noise.
    static DenoiseSchedule cosine(int steps, double sigma_scale = 0.0) {
        if (steps < 1) throw std::invalid_argument("DenoiseSchedule: steps must be >= 1");
        const double s = 0.008;
        const auto f = [&](double t) {
            const double arg = (t / steps + s) / (1.0 + s) * M_PI / 2.0;
            return std::cos(arg) * std::cos(arg);
        };
        std::vector<double> ab(steps + 1);
        ab[0] = 1.0;
        for (int t = 1; t <= steps; ++t) {
            const double beta = std::min(1.0 - f(double(t)) / f(double(t - 1)), 0.999);
            ab[t] = ab[t - 1] * (1.0 - beta);
        }
        std::vector<double> sig(steps + 1, 0.0);
        if (sigma_scale > 0.0) {
            for (int t = 1; t <= steps; ++t) {
                const double var = (1.0 - ab[t - 1]) / (1.0 - ab[t]) * (1.0 - ab[t] / ab[t - 1]);
                sig[t] = sigma_scale * std::sqrt(std::max(0.0, var));
            }
        }
        return DenoiseSchedule(std::move(ab), std::move(sig));
    }

    int steps() const { return int(alpha_bar_.size()) - 1; }
    double alpha_bar(int t) const { return alpha_bar_.at(std::size_t(t)); }
    double sigma(int t) const { return sigma_.at(std::size_t(t)); }

  private:
    std::vector<double> alpha_bar_;
    std::vector<double> sigma_;
};

// Fixed per-channel standardization between world coordinates and the
// diffusion space: positions centered at the scene origin and divided by the
// position scale, heading channels divided by the heading scale.
struct TrajectoryScaler {
    Vec2 origin;
    double position_scale = 50.0;
    double heading_scale = 1.0;

    Trajectory normalize(const Trajectory& world) const {
        Trajectory out = world;
        for (Waypoint& w : out.waypoints) {
            w.x = (w.x - origin.x) / position_scale;
            w.y = (w.y - origin.y) / position_scale;
            w.cos_h /= heading_scale;
            w.sin_h /= heading_scale;
        }
        return out;
    }
    Trajectory denormalize(const Trajectory& normalized) const {
        Trajectory out = normalized;
        for (Waypoint& w : out.waypoints) {
            w.x = w.x * position_scale + origin.x;
            w.y = w.y * position_scale + origin.y;
            w.cos_h *= heading_scale;
            w.sin_h *= heading_scale;
        }
        return out;
    }
};

// Conditioning information a planning pass consumes.
struct SceneContext {
    EgoState ego0;
    std::vector<Vec2> route; // reference path polyline, >= 2 points
    std::vector<NeighborTrack> neighbor_tracks;
    std::uint64_t rng_seed = 0;
    int horizon_steps = 80;    // K
    double dt = 0.1;           // s
    double cruise_speed = 12.0; // m/s target of the nominal profile
};

inline TrajectoryScaler scaler_for(const SceneContext& ctx) {
    return {{ctx.ego0.x, ctx.ego0.y}, 50.0, 1.0};
}

// Noise-prediction interface. Implementations receive trajectories in the
// normalized diffusion space. One instance serves one sampling pass at a
// time; concurrent samplers use separate instances.
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual Trajectory predict_noise(const Trajectory& noisy, int t) = 0;
};

namespace detail {

template <typename F>
inline Trajectory elementwise(const Trajectory& a, const Trajectory& b, F&& f) {
    Trajectory out = a;
    for (std::size_t i = 0; i < out.waypoints.size(); ++i) {
        const Waypoint& wb = b.waypoints[i];
        Waypoint& w = out.waypoints[i];
        w.x = f(w.x, wb.x);
        w.y = f(w.y, wb.y);
        w.cos_h = f(w.cos_h, wb.cos_h);
        w.sin_h = f(w.sin_h, wb.sin_h);
    }
    return out;
}

inline bool bitwise_equal(const Trajectory& a, const Trajectory& b) {
    if (a.waypoints.size() != b.waypoints.size()) return false;
    for (std::size_t i = 0; i < a.waypoints.size(); ++i) {
        const Waypoint& wa = a.waypoints[i];
        const Waypoint& wb = b.waypoints[i];
        if (wa.x != wb.x || wa.y != wb.y || wa.cos_h != wb.cos_h || wa.sin_h != wb.sin_h) {
            return false;
        }
    }
    return true;
}

} // namespace detail

// Clean-trajectory estimate from a noisy iterate and its noise prediction:
// tau_hat_0 = (tau_t - sqrt(1 - ab_t) eps) / sqrt(ab_t).
inline Trajectory clean_estimate(const Trajectory& tau_t, const Trajectory& eps, int t,
                                 const DenoiseSchedule& sched) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("clean_estimate: t out of range");
    const double ab = sched.alpha_bar(t);
    const double coeff = std::sqrt(1.0 - ab);
    const double inv = 1.0 / std::sqrt(ab);
    return detail::elementwise(tau_t, eps,
                               [&](double x, double e) { return (x - coeff * e) * inv; });
}

// Reverse-diffusion step around a (possibly corrected) clean estimate: the
// noise consistent with the corrected estimate is re-derived from the
// iterate, then the standard reverse transition is applied.
inline Trajectory renoise(const Trajectory& tau_t, const Trajectory& tau0_star, int t,
                          const DenoiseSchedule& sched, const Trajectory* z = nullptr) {
    if (t < 1 || t > sched.steps()) throw std::invalid_argument("renoise: t out of range");
    const double ab_t = sched.alpha_bar(t);
    if (ab_t >= 1.0) {
        throw std::domain_error("renoise: alpha_bar_t == 1 leaves the noise undefined");
    }
    const double ab_prev = sched.alpha_bar(t - 1);
    const double inv = 1.0 / std::sqrt(1.0 - ab_t);
    const double sab_t = std::sqrt(ab_t);
    const Trajectory eps_hat = detail::elementwise(
        tau_t, tau0_star, [&](double x, double c) { return (x - sab_t * c) * inv; });

    const double a = std::sqrt(ab_prev);
    const double b = std::sqrt(1.0 - ab_prev);
    Trajectory out = detail::elementwise(tau0_star, eps_hat,
                                         [&](double c, double e) { return a * c + b * e; });
    const double sigma = sched.sigma(t);
    if (sigma > 0.0) {
        if (z == nullptr) throw std::invalid_argument("renoise: sigma > 0 requires a noise sample");
        out = detail::elementwise(out, *z, [&](double x, double n) { return x + sigma * n; });
    }
    return out;
}

// Per-step correction applied to the de-normalized clean estimate. Returning
// the input unchanged (bitwise) keeps the step on the plain reverse
// transition.
using CorrectionHook = std::function<Trajectory(const Trajectory& clean_world, int t)>;

// DDPM reverse sampler. Starts from seeded standard-normal noise, extracts
// the clean estimate each step, lets the hook correct it, and re-noises: the
// plain transition when the hook left the estimate untouched, the
// corrected-noise transition otherwise (the two coincide algebraically).
// Deterministic given the context seed. Returns the world-space result.
inline Trajectory ddpm_sample(Denoiser& denoiser, const SceneContext& ctx,
                              const DenoiseSchedule& sched, const CorrectionHook& hook = {}) {
    const TrajectoryScaler scaler = scaler_for(ctx);
    std::mt19937_64 rng(ctx.rng_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Trajectory tau;
    tau.dt = ctx.dt;
    tau.waypoints.resize(std::size_t(ctx.horizon_steps));
    for (Waypoint& w : tau.waypoints) {
        w.x = gauss(rng);
        w.y = gauss(rng);
        w.cos_h = gauss(rng);
        w.sin_h = gauss(rng);
    }

    for (int t = sched.steps(); t >= 1; --t) {
        const Trajectory eps = denoiser.predict_noise(tau, t);
        const Trajectory clean = clean_estimate(tau, eps, t, sched);

        Trajectory clean_star = clean;
        bool modified = false;
        if (hook) {
            const Trajectory world = scaler.denormalize(clean);
            const Trajectory corrected = hook(world, t);
            if (!detail::bitwise_equal(corrected, world)) {
                clean_star = scaler.normalize(corrected);
                modified = true;
            }
        }

        const double sigma = sched.sigma(t);
        Trajectory z;
        if (sigma > 0.0) {
            z = tau;
            for (Waypoint& w : z.waypoints) {
                w.x = gauss(rng);
                w.y = gauss(rng);
                w.cos_h = gauss(rng);
                w.sin_h = gauss(rng);
            }
        }

        if (modified) {
            tau = renoise(tau, clean_star, t, sched, sigma > 0.0 ? &z : nullptr);
        } else {
            const double ab_prev = sched.alpha_bar(t - 1);
            const double a = std::sqrt(ab_prev);
            const double b = std::sqrt(1.0 - ab_prev);
            tau = detail::elementwise(clean, eps,
                                      [&](double c, double e) { return a * c + b * e; });
            if (sigma > 0.0) {
                tau = detail::elementwise(tau, z,
                                          [&](double x, double n) { return x + sigma * n; });
            }
        }
    }
    return scaler.denormalize(tau);
}

struct SyntheticDenoiserParams {
    double perturbation = 0.2;   // scale of the seed-dependent smooth field
    double nominal_pull = 0.2;   // per-step blend weight toward the nominal trajectory
    double accel_rate = 1.5;     // m/s^2, nominal profile approach to cruise speed
    double decel_rate = 2.5;     // m/s^2, nominal profile ramp-down and curve entry
    double lateral_accel = 1.2;  // m/s^2, curvature-limited speed through turns
};

// Stand-in for a learned trajectory denoiser. The "learned distribution" is
// a nominal route-following trajectory from the scene context; predictions
// anchor the clean estimate at a blend of that nominal and the previous
// step's (possibly safety-corrected) estimate recovered from consecutive
// iterates, plus a smooth seed-dependent perturbation field that decays as
// t -> 0. The recovery makes corrections persist across denoising steps the
// way a conditioned network would re-absorb them.
class SyntheticDenoiser : public Denoiser {
  public:
    SyntheticDenoiser(const SceneContext& ctx, const DenoiseSchedule& sched,
                      const SyntheticDenoiserParams& params = {})
        : sched_(sched), params_(params) {
        if (ctx.route.size() < 2) {
            throw std::invalid_argument("SyntheticDenoiser: route needs at least 2 points");
        }
        const TrajectoryScaler scaler = scaler_for(ctx);
        nominal_ = scaler.normalize(nominal_trajectory(ctx, params));
        build_field(ctx, scaler);
    }

    // Nominal route-following trajectory in world coordinates: the ego
    // projection onto the route advanced by a speed profile that ramps from
    // the current speed toward cruise, respects a lateral-acceleration bound
    // through curvature, and brakes to rest at the route end.
    static Trajectory nominal_trajectory(const SceneContext& ctx,
                                         const SyntheticDenoiserParams& params = {}) {
        const std::vector<Vec2>& route = ctx.route;
        std::vector<double> cum(route.size(), 0.0);
        for (std::size_t i = 1; i < route.size(); ++i) {
            cum[i] = cum[i - 1] + norm(route[i] - route[i - 1]);
        }
        const double total = cum.back();

        // curvature-limited speed per vertex
        std::vector<double> allowed(route.size(), ctx.cruise_speed);
        for (std::size_t i = 1; i + 1 < route.size(); ++i) {
            const Vec2 d0 = route[i] - route[i - 1];
            const Vec2 d1 = route[i + 1] - route[i];
            const double l0 = norm(d0), l1 = norm(d1);
            if (l0 < 1e-9 || l1 < 1e-9) continue;
            const double dtheta =
                wrap_angle(std::atan2(d1.y, d1.x) - std::atan2(d0.y, d0.x));
            const double kappa = std::abs(dtheta) / (0.5 * (l0 + l1));
            if (kappa > 1e-9) {
                allowed[i] = std::min(allowed[i], std::sqrt(params.lateral_accel / kappa));
            }
        }
        // backward pass: decelerating early enough to honor each cap
        for (std::size_t i = route.size(); i-- > 1;) {
            const double len = cum[i] - cum[i - 1];
            allowed[i - 1] = std::min(
                allowed[i - 1],
                std::sqrt(allowed[i] * allowed[i] + 2.0 * params.decel_rate * len));
        }
        const auto allowed_at = [&](double s) {
            const double sc = std::clamp(s, 0.0, total);
            std::size_t i = 0;
            while (i + 2 < route.size() && cum[i + 1] < sc) ++i;
            const double len = cum[i + 1] - cum[i];
            const double t = len > 1e-12 ? (sc - cum[i]) / len : 0.0;
            return allowed[i] + t * (allowed[i + 1] - allowed[i]);
        };

        // project ego0 onto the polyline
        double s0 = 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i + 1 < route.size(); ++i) {
            const Vec2 a = route[i];
            const Vec2 d = route[i + 1] - route[i];
            const double len2 = norm_sq(d);
            const double t = len2 > 0.0
                                 ? std::clamp(dot(ctx.ego0.position() - a, d) / len2, 0.0, 1.0)
                                 : 0.0;
            const Vec2 p = a + t * d;
            const double d2 = norm_sq(p - ctx.ego0.position());
            if (d2 < best) {
                best = d2;
                s0 = cum[i] + t * std::sqrt(len2);
            }
        }

        const auto pose_at = [&](double s) -> Waypoint {
            const double sc = std::clamp(s, 0.0, total);
            std::size_t i = 0;
            while (i + 2 < route.size() && cum[i + 1] < sc) ++i;
            const Vec2 a = route[i];
            const Vec2 d = route[i + 1] - route[i];
            const double len = cum[i + 1] - cum[i];
            const double t = len > 1e-12 ? (sc - cum[i]) / len : 0.0;
            const Vec2 pos = a + t * d;
            const Vec2 dir = len > 1e-12 ? d / len : Vec2{1.0, 0.0};
            return {pos.x, pos.y, dir.x, dir.y};
        };

        Trajectory out;
        out.dt = ctx.dt;
        out.waypoints.reserve(std::size_t(ctx.horizon_steps));
        double s = s0;
        double v = std::max(0.0, ctx.ego0.v);
        for (int k = 0; k < ctx.horizon_steps; ++k) {
            out.waypoints.push_back(pose_at(s));
            const double remaining = std::max(0.0, total - s);
            const double v_end = std::sqrt(2.0 * params.decel_rate * remaining);
            const double v_target = std::min({ctx.cruise_speed, v_end, allowed_at(s)});
            const double dv = std::clamp(v_target - v, -params.decel_rate * ctx.dt,
                                         params.accel_rate * ctx.dt);
            v = std::max(0.0, v + dv);
            s += v * ctx.dt;
        }
        return out;
    }

    Trajectory predict_noise(const Trajectory& noisy, int t) override {
        const double ab_t = sched_.alpha_bar(t);
        Trajectory anchor = nominal_;
        if (has_prev_ && t == prev_t_ - 1 && sched_.sigma(prev_t_) == 0.0) {
            // Recover the previous step's clean estimate: tau_t was formed as
            // sqrt(ab_t) c + sqrt(1-ab_t) (tau_prev - sqrt(ab_prev) c)/sqrt(1-ab_prev),
            // which is linear in c.
            const double ab_prev = sched_.alpha_bar(prev_t_);
            const double ratio = std::sqrt((1.0 - ab_t) / (1.0 - ab_prev));
            const double denom = std::sqrt(ab_t) - ratio * std::sqrt(ab_prev);
            const Trajectory recovered = detail::elementwise(
                noisy, prev_, [&](double x, double p) { return (x - ratio * p) / denom; });
            const double pull = params_.nominal_pull;
            anchor = detail::elementwise(nominal_, recovered, [&](double n, double r) {
                return pull * n + (1.0 - pull) * r;
            });
        }

        const double inv = 1.0 / std::sqrt(1.0 - ab_t);
        const double sab = std::sqrt(ab_t);
        // perturbation enters the implied clean estimate scaled by
        // perturbation * (1 - ab_t), decaying to zero as t -> 0
        const double pert = params_.perturbation * (1.0 - ab_t) * sab * inv;
        Trajectory eps = noisy;
        for (std::size_t i = 0; i < eps.waypoints.size(); ++i) {
            Waypoint& w = eps.waypoints[i];
            const Waypoint& a = anchor.waypoints[std::min(i, anchor.waypoints.size() - 1)];
            const Waypoint& f = field_.waypoints[std::min(i, field_.waypoints.size() - 1)];
            w.x = (w.x - sab * a.x) * inv - pert * f.x;
            w.y = (w.y - sab * a.y) * inv - pert * f.y;
            w.cos_h = (w.cos_h - sab * a.cos_h) * inv - pert * f.cos_h;
            w.sin_h = (w.sin_h - sab * a.sin_h) * inv - pert * f.sin_h;
        }

        prev_ = noisy;
        prev_t_ = t;
        has_prev_ = true;
        return eps;
    }

  private:
    void build_field(const SceneContext& ctx, const TrajectoryScaler& scaler) {
        std::mt19937_64 rng(ctx.rng_seed ^ 0x5deece66dULL);
        std::uniform_real_distribution<double> amp(-1.0, 1.0);
        std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
        const int k_total = ctx.horizon_steps;
        field_.dt = ctx.dt;
        field_.waypoints.assign(std::size_t(k_total), Waypoint{0, 0, 0, 0});
        // smooth low-frequency field, world amplitudes ~2 m positions, ~0.1 headings
        const double pos_amp = 2.0 / scaler.position_scale;
        const double head_amp = 0.1 / scaler.heading_scale;
        for (int c = 0; c < 4; ++c) {
            for (int m = 1; m <= 3; ++m) {
                const double a =
                    (c < 2 ? pos_amp : head_amp) * amp(rng) / double(m);
                const double ph = phase(rng);
                for (int k = 0; k < k_total; ++k) {
                    const double val =
                        a * std::sin(2.0 * M_PI * m * double(k) / double(k_total) + ph);
                    Waypoint& w = field_.waypoints[std::size_t(k)];
                    if (c == 0) w.x += val;
                    else if (c == 1) w.y += val;
                    else if (c == 2) w.cos_h += val;
                    else w.sin_h += val;
                }
            }
        }
    }

    DenoiseSchedule sched_;
    SyntheticDenoiserParams params_;
    Trajectory nominal_; // normalized
    Trajectory field_;   // normalized perturbation field
    Trajectory prev_;
    int prev_t_ = -1;
    bool has_prev_ = false;
};

} // namespace pcplan
