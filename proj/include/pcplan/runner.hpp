#pragma once

#include <atomic>
#include <thread>
#include <vector>

#include "pcplan/sim.hpp"

namespace pcplan {

struct RunJob {
    Scenario scenario;
    PlannerConfig config;
    SyntheticDenoiserParams denoiser;
};

// Executes jobs on a bounded work pool. Results land at the job's own index,
// so ordering is deterministic regardless of pool size.
inline std::vector<SimResult> run_jobs(const std::vector<RunJob>& jobs, int pool_size) {
    std::vector<SimResult> results(jobs.size());
    if (jobs.empty()) return results;

    const int workers =
        std::clamp(pool_size, 1, int(std::min<std::size_t>(jobs.size(), 64)));
    std::atomic<std::size_t> next{0};
    const auto worker = [&]() {
        for (std::size_t i = next.fetch_add(1); i < jobs.size(); i = next.fetch_add(1)) {
            results[i] = run_scenario(jobs[i].scenario, jobs[i].config, jobs[i].denoiser);
        }
    };

    if (workers == 1) {
        worker();
        return results;
    }
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    return results;
}

// Aggregate statistics of one battery x mode cell.
struct BatteryStats {
    int runs = 0;
    int collisions = 0;
    double mean_composite = 0.0;
    double mean_final_slack_rate = 0.0;
    std::vector<double> slack_profile; // mean per denoising step

    double collision_rate() const { return runs > 0 ? double(collisions) / runs : 0.0; }
};

inline BatteryStats aggregate(const std::vector<SimResult>& results) {
    BatteryStats stats;
    for (const SimResult& r : results) {
        ++stats.runs;
        if (r.collided) ++stats.collisions;
        stats.mean_composite += r.composite;
        stats.mean_final_slack_rate += r.mean_final_slack_rate;
        if (stats.slack_profile.size() < r.slack_profile.size()) {
            stats.slack_profile.resize(r.slack_profile.size(), 0.0);
        }
        for (std::size_t i = 0; i < r.slack_profile.size(); ++i) {
            stats.slack_profile[i] += r.slack_profile[i];
        }
    }
    if (stats.runs > 0) {
        stats.mean_composite /= stats.runs;
        stats.mean_final_slack_rate /= stats.runs;
        for (double& v : stats.slack_profile) v /= stats.runs;
    }
    return stats;
}

} // namespace pcplan
