#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcplan/runner.hpp"
#include "pcplan/scenario.hpp"
#include "pcplan/sim.hpp"

namespace pcplan::cli {

inline constexpr int kSummarySchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "PCPLAN_OUT";

struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything a run needs beyond the scenario itself. Precedence: built-in
// defaults < scenario file < --set overrides.
struct EffectiveConfig {
    PlannerConfig planner;
    SyntheticDenoiserParams denoiser;
    int schedule_steps = 20;
    double sigma_scale = 0.0;

    void rebuild_schedule() {
        planner.schedule = DenoiseSchedule::cosine(schedule_steps, sigma_scale);
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(value, &used);
    } catch (const std::exception&) {
        throw UserError("override " + key + ": cannot parse '" + value + "' as a number");
    }
    if (used != value.size()) {
        throw UserError("override " + key + ": cannot parse '" + value + "' as a number");
    }
    return out;
}

inline int parse_int(const std::string& key, const std::string& value) {
    const double d = parse_double(key, value);
    const int i = int(std::lround(d));
    if (double(i) != d) throw UserError("override " + key + ": expected an integer");
    return i;
}

} // namespace detail

// Applies one key=value override; unknown keys are user errors that name the
// key.
inline void apply_override(EffectiveConfig& cfg, Scenario& sc, const std::string& key,
                           const std::string& value) {
    const auto d = [&] { return detail::parse_double(key, value); };
    if (key == "barrier.d_safe") cfg.planner.barrier.d_safe = d();
    else if (key == "barrier.gamma") cfg.planner.barrier.gamma = d();
    else if (key == "barrier.slack_penalty") cfg.planner.barrier.slack_penalty = d();
    else if (key == "barrier.v_max") cfg.planner.barrier.v_max = d();
    else if (key == "planner.eta") cfg.planner.eta = d();
    else if (key == "schedule.steps") cfg.schedule_steps = detail::parse_int(key, value);
    else if (key == "schedule.sigma_scale") cfg.sigma_scale = d();
    else if (key == "denoiser.perturbation") cfg.denoiser.perturbation = d();
    else if (key == "denoiser.nominal_pull") cfg.denoiser.nominal_pull = d();
    else if (key == "shape.axis_length") cfg.planner.ego_shape.axis_length = d();
    else if (key == "shape.half_width") cfg.planner.ego_shape.half_width = d();
    else if (key == "shape.wheelbase") cfg.planner.ego_shape.wheelbase = d();
    else if (key == "limits.accel_min") cfg.planner.limits.accel_min = d();
    else if (key == "limits.accel_max") cfg.planner.limits.accel_max = d();
    else if (key == "limits.delta_max") cfg.planner.limits.delta_max = d();
    else if (key == "limits.delta_rate_max") cfg.planner.limits.delta_rate_max = d();
    else if (key == "scenario.duration") sc.duration = d();
    else if (key == "scenario.speed_limit") sc.speed_limit = d();
    else if (key == "scenario.cruise_speed") sc.cruise_speed = d();
    else if (key == "scenario.corridor_half_width") sc.corridor_half_width = d();
    else if (key == "scenario.horizon_steps") sc.horizon_steps = detail::parse_int(key, value);
    else throw UserError("unknown override key: " + key);
}

inline std::pair<std::string, std::string> split_override(const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw UserError("override must be key=value, got: " + spec);
    }
    return {spec.substr(0, eq), spec.substr(eq + 1)};
}

namespace detail {

inline nlohmann::json finite_or_null(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

inline nlohmann::json config_json(const EffectiveConfig& cfg, const Scenario& sc) {
    return {{"mode", to_string(cfg.planner.mode)},
            {"barrier",
             {{"d_safe", cfg.planner.barrier.d_safe},
              {"gamma", cfg.planner.barrier.gamma},
              {"slack_penalty", cfg.planner.barrier.slack_penalty},
              {"v_max", cfg.planner.barrier.v_max}}},
            {"planner", {{"eta", cfg.planner.eta}}},
            {"schedule", {{"steps", cfg.schedule_steps}, {"sigma_scale", cfg.sigma_scale}}},
            {"denoiser",
             {{"perturbation", cfg.denoiser.perturbation},
              {"nominal_pull", cfg.denoiser.nominal_pull}}},
            {"shape", to_json(cfg.planner.ego_shape)},
            {"limits",
             {{"accel_min", cfg.planner.limits.accel_min},
              {"accel_max", cfg.planner.limits.accel_max},
              {"delta_max", cfg.planner.limits.delta_max},
              {"delta_rate_max", finite_or_null(cfg.planner.limits.delta_rate_max)}}},
            {"scenario",
             {{"name", sc.name},
              {"seed", sc.seed},
              {"duration_s", sc.duration},
              {"speed_limit", sc.speed_limit},
              {"corridor_half_width", sc.corridor_half_width},
              {"cruise_speed", sc.cruise_speed},
              {"dt", sc.dt},
              {"horizon_steps", sc.horizon_steps}}}};
}

inline nlohmann::json result_json(const SimResult& r) {
    return {{"collided", r.collided},
            {"collided_agent", r.collided_agent},
            {"min_h", finite_or_null(r.min_h)},
            {"min_h_critical", finite_or_null(r.min_h_critical)},
            {"composite", r.composite},
            {"progress", r.progress},
            {"max_abs_accel", r.max_abs_accel},
            {"max_abs_jerk", r.max_abs_jerk},
            {"max_final_slack", r.max_final_slack},
            {"mean_final_slack_rate", r.mean_final_slack_rate},
            {"steps", r.traces.size()},
            {"parts",
             {{"collided", r.parts.collided},
              {"corridor_compliant", r.parts.corridor_compliant},
              {"progress_above_min", r.parts.progress_above_min},
              {"ttc", r.parts.ttc},
              {"progress_ratio", r.parts.progress_ratio},
              {"speed_compliance", r.parts.speed_compliance},
              {"comfort", r.parts.comfort}}}};
}

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f << contents;
}

inline void write_trace(const std::filesystem::path& path, const SimResult& r) {
    std::ostringstream out;
    for (const StepTrace& t : r.traces) {
        nlohmann::json agents = nlohmann::json::array();
        for (const auto& [id, st] : t.agents) {
            agents.push_back({{"id", id},
                              {"x", st.x},
                              {"y", st.y},
                              {"theta", st.theta},
                              {"v", st.v}});
        }
        nlohmann::json h = nlohmann::json::object();
        for (const auto& [id, value] : t.h_critical) h[std::to_string(id)] = value;
        const nlohmann::json line = {{"t", t.time},
                                     {"ego", to_json(t.ego)},
                                     {"control",
                                      {{"accel", t.control.accel},
                                       {"delta_cmd", t.control.delta_cmd}}},
                                     {"agents", agents},
                                     {"h_critical", h},
                                     {"min_ttc", t.min_ttc},
                                     {"final_slack_rate", t.final_slack_rate},
                                     {"max_slack", t.max_slack},
                                     {"infeasible_start", t.infeasible_start}};
        out << line.dump() << "\n";
    }
    write_file(path, out.str());
}

inline std::string format_rate_pct(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * rate);
    return buf;
}

inline std::string format_fixed(double v, int digits) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

struct RunSpec {
    std::string scenario_path;
    std::string mode = "full";
    std::int64_t seed = -1; // -1: keep the scenario file's seed
    std::string out_dir;
    std::vector<std::string> overrides;
};

inline int cmd_run(const RunSpec& spec, std::ostream& out) {
    std::ifstream file(spec.scenario_path);
    if (!file) throw UserError("cannot read scenario file: " + spec.scenario_path);
    nlohmann::json j;
    try {
        file >> j;
    } catch (const nlohmann::json::exception& e) {
        throw UserError("scenario file is not valid JSON: " + std::string(e.what()));
    }
    Scenario sc = scenario_from_json(j);
    if (spec.seed >= 0) sc.seed = std::uint64_t(spec.seed);

    EffectiveConfig cfg;
    cfg.planner.mode = planner_mode_from_string(spec.mode);
    nlohmann::json overrides_json = nlohmann::json::object();
    for (const std::string& o : spec.overrides) {
        const auto [key, value] = split_override(o);
        apply_override(cfg, sc, key, value);
        overrides_json[key] = value;
    }
    cfg.rebuild_schedule();

    const SimResult result = run_scenario(sc, cfg.planner, cfg.denoiser);

    const std::filesystem::path dir(spec.out_dir);
    std::filesystem::create_directories(dir);
    const nlohmann::json summary = {{"schema_version", kSummarySchemaVersion},
                                    {"invocation",
                                     {{"command", "run"},
                                      {"scenario_path", spec.scenario_path},
                                      {"mode", spec.mode},
                                      {"seed", sc.seed},
                                      {"overrides", overrides_json}}},
                                    {"config", detail::config_json(cfg, sc)},
                                    {"result", detail::result_json(result)}};
    detail::write_file(dir / "summary.json", summary.dump(2) + "\n");
    detail::write_trace(dir / "trace.jsonl", result);

    out << "run " << sc.name << " seed=" << sc.seed << " mode=" << spec.mode
        << ": collided=" << (result.collided ? "true" : "false")
        << " min_h=" << detail::format_fixed(result.min_h, 4)
        << " composite=" << detail::format_fixed(result.composite, 4) << "\n";
    return 0;
}

struct BatterySpec {
    std::string name;
    std::vector<std::string> modes{"full", "post_hoc_only", "arc_reparam", "unfiltered"};
    int seeds = 30;
    std::string out_dir;
    int jobs = 0; // 0: hardware concurrency
    std::vector<std::string> overrides;
};

inline int cmd_battery(const BatterySpec& spec, std::ostream& out) {
    if (spec.seeds < 1) throw UserError("battery: --seeds must be >= 1");
    std::vector<PlannerMode> modes;
    for (const std::string& m : spec.modes) modes.push_back(planner_mode_from_string(m));

    const int jobs = spec.jobs > 0 ? spec.jobs : int(std::thread::hardware_concurrency());

    nlohmann::json modes_json = nlohmann::json::array();
    std::ostringstream table;
    table << "battery: " << spec.name << "  seeds: " << spec.seeds << "\n";
    char header[160];
    std::snprintf(header, sizeof header, "%-20s %5s %20s %16s %22s\n", "mode", "runs",
                  "collision_rate_pct", "mean_composite", "mean_final_slack_rate");
    table << header;

    for (std::size_t mi = 0; mi < modes.size(); ++mi) {
        std::vector<RunJob> jobs_vec;
        for (int s = 0; s < spec.seeds; ++s) {
            RunJob job;
            job.scenario = make_scenario(spec.name, std::uint64_t(s));
            EffectiveConfig cfg;
            cfg.planner.mode = modes[mi];
            for (const std::string& o : spec.overrides) {
                const auto [key, value] = split_override(o);
                apply_override(cfg, job.scenario, key, value);
            }
            cfg.rebuild_schedule();
            job.config = cfg.planner;
            job.denoiser = cfg.denoiser;
            jobs_vec.push_back(std::move(job));
        }
        const std::vector<SimResult> results = run_jobs(jobs_vec, jobs);
        const BatteryStats stats = aggregate(results);

        char row[160];
        std::snprintf(row, sizeof row, "%-20s %5d %20s %16s %22s\n",
                      spec.modes[mi].c_str(), stats.runs,
                      detail::format_rate_pct(stats.collision_rate()).c_str(),
                      detail::format_fixed(stats.mean_composite, 4).c_str(),
                      detail::format_fixed(stats.mean_final_slack_rate, 6).c_str());
        table << row;

        modes_json.push_back({{"mode", spec.modes[mi]},
                              {"runs", stats.runs},
                              {"collisions", stats.collisions},
                              {"collision_rate", stats.collision_rate()},
                              {"mean_composite", stats.mean_composite},
                              {"mean_final_slack_rate", stats.mean_final_slack_rate}});
    }

    const std::filesystem::path dir(spec.out_dir);
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "battery_table.txt", table.str());
    const nlohmann::json machine = {{"schema_version", kSummarySchemaVersion},
                                    {"battery", spec.name},
                                    {"seeds", spec.seeds},
                                    {"modes", modes_json}};
    detail::write_file(dir / "battery_table.json", machine.dump(2) + "\n");
    out << table.str();
    return 0;
}

struct SlackProfileSpec {
    std::string name;
    std::string mode = "full";
    int seeds = 30;
    std::string out_dir;
    int jobs = 0;
    std::vector<std::string> overrides;
};

inline int cmd_slack_profile(const SlackProfileSpec& spec, std::ostream& out) {
    if (spec.seeds < 1) throw UserError("slack-profile: --seeds must be >= 1");
    const PlannerMode mode = planner_mode_from_string(spec.mode);
    const int jobs = spec.jobs > 0 ? spec.jobs : int(std::thread::hardware_concurrency());

    int schedule_steps = 20;
    const auto build_jobs = [&](PlannerMode m) {
        std::vector<RunJob> jobs_vec;
        for (int s = 0; s < spec.seeds; ++s) {
            RunJob job;
            job.scenario = make_scenario(spec.name, std::uint64_t(s));
            EffectiveConfig cfg;
            cfg.planner.mode = m;
            for (const std::string& o : spec.overrides) {
                const auto [key, value] = split_override(o);
                apply_override(cfg, job.scenario, key, value);
            }
            cfg.rebuild_schedule();
            schedule_steps = cfg.schedule_steps;
            job.config = cfg.planner;
            job.denoiser = cfg.denoiser;
            jobs_vec.push_back(std::move(job));
        }
        return jobs_vec;
    };

    const BatteryStats stats = aggregate(run_jobs(build_jobs(mode), jobs));
    const BatteryStats post_hoc =
        aggregate(run_jobs(build_jobs(PlannerMode::post_hoc_only), jobs));

    // chronological profile: index 0 is the first (noisiest) denoising step T
    std::ostringstream csv;
    csv << "denoise_step,avg_slack_activation_rate\n";
    nlohmann::json steps_json = nlohmann::json::array();
    for (int i = 0; i < schedule_steps; ++i) {
        const int t = schedule_steps - i;
        const double rate =
            i < int(stats.slack_profile.size()) ? stats.slack_profile[std::size_t(i)] : 0.0;
        csv << t << "," << detail::format_fixed(rate, 6) << "\n";
        steps_json.push_back({{"t", t}, {"rate", rate}});
    }

    const std::filesystem::path dir(spec.out_dir);
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "slack_profile.csv", csv.str());
    const nlohmann::json machine = {{"schema_version", kSummarySchemaVersion},
                                    {"battery", spec.name},
                                    {"mode", spec.mode},
                                    {"seeds", spec.seeds},
                                    {"steps", steps_json},
                                    {"post_hoc_rate", post_hoc.mean_final_slack_rate}};
    detail::write_file(dir / "slack_profile.json", machine.dump(2) + "\n");

    out << "slack-profile " << spec.name << " mode=" << spec.mode << " seeds=" << spec.seeds
        << ": first=" << detail::format_fixed(stats.slack_profile.empty() ? 0.0
                                                                          : stats.slack_profile.front(),
                                              6)
        << " last=" << detail::format_fixed(stats.slack_profile.empty() ? 0.0
                                                                        : stats.slack_profile.back(),
                                            6)
        << " post_hoc=" << detail::format_fixed(post_hoc.mean_final_slack_rate, 6) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"capsule-CBF safety filtering inside a diffusion trajectory planner"};
    app.require_subcommand(1);

    const char* env_out = std::getenv(kOutputDirEnv);
    const std::string default_out = env_out != nullptr ? env_out : "out";

    RunSpec run_spec;
    run_spec.out_dir = default_out;
    CLI::App* run = app.add_subcommand("run", "run a single scenario file");
    run->add_option("--scenario", run_spec.scenario_path, "scenario JSON path")->required();
    run->add_option("--mode", run_spec.mode, "planner mode");
    run->add_option("--seed", run_spec.seed, "override the scenario seed");
    run->add_option("--out", run_spec.out_dir, "output directory");
    run->add_option("--set", run_spec.overrides, "key=value parameter override");

    BatterySpec battery_spec;
    battery_spec.out_dir = default_out;
    CLI::App* battery = app.add_subcommand("battery", "run a scenario battery across modes");
    battery->add_option("--name", battery_spec.name, "battery name")->required();
    battery->add_option("--modes", battery_spec.modes, "planner modes")->delimiter(',');
    battery->add_option("--seeds", battery_spec.seeds, "number of seeded variants");
    battery->add_option("--out", battery_spec.out_dir, "output directory");
    battery->add_option("--jobs", battery_spec.jobs, "work pool size (default: logical cores)");
    battery->add_option("--set", battery_spec.overrides, "key=value parameter override");

    SlackProfileSpec slack_spec;
    slack_spec.out_dir = default_out;
    CLI::App* slack = app.add_subcommand("slack-profile",
                                         "per-denoising-step slack activation profile");
    slack->add_option("--name", slack_spec.name, "battery name")->required();
    slack->add_option("--mode", slack_spec.mode, "planner mode");
    slack->add_option("--seeds", slack_spec.seeds, "number of seeded variants");
    slack->add_option("--out", slack_spec.out_dir, "output directory");
    slack->add_option("--jobs", slack_spec.jobs, "work pool size");
    slack->add_option("--set", slack_spec.overrides, "key=value parameter override");

    std::vector<const char*> argv;
    argv.push_back("pcplan");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (run->parsed()) return cmd_run(run_spec, out);
        if (battery->parsed()) return cmd_battery(battery_spec, out);
        if (slack->parsed()) return cmd_slack_profile(slack_spec, out);
        err << "error: no subcommand\n";
        return 2;
    } catch (const UserError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const ScenarioError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace pcplan::cli
