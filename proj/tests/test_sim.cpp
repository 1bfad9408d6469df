#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pcplan/runner.hpp"
#include "pcplan/sim.hpp"

using namespace pcplan;

namespace {

World lane_world() {
    World w;
    w.ego = {-500.0, 50.0, 0, 0, 0}; // far away, off every lane
    w.route = {{-500.0, 50.0}, {-400.0, 50.0}};
    return w;
}

AgentRuntime lane_agent(int id, double x, double v, AgentBehavior behavior,
                        double desired_speed = 9.0) {
    AgentSpec spec;
    spec.id = id;
    spec.behavior = behavior;
    spec.start = {x, 0, 0, 0, v};
    spec.route = {{-50.0, 0.0}, {500.0, 0.0}};
    spec.idm.desired_speed = desired_speed;
    AgentRuntime rt;
    rt.spec = spec;
    rt.state = spec.start;
    rt.route_cum = {0.0, 550.0};
    rt.progress = x + 50.0;
    return rt;
}

} // namespace

TEST_CASE("IDM: free-flow equilibrium at the desired speed") {
    World w = lane_world();
    w.agents.push_back(lane_agent(1, 0.0, 9.0, AgentBehavior::idm_lane_follow, 9.0));
    const double a = detail::idm_accel(w, w.agents[0]);
    CHECK(std::abs(a) <= 1e-6 * w.agents[0].spec.idm.max_accel);
}

TEST_CASE("IDM: standstill at exactly min_gap behind a stopped leader") {
    World w = lane_world();
    w.agents.push_back(lane_agent(1, 0.0, 0.0, AgentBehavior::idm_lane_follow));
    // bumper gap = dx - axis_length for equal shapes; place at exactly min_gap
    const double dx = w.agents[0].spec.idm.min_gap + w.agents[0].spec.shape.axis_length;
    w.agents.push_back(lane_agent(2, dx, 0.0, AgentBehavior::stopped));
    const double a = detail::idm_accel(w, w.agents[0]);
    CHECK(a <= 1e-12); // exact boundary equality up to projection arithmetic

    // any closer and the gap term strictly dominates
    w.agents[1].state.x = dx - 0.05;
    w.agents[1].progress -= 0.05;
    CHECK(detail::idm_accel(w, w.agents[0]) < 0.0);
}

TEST_CASE("IDM: platoon settles at the analytic equilibrium gap") {
    World w = lane_world();
    // constant-velocity leader at 5 m/s; IDM followers want 13 m/s
    w.agents.push_back(lane_agent(1, 60.0, 5.0, AgentBehavior::constant_velocity));
    w.agents.push_back(lane_agent(2, 30.0, 5.0, AgentBehavior::idm_lane_follow, 13.0));
    w.agents.push_back(lane_agent(3, 0.0, 5.0, AgentBehavior::idm_lane_follow, 13.0));

    double min_lead_distance = 1e9;
    for (int i = 0; i < 800; ++i) {
        step_world(w, {0, 0}, 0.1);
        const Capsule second = capsule_at(w.agents[1].state.position(), w.agents[1].state.theta,
                                          w.agents[1].spec.shape);
        const Capsule third = capsule_at(w.agents[2].state.position(), w.agents[2].state.theta,
                                         w.agents[2].spec.shape);
        const Capsule first = capsule_at(w.agents[0].state.position(), w.agents[0].state.theta,
                                         w.agents[0].spec.shape);
        min_lead_distance = std::min({min_lead_distance, capsule_distance(first, second),
                                      capsule_distance(second, third)});
    }
    // IDM agents never rear-end their leaders
    CHECK(min_lead_distance > 0.0);

    const IdmParams& p = w.agents[1].spec.idm;
    for (int follower : {1, 2}) {
        const double v = w.agents[std::size_t(follower)].state.v;
        CHECK(std::abs(v - 5.0) <= 0.05); // converged to the leader speed
        const double gap = (w.agents[std::size_t(follower - 1)].state.x -
                            w.agents[std::size_t(follower)].state.x) -
                           w.agents[std::size_t(follower)].spec.shape.axis_length;
        const double analytic = p.min_gap + v * p.time_headway;
        CHECK(std::abs(gap - analytic) <= 0.02 * analytic);
    }
}

TEST_CASE("detect_collision: margin-free capsule check") {
    World w = lane_world();
    w.ego = {0, 0, 0, 0, 0};
    w.agents.push_back(lane_agent(1, 10.0, 0.0, AgentBehavior::stopped));
    CHECK_FALSE(detect_collision(w).has_value());

    // overlapping
    w.agents[0].state.x = 3.0;
    const auto hit = detect_collision(w);
    REQUIRE(hit.has_value());
    CHECK(hit->first == 1);
    CHECK(hit->second > 0.0);

    // grazing contact at +0.01 m capsule distance: parallel lanes offset by
    // half widths + 0.01
    w.agents[0].state = {0.0, 2.01, 0, 0, 0};
    CHECK_FALSE(detect_collision(w).has_value());
}

TEST_CASE("composite_score: multiplier and weighted-sum structure") {
    ScoreParts collided;
    collided.collided = true;
    CHECK(composite_score(collided) == 0.0);

    ScoreParts perfect;
    CHECK(composite_score(perfect) == 1.0);

    ScoreParts mixed;
    mixed.ttc = 1.0;
    mixed.progress_ratio = 0.5;
    mixed.speed_compliance = 1.0;
    mixed.comfort = 1.0;
    CHECK(composite_score(mixed) == Catch::Approx(0.84375));

    ScoreParts out_of_corridor;
    out_of_corridor.corridor_compliant = false;
    CHECK(composite_score(out_of_corridor) == 0.0);

    ScoreParts stalled;
    stalled.progress_above_min = false;
    CHECK(composite_score(stalled) == Catch::Approx(0.5));
}

TEST_CASE("run_scenario: deterministic trace-identical reruns") {
    const Scenario sc = make_headon(3);
    PlannerConfig config;
    const SimResult a = run_scenario(sc, config);
    const SimResult b = run_scenario(sc, config);

    REQUIRE(a.traces.size() == b.traces.size());
    for (std::size_t i = 0; i < a.traces.size(); ++i) {
        REQUIRE(a.traces[i].ego.x == b.traces[i].ego.x);
        REQUIRE(a.traces[i].ego.y == b.traces[i].ego.y);
        REQUIRE(a.traces[i].ego.v == b.traces[i].ego.v);
        REQUIRE(a.traces[i].control.accel == b.traces[i].control.accel);
        REQUIRE(a.traces[i].control.delta_cmd == b.traces[i].control.delta_cmd);
    }
    CHECK(a.composite == b.composite);
    CHECK(a.min_h == b.min_h);
}

TEST_CASE("run_scenario: empty road cruises cleanly") {
    const Scenario sc = make_empty_road(1);
    PlannerConfig config;
    const SimResult r = run_scenario(sc, config);
    CHECK_FALSE(r.collided);
    CHECK(r.composite >= 0.9); // regression floor
    CHECK(r.progress > 80.0);
}

TEST_CASE("run_scenario: head-on blocker — unfiltered collides, full does not") {
    for (std::uint64_t seed : {0, 1, 2}) {
        const Scenario sc = make_headon(seed);

        PlannerConfig unfiltered;
        unfiltered.mode = PlannerMode::unfiltered;
        const SimResult base = run_scenario(sc, unfiltered);
        CHECK(base.collided); // by construction of the scenario

        PlannerConfig full;
        const SimResult safe = run_scenario(sc, full);
        CHECK_FALSE(safe.collided);
        CHECK(safe.min_h_critical >= -0.05);
        CHECK(safe.composite > base.composite);
    }
}

TEST_CASE("batteries: registered names, sizes and determinism") {
    CHECK(battery_names().size() == 5);
    for (const std::string& name : battery_names()) {
        const auto batch = make_battery(name, 30);
        REQUIRE(batch.size() == 30);
        for (const Scenario& sc : batch) {
            CHECK(sc.name == name);
            CHECK(sc.route.size() >= 2);
            CHECK(sc.duration > 0.0);
        }
        // distinct variants: seeds produce different starts
        CHECK((batch[0].ego_start.v != batch[1].ego_start.v ||
               batch[0].agents.size() != batch[1].agents.size() ||
               (batch[0].agents.size() > 0 && batch[1].agents.size() > 0 &&
                batch[0].agents[0].start.x != batch[1].agents[0].start.x)));
    }
    const auto again = make_battery("headon", 3);
    const auto once = make_battery("headon", 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(once[std::size_t(i)].ego_start.v == again[std::size_t(i)].ego_start.v);
    }
}

TEST_CASE("scenario JSON: round trip preserves the run") {
    const Scenario sc = make_crossing(7);
    const nlohmann::json j = to_json(sc);
    const Scenario back = scenario_from_json(j);
    CHECK(back.name == sc.name);
    CHECK(back.ego_start.v == sc.ego_start.v);
    REQUIRE(back.agents.size() == sc.agents.size());
    CHECK(back.agents[0].start.x == sc.agents[0].start.x);
    CHECK(back.route.size() == sc.route.size());

    PlannerConfig config;
    const SimResult a = run_scenario(sc, config);
    const SimResult b = run_scenario(back, config);
    CHECK(a.composite == b.composite);
    CHECK(a.collided == b.collided);

    nlohmann::json bad = j;
    bad["schema_version"] = 999;
    CHECK_THROWS_AS(scenario_from_json(bad), ScenarioError);
    nlohmann::json bad2 = j;
    bad2["agents"][0]["behavior"] = "teleport";
    CHECK_THROWS_AS(scenario_from_json(bad2), ScenarioError);
}

TEST_CASE("run_jobs: pool results keep deterministic order") {
    std::vector<RunJob> jobs;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        RunJob job;
        job.scenario = make_empty_road(seed);
        jobs.push_back(job);
    }
    const auto serial = run_jobs(jobs, 1);
    const auto pooled = run_jobs(jobs, 4);
    REQUIRE(serial.size() == pooled.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].composite == pooled[i].composite);
        CHECK(serial[i].progress == pooled[i].progress);
        CHECK(serial[i].seed == pooled[i].seed);
    }
}
