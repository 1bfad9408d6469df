#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "pcplan/dynamics.hpp"
#include "pcplan/geometry.hpp"

using namespace pcplan;

namespace {

// Brute-force grid search over (s, r) in [0,1]^2; never undercuts the closed
// form, and overshoots by at most the Lipschitz bound of one grid cell.
double grid_segment_distance(const Segment& a, const Segment& b, int n) {
    std::vector<Vec2> pts_b(n + 1);
    for (int j = 0; j <= n; ++j) pts_b[j] = b.at(double(j) / n);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) {
        const Vec2 pa = a.at(double(i) / n);
        for (int j = 0; j <= n; ++j) {
            const double dx = pa.x - pts_b[j].x;
            const double dy = pa.y - pts_b[j].y;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best) best = d2;
        }
    }
    return std::sqrt(best);
}

Segment random_segment(std::mt19937_64& rng, double lo = -10.0, double hi = 10.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    return {{u(rng), u(rng)}, {u(rng), u(rng)}};
}

// Points covering the stadium boundary of a capsule: both flat sides plus
// full circles at the endpoints. The inner half of each circle lies inside
// the capsule, which never undercuts the boundary minimum between two
// separated convex bodies.
std::vector<Vec2> capsule_boundary(const Capsule& c, int n) {
    std::vector<Vec2> pts;
    pts.reserve(6 * n);
    const Vec2 axis = c.axis.q - c.axis.p;
    const double len = norm(axis);
    const Vec2 dir = len > 0 ? axis / len : Vec2{1.0, 0.0};
    const Vec2 nrm{-dir.y, dir.x};
    for (int i = 0; i <= n; ++i) {
        const double t = double(i) / n;
        pts.push_back(c.axis.at(t) + c.half_width * nrm);
        pts.push_back(c.axis.at(t) - c.half_width * nrm);
    }
    for (int i = 0; i < 2 * n; ++i) {
        const double ang = M_PI * double(i) / n;
        const Vec2 offset = c.half_width * Vec2{std::cos(ang), std::sin(ang)};
        pts.push_back(c.axis.q + offset);
        pts.push_back(c.axis.p + offset);
    }
    return pts;
}

double sampled_capsule_distance(const Capsule& a, const Capsule& b, int n) {
    const auto pa = capsule_boundary(a, n);
    const auto pb = capsule_boundary(b, n);
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& x : pa)
        for (const Vec2& y : pb) best = std::min(best, norm_sq(x - y));
    return std::sqrt(best);
}

double mounted_distance(const Vec2& pos, double heading, double rear, double front,
                        const Segment& other) {
    const Vec2 dir{std::cos(heading), std::sin(heading)};
    return segment_distance({pos + rear * dir, pos + front * dir}, other).distance;
}

} // namespace

TEST_CASE("segment_distance: parallel segments at constant offset") {
    const Segment a{{0, 0}, {4, 0}};
    const Segment b{{0, 3}, {4, 3}};
    const ClosestPair cp = segment_distance(a, b);
    CHECK(cp.distance == Catch::Approx(3.0));
    CHECK(cp.parallel);
    CHECK(cp.direction_valid);
    CHECK(cp.direction.x == Catch::Approx(0.0).margin(1e-15));
    CHECK(std::abs(cp.direction.y) == Catch::Approx(1.0));
    // direction points from b toward a
    CHECK(cp.direction.y == Catch::Approx(-1.0));
}

TEST_CASE("segment_distance: endpoint-endpoint case") {
    const ClosestPair cp = segment_distance({{0, 0}, {2, 0}}, {{3, 1}, {5, 1}});
    CHECK(cp.s == Catch::Approx(1.0));
    CHECK(cp.r == Catch::Approx(0.0));
    CHECK(cp.distance == Catch::Approx(std::sqrt(2.0)));
}

TEST_CASE("segment_distance: intersecting segments flagged at zero") {
    const ClosestPair cp = segment_distance({{-1, 0}, {1, 0}}, {{0, -1}, {0, 1}});
    CHECK(cp.distance == Catch::Approx(0.0).margin(1e-12));
    CHECK_FALSE(cp.direction_valid);
}

TEST_CASE("segment_distance: degenerate segments are points") {
    const ClosestPair cp = segment_distance({{1, 1}, {1, 1}}, {{4, 5}, {4, 5}});
    CHECK(cp.distance == Catch::Approx(5.0));
    const ClosestPair cp2 = segment_distance({{1, 0}, {1, 0}}, {{0, 2}, {2, 2}});
    CHECK(cp2.distance == Catch::Approx(2.0));
    CHECK(cp2.r == Catch::Approx(0.5));
}

TEST_CASE("segment_distance matches a 2001x2001 grid search") {
    std::mt19937_64 rng(20240901);
    const int n = 2000;
    for (int trial = 0; trial < 100; ++trial) {
        const Segment a = random_segment(rng);
        const Segment b = random_segment(rng);
        const double closed = segment_distance(a, b).distance;
        const double grid = grid_segment_distance(a, b, n);
        const double cell = std::hypot(norm(a.q - a.p) / n, norm(b.q - b.p) / n);
        REQUIRE(grid >= closed - 1e-12); // grid never undercuts the closed form
        REQUIRE(grid - closed <= 2.0 * cell);
    }
}

TEST_CASE("segment_distance symmetry, translation and rotation invariance") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::uniform_real_distribution<double> ang(-M_PI, M_PI);
    for (int trial = 0; trial < 300; ++trial) {
        const Segment a = random_segment(rng);
        const Segment b = random_segment(rng);
        const double d = segment_distance(a, b).distance;

        CHECK(std::abs(segment_distance(b, a).distance - d) <= 1e-12);

        const Vec2 t{u(rng), u(rng)};
        const Segment at{a.p + t, a.q + t};
        const Segment bt{b.p + t, b.q + t};
        CHECK(std::abs(segment_distance(at, bt).distance - d) <= 1e-12);

        const double phi = ang(rng);
        const Vec2 pivot{u(rng), u(rng)};
        const auto rot = [&](const Vec2& p) {
            const Vec2 q = p - pivot;
            return pivot + Vec2{q.x * std::cos(phi) - q.y * std::sin(phi),
                                q.x * std::sin(phi) + q.y * std::cos(phi)};
        };
        const Segment ar{rot(a.p), rot(a.q)};
        const Segment br{rot(b.p), rot(b.q)};
        CHECK(std::abs(segment_distance(ar, br).distance - d) <= 1e-9);
    }
}

TEST_CASE("capsule_distance arithmetic") {
    const Capsule a{{{0, 0}, {4, 0}}, 1.0};
    const Capsule b{{{0, 3}, {4, 3}}, 0.9};
    CHECK(capsule_distance(a, b) == Catch::Approx(1.1));

    const Capsule c{{{0, 0}, {4, 0}}, 1.0};
    const Capsule d{{{0, 0}, {4, 0}}, 1.0};
    CHECK(capsule_distance(c, d) == Catch::Approx(-2.0));
}

TEST_CASE("capsule_distance matches boundary-sampling oracle") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> w(0.4, 1.4);
    int checked = 0;
    while (checked < 12) {
        const Capsule a{random_segment(rng, -8.0, 8.0), w(rng)};
        const Capsule b{random_segment(rng, -8.0, 8.0), w(rng)};
        const double d = capsule_distance(a, b);
        if (d < 0.2) continue; // the boundary oracle only measures separated bodies
        const double sampled = sampled_capsule_distance(a, b, 1500);
        CHECK(std::abs(sampled - d) <= 0.05);
        ++checked;
    }
}

TEST_CASE("distance_gradient: axis-aligned separation") {
    EgoState ego; // origin, heading 0
    const VehicleShape shape;
    // other capsule directly ahead on the x axis, closest pair front-to-rear
    const Capsule other = capsule_at({20.0, 0.0}, 0.0, shape);
    const StateGradient g = distance_gradient(ego, shape, other);
    CHECK(g.d[0] == Catch::Approx(-1.0));
    CHECK(g.d[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(g.d[3] == 0.0);
    CHECK(g.d[4] == 0.0);
}

TEST_CASE("distance_gradient: steering and speed components are always zero") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::uniform_real_distribution<double> ang(-M_PI, M_PI);
    const VehicleShape shape;
    for (int trial = 0; trial < 50; ++trial) {
        EgoState ego{u(rng), u(rng), ang(rng), 0.1, 5.0};
        const Capsule other{random_segment(rng), 1.0};
        const StateGradient g = distance_gradient(ego, shape, other);
        CHECK(g.d[3] == 0.0);
        CHECK(g.d[4] == 0.0);
    }
}

TEST_CASE("distance_gradient matches central finite differences") {
    std::mt19937_64 rng(31415);
    std::uniform_real_distribution<double> u(-10.0, 10.0);
    std::uniform_real_distribution<double> ang(-M_PI, M_PI);
    const VehicleShape shape;
    const double h = 1e-5;

    int checked = 0;
    while (checked < 200) {
        EgoState ego{u(rng), u(rng), ang(rng), 0.0, 0.0};
        const Capsule other{random_segment(rng), 1.0};

        const Capsule mine = ego_capsule(ego, shape);
        const ClosestPair cp = segment_distance(mine.axis, other.axis);
        if (cp.parallel || cp.distance < 0.1) continue;

        const StateGradient g = distance_gradient(ego, shape, other);
        REQUIRE_FALSE(g.non_unique);
        REQUIRE_FALSE(g.at_contact);

        const double rear = shape.rear_offset();
        const double front = shape.front_offset();
        const double fd_x = (mounted_distance({ego.x + h, ego.y}, ego.theta, rear, front, other.axis) -
                             mounted_distance({ego.x - h, ego.y}, ego.theta, rear, front, other.axis)) /
                            (2 * h);
        const double fd_y = (mounted_distance({ego.x, ego.y + h}, ego.theta, rear, front, other.axis) -
                             mounted_distance({ego.x, ego.y - h}, ego.theta, rear, front, other.axis)) /
                            (2 * h);
        const double fd_t = (mounted_distance(ego.position(), ego.theta + h, rear, front, other.axis) -
                             mounted_distance(ego.position(), ego.theta - h, rear, front, other.axis)) /
                            (2 * h);

        const double err = std::sqrt((fd_x - g.d[0]) * (fd_x - g.d[0]) +
                                     (fd_y - g.d[1]) * (fd_y - g.d[1]) +
                                     (fd_t - g.d[2]) * (fd_t - g.d[2]));
        const double scale = std::sqrt(g.d[0] * g.d[0] + g.d[1] * g.d[1] + g.d[2] * g.d[2]);
        REQUIRE(err / scale <= 1e-4);
        ++checked;
    }
}

TEST_CASE("distance_gradient flags degenerate configurations") {
    EgoState ego;
    const VehicleShape shape;

    // parallel axes
    const Capsule parallel_other = capsule_at({0.0, 5.0}, 0.0, shape);
    CHECK(distance_gradient(ego, shape, parallel_other).non_unique);

    // contact: overlapping axes
    const Capsule touching = capsule_at({1.0, 0.0}, M_PI / 2.0, shape);
    const StateGradient g = distance_gradient(ego, shape, touching);
    CHECK(g.at_contact);
    // fallback still provides a usable direction
    CHECK(std::hypot(g.d[0], g.d[1]) == Catch::Approx(1.0));
}
