#pragma once

#include <algorithm>
#include <cmath>

namespace pcplan {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(const Vec2& a, const Vec2& b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }
inline Vec2 operator*(const Vec2& v, double s) { return {s * v.x, s * v.y}; }
inline Vec2 operator/(const Vec2& v, double s) { return {v.x / s, v.y / s}; }

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm_sq(const Vec2& v) { return dot(v, v); }
inline double norm(const Vec2& v) { return std::sqrt(norm_sq(v)); }

// Oriented line segment from the rear-end center p to the front-end center q.
// p == q is permitted and treated as a point.
struct Segment {
    Vec2 p;
    Vec2 q;

    Vec2 at(double s) const { return p + s * (q - p); }
};

// Stadium-shaped vehicle footprint: axis segment swept by half_width.
struct Capsule {
    Segment axis;
    double half_width = 1.0;
};

// Axes within this sine-of-angle tolerance are treated as parallel; the
// closest-point pair may then be non-unique and gradients degrade to
// subgradients at the reported pair.
inline constexpr double kParallelTol = 1e-9;

struct ClosestPair {
    double s = 0.0;               // parameter of the closest point on the first segment
    double r = 0.0;               // parameter of the closest point on the second segment
    double distance = 0.0;
    Vec2 direction;               // unit vector from the closest point on b toward the one on a
    bool direction_valid = false; // false when the segments touch or intersect
    bool parallel = false;        // minimizer may be non-unique
};

// Closed-form segment-segment distance (clamped quadratic minimization with
// region analysis). Total function; intersecting segments yield distance 0
// with direction_valid == false. When minimizers are non-unique (parallel
// overlapping axes) the pair with the smallest s, then smallest r, is
// returned.
inline ClosestPair segment_distance(const Segment& a, const Segment& b) {
    constexpr double kPointSq = 1e-30; // squared length below which a segment is a point

    const Vec2 d1 = a.q - a.p;
    const Vec2 d2 = b.q - b.p;
    const Vec2 r0 = a.p - b.p;
    const double len1_sq = dot(d1, d1);
    const double len2_sq = dot(d2, d2);
    const double f = dot(d2, r0);
    const double c = dot(d1, r0);

    double s = 0.0;
    double r = 0.0;
    if (len1_sq <= kPointSq && len2_sq <= kPointSq) {
        // point vs point
    } else if (len1_sq <= kPointSq) {
        r = std::clamp(f / len2_sq, 0.0, 1.0);
    } else if (len2_sq <= kPointSq) {
        s = std::clamp(-c / len1_sq, 0.0, 1.0);
    } else {
        const double b12 = dot(d1, d2);
        const double denom = len1_sq * len2_sq - b12 * b12;
        // denom == 0 iff parallel; seeding s = 0 then makes the clamp below
        // land on the minimizer with the lexicographically smallest (s, r).
        if (denom > 0.0) {
            s = std::clamp((b12 * f - c * len2_sq) / denom, 0.0, 1.0);
        }
        r = (b12 * s + f) / len2_sq;
        if (r < 0.0) {
            r = 0.0;
            s = std::clamp(-c / len1_sq, 0.0, 1.0);
        } else if (r > 1.0) {
            r = 1.0;
            s = std::clamp((b12 - c) / len1_sq, 0.0, 1.0);
        }
    }

    ClosestPair out;
    out.s = s;
    out.r = r;
    const Vec2 diff = a.at(s) - b.at(r);
    out.distance = norm(diff);
    if (out.distance > 1e-12) {
        out.direction = diff / out.distance;
        out.direction_valid = true;
    }
    out.parallel = len1_sq > kPointSq && len2_sq > kPointSq &&
                   std::abs(cross(d1, d2)) <= kParallelTol * std::sqrt(len1_sq * len2_sq);
    return out;
}

// Minimum segment distance minus both half widths. Negative values measure
// penetration depth.
inline double capsule_distance(const Capsule& a, const Capsule& b) {
    return segment_distance(a.axis, b.axis).distance - a.half_width - b.half_width;
}

// Gradient of the segment distance with respect to a rigid 2-D pose carrying
// the first segment. The segment is mounted on the pose along its heading at
// longitudinal offsets [offset_rear, offset_front] from the pose position:
// S1(s) = pos + (offset_rear + s (offset_front - offset_rear)) (cos h, sin h).
struct PoseGradient {
    double dx = 0.0;
    double dy = 0.0;
    double dheading = 0.0;
    bool non_unique = false; // parallel axes: value is a subgradient at the reported pair
    bool at_contact = false; // segments touch: gradient undefined, value is a fallback direction
};

// Danskin's theorem at the (unique) minimizing pair: the gradient of the
// parametric minimum equals the gradient of the distance to the fixed
// closest point on the other segment.
inline PoseGradient mounted_segment_gradient(const Vec2& position, double heading,
                                             double offset_rear, double offset_front,
                                             const Segment& other) {
    const double ch = std::cos(heading);
    const double sh = std::sin(heading);
    const Vec2 dir{ch, sh};
    const Segment mounted{position + offset_rear * dir, position + offset_front * dir};
    const ClosestPair pair = segment_distance(mounted, other);

    PoseGradient g;
    g.non_unique = pair.parallel;
    if (!pair.direction_valid) {
        // Contact: fall back to the center-to-center direction so consumers
        // still get a usable descent direction, and flag it.
        g.at_contact = true;
        const Vec2 other_center = 0.5 * (other.p + other.q);
        Vec2 n = position - other_center;
        const double n_len = norm(n);
        n = n_len > 0.0 ? n / n_len : Vec2{-ch, -sh};
        const double u = offset_rear + pair.s * (offset_front - offset_rear);
        g.dx = n.x;
        g.dy = n.y;
        g.dheading = u * (-n.x * sh + n.y * ch);
        return g;
    }

    const Vec2 n = pair.direction; // from the closest point on `other` toward ours
    const double u = offset_rear + pair.s * (offset_front - offset_rear);
    g.dx = n.x;
    g.dy = n.y;
    g.dheading = u * (-n.x * sh + n.y * ch);
    return g;
}

} // namespace pcplan
