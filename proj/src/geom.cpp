#include "streetbase/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#define BOOST_GEOMETRY_NO_ROBUSTNESS
#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>

#include "streetbase/errors.hpp"

namespace streetbase::geom {

namespace {

namespace bg = boost::geometry;
using BPoint = bg::model::d2::point_xy<double>;
using BPolygon = bg::model::polygon<BPoint>;
using BMulti = bg::model::multi_polygon<BPolygon>;

constexpr double kParallelEps = 1e-12;

Error invalid(const std::string& what) { return Error(ErrorCode::InvalidGeometry, what); }

Point lerp(const Point& a, const Point& b, double t) {
    return {(1.0 - t) * a.x + t * b.x, (1.0 - t) * a.y + t * b.y, {}};
}

Point segment_direction(const Polyline& line, std::size_t i) {
    return normalized(line.vertices[i + 1] - line.vertices[i]);
}

void check_ring(const Ring& ring) {
    if (ring.size() < 4) {
        throw invalid("polygon ring needs at least 4 points");
    }
    for (const Point& p : ring) {
        if (!is_finite(p)) {
            throw invalid("polygon ring has a non-finite coordinate");
        }
    }
    if (ring.front().x != ring.back().x || ring.front().y != ring.back().y) {
        throw invalid("polygon ring is not closed");
    }
    if (std::abs(signed_ring_area(ring)) <= 0.0) {
        throw invalid("polygon ring has zero area");
    }
}

BPolygon to_boost(const Polygon& polygon) {
    check_ring(polygon.exterior);
    BPolygon out;
    for (const Point& p : polygon.exterior) {
        out.outer().emplace_back(p.x, p.y);
    }
    for (const Ring& hole : polygon.holes) {
        check_ring(hole);
        out.inners().emplace_back();
        for (const Point& p : hole) {
            out.inners().back().emplace_back(p.x, p.y);
        }
    }
    bg::correct(out);
    return out;
}

Polygon from_boost(const BPolygon& polygon) {
    Polygon out;
    for (const BPoint& p : polygon.outer()) {
        out.exterior.push_back({p.x(), p.y(), {}});
    }
    for (const auto& inner : polygon.inners()) {
        Ring hole;
        for (const BPoint& p : inner) {
            hole.push_back({p.x(), p.y(), {}});
        }
        out.holes.push_back(std::move(hole));
    }
    return out;
}

bool point_in_ring(const Ring& ring, const Point& p) {
    bool inside = false;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const Point& a = ring[i];
        const Point& b = ring[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x) {
                inside = !inside;
            }
        }
    }
    return inside;
}

double ring_boundary_distance(const Ring& ring, const Point& p) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        best = std::min(best, distance_to_segment(p, ring[i], ring[i + 1]));
    }
    return best;
}

} // namespace

double norm(const Point& v) { return std::hypot(v.x, v.y); }

Point normalized(const Point& v) {
    const double n = norm(v);
    if (n == 0.0) {
        throw invalid("cannot normalize a zero vector");
    }
    return {v.x / n, v.y / n, {}};
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point from_angle(double radians) { return {std::cos(radians), std::sin(radians), {}}; }

double angle_of(const Point& v) { return std::atan2(v.y, v.x); }

double wrap_two_pi(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a < 0.0) {
        a += 2.0 * kPi;
    }
    if (a >= 2.0 * kPi) {
        a -= 2.0 * kPi;
    }
    return a;
}

bool is_finite(const Point& p) {
    return std::isfinite(p.x) && std::isfinite(p.y) && (!p.z || std::isfinite(*p.z));
}

void validate(const Polyline& line) {
    if (line.vertices.size() < 2) {
        throw invalid("polyline needs at least 2 vertices");
    }
    for (std::size_t i = 0; i < line.vertices.size(); ++i) {
        if (!is_finite(line.vertices[i])) {
            throw invalid("polyline has a non-finite coordinate");
        }
        if (i > 0 && distance(line.vertices[i], line.vertices[i - 1]) == 0.0) {
            throw invalid("polyline has repeated consecutive vertices");
        }
    }
}

void validate(const Polygon& polygon) {
    const BPolygon b = to_boost(polygon);
    std::string reason;
    if (!bg::is_valid(b, reason)) {
        throw invalid("invalid polygon: " + reason);
    }
}

double length(const Polyline& line) {
    double total = 0.0;
    for (std::size_t i = 1; i < line.vertices.size(); ++i) {
        total += distance(line.vertices[i - 1], line.vertices[i]);
    }
    return total;
}

std::vector<double> cumulative_lengths(const Polyline& line) {
    std::vector<double> cum(line.vertices.size(), 0.0);
    for (std::size_t i = 1; i < line.vertices.size(); ++i) {
        cum[i] = cum[i - 1] + distance(line.vertices[i - 1], line.vertices[i]);
    }
    return cum;
}

Polyline reversed(Polyline line) {
    std::reverse(line.vertices.begin(), line.vertices.end());
    return line;
}

double distance_to_segment(const Point& p, const Point& a, const Point& b) {
    const Point ab = b - a;
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, lerp(a, b, t));
}

double distance_to_polyline(const Point& p, const Polyline& line) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < line.vertices.size(); ++i) {
        best = std::min(best, distance_to_segment(p, line.vertices[i], line.vertices[i + 1]));
    }
    return best;
}

Projection project_to_polyline(const Point& p, const Polyline& line) {
    if (line.vertices.size() < 2 || length(line) <= 0.0) {
        throw invalid("cannot project onto a degenerate polyline");
    }
    const auto cum = cumulative_lengths(line);
    const std::size_t segments = line.vertices.size() - 1;

    double best = std::numeric_limits<double>::infinity();
    Projection result;
    double best_t = 0.0;
    Point best_q;
    for (std::size_t i = 0; i < segments; ++i) {
        const Point& a = line.vertices[i];
        const Point& b = line.vertices[i + 1];
        const Point ab = b - a;
        const double len2 = dot(ab, ab);
        if (len2 == 0.0) {
            continue;
        }
        const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
        const Point q = lerp(a, b, t);
        const double dist2 = dot(p - q, p - q);
        if (dist2 < best) {
            best = dist2;
            best_t = t;
            best_q = q;
            result.segment = i;
            result.s = cum[i] + t * (cum[i + 1] - cum[i]);
        }
    }

    Point tangent = segment_direction(line, result.segment);
    if (best_t == 1.0 && result.segment + 1 < segments) {
        const Point sum = tangent + segment_direction(line, result.segment + 1);
        if (norm(sum) > kParallelEps) {
            tangent = normalized(sum);
        }
        result.s = cum[result.segment + 1];
    }
    result.d = cross(tangent, p - best_q);
    return result;
}

Station point_at(const Polyline& line, double s, double d) {
    validate(line);
    const auto cum = cumulative_lengths(line);
    const double total = cum.back();
    const double tol = 1e-9 * std::max(1.0, total);
    if (!std::isfinite(s) || s < -tol || s > total + tol) {
        throw Error(ErrorCode::OutOfRange, "abscissa outside [0, length]");
    }
    s = std::clamp(s, 0.0, total);

    const std::size_t segments = line.vertices.size() - 1;
    std::size_t i = static_cast<std::size_t>(
        std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
    i = i == 0 ? 0 : i - 1;
    i = std::min(i, segments - 1);

    Point base;
    Point tangent;
    if (s == cum[i] && i > 0) {
        base = line.vertices[i];
        base.z.reset();
        const Point sum = segment_direction(line, i - 1) + segment_direction(line, i);
        tangent = norm(sum) > kParallelEps ? normalized(sum) : segment_direction(line, i);
    } else {
        const double seg_len = cum[i + 1] - cum[i];
        const double t = seg_len > 0.0 ? (s - cum[i]) / seg_len : 0.0;
        base = lerp(line.vertices[i], line.vertices[i + 1], t);
        tangent = segment_direction(line, i);
    }
    Station out;
    out.point = d == 0.0 ? base : base + left_normal(tangent) * d;
    out.tangent = angle_of(tangent);
    return out;
}

Polyline sub_polyline(const Polyline& line, double s0, double s1) {
    if (!(s0 < s1)) {
        throw Error(ErrorCode::OutOfRange, "sub-polyline needs s0 < s1");
    }
    const auto cum = cumulative_lengths(line);
    Polyline out;
    auto push = [&](Point p) {
        p.z.reset();
        if (out.vertices.empty() || distance(out.vertices.back(), p) > 1e-12) {
            out.vertices.push_back(p);
        }
    };
    auto position = [&](double s) {
        s = std::clamp(s, 0.0, cum.back());
        std::size_t i = static_cast<std::size_t>(
            std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
        i = i == 0 ? 0 : i - 1;
        i = std::min(i, line.vertices.size() - 2);
        const double seg_len = cum[i + 1] - cum[i];
        return lerp(line.vertices[i], line.vertices[i + 1],
                    seg_len > 0.0 ? (s - cum[i]) / seg_len : 0.0);
    };
    push(position(s0));
    for (std::size_t i = 0; i < line.vertices.size(); ++i) {
        if (cum[i] > s0 && cum[i] < s1) {
            push(line.vertices[i]);
        }
    }
    push(position(s1));
    if (out.vertices.size() < 2) {
        throw Error(ErrorCode::OutOfRange, "sub-polyline collapsed to a point");
    }
    return out;
}

Polyline offset_polyline(const Polyline& line, double d) {
    validate(line);
    if (d == 0.0) {
        return line;
    }
    const std::size_t n = line.vertices.size();
    std::vector<Point> dirs;
    dirs.reserve(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        dirs.push_back(segment_direction(line, i));
    }

    auto shifted = [&](std::size_t vertex, std::size_t seg) {
        Point p = line.vertices[vertex];
        p.z.reset();
        return p + left_normal(dirs[seg]) * d;
    };

    Polyline out;
    // Index range in `out` realising each source segment.
    std::vector<std::size_t> seg_begin(n - 1);
    std::vector<std::size_t> seg_end(n - 1);
    out.vertices.push_back(shifted(0, 0));
    seg_begin[0] = 0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const Point& da = dirs[i - 1];
        const Point& db = dirs[i];
        const double turn = cross(da, db);
        const Point qa = shifted(i, i - 1);
        const Point pb = shifted(i, i);
        if (std::abs(turn) < kParallelEps && dot(da, db) > 0.0) {
            out.vertices.push_back(qa);
            seg_end[i - 1] = out.vertices.size() - 1;
            seg_begin[i] = out.vertices.size() - 1;
            continue;
        }
        const bool inner = turn * d > 0.0;
        std::optional<Point> miter;
        if (std::abs(turn) >= kParallelEps) {
            miter = line_intersection(qa, da, pb, db);
        }
        if (miter && (inner || distance(*miter, line.vertices[i]) <= kMiterLimit * std::abs(d))) {
            out.vertices.push_back(*miter);
            seg_end[i - 1] = out.vertices.size() - 1;
            seg_begin[i] = out.vertices.size() - 1;
        } else {
            out.vertices.push_back(qa);
            seg_end[i - 1] = out.vertices.size() - 1;
            out.vertices.push_back(pb);
            seg_begin[i] = out.vertices.size() - 1;
        }
    }
    out.vertices.push_back(shifted(n - 1, n - 2));
    seg_end[n - 2] = out.vertices.size() - 1;

    for (std::size_t k = 0; k + 1 < n; ++k) {
        const Point span = out.vertices[seg_end[k]] - out.vertices[seg_begin[k]];
        const double along = dot(span, dirs[k]);
        if (!(along > 1e-12 * std::max(1.0, std::abs(d)))) {
            throw Error(ErrorCode::OffsetDegenerate,
                        "offset collapses segment " + std::to_string(k) + " of the polyline");
        }
    }
    return out;
}

std::optional<Point> segment_intersection(const Point& a0, const Point& a1, const Point& b0,
                                          const Point& b1) {
    const Point r = a1 - a0;
    const Point s = b1 - b0;
    const double denom = cross(r, s);
    const Point qp = b0 - a0;
    const double scale = norm(r) * norm(s);
    if (std::abs(denom) <= kParallelEps * scale) {
        if (std::abs(cross(qp, r)) > kParallelEps * std::max(1.0, norm(r) * norm(qp))) {
            return std::nullopt;
        }
        const double rr = dot(r, r);
        if (rr == 0.0) {
            return std::nullopt;
        }
        const double t0 = dot(b0 - a0, r) / rr;
        const double t1 = dot(b1 - a0, r) / rr;
        const double lo = std::max(0.0, std::min(t0, t1));
        const double hi = std::min(1.0, std::max(t0, t1));
        if (lo > hi) {
            return std::nullopt;
        }
        return lerp(a0, a1, lo);
    }
    const double t = cross(qp, s) / denom;
    const double u = cross(qp, r) / denom;
    constexpr double eps = 1e-12;
    if (t < -eps || t > 1.0 + eps || u < -eps || u > 1.0 + eps) {
        return std::nullopt;
    }
    return lerp(a0, a1, std::clamp(t, 0.0, 1.0));
}

std::optional<Point> line_intersection(const Point& p, const Point& dir_p, const Point& q,
                                       const Point& dir_q) {
    const double denom = cross(dir_p, dir_q);
    if (std::abs(denom) <= kParallelEps * norm(dir_p) * norm(dir_q)) {
        return std::nullopt;
    }
    const double t = cross(q - p, dir_q) / denom;
    return p + dir_p * t;
}

std::optional<Corner> find_corner(const Polyline& border_a, const Polyline& border_b) {
    const auto cum_a = cumulative_lengths(border_a);
    const auto cum_b = cumulative_lengths(border_b);
    for (std::size_t i = 0; i + 1 < border_a.vertices.size(); ++i) {
        const Point& a0 = border_a.vertices[i];
        const Point& a1 = border_a.vertices[i + 1];
        std::optional<Corner> best;
        for (std::size_t j = 0; j + 1 < border_b.vertices.size(); ++j) {
            const Point& b0 = border_b.vertices[j];
            const Point& b1 = border_b.vertices[j + 1];
            const auto hit = segment_intersection(a0, a1, b0, b1);
            if (!hit) {
                continue;
            }
            Corner c;
            c.point = *hit;
            c.s_a = cum_a[i] + distance(a0, *hit);
            c.s_b = cum_b[j] + distance(b0, *hit);
            c.dir_a = normalized(a1 - a0);
            c.dir_b = normalized(b1 - b0);
            if (!best || c.s_a < best->s_a) {
                best = c;
            }
        }
        if (best) {
            best->opening = std::acos(std::clamp(dot(best->dir_a, best->dir_b), -1.0, 1.0));
            return best;
        }
    }
    // Borders that start past their meeting point: extend the first segments
    // backwards.
    const Point da = normalized(border_a.vertices[1] - border_a.vertices[0]);
    const Point db = normalized(border_b.vertices[1] - border_b.vertices[0]);
    const auto hit = line_intersection(border_a.vertices[0], da, border_b.vertices[0], db);
    if (!hit) {
        return std::nullopt;
    }
    Corner c;
    c.point = *hit;
    c.s_a = dot(*hit - border_a.vertices[0], da);
    c.s_b = dot(*hit - border_b.vertices[0], db);
    if (c.s_a > 0.0 || c.s_b > 0.0) {
        return std::nullopt;
    }
    c.dir_a = da;
    c.dir_b = db;
    c.opening = std::acos(std::clamp(dot(da, db), -1.0, 1.0));
    return c;
}

Fillet fillet_corner(const Polyline& border_a, const Polyline& border_b, double r) {
    validate(border_a);
    validate(border_b);
    if (!(r > 0.0) || !std::isfinite(r)) {
        throw invalid("fillet radius must be positive");
    }
    const auto corner = find_corner(border_a, border_b);
    if (!corner) {
        throw invalid("borders do not meet");
    }
    const double theta = corner->opening;
    if (theta < 1e-9 || theta > kPi - 1e-9) {
        throw invalid("borders are parallel");
    }
    const double tangent_dist = r / std::tan(theta / 2.0);
    const double s_ta = corner->s_a + tangent_dist;
    const double s_tb = corner->s_b + tangent_dist;
    const double slack = 1e-12 * std::max(1.0, tangent_dist);
    if (s_ta > length(border_a) + slack || s_tb > length(border_b) + slack || s_ta < -slack ||
        s_tb < -slack) {
        throw Error(ErrorCode::FilletTooLarge, "fillet radius does not fit between the borders");
    }

    Fillet f;
    const Point bisector = normalized(corner->dir_a + corner->dir_b);
    f.center = corner->point + bisector * (r / std::sin(theta / 2.0));
    f.tangent_a = corner->point + corner->dir_a * tangent_dist;
    f.tangent_b = corner->point + corner->dir_b * tangent_dist;
    f.arc.center = f.center;
    f.arc.radius = r;
    f.arc.start_angle = angle_of(f.tangent_a - f.center);
    const double turn = cross(f.tangent_a - f.center, f.tangent_b - f.center);
    f.arc.end_angle = f.arc.start_angle + (turn >= 0.0 ? 1.0 : -1.0) * (kPi - theta);
    return f;
}

double max_fillet_radius(const Polyline& border_a, const Polyline& border_b) {
    const auto corner = find_corner(border_a, border_b);
    if (!corner || corner->opening < 1e-9 || corner->opening > kPi - 1e-9) {
        return 0.0;
    }
    const double room =
        std::min(length(border_a) - corner->s_a, length(border_b) - corner->s_b);
    return std::max(0.0, room) * std::tan(corner->opening / 2.0);
}

std::vector<Point> discretize_arc(const Arc& arc, double max_step) {
    const double sweep = arc.sweep();
    const int n = std::max(1, static_cast<int>(std::ceil(std::abs(sweep) / max_step - 1e-9)));
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        const double a = arc.start_angle + sweep * static_cast<double>(k) / n;
        out.push_back(arc.center + from_angle(a) * arc.radius);
    }
    return out;
}

Point bezier_eval(std::span<const Point> controls, double t) {
    if (controls.size() < 2 || controls.size() > 4) {
        throw invalid("bezier curves take 2 to 4 control points");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw Error(ErrorCode::OutOfRange, "bezier parameter outside [0, 1]");
    }
    std::vector<Point> work(controls.begin(), controls.end());
    for (std::size_t level = work.size() - 1; level > 0; --level) {
        for (std::size_t i = 0; i < level; ++i) {
            work[i] = lerp(work[i], work[i + 1], t);
        }
    }
    return work.front();
}

std::vector<Point> discretize_bezier(std::span<const Point> controls, int segments) {
    std::vector<Point> out;
    out.reserve(static_cast<std::size_t>(segments) + 1);
    for (int k = 0; k <= segments; ++k) {
        out.push_back(bezier_eval(controls, static_cast<double>(k) / segments));
    }
    return out;
}

double signed_ring_area(const Ring& ring) {
    double twice = 0.0;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
        twice += cross(ring[i], ring[i + 1]);
    }
    return twice / 2.0;
}

double area(const Polygon& polygon) {
    double a = std::abs(signed_ring_area(polygon.exterior));
    for (const Ring& hole : polygon.holes) {
        a -= std::abs(signed_ring_area(hole));
    }
    return a;
}

Point centroid(const Polygon& polygon) {
    double cx = 0.0;
    double cy = 0.0;
    double total = 0.0;
    auto accumulate = [&](const Ring& ring, double sign) {
        const double ring_sign = signed_ring_area(ring) >= 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
            const double c = cross(ring[i], ring[i + 1]) * ring_sign * sign;
            cx += (ring[i].x + ring[i + 1].x) * c;
            cy += (ring[i].y + ring[i + 1].y) * c;
            total += c;
        }
    };
    accumulate(polygon.exterior, 1.0);
    for (const Ring& hole : polygon.holes) {
        accumulate(hole, -1.0);
    }
    if (total == 0.0) {
        throw invalid("centroid of a zero-area polygon");
    }
    return {cx / (3.0 * total), cy / (3.0 * total), {}};
}

BBox bbox(std::span<const Point> points) {
    BBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const Point& p : points) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    }
    return b;
}

BBox bbox(const Polygon& polygon) { return bbox(polygon.exterior); }

Polygon rectangle(const BBox& box) {
    return Polygon{{{box.min_x, box.min_y, {}},
                    {box.max_x, box.min_y, {}},
                    {box.max_x, box.max_y, {}},
                    {box.min_x, box.max_y, {}},
                    {box.min_x, box.min_y, {}}},
                   {}};
}

Ring close_ring(std::vector<Point> points) {
    if (!points.empty() && (points.front().x != points.back().x ||
                            points.front().y != points.back().y)) {
        points.push_back(points.front());
    }
    return points;
}

double distance_to_boundary(const Polygon& polygon, const Point& p) {
    double best = ring_boundary_distance(polygon.exterior, p);
    for (const Ring& hole : polygon.holes) {
        best = std::min(best, ring_boundary_distance(hole, p));
    }
    return best;
}

bool contains(const Polygon& polygon, const Point& p, double tolerance) {
    if (polygon.exterior.size() < 4) {
        return false;
    }
    if (distance_to_boundary(polygon, p) <= tolerance) {
        return true;
    }
    if (!point_in_ring(polygon.exterior, p)) {
        return false;
    }
    for (const Ring& hole : polygon.holes) {
        if (point_in_ring(hole, p)) {
            return false;
        }
    }
    return true;
}

double distance_to_polygon(const Polygon& polygon, const Point& p) {
    return contains(polygon, p, 0.0) ? 0.0 : distance_to_boundary(polygon, p);
}

std::vector<Polygon> polygon_intersection(const Polygon& a, const Polygon& b) {
    const BPolygon ba = to_boost(a);
    const BPolygon bb = to_boost(b);
    BMulti out;
    try {
        bg::intersection(ba, bb, out);
    } catch (const bg::exception& e) {
        throw invalid(std::string("polygon overlay failed: ") + e.what());
    }
    std::vector<Polygon> result;
    for (const BPolygon& p : out) {
        result.push_back(from_boost(p));
    }
    return result;
}

double polygon_intersection_area(const Polygon& a, const Polygon& b) {
    if (!bbox(a).intersects(bbox(b))) {
        check_ring(a.exterior);
        check_ring(b.exterior);
        return 0.0;
    }
    const BPolygon ba = to_boost(a);
    const BPolygon bb = to_boost(b);
    BMulti out;
    try {
        bg::intersection(ba, bb, out);
    } catch (const bg::exception& e) {
        throw invalid(std::string("polygon overlay failed: ") + e.what());
    }
    return std::max(0.0, static_cast<double>(bg::area(out)));
}

bool polygons_overlap(const Polygon& a, const Polygon& b) {
    return polygon_intersection_area(a, b) > 1e-9;
}

double weighted_orientation_mean(std::span<const double> angles, std::span<const double> weights) {
    if (angles.size() != weights.size()) {
        throw Error(ErrorCode::OutOfRange, "one weight per angle is required");
    }
    double s = 0.0;
    double c = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i) {
        if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
            throw Error(ErrorCode::OutOfRange, "vote weights must be finite and non-negative");
        }
        s += weights[i] * std::sin(2.0 * angles[i]);
        c += weights[i] * std::cos(2.0 * angles[i]);
        total += weights[i];
    }
    if (!(total > 0.0)) {
        throw Error(ErrorCode::EmptyVote, "orientation vote has no positive weight");
    }
    double mean = std::atan2(s, c) / 2.0;
    if (mean < 0.0) {
        mean += kPi;
    }
    if (mean >= kPi - 1e-12) {
        mean = 0.0;
    }
    return mean;
}

double orientation_distance(double a, double b) {
    double diff = std::fmod(std::abs(a - b), kPi);
    return std::min(diff, kPi - diff);
}

} // namespace streetbase::geom
