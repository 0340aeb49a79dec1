#pragma once

// Planar geometry kernel. Coordinates are projected Cartesian metres; z is
// carried along but never used by planar predicates. Signed offsets are
// positive on the left of the travel direction everywhere.

#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace streetbase::geom {

struct Point {
    double x = 0.0;
    double y = 0.0;
    std::optional<double> z;

    friend bool operator==(const Point&, const Point&) = default;
};

struct Polyline {
    std::vector<Point> vertices;

    friend bool operator==(const Polyline&, const Polyline&) = default;
};

// Closed ring: first vertex repeated as last.
using Ring = std::vector<Point>;

struct Polygon {
    Ring exterior;
    std::vector<Ring> holes;

    friend bool operator==(const Polygon&, const Polygon&) = default;
};

// Circular arc traversed from start_angle to end_angle. The sweep
// (end - start) is signed: positive is counter-clockwise. |sweep| in (0, 2pi).
struct Arc {
    Point center;
    double radius = 0.0;
    double start_angle = 0.0;
    double end_angle = 0.0;

    double sweep() const { return end_angle - start_angle; }
};

struct BBox {
    double min_x = 0.0;
    double min_y = 0.0;
    double max_x = 0.0;
    double max_y = 0.0;

    bool intersects(const BBox& other) const {
        return min_x <= other.max_x && other.min_x <= max_x && min_y <= other.max_y &&
               other.min_y <= max_y;
    }
    bool contains(const Point& p) const {
        return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y;
    }
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kMiterLimit = 4.0;
inline constexpr double kMaxArcStep = kPi / 18.0; // 10 degrees

// --- small vector helpers -------------------------------------------------

inline Point operator+(const Point& a, const Point& b) { return {a.x + b.x, a.y + b.y, {}}; }
inline Point operator-(const Point& a, const Point& b) { return {a.x - b.x, a.y - b.y, {}}; }
inline Point operator*(const Point& a, double k) { return {a.x * k, a.y * k, {}}; }
inline Point operator*(double k, const Point& a) { return a * k; }
inline double dot(const Point& a, const Point& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Point& a, const Point& b) { return a.x * b.y - a.y * b.x; }
double norm(const Point& v);
Point normalized(const Point& v);
inline Point left_normal(const Point& unit) { return {-unit.y, unit.x, {}}; }
double distance(const Point& a, const Point& b);
Point from_angle(double radians);
double angle_of(const Point& v);
// Wraps to [0, 2pi).
double wrap_two_pi(double a);

// --- validation -------------------------------------------------------------

bool is_finite(const Point& p);
void validate(const Polyline& line);
void validate(const Polygon& polygon);

// --- polylines --------------------------------------------------------------

double length(const Polyline& line);
// Cumulative abscissa at each vertex.
std::vector<double> cumulative_lengths(const Polyline& line);
Polyline reversed(Polyline line);
// Portion of the line between two abscissas, s0 < s1.
Polyline sub_polyline(const Polyline& line, double s0, double s1);
double distance_to_segment(const Point& p, const Point& a, const Point& b);
double distance_to_polyline(const Point& p, const Polyline& line);

struct Projection {
    double s = 0.0;        // abscissa, clamped to [0, length]
    double d = 0.0;        // signed offset along the left normal at s
    std::size_t segment = 0;
};

// Nearest point of the line; ties go to the smallest abscissa.
Projection project_to_polyline(const Point& p, const Polyline& line);

struct Station {
    Point point;
    double tangent = 0.0; // radians; angle bisector at interior vertices
};

Station point_at(const Polyline& line, double s, double d = 0.0);

// Parallel curve at signed distance d; mitered joins (limit kMiterLimit)
// with bevel fallback.
Polyline offset_polyline(const Polyline& line, double d);

// --- corners and curves -----------------------------------------------------

struct Fillet {
    Point center;
    Arc arc;          // from tangent_a to tangent_b
    Point tangent_a;
    Point tangent_b;
};

// Where two borders meet: the corner point, the abscissa of the corner on
// each border (may be negative when the borders only meet once extended
// backwards), the outgoing unit directions and the opening angle.
struct Corner {
    Point point;
    double s_a = 0.0;
    double s_b = 0.0;
    Point dir_a;
    Point dir_b;
    double opening = 0.0;
};

std::optional<Corner> find_corner(const Polyline& border_a, const Polyline& border_b);

// Circle of radius r tangent to both borders, centered in the wedge between
// them. Throws FilletTooLarge when a tangent point falls outside a border.
Fillet fillet_corner(const Polyline& border_a, const Polyline& border_b, double r);

// Largest radius accepted by fillet_corner for these borders.
double max_fillet_radius(const Polyline& border_a, const Polyline& border_b);

std::vector<Point> discretize_arc(const Arc& arc, double max_step = kMaxArcStep);

Point bezier_eval(std::span<const Point> controls, double t);
std::vector<Point> discretize_bezier(std::span<const Point> controls, int segments);

// --- intersections ----------------------------------------------------------

// Proper or touching intersection of two closed segments; collinear overlaps
// return the overlap endpoint closest to a0.
std::optional<Point> segment_intersection(const Point& a0, const Point& a1, const Point& b0,
                                          const Point& b1);
// Intersection of two infinite lines given by point and direction.
std::optional<Point> line_intersection(const Point& p, const Point& dir_p, const Point& q,
                                       const Point& dir_q);

// --- polygons ---------------------------------------------------------------

double signed_ring_area(const Ring& ring);
double area(const Polygon& polygon);
Point centroid(const Polygon& polygon);
BBox bbox(std::span<const Point> points);
BBox bbox(const Polygon& polygon);
Polygon rectangle(const BBox& box);
Ring close_ring(std::vector<Point> points);
// Even-odd containment; points on the boundary count as inside.
bool contains(const Polygon& polygon, const Point& p, double tolerance = 1e-9);
double distance_to_boundary(const Polygon& polygon, const Point& p);
// Zero inside, otherwise distance to the boundary.
double distance_to_polygon(const Polygon& polygon, const Point& p);
double polygon_intersection_area(const Polygon& a, const Polygon& b);
std::vector<Polygon> polygon_intersection(const Polygon& a, const Polygon& b);
bool polygons_overlap(const Polygon& a, const Polygon& b);

// --- orientation votes ------------------------------------------------------

// Doubled-angle circular mean of undirected orientations; result in [0, pi).
double weighted_orientation_mean(std::span<const double> angles, std::span<const double> weights);

// Distance between two undirected orientations, in [0, pi/2].
double orientation_distance(double a, double b);

} // namespace streetbase::geom
