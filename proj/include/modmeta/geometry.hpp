#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace modmeta {

using Point2 = Eigen::Vector2d;
using UndirectedEdge = std::pair<int, int>;  // first < second

// Axis-aligned region with a rows x cols lattice of nodes, corners included.
struct GridSpec {
    double x_min = -0.1;
    double x_max = 0.1;
    double y_min = -0.1;
    double y_max = 0.1;
    int rows = 5;
    int cols = 5;

    void validate() const;
};

struct GridLattice {
    std::vector<Point2> points;  // row-major: index = r * cols + c
    std::vector<UndirectedEdge> edges;
};

struct Triangulation {
    std::vector<Point2> points;
    std::vector<std::array<int, 3>> triangles;  // counter-clockwise
    std::vector<UndirectedEdge> edges;          // sorted, deduplicated
};

// Index of the closest point; ties go to the lowest index.
std::size_t nearest_node(std::span<const Point2> points, const Point2& query);

GridLattice grid_topology(const GridSpec& spec);

// Bowyer-Watson insertion, with ghost triangles standing in for a bounding
// super-triangle, then a Lawson flip pass. The result satisfies the
// empty-circumcircle property up to a 1e-12 guard in coordinates scaled to
// unit span. Throws std::invalid_argument for fewer than three points,
// duplicate points, or an all-collinear input.
Triangulation delaunay(std::span<const Point2> points);

// Twice the signed area of (a, b, c); positive when counter-clockwise.
double orient2d(const Point2& a, const Point2& b, const Point2& c);

// Positive when d lies strictly inside the circumcircle of the
// counter-clockwise triangle (a, b, c).
double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d);

}  // namespace modmeta
