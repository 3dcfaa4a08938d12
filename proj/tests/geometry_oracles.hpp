#pragma once

// Brute-force geometry used to check the triangulation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "modmeta/geometry.hpp"

namespace testing {

using modmeta::Point2;

// Largest in-circle value of any input point against any triangle, on the
// original coordinates. <= 0 means every circumcircle is empty.
inline double worst_incircle(const modmeta::Triangulation& t) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& tri : t.triangles)
        for (int k = 0; k < static_cast<int>(t.points.size()); ++k) {
            if (k == tri[0] || k == tri[1] || k == tri[2]) continue;
            worst = std::max(worst, modmeta::incircle(t.points[tri[0]], t.points[tri[1]], t.points[tri[2]], t.points[k]));
        }
    return worst;
}

// Portion of the i/j bisector where i and j are (jointly) nearest, as a
// parameter interval along the bisector direction. Empty when lo > hi.
inline std::pair<double, double> bisector_interval(const std::vector<Point2>& p, int i, int j) {
    const Point2 m = 0.5 * (p[i] + p[j]);
    const Point2 d = p[j] - p[i];
    const Point2 u = Point2(-d.y(), d.x()).normalized();
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (int k = 0; k < static_cast<int>(p.size()); ++k) {
        if (k == i || k == j) continue;
        // |q - p_i|^2 <= |q - p_k|^2  <=>  2 q.(p_k - p_i) <= |p_k|^2 - |p_i|^2, with q = m + t u.
        const Point2 e = p[k] - p[i];
        const double a = 2 * u.dot(e);
        const double b = p[k].squaredNorm() - p[i].squaredNorm() - 2 * m.dot(e);
        if (std::abs(a) < 1e-300) {
            if (b < 0) return {1, 0};
        } else if (a > 0) {
            hi = std::min(hi, b / a);
        } else {
            lo = std::max(lo, b / a);
        }
    }
    return {lo, hi};
}

inline Point2 bisector_point(const std::vector<Point2>& p, int i, int j, double t) {
    const Point2 d = p[j] - p[i];
    return 0.5 * (p[i] + p[j]) + t * Point2(-d.y(), d.x()).normalized();
}

// Indices of the two nearest sites to q, nearest first.
inline std::pair<int, int> two_nearest(const std::vector<Point2>& p, const Point2& q) {
    int a = -1, b = -1;
    double da = std::numeric_limits<double>::infinity(), db = da;
    for (int k = 0; k < static_cast<int>(p.size()); ++k) {
        const double dk = (p[k] - q).squaredNorm();
        if (dk < da) {
            b = a, db = da;
            a = k, da = dk;
        } else if (dk < db) {
            b = k, db = dk;
        }
    }
    return {a, b};
}

// Voronoi-adjacent pairs: the bisector interval has positive length and a
// query point sampled inside it has exactly those two sites as its nearest.
inline std::set<modmeta::UndirectedEdge> voronoi_adjacency(const std::vector<Point2>& p, double min_length = 1e-9) {
    std::set<modmeta::UndirectedEdge> out;
    const int n = static_cast<int>(p.size());
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            auto [lo, hi] = bisector_interval(p, i, j);
            if (!(hi - lo > min_length)) continue;
            // Unbounded intervals: sample a finite point inside.
            const double t = std::isfinite(lo) && std::isfinite(hi) ? 0.5 * (lo + hi)
                             : std::isfinite(lo)                   ? lo + 1.0
                             : std::isfinite(hi)                   ? hi - 1.0
                                                                   : 0.0;
            const auto [a, b] = two_nearest(p, bisector_point(p, i, j, t));
            if (std::min(a, b) == i && std::max(a, b) == j) out.insert({i, j});
        }
    return out;
}

// Pairs seen as (nearest, second nearest) over a dense grid of queries.
inline std::set<modmeta::UndirectedEdge> sampled_pairs(const std::vector<Point2>& p, int per_side) {
    Point2 lo = p[0], hi = p[0];
    for (const auto& q : p) lo = lo.cwiseMin(q), hi = hi.cwiseMax(q);
    const Point2 pad = 0.5 * (hi - lo);
    lo -= pad, hi += pad;
    std::set<modmeta::UndirectedEdge> out;
    for (int r = 0; r < per_side; ++r)
        for (int c = 0; c < per_side; ++c) {
            const Point2 q(lo.x() + (hi.x() - lo.x()) * (c + 0.5) / per_side,
                           lo.y() + (hi.y() - lo.y()) * (r + 0.5) / per_side);
            const auto [a, b] = two_nearest(p, q);
            out.insert({std::min(a, b), std::max(a, b)});
        }
    return out;
}

// Convex hull area by the monotone chain.
inline double hull_area(std::vector<Point2> p) {
    std::sort(p.begin(), p.end(), [](const Point2& a, const Point2& b) {
        return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
    });
    std::vector<Point2> h(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && modmeta::orient2d(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && modmeta::orient2d(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    h.resize(k - 1);
    double a = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& u = h[i];
        const auto& v = h[(i + 1) % h.size()];
        a += u.x() * v.y() - v.x() * u.y();
    }
    return 0.5 * a;
}

inline double triangulated_area(const modmeta::Triangulation& t) {
    double a = 0;
    for (const auto& tri : t.triangles) a += 0.5 * modmeta::orient2d(t.points[tri[0]], t.points[tri[1]], t.points[tri[2]]);
    return a;
}

}  // namespace testing
