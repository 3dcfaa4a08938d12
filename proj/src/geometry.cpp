#include "modmeta/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace modmeta {

void GridSpec::validate() const {
    if (!(x_min < x_max) || !(y_min < y_max)) throw std::invalid_argument("grid bounds must satisfy min < max");
    if (rows < 1 || cols < 1) throw std::invalid_argument("grid needs at least one row and one column");
}

double orient2d(const Point2& a, const Point2& b, const Point2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

double incircle(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
    const Point2 ad = a - d, bd = b - d, cd = c - d;
    const double alift = ad.squaredNorm(), blift = bd.squaredNorm(), clift = cd.squaredNorm();
    return alift * (bd.x() * cd.y() - cd.x() * bd.y()) + blift * (cd.x() * ad.y() - ad.x() * cd.y()) +
           clift * (ad.x() * bd.y() - bd.x() * ad.y());
}

std::size_t nearest_node(std::span<const Point2> points, const Point2& query) {
    if (points.empty()) throw std::invalid_argument("nearest_node: empty point set");
    std::size_t best = 0;
    double best_d = (points[0] - query).squaredNorm();
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double d = (points[i] - query).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

GridLattice grid_topology(const GridSpec& spec) {
    spec.validate();
    GridLattice g;
    auto coord = [](double lo, double hi, int n, int i) {
        return n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
    };
    for (int r = 0; r < spec.rows; ++r)
        for (int c = 0; c < spec.cols; ++c)
            g.points.emplace_back(coord(spec.x_min, spec.x_max, spec.cols, c),
                                  coord(spec.y_min, spec.y_max, spec.rows, r));
    for (int r = 0; r < spec.rows; ++r) {
        for (int c = 0; c < spec.cols; ++c) {
            const int i = r * spec.cols + c;
            if (c + 1 < spec.cols) g.edges.emplace_back(i, i + 1);
            if (r + 1 < spec.rows) g.edges.emplace_back(i, i + spec.cols);
        }
    }
    return g;
}

namespace {

constexpr double kEps = 1e-12;
constexpr int kGhost = -1;

using Tri = std::array<int, 3>;

std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

// Triangulation under construction in normalized coordinates. Hull edges are
// closed off by ghost triangles (a, b, kGhost) whose "circumcircle" is the
// open half-plane left of a->b, so no bounding super-triangle is needed.
class Builder {
public:
    explicit Builder(std::vector<Point2> pts) : p_(std::move(pts)) {}

    void seed(int a, int b, int c) {
        if (orient2d(p_[a], p_[b], p_[c]) < 0) std::swap(b, c);
        add({a, b, c});
        add({b, a, kGhost});
        add({c, b, kGhost});
        add({a, c, kGhost});
    }

    void insert(int v) {
        const int start = find_start(v);
        std::vector<int> cavity{start};
        std::vector<char> in_cavity(tris_.size(), 0);
        in_cavity[start] = 1;
        for (std::size_t k = 0; k < cavity.size(); ++k) {
            const Tri t = tris_[cavity[k]];
            for (int e = 0; e < 3; ++e) {
                auto it = edges_.find(edge_key(t[(e + 1) % 3], t[e]));
                if (it == edges_.end()) continue;
                const int nb = it->second;
                if (in_cavity[nb] || !conflicts(tris_[nb], v)) continue;
                in_cavity[nb] = 1;
                cavity.push_back(nb);
            }
        }
        std::vector<std::pair<int, int>> boundary;
        for (int ti : cavity) {
            const Tri t = tris_[ti];
            for (int e = 0; e < 3; ++e) {
                const int a = t[e], b = t[(e + 1) % 3];
                auto it = edges_.find(edge_key(b, a));
                if (it == edges_.end() || !in_cavity[it->second]) boundary.emplace_back(a, b);
            }
        }
        for (int ti : cavity) remove(ti);
        for (auto [a, b] : boundary) {
            if (a == kGhost)
                add({b, v, kGhost});
            else if (b == kGhost)
                add({v, a, kGhost});
            else
                add({a, b, v});
        }
    }

    // Flip any real interior edge that fails the in-circle test.
    void legalize() {
        for (int pass = 0; pass < 1000; ++pass) {
            bool flipped = false;
            for (std::size_t ti = 0; ti < tris_.size() && !flipped; ++ti) {
                if (!alive_[ti] || is_ghost(tris_[ti])) continue;
                for (int e = 0; e < 3 && !flipped; ++e) {
                    const Tri t = tris_[ti];
                    const int a = t[e], b = t[(e + 1) % 3], c = t[(e + 2) % 3];
                    auto it = edges_.find(edge_key(b, a));
                    if (it == edges_.end()) continue;
                    const Tri u = tris_[it->second];
                    if (is_ghost(u)) continue;
                    const int d = third(u, b, a);
                    if (incircle(p_[a], p_[b], p_[c], p_[d]) > kEps) {
                        remove(static_cast<int>(ti));
                        remove(it->second);
                        add({a, d, c});
                        add({d, b, c});
                        flipped = true;
                    }
                }
            }
            if (!flipped) return;
        }
    }

    std::vector<Tri> real_triangles() const {
        std::vector<Tri> out;
        for (std::size_t i = 0; i < tris_.size(); ++i)
            if (alive_[i] && !is_ghost(tris_[i])) out.push_back(tris_[i]);
        return out;
    }

private:
    static bool is_ghost(const Tri& t) { return t[2] == kGhost; }

    static int third(const Tri& t, int a, int b) {
        for (int v : t)
            if (v != a && v != b) return v;
        return kGhost;
    }

    bool conflicts(const Tri& t, int v) const {
        const Point2& q = p_[v];
        if (!is_ghost(t)) return incircle(p_[t[0]], p_[t[1]], p_[t[2]], q) > kEps;
        const Point2& a = p_[t[0]];
        const Point2& b = p_[t[1]];
        const double o = orient2d(a, b, q);
        if (o > kEps) return true;
        if (o < -kEps) return false;
        // On the hull line: inside only strictly between the endpoints.
        const double s = (q - a).dot(b - a) / (b - a).squaredNorm();
        return s > 0 && s < 1;
    }

    int find_start(int v) const {
        const Point2& q = p_[v];
        for (std::size_t i = 0; i < tris_.size(); ++i) {
            if (!alive_[i] || is_ghost(tris_[i])) continue;
            const Tri& t = tris_[i];
            if (orient2d(p_[t[0]], p_[t[1]], q) >= -kEps && orient2d(p_[t[1]], p_[t[2]], q) >= -kEps &&
                orient2d(p_[t[2]], p_[t[0]], q) >= -kEps)
                return static_cast<int>(i);
        }
        for (std::size_t i = 0; i < tris_.size(); ++i)
            if (alive_[i] && conflicts(tris_[i], v)) return static_cast<int>(i);
        throw std::logic_error("delaunay: no triangle conflicts with inserted point");
    }

    void add(const Tri& t) {
        const int id = static_cast<int>(tris_.size());
        tris_.push_back(t);
        alive_.push_back(1);
        for (int e = 0; e < 3; ++e) edges_[edge_key(t[e], t[(e + 1) % 3])] = id;
    }

    void remove(int id) {
        alive_[id] = 0;
        const Tri& t = tris_[id];
        for (int e = 0; e < 3; ++e) {
            auto it = edges_.find(edge_key(t[e], t[(e + 1) % 3]));
            if (it != edges_.end() && it->second == id) edges_.erase(it);
        }
    }

    std::vector<Point2> p_;
    std::vector<Tri> tris_;
    std::vector<char> alive_;
    std::unordered_map<std::uint64_t, int> edges_;  // directed edge -> owning triangle
};

}  // namespace

Triangulation delaunay(std::span<const Point2> points) {
    const int n = static_cast<int>(points.size());
    if (n < 3) throw std::invalid_argument("delaunay: need at least 3 points, got " + std::to_string(n));

    Point2 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        if (!p.allFinite()) throw std::invalid_argument("delaunay: non-finite point");
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double span = (hi - lo).maxCoeff();
    const Point2 center = 0.5 * (lo + hi);
    std::vector<Point2> q;
    q.reserve(n);
    for (const auto& p : points) q.push_back((p - center) / span);

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return q[a].x() < q[b].x() || (q[a].x() == q[b].x() && q[a].y() < q[b].y());
    });
    for (int i = 1; i < n; ++i)
        if (q[order[i]] == q[order[i - 1]])
            throw std::invalid_argument("delaunay: duplicate points " + std::to_string(order[i - 1]) + " and " +
                                        std::to_string(order[i]));

    // Seed triangle: point 0, the point farthest from it, and the point
    // farthest from the line through both.
    int a = 0, b = 1;
    for (int i = 1; i < n; ++i)
        if ((q[i] - q[a]).squaredNorm() > (q[b] - q[a]).squaredNorm()) b = i;
    int c = -1;
    double best = 0;
    for (int i = 0; i < n; ++i) {
        const double o = std::abs(orient2d(q[a], q[b], q[i]));
        if (o > best) {
            best = o;
            c = i;
        }
    }
    if (c < 0 || best <= kEps) throw std::invalid_argument("delaunay: all points are collinear");

    Builder builder(q);
    builder.seed(a, b, c);
    for (int i = 0; i < n; ++i)
        if (i != a && i != b && i != c) builder.insert(i);
    builder.legalize();

    Triangulation out;
    out.points.assign(points.begin(), points.end());
    out.triangles = builder.real_triangles();
    for (const auto& t : out.triangles)
        for (int e = 0; e < 3; ++e) out.edges.emplace_back(std::minmax(t[e], t[(e + 1) % 3]));
    std::sort(out.edges.begin(), out.edges.end());
    out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
    return out;
}

}  // namespace modmeta
