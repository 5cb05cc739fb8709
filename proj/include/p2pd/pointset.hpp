#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "p2pd/errors.hpp"

namespace p2pd {

// An ordered list of d-dimensional points (d = 2 or 3), row-major, with
// optional per-point feature channels.
struct PointSet {
    int dim = 3;
    std::vector<double> points;    // n * dim
    std::vector<double> features;  // n * feature_dim, may be empty
    int feature_dim = 0;

    PointSet() = default;
    PointSet(int d, std::vector<double> pts) : dim(d), points(std::move(pts)) {
        if (dim != 2 && dim != 3) throw DimensionError("PointSet: dim must be 2 or 3, got " + std::to_string(dim));
        if (points.size() % static_cast<std::size_t>(dim) != 0)
            throw DimensionError("PointSet: coordinate count not a multiple of dim");
    }

    std::size_t size() const { return points.size() / static_cast<std::size_t>(dim); }
    bool empty() const { return points.empty(); }

    const double* point(std::size_t i) const { return points.data() + i * static_cast<std::size_t>(dim); }
    double* point(std::size_t i) { return points.data() + i * static_cast<std::size_t>(dim); }

    void push_back(const double* p) { points.insert(points.end(), p, p + dim); }

    bool all_finite() const {
        return std::all_of(points.begin(), points.end(), [](double v) { return std::isfinite(v); });
    }
};

// Squared Euclidean distance between two d-dimensional points.
inline double dist2(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

inline double dist(const double* a, const double* b, int dim) { return std::sqrt(dist2(a, b, dim)); }

struct BoundingBox {
    std::vector<double> lo, hi;  // per axis

    double diagonal() const {
        double s = 0.0;
        for (std::size_t k = 0; k < lo.size(); ++k) {
            const double d = hi[k] - lo[k];
            s += d * d;
        }
        return std::sqrt(s);
    }

    std::vector<double> center() const {
        std::vector<double> c(lo.size());
        for (std::size_t k = 0; k < lo.size(); ++k) c[k] = 0.5 * (lo[k] + hi[k]);
        return c;
    }

    void expand(const double* p, int dim) {
        for (int k = 0; k < dim; ++k) {
            lo[k] = std::min(lo[k], p[k]);
            hi[k] = std::max(hi[k], p[k]);
        }
    }
};

inline BoundingBox bounding_box(const PointSet& ps) {
    if (ps.empty()) throw ContractError("bounding_box: empty point set");
    BoundingBox box;
    box.lo.assign(ps.dim, std::numeric_limits<double>::infinity());
    box.hi.assign(ps.dim, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < ps.size(); ++i) box.expand(ps.point(i), ps.dim);
    return box;
}

// Joint bounding box of two sets with equal dim.
inline BoundingBox bounding_box(const PointSet& a, const PointSet& b) {
    if (a.dim != b.dim) throw DimensionError("bounding_box: dim mismatch");
    BoundingBox box = bounding_box(a);
    for (std::size_t i = 0; i < b.size(); ++i) box.expand(b.point(i), b.dim);
    return box;
}

}  // namespace p2pd
