#pragma once

// Brute-force O(n^2) references for the spatial queries and losses. These are
// deliberately independent of the k-d tree path: plain linear scans, with the
// same per-term distance arithmetic so results must agree bit for bit.

#include <algorithm>
#include <cmath>
#include <vector>

#include "p2pd/losses.hpp"
#include "p2pd/pointset.hpp"
#include "p2pd/spatial.hpp"

namespace oracle {

using p2pd::DisplacementField;
using p2pd::Neighbor;
using p2pd::PointSet;

inline Neighbor nearest(const double* data, std::size_t n, int dim, const double* q) {
    std::size_t best = 0;
    double best_d2 = p2pd::dist2(q, data, dim);
    for (std::size_t i = 1; i < n; ++i) {
        const double d2 = p2pd::dist2(q, data + i * dim, dim);
        if (d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    }
    return {best, std::sqrt(best_d2)};
}

inline Neighbor nearest(const PointSet& ps, const double* q) { return nearest(ps.points.data(), ps.size(), ps.dim, q); }

inline std::vector<Neighbor> knn(const double* data, std::size_t n, int dim, const double* q, std::size_t k,
                                 bool exclude_self) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < n; ++i) {
        const double d2 = p2pd::dist2(q, data + i * dim, dim);
        if (exclude_self && d2 == 0.0) continue;
        all.push_back({d2, i});
    }
    std::sort(all.begin(), all.end());
    if (all.size() > k) all.resize(k);
    std::vector<Neighbor> out(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) out[i] = {all[i].second, std::sqrt(all[i].first)};
    return out;
}

inline std::vector<Neighbor> knn(const PointSet& ps, const double* q, std::size_t k, bool exclude_self) {
    return knn(ps.points.data(), ps.size(), ps.dim, q, k, exclude_self);
}

inline std::vector<std::size_t> ball_query(const PointSet& ps, const double* center, double r, std::size_t cap) {
    std::vector<std::pair<double, std::size_t>> inside;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double d2 = p2pd::dist2(center, ps.point(i), ps.dim);
        if (d2 <= r * r) inside.push_back({d2, i});
    }
    std::sort(inside.begin(), inside.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < inside.size() && out.size() < cap; ++i) out.push_back(inside[i].second);
    if (out.empty()) out.push_back(nearest(ps, center).index);
    while (out.size() < cap) out.push_back(out.front());
    return out;
}

inline std::vector<std::size_t> farthest_point_sample(const PointSet& ps, std::size_t m, std::size_t seed) {
    std::vector<std::size_t> chosen{seed};
    std::vector<char> picked(ps.size(), 0);
    picked[seed] = 1;
    while (chosen.size() < m) {
        std::size_t best = ps.size();
        double best_min_d2 = -1.0;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            if (picked[i]) continue;
            double mind = std::numeric_limits<double>::infinity();
            for (std::size_t c : chosen) mind = std::min(mind, p2pd::dist2(ps.point(i), ps.point(c), ps.dim));
            if (mind > best_min_d2) {
                best_min_d2 = mind;
                best = i;
            }
        }
        picked[best] = 1;
        chosen.push_back(best);
    }
    return chosen;
}

inline double shape_loss(const PointSet& pred, const PointSet& target) {
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) total += nearest(pred, target.point(i)).distance;
    for (std::size_t i = 0; i < pred.size(); ++i) total += nearest(target, pred.point(i)).distance;
    return total;
}

inline double density_loss(const PointSet& pred, const PointSet& target, int k) {
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double* p = target.point(i);
        auto in_target = knn(target, p, std::min<std::size_t>(k, target.size()), true);
        auto in_pred = knn(pred, p, std::min<std::size_t>(k, pred.size()), true);
        const std::size_t k_eff = std::min(in_target.size(), in_pred.size());
        double term = 0.0;
        for (std::size_t j = 0; j < k_eff; ++j) term += std::abs(in_target[j].distance - in_pred[j].distance);
        total += term / static_cast<double>(k_eff);
    }
    return total;
}

inline double cross_reg_loss(const PointSet& x, const DisplacementField& ix, const PointSet& y,
                             const DisplacementField& iy) {
    const int d = x.dim, ld = 2 * d;
    std::vector<double> u(x.size() * ld), v(y.size() * ld);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (int k = 0; k < d; ++k) {
            u[i * ld + k] = x.point(i)[k];
            u[i * ld + d + k] = x.point(i)[k] + ix.vec(i)[k];
        }
    for (std::size_t j = 0; j < y.size(); ++j)
        for (int k = 0; k < d; ++k) {
            v[j * ld + k] = y.point(j)[k] + iy.vec(j)[k];
            v[j * ld + d + k] = y.point(j)[k];
        }
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += nearest(v.data(), y.size(), ld, u.data() + i * ld).distance;
    for (std::size_t j = 0; j < y.size(); ++j) total += nearest(u.data(), x.size(), ld, v.data() + j * ld).distance;
    return total;
}

}  // namespace oracle
