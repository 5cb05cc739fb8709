#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "p2pd/errors.hpp"
#include "p2pd/pointset.hpp"
#include "p2pd/spatial.hpp"
#include "p2pd/tensor.hpp"

namespace p2pd {

struct LossWeights {
    double lambda_density = 1.0;
    double mu_reg = 0.1;
    int k_density = 8;
};

struct LossBreakdown {
    double shape_xy = 0.0;
    double density_xy = 0.0;
    double shape_yx = 0.0;
    double density_yx = 0.0;
    double cross_reg = 0.0;
    double total = 0.0;
};

// Per-point displacement vectors aligned index-wise with a source set.
struct DisplacementField {
    int dim = 3;
    std::vector<double> vectors;  // n * dim

    std::size_t size() const { return vectors.size() / static_cast<std::size_t>(dim); }
    const double* vec(std::size_t i) const { return vectors.data() + i * static_cast<std::size_t>(dim); }
};

namespace lossdetail {

struct Match {
    std::size_t index;   // matched point in the other set
    double distance;
};

// Closest-point matches from every point of `from` into `index`.
inline std::vector<Match> closest_matches(const double* from, std::size_t n, int dim, const SpatialIndex& index) {
    std::vector<Match> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Neighbor nb = index.nearest(from + i * static_cast<std::size_t>(dim));
        out[i] = {nb.index, nb.distance};
    }
    return out;
}

}  // namespace lossdetail

// Symmetric sum of closest L2 distances (unsquared) between two sets.
inline double shape_loss(const PointSet& pred, const PointSet& target) {
    if (pred.dim != target.dim) throw DimensionError("shape_loss: dim mismatch");
    if (pred.empty() || target.empty()) throw ContractError("shape_loss: empty point set");
    SpatialIndex pred_index(pred), target_index(target);
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) total += pred_index.nearest(target.point(i)).distance;
    for (std::size_t i = 0; i < pred.size(); ++i) total += target_index.nearest(pred.point(i)).distance;
    return total;
}

// Ascending distances from p to its k nearest candidates in ps;
// exclude_coincident skips candidates at distance exactly 0. The effective k
// is min(k, candidates remaining).
inline std::vector<double> density_vector(const double* p, const PointSet& ps, int k, bool exclude_coincident) {
    if (k < 1) throw ContractError("density_vector: k must be >= 1");
    SpatialIndex index(ps);
    const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k), ps.size());
    auto nbs = index.knn(p, want, exclude_coincident);
    std::vector<double> out(nbs.size());
    for (std::size_t i = 0; i < nbs.size(); ++i) out[i] = nbs[i].distance;
    return out;
}

// Mean absolute difference between the k-nearest-distance vectors of the
// target measured in the target itself and in the prediction, accumulated
// over target points. Self matches are excluded on the target side and exact
// coincidences skipped on the prediction side, so density_loss(A, A) == 0.
inline double density_loss(const PointSet& pred, const PointSet& target, int k) {
    if (pred.dim != target.dim) throw DimensionError("density_loss: dim mismatch");
    if (pred.empty() || target.empty()) throw ContractError("density_loss: empty point set");
    if (k < 1) throw ContractError("density_loss: k must be >= 1");
    SpatialIndex pred_index(pred), target_index(target);
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double* p = target.point(i);
        auto in_target = target_index.knn(p, std::min<std::size_t>(static_cast<std::size_t>(k), target.size()), true);
        auto in_pred = pred_index.knn(p, std::min<std::size_t>(static_cast<std::size_t>(k), pred.size()), true);
        const std::size_t k_eff = std::min(in_target.size(), in_pred.size());
        double term = 0.0;
        for (std::size_t j = 0; j < k_eff; ++j) term += std::abs(in_target[j].distance - in_pred[j].distance);
        total += term / static_cast<double>(k_eff);
    }
    return total;
}

namespace lossdetail {

// Lift x and its displacements to [p, p + ix(p)]; y side to [q + iy(q), q].
inline std::vector<double> lift_source(const PointSet& x, const double* ix) {
    const int d = x.dim;
    std::vector<double> out(x.size() * 2 * d);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double* p = x.point(i);
        for (int kidx = 0; kidx < d; ++kidx) {
            out[i * 2 * d + kidx] = p[kidx];
            out[i * 2 * d + d + kidx] = p[kidx] + ix[i * d + kidx];
        }
    }
    return out;
}

inline std::vector<double> lift_target(const PointSet& y, const double* iy) {
    const int d = y.dim;
    std::vector<double> out(y.size() * 2 * d);
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double* q = y.point(i);
        for (int kidx = 0; kidx < d; ++kidx) {
            out[i * 2 * d + kidx] = q[kidx] + iy[i * d + kidx];
            out[i * 2 * d + d + kidx] = q[kidx];
        }
    }
    return out;
}

}  // namespace lossdetail

// Symmetric sum of closest L2 distances between the two lifted displacement
// sets, computed in 2*dim space exactly like shape_loss.
inline double cross_reg_loss(const PointSet& x, const DisplacementField& ix, const PointSet& y,
                             const DisplacementField& iy) {
    if (x.dim != y.dim || ix.dim != x.dim || iy.dim != y.dim) throw DimensionError("cross_reg_loss: dim mismatch");
    if (ix.size() != x.size() || iy.size() != y.size())
        throw ContractError("cross_reg_loss: displacement cardinality mismatch");
    if (x.empty() || y.empty()) throw ContractError("cross_reg_loss: empty point set");
    const int lifted_dim = 2 * x.dim;
    const auto u = lossdetail::lift_source(x, ix.vectors.data());
    const auto v = lossdetail::lift_target(y, iy.vectors.data());
    SpatialIndex u_index(u, lifted_dim), v_index(v, lifted_dim);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += v_index.nearest(u.data() + i * lifted_dim).distance;
    for (std::size_t i = 0; i < y.size(); ++i) total += u_index.nearest(v.data() + i * lifted_dim).distance;
    return total;
}

// --- graph-recorded versions (analytic gradients through the chosen pairs) --

// pred is an n x dim tensor of displaced source points; target is constant.
// Gradients flow to pred only; at coincident pairs the gradient is zero.
inline TensorPtr shape_loss_node(Graph& g, const TensorPtr& pred, const PointSet& target) {
    if (pred->shape.size() != 2 || pred->shape[1] != static_cast<std::size_t>(target.dim))
        throw DimensionError("shape_loss_node: pred shape " + Tensor::shape_str(pred->shape) + " vs target dim " +
                             std::to_string(target.dim));
    const std::size_t n = pred->shape[0];
    const int dim = target.dim;
    SpatialIndex pred_index(pred->values, dim);
    SpatialIndex target_index(target);
    auto target_to_pred = std::make_shared<std::vector<lossdetail::Match>>(
        lossdetail::closest_matches(target.points.data(), target.size(), dim, pred_index));
    auto pred_to_target = std::make_shared<std::vector<lossdetail::Match>>(
        lossdetail::closest_matches(pred->values.data(), n, dim, target_index));
    double value = 0.0;
    for (const auto& m : *target_to_pred) value += m.distance;
    for (const auto& m : *pred_to_target) value += m.distance;
    auto target_pts = std::make_shared<std::vector<double>>(target.points);
    return g.custom({pred}, Tensor({1}, {value}),
                    [n, dim, target_to_pred, pred_to_target, target_pts](const Tensor& o, const std::vector<TensorPtr>& in) {
                        if (!in[0]->requires_grad) return;
                        in[0]->ensure_grad();
                        const double go = o.grad[0];
                        const double* pv = in[0]->values.data();
                        double* pg = in[0]->grad.data();
                        const double* tv = target_pts->data();
                        for (std::size_t i = 0; i < target_to_pred->size(); ++i) {
                            const auto& m = (*target_to_pred)[i];
                            if (m.distance <= 0.0) continue;
                            for (int kk = 0; kk < dim; ++kk)
                                pg[m.index * dim + kk] += go * (pv[m.index * dim + kk] - tv[i * dim + kk]) / m.distance;
                        }
                        for (std::size_t i = 0; i < n; ++i) {
                            const auto& m = (*pred_to_target)[i];
                            if (m.distance <= 0.0) continue;
                            for (int kk = 0; kk < dim; ++kk)
                                pg[i * dim + kk] += go * (pv[i * dim + kk] - tv[m.index * dim + kk]) / m.distance;
                        }
                    });
}

inline TensorPtr density_loss_node(Graph& g, const TensorPtr& pred, const PointSet& target, int k) {
    if (pred->shape.size() != 2 || pred->shape[1] != static_cast<std::size_t>(target.dim))
        throw DimensionError("density_loss_node: pred shape " + Tensor::shape_str(pred->shape) + " vs target dim " +
                             std::to_string(target.dim));
    if (k < 1) throw ContractError("density_loss_node: k must be >= 1");
    const std::size_t n = pred->shape[0];
    const int dim = target.dim;
    SpatialIndex pred_index(pred->values, dim);
    SpatialIndex target_index(target);

    struct Selection {
        std::size_t target_point;      // index of p in target
        std::vector<std::size_t> sel;  // chosen pred indices, nearest first
        std::vector<double> target_d;  // matching target-side distances
        double inv_k;
    };
    auto sels = std::make_shared<std::vector<Selection>>();
    double value = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double* p = target.point(i);
        auto in_target = target_index.knn(p, std::min<std::size_t>(static_cast<std::size_t>(k), target.size()), true);
        auto in_pred = pred_index.knn(p, std::min<std::size_t>(static_cast<std::size_t>(k), n), true);
        const std::size_t k_eff = std::min(in_target.size(), in_pred.size());
        Selection s;
        s.target_point = i;
        s.inv_k = 1.0 / static_cast<double>(k_eff);
        double term = 0.0;
        for (std::size_t j = 0; j < k_eff; ++j) {
            term += std::abs(in_target[j].distance - in_pred[j].distance);
            s.sel.push_back(in_pred[j].index);
            s.target_d.push_back(in_target[j].distance);
        }
        value += term / static_cast<double>(k_eff);
        sels->push_back(std::move(s));
    }
    auto target_pts = std::make_shared<std::vector<double>>(target.points);
    return g.custom({pred}, Tensor({1}, {value}),
                    [dim, sels, target_pts](const Tensor& o, const std::vector<TensorPtr>& in) {
                        if (!in[0]->requires_grad) return;
                        in[0]->ensure_grad();
                        const double go = o.grad[0];
                        const double* pv = in[0]->values.data();
                        double* pg = in[0]->grad.data();
                        for (const auto& s : *sels) {
                            const double* p = target_pts->data() + s.target_point * dim;
                            for (std::size_t j = 0; j < s.sel.size(); ++j) {
                                const std::size_t qi = s.sel[j];
                                const double dq = dist(pv + qi * dim, p, dim);
                                if (dq <= 0.0) continue;
                                const double sgn = dq > s.target_d[j] ? 1.0 : (dq < s.target_d[j] ? -1.0 : 0.0);
                                for (int kk = 0; kk < dim; ++kk)
                                    pg[qi * dim + kk] += go * s.inv_k * sgn * (pv[qi * dim + kk] - p[kk]) / dq;
                            }
                        }
                    });
}

// ix and iy are n x dim / m x dim displacement tensors; x and y are constant.
inline TensorPtr cross_reg_loss_node(Graph& g, const PointSet& x, const TensorPtr& ix, const PointSet& y,
                                     const TensorPtr& iy) {
    if (x.dim != y.dim) throw DimensionError("cross_reg_loss_node: dim mismatch");
    const int dim = x.dim;
    if (ix->shape.size() != 2 || ix->shape[0] != x.size() || ix->shape[1] != static_cast<std::size_t>(dim) ||
        iy->shape.size() != 2 || iy->shape[0] != y.size() || iy->shape[1] != static_cast<std::size_t>(dim))
        throw ContractError("cross_reg_loss_node: displacement cardinality mismatch");
    const int ld = 2 * dim;
    auto u = std::make_shared<std::vector<double>>(lossdetail::lift_source(x, ix->values.data()));
    auto v = std::make_shared<std::vector<double>>(lossdetail::lift_target(y, iy->values.data()));
    SpatialIndex u_index(*u, ld), v_index(*v, ld);
    auto x_to_y = std::make_shared<std::vector<lossdetail::Match>>(
        lossdetail::closest_matches(u->data(), x.size(), ld, v_index));
    auto y_to_x = std::make_shared<std::vector<lossdetail::Match>>(
        lossdetail::closest_matches(v->data(), y.size(), ld, u_index));
    double value = 0.0;
    for (const auto& m : *x_to_y) value += m.distance;
    for (const auto& m : *y_to_x) value += m.distance;

    // Accumulates d||u_i - v_j|| into both displacement grads for one pair.
    auto pair_grad = [dim](const double* ui, const double* vj, double d, double go, double* gix_row,
                           double* giy_row) {
        for (int kk = 0; kk < dim; ++kk) {
            const double head = (ui[kk] - vj[kk]) / d;
            const double tail = (ui[dim + kk] - vj[dim + kk]) / d;
            gix_row[kk] += go * tail;   // u depends on ix in its tail half
            giy_row[kk] -= go * head;   // v depends on iy in its head half
        }
    };

    return g.custom({ix, iy}, Tensor({1}, {value}),
                    [dim, ld, u, v, x_to_y, y_to_x, pair_grad](const Tensor& o, const std::vector<TensorPtr>& in) {
                        const double go = o.grad[0];
                        const bool gx = in[0]->requires_grad, gy = in[1]->requires_grad;
                        if (!gx && !gy) return;
                        if (gx) in[0]->ensure_grad();
                        if (gy) in[1]->ensure_grad();
                        std::vector<double> dummy_x(static_cast<std::size_t>(dim), 0.0);
                        std::vector<double> dummy_y(static_cast<std::size_t>(dim), 0.0);
                        for (std::size_t i = 0; i < x_to_y->size(); ++i) {
                            const auto& m = (*x_to_y)[i];
                            if (m.distance <= 0.0) continue;
                            pair_grad(u->data() + i * ld, v->data() + m.index * ld, m.distance, go,
                                      gx ? in[0]->grad.data() + i * dim : dummy_x.data(),
                                      gy ? in[1]->grad.data() + m.index * dim : dummy_y.data());
                        }
                        for (std::size_t j = 0; j < y_to_x->size(); ++j) {
                            const auto& m = (*y_to_x)[j];
                            if (m.distance <= 0.0) continue;
                            pair_grad(u->data() + m.index * ld, v->data() + j * ld, m.distance, go,
                                      gx ? in[0]->grad.data() + m.index * dim : dummy_x.data(),
                                      gy ? in[1]->grad.data() + j * dim : dummy_y.data());
                        }
                    });
}

inline PointSet apply_field(const PointSet& x, const DisplacementField& d) {
    if (d.size() != x.size() || d.dim != x.dim) throw ContractError("apply_field: cardinality mismatch");
    PointSet out = x;
    for (std::size_t i = 0; i < out.points.size(); ++i) out.points[i] += d.vectors[i];
    return out;
}

// All five terms of the bidirectional objective plus their weighted total.
inline LossBreakdown combined_loss(const PointSet& x, const PointSet& y, const DisplacementField& ix,
                                   const DisplacementField& iy, const LossWeights& w) {
    LossBreakdown b;
    const PointSet y_hat = apply_field(x, ix);
    const PointSet x_hat = apply_field(y, iy);
    b.shape_xy = shape_loss(y_hat, y);
    b.density_xy = density_loss(y_hat, y, w.k_density);
    b.shape_yx = shape_loss(x_hat, x);
    b.density_yx = density_loss(x_hat, x, w.k_density);
    b.cross_reg = cross_reg_loss(x, ix, y, iy);
    b.total = b.shape_xy + w.lambda_density * b.density_xy + b.shape_yx + w.lambda_density * b.density_yx +
              w.mu_reg * b.cross_reg;
    return b;
}

}  // namespace p2pd
