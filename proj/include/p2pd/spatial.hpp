#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "p2pd/errors.hpp"
#include "p2pd/pointset.hpp"

namespace p2pd {

struct Neighbor {
    std::size_t index;
    double distance;
};

// Exact nearest-neighbor index over an immutable point set. A balanced k-d
// tree with median splits; all distance arithmetic matches a linear scan
// term for term, so query results are identical to brute force, including
// lowest-index tie-breaking. Works for any dimension >= 1 (the geometric
// losses index lifted 2*dim spaces through the owning constructor).
class SpatialIndex {
public:
    explicit SpatialIndex(const PointSet& ps) { init(ps.points.data(), ps.size(), ps.dim); }

    // Owns a copy of the coordinates; for transient or lifted data.
    SpatialIndex(std::vector<double> coords, int dim) : owned_(std::move(coords)) {
        if (dim < 1) throw DimensionError("SpatialIndex: dim must be >= 1");
        if (owned_.size() % static_cast<std::size_t>(dim) != 0)
            throw DimensionError("SpatialIndex: coordinate count not a multiple of dim");
        init(owned_.data(), owned_.size() / static_cast<std::size_t>(dim), dim);
    }

    std::size_t size() const { return n_; }
    int dim() const { return dim_; }

    // Closest point to q; ties broken to the lowest point index.
    Neighbor nearest(const double* q) const {
        Best best{-1, std::numeric_limits<double>::infinity()};
        search_nearest(root_, q, best);
        return {static_cast<std::size_t>(best.index), std::sqrt(best.d2)};
    }

    Neighbor nearest(const std::vector<double>& q) const {
        check_query_dim(q.size());
        return nearest(q.data());
    }

    // k closest candidates sorted by (distance, index). exclude_self skips
    // candidates at distance exactly 0. Throws if nothing remains.
    std::vector<Neighbor> knn(const double* q, std::size_t k, bool exclude_self) const {
        if (k < 1) throw ContractError("knn: k must be >= 1");
        std::vector<HeapEntry> heap;
        heap.reserve(k);
        search_knn(root_, q, k, exclude_self, heap);
        if (heap.empty()) throw ContractError("knn: no candidates remain after exclusion");
        std::sort(heap.begin(), heap.end(),
                  [](const HeapEntry& a, const HeapEntry& b) { return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index); });
        std::vector<Neighbor> out(heap.size());
        for (std::size_t i = 0; i < heap.size(); ++i) out[i] = {heap[i].index, std::sqrt(heap[i].d2)};
        return out;
    }

    std::vector<Neighbor> knn(const std::vector<double>& q, std::size_t k, bool exclude_self) const {
        check_query_dim(q.size());
        return knn(q.data(), k, exclude_self);
    }

    // Up to cap indices with distance <= r, nearest-first. If fewer than cap
    // qualify and at least one does, the nearest qualifying index is repeated
    // to fill the cap slots; if none qualify, the globally nearest index is
    // used and repeated.
    std::vector<std::size_t> ball_query(const double* center, double r, std::size_t cap) const {
        if (!(r > 0.0)) throw ContractError("ball_query: radius must be positive");
        if (cap < 1) throw ContractError("ball_query: cap must be >= 1");
        std::vector<HeapEntry> found;
        collect_in_ball(root_, center, r * r, found);
        std::sort(found.begin(), found.end(),
                  [](const HeapEntry& a, const HeapEntry& b) { return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index); });
        std::vector<std::size_t> out;
        out.reserve(cap);
        for (std::size_t i = 0; i < found.size() && out.size() < cap; ++i) out.push_back(found[i].index);
        if (out.empty()) out.push_back(nearest(center).index);
        const std::size_t fill = out.front();
        while (out.size() < cap) out.push_back(fill);
        return out;
    }

    std::vector<std::size_t> ball_query(const std::vector<double>& center, double r, std::size_t cap) const {
        check_query_dim(center.size());
        return ball_query(center.data(), r, cap);
    }

private:
    static constexpr std::size_t kLeafSize = 8;

    struct Node {
        int axis = -1;       // -1 for leaves
        double split = 0.0;  // split coordinate
        int left = -1, right = -1;
        std::size_t begin = 0, end = 0;  // leaf range into order_
    };

    struct Best {
        long long index;
        double d2;
    };

    struct HeapEntry {
        std::size_t index;
        double d2;
    };

    void init(const double* base, std::size_t n, int dim) {
        if (n == 0) throw ContractError("SpatialIndex: empty point set");
        base_ = base;
        n_ = n;
        dim_ = dim;
        order_.resize(n);
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        nodes_.reserve(2 * n / kLeafSize + 2);
        root_ = build(0, n, 0);
    }

    void check_query_dim(std::size_t qdim) const {
        if (qdim != static_cast<std::size_t>(dim_))
            throw DimensionError("query dim " + std::to_string(qdim) + " vs indexed set dim " + std::to_string(dim_));
    }

    const double* pt(std::size_t i) const { return base_ + i * static_cast<std::size_t>(dim_); }

    double coord(std::size_t i, int axis) const { return pt(i)[axis]; }

    int build(std::size_t begin, std::size_t end, int depth) {
        Node node;
        if (end - begin <= kLeafSize) {
            node.begin = begin;
            node.end = end;
            nodes_.push_back(node);
            return static_cast<int>(nodes_.size() - 1);
        }
        const int axis = depth % dim_;
        const std::size_t mid = (begin + end) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](std::size_t a, std::size_t b) {
                             const double ca = coord(a, axis), cb = coord(b, axis);
                             return ca < cb || (ca == cb && a < b);
                         });
        node.axis = axis;
        node.split = coord(order_[mid], axis);
        nodes_.push_back(node);
        const int self = static_cast<int>(nodes_.size() - 1);
        const int left = build(begin, mid, depth + 1);
        const int right = build(mid, end, depth + 1);
        nodes_[self].left = left;
        nodes_[self].right = right;
        return self;
    }

    // (d2, index) lexicographic improvement keeps brute-force tie behavior.
    static bool better(double d2, std::size_t idx, double best_d2, long long best_idx) {
        return d2 < best_d2 || (d2 == best_d2 && static_cast<long long>(idx) < best_idx);
    }

    void search_nearest(int ni, const double* q, Best& best) const {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::size_t j = node.begin; j < node.end; ++j) {
                const std::size_t idx = order_[j];
                const double d2 = dist2(q, pt(idx), dim_);
                if (better(d2, idx, best.d2, best.index)) best = {static_cast<long long>(idx), d2};
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search_nearest(near, q, best);
        if (delta * delta <= best.d2) search_nearest(far, q, best);
    }

    // Max-heap on (d2, index); the root is the current worst kept candidate.
    static bool heap_less(const HeapEntry& a, const HeapEntry& b) {
        return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
    }

    void search_knn(int ni, const double* q, std::size_t k, bool exclude_self, std::vector<HeapEntry>& heap) const {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::size_t j = node.begin; j < node.end; ++j) {
                const std::size_t idx = order_[j];
                const double d2 = dist2(q, pt(idx), dim_);
                if (exclude_self && d2 == 0.0) continue;
                if (heap.size() < k) {
                    heap.push_back({idx, d2});
                    std::push_heap(heap.begin(), heap.end(), heap_less);
                } else if (heap_less({idx, d2}, heap.front())) {
                    std::pop_heap(heap.begin(), heap.end(), heap_less);
                    heap.back() = {idx, d2};
                    std::push_heap(heap.begin(), heap.end(), heap_less);
                }
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        search_knn(near, q, k, exclude_self, heap);
        if (heap.size() < k || delta * delta <= heap.front().d2) search_knn(far, q, k, exclude_self, heap);
    }

    void collect_in_ball(int ni, const double* q, double r2, std::vector<HeapEntry>& found) const {
        const Node& node = nodes_[ni];
        if (node.axis < 0) {
            for (std::size_t j = node.begin; j < node.end; ++j) {
                const std::size_t idx = order_[j];
                const double d2 = dist2(q, pt(idx), dim_);
                if (d2 <= r2) found.push_back({idx, d2});
            }
            return;
        }
        const double delta = q[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        collect_in_ball(near, q, r2, found);
        if (delta * delta <= r2) collect_in_ball(far, q, r2, found);
    }

    const double* base_ = nullptr;
    std::size_t n_ = 0;
    int dim_ = 0;
    std::vector<double> owned_;
    std::vector<std::size_t> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Greedy max-min farthest point sampling starting at seed_index; ties broken
// to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(const PointSet& ps, std::size_t m, std::size_t seed_index) {
    const std::size_t n = ps.size();
    if (m < 1 || m > n) throw ContractError("farthest_point_sample: need 1 <= m <= n, got m=" + std::to_string(m) + " n=" + std::to_string(n));
    if (seed_index >= n) throw ContractError("farthest_point_sample: seed_index out of range");
    std::vector<std::size_t> chosen;
    chosen.reserve(m);
    chosen.push_back(seed_index);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    std::vector<char> picked(n, 0);
    picked[seed_index] = 1;
    std::size_t last = seed_index;
    while (chosen.size() < m) {
        std::size_t best = n;
        double best_d2 = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d2 = dist2(ps.point(i), ps.point(last), ps.dim);
            if (d2 < min_d2[i]) min_d2[i] = d2;
            if (!picked[i] && min_d2[i] > best_d2) {
                best_d2 = min_d2[i];
                best = i;
            }
        }
        picked[best] = 1;
        chosen.push_back(best);
        last = best;
    }
    return chosen;
}

}  // namespace p2pd
