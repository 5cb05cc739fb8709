#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "p2pd/errors.hpp"

namespace p2pd {

// Dense row-major f64 tensor. Participates in a Graph's reverse-mode tape
// when requires_grad is set; grad is allocated lazily on first accumulation.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v, bool rg = false)
        : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
        if (numel_of(shape) != values.size())
            throw DimensionError("Tensor: shape " + shape_str(shape) + " does not match value count " +
                                 std::to_string(values.size()));
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
        return out + "]";
    }

    std::size_t numel() const { return values.size(); }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_constant(std::vector<std::size_t> shape, std::vector<double> values) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), false);
}

inline TensorPtr make_variable(std::vector<std::size_t> shape, std::vector<double> values) {
    return std::make_shared<Tensor>(std::move(shape), std::move(values), true);
}

inline TensorPtr make_scalar(double v, bool rg = false) {
    return std::make_shared<Tensor>(std::vector<std::size_t>{1}, std::vector<double>{v}, rg);
}

namespace detail {
using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;
}  // namespace detail

// Append-only reverse-mode tape. Nodes are recorded in topological order
// (operands always precede their consumers); backward replays them once in
// reverse insertion order. A Graph and its tensors belong to one thread.
class Graph {
public:
    using BackwardFn = std::function<void(const Tensor& out, const std::vector<TensorPtr>& inputs)>;

    std::size_t node_count() const { return nodes_.size(); }

    // --- elementwise -------------------------------------------------------

    TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise(a, b, BinOp::Add); }
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise(a, b, BinOp::Sub); }
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return binary_elementwise(a, b, BinOp::Mul); }

    TensorPtr scale(const TensorPtr& a, double c) {
        std::vector<double> v(a->numel());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] * c;
        auto out = wrap(a->shape, std::move(v), a->requires_grad);
        record({a}, out, [c](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (accum(in[0]))
                for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += c * o.grad[i];
        });
        return out;
    }

    TensorPtr relu(const TensorPtr& a) {
        std::vector<double> v(a->numel());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
        auto out = wrap(a->shape, std::move(v), a->requires_grad);
        record({a}, out, [](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (accum(in[0]))
                for (std::size_t i = 0; i < o.grad.size(); ++i)
                    if (in[0]->values[i] > 0.0) in[0]->grad[i] += o.grad[i];
        });
        return out;
    }

    // --- linear algebra -----------------------------------------------------

    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
        require_rank(a, 2, "matmul lhs");
        require_rank(b, 2, "matmul rhs");
        const std::size_t m = a->shape[0], k = a->shape[1], k2 = b->shape[0], n = b->shape[1];
        if (k != k2)
            throw DimensionError("matmul: inner dimensions disagree, " + Tensor::shape_str(a->shape) + " vs " +
                                 Tensor::shape_str(b->shape));
        std::vector<double> v(m * n, 0.0);
        {
            detail::ECMap A(a->values.data(), m, k), B(b->values.data(), k, n);
            detail::EMap O(v.data(), m, n);
            O.noalias() = A * B;
        }
        auto out = wrap({m, n}, std::move(v), a->requires_grad || b->requires_grad);
        record({a, b}, out, [m, k, n](const Tensor& o, const std::vector<TensorPtr>& in) {
            detail::ECMap GO(o.grad.data(), m, n);
            detail::ECMap A(in[0]->values.data(), m, k), B(in[1]->values.data(), k, n);
            if (accum(in[0])) {
                detail::EMap GA(in[0]->grad.data(), m, k);
                GA.noalias() += GO * B.transpose();
            }
            if (accum(in[1])) {
                detail::EMap GB(in[1]->grad.data(), k, n);
                GB.noalias() += A.transpose() * GO;
            }
        });
        return out;
    }

    // a is m x n, bias is a length-n vector added to every row.
    TensorPtr add_bias(const TensorPtr& a, const TensorPtr& bias) {
        require_rank(a, 2, "add_bias input");
        require_rank(bias, 1, "add_bias bias");
        const std::size_t m = a->shape[0], n = a->shape[1];
        if (bias->shape[0] != n)
            throw DimensionError("add_bias: " + Tensor::shape_str(a->shape) + " vs bias " + Tensor::shape_str(bias->shape));
        std::vector<double> v(a->values);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) v[i * n + j] += bias->values[j];
        auto out = wrap(a->shape, std::move(v), a->requires_grad || bias->requires_grad);
        record({a, bias}, out, [m, n](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (accum(in[0]))
                for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i];
            if (accum(in[1]))
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) in[1]->grad[j] += o.grad[i * n + j];
        });
        return out;
    }

    // --- structure ops ------------------------------------------------------

    // Per-group, per-channel maximum over the middle axis of a g x n x c
    // tensor. Gradient routes to the argmax element, ties to the lowest index.
    TensorPtr reduce_max_over_group(const TensorPtr& a) {
        require_rank(a, 3, "reduce_max_over_group input");
        const std::size_t g = a->shape[0], n = a->shape[1], c = a->shape[2];
        if (n < 1) throw ContractError("reduce_max_over_group: empty group");
        std::vector<double> v(g * c);
        auto argmax = std::make_shared<std::vector<std::size_t>>(g * c);
        for (std::size_t gi = 0; gi < g; ++gi) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                std::size_t best = 0;
                double bv = a->values[(gi * n) * c + ci];
                for (std::size_t ni = 1; ni < n; ++ni) {
                    const double x = a->values[(gi * n + ni) * c + ci];
                    if (x > bv) {
                        bv = x;
                        best = ni;
                    }
                }
                v[gi * c + ci] = bv;
                (*argmax)[gi * c + ci] = best;
            }
        }
        auto out = wrap({g, c}, std::move(v), a->requires_grad);
        record({a}, out, [g, n, c, argmax](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (!accum(in[0])) return;
            for (std::size_t gi = 0; gi < g; ++gi)
                for (std::size_t ci = 0; ci < c; ++ci)
                    in[0]->grad[(gi * n + (*argmax)[gi * c + ci]) * c + ci] += o.grad[gi * c + ci];
        });
        return out;
    }

    // Channel-wise concatenation of n x c1 and n x c2. Either side may have
    // zero channels.
    TensorPtr concat(const TensorPtr& a, const TensorPtr& b) {
        require_rank(a, 2, "concat lhs");
        require_rank(b, 2, "concat rhs");
        const std::size_t n = a->shape[0], c1 = a->shape[1], c2 = b->shape[1];
        if (b->shape[0] != n)
            throw DimensionError("concat: leading dimensions disagree, " + Tensor::shape_str(a->shape) + " vs " +
                                 Tensor::shape_str(b->shape));
        std::vector<double> v(n * (c1 + c2));
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(a->values.data() + i * c1, c1, v.data() + i * (c1 + c2));
            std::copy_n(b->values.data() + i * c2, c2, v.data() + i * (c1 + c2) + c1);
        }
        auto out = wrap({n, c1 + c2}, std::move(v), a->requires_grad || b->requires_grad);
        record({a, b}, out, [n, c1, c2](const Tensor& o, const std::vector<TensorPtr>& in) {
            for (std::size_t i = 0; i < n; ++i) {
                if (accum(in[0]))
                    for (std::size_t j = 0; j < c1; ++j) in[0]->grad[i * c1 + j] += o.grad[i * (c1 + c2) + j];
                if (accum(in[1]))
                    for (std::size_t j = 0; j < c2; ++j) in[1]->grad[i * c2 + j] += o.grad[i * (c1 + c2) + c1 + j];
            }
        });
        return out;
    }

    // Copies rows of an n x c tensor in index order; duplicates allowed.
    // Backward scatter-adds, so repeated rows accumulate.
    TensorPtr gather_points(const TensorPtr& a, const std::vector<std::size_t>& indices) {
        require_rank(a, 2, "gather_points input");
        const std::size_t n = a->shape[0], c = a->shape[1];
        for (std::size_t idx : indices)
            if (idx >= n) throw IndexError("gather_points: index " + std::to_string(idx) + " out of range [0," + std::to_string(n) + ")");
        std::vector<double> v(indices.size() * c);
        for (std::size_t i = 0; i < indices.size(); ++i) std::copy_n(a->values.data() + indices[i] * c, c, v.data() + i * c);
        auto idx_copy = std::make_shared<std::vector<std::size_t>>(indices);
        auto out = wrap({indices.size(), c}, std::move(v), a->requires_grad);
        record({a}, out, [c, idx_copy](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (!accum(in[0])) return;
            for (std::size_t i = 0; i < idx_copy->size(); ++i)
                for (std::size_t j = 0; j < c; ++j) in[0]->grad[(*idx_copy)[i] * c + j] += o.grad[i * c + j];
        });
        return out;
    }

    // out[i] = sum_j w[i*k+j] * feats[idx[i*k+j], :]; idx and w are constants.
    // This is the inverse-distance interpolation kernel of feature propagation.
    TensorPtr weighted_gather(const TensorPtr& feats, const std::vector<std::size_t>& idx,
                              const std::vector<double>& w, std::size_t n, std::size_t k) {
        require_rank(feats, 2, "weighted_gather feats");
        const std::size_t kn = feats->shape[0], c = feats->shape[1];
        if (idx.size() != n * k || w.size() != n * k)
            throw DimensionError("weighted_gather: index/weight arrays must be n*k long");
        for (std::size_t i : idx)
            if (i >= kn) throw IndexError("weighted_gather: index out of range");
        std::vector<double> v(n * c, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const double wj = w[i * k + j];
                const double* src = feats->values.data() + idx[i * k + j] * c;
                double* dst = v.data() + i * c;
                for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += wj * src[ci];
            }
        auto idx_copy = std::make_shared<std::vector<std::size_t>>(idx);
        auto w_copy = std::make_shared<std::vector<double>>(w);
        auto out = wrap({n, c}, std::move(v), feats->requires_grad);
        record({feats}, out, [n, k, c, idx_copy, w_copy](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (!accum(in[0])) return;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const double wj = (*w_copy)[i * k + j];
                    double* dst = in[0]->grad.data() + (*idx_copy)[i * k + j] * c;
                    const double* src = o.grad.data() + i * c;
                    for (std::size_t ci = 0; ci < c; ++ci) dst[ci] += wj * src[ci];
                }
        });
        return out;
    }

    TensorPtr reshape(const TensorPtr& a, std::vector<std::size_t> shape) {
        if (Tensor::numel_of(shape) != a->numel())
            throw DimensionError("reshape: cannot view " + Tensor::shape_str(a->shape) + " as " + Tensor::shape_str(shape));
        auto out = wrap(std::move(shape), a->values, a->requires_grad);
        record({a}, out, [](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (accum(in[0]))
                for (std::size_t i = 0; i < o.grad.size(); ++i) in[0]->grad[i] += o.grad[i];
        });
        return out;
    }

    TensorPtr reduce_sum(const TensorPtr& a) {
        double s = 0.0;
        for (double v : a->values) s += v;
        auto out = wrap({1}, {s}, a->requires_grad);
        record({a}, out, [](const Tensor& o, const std::vector<TensorPtr>& in) {
            if (accum(in[0]))
                for (std::size_t i = 0; i < in[0]->grad.size(); ++i) in[0]->grad[i] += o.grad[0];
        });
        return out;
    }

    // Escape hatch for composite operations (the geometric losses) that carry
    // their own analytic backward rule.
    TensorPtr custom(std::vector<TensorPtr> inputs, Tensor value, BackwardFn backward) {
        bool rg = false;
        for (const auto& t : inputs) rg = rg || t->requires_grad;
        auto out = std::make_shared<Tensor>(std::move(value));
        out->requires_grad = rg;
        record(std::move(inputs), out, std::move(backward));
        return out;
    }

    // Accumulates dLoss/dT into every requires_grad tensor reachable from
    // loss. Repeated calls without zero_grad accumulate further.
    void backward(const TensorPtr& loss) {
        if (loss->numel() != 1) throw ContractError("backward: loss must be scalar, got " + Tensor::shape_str(loss->shape));
        // Intermediate outputs get fresh grad buffers per call; leaves keep
        // accumulating across calls.
        for (auto& node : nodes_)
            if (node.out->requires_grad) {
                node.out->ensure_grad();
                node.out->zero_grad();
            }
        loss->ensure_grad();
        loss->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (!it->out->requires_grad || it->out->grad.empty()) continue;
            it->backward_fn(*it->out, it->inputs);
        }
    }

private:
    enum class BinOp { Add, Sub, Mul };

    struct Node {
        std::vector<TensorPtr> inputs;
        TensorPtr out;
        BackwardFn backward_fn;
    };

    static bool accum(const TensorPtr& t) {
        if (!t->requires_grad) return false;
        t->ensure_grad();
        return true;
    }

    static void require_rank(const TensorPtr& t, std::size_t rank, const char* what) {
        if (t->shape.size() != rank)
            throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                 Tensor::shape_str(t->shape));
    }

    TensorPtr wrap(std::vector<std::size_t> shape, std::vector<double> values, bool rg) {
        auto t = std::make_shared<Tensor>(std::move(shape), std::move(values), false);
        t->requires_grad = rg;
        return t;
    }

    void record(std::vector<TensorPtr> inputs, const TensorPtr& out, BackwardFn fn) {
        if (!out->requires_grad) return;  // forward-only, nothing to replay
        nodes_.push_back({std::move(inputs), out, std::move(fn)});
    }

    TensorPtr binary_elementwise(const TensorPtr& a, const TensorPtr& b, BinOp op) {
        const bool b_scalar = b->numel() == 1 && a->numel() != 1;
        const bool a_scalar = a->numel() == 1 && b->numel() != 1;
        if (!a_scalar && !b_scalar && a->shape != b->shape)
            throw DimensionError("elementwise: incompatible shapes " + Tensor::shape_str(a->shape) + " vs " +
                                 Tensor::shape_str(b->shape));
        const std::vector<std::size_t>& shape = a_scalar ? b->shape : a->shape;
        const std::size_t n = Tensor::numel_of(shape);
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = a->values[a_scalar ? 0 : i];
            const double y = b->values[b_scalar ? 0 : i];
            v[i] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
        }
        auto out = wrap(shape, std::move(v), a->requires_grad || b->requires_grad);
        record({a, b}, out, [op, a_scalar, b_scalar](const Tensor& o, const std::vector<TensorPtr>& in) {
            const auto& a_in = in[0];
            const auto& b_in = in[1];
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
                const double g = o.grad[i];
                const double x = a_in->values[a_scalar ? 0 : i];
                const double y = b_in->values[b_scalar ? 0 : i];
                if (accum(a_in)) a_in->grad[a_scalar ? 0 : i] += op == BinOp::Mul ? g * y : g;
                if (accum(b_in)) b_in->grad[b_scalar ? 0 : i] += op == BinOp::Mul ? g * x : op == BinOp::Sub ? -g : g;
            }
        });
        return out;
    }

    std::vector<Node> nodes_;
};

// Central-difference gradient check. f must be a deterministic function of x
// (fix any noise seed before calling); returns the max elementwise relative
// error between the analytic gradient and central differences.
inline double finite_diff_check(const std::function<TensorPtr(Graph&, const TensorPtr&)>& f, const Tensor& x0,
                                double eps) {
    if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");
    auto eval = [&f](const Tensor& x) {
        Graph g;
        auto xv = std::make_shared<Tensor>(x);
        xv->requires_grad = false;
        auto out = f(g, xv);
        if (!out->all_finite()) throw NumericError("finite_diff_check: non-finite function output");
        if (out->numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
        return out->values[0];
    };
    // Analytic pass.
    Graph g;
    auto x = std::make_shared<Tensor>(x0);
    x->requires_grad = true;
    x->grad.clear();
    auto loss = f(g, x);
    if (!loss->all_finite()) throw NumericError("finite_diff_check: non-finite function output");
    if (loss->numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    g.backward(loss);
    std::vector<double> analytic(x0.numel(), 0.0);
    if (!x->grad.empty()) analytic = x->grad;

    double max_err = 0.0;
    for (std::size_t i = 0; i < x0.numel(); ++i) {
        Tensor xp = x0, xm = x0;
        xp.values[i] += eps;
        xm.values[i] -= eps;
        const double numeric = (eval(xp) - eval(xm)) / (2.0 * eps);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_err = std::max(max_err, std::abs(analytic[i] - numeric) / denom);
    }
    return max_err;
}

}  // namespace p2pd
