#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mae/common.hpp"
#include "mae/rng.hpp"

namespace mae {

// Dense tensor participating in a reverse-mode tape. Copies share storage;
// recorded ops keep their inputs alive through the parents list, so the
// graph for one step is freed when the loss tensor goes out of scope.
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;

        void ensure_grad() {
            if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
        }
    };

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->data.assign(numel(shape), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
        MAE_CHECK(numel(shape) == data.size(),
                  "tensor data length " << data.size() << " does not match shape " << shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    std::size_t size() const { return n_->data.size(); }
    std::size_t rank() const { return n_->shape.size(); }
    std::vector<double>& data() { return n_->data; }
    const std::vector<double>& data() const { return n_->data; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }

    std::vector<double>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        n_->grad.assign(n_->data.size(), 0.0);
    }

    double item() const {
        MAE_CHECK(n_->data.size() == 1, "item() on non-scalar tensor " << shape_str(n_->shape));
        return n_->data[0];
    }

    std::shared_ptr<Node> node() const { return n_; }

    static Tensor make_op(Shape shape, std::vector<double> data,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward_fn) {
        Tensor out = from(std::move(shape), std::move(data));
        bool needs_grad = false;
        for (const auto& in : inputs) {
            if (in.requires_grad()) needs_grad = true;
        }
        if (needs_grad) {
            out.n_->requires_grad = true;
            for (const auto& in : inputs) out.n_->parents.push_back(in.n_);
            out.n_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}
    std::shared_ptr<Node> n_;
};

// ---------------------------------------------------------------------------
// backward

inline void backward(const Tensor& loss) {
    MAE_CHECK(loss.size() == 1, "backward requires a scalar loss, got " << shape_str(loss.shape()));
    using Node = Tensor::Node;

    // iterative post-order over parents
    std::vector<Node*> topo;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo) n->grad.assign(n->data.size(), 0.0);
    loss.node()->grad[0] = 1.0;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// element-wise ops

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    MAE_CHECK(a.shape() == b.shape(),
              op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Tensor::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Tensor::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] -= o.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [an, bn](Tensor::Node& o) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i] += o.grad[i] * an->data[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return Tensor::make_op(a.shape(), std::move(out), {a}, [an, c](Tensor::Node& o) {
        an->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * c;
    });
}

// bias broadcast over the last axis
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
    MAE_CHECK(bias.rank() == 1 && x.rank() >= 1 && x.shape().back() == bias.shape()[0],
              "add_bias: bias " << shape_str(bias.shape()) << " does not match last axis of "
                                << shape_str(x.shape()));
    std::size_t d = bias.size();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + bias.data()[i % d];
    auto xn = x.node(), bn = bias.node();
    return Tensor::make_op(x.shape(), std::move(out), {x, bias}, [xn, bn, d](Tensor::Node& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) bn->grad[i % d] += o.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// matmul: a is [..., m, k]; b is either [k, n] (shared) or [..., k, n]

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    MAE_CHECK(a.rank() >= 2 && b.rank() >= 2, "matmul: ranks must be >= 2, got "
                                                  << shape_str(a.shape()) << " and " << shape_str(b.shape()));
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    std::size_t m = as[as.size() - 2];
    std::size_t k = as[as.size() - 1];
    bool shared_b = (bs.size() == 2);
    if (!shared_b) {
        MAE_CHECK(bs.size() == as.size() &&
                      std::equal(as.begin(), as.end() - 2, bs.begin()),
                  "matmul: batch dims mismatch " << shape_str(as) << " vs " << shape_str(bs));
    }
    std::size_t bk = bs[bs.size() - 2];
    std::size_t n = bs[bs.size() - 1];
    MAE_CHECK(k == bk, "matmul: inner extents differ, " << shape_str(as) << " vs " << shape_str(bs));

    std::size_t batches = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batches *= as[i];

    Shape os(as.begin(), as.end() - 2);
    os.push_back(m);
    os.push_back(n);
    std::vector<double> out(batches * m * n, 0.0);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double* od = out.data();

    parallel_for(batches * m, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t row = lo; row < hi; ++row) {
            std::size_t batch = row / m;
            std::size_t i = row % m;
            const double* arow = ad + batch * m * k + i * k;
            const double* bmat = shared_b ? bd : bd + batch * k * n;
            double* orow = od + row * n;
            for (std::size_t t = 0; t < k; ++t) {
                double av = arow[t];
                const double* brow = bmat + t * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        }
    });

    auto an = a.node(), bn = b.node();
    return Tensor::make_op(std::move(os), std::move(out), {a, b},
                           [an, bn, batches, m, k, n, shared_b](Tensor::Node& o) {
        const double* g = o.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            double* ag = an->grad.data();
            const double* bd2 = bn->data.data();
            parallel_for(batches * m, [&](std::size_t lo, std::size_t hi) {
                for (std::size_t row = lo; row < hi; ++row) {
                    std::size_t batch = row / m;
                    const double* grow = g + row * n;
                    const double* bmat = shared_b ? bd2 : bd2 + batch * k * n;
                    double* agrow = ag + row * k;
                    for (std::size_t t = 0; t < k; ++t) {
                        const double* brow = bmat + t * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        agrow[t] += acc;
                    }
                }
            });
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            double* bg = bn->grad.data();
            const double* ad2 = an->data.data();
            // accumulation over batches kept serial for determinism
            for (std::size_t batch = 0; batch < batches; ++batch) {
                const double* abat = ad2 + batch * m * k;
                const double* gbat = g + batch * m * n;
                double* bgm = shared_b ? bg : bg + batch * k * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = abat + i * k;
                    const double* grow = gbat + i * n;
                    for (std::size_t t = 0; t < k; ++t) {
                        double av = arow[t];
                        double* bgrow = bgm + t * n;
                        for (std::size_t j = 0; j < n; ++j) bgrow[j] += av * grow[j];
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// view / movement ops

inline Tensor reshape(const Tensor& x, Shape shape) {
    MAE_CHECK(numel(shape) == x.size(),
              "reshape: " << shape_str(x.shape()) << " -> " << shape_str(shape) << " changes element count");
    auto xn = x.node();
    return Tensor::make_op(std::move(shape), x.data(), {x}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
    });
}

inline Tensor transpose_last2(const Tensor& x) {
    MAE_CHECK(x.rank() >= 2, "transpose_last2: rank must be >= 2");
    const Shape& s = x.shape();
    std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
    std::size_t batches = x.size() / (m * n);
    Shape os(s);
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < batches; ++b) {
        const double* in = x.data().data() + b * m * n;
        double* o = out.data() + b * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) o[j * m + i] = in[i * n + j];
    }
    auto xn = x.node();
    return Tensor::make_op(std::move(os), std::move(out), {x}, [xn, batches, m, n](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t b = 0; b < batches; ++b) {
            const double* g = o.grad.data() + b * m * n;
            double* xg = xn->grad.data() + b * m * n;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) xg[i * n + j] += g[j * m + i];
        }
    });
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
    MAE_CHECK(a.rank() == b.rank() && axis < a.rank(), "concat: rank/axis mismatch");
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis)
            MAE_CHECK(a.shape()[i] == b.shape()[i], "concat: shapes differ off-axis, "
                                                        << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
    Shape os = a.shape();
    os[axis] += b.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= os[i];
    for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];
    std::size_t wa = a.shape()[axis] * inner, wb = b.shape()[axis] * inner;
    std::vector<double> out(numel(os));
    for (std::size_t g = 0; g < outer; ++g) {
        std::copy_n(a.data().data() + g * wa, wa, out.data() + g * (wa + wb));
        std::copy_n(b.data().data() + g * wb, wb, out.data() + g * (wa + wb) + wa);
    }
    auto an = a.node(), bn = b.node();
    return Tensor::make_op(std::move(os), std::move(out), {a, b}, [an, bn, outer, wa, wb](Tensor::Node& o) {
        for (std::size_t g = 0; g < outer; ++g) {
            const double* gg = o.grad.data() + g * (wa + wb);
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < wa; ++i) an->grad[g * wa + i] += gg[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < wb; ++i) bn->grad[g * wb + i] += gg[wa + i];
            }
        }
    });
}

// row gather on a [n, d] table; also serves as embedding lookup
inline Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& idx) {
    MAE_CHECK(x.rank() == 2, "gather_rows: expected rank-2 input, got " << shape_str(x.shape()));
    std::size_t n = x.shape()[0], d = x.shape()[1];
    std::vector<double> out(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        MAE_CHECK(idx[i] < n, "gather_rows: index " << idx[i] << " out of range " << n);
        std::copy_n(x.data().data() + idx[i] * d, d, out.data() + i * d);
    }
    auto xn = x.node();
    auto ids = idx;
    return Tensor::make_op({idx.size(), d}, std::move(out), {x}, [xn, ids, d](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) xn->grad[ids[i] * d + j] += o.grad[i * d + j];
    });
}

// row scatter: out[idx[i]] = x[i], zeros elsewhere; idx entries must be distinct
inline Tensor scatter_rows(const Tensor& x, const std::vector<std::size_t>& idx, std::size_t n_out) {
    MAE_CHECK(x.rank() == 2 && x.shape()[0] == idx.size(),
              "scatter_rows: row count " << shape_str(x.shape()) << " vs " << idx.size() << " indices");
    std::size_t d = x.shape()[1];
    std::vector<double> out(n_out * d, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        MAE_CHECK(idx[i] < n_out, "scatter_rows: index " << idx[i] << " out of range " << n_out);
        std::copy_n(x.data().data() + i * d, d, out.data() + idx[i] * d);
    }
    auto xn = x.node();
    auto ids = idx;
    return Tensor::make_op({n_out, d}, std::move(out), {x}, [xn, ids, d](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < d; ++j) xn->grad[i * d + j] += o.grad[ids[i] * d + j];
    });
}

// per-image token gather on [b, n, d]; every index list has the same length
inline Tensor gather_tokens(const Tensor& x, const std::vector<std::vector<std::size_t>>& idx) {
    MAE_CHECK(x.rank() == 3, "gather_tokens: expected [b,n,d], got " << shape_str(x.shape()));
    std::size_t b = x.shape()[0], n = x.shape()[1], d = x.shape()[2];
    MAE_CHECK(idx.size() == b, "gather_tokens: " << idx.size() << " index lists for batch " << b);
    std::size_t k = idx.empty() ? 0 : idx[0].size();
    for (const auto& v : idx)
        MAE_CHECK(v.size() == k, "gather_tokens: index lists must share length across the batch");
    std::vector<double> out(b * k * d);
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t i = 0; i < k; ++i) {
            MAE_CHECK(idx[bi][i] < n, "gather_tokens: index out of range");
            std::copy_n(x.data().data() + (bi * n + idx[bi][i]) * d, d, out.data() + (bi * k + i) * d);
        }
    auto xn = x.node();
    auto ids = idx;
    return Tensor::make_op({b, k, d}, std::move(out), {x}, [xn, ids, n, k, d](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t bi = 0; bi < ids.size(); ++bi)
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    xn->grad[(bi * n + ids[bi][i]) * d + j] += o.grad[(bi * k + i) * d + j];
    });
}

inline Tensor slice_tokens(const Tensor& x, std::size_t start, std::size_t len) {
    MAE_CHECK(x.rank() == 3, "slice_tokens: expected [b,T,d]");
    std::size_t b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    MAE_CHECK(start + len <= t, "slice_tokens: range [" << start << "," << start + len << ") exceeds " << t);
    std::vector<double> out(b * len * d);
    for (std::size_t bi = 0; bi < b; ++bi)
        std::copy_n(x.data().data() + (bi * t + start) * d, len * d, out.data() + bi * len * d);
    auto xn = x.node();
    return Tensor::make_op({b, len, d}, std::move(out), {x}, [xn, start, t, len, d](Tensor::Node& o) {
        xn->ensure_grad();
        std::size_t b2 = o.shape[0];
        for (std::size_t bi = 0; bi < b2; ++bi)
            for (std::size_t i = 0; i < len * d; ++i)
                xn->grad[(bi * t + start) * d + i] += o.grad[bi * len * d + i];
    });
}

// broadcast a learned vector to [b, m, d] (class/mask tokens)
inline Tensor broadcast_token(const Tensor& v, std::size_t b, std::size_t m) {
    MAE_CHECK(v.rank() == 1, "broadcast_token: expected a vector");
    std::size_t d = v.size();
    std::vector<double> out(b * m * d);
    for (std::size_t i = 0; i < b * m; ++i) std::copy_n(v.data().data(), d, out.data() + i * d);
    auto vn = v.node();
    return Tensor::make_op({b, m, d}, std::move(out), {v}, [vn, b, m, d](Tensor::Node& o) {
        vn->ensure_grad();
        for (std::size_t i = 0; i < b * m; ++i)
            for (std::size_t j = 0; j < d; ++j) vn->grad[j] += o.grad[i * d + j];
    });
}

// x:[b,T,d] + pos:[T,d] broadcast over batch
inline Tensor add_pos(const Tensor& x, const Tensor& pos) {
    MAE_CHECK(x.rank() == 3 && pos.rank() == 2 && x.shape()[1] == pos.shape()[0] &&
                  x.shape()[2] == pos.shape()[1],
              "add_pos: " << shape_str(x.shape()) << " vs " << shape_str(pos.shape()));
    std::size_t td = pos.size();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + pos.data()[i % td];
    auto xn = x.node(), pn = pos.node();
    return Tensor::make_op(x.shape(), std::move(out), {x, pos}, [xn, pn, td](Tensor::Node& o) {
        if (xn->requires_grad) {
            xn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
        }
        if (pn->requires_grad) {
            pn->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) pn->grad[i % td] += o.grad[i];
        }
    });
}

// per-sample scaling of [b,T,d] (drop-path); factors carry no grad
inline Tensor scale_rows(const Tensor& x, const std::vector<double>& factors) {
    MAE_CHECK(x.rank() == 3 && x.shape()[0] == factors.size(), "scale_rows: batch mismatch");
    std::size_t per = x.shape()[1] * x.shape()[2];
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < factors.size(); ++b)
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] = x.data()[b * per + i] * factors[b];
    auto xn = x.node();
    auto f = factors;
    return Tensor::make_op(x.shape(), std::move(out), {x}, [xn, f, per](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t b = 0; b < f.size(); ++b)
            for (std::size_t i = 0; i < per; ++i) xn->grad[b * per + i] += o.grad[b * per + i] * f[b];
    });
}

// [b,T,d] -> [b,h,T,d/h]
inline Tensor split_heads(const Tensor& x, std::size_t h) {
    MAE_CHECK(x.rank() == 3, "split_heads: expected [b,T,d]");
    std::size_t b = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
    MAE_CHECK(d % h == 0, "split_heads: width " << d << " not divisible by " << h << " heads");
    std::size_t dh = d / h;
    std::vector<double> out(x.size());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t hi = 0; hi < h; ++hi)
                std::copy_n(x.data().data() + ((bi * t + ti) * d) + hi * dh, dh,
                            out.data() + (((bi * h + hi) * t) + ti) * dh);
    auto xn = x.node();
    return Tensor::make_op({b, h, t, dh}, std::move(out), {x}, [xn, b, t, h, dh, d](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t hi = 0; hi < h; ++hi)
                    for (std::size_t j = 0; j < dh; ++j)
                        xn->grad[(bi * t + ti) * d + hi * dh + j] +=
                            o.grad[(((bi * h + hi) * t) + ti) * dh + j];
    });
}

// [b,h,T,dh] -> [b,T,h*dh]
inline Tensor merge_heads(const Tensor& x) {
    MAE_CHECK(x.rank() == 4, "merge_heads: expected [b,h,T,dh]");
    std::size_t b = x.shape()[0], h = x.shape()[1], t = x.shape()[2], dh = x.shape()[3];
    std::size_t d = h * dh;
    std::vector<double> out(x.size());
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t hi = 0; hi < h; ++hi)
            for (std::size_t ti = 0; ti < t; ++ti)
                std::copy_n(x.data().data() + (((bi * h + hi) * t) + ti) * dh, dh,
                            out.data() + (bi * t + ti) * d + hi * dh);
    auto xn = x.node();
    return Tensor::make_op({b, t, d}, std::move(out), {x}, [xn, b, t, h, dh, d](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t hi = 0; hi < h; ++hi)
                for (std::size_t ti = 0; ti < t; ++ti)
                    for (std::size_t j = 0; j < dh; ++j)
                        xn->grad[(((bi * h + hi) * t) + ti) * dh + j] +=
                            o.grad[(bi * t + ti) * d + hi * dh + j];
    });
}

// ---------------------------------------------------------------------------
// reductions

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    auto xn = x.node();
    return Tensor::make_op({1}, {s}, {x}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        for (double& g : xn->grad) g += o.grad[0];
    });
}

inline Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    double inv = 1.0 / static_cast<double>(x.size());
    auto xn = x.node();
    return Tensor::make_op({1}, {s * inv}, {x}, [xn, inv](Tensor::Node& o) {
        xn->ensure_grad();
        for (double& g : xn->grad) g += o.grad[0] * inv;
    });
}

// ---------------------------------------------------------------------------
// nonlinearities and normalization

inline Tensor gelu(const Tensor& x) {
    static constexpr double inv_sqrt2 = 0.70710678118654752440;
    static constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = x.data()[i];
        out[i] = v * 0.5 * (1.0 + std::erf(v * inv_sqrt2));
    }
    auto xn = x.node();
    return Tensor::make_op(x.shape(), std::move(out), {x}, [xn](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            double v = xn->data[i];
            double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            xn->grad[i] += o.grad[i] * (cdf + v * pdf);
        }
    });
}

inline Tensor softmax_rows(const Tensor& x) {
    MAE_CHECK(x.rank() >= 1, "softmax_rows: empty tensor");
    std::size_t n = x.shape().back();
    std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double* o = out.data() + r * n;
        double mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (o[j] = std::exp(in[j] - mx));
        double inv = 1.0 / s;
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    auto xn = x.node();
    return Tensor::make_op(x.shape(), std::move(out), {x}, [xn, rows, n](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * n;
            const double* g = o.grad.data() + r * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) xn->grad[r * n + j] += y[j] * (g[j] - dot);
        }
    });
}

inline Tensor log_softmax_rows(const Tensor& x) {
    std::size_t n = x.shape().back();
    std::size_t rows = x.size() / n;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double* o = out.data() + r * n;
        double mx = in[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(in[j] - mx);
        double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
    }
    auto xn = x.node();
    return Tensor::make_op(x.shape(), std::move(out), {x}, [xn, rows, n](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = o.data.data() + r * n;
            const double* g = o.grad.data() + r * n;
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += g[j];
            for (std::size_t j = 0; j < n; ++j) xn->grad[r * n + j] += g[j] - std::exp(y[j]) * gs;
        }
    });
}

// population-variance layer norm over the last axis
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    std::size_t d = x.shape().back();
    MAE_CHECK(d > 0, "layer_norm: last axis is empty");
    MAE_CHECK(eps >= 0, "layer_norm: eps must be non-negative");
    MAE_CHECK(gamma.rank() == 1 && gamma.size() == d && beta.rank() == 1 && beta.size() == d,
              "layer_norm: parameter shapes " << shape_str(gamma.shape()) << "/" << shape_str(beta.shape())
                                              << " do not match axis " << d);
    std::size_t rows = x.size() / d;
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = inv;
        for (std::size_t j = 0; j < d; ++j) {
            double h = (in[j] - mu) * inv;
            (*xhat)[r * d + j] = h;
            out[r * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return Tensor::make_op(x.shape(), std::move(out), {x, gamma, beta},
                           [xn, gn, bn, xhat, inv_std, rows, d](Tensor::Node& o) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = o.grad.data() + r * d;
            const double* h = xhat->data() + r * d;
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) gn->grad[j] += g[j] * h[j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) bn->grad[j] += g[j];
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                double mean_g = 0.0, mean_gh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    double gg = g[j] * gn->data[j];
                    mean_g += gg;
                    mean_gh += gg * h[j];
                }
                mean_g /= static_cast<double>(d);
                mean_gh /= static_cast<double>(d);
                double inv = (*inv_std)[r];
                for (std::size_t j = 0; j < d; ++j) {
                    double gg = g[j] * gn->data[j];
                    xn->grad[r * d + j] += inv * (gg - mean_g - h[j] * mean_gh);
                }
            }
        }
    });
}

// stochastic zeroing with kept-probability rescaling
inline Tensor dropout(const Tensor& x, double keep_prob, Rng& rng) {
    MAE_CHECK(keep_prob > 0.0 && keep_prob <= 1.0, "dropout: keep probability must be in (0,1]");
    if (keep_prob == 1.0) return scale(x, 1.0);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    double inv = 1.0 / keep_prob;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double m = rng.uniform() < keep_prob ? inv : 0.0;
        (*mask)[i] = m;
        out[i] = x.data()[i] * m;
    }
    auto xn = x.node();
    return Tensor::make_op(x.shape(), std::move(out), {x}, [xn, mask](Tensor::Node& o) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * (*mask)[i];
    });
}

// mean over masked patches of per-patch mean squared element error;
// gradient w.r.t. visible predictions is exactly zero
inline Tensor masked_mse(const Tensor& pred, const Tensor& target,
                         const std::vector<std::vector<std::uint8_t>>& masks) {
    MAE_CHECK(pred.rank() == 3, "masked_mse: expected [b,n,D] predictions");
    check_same_shape(pred, target, "masked_mse");
    std::size_t b = pred.shape()[0], n = pred.shape()[1], dd = pred.shape()[2];
    MAE_CHECK(masks.size() == b, "masked_mse: mask count " << masks.size() << " vs batch " << b);
    std::size_t n_masked = 0;
    for (const auto& m : masks) {
        MAE_CHECK(m.size() == n, "masked_mse: mask length " << m.size() << " vs patch count " << n);
        for (auto v : m) n_masked += v ? 1 : 0;
    }
    MAE_CHECK(n_masked >= 1, "masked_mse: no masked patches, loss is undefined");
    double loss = 0.0;
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t i = 0; i < n; ++i) {
            if (!masks[bi][i]) continue;
            const double* p = pred.data().data() + (bi * n + i) * dd;
            const double* t = target.data().data() + (bi * n + i) * dd;
            double acc = 0.0;
            for (std::size_t j = 0; j < dd; ++j) {
                double e = p[j] - t[j];
                acc += e * e;
            }
            loss += acc / static_cast<double>(dd);
        }
    loss /= static_cast<double>(n_masked);
    auto pn = pred.node(), tn = target.node();
    auto m = masks;
    return Tensor::make_op({1}, {loss}, {pred, target},
                           [pn, tn, m, b, n, dd, n_masked](Tensor::Node& o) {
        double c = 2.0 * o.grad[0] / (static_cast<double>(dd) * static_cast<double>(n_masked));
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t i = 0; i < n; ++i) {
                if (!m[bi][i]) continue;
                const double* p = pn->data.data() + (bi * n + i) * dd;
                const double* t = tn->data.data() + (bi * n + i) * dd;
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (std::size_t j = 0; j < dd; ++j)
                        pn->grad[(bi * n + i) * dd + j] += c * (p[j] - t[j]);
                }
                if (tn->requires_grad) {
                    tn->ensure_grad();
                    for (std::size_t j = 0; j < dd; ++j)
                        tn->grad[(bi * n + i) * dd + j] -= c * (p[j] - t[j]);
                }
            }
    });
}

}  // namespace mae
