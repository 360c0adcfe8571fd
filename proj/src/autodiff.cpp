#include "vtm/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "vtm/errors.hpp"
#include "vtm/kernels.hpp"

namespace vtm {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}
}  // namespace

Tensor& TapeNode::ensure_grad() {
    if (!has_grad()) grad = Tensor(value.shape());
    return grad;
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<TapeNode>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(TapeNode&)> backprop) {
    auto n = std::make_shared<TapeNode>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void accumulate(TapeNode& node, const Tensor& g) {
    Tensor& acc = node.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) acc[i] += g[i];
}

void backward(const Var& root) {
    check(root->value.numel() == 1, "backward: root must be scalar");
    // reverse post-order: every node runs after all of its consumers
    std::vector<TapeNode*> order;
    std::unordered_set<TapeNode*> seen;
    std::vector<std::pair<TapeNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TapeNode* p = node->parents[next++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TapeNode* n = *it;
        if (n->backprop && n->has_grad()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "add: shape mismatch");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](TapeNode& self) {
        if (a->requires_grad) accumulate(*a, self.grad);
        if (b->requires_grad) accumulate(*b, self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "sub: shape mismatch");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](TapeNode& self) {
        if (a->requires_grad) accumulate(*a, self.grad);
        if (b->requires_grad) {
            Tensor& acc = b->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check(a->value.same_shape(b->value), "mul: shape mismatch");
    Tensor out(a->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
    return make_op(std::move(out), {a, b}, [a, b](TapeNode& self) {
        if (a->requires_grad) {
            Tensor& acc = a->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& acc = b->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] += self.grad[i] * a->value[i];
        }
    });
}

Var scale(const Var& x, double c) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * c;
    return make_op(std::move(out), {x}, [x, c](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] += self.grad[i] * c;
    });
}

Var add_bcast(const Var& x, const Var& b) {
    const int64_t bn = b->value.numel();
    check(bn > 0 && x->value.numel() % bn == 0, "add_bcast: size mismatch");
    {
        // b's shape must be a suffix of x's shape
        int xr = x->value.rank(), br = b->value.rank();
        check(br <= xr, "add_bcast: rank mismatch");
        for (int i = 0; i < br; ++i)
            check(b->value.dim(br - 1 - i) == x->value.dim(xr - 1 - i), "add_bcast: shape suffix mismatch");
    }
    const int64_t rep = x->value.numel() / bn;
    Tensor out(x->value.shape());
    for (int64_t r = 0; r < rep; ++r)
        for (int64_t i = 0; i < bn; ++i) out[r * bn + i] = x->value[r * bn + i] + b->value[i];
    return make_op(std::move(out), {x, b}, [x, b, rep, bn](TapeNode& self) {
        if (x->requires_grad) accumulate(*x, self.grad);
        if (b->requires_grad) {
            Tensor& acc = b->ensure_grad();
            for (int64_t r = 0; r < rep; ++r)
                for (int64_t i = 0; i < bn; ++i) acc[i] += self.grad[r * bn + i];
        }
    });
}

Var mul_scalar(const Var& x, const Var& s) {
    check(s->value.numel() == 1, "mul_scalar: s must be scalar");
    const double sv = s->value[0];
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] * sv;
    return make_op(std::move(out), {x, s}, [x, s, sv](TapeNode& self) {
        if (x->requires_grad) {
            Tensor& acc = x->ensure_grad();
            for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] += self.grad[i] * sv;
        }
        if (s->requires_grad) {
            double d = 0.0;
            for (int64_t i = 0; i < self.grad.numel(); ++i) d += self.grad[i] * x->value[i];
            s->ensure_grad()[0] += d;
        }
    });
}

Var exp_v(const Var& x) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(x->value[i]);
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) acc[i] += self.grad[i] * self.value[i];
    });
}

Var clamp_max(const Var& x, double hi) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(x->value[i], hi);
    return make_op(std::move(out), {x}, [x, hi](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i)
            if (x->value[i] <= hi) acc[i] += self.grad[i];
    });
}

Var gelu(const Var& x) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) {
        double v = x->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            double v = x->value[i];
            double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            acc[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Var sigmoid_v(const Var& x) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            double y = self.value[i];
            acc[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Var tanh_v(const Var& x) {
    Tensor out(x->value.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x->value[i]);
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < self.grad.numel(); ++i) {
            double y = self.value[i];
            acc[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

// --------------------------------------------------------------------- shape

Var reshape(const Var& x, std::vector<int64_t> shape) {
    check(shape_numel(shape) == x->value.numel(), "reshape: numel mismatch");
    Tensor out = x->value;
    out = Tensor::from(shape, std::vector<double>(out.data(), out.data() + out.numel()));
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        accumulate(*x, Tensor::from(x->value.shape(),
                                    std::vector<double>(self.grad.data(), self.grad.data() + self.grad.numel())));
    });
}

namespace {
Tensor transpose_last2_tensor(const Tensor& x) {
    int r = x.rank();
    check(r >= 2, "transpose_last2: rank < 2");
    int64_t m = x.dim(r - 2), n = x.dim(r - 1);
    int64_t batch = x.numel() / (m * n);
    std::vector<int64_t> shape = x.shape();
    std::swap(shape[r - 2], shape[r - 1]);
    Tensor out(shape);
    for (int64_t b = 0; b < batch; ++b) {
        const double* xi = x.data() + b * m * n;
        double* yo = out.data() + b * m * n;
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) yo[j * m + i] = xi[i * n + j];
    }
    return out;
}

Tensor permute_tensor(const Tensor& x, const std::vector<int>& axes) {
    int r = x.rank();
    check(static_cast<int>(axes.size()) == r && r <= 4, "permute: bad axes");
    std::vector<int64_t> in_shape = x.shape();
    std::vector<int64_t> out_shape(r);
    for (int i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
    std::vector<int64_t> in_strides(r, 1);
    for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    std::vector<int64_t> out_strides(r, 1);
    for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    Tensor out(out_shape);
    for (int64_t o = 0; o < out.numel(); ++o) {
        int64_t rem = o;
        int64_t src = 0;
        for (int i = 0; i < r; ++i) {
            int64_t c = rem / out_strides[i];
            rem -= c * out_strides[i];
            src += c * in_strides[axes[i]];
        }
        out[o] = x[src];
    }
    return out;
}
}  // namespace

Var transpose2d(const Var& x) {
    check(x->value.rank() == 2, "transpose2d: rank != 2");
    return transpose_last2(x);
}

Var transpose_last2(const Var& x) {
    Tensor out = transpose_last2_tensor(x->value);
    return make_op(std::move(out), {x}, [x](TapeNode& self) {
        accumulate(*x, transpose_last2_tensor(self.grad));
    });
}

Var permute(const Var& x, std::vector<int> axes) {
    Tensor out = permute_tensor(x->value, axes);
    std::vector<int> inv(axes.size());
    for (size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = static_cast<int>(i);
    return make_op(std::move(out), {x}, [x, inv](TapeNode& self) {
        accumulate(*x, permute_tensor(self.grad, inv));
    });
}

Var slice_axis1(const Var& x, int64_t start, int64_t len) {
    check(x->value.rank() == 3, "slice_axis1: rank != 3");
    int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    check(start >= 0 && start + len <= T, "slice_axis1: out of range");
    Tensor out({S, len, W});
    for (int64_t s = 0; s < S; ++s)
        for (int64_t t = 0; t < len; ++t)
            for (int64_t w = 0; w < W; ++w)
                out[(s * len + t) * W + w] = x->value[(s * T + start + t) * W + w];
    return make_op(std::move(out), {x}, [x, S, T, W, start, len](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t s = 0; s < S; ++s)
            for (int64_t t = 0; t < len; ++t)
                for (int64_t w = 0; w < W; ++w)
                    acc[(s * T + start + t) * W + w] += self.grad[(s * len + t) * W + w];
    });
}

Var slice_cols(const Var& x, int64_t start, int64_t len) {
    check(x->value.rank() == 2, "slice_cols: rank != 2");
    int64_t N = x->value.dim(0), D = x->value.dim(1);
    check(start >= 0 && start + len <= D, "slice_cols: out of range");
    Tensor out({N, len});
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < len; ++j) out[i * len + j] = x->value[i * D + start + j];
    return make_op(std::move(out), {x}, [x, N, D, start, len](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < len; ++j) acc[i * D + start + j] += self.grad[i * len + j];
    });
}

Var concat_axis1(const Var& a, const Var& b) {
    check(a->value.rank() == 3 && b->value.rank() == 3, "concat_axis1: rank != 3");
    int64_t S = a->value.dim(0), T1 = a->value.dim(1), W = a->value.dim(2);
    int64_t T2 = b->value.dim(1);
    check(b->value.dim(0) == S && b->value.dim(2) == W, "concat_axis1: shape mismatch");
    Tensor out({S, T1 + T2, W});
    for (int64_t s = 0; s < S; ++s) {
        for (int64_t t = 0; t < T1; ++t)
            for (int64_t w = 0; w < W; ++w)
                out[(s * (T1 + T2) + t) * W + w] = a->value[(s * T1 + t) * W + w];
        for (int64_t t = 0; t < T2; ++t)
            for (int64_t w = 0; w < W; ++w)
                out[(s * (T1 + T2) + T1 + t) * W + w] = b->value[(s * T2 + t) * W + w];
    }
    return make_op(std::move(out), {a, b}, [a, b, S, T1, T2, W](TapeNode& self) {
        if (a->requires_grad) {
            Tensor& acc = a->ensure_grad();
            for (int64_t s = 0; s < S; ++s)
                for (int64_t t = 0; t < T1; ++t)
                    for (int64_t w = 0; w < W; ++w)
                        acc[(s * T1 + t) * W + w] += self.grad[(s * (T1 + T2) + t) * W + w];
        }
        if (b->requires_grad) {
            Tensor& acc = b->ensure_grad();
            for (int64_t s = 0; s < S; ++s)
                for (int64_t t = 0; t < T2; ++t)
                    for (int64_t w = 0; w < W; ++w)
                        acc[(s * T2 + t) * W + w] += self.grad[(s * (T1 + T2) + T1 + t) * W + w];
        }
    });
}

Var expand_rows(const Var& v, int64_t n) {
    check(v->value.rank() == 1, "expand_rows: rank != 1");
    int64_t W = v->value.dim(0);
    Tensor out({n, W});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t w = 0; w < W; ++w) out[i * W + w] = v->value[w];
    return make_op(std::move(out), {v}, [v, n, W](TapeNode& self) {
        Tensor& acc = v->ensure_grad();
        for (int64_t w = 0; w < W; ++w) {
            double s = 0.0;
            for (int64_t i = 0; i < n; ++i) s += self.grad[i * W + w];
            acc[w] += s;
        }
    });
}

Var select_axis1(const Var& x, int64_t index) {
    check(x->value.rank() == 3, "select_axis1: rank != 3");
    int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    check(index >= 0 && index < T, "select_axis1: out of range");
    Tensor out({S, W});
    for (int64_t s = 0; s < S; ++s)
        for (int64_t w = 0; w < W; ++w) out[s * W + w] = x->value[(s * T + index) * W + w];
    return make_op(std::move(out), {x}, [x, S, T, W, index](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t s = 0; s < S; ++s)
            for (int64_t w = 0; w < W; ++w) acc[(s * T + index) * W + w] += self.grad[s * W + w];
    });
}

Var select_per_row(const Var& x, std::vector<int64_t> pos) {
    check(x->value.rank() == 3, "select_per_row: rank != 3");
    int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    check(static_cast<int64_t>(pos.size()) == S, "select_per_row: pos size mismatch");
    for (int64_t p : pos)
        if (p < 0 || p >= T) throw std::out_of_range("select_per_row: position out of range");
    Tensor out({S, W});
    for (int64_t s = 0; s < S; ++s)
        for (int64_t w = 0; w < W; ++w) out[s * W + w] = x->value[(s * T + pos[s]) * W + w];
    return make_op(std::move(out), {x}, [x, S, T, W, pos](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t s = 0; s < S; ++s)
            for (int64_t w = 0; w < W; ++w) acc[(s * T + pos[s]) * W + w] += self.grad[s * W + w];
    });
}

Var gather_rows(const Var& table, std::vector<int64_t> ids) {
    check(table->value.rank() == 2, "gather_rows: table rank != 2");
    int64_t V = table->value.dim(0), W = table->value.dim(1);
    for (int64_t id : ids)
        if (id < 0 || id >= V) throw std::out_of_range("gather_rows: id out of range");
    int64_t n = static_cast<int64_t>(ids.size());
    Tensor out({n, W});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t w = 0; w < W; ++w) out[i * W + w] = table->value[ids[i] * W + w];
    return make_op(std::move(out), {table}, [table, ids, n, W](TapeNode& self) {
        Tensor& acc = table->ensure_grad();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t w = 0; w < W; ++w) acc[ids[i] * W + w] += self.grad[i * W + w];
    });
}

// ---------------------------------------------------- reductions / linear alg

Var sum_all(const Var& x) {
    double s = 0.0;
    for (int64_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
    return make_op(Tensor::scalar(s), {x}, [x](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += self.grad[0];
    });
}

Var mean_axis1(const Var& x) {
    check(x->value.rank() == 3, "mean_axis1: rank != 3");
    int64_t S = x->value.dim(0), T = x->value.dim(1), W = x->value.dim(2);
    Tensor out({S, W});
    for (int64_t s = 0; s < S; ++s)
        for (int64_t w = 0; w < W; ++w) {
            double acc = 0.0;
            for (int64_t t = 0; t < T; ++t) acc += x->value[(s * T + t) * W + w];
            out[s * W + w] = acc / static_cast<double>(T);
        }
    return make_op(std::move(out), {x}, [x, S, T, W](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        const double inv = 1.0 / static_cast<double>(T);
        for (int64_t s = 0; s < S; ++s)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t w = 0; w < W; ++w)
                    acc[(s * T + t) * W + w] += self.grad[s * W + w] * inv;
    });
}

Var matmul(const Var& a, const Var& b) {
    check(a->value.rank() == 2 && b->value.rank() == 2, "matmul: rank != 2");
    int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    check(b->value.dim(0) == k, "matmul: inner dim mismatch");
    Tensor out({m, n});
    kernels::matmul_nn(a->value.data(), b->value.data(), out.data(), m, k, n);
    return make_op(std::move(out), {a, b}, [a, b, m, k, n](TapeNode& self) {
        if (a->requires_grad) {
            Tensor da({m, k});
            kernels::matmul_nt(self.grad.data(), b->value.data(), da.data(), m, n, k);
            accumulate(*a, da);
        }
        if (b->requires_grad) {
            Tensor db({k, n});
            kernels::matmul_tn(a->value.data(), self.grad.data(), db.data(), k, m, n);
            accumulate(*b, db);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    check(a->value.rank() == 3 && b->value.rank() == 3, "bmm: rank != 3");
    int64_t B = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2), n = b->value.dim(2);
    check(b->value.dim(0) == B && b->value.dim(1) == k, "bmm: shape mismatch");
    Tensor out({B, m, n});
    kernels::bmm_nn(a->value.data(), b->value.data(), out.data(), B, m, k, n);
    return make_op(std::move(out), {a, b}, [a, b, B, m, k, n](TapeNode& self) {
        if (a->requires_grad) {
            Tensor da({B, m, k});
            kernels::bmm_nt(self.grad.data(), b->value.data(), da.data(), B, m, n, k);
            accumulate(*a, da);
        }
        if (b->requires_grad) {
            Tensor db({B, k, n});
            kernels::bmm_tn(a->value.data(), self.grad.data(), db.data(), B, k, m, n);
            accumulate(*b, db);
        }
    });
}

Var softmax_last(const Var& x) {
    int64_t cols = x->value.dim(x->value.rank() - 1);
    int64_t rows = x->value.numel() / cols;
    Tensor out(x->value.shape());
    kernels::softmax_rows(x->value.data(), out.data(), rows, cols);
    return make_op(std::move(out), {x}, [x, rows, cols](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < rows; ++i) {
            const double* y = self.value.data() + i * cols;
            const double* g = self.grad.data() + i * cols;
            double dot = 0.0;
            for (int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
            for (int64_t j = 0; j < cols; ++j) acc[i * cols + j] += y[j] * (g[j] - dot);
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    int64_t W = x->value.dim(x->value.rank() - 1);
    check(gamma->value.numel() == W && beta->value.numel() == W, "layer_norm: param size mismatch");
    int64_t rows = x->value.numel() / W;
    Tensor out(x->value.shape());
    Tensor xhat(x->value.shape());
    Tensor inv_std({rows});
    for (int64_t i = 0; i < rows; ++i) {
        const double* xi = x->value.data() + i * W;
        double mu = 0.0;
        for (int64_t j = 0; j < W; ++j) mu += xi[j];
        mu /= static_cast<double>(W);
        double var = 0.0;
        for (int64_t j = 0; j < W; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= static_cast<double>(W);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (int64_t j = 0; j < W; ++j) {
            double h = (xi[j] - mu) * is;
            xhat[i * W + j] = h;
            out[i * W + j] = h * gamma->value[j] + beta->value[j];
        }
    }
    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto inv_std_p = std::make_shared<Tensor>(std::move(inv_std));
    return make_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat_p, inv_std_p, rows, W](TapeNode& self) {
        const Tensor& xh = *xhat_p;
        if (gamma->requires_grad) {
            Tensor& gg = gamma->ensure_grad();
            for (int64_t j = 0; j < W; ++j) {
                double s = 0.0;
                for (int64_t i = 0; i < rows; ++i) s += self.grad[i * W + j] * xh[i * W + j];
                gg[j] += s;
            }
        }
        if (beta->requires_grad) {
            Tensor& gb = beta->ensure_grad();
            for (int64_t j = 0; j < W; ++j) {
                double s = 0.0;
                for (int64_t i = 0; i < rows; ++i) s += self.grad[i * W + j];
                gb[j] += s;
            }
        }
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (int64_t j = 0; j < W; ++j) {
                    double gy = self.grad[i * W + j] * gamma->value[j];
                    m1 += gy;
                    m2 += gy * xh[i * W + j];
                }
                m1 /= static_cast<double>(W);
                m2 /= static_cast<double>(W);
                for (int64_t j = 0; j < W; ++j) {
                    double gy = self.grad[i * W + j] * gamma->value[j];
                    gx[i * W + j] += (gy - m1 - xh[i * W + j] * m2) * (*inv_std_p)[i];
                }
            }
        }
    });
}

Var l2_normalize_rows(const Var& x) {
    check(x->value.rank() == 2, "l2_normalize_rows: rank != 2");
    int64_t N = x->value.dim(0), D = x->value.dim(1);
    Tensor out({N, D});
    Tensor norms({N});
    for (int64_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < D; ++j) s += x->value[i * D + j] * x->value[i * D + j];
        double r = std::sqrt(s);
        if (r < 1e-12) throw DegenerateEmbeddingError("l2_normalize_rows: zero-norm row " + std::to_string(i));
        norms[i] = r;
        for (int64_t j = 0; j < D; ++j) out[i * D + j] = x->value[i * D + j] / r;
    }
    auto norms_p = std::make_shared<Tensor>(std::move(norms));
    return make_op(std::move(out), {x}, [x, norms_p, N, D](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        for (int64_t i = 0; i < N; ++i) {
            const double* y = self.value.data() + i * D;
            const double* g = self.grad.data() + i * D;
            double dot = 0.0;
            for (int64_t j = 0; j < D; ++j) dot += g[j] * y[j];
            double inv_r = 1.0 / (*norms_p)[i];
            for (int64_t j = 0; j < D; ++j) acc[i * D + j] += (g[j] - y[j] * dot) * inv_r;
        }
    });
}

// ---------------------------------------------------------------- domain ops

Var temporal_shift_op(const Var& x, int64_t clips, int64_t frames, int64_t fold) {
    check(x->value.rank() == 3, "temporal_shift: rank != 3");
    int64_t tokens = x->value.dim(1), width = x->value.dim(2);
    check(x->value.dim(0) == clips * frames, "temporal_shift: dim0 != clips*frames");
    check(2 * fold <= width, "temporal_shift: fold too large");
    Tensor out(x->value.shape());
    kernels::temporal_shift(x->value.data(), out.data(), clips, frames, tokens, width, fold);
    return make_op(std::move(out), {x}, [x, clips, frames, tokens, width, fold](TapeNode& self) {
        Tensor& acc = x->ensure_grad();
        // transpose of the shift permutation: fold roles swap direction
        for (int64_t clip = 0; clip < clips; ++clip)
            for (int64_t f = 0; f < frames; ++f)
                for (int64_t t = 0; t < tokens; ++t) {
                    double* d = acc.data() + ((clip * frames + f) * tokens + t) * width;
                    const double* g_next = (f + 1 < frames)
                        ? self.grad.data() + ((clip * frames + f + 1) * tokens + t) * width : nullptr;
                    const double* g_prev = (f > 0)
                        ? self.grad.data() + ((clip * frames + f - 1) * tokens + t) * width : nullptr;
                    const double* g_cur = self.grad.data() + ((clip * frames + f) * tokens + t) * width;
                    for (int64_t c = 0; c < fold; ++c)
                        if (g_next) d[c] += g_next[c];
                    for (int64_t c = fold; c < 2 * fold; ++c)
                        if (g_prev) d[c] += g_prev[c];
                    for (int64_t c = 2 * fold; c < width; ++c) d[c] += g_cur[c];
                }
    });
}

Var conv1d_time(const Var& u, const Var& kernel, const Var& bias) {
    check(u->value.rank() == 3 && kernel->value.rank() == 3, "conv1d_time: bad ranks");
    int64_t B = u->value.dim(0), F = u->value.dim(1), din = u->value.dim(2);
    int64_t dout = kernel->value.dim(2);
    check(kernel->value.dim(0) == 3 && kernel->value.dim(1) == din, "conv1d_time: kernel shape");
    check(bias->value.numel() == dout, "conv1d_time: bias shape");
    Tensor out({B, F, dout});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < F; ++t)
            for (int64_t o = 0; o < dout; ++o) {
                double acc = bias->value[o];
                for (int64_t dt = 0; dt < 3; ++dt) {
                    int64_t s = t + dt - 1;
                    if (s < 0 || s >= F) continue;
                    const double* ur = u->value.data() + (b * F + s) * din;
                    const double* kr = kernel->value.data() + dt * din * dout;
                    for (int64_t i = 0; i < din; ++i) acc += kr[i * dout + o] * ur[i];
                }
                out[(b * F + t) * dout + o] = acc;
            }
    return make_op(std::move(out), {u, kernel, bias},
                   [u, kernel, bias, B, F, din, dout](TapeNode& self) {
        if (bias->requires_grad) {
            Tensor& gb = bias->ensure_grad();
            for (int64_t o = 0; o < dout; ++o) {
                double s = 0.0;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < F; ++t) s += self.grad[(b * F + t) * dout + o];
                gb[o] += s;
            }
        }
        if (kernel->requires_grad) {
            Tensor& gk = kernel->ensure_grad();
            for (int64_t dt = 0; dt < 3; ++dt)
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < F; ++t) {
                        int64_t s = t + dt - 1;
                        if (s < 0 || s >= F) continue;
                        const double* ur = u->value.data() + (b * F + s) * din;
                        const double* gr = self.grad.data() + (b * F + t) * dout;
                        for (int64_t i = 0; i < din; ++i)
                            for (int64_t o = 0; o < dout; ++o)
                                gk[(dt * din + i) * dout + o] += ur[i] * gr[o];
                    }
        }
        if (u->requires_grad) {
            Tensor& gu = u->ensure_grad();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t t = 0; t < F; ++t) {
                    const double* gr = self.grad.data() + (b * F + t) * dout;
                    for (int64_t dt = 0; dt < 3; ++dt) {
                        int64_t s = t + dt - 1;
                        if (s < 0 || s >= F) continue;
                        const double* kr = kernel->value.data() + dt * din * dout;
                        double* gus = gu.data() + (b * F + s) * din;
                        for (int64_t i = 0; i < din; ++i) {
                            double acc = 0.0;
                            for (int64_t o = 0; o < dout; ++o) acc += kr[i * dout + o] * gr[o];
                            gus[i] += acc;
                        }
                    }
                }
        }
    });
}

Var add_frame_embedding(const Var& x, const Var& e, int64_t frames) {
    check(x->value.rank() == 3 && e->value.rank() == 2, "add_frame_embedding: bad ranks");
    int64_t S = x->value.dim(0), P = x->value.dim(1), W = x->value.dim(2);
    check(S % frames == 0 && e->value.dim(0) == frames && e->value.dim(1) == W,
          "add_frame_embedding: shape mismatch");
    Tensor out(x->value.shape());
    for (int64_t s = 0; s < S; ++s) {
        const double* er = e->value.data() + (s % frames) * W;
        for (int64_t p = 0; p < P; ++p)
            for (int64_t w = 0; w < W; ++w)
                out[(s * P + p) * W + w] = x->value[(s * P + p) * W + w] + er[w];
    }
    return make_op(std::move(out), {x, e}, [x, e, S, P, W, frames](TapeNode& self) {
        if (x->requires_grad) accumulate(*x, self.grad);
        if (e->requires_grad) {
            Tensor& ge = e->ensure_grad();
            for (int64_t s = 0; s < S; ++s) {
                double* er = ge.data() + (s % frames) * W;
                for (int64_t p = 0; p < P; ++p)
                    for (int64_t w = 0; w < W; ++w) er[w] += self.grad[(s * P + p) * W + w];
            }
        }
    });
}

Var kl_loss_from_logits(const Var& logits, const Tensor& q) {
    check(logits->value.rank() == 2, "kl_loss_from_logits: rank != 2");
    check(logits->value.same_shape(q), "kl_loss_from_logits: q shape mismatch");
    int64_t N = logits->value.dim(0), M = logits->value.dim(1);
    Tensor p({N, M});
    kernels::softmax_rows(logits->value.data(), p.data(), N, M);
    double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double* z = logits->value.data() + i * M;
        double mx = z[0];
        for (int64_t j = 1; j < M; ++j) mx = std::max(mx, z[j]);
        double lse = 0.0;
        for (int64_t j = 0; j < M; ++j) lse += std::exp(z[j] - mx);
        lse = mx + std::log(lse);
        for (int64_t j = 0; j < M; ++j) {
            double qv = q[i * M + j];
            if (qv > 0.0) loss += qv * (std::log(qv) - (z[j] - lse));
        }
    }
    loss /= static_cast<double>(N);
    auto p_ptr = std::make_shared<Tensor>(std::move(p));
    auto q_ptr = std::make_shared<Tensor>(q);
    return make_op(Tensor::scalar(loss), {logits}, [logits, p_ptr, q_ptr, N, M](TapeNode& self) {
        Tensor& acc = logits->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(N);
        for (int64_t i = 0; i < N; ++i) {
            double qsum = 0.0;
            for (int64_t j = 0; j < M; ++j) qsum += (*q_ptr)[i * M + j];
            for (int64_t j = 0; j < M; ++j)
                acc[i * M + j] += g * ((*p_ptr)[i * M + j] * qsum - (*q_ptr)[i * M + j]);
        }
    });
}

}  // namespace vtm
