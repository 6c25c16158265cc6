#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "usdrl/tensor.hpp"

namespace usdrl {

/// Eager reverse-mode autodiff over 2-D matrices. Values are computed when an
/// op is built; gradients flow when Graph::backward runs. Creation order is a
/// valid topological order, so backward is a single reverse sweep.
template <class Real>
class Graph {
public:
    struct Node {
        Mat<Real> value;
        Mat<Real> grad;
        bool needs_grad = false;
        std::string name;  // leaves only; empty for interior nodes
        std::function<void(Node&)> backprop;
    };
    using N = Node*;

    N leaf(Mat<Real> v, bool needs_grad = true, std::string name = {}) {
        N n = make();
        n->value = std::move(v);
        n->needs_grad = needs_grad;
        n->name = std::move(name);
        return n;
    }
    N constant(Mat<Real> v) { return leaf(std::move(v), false); }
    N scalar(Real v) { return constant(Mat<Real>(1, 1, v)); }

    // ---- elementwise binary ops; rhs may broadcast as [r][1], [1][c] or [1][1]

    N add(N a, N b) { return binary(a, b, BinOp::Add); }
    N sub(N a, N b) { return binary(a, b, BinOp::Sub); }
    N mul(N a, N b) { return binary(a, b, BinOp::Mul); }
    N div(N a, N b) { return binary(a, b, BinOp::Div); }

    N scale(N a, Real c) {
        N out = make();
        out->value = a->value;
        for (auto& v : out->value.vec()) v *= c;
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, c](Node& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += c * self.grad[i];
            };
        return out;
    }

    N add_scalar(N a, Real c) {
        N out = make();
        out->value = a->value;
        for (auto& v : out->value.vec()) v += c;
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a](Node& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
            };
        return out;
    }

    N matmul(N a, N b) {
        N out = make();
        matmul_into(out->value, a->value, b->value);
        out->needs_grad = a->needs_grad || b->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, b](Node& self) {
                if (a->needs_grad) {
                    Mat<Real> bt = b->value.transposed();
                    matmul_into(a->grad, self.grad, bt, /*accumulate=*/true);
                }
                if (b->needs_grad) {
                    Mat<Real> at = a->value.transposed();
                    matmul_into(b->grad, at, self.grad, /*accumulate=*/true);
                }
            };
        return out;
    }

    N transpose(N a) {
        N out = make();
        out->value = a->value.transposed();
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a](Node& self) {
                for (std::size_t r = 0; r < self.grad.rows(); ++r)
                    for (std::size_t c = 0; c < self.grad.cols(); ++c)
                        a->grad(c, r) += self.grad(r, c);
            };
        return out;
    }

    N relu(N a) {
        N out = make();
        out->value = a->value;
        std::uint64_t mask_hash = 1469598103934665603ULL;
        for (auto& v : out->value.vec()) {
            mask_hash = (mask_hash ^ static_cast<std::uint64_t>(v > Real(0))) *
                        1099511628211ULL;
            v = v > Real(0) ? v : Real(0);
        }
        note_pattern(mask_hash);
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a](Node& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    if (a->value[i] > Real(0)) a->grad[i] += self.grad[i];
            };
        return out;
    }

    /// Elementwise square root. Inputs must be nonnegative; the derivative at
    /// exactly zero is left infinite (callers keep a positive floor underneath).
    N sqrt_e(N a) {
        N out = make();
        out->value = a->value;
        for (auto& v : out->value.vec()) v = static_cast<Real>(std::sqrt(static_cast<double>(v)));
        out->needs_grad = a->needs_grad;
        if (out->needs_grad) {
            N self_ref = out;
            out->backprop = [a, self_ref](Node& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    a->grad[i] += self.grad[i] / (Real(2) * self_ref->value[i]);
            };
        }
        return out;
    }

    /// Row-wise softmax. With `causal`, entry (r, c) for c > r is masked out.
    N softmax_rows(N a, bool causal = false) {
        N out = make();
        const std::size_t rows = a->value.rows(), cols = a->value.cols();
        out->value = Mat<Real>(rows, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t lim = causal ? std::min(r + 1, cols) : cols;
            Real mx = -std::numeric_limits<Real>::infinity();
            for (std::size_t c = 0; c < lim; ++c) mx = std::max(mx, a->value(r, c));
            Real sum = 0;
            for (std::size_t c = 0; c < lim; ++c) {
                const Real e = static_cast<Real>(std::exp(static_cast<double>(a->value(r, c) - mx)));
                out->value(r, c) = e;
                sum += e;
            }
            for (std::size_t c = 0; c < lim; ++c) out->value(r, c) /= sum;
            for (std::size_t c = lim; c < cols; ++c) out->value(r, c) = Real(0);
        }
        out->needs_grad = a->needs_grad;
        if (out->needs_grad) {
            N self_ref = out;
            out->backprop = [a, self_ref](Node& self) {
                const std::size_t rows = self.grad.rows(), cols = self.grad.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    Real dot = 0;
                    for (std::size_t c = 0; c < cols; ++c)
                        dot += self.grad(r, c) * self_ref->value(r, c);
                    for (std::size_t c = 0; c < cols; ++c)
                        a->grad(r, c) += (self.grad(r, c) - dot) * self_ref->value(r, c);
                }
            };
        }
        return out;
    }

    /// Depthwise 1-D convolution down the rows: out[l][c] = sum_j k[j][c] *
    /// x[l + j - off][c], zero outside. Non-causal uses centered same-padding
    /// (odd kernel); causal left-pads so the last tap reads the current row.
    N conv1d_depthwise(N x, N k, bool causal) {
        const std::size_t L = x->value.rows(), C = x->value.cols(), K = k->value.rows();
        if (k->value.cols() != C)
            throw std::invalid_argument("conv1d_depthwise: kernel channel count mismatch");
        if (!causal && K % 2 == 0)
            throw std::invalid_argument("conv1d_depthwise: non-causal kernel must have odd length");
        const std::ptrdiff_t off = causal ? static_cast<std::ptrdiff_t>(K - 1)
                                          : static_cast<std::ptrdiff_t>(K / 2);
        N out = make();
        out->value = Mat<Real>(L, C);
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - off;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                for (std::size_t c = 0; c < C; ++c)
                    out->value(l, c) += k->value(j, c) * x->value(static_cast<std::size_t>(src), c);
            }
        out->needs_grad = x->needs_grad || k->needs_grad;
        if (out->needs_grad)
            out->backprop = [x, k, off, L, C, K](Node& self) {
                for (std::size_t l = 0; l < L; ++l)
                    for (std::size_t j = 0; j < K; ++j) {
                        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(l + j) - off;
                        if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                        const auto s = static_cast<std::size_t>(src);
                        for (std::size_t c = 0; c < C; ++c) {
                            if (x->needs_grad) x->grad(s, c) += self.grad(l, c) * k->value(j, c);
                            if (k->needs_grad) k->grad(j, c) += self.grad(l, c) * x->value(s, c);
                        }
                    }
            };
        return out;
    }

    /// Column-wise max over rows -> [1][C]. Ties route to the lowest row.
    N maxpool_rows(N a) {
        const std::size_t rows = a->value.rows(), cols = a->value.cols();
        if (rows == 0) throw std::invalid_argument("maxpool_rows: empty input");
        N out = make();
        out->value = Mat<Real>(1, cols);
        auto argmax = std::make_shared<std::vector<std::size_t>>(cols, 0);
        std::uint64_t arg_hash = 1469598103934665603ULL;
        for (std::size_t c = 0; c < cols; ++c) {
            Real best = a->value(0, c);
            std::size_t bi = 0;
            for (std::size_t r = 1; r < rows; ++r)
                if (a->value(r, c) > best) {
                    best = a->value(r, c);
                    bi = r;
                }
            out->value(0, c) = best;
            (*argmax)[c] = bi;
            arg_hash = (arg_hash ^ static_cast<std::uint64_t>(bi)) * 1099511628211ULL;
        }
        note_pattern(arg_hash);
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, argmax](Node& self) {
                for (std::size_t c = 0; c < self.grad.cols(); ++c)
                    a->grad((*argmax)[c], c) += self.grad(0, c);
            };
        return out;
    }

    N concat_cols(N a, N b) {
        if (a->value.rows() != b->value.rows())
            throw std::invalid_argument("concat_cols: row count mismatch");
        const std::size_t rows = a->value.rows(), ca = a->value.cols(), cb = b->value.cols();
        N out = make();
        out->value = Mat<Real>(rows, ca + cb);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < ca; ++c) out->value(r, c) = a->value(r, c);
            for (std::size_t c = 0; c < cb; ++c) out->value(r, ca + c) = b->value(r, c);
        }
        out->needs_grad = a->needs_grad || b->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, b, ca, cb](Node& self) {
                for (std::size_t r = 0; r < self.grad.rows(); ++r) {
                    if (a->needs_grad)
                        for (std::size_t c = 0; c < ca; ++c) a->grad(r, c) += self.grad(r, c);
                    if (b->needs_grad)
                        for (std::size_t c = 0; c < cb; ++c) b->grad(r, c) += self.grad(r, ca + c);
                }
            };
        return out;
    }

    /// Stacks same-width blocks vertically.
    N concat_rows(std::vector<N> parts) {
        if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
        const std::size_t cols = parts[0]->value.cols();
        std::size_t rows = 0;
        for (N p : parts) {
            if (p->value.cols() != cols)
                throw std::invalid_argument("concat_rows: column count mismatch");
            rows += p->value.rows();
        }
        N out = make();
        out->value = Mat<Real>(rows, cols);
        std::size_t r0 = 0;
        for (N p : parts) {
            for (std::size_t r = 0; r < p->value.rows(); ++r)
                for (std::size_t c = 0; c < cols; ++c) out->value(r0 + r, c) = p->value(r, c);
            r0 += p->value.rows();
            out->needs_grad = out->needs_grad || p->needs_grad;
        }
        if (out->needs_grad) {
            auto ps = std::make_shared<std::vector<N>>(std::move(parts));
            out->backprop = [ps, cols](Node& self) {
                std::size_t r0 = 0;
                for (N p : *ps) {
                    if (p->needs_grad)
                        for (std::size_t r = 0; r < p->value.rows(); ++r)
                            for (std::size_t c = 0; c < cols; ++c)
                                p->grad(r, c) += self.grad(r0 + r, c);
                    r0 += p->value.rows();
                }
            };
        }
        return out;
    }

    /// Copies the column range [c0, c1).
    N slice_cols(N a, std::size_t c0, std::size_t c1) {
        if (c0 >= c1 || c1 > a->value.cols())
            throw std::invalid_argument("slice_cols: bad column range");
        const std::size_t rows = a->value.rows(), w = c1 - c0;
        N out = make();
        out->value = Mat<Real>(rows, w);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) out->value(r, c) = a->value(r, c0 + c);
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, c0, w](Node& self) {
                for (std::size_t r = 0; r < self.grad.rows(); ++r)
                    for (std::size_t c = 0; c < w; ++c) a->grad(r, c0 + c) += self.grad(r, c);
            };
        return out;
    }

    N sum_all(N a) {
        N out = make();
        Real s = 0;
        for (Real v : a->value.vec()) s += v;
        out->value = Mat<Real>(1, 1, s);
        out->needs_grad = a->needs_grad;
        if (out->needs_grad)
            out->backprop = [a](Node& self) {
                const Real g = self.grad(0, 0);
                for (auto& gv : a->grad.vec()) gv += g;
            };
        return out;
    }

    /// Elementwise mean over a list of same-shape nodes.
    N mean_of(std::vector<N> parts) {
        if (parts.empty()) throw std::invalid_argument("mean_of: no parts");
        N out = make();
        out->value = parts[0]->value;
        for (std::size_t i = 1; i < parts.size(); ++i) {
            if (!parts[i]->value.same_shape(out->value))
                throw std::invalid_argument("mean_of: shape mismatch");
            for (std::size_t j = 0; j < out->value.size(); ++j)
                out->value[j] += parts[i]->value[j];
        }
        const Real inv = Real(1) / static_cast<Real>(parts.size());
        for (auto& v : out->value.vec()) v *= inv;
        for (N p : parts) out->needs_grad = out->needs_grad || p->needs_grad;
        if (out->needs_grad) {
            auto ps = std::make_shared<std::vector<N>>(std::move(parts));
            out->backprop = [ps, inv](Node& self) {
                for (N p : *ps)
                    if (p->needs_grad)
                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                            p->grad[i] += inv * self.grad[i];
            };
        }
        return out;
    }

    /// Mean softmax cross-entropy against integer labels -> [1][1].
    N cross_entropy_mean(N logits, std::vector<int> labels) {
        const std::size_t n = logits->value.rows(), c = logits->value.cols();
        if (labels.size() != n)
            throw std::invalid_argument("cross_entropy_mean: label count mismatch");
        auto probs = std::make_shared<Mat<Real>>(n, c);
        double total = 0;
        for (std::size_t r = 0; r < n; ++r) {
            Real mx = logits->value(r, 0);
            for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->value(r, j));
            double sum = 0;
            for (std::size_t j = 0; j < c; ++j) {
                const double e = std::exp(static_cast<double>(logits->value(r, j) - mx));
                (*probs)(r, j) = static_cast<Real>(e);
                sum += e;
            }
            for (std::size_t j = 0; j < c; ++j)
                (*probs)(r, j) = static_cast<Real>(static_cast<double>((*probs)(r, j)) / sum);
            const int y = labels[r];
            if (y < 0 || static_cast<std::size_t>(y) >= c)
                throw std::invalid_argument("cross_entropy_mean: label out of range");
            total -= std::log(std::max(static_cast<double>((*probs)(r, y)), 1e-300));
        }
        N out = make();
        out->value = Mat<Real>(1, 1, static_cast<Real>(total / static_cast<double>(n)));
        out->needs_grad = logits->needs_grad;
        if (out->needs_grad) {
            auto ls = std::make_shared<std::vector<int>>(std::move(labels));
            out->backprop = [logits, probs, ls, n, c](Node& self) {
                const Real g = self.grad(0, 0) / static_cast<Real>(n);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < c; ++j) {
                        Real p = (*probs)(r, j);
                        if (static_cast<int>(j) == (*ls)[r]) p -= Real(1);
                        logits->grad(r, j) += g * p;
                    }
            };
        }
        return out;
    }

    // ---- backward drivers

    void backward(N root) {
        if (root->value.rows() != 1 || root->value.cols() != 1)
            throw std::invalid_argument("backward: root must be scalar");
        backward_seeded({{root, Mat<Real>(1, 1, Real(1))}});
    }

    /// Seeds the given nodes with upstream gradients and sweeps the whole
    /// graph once in reverse creation order. Only nodes on a differentiable
    /// path get gradient storage.
    void backward_seeded(std::vector<std::pair<N, Mat<Real>>> seeds) {
        for (auto& n : nodes_)
            n->grad = n->needs_grad ? Mat<Real>(n->value.rows(), n->value.cols(), Real(0))
                                    : Mat<Real>();
        for (auto& [node, g] : seeds) {
            if (!node->needs_grad) continue;
            if (!g.same_shape(node->value))
                throw std::invalid_argument("backward_seeded: seed shape mismatch");
            for (std::size_t i = 0; i < g.size(); ++i) node->grad[i] += g[i];
        }
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = **it;
            if (n.needs_grad && n.backprop) n.backprop(n);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// Rolling hash of every ReLU sign mask and maxpool argmax seen while
    /// building the graph. Two evaluations with equal hashes went through the
    /// same piecewise-linear region, so finite differences across them are
    /// valid derivative estimates.
    std::uint64_t activation_pattern() const { return pattern_; }

private:
    void note_pattern(std::uint64_t h) { pattern_ = (pattern_ * 1099511628211ULL) ^ h; }

    std::uint64_t pattern_ = 1469598103934665603ULL;

    enum class BinOp { Add, Sub, Mul, Div };

    // rhs broadcast classes: full (same shape), row vector [1][c], column
    // vector [r][1], scalar [1][1]
    static Real fetch(const Mat<Real>& b, std::size_t r, std::size_t c) {
        const std::size_t br = b.rows() == 1 ? 0 : r;
        const std::size_t bc = b.cols() == 1 ? 0 : c;
        return b(br, bc);
    }
    static void accum(Mat<Real>& gb, std::size_t r, std::size_t c, Real v) {
        const std::size_t br = gb.rows() == 1 ? 0 : r;
        const std::size_t bc = gb.cols() == 1 ? 0 : c;
        gb(br, bc) += v;
    }

    N binary(N a, N b, BinOp op) {
        const auto& av = a->value;
        const auto& bv = b->value;
        const bool ok = av.same_shape(bv) ||
                        ((bv.rows() == 1 || bv.rows() == av.rows()) &&
                         (bv.cols() == 1 || bv.cols() == av.cols()));
        if (!ok) throw std::invalid_argument("elementwise op: incompatible shapes");
        N out = make();
        out->value = Mat<Real>(av.rows(), av.cols());
        for (std::size_t r = 0; r < av.rows(); ++r)
            for (std::size_t c = 0; c < av.cols(); ++c) {
                const Real x = av(r, c), y = fetch(bv, r, c);
                Real v;
                switch (op) {
                    case BinOp::Add: v = x + y; break;
                    case BinOp::Sub: v = x - y; break;
                    case BinOp::Mul: v = x * y; break;
                    default: v = x / y; break;
                }
                out->value(r, c) = v;
            }
        out->needs_grad = a->needs_grad || b->needs_grad;
        if (out->needs_grad)
            out->backprop = [a, b, op](Node& self) {
                const auto& av = a->value;
                const auto& bv = b->value;
                for (std::size_t r = 0; r < self.grad.rows(); ++r)
                    for (std::size_t c = 0; c < self.grad.cols(); ++c) {
                        const Real g = self.grad(r, c);
                        if (g == Real(0)) continue;
                        const Real y = fetch(bv, r, c);
                        switch (op) {
                            case BinOp::Add:
                                if (a->needs_grad) a->grad(r, c) += g;
                                if (b->needs_grad) accum(b->grad, r, c, g);
                                break;
                            case BinOp::Sub:
                                if (a->needs_grad) a->grad(r, c) += g;
                                if (b->needs_grad) accum(b->grad, r, c, -g);
                                break;
                            case BinOp::Mul:
                                if (a->needs_grad) a->grad(r, c) += g * y;
                                if (b->needs_grad) accum(b->grad, r, c, g * av(r, c));
                                break;
                            case BinOp::Div:
                                if (a->needs_grad) a->grad(r, c) += g / y;
                                if (b->needs_grad) accum(b->grad, r, c, -g * av(r, c) / (y * y));
                                break;
                        }
                    }
            };
        return out;
    }

    N make() {
        nodes_.push_back(std::make_unique<Node>());
        return nodes_.back().get();
    }

    std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace usdrl
