#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
// Each operation builds a graph node holding its parents and a gradient
// rule; ComputationTape linearizes the graph below a scalar root and
// replays the rules in reverse.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "usfmae/errors.hpp"

namespace usfmae {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

template <class Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
};

template <class Real>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), Real(0), requires_grad);
    }

    static Tensor filled(Shape shape, Real value, bool requires_grad = false) {
        auto n = std::make_shared<TensorNode<Real>>();
        n->data.assign(shape_numel(shape), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ConfigError("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode<Real>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(Real value) { return from_data({1}, {value}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->data.size(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    std::vector<Real>& data() { return node_->data; }
    const std::vector<Real>& data() const { return node_->data; }
    Real item() const { return node_->data.at(0); }

    // 2-D accessors
    int rows() const { return node_->shape.at(0); }
    int cols() const { return node_->shape.at(1); }
    Real at(int i, int j) const { return node_->data[static_cast<size_t>(i) * cols() + j]; }
    Real& at(int i, int j) { return node_->data[static_cast<size_t>(i) * cols() + j]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    const std::vector<Real>& grad() const {
        node_->ensure_grad();
        return node_->grad;
    }
    std::vector<Real>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->data.size(), Real(0)); }

    void backward() const;

    std::shared_ptr<TensorNode<Real>>& node() { return node_; }
    const std::shared_ptr<TensorNode<Real>>& node() const { return node_; }

    explicit Tensor(std::shared_ptr<TensorNode<Real>> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<TensorNode<Real>> node_;
};

// Topologically ordered record of the operations below one root.
// Replaying the gradient rules in reverse yields the chain-rule product;
// a tape instance serves a single backward pass.
template <class Real>
class ComputationTape {
public:
    explicit ComputationTape(const Tensor<Real>& root) : root_(root.node()) {
        std::unordered_set<TensorNode<Real>*> seen;
        build(root_, seen);
    }

    void backward() {
        if (root_->data.size() != 1)
            throw ConfigError("backward requires a scalar root, got shape " + shape_str(root_->shape));
        root_->ensure_grad();
        root_->grad[0] += Real(1);
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            TensorNode<Real>* n = *it;
            if (n->backprop) n->backprop(*n);
        }
    }

    size_t num_ops() const { return order_.size(); }

private:
    void build(const std::shared_ptr<TensorNode<Real>>& n, std::unordered_set<TensorNode<Real>*>& seen) {
        // iterative post-order DFS; recursion would overflow on deep graphs
        struct Frame {
            TensorNode<Real>* node;
            size_t next_child;
        };
        if (seen.count(n.get())) return;
        std::vector<Frame> stack{{n.get(), 0}};
        seen.insert(n.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.node->parents.size()) {
                TensorNode<Real>* child = f.node->parents[f.next_child++].get();
                if (!seen.count(child)) {
                    seen.insert(child);
                    stack.push_back({child, 0});
                }
            } else {
                order_.push_back(f.node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<TensorNode<Real>> root_;
    std::vector<TensorNode<Real>*> order_;
};

template <class Real>
void Tensor<Real>::backward() const {
    ComputationTape<Real> tape(*this);
    tape.backward();
}

namespace detail {

template <class Real>
Tensor<Real> make_op(Shape shape, std::vector<Real> data, std::vector<Tensor<Real>> parents,
                     std::function<void(TensorNode<Real>&)> backprop) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    n->requires_grad = needs;
    if (needs) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<Real>(std::move(n));
}

template <class Real>
void check_2d(const Tensor<Real>& t, const char* what) {
    if (t.ndim() != 2) throw ConfigError(std::string(what) + " expects a 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---- primitive operations ----

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ConfigError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<Real> out(static_cast<size_t>(m) * n, Real(0));
    const Real* A = a.data().data();
    const Real* B = b.data().data();
    for (int i = 0; i < m; ++i) {
        Real* Ci = out.data() + static_cast<size_t>(i) * n;
        const Real* Ai = A + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const Real av = Ai[p];
            const Real* Bp = B + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) Ci[j] += av * Bp[j];
        }
    }
    return detail::make_op<Real>(
        {m, n}, std::move(out), {a, b}, [m, k, n](TensorNode<Real>& node) {
            auto& pa = *node.parents[0];
            auto& pb = *node.parents[1];
            const Real* dC = node.grad.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                // dA = dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        Real s = 0;
                        const Real* dCi = dC + static_cast<size_t>(i) * n;
                        const Real* Bp = pb.data.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) s += dCi[j] * Bp[j];
                        pa.grad[static_cast<size_t>(i) * k + p] += s;
                    }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                // dB = A^T * dC
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < m; ++i) {
                        const Real av = pa.data[static_cast<size_t>(i) * k + p];
                        const Real* dCi = dC + static_cast<size_t>(i) * n;
                        Real* dBp = pb.grad.data() + static_cast<size_t>(p) * n;
                        for (int j = 0; j < n; ++j) dBp[j] += av * dCi[j];
                    }
            }
        });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw ConfigError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [](TensorNode<Real>& node) {
        for (auto& p : node.parents) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) p->grad[i] += node.grad[i];
        }
    });
}

// bias row broadcast over the leading axis: a[m,n] + b[n]
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& a, const Tensor<Real>& b) {
    detail::check_2d(a, "add_rowvec");
    if (b.ndim() != 1 || b.dim(0) != a.cols())
        throw ConfigError("add_rowvec shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.rows(), n = a.cols();
    std::vector<Real> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(i) * n + j] = a.data()[static_cast<size_t>(i) * n + j] + b.data()[j];
    return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [m, n](TensorNode<Real>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) pb.grad[j] += node.grad[static_cast<size_t>(i) * n + j];
        }
    });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.shape() != b.shape())
        throw ConfigError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<Real> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_op<Real>(a.shape(), std::move(out), {a, b}, [](TensorNode<Real>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) pa.grad[i] += node.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (size_t i = 0; i < node.grad.size(); ++i) pb.grad[i] += node.grad[i] * pa.data[i];
        }
    });
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real s) {
    std::vector<Real> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return detail::make_op<Real>(a.shape(), std::move(out), {a}, [s](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i] * s;
    });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return add(a, scale(b, Real(-1)));
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    detail::check_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    std::vector<Real> out(a.numel());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.data()[static_cast<size_t>(i) * n + j];
    return detail::make_op<Real>({n, m}, std::move(out), {a}, [m, n](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                p.grad[static_cast<size_t>(i) * n + j] += node.grad[static_cast<size_t>(j) * m + i];
    });
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ConfigError("reshape from " + shape_str(a.shape()) + " to " + shape_str(shape) + " changes element count");
    std::vector<Real> out = a.data();
    return detail::make_op<Real>(std::move(shape), std::move(out), {a}, [](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[i] += node.grad[i];
    });
}

template <class Real>
Tensor<Real> concat_rows(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ConfigError("concat_rows needs at least one input");
    const int n = parts[0].cols();
    int m = 0;
    std::vector<Real> out;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_rows");
        if (p.cols() != n) throw ConfigError("concat_rows column mismatch");
        m += p.rows();
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return detail::make_op<Real>({m, n}, std::move(out), parts, [](TensorNode<Real>& node) {
        size_t off = 0;
        for (auto& p : node.parents) {
            const size_t len = p->data.size();
            if (p->requires_grad) {
                p->ensure_grad();
                for (size_t i = 0; i < len; ++i) p->grad[i] += node.grad[off + i];
            }
            off += len;
        }
    });
}

template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& a, int start, int len) {
    detail::check_2d(a, "slice_rows");
    if (start < 0 || len < 0 || start + len > a.rows())
        throw ConfigError("slice_rows [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of range for " + shape_str(a.shape()));
    const int n = a.cols();
    std::vector<Real> out(a.data().begin() + static_cast<size_t>(start) * n,
                          a.data().begin() + static_cast<size_t>(start + len) * n);
    return detail::make_op<Real>({len, n}, std::move(out), {a}, [start, n](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        const size_t off = static_cast<size_t>(start) * n;
        for (size_t i = 0; i < node.grad.size(); ++i) p.grad[off + i] += node.grad[i];
    });
}

template <class Real>
Tensor<Real> slice_cols(const Tensor<Real>& a, int start, int len) {
    detail::check_2d(a, "slice_cols");
    if (start < 0 || len < 0 || start + len > a.cols())
        throw ConfigError("slice_cols [" + std::to_string(start) + "," + std::to_string(start + len) +
                          ") out of range for " + shape_str(a.shape()));
    const int m = a.rows(), n = a.cols();
    std::vector<Real> out(static_cast<size_t>(m) * len);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j)
            out[static_cast<size_t>(i) * len + j] = a.data()[static_cast<size_t>(i) * n + start + j];
    return detail::make_op<Real>({m, len}, std::move(out), {a}, [m, n, start, len](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                p.grad[static_cast<size_t>(i) * n + start + j] += node.grad[static_cast<size_t>(i) * len + j];
    });
}

template <class Real>
Tensor<Real> concat_cols(const std::vector<Tensor<Real>>& parts) {
    if (parts.empty()) throw ConfigError("concat_cols needs at least one input");
    const int m = parts[0].rows();
    int n = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        detail::check_2d(p, "concat_cols");
        if (p.rows() != m) throw ConfigError("concat_cols row mismatch");
        widths.push_back(p.cols());
        n += p.cols();
    }
    std::vector<Real> out(static_cast<size_t>(m) * n);
    int off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const int w = widths[k];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                out[static_cast<size_t>(i) * n + off + j] = parts[k].data()[static_cast<size_t>(i) * w + j];
        off += w;
    }
    return detail::make_op<Real>({m, n}, std::move(out), parts, [m, n, widths](TensorNode<Real>& node) {
        int off = 0;
        for (size_t k = 0; k < node.parents.size(); ++k) {
            const int w = widths[k];
            auto& p = *node.parents[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < w; ++j)
                        p.grad[static_cast<size_t>(i) * w + j] += node.grad[static_cast<size_t>(i) * n + off + j];
            }
            off += w;
        }
    });
}

// gather rows; repeated indices scatter-add on the way back
template <class Real>
Tensor<Real> index_select_rows(const Tensor<Real>& a, const std::vector<int>& indices) {
    detail::check_2d(a, "index_select_rows");
    const int n = a.cols();
    std::vector<Real> out(indices.size() * static_cast<size_t>(n));
    for (size_t i = 0; i < indices.size(); ++i) {
        const int src = indices[i];
        if (src < 0 || src >= a.rows())
            throw ConfigError("index_select_rows index " + std::to_string(src) + " out of range for " +
                              shape_str(a.shape()));
        std::copy_n(a.data().begin() + static_cast<size_t>(src) * n, n, out.begin() + i * n);
    }
    return detail::make_op<Real>({static_cast<int>(indices.size()), n}, std::move(out), {a},
                                 [indices, n](TensorNode<Real>& node) {
                                     auto& p = *node.parents[0];
                                     if (!p.requires_grad) return;
                                     p.ensure_grad();
                                     for (size_t i = 0; i < indices.size(); ++i) {
                                         const size_t dst = static_cast<size_t>(indices[i]) * n;
                                         for (int j = 0; j < n; ++j) p.grad[dst + j] += node.grad[i * n + j];
                                     }
                                 });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real s = 0;
    for (Real v : a.data()) s += v;
    return detail::make_op<Real>({1}, {s}, {a}, [](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (auto& g : p.grad) g += node.grad[0];
    });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    const Real inv = Real(1) / static_cast<Real>(a.numel());
    Real s = 0;
    for (Real v : a.data()) s += v;
    return detail::make_op<Real>({1}, {s * inv}, {a}, [inv](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (auto& g : p.grad) g += node.grad[0] * inv;
    });
}

// column-wise mean, [m,n] -> [1,n]
template <class Real>
Tensor<Real> mean_rows(const Tensor<Real>& a) {
    detail::check_2d(a, "mean_rows");
    const int m = a.rows(), n = a.cols();
    const Real inv = Real(1) / static_cast<Real>(m);
    std::vector<Real> out(n, Real(0));
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j] += a.data()[static_cast<size_t>(i) * n + j] * inv;
    return detail::make_op<Real>({1, n}, std::move(out), {a}, [m, n, inv](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) p.grad[static_cast<size_t>(i) * n + j] += node.grad[j] * inv;
    });
}

// row-wise softmax with max subtraction
template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& a) {
    detail::check_2d(a, "softmax_rows");
    const int m = a.rows(), n = a.cols();
    std::vector<Real> out(a.numel());
    for (int i = 0; i < m; ++i) {
        const Real* x = a.data().data() + static_cast<size_t>(i) * n;
        Real* y = out.data() + static_cast<size_t>(i) * n;
        Real mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        Real z = 0;
        for (int j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (int j = 0; j < n; ++j) y[j] /= z;
    }
    return detail::make_op<Real>({m, n}, std::move(out), {a}, [m, n](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (int i = 0; i < m; ++i) {
            const Real* y = node.data.data() + static_cast<size_t>(i) * n;
            const Real* dy = node.grad.data() + static_cast<size_t>(i) * n;
            Real dot = 0;
            for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
            Real* dx = p.grad.data() + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

// layer normalization over the last axis with affine gain/bias
template <class Real>
Tensor<Real> layernorm_rows(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias,
                            Real eps = Real(1e-6)) {
    detail::check_2d(x, "layernorm_rows");
    const int m = x.rows(), d = x.cols();
    if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
        throw ConfigError("layernorm gain/bias must be 1-D of width " + std::to_string(d));
    std::vector<Real> out(x.numel());
    std::vector<Real> xhat(x.numel());
    std::vector<Real> inv_std(m);
    for (int i = 0; i < m; ++i) {
        const Real* xi = x.data().data() + static_cast<size_t>(i) * d;
        Real mu = 0;
        for (int j = 0; j < d; ++j) mu += xi[j];
        mu /= d;
        Real var = 0;
        for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
        var /= d;
        const Real istd = Real(1) / std::sqrt(var + eps);
        inv_std[i] = istd;
        for (int j = 0; j < d; ++j) {
            const Real h = (xi[j] - mu) * istd;
            xhat[static_cast<size_t>(i) * d + j] = h;
            out[static_cast<size_t>(i) * d + j] = gain.data()[j] * h + bias.data()[j];
        }
    }
    return detail::make_op<Real>(
        {m, d}, std::move(out), {x, gain, bias},
        [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorNode<Real>& node) {
            auto& px = *node.parents[0];
            auto& pg = *node.parents[1];
            auto& pb = *node.parents[2];
            if (pg.requires_grad) pg.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            if (px.requires_grad) px.ensure_grad();
            for (int i = 0; i < m; ++i) {
                const Real* dy = node.grad.data() + static_cast<size_t>(i) * d;
                const Real* h = xhat.data() + static_cast<size_t>(i) * d;
                if (pg.requires_grad || pb.requires_grad) {
                    for (int j = 0; j < d; ++j) {
                        if (pg.requires_grad) pg.grad[j] += dy[j] * h[j];
                        if (pb.requires_grad) pb.grad[j] += dy[j];
                    }
                }
                if (px.requires_grad) {
                    Real mean_dxhat = 0, mean_dxhat_h = 0;
                    for (int j = 0; j < d; ++j) {
                        const Real dxh = dy[j] * pg.data[j];
                        mean_dxhat += dxh;
                        mean_dxhat_h += dxh * h[j];
                    }
                    mean_dxhat /= d;
                    mean_dxhat_h /= d;
                    Real* dx = px.grad.data() + static_cast<size_t>(i) * d;
                    for (int j = 0; j < d; ++j) {
                        const Real dxh = dy[j] * pg.data[j];
                        dx[j] += inv_std[i] * (dxh - mean_dxhat - h[j] * mean_dxhat_h);
                    }
                }
            }
        });
}

// tanh-approximated GELU
template <class Real>
Tensor<Real> gelu(const Tensor<Real>& a) {
    static const Real kC = std::sqrt(Real(2) / std::numbers::pi_v<Real>);
    static const Real kA = Real(0.044715);
    std::vector<Real> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) {
        const Real x = a.data()[i];
        out[i] = Real(0.5) * x * (Real(1) + std::tanh(kC * (x + kA * x * x * x)));
    }
    return detail::make_op<Real>(a.shape(), std::move(out), {a}, [](TensorNode<Real>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i) {
            const Real x = p.data[i];
            const Real u = kC * (x + kA * x * x * x);
            const Real t = std::tanh(u);
            const Real du = kC * (Real(1) + Real(3) * kA * x * x);
            const Real dydx = Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
            p.grad[i] += node.grad[i] * dydx;
        }
    });
}

// mean over the batch of -log softmax(logits)[label], log-sum-exp stabilized
template <class Real>
Tensor<Real> cross_entropy_logits(const Tensor<Real>& logits, const std::vector<int>& labels) {
    detail::check_2d(logits, "cross_entropy_logits");
    const int b = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != b)
        throw ConfigError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for batch " +
                          std::to_string(b));
    for (int label : labels)
        if (label < 0 || label >= c)
            throw ConfigError("cross_entropy_logits: label " + std::to_string(label) + " outside [0," +
                              std::to_string(c) + ")");
    Real loss = 0;
    std::vector<Real> probs(logits.numel());
    for (int i = 0; i < b; ++i) {
        const Real* z = logits.data().data() + static_cast<size_t>(i) * c;
        Real mx = z[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
        Real se = 0;
        for (int j = 0; j < c; ++j) se += std::exp(z[j] - mx);
        const Real lse = mx + std::log(se);
        loss += lse - z[labels[i]];
        for (int j = 0; j < c; ++j) probs[static_cast<size_t>(i) * c + j] = std::exp(z[j] - lse);
    }
    loss /= b;
    return detail::make_op<Real>({1}, {loss}, {logits},
                                 [b, c, labels, probs = std::move(probs)](TensorNode<Real>& node) {
                                     auto& p = *node.parents[0];
                                     if (!p.requires_grad) return;
                                     p.ensure_grad();
                                     const Real g = node.grad[0] / b;
                                     for (int i = 0; i < b; ++i)
                                         for (int j = 0; j < c; ++j) {
                                             Real v = probs[static_cast<size_t>(i) * c + j];
                                             if (j == labels[i]) v -= Real(1);
                                             p.grad[static_cast<size_t>(i) * c + j] += g * v;
                                         }
                                 });
}

template <class Real>
bool all_finite(const Tensor<Real>& t) {
    for (Real v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace usfmae
