#pragma once

// Dense row-major tensors with a tape-based reverse-mode gradient.
//
// Ops record onto the Tape that is active on the calling thread. With no
// active tape, ops run in inference mode and nothing is recorded. Every op
// checks its output for NaN/Inf and throws NumericError naming the op.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskmotion/error.hpp"

namespace maskmotion {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
};

template <class T>
class Tensor;

template <class T>
class Tape;

namespace detail {

template <class T>
Tape<T>*& active_tape() {
    thread_local Tape<T>* tape = nullptr;
    return tape;
}

template <class T>
void check_finite(std::string_view op, const std::vector<T>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream os;
            os << op << ": non-finite value " << values[i] << " at flat index " << i;
            throw NumericError(os.str());
        }
    }
}

template <class T>
std::vector<T>& grad_buffer(TensorNode<T>& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
    return node.grad;
}

}  // namespace detail

/// Shared handle onto a tensor node. Copies alias the same storage.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<TensorNode<T>>()) {
        for (auto d : shape) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
        if (numel(shape) != data.size()) {
            throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(numel(shape)) +
                             " elements, got " + std::to_string(data.size()));
        }
        detail::check_finite("construct", data);
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T value) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value));
    }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }

    /// Size along `axis`; negative axes count from the back.
    std::size_t dim(int axis) const {
        int r = static_cast<int>(rank());
        int a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
        return node_->shape[static_cast<std::size_t>(a)];
    }

    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    /// In-place access for parameter updates. Never use on a tensor that a
    /// live tape still references.
    std::span<T> mutable_data() { return node_->data; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->data[0];
    }

    T operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the data with no gradient history.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    template <class U>
    Tensor<U> cast() const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(out));
    }

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

/// Ordered record of executed ops. Constructing a Tape makes it the active
/// tape for the current thread until it is destroyed.
template <class T>
class Tape {
public:
    Tape() : previous_(detail::active_tape<T>()) { detail::active_tape<T>() = this; }
    ~Tape() { detail::active_tape<T>() = previous_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return detail::active_tape<T>(); }

    void record(std::string_view op, std::function<void()> backward_fn) {
        if (consumed_) throw Error("tape already consumed by backward(); call reset() first");
        entries_.push_back({std::string(op), std::move(backward_fn)});
    }

    /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
    void backward(const Tensor<T>& loss) {
        if (consumed_) throw Error("backward() called twice on the same tape without reset()");
        if (!loss.defined() || loss.size() != 1) {
            throw ShapeError("backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
        }
        if (!loss.requires_grad()) throw Error("backward(): loss is detached from the tape (no recorded gradient path)");
        consumed_ = true;
        visited_.clear();
        auto& g = detail::grad_buffer(*loss.node());
        g[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            visited_.push_back(it->op);
            it->backward();
        }
    }

    void reset() {
        entries_.clear();
        visited_.clear();
        consumed_ = false;
    }

    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    std::vector<std::string> recorded_ops() const {
        std::vector<std::string> out;
        for (const auto& e : entries_) out.push_back(e.op);
        return out;
    }
    const std::vector<std::string>& visit_order() const { return visited_; }

private:
    struct Entry {
        std::string op;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
    std::vector<std::string> visited_;
    bool consumed_ = false;
    Tape* previous_;
};

/// backward() on the tape active for this thread.
template <class T>
void backward(const Tensor<T>& loss) {
    auto* tape = Tape<T>::active();
    if (!tape) throw Error("backward(): no active tape");
    tape->backward(loss);
}

namespace detail {

template <class T>
Tape<T>* tracking_tape(std::initializer_list<const Tensor<T>*> inputs) {
    auto* tape = Tape<T>::active();
    if (!tape) return nullptr;
    for (const auto* in : inputs) {
        if (in->requires_grad()) return tape;
    }
    return nullptr;
}

template <class T>
void accumulate(const std::shared_ptr<TensorNode<T>>& node, std::span<const T> delta) {
    if (!node->requires_grad) return;
    auto& g = grad_buffer(*node);
    for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

inline void require_same_shape(std::string_view op, const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline std::size_t norm_axis(int axis, std::size_t rank) {
    int r = static_cast<int>(rank);
    int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

// dst[perm-index] = src; `axes[k]` is the source axis of output axis k.
template <class T>
void permute_copy(const std::vector<T>& src, const Shape& src_shape, const std::vector<std::size_t>& axes,
                  std::vector<T>& dst) {
    const std::size_t r = src_shape.size();
    std::vector<std::size_t> src_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) src_stride[i - 1] = src_stride[i] * src_shape[i];
    Shape out_shape(r);
    std::vector<std::size_t> step(r);
    for (std::size_t k = 0; k < r; ++k) {
        out_shape[k] = src_shape[axes[k]];
        step[k] = src_stride[axes[k]];
    }
    dst.resize(src.size());
    std::vector<std::size_t> idx(r, 0);
    std::size_t offset = 0;
    const std::size_t inner = out_shape[r - 1];
    const std::size_t inner_step = step[r - 1];
    for (std::size_t o = 0; o < src.size(); o += inner) {
        const T* s = src.data() + offset;
        T* d = dst.data() + o;
        for (std::size_t j = 0; j < inner; ++j) d[j] = s[j * inner_step];
        // advance the multi-index over all but the last axis
        for (std::size_t k = r - 1; k-- > 0;) {
            ++idx[k];
            offset += step[k];
            if (idx[k] < out_shape[k]) break;
            offset -= step[k] * idx[k];
            idx[k] = 0;
        }
    }
}

// C[b] (+)= A[b] (p×q) · B[b] (q×r), all row-major.
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        T* crow = c + i * r;
        const T* arow = a + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = arow[k];
            const T* brow = b + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C (p×q) += A (p×r) · B(q×r)^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* arow = a + i * r;
        T* crow = c + i * q;
        for (std::size_t k = 0; k < q; ++k) {
            const T* brow = b + k * r;
            T acc = T(0);
            for (std::size_t j = 0; j < r; ++j) acc += arow[j] * brow[j];
            crow[k] += acc;
        }
    }
}

// C (q×r) += A(p×q)^T · B (p×r)
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t p, std::size_t q, std::size_t r) {
    for (std::size_t i = 0; i < p; ++i) {
        const T* arow = a + i * q;
        const T* brow = b + i * r;
        for (std::size_t k = 0; k < q; ++k) {
            const T aik = arow[k];
            T* crow = c + k * r;
            for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("add", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    detail::check_finite("add", out);
    Tensor<T> y(a.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&a, &b})) {
        y.set_requires_grad(true);
        tape->record("add", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            detail::accumulate<T>(an, yn->grad);
            detail::accumulate<T>(bn, yn->grad);
        });
    }
    return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("sub", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    detail::check_finite("sub", out);
    Tensor<T> y(a.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&a, &b})) {
        y.set_requires_grad(true);
        tape->record("sub", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            detail::accumulate<T>(an, yn->grad);
            std::vector<T> neg(yn->grad.size());
            for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -yn->grad[i];
            detail::accumulate<T>(bn, neg);
        });
    }
    return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mul", a.shape(), b.shape());
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    detail::check_finite("mul", out);
    Tensor<T> y(a.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&a, &b})) {
        y.set_requires_grad(true);
        tape->record("mul", [an = a.node(), bn = b.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            const auto& g = yn->grad;
            std::vector<T> da(g.size()), db(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] = g[i] * bn->data[i];
                db[i] = g[i] * an->data[i];
            }
            detail::accumulate<T>(an, da);
            detail::accumulate<T>(bn, db);
        });
    }
    return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
    detail::check_finite("scale", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("scale", [xn = x.node(), yn = y.node(), s] {
            if (yn->grad.empty()) return;
            std::vector<T> d(yn->grad.size());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = yn->grad[i] * s;
            detail::accumulate<T>(xn, d);
        });
    }
    return y;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + s;
    detail::check_finite("add_scalar", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("add_scalar", [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            detail::accumulate<T>(xn, yn->grad);
        });
    }
    return y;
}

/// x[..., j] + bias[j]. The bias length must equal the last dimension.
template <class T>
Tensor<T> add_rowwise(const Tensor<T>& x, const Tensor<T>& bias) {
    const std::size_t width = x.dim(-1);
    if (bias.rank() != 1 || bias.size() != width) {
        throw ShapeError("add_rowwise: bias " + shape_str(bias.shape()) + " does not match last dim of " + shape_str(x.shape()));
    }
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % width];
    detail::check_finite("add_rowwise", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x, &bias})) {
        y.set_requires_grad(true);
        tape->record("add_rowwise", [xn = x.node(), bn = bias.node(), yn = y.node(), width] {
            if (yn->grad.empty()) return;
            detail::accumulate<T>(xn, yn->grad);
            if (bn->requires_grad) {
                auto& gb = detail::grad_buffer(*bn);
                for (std::size_t i = 0; i < yn->grad.size(); ++i) gb[i % width] += yn->grad[i];
            }
        });
    }
    return y;
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / (T(1) + std::exp(-x[i]));
    detail::check_finite("silu", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("silu", [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            std::vector<T> d(yn->grad.size());
            for (std::size_t i = 0; i < d.size(); ++i) {
                const T v = xn->data[i];
                const T sig = T(1) / (T(1) + std::exp(-v));
                d[i] = yn->grad[i] * sig * (T(1) + v * (T(1) - sig));
            }
            detail::accumulate<T>(xn, d);
        });
    }
    return y;
}

/// tanh-approximated GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T k = static_cast<T>(0.044715);
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T v = x[i];
        out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
    }
    detail::check_finite("gelu", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("gelu", [xn = x.node(), yn = y.node(), c, k] {
            if (yn->grad.empty()) return;
            std::vector<T> d(yn->grad.size());
            for (std::size_t i = 0; i < d.size(); ++i) {
                const T v = xn->data[i];
                const T u = c * (v + k * v * v * v);
                const T th = std::tanh(u);
                const T du = c * (T(1) + T(3) * k * v * v);
                d[i] = yn->grad[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
            }
            detail::accumulate<T>(xn, d);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (auto v : x.data()) acc += v;
    std::vector<T> out{acc};
    detail::check_finite("sum", out);
    Tensor<T> y({1}, std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("sum", [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            std::vector<T> d(xn->data.size(), yn->grad[0]);
            detail::accumulate<T>(xn, d);
        });
    }
    return y;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// Mean squared error over all elements.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape("mse", a.shape(), b.shape());
    const T inv = T(1) / static_cast<T>(a.size());
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    std::vector<T> out{acc * inv};
    detail::check_finite("mse", out);
    Tensor<T> y({1}, std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&a, &b})) {
        y.set_requires_grad(true);
        tape->record("mse", [an = a.node(), bn = b.node(), yn = y.node(), inv] {
            if (yn->grad.empty()) return;
            const T g = yn->grad[0] * T(2) * inv;
            std::vector<T> da(an->data.size()), db(an->data.size());
            for (std::size_t i = 0; i < da.size(); ++i) {
                const T d = an->data[i] - bn->data[i];
                da[i] = g * d;
                db[i] = -g * d;
            }
            detail::accumulate<T>(an, da);
            detail::accumulate<T>(bn, db);
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Shape ops (all copy)

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor<T> y(std::move(shape), x.values());
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("reshape", [xn = x.node(), yn = y.node()] {
            if (yn->grad.empty()) return;
            detail::accumulate<T>(xn, yn->grad);
        });
    }
    return y;
}

/// Output axis k is input axis axes[k].
template <class T>
Tensor<T> permute(const Tensor<T>& x, std::vector<std::size_t> axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw ShapeError("permute: axis list length does not match rank of " + shape_str(x.shape()));
    std::vector<bool> seen(r, false);
    for (auto a : axes) {
        if (a >= r || seen[a]) throw ShapeError("permute: invalid axis list for " + shape_str(x.shape()));
        seen[a] = true;
    }
    Shape out_shape(r);
    for (std::size_t k = 0; k < r; ++k) out_shape[k] = x.shape()[axes[k]];
    std::vector<T> out;
    detail::permute_copy(x.values(), x.shape(), axes, out);
    Tensor<T> y(out_shape, std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("permute", [xn = x.node(), yn = y.node(), axes, out_shape] {
            if (yn->grad.empty()) return;
            std::vector<std::size_t> inverse(axes.size());
            for (std::size_t k = 0; k < axes.size(); ++k) inverse[axes[k]] = k;
            std::vector<T> d;
            detail::permute_copy(yn->grad, out_shape, inverse, d);
            detail::accumulate<T>(xn, d);
        });
    }
    return y;
}

/// Swaps the last two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("transpose: needs rank >= 2, got " + shape_str(x.shape()));
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, std::move(axes));
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    const std::size_t ax = detail::norm_axis(axis, first.size());
    Shape out_shape = first;
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + shape_str(first) + " vs " + shape_str(s));
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (k != ax && s[k] != first[k]) throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
        }
        out_shape[ax] += s[ax];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < ax; ++k) outer *= first[k];
    for (std::size_t k = ax + 1; k < first.size(); ++k) inner *= first[k];
    const std::size_t out_row = out_shape[ax] * inner;
    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t row = p.shape()[ax] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.values().data() + o * row, row, out.data() + o * out_row + off);
        }
        off += row;
    }
    Tensor<T> y(out_shape, std::move(out));
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    auto* tape = Tape<T>::active();
    if (tape && any) {
        y.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<T>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        tape->record("concat", [nodes, yn = y.node(), offsets, outer, inner, ax, out_row] {
            if (yn->grad.empty()) return;
            for (std::size_t n = 0; n < nodes.size(); ++n) {
                if (!nodes[n]->requires_grad) continue;
                const std::size_t row = nodes[n]->shape[ax] * inner;
                auto& g = detail::grad_buffer(*nodes[n]);
                for (std::size_t o = 0; o < outer; ++o) {
                    const T* src = yn->grad.data() + o * out_row + offsets[n];
                    T* dst = g.data() + o * row;
                    for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
                }
            }
        });
    }
    return y;
}

template <class T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
    std::vector<Tensor<T>> v(parts);
    return concat(std::span<const Tensor<T>>(v), axis);
}

/// Elements [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::size_t begin, std::size_t end) {
    const std::size_t ax = detail::norm_axis(axis, x.rank());
    const Shape& s = x.shape();
    if (begin >= end || end > s[ax]) {
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis " +
                         std::to_string(ax) + " of " + shape_str(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < ax; ++k) outer *= s[k];
    for (std::size_t k = ax + 1; k < s.size(); ++k) inner *= s[k];
    Shape out_shape = s;
    out_shape[ax] = end - begin;
    const std::size_t in_row = s[ax] * inner;
    const std::size_t out_row = (end - begin) * inner;
    std::vector<T> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.values().data() + o * in_row + begin * inner, out_row, out.data() + o * out_row);
    }
    Tensor<T> y(out_shape, std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("slice", [xn = x.node(), yn = y.node(), outer, in_row, out_row, begin, inner] {
            if (yn->grad.empty()) return;
            auto& g = detail::grad_buffer(*xn);
            for (std::size_t o = 0; o < outer; ++o) {
                const T* src = yn->grad.data() + o * out_row;
                T* dst = g.data() + o * in_row + begin * inner;
                for (std::size_t j = 0; j < out_row; ++j) dst[j] += src[j];
            }
        });
    }
    return y;
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Batched matrix product. Leading (batch) dimensions must be identical.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    auto mismatch = [&] {
        return ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
    };
    if (sa.size() < 2 || sb.size() != sa.size()) throw mismatch();
    for (std::size_t k = 0; k + 2 < sa.size(); ++k) {
        if (sa[k] != sb[k]) throw mismatch();
    }
    const std::size_t p = sa[sa.size() - 2], q = sa.back(), r = sb.back();
    if (sb[sb.size() - 2] != q) throw mismatch();
    const std::size_t batch = a.size() / (p * q);
    Shape out_shape = sa;
    out_shape.back() = r;
    std::vector<T> out(batch * p * r, T(0));
    for (std::size_t bi = 0; bi < batch; ++bi) {
        detail::gemm_nn(a.values().data() + bi * p * q, b.values().data() + bi * q * r, out.data() + bi * p * r, p, q, r);
    }
    detail::check_finite("matmul", out);
    Tensor<T> y(out_shape, std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&a, &b})) {
        y.set_requires_grad(true);
        tape->record("matmul", [an = a.node(), bn = b.node(), yn = y.node(), batch, p, q, r] {
            if (yn->grad.empty()) return;
            const T* g = yn->grad.data();
            if (an->requires_grad) {
                auto& ga = detail::grad_buffer(*an);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    detail::gemm_nt(g + bi * p * r, bn->data.data() + bi * q * r, ga.data() + bi * p * q, p, q, r);
                }
            }
            if (bn->requires_grad) {
                auto& gb = detail::grad_buffer(*bn);
                for (std::size_t bi = 0; bi < batch; ++bi) {
                    detail::gemm_tn(an->data.data() + bi * p * q, g + bi * p * r, gb.data() + bi * q * r, p, q, r);
                }
            }
        });
    }
    return y;
}

/// Softmax over the last axis, stabilized by subtracting the row max.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    const std::size_t n = x.dim(-1);
    const std::size_t rows = x.size() / n;
    std::vector<T> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.values().data() + r * n;
        T* o = out.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T total = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        const T inv = T(1) / total;
        for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
    }
    detail::check_finite("softmax_rows", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x})) {
        y.set_requires_grad(true);
        tape->record("softmax_rows", [xn = x.node(), yn = y.node(), n, rows] {
            if (yn->grad.empty()) return;
            auto& gx = detail::grad_buffer(*xn);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* yv = yn->data.data() + r * n;
                const T* gy = yn->grad.data() + r * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += gy[j] * yv[j];
                T* gxr = gx.data() + r * n;
                for (std::size_t j = 0; j < n; ++j) gxr[j] += yv[j] * (gy[j] - dot);
            }
        });
    }
    return y;
}

/// Normalizes the last axis to zero mean / unit variance, then applies
/// gamma * xhat + beta.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    const std::size_t n = x.dim(-1);
    if (gamma.size() != n || beta.size() != n || gamma.rank() != 1 || beta.rank() != 1) {
        throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / n;
    std::vector<T> xhat(x.size()), inv_std(rows), out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.values().data() + r * n;
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += in[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            xhat[r * n + j] = (in[j] - mu) * is;
            out[r * n + j] = gamma[j] * xhat[r * n + j] + beta[j];
        }
    }
    detail::check_finite("layer_norm", out);
    Tensor<T> y(x.shape(), std::move(out));
    if (auto* tape = detail::tracking_tape<T>({&x, &gamma, &beta})) {
        y.set_requires_grad(true);
        tape->record("layer_norm", [xn = x.node(), gn = gamma.node(), bn = beta.node(), yn = y.node(),
                                    xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows] {
            if (yn->grad.empty()) return;
            const auto& gy = yn->grad;
            if (gn->requires_grad || bn->requires_grad) {
                std::vector<T> dg(n, T(0)), db(n, T(0));
                for (std::size_t i = 0; i < gy.size(); ++i) {
                    dg[i % n] += gy[i] * xhat[i];
                    db[i % n] += gy[i];
                }
                detail::accumulate<T>(gn, dg);
                detail::accumulate<T>(bn, db);
            }
            if (!xn->requires_grad) return;
            auto& gx = detail::grad_buffer(*xn);
            std::vector<T> dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                T m1 = T(0), m2 = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    dxhat[j] = gy[r * n + j] * gn->data[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[r * n + j];
                }
                m1 /= static_cast<T>(n);
                m2 /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    gx[r * n + j] += inv_std[r] * (dxhat[j] - m1 - xhat[r * n + j] * m2);
                }
            }
        });
    }
    return y;
}

}  // namespace maskmotion
