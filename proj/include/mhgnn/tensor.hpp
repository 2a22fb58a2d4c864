#pragma once

// Dense 2-D tensors with a tape-free reverse-mode differentiation engine.
//
// Every tensor is a matrix (vectors are [1, n] or [n, 1]). A tensor is a
// handle to a node; primitives applied to tensors that require gradients
// record their inputs and a backward rule, forming an acyclic graph that
// gradients() walks in reverse topological order. Recorded tensors are never
// mutated in place; only leaves expose writable storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mhgnn/error.hpp"

namespace mhgnn {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] constexpr std::size_t size() const { return rows * cols; }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
    return "[" + std::to_string(s.rows) + ", " + std::to_string(s.cols) + "]";
}

enum class Primitive {
    leaf,
    matmul,
    add,
    sub,
    mul,
    scale,
    concat,
    row_mean,
    row_sum,
    tanh,
    sigmoid,
    relu,
    leaky_relu,
    softmax,
    log,
    gather_rows,
    scatter_add_rows,
    transpose,
    segment_softmax,
};

inline constexpr std::pair<Primitive, std::string_view> kPrimitiveNames[] = {
    {Primitive::leaf, "leaf"},
    {Primitive::matmul, "matmul"},
    {Primitive::add, "add"},
    {Primitive::sub, "sub"},
    {Primitive::mul, "elementwise-mul"},
    {Primitive::scale, "scalar-mul"},
    {Primitive::concat, "concat"},
    {Primitive::row_mean, "row-mean"},
    {Primitive::row_sum, "row-sum"},
    {Primitive::tanh, "tanh"},
    {Primitive::sigmoid, "sigmoid"},
    {Primitive::relu, "relu"},
    {Primitive::leaky_relu, "leaky-relu"},
    {Primitive::softmax, "softmax"},
    {Primitive::log, "log"},
    {Primitive::gather_rows, "gather-rows"},
    {Primitive::scatter_add_rows, "scatter-add-rows"},
    {Primitive::transpose, "transpose"},
    {Primitive::segment_softmax, "segment-softmax"},
};

inline std::string_view primitive_name(Primitive p) {
    for (const auto& [id, name] : kPrimitiveNames)
        if (id == p) return name;
    return "unknown";
}

inline Primitive primitive_from_name(std::string_view name) {
    for (const auto& [id, n] : kPrimitiveNames)
        if (n == name && id != Primitive::leaf) return id;
    throw ConfigError("unknown primitive '" + std::string(name) + "'");
}

/// Attribute map shared by all primitives; each primitive reads only the
/// fields it documents.
///   axis:    concat, row-mean, row-sum, softmax (0 = down rows, 1 = across columns)
///   scalar:  scalar-mul factor, leaky-relu slope, log floor (0 = no floor)
///   indices: gather-rows / scatter-add-rows row ids, segment-softmax segment ids
///   size:    scatter-add-rows output rows, segment-softmax segment count
struct PrimitiveAttrs {
    int axis = 0;
    double scalar = 0.0;
    std::vector<std::size_t> indices;
    std::size_t size = 0;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node;

template <typename T>
using BackwardFn = std::function<void(const Node<T>& self, std::span<const T> out_grad,
                                      std::span<std::vector<T>* const> in_grads)>;

template <typename T>
struct Node {
    Primitive op = Primitive::leaf;
    Shape shape;
    std::vector<T> value;
    bool requires_grad = false;
    std::optional<std::vector<T>> grad;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn<T> backward;
};

}  // namespace detail

/// Handle to a dense row-major matrix. Copies share the underlying node.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        if (shape.rows == 0 || shape.cols == 0)
            throw ShapeError("tensor: dimensions must be positive, got " + to_string(shape));
        if (values.size() != shape.size())
            throw ShapeError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + to_string(shape));
        node_->shape = shape;
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(shape, std::vector<T>(shape.size(), T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T fill, bool requires_grad = false) {
        return Tensor(shape, std::vector<T>(shape.size(), fill), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1, 1}, {v}, requires_grad); }

    static Tensor identity(std::size_t n) {
        Tensor t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.node_->value[i * n + i] = T(1);
        return t;
    }

    [[nodiscard]] bool defined() const { return node_ != nullptr; }
    [[nodiscard]] const Shape& shape() const { return node_->shape; }
    [[nodiscard]] std::size_t rows() const { return node_->shape.rows; }
    [[nodiscard]] std::size_t cols() const { return node_->shape.cols; }
    [[nodiscard]] std::size_t size() const { return node_->value.size(); }
    [[nodiscard]] std::span<const T> values() const { return node_->value; }
    [[nodiscard]] T operator()(std::size_t r, std::size_t c) const {
        return node_->value[r * node_->shape.cols + c];
    }
    [[nodiscard]] T item() const {
        if (size() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
        return node_->value[0];
    }

    [[nodiscard]] bool requires_grad() const { return node_->requires_grad; }
    [[nodiscard]] bool is_leaf() const { return node_->inputs.empty(); }
    [[nodiscard]] Primitive op() const { return node_->op; }

    [[nodiscard]] const std::optional<std::vector<T>>& grad() const { return node_->grad; }
    void set_grad(std::vector<T> g) {
        if (g.size() != size()) throw ShapeError("set_grad: gradient size does not match tensor");
        node_->grad = std::move(g);
    }
    void zero_grad() { node_->grad = std::vector<T>(size(), T(0)); }
    void clear_grad() { node_->grad.reset(); }

    /// Writable storage of a leaf (parameter update, initialisation).
    std::span<T> leaf_values() {
        if (!is_leaf()) throw ConfigError("leaf_values: tensor participates in a recorded graph");
        return node_->value;
    }

    /// Value copy into another scalar type, as a fresh leaf.
    template <typename U>
    [[nodiscard]] Tensor<U> cast(bool requires_grad) const {
        std::vector<U> out(node_->value.begin(), node_->value.end());
        return Tensor<U>(shape(), std::move(out), requires_grad);
    }

    /// Fresh leaf holding a copy of the values; cuts the graph.
    [[nodiscard]] Tensor detach() const { return Tensor(shape(), node_->value, false); }

    [[nodiscard]] const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node<T>> node_;
};

/// Wraps a primitive result; the node is recorded only when some input
/// requires gradients.
template <typename T>
Tensor<T> make_recorded(Primitive op, Shape shape, std::vector<T> value,
                        std::initializer_list<Tensor<T>> inputs, detail::BackwardFn<T> backward) {
    Tensor<T> out(shape, std::move(value), false);
    out.node()->op = op;
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
    if (any) {
        out.node()->requires_grad = true;
        for (const auto& in : inputs) out.node()->inputs.push_back(in.node());
        out.node()->backward = std::move(backward);
    }
    return out;
}

namespace ops {

namespace detail_ops {

[[noreturn]] inline void shape_fail(std::string_view op, const std::string& what) {
    throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
void require_defined(std::string_view op, const Tensor<T>& t) {
    if (!t.defined()) shape_fail(op, "undefined operand");
}

enum class Broadcast { none, row, col };

// Shape rule for add/sub/mul: equal shapes, or rhs [1, C] repeated over rows,
// or rhs [R, 1] repeated over columns.
template <typename T>
Broadcast broadcast_rule(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
    require_defined(op, a);
    require_defined(op, b);
    if (a.shape() == b.shape()) return Broadcast::none;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
    shape_fail(op, "operands " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                       " do not conform (need equal shapes, rhs [1, " + std::to_string(a.cols()) +
                       "] or rhs [" + std::to_string(a.rows()) + ", 1])");
}

inline std::size_t rhs_index(Broadcast b, std::size_t r, std::size_t c, std::size_t cols) {
    switch (b) {
        case Broadcast::none: return r * cols + c;
        case Broadcast::row: return c;
        case Broadcast::col: return r;
    }
    return 0;
}

template <typename T, typename F, typename DF>
Tensor<T> unary(Primitive op, const Tensor<T>& a, F f, DF df) {
    require_defined(primitive_name(op), a);
    std::vector<T> out(a.size());
    auto in = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_recorded<T>(op, a.shape(), std::move(out), {a},
                            [df](const detail::Node<T>& self, std::span<const T> g,
                                 std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                const auto& x = self.inputs[0]->value;
                                auto& ga = *grads[0];
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], self.value[i]);
                            });
}

}  // namespace detail_ops

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail_ops::require_defined("matmul", a);
    detail_ops::require_defined("matmul", b);
    if (a.cols() != b.rows())
        detail_ops::shape_fail("matmul", "inner dimensions differ: " + to_string(a.shape()) + " x " +
                                             to_string(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<T> out(m * n, T(0));
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = av[i * k + p];
            if (aip == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    return make_recorded<T>(Primitive::matmul, {m, n}, std::move(out), {a, b},
                            [m, k, n](const detail::Node<T>& self, std::span<const T> g,
                                      std::span<std::vector<T>* const> grads) {
                                const auto& A = self.inputs[0]->value;
                                const auto& B = self.inputs[1]->value;
                                if (grads[0]) {
                                    auto& ga = *grads[0];
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t j = 0; j < n; ++j) {
                                            const T gij = g[i * n + j];
                                            if (gij == T(0)) continue;
                                            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * B[p * n + j];
                                        }
                                }
                                if (grads[1]) {
                                    auto& gb = *grads[1];
                                    for (std::size_t i = 0; i < m; ++i)
                                        for (std::size_t p = 0; p < k; ++p) {
                                            const T aip = A[i * k + p];
                                            if (aip == T(0)) continue;
                                            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                                        }
                                }
                            });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    using detail_ops::Broadcast;
    const Broadcast bc = detail_ops::broadcast_rule("add", a, b);
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(a.size());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = av[r * C + c] + bv[detail_ops::rhs_index(bc, r, c, C)];
    return make_recorded<T>(Primitive::add, a.shape(), std::move(out), {a, b},
                            [bc, R, C](const detail::Node<T>&, std::span<const T> g,
                                       std::span<std::vector<T>* const> grads) {
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const T gi = g[r * C + c];
                                        if (grads[0]) (*grads[0])[r * C + c] += gi;
                                        if (grads[1]) (*grads[1])[detail_ops::rhs_index(bc, r, c, C)] += gi;
                                    }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    using detail_ops::Broadcast;
    const Broadcast bc = detail_ops::broadcast_rule("sub", a, b);
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(a.size());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = av[r * C + c] - bv[detail_ops::rhs_index(bc, r, c, C)];
    return make_recorded<T>(Primitive::sub, a.shape(), std::move(out), {a, b},
                            [bc, R, C](const detail::Node<T>&, std::span<const T> g,
                                       std::span<std::vector<T>* const> grads) {
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const T gi = g[r * C + c];
                                        if (grads[0]) (*grads[0])[r * C + c] += gi;
                                        if (grads[1]) (*grads[1])[detail_ops::rhs_index(bc, r, c, C)] -= gi;
                                    }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    using detail_ops::Broadcast;
    const Broadcast bc = detail_ops::broadcast_rule("elementwise-mul", a, b);
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(a.size());
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = av[r * C + c] * bv[detail_ops::rhs_index(bc, r, c, C)];
    return make_recorded<T>(Primitive::mul, a.shape(), std::move(out), {a, b},
                            [bc, R, C](const detail::Node<T>& self, std::span<const T> g,
                                       std::span<std::vector<T>* const> grads) {
                                const auto& A = self.inputs[0]->value;
                                const auto& B = self.inputs[1]->value;
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t c = 0; c < C; ++c) {
                                        const std::size_t i = r * C + c;
                                        const std::size_t j = detail_ops::rhs_index(bc, r, c, C);
                                        if (grads[0]) (*grads[0])[i] += g[i] * B[j];
                                        if (grads[1]) (*grads[1])[j] += g[i] * A[i];
                                    }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    return detail_ops::unary(
        Primitive::scale, a, [factor](T x) { return factor * x; }, [factor](T, T) { return factor; });
}

/// axis 0 stacks rows (equal column counts), axis 1 joins columns (equal row counts).
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
    if (parts.empty()) detail_ops::shape_fail("concat", "no operands");
    if (axis != 0 && axis != 1) detail_ops::shape_fail("concat", "axis must be 0 or 1, got " + std::to_string(axis));
    for (const auto& p : parts) detail_ops::require_defined("concat", p);
    std::size_t R = 0, C = 0;
    if (axis == 0) {
        C = parts[0].cols();
        for (const auto& p : parts) {
            if (p.cols() != C)
                detail_ops::shape_fail("concat", "axis 0 needs equal column counts, got " + std::to_string(C) +
                                                     " and " + std::to_string(p.cols()));
            R += p.rows();
        }
    } else {
        R = parts[0].rows();
        for (const auto& p : parts) {
            if (p.rows() != R)
                detail_ops::shape_fail("concat", "axis 1 needs equal row counts, got " + std::to_string(R) +
                                                     " and " + std::to_string(p.rows()));
            C += p.cols();
        }
    }
    std::vector<T> out(R * C);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        auto v = p.values();
        for (std::size_t r = 0; r < p.rows(); ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) {
                if (axis == 0)
                    out[(offset + r) * C + c] = v[r * p.cols() + c];
                else
                    out[r * C + offset + c] = v[r * p.cols() + c];
            }
        offset += axis == 0 ? p.rows() : p.cols();
    }

    Tensor<T> result(Shape{R, C}, std::move(out), false);
    bool any = std::any_of(parts.begin(), parts.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
    if (!any) {
        result.node()->op = Primitive::concat;
        return result;
    }
    // Variadic: build the node directly rather than through an initializer list.
    auto node = result.node();
    node->op = Primitive::concat;
    node->requires_grad = true;
    for (const auto& p : parts) node->inputs.push_back(p.node());
    node->backward = [axis, C](const detail::Node<T>& self, std::span<const T> g,
                               std::span<std::vector<T>* const> grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            const Shape s = self.inputs[k]->shape;
            if (grads[k]) {
                auto& gk = *grads[k];
                for (std::size_t r = 0; r < s.rows; ++r)
                    for (std::size_t c = 0; c < s.cols; ++c)
                        gk[r * s.cols + c] += axis == 0 ? g[(off + r) * C + c] : g[r * C + off + c];
            }
            off += axis == 0 ? s.rows : s.cols;
        }
    };
    return result;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> parts, int axis) {
    return concat(std::span<const Tensor<T>>(parts.begin(), parts.size()), axis);
}

namespace detail_ops {

template <typename T>
Tensor<T> reduce(Primitive op, const Tensor<T>& a, int axis, bool mean) {
    require_defined(primitive_name(op), a);
    if (axis != 0 && axis != 1) shape_fail(primitive_name(op), "axis must be 0 or 1, got " + std::to_string(axis));
    const std::size_t R = a.rows(), C = a.cols();
    const Shape out_shape = axis == 0 ? Shape{1, C} : Shape{R, 1};
    const T div = mean ? T(axis == 0 ? R : C) : T(1);
    std::vector<T> out(out_shape.size(), T(0));
    auto v = a.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[axis == 0 ? c : r] += v[r * C + c];
    for (auto& x : out) x /= div;
    return make_recorded<T>(op, out_shape, std::move(out), {a},
                            [axis, R, C, div](const detail::Node<T>&, std::span<const T> g,
                                              std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                auto& ga = *grads[0];
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[axis == 0 ? c : r] / div;
                            });
}

// Softmax over groups of entries; group_of(i) gives the group id of flat
// index i, the result of each group is normalised independently.
template <typename T>
std::vector<T> grouped_softmax(std::span<const T> x, std::size_t n_groups,
                               const std::function<std::size_t(std::size_t)>& group_of) {
    std::vector<T> mx(n_groups, -std::numeric_limits<T>::infinity());
    for (std::size_t i = 0; i < x.size(); ++i) mx[group_of(i)] = std::max(mx[group_of(i)], x[i]);
    std::vector<T> out(x.size());
    std::vector<T> sum(n_groups, T(0));
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx[group_of(i)]);
        sum[group_of(i)] += out[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] /= sum[group_of(i)];
    return out;
}

template <typename T>
void grouped_softmax_backward(std::span<const T> y, std::span<const T> g, std::vector<T>& ga, std::size_t n_groups,
                              const std::function<std::size_t(std::size_t)>& group_of) {
    std::vector<T> dot(n_groups, T(0));
    for (std::size_t i = 0; i < y.size(); ++i) dot[group_of(i)] += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) ga[i] += y[i] * (g[i] - dot[group_of(i)]);
}

}  // namespace detail_ops

/// axis 0 collapses rows into [1, C]; axis 1 collapses columns into [R, 1].
template <typename T>
Tensor<T> row_sum(const Tensor<T>& a, int axis = 0) {
    return detail_ops::reduce(Primitive::row_sum, a, axis, false);
}

template <typename T>
Tensor<T> row_mean(const Tensor<T>& a, int axis = 0) {
    return detail_ops::reduce(Primitive::row_mean, a, axis, true);
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail_ops::unary(
        Primitive::tanh, a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail_ops::unary(
        Primitive::sigmoid, a,
        [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail_ops::unary(
        Primitive::relu, a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return detail_ops::unary(
        Primitive::leaky_relu, a, [slope](T x) { return x > T(0) ? x : slope * x; },
        [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

/// Natural log. With floor > 0 the input is clamped from below at floor
/// (zero gradient below it); with floor == 0 non-positive input is an error.
template <typename T>
Tensor<T> log(const Tensor<T>& a, T floor = T(0)) {
    if (floor <= T(0)) {
        for (T x : a.values())
            if (!(x > T(0))) throw NumericError("log: non-positive input " + std::to_string(static_cast<double>(x)));
    }
    return detail_ops::unary(
        Primitive::log, a, [floor](T x) { return std::log(std::max(x, floor)); },
        [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

/// axis 1 normalises each row, axis 0 each column.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    detail_ops::require_defined("softmax", a);
    if (axis != 0 && axis != 1) detail_ops::shape_fail("softmax", "axis must be 0 or 1, got " + std::to_string(axis));
    const std::size_t C = a.cols();
    const std::size_t n_groups = axis == 1 ? a.rows() : C;
    std::function<std::size_t(std::size_t)> group_of;
    if (axis == 1)
        group_of = [C](std::size_t i) { return i / C; };
    else
        group_of = [C](std::size_t i) { return i % C; };
    auto out = detail_ops::grouped_softmax<T>(a.values(), n_groups, group_of);
    return make_recorded<T>(Primitive::softmax, a.shape(), std::move(out), {a},
                            [n_groups, group_of](const detail::Node<T>& self, std::span<const T> g,
                                                 std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                detail_ops::grouped_softmax_backward<T>(self.value, g, *grads[0], n_groups, group_of);
                            });
}

/// Softmax over rows sharing a segment id, independently per column.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& a, std::vector<std::size_t> segment_ids, std::size_t n_segments) {
    detail_ops::require_defined("segment-softmax", a);
    if (segment_ids.size() != a.rows())
        detail_ops::shape_fail("segment-softmax", std::to_string(segment_ids.size()) + " segment ids for " +
                                                      std::to_string(a.rows()) + " rows");
    for (auto s : segment_ids)
        if (s >= n_segments)
            detail_ops::shape_fail("segment-softmax", "segment id " + std::to_string(s) + " out of range " +
                                                          std::to_string(n_segments));
    const std::size_t C = a.cols();
    auto ids = std::make_shared<const std::vector<std::size_t>>(std::move(segment_ids));
    std::function<std::size_t(std::size_t)> group_of = [ids, C](std::size_t i) {
        return (*ids)[i / C] * C + i % C;
    };
    auto out = detail_ops::grouped_softmax<T>(a.values(), n_segments * C, group_of);
    return make_recorded<T>(Primitive::segment_softmax, a.shape(), std::move(out), {a},
                            [n = n_segments * C, group_of](const detail::Node<T>& self, std::span<const T> g,
                                                           std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                detail_ops::grouped_softmax_backward<T>(self.value, g, *grads[0], n, group_of);
                            });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> indices) {
    detail_ops::require_defined("gather-rows", a);
    if (indices.empty()) detail_ops::shape_fail("gather-rows", "empty index list");
    const std::size_t C = a.cols();
    for (auto i : indices)
        if (i >= a.rows())
            detail_ops::shape_fail("gather-rows", "row " + std::to_string(i) + " out of range for " +
                                                      to_string(a.shape()));
    std::vector<T> out(indices.size() * C);
    auto v = a.values();
    for (std::size_t k = 0; k < indices.size(); ++k)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(indices[k] * C), C,
                    out.begin() + static_cast<std::ptrdiff_t>(k * C));
    const Shape s{indices.size(), C};
    return make_recorded<T>(Primitive::gather_rows, s, std::move(out), {a},
                            [idx = std::move(indices), C](const detail::Node<T>&, std::span<const T> g,
                                                          std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                auto& ga = *grads[0];
                                for (std::size_t k = 0; k < idx.size(); ++k)
                                    for (std::size_t c = 0; c < C; ++c) ga[idx[k] * C + c] += g[k * C + c];
                            });
}

/// Row k of the input is added into output row indices[k]; output has `size` rows.
template <typename T>
Tensor<T> scatter_add_rows(const Tensor<T>& a, std::vector<std::size_t> indices, std::size_t size) {
    detail_ops::require_defined("scatter-add-rows", a);
    if (indices.size() != a.rows())
        detail_ops::shape_fail("scatter-add-rows", std::to_string(indices.size()) + " indices for " +
                                                       std::to_string(a.rows()) + " rows");
    if (size == 0) detail_ops::shape_fail("scatter-add-rows", "output size must be positive");
    for (auto i : indices)
        if (i >= size)
            detail_ops::shape_fail("scatter-add-rows", "target row " + std::to_string(i) + " >= size " +
                                                           std::to_string(size));
    const std::size_t C = a.cols();
    std::vector<T> out(size * C, T(0));
    auto v = a.values();
    for (std::size_t k = 0; k < indices.size(); ++k)
        for (std::size_t c = 0; c < C; ++c) out[indices[k] * C + c] += v[k * C + c];
    return make_recorded<T>(Primitive::scatter_add_rows, Shape{size, C}, std::move(out), {a},
                            [idx = std::move(indices), C](const detail::Node<T>&, std::span<const T> g,
                                                          std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                auto& ga = *grads[0];
                                for (std::size_t k = 0; k < idx.size(); ++k)
                                    for (std::size_t c = 0; c < C; ++c) ga[k * C + c] += g[idx[k] * C + c];
                            });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail_ops::require_defined("transpose", a);
    const std::size_t R = a.rows(), C = a.cols();
    std::vector<T> out(a.size());
    auto v = a.values();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out[c * R + r] = v[r * C + c];
    return make_recorded<T>(Primitive::transpose, Shape{C, R}, std::move(out), {a},
                            [R, C](const detail::Node<T>&, std::span<const T> g,
                                   std::span<std::vector<T>* const> grads) {
                                if (!grads[0]) return;
                                auto& ga = *grads[0];
                                for (std::size_t r = 0; r < R; ++r)
                                    for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[c * R + r];
                            });
}

}  // namespace ops

/// Runtime dispatch by primitive id, for callers that build graphs from data.
template <typename T>
Tensor<T> apply_primitive(Primitive op, std::span<const Tensor<T>> inputs, const PrimitiveAttrs& attrs = {}) {
    auto arity = [&](std::size_t n) {
        if (inputs.size() != n)
            throw ShapeError(std::string(primitive_name(op)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(inputs.size()));
    };
    switch (op) {
        case Primitive::matmul: arity(2); return ops::matmul(inputs[0], inputs[1]);
        case Primitive::add: arity(2); return ops::add(inputs[0], inputs[1]);
        case Primitive::sub: arity(2); return ops::sub(inputs[0], inputs[1]);
        case Primitive::mul: arity(2); return ops::mul(inputs[0], inputs[1]);
        case Primitive::scale: arity(1); return ops::scale(inputs[0], static_cast<T>(attrs.scalar));
        case Primitive::concat: return ops::concat(inputs, attrs.axis);
        case Primitive::row_mean: arity(1); return ops::row_mean(inputs[0], attrs.axis);
        case Primitive::row_sum: arity(1); return ops::row_sum(inputs[0], attrs.axis);
        case Primitive::tanh: arity(1); return ops::tanh(inputs[0]);
        case Primitive::sigmoid: arity(1); return ops::sigmoid(inputs[0]);
        case Primitive::relu: arity(1); return ops::relu(inputs[0]);
        case Primitive::leaky_relu: arity(1); return ops::leaky_relu(inputs[0], static_cast<T>(attrs.scalar));
        case Primitive::softmax: arity(1); return ops::softmax(inputs[0], attrs.axis);
        case Primitive::log: arity(1); return ops::log(inputs[0], static_cast<T>(attrs.scalar));
        case Primitive::gather_rows: arity(1); return ops::gather_rows(inputs[0], attrs.indices);
        case Primitive::scatter_add_rows: arity(1); return ops::scatter_add_rows(inputs[0], attrs.indices, attrs.size);
        case Primitive::transpose: arity(1); return ops::transpose(inputs[0]);
        case Primitive::segment_softmax: arity(1); return ops::segment_softmax(inputs[0], attrs.indices, attrs.size);
        case Primitive::leaf: break;
    }
    throw ConfigError("apply_primitive: unknown primitive id " + std::to_string(static_cast<int>(op)));
}

/// Recorded nodes reachable from a root, inputs before consumers.
template <typename T>
class ComputationGraph {
public:
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    static ComputationGraph trace(const Tensor<T>& root) {
        ComputationGraph g;
        if (!root.defined()) return g;
        std::unordered_map<const detail::Node<T>*, bool> done;
        // Iterative post-order DFS; recursion depth would follow graph depth.
        std::vector<std::pair<NodePtr, std::size_t>> stack{{root.node(), 0}};
        done[root.node().get()] = false;
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                NodePtr child = node->inputs[next++];
                if (!done.contains(child.get())) {
                    done[child.get()] = false;
                    stack.emplace_back(child, 0);
                }
                continue;
            }
            done[node.get()] = true;
            g.order_.push_back(node);
            if (node->inputs.empty()) g.leaves_.push_back(node);
            stack.pop_back();
        }
        for (std::size_t i = 0; i < g.order_.size(); ++i) g.position_[g.order_[i].get()] = i;
        return g;
    }

    [[nodiscard]] const std::vector<NodePtr>& nodes() const { return order_; }
    [[nodiscard]] const std::vector<NodePtr>& leaves() const { return leaves_; }
    [[nodiscard]] bool contains(const detail::Node<T>* n) const { return position_.contains(n); }
    [[nodiscard]] std::size_t position(const detail::Node<T>* n) const { return position_.at(n); }

private:
    std::vector<NodePtr> order_;
    std::vector<NodePtr> leaves_;
    std::unordered_map<const detail::Node<T>*, std::size_t> position_;
};

template <typename T>
struct Gradients {
    std::vector<std::vector<T>> values;
    /// missing[i]: params[i] is not reachable from the loss; values[i] is zero.
    std::vector<bool> missing;

    [[nodiscard]] bool any_missing() const { return std::find(missing.begin(), missing.end(), true) != missing.end(); }
};

/// d(loss)/d(param) for every param. Reads the graph only, so it can be
/// called repeatedly on the same loss.
template <typename T>
Gradients<T> gradients(const Tensor<T>& loss, std::span<const Tensor<T>> params) {
    if (!loss.defined() || loss.size() != 1)
        throw ShapeError("gradients: loss must be a scalar, got " + (loss.defined() ? to_string(loss.shape()) : "undefined"));
    for (const auto& p : params)
        if (!p.defined() || !p.is_leaf() || !p.requires_grad())
            throw ConfigError("gradients: every parameter must be a leaf that requires gradients");

    auto graph = ComputationGraph<T>::trace(loss);
    const auto& order = graph.nodes();
    std::vector<std::vector<T>> grad(order.size());
    grad.back() = {T(1)};

    std::vector<std::vector<T>*> in_grads;
    for (std::size_t i = order.size(); i-- > 0;) {
        const auto& node = order[i];
        if (node->inputs.empty() || grad[i].empty() || !node->backward) continue;
        in_grads.assign(node->inputs.size(), nullptr);
        for (std::size_t k = 0; k < node->inputs.size(); ++k) {
            const auto& in = node->inputs[k];
            if (!in->requires_grad) continue;
            auto& gk = grad[graph.position(in.get())];
            if (gk.empty()) gk.assign(in->value.size(), T(0));
            in_grads[k] = &gk;
        }
        node->backward(*node, grad[i], in_grads);
    }

    Gradients<T> out;
    for (const auto& p : params) {
        const auto* n = p.node().get();
        if (graph.contains(n) && !grad[graph.position(n)].empty()) {
            out.values.push_back(grad[graph.position(n)]);
            out.missing.push_back(false);
        } else {
            out.values.emplace_back(p.size(), T(0));
            out.missing.push_back(!graph.contains(n));
        }
    }
    return out;
}

template <typename T>
Gradients<T> gradients(const Tensor<T>& loss, std::span<Tensor<T>> params) {
    return gradients(loss, std::span<const Tensor<T>>(params.data(), params.size()));
}

template <typename T>
Gradients<T> gradients(const Tensor<T>& loss, std::initializer_list<Tensor<T>> params) {
    return gradients(loss, std::span<const Tensor<T>>(params.begin(), params.size()));
}

}  // namespace mhgnn
