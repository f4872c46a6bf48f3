#include "cafo/autograd.hpp"

#include "cafo/error.hpp"
#include "cafo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cafo::ag {

namespace {

thread_local bool g_grad_enabled = true;

using Parents = std::vector<std::shared_ptr<Node>>;

Var make_result(Tensor value, Parents parents, const char* op, std::function<void(Node&)> fn)
{
    require_finite(value, op);
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->op = op;
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents) needs = needs || p->requires_grad;
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(fn);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op)
{
    if (a.value().rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
}

void require_single(const Var& s, const char* op)
{
    if (s.value().size() != 1)
        throw ShapeError(std::string(op) + ": expected a single-element operand, got " + shape_str(s.shape()));
}

template <class F>
Var unary(const Var& a, const char* op, F forward_and_deriv)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    auto deriv = std::make_shared<std::vector<double>>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        auto [v, d] = forward_and_deriv(x[i]);
        y[i] = v;
        (*deriv)[i] = d;
    }
    return make_result(std::move(y), {a.node_ptr()}, op, [deriv](Node& self) {
        Node& p = *self.parents[0];
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*deriv)[i];
    });
}

} // namespace

Tensor& Node::grad_buffer()
{
    if (!has_grad) {
        grad = Tensor(value.shape(), 0.0);
        has_grad = true;
    }
    return grad;
}

const Tensor& Var::grad() const
{
    return node_->grad_buffer();
}

void Var::zero_grad()
{
    node_->grad_buffer().fill(0.0);
}

Var constant(Tensor value)
{
    require_finite(value, "constant");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value)
{
    require_finite(value, "parameter");
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

void backward(const Var& root)
{
    if (root.value().size() != 1)
        throw ShapeError("backward: root must be a scalar, got " + shape_str(root.shape()));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{&root.node(), 0}};
    visited.insert(&root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node().grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad) n->backward(*n);
    }
}

// ---- element-wise -------------------------------------------------------

Var add(const Var& a, const Var& b)
{
    require_same_shape(a, b, "add");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] + b.value()[i];
    return make_result(std::move(y), {a.node_ptr(), b.node_ptr()}, "add", [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            Tensor& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a, b, "sub");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] - b.value()[i];
    return make_result(std::move(y), {a.node_ptr(), b.node_ptr()}, "sub", [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            Tensor& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a, b, "mul");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(y), {a.node_ptr(), b.node_ptr()}, "mul", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var div(const Var& a, const Var& b)
{
    require_same_shape(a, b, "div");
    Tensor y(a.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (b.value()[i] == 0.0) throw ShapeError("div: division by zero");
        y[i] = a.value()[i] / b.value()[i];
    }
    return make_result(std::move(y), {a.node_ptr(), b.node_ptr()}, "div", [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb.value[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] -= self.grad[i] * pa.value[i] / (pb.value[i] * pb.value[i]);
        }
    });
}

Var add_scalar(const Var& a, double s)
{
    return unary(a, "add_scalar", [s](double x) { return std::pair{x + s, 1.0}; });
}

Var mul_scalar(const Var& a, double s)
{
    return unary(a, "mul_scalar", [s](double x) { return std::pair{x * s, s}; });
}

Var sigmoid(const Var& a)
{
    return unary(a, "sigmoid", [](double x) {
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return std::pair{s, s * (1.0 - s)};
    });
}

Var relu(const Var& a)
{
    return unary(a, "relu", [](double x) { return x > 0 ? std::pair{x, 1.0} : std::pair{0.0, 0.0}; });
}

Var abs(const Var& a)
{
    return unary(a, "abs", [](double x) {
        return std::pair{std::abs(x), x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0)};
    });
}

// ---- broadcasting helpers -------------------------------------------------

Var scale(const Var& x, const Var& s)
{
    require_single(s, "scale");
    const double sv = s.value()[0];
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] * sv;
    return make_result(std::move(y), {x.node_ptr(), s.node_ptr()}, "scale", [](Node& self) {
        Node& px = *self.parents[0];
        Node& ps = *self.parents[1];
        const double sv = ps.value[0];
        if (px.requires_grad) {
            Tensor& g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sv;
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
            ps.grad_buffer()[0] += acc;
        }
    });
}

Var divide(const Var& x, const Var& s)
{
    require_single(s, "divide");
    const double sv = s.value()[0];
    if (sv == 0.0) throw ShapeError("divide: division by zero");
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.value()[i] / sv;
    return make_result(std::move(y), {x.node_ptr(), s.node_ptr()}, "divide", [](Node& self) {
        Node& px = *self.parents[0];
        Node& ps = *self.parents[1];
        const double sv = ps.value[0];
        if (px.requires_grad) {
            Tensor& g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / sv;
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
            ps.grad_buffer()[0] -= acc / (sv * sv);
        }
    });
}

Var bias_add(const Var& x, const Var& b)
{
    if (x.value().rank() < 2 || b.value().rank() != 1 || b.shape()[0] != x.shape()[1])
        throw ShapeError("bias_add: bias " + shape_str(b.shape()) + " does not match channels of " +
                         shape_str(x.shape()));
    const std::size_t n = x.shape()[0], c = x.shape()[1];
    const std::size_t inner = x.value().size() / (n * c);
    Tensor y = x.value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            double* p = y.ptr() + (i * c + k) * inner;
            for (std::size_t q = 0; q < inner; ++q) p[q] += b.value()[k];
        }
    return make_result(std::move(y), {x.node_ptr(), b.node_ptr()}, "bias_add", [n, c, inner](Node& self) {
        Node& px = *self.parents[0];
        Node& pb = *self.parents[1];
        if (px.requires_grad) {
            Tensor& g = px.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < c; ++k) {
                    const double* p = self.grad.ptr() + (i * c + k) * inner;
                    double acc = 0.0;
                    for (std::size_t q = 0; q < inner; ++q) acc += p[q];
                    g[k] += acc;
                }
        }
    });
}

Var scale_channels(const Var& x, const Var& s)
{
    if (x.value().rank() < 2 || s.value().rank() != 2 || s.shape()[0] != x.shape()[0] ||
        s.shape()[1] != x.shape()[1])
        throw ShapeError("scale_channels: scales " + shape_str(s.shape()) + " do not match " +
                         shape_str(x.shape()));
    const std::size_t planes = s.value().size();
    const std::size_t inner = x.value().size() / planes;
    Tensor y(x.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        const double sv = s.value()[p];
        const double* src = x.value().ptr() + p * inner;
        double* dst = y.ptr() + p * inner;
        for (std::size_t q = 0; q < inner; ++q) dst[q] = src[q] * sv;
    }
    return make_result(std::move(y), {x.node_ptr(), s.node_ptr()}, "scale_channels",
                       [planes, inner](Node& self) {
                           Node& px = *self.parents[0];
                           Node& ps = *self.parents[1];
                           Tensor* gx = px.requires_grad ? &px.grad_buffer() : nullptr;
                           Tensor* gs = ps.requires_grad ? &ps.grad_buffer() : nullptr;
                           for (std::size_t p = 0; p < planes; ++p) {
                               const double* go = self.grad.ptr() + p * inner;
                               if (gx) {
                                   double* dst = gx->ptr() + p * inner;
                                   const double sv = ps.value[p];
                                   for (std::size_t q = 0; q < inner; ++q) dst[q] += go[q] * sv;
                               }
                               if (gs) {
                                   const double* src = px.value.ptr() + p * inner;
                                   double acc = 0.0;
                                   for (std::size_t q = 0; q < inner; ++q) acc += go[q] * src[q];
                                   (*gs)[p] += acc;
                               }
                           }
                       });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b)
{
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor y(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a.value()[i * k + p];
            for (std::size_t j = 0; j < n; ++j) y[i * n + j] += av * b.value()[p * n + j];
        }
    return make_result(std::move(y), {a.node_ptr(), b.node_ptr()}, "matmul", [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor& g = pa.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * pb.value[p * n + j];
                    g[i * k + p] += acc;
                }
        }
        if (pb.requires_grad) {
            Tensor& g = pb.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = pa.value[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) g[p * n + j] += av * self.grad[i * n + j];
                }
        }
    });
}

Var dot(const Var& u, const Var& v)
{
    require_rank(u, 1, "dot");
    require_same_shape(u, v, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < u.value().size(); ++i) acc += u.value()[i] * v.value()[i];
    return make_result(Tensor::scalar(acc), {u.node_ptr(), v.node_ptr()}, "dot", [](Node& self) {
        const double go = self.grad[0];
        Node& pu = *self.parents[0];
        Node& pv = *self.parents[1];
        if (pu.requires_grad) {
            Tensor& g = pu.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pv.value[i];
        }
        if (pv.requires_grad) {
            Tensor& g = pv.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go * pu.value[i];
        }
    });
}

Var l2_norm(const Var& v)
{
    require_rank(v, 1, "l2_norm");
    double acc = 0.0;
    for (double x : v.value().data()) acc += x * x;
    const double norm = std::sqrt(acc);
    return make_result(Tensor::scalar(norm), {v.node_ptr()}, "l2_norm", [](Node& self) {
        const double norm = self.value[0];
        if (norm == 0.0) return; // subgradient 0 at the origin
        Node& p = *self.parents[0];
        Tensor& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * p.value[i] / norm;
    });
}

Var column(const Var& a, std::size_t j)
{
    require_rank(a, 2, "column");
    const std::size_t rows = a.shape()[0], cols = a.shape()[1];
    if (j >= cols) throw ShapeError("column: index " + std::to_string(j) + " out of range");
    Tensor y(Shape{rows});
    for (std::size_t i = 0; i < rows; ++i) y[i] = a.value()[i * cols + j];
    return make_result(std::move(y), {a.node_ptr()}, "column", [rows, cols, j](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < rows; ++i) g[i * cols + j] += self.grad[i];
    });
}

Var stack(std::span<const Var> scalars)
{
    Tensor y(Shape{scalars.size()});
    std::vector<std::shared_ptr<Node>> parents;
    parents.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        require_single(scalars[i], "stack");
        y[i] = scalars[i].value()[0];
        parents.push_back(scalars[i].node_ptr());
    }
    return make_result(std::move(y), std::move(parents), "stack", [](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            if (self.parents[i]->requires_grad) self.parents[i]->grad_buffer()[0] += self.grad[i];
    });
}

// ---- reductions and shape -------------------------------------------------

Var sum(const Var& a)
{
    double acc = 0.0;
    for (double x : a.value().data()) acc += x;
    return make_result(Tensor::scalar(acc), {a.node_ptr()}, "sum", [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

Var mean(const Var& a)
{
    return mul_scalar(sum(a), 1.0 / double(a.value().size()));
}

Var sum_axis(const Var& a, std::size_t axis)
{
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range for " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + long(axis));
    Tensor y(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < len; ++k)
            for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += a.value()[(o * len + k) * inner + i];
    return make_result(std::move(y), {a.node_ptr()}, "sum_axis", [outer, len, inner](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t k = 0; k < len; ++k)
                for (std::size_t i = 0; i < inner; ++i) g[(o * len + k) * inner + i] += self.grad[o * inner + i];
    });
}

Var mean_axis(const Var& a, std::size_t axis)
{
    if (axis >= a.value().rank()) throw ShapeError("mean_axis: axis out of range for " + shape_str(a.shape()));
    return mul_scalar(sum_axis(a, axis), 1.0 / double(a.shape()[axis]));
}

Var reshape(const Var& a, Shape shape)
{
    Tensor y = a.value().reshaped(std::move(shape));
    return make_result(std::move(y), {a.node_ptr()}, "reshape", [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// ---- convolution and pooling ----------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad)
{
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d");
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (ws[1] != xs[1] || ws[2] != ws[3])
        throw ShapeError("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    if (b.defined() && (b.value().rank() != 1 || b.shape()[0] != ws[0]))
        throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
    if (stride == 0 || xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[2])
        throw ShapeError("conv2d: kernel larger than padded input");
    kernels::ConvGeometry g{xs[0], xs[1], ws[0], xs[2], xs[3], ws[2], stride, pad};
    Tensor y(Shape{g.batch, g.out_channels, g.out_height(), g.out_width()});
    std::span<const double> bias = b.defined() ? b.value().data() : std::span<const double>{};
    kernels::conv2d_forward(g, x.value().data(), w.value().data(), bias, y.data());

    Parents parents{x.node_ptr(), w.node_ptr()};
    if (b.defined()) parents.push_back(b.node_ptr());
    return make_result(std::move(y), std::move(parents), "conv2d", [g](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        std::vector<double> dx(px.requires_grad ? g.input_size() : 0);
        std::vector<double> dw(g.weight_size());
        std::vector<double> db(pb ? g.out_channels : 0);
        kernels::conv2d_backward(g, px.value.data(), pw.value.data(), self.grad.data(), dx, dw, db);
        if (px.requires_grad) {
            Tensor& gx = px.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
        }
        if (pw.requires_grad) {
            Tensor& gw = pw.grad_buffer();
            for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
        }
        if (pb && pb->requires_grad) {
            Tensor& gb = pb->grad_buffer();
            for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
        }
    });
}

Var depthwise_conv2d(const Var& x, const Var& w, const Var& b, std::size_t multiplier, std::size_t stride,
                     std::size_t pad)
{
    require_rank(x, 4, "depthwise_conv2d");
    require_rank(w, 3, "depthwise_conv2d");
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (multiplier == 0 || ws[0] != xs[1] * multiplier || ws[1] != ws[2])
        throw ShapeError("depthwise_conv2d: weight " + shape_str(ws) + " incompatible with input " +
                         shape_str(xs) + " and multiplier " + std::to_string(multiplier));
    if (b.defined() && (b.value().rank() != 1 || b.shape()[0] != ws[0]))
        throw ShapeError("depthwise_conv2d: bias shape " + shape_str(b.shape()));
    if (stride == 0 || xs[2] + 2 * pad < ws[1] || xs[3] + 2 * pad < ws[1])
        throw ShapeError("depthwise_conv2d: kernel larger than padded input");
    kernels::DepthwiseGeometry g{xs[0], xs[1], multiplier, xs[2], xs[3], ws[1], stride, pad};
    Tensor y(Shape{g.batch, g.out_channels(), g.out_height(), g.out_width()});
    std::span<const double> bias = b.defined() ? b.value().data() : std::span<const double>{};
    kernels::depthwise_forward(g, x.value().data(), w.value().data(), bias, y.data());

    Parents parents{x.node_ptr(), w.node_ptr()};
    if (b.defined()) parents.push_back(b.node_ptr());
    return make_result(std::move(y), std::move(parents), "depthwise_conv2d", [g](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        std::vector<double> dx(px.requires_grad ? g.input_size() : 0);
        std::vector<double> dw(g.weight_size());
        std::vector<double> db(pb ? g.out_channels() : 0);
        kernels::depthwise_backward(g, px.value.data(), pw.value.data(), self.grad.data(), dx, dw, db);
        if (px.requires_grad) {
            Tensor& gx = px.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += dx[i];
        }
        if (pw.requires_grad) {
            Tensor& gw = pw.grad_buffer();
            for (std::size_t i = 0; i < dw.size(); ++i) gw[i] += dw[i];
        }
        if (pb && pb->requires_grad) {
            Tensor& gb = pb->grad_buffer();
            for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
        }
    });
}

namespace {

// Window pooling shared by avg/max; `route` holds, per output cell, the flat
// input indices and weights its gradient flows to.
struct WindowGeometry {
    std::size_t planes, h, w, window, oh, ow;
};

WindowGeometry window_geometry(const Var& x, std::size_t window, const char* op)
{
    require_rank(x, 4, op);
    const Shape& s = x.shape();
    if (window == 0 || s[2] < window || s[3] < window)
        throw ShapeError(std::string(op) + ": window " + std::to_string(window) + " larger than input " +
                         shape_str(s));
    return {s[0] * s[1], s[2], s[3], window, s[2] / window, s[3] / window};
}

} // namespace

Var avg_pool2d(const Var& x, std::size_t window)
{
    const WindowGeometry g = window_geometry(x, window, "avg_pool2d");
    const Shape& s = x.shape();
    Tensor y(Shape{s[0], s[1], g.oh, g.ow});
    const double inv = 1.0 / double(window * window);
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t i = 0; i < g.oh; ++i)
            for (std::size_t j = 0; j < g.ow; ++j) {
                double acc = 0.0;
                for (std::size_t a = 0; a < window; ++a)
                    for (std::size_t b = 0; b < window; ++b)
                        acc += x.value()[(p * g.h + i * window + a) * g.w + j * window + b];
                y[(p * g.oh + i) * g.ow + j] = acc * inv;
            }
    return make_result(std::move(y), {x.node_ptr()}, "avg_pool2d", [g, inv](Node& self) {
        Tensor& gx = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < g.planes; ++p)
            for (std::size_t i = 0; i < g.oh; ++i)
                for (std::size_t j = 0; j < g.ow; ++j) {
                    const double go = self.grad[(p * g.oh + i) * g.ow + j] * inv;
                    for (std::size_t a = 0; a < g.window; ++a)
                        for (std::size_t b = 0; b < g.window; ++b)
                            gx[(p * g.h + i * g.window + a) * g.w + j * g.window + b] += go;
                }
    });
}

Var max_pool2d(const Var& x, std::size_t window)
{
    const WindowGeometry g = window_geometry(x, window, "max_pool2d");
    const Shape& s = x.shape();
    Tensor y(Shape{s[0], s[1], g.oh, g.ow});
    auto argmax = std::make_shared<std::vector<std::size_t>>(y.size());
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t i = 0; i < g.oh; ++i)
            for (std::size_t j = 0; j < g.ow; ++j) {
                std::size_t best = (p * g.h + i * window) * g.w + j * window;
                for (std::size_t a = 0; a < window; ++a)
                    for (std::size_t b = 0; b < window; ++b) {
                        const std::size_t idx = (p * g.h + i * window + a) * g.w + j * window + b;
                        if (x.value()[idx] > x.value()[best]) best = idx;
                    }
                const std::size_t o = (p * g.oh + i) * g.ow + j;
                y[o] = x.value()[best];
                (*argmax)[o] = best;
            }
    return make_result(std::move(y), {x.node_ptr()}, "max_pool2d", [argmax](Node& self) {
        Tensor& gx = self.parents[0]->grad_buffer();
        for (std::size_t o = 0; o < argmax->size(); ++o) gx[(*argmax)[o]] += self.grad[o];
    });
}

Var global_avg_pool(const Var& x)
{
    require_rank(x, 4, "global_avg_pool");
    const Shape& s = x.shape();
    const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
    Tensor y(Shape{s[0], s[1]});
    kernels::global_avg_pool(planes, area, x.value().data(), y.data());
    return make_result(std::move(y), {x.node_ptr()}, "global_avg_pool", [planes, area](Node& self) {
        Tensor& gx = self.parents[0]->grad_buffer();
        const double inv = 1.0 / double(area);
        for (std::size_t p = 0; p < planes; ++p) {
            const double go = self.grad[p] * inv;
            double* dst = gx.ptr() + p * area;
            for (std::size_t k = 0; k < area; ++k) dst[k] += go;
        }
    });
}

Var global_max_pool(const Var& x)
{
    require_rank(x, 4, "global_max_pool");
    const Shape& s = x.shape();
    const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
    Tensor y(Shape{s[0], s[1]});
    auto argmax = std::make_shared<std::vector<std::size_t>>(planes);
    kernels::global_max_pool(planes, area, x.value().data(), y.data(), *argmax);
    return make_result(std::move(y), {x.node_ptr()}, "global_max_pool", [argmax, area](Node& self) {
        Tensor& gx = self.parents[0]->grad_buffer();
        for (std::size_t p = 0; p < argmax->size(); ++p) gx[p * area + (*argmax)[p]] += self.grad[p];
    });
}

// ---- losses ---------------------------------------------------------------

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels)
{
    require_rank(logits, 2, "softmax_cross_entropy");
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n)
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
    auto probs = std::make_shared<Tensor>(Shape{n, c});
    auto targets = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || std::size_t(y) >= c) throw ShapeError("softmax_cross_entropy: label out of range");
        const double* row = logits.value().ptr() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t k = 0; k < c; ++k) z += std::exp(row[k] - mx);
        for (std::size_t k = 0; k < c; ++k) probs->at(i, k) = std::exp(row[k] - mx) / z;
        loss += -(row[y] - mx - std::log(z));
    }
    loss /= double(n);
    return make_result(Tensor::scalar(loss), {logits.node_ptr()}, "softmax_cross_entropy",
                       [probs, targets, n, c](Node& self) {
                           Tensor& g = self.parents[0]->grad_buffer();
                           const double scale = self.grad[0] / double(n);
                           for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t k = 0; k < c; ++k) {
                                   const double t = (int(k) == (*targets)[i]) ? 1.0 : 0.0;
                                   g[i * c + k] += scale * (probs->at(i, k) - t);
                               }
                       });
}

} // namespace cafo::ag
