#include "plip/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace plip::ag {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

CMapM cmap(const Tensor& t, std::int64_t rows, std::int64_t cols) { return CMapM(t.data(), rows, cols); }
MapM map(Tensor& t, std::int64_t rows, std::int64_t cols) { return MapM(t.data(), rows, cols); }

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
    if (x.value().rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(x.shape()));
    }
}

Var finish(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (auto& v : inputs) node->parents.push_back(v.node());
            node->backward_fn = std::move(fn);
        }
    }
    return Var(std::move(node));
}

// Parent gradient accumulator, or nullptr when that parent takes no gradient.
Tensor* grad_of(Node& self, std::size_t i) {
    auto& p = self.parents[i];
    if (!p || !p->requires_grad) return nullptr;
    return &p->ensure_grad();
}

const Tensor& value_of(Node& self, std::size_t i) { return self.parents[i]->value; }

std::int64_t leading(const Shape& s) {
    std::int64_t n = 1;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
    return n;
}

template <class F>
Var unary(const Var& x, F&& f_and_df) {
    const Tensor& xv = x.value();
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f_and_df(xv[i]).first;
    return finish(std::move(y), {x}, [f_and_df](Node& self) {
        Tensor* gx = grad_of(self, 0);
        if (!gx) return;
        const Tensor& xv = value_of(self, 0);
        for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * f_and_df(xv[i]).second;
    });
}

double sigmoid_scalar(double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    double e = std::exp(v);
    return e / (1.0 + e);
}

// Column buffer layout: rows = c * kh * kw + i * kw + j, cols = n * (oh * ow) + oy * ow + ox.
void im2col(const double* x, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
            int stride, int pad, std::int64_t oh, std::int64_t ow, double* cols) {
    const std::int64_t ncols = n * oh * ow;
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t i = 0; i < k; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                double* row = cols + ((ci * k + i) * k + j) * ncols;
                for (std::int64_t b = 0; b < n; ++b) {
                    const double* src = x + (b * c + ci) * h * w;
                    double* dst = row + b * oh * ow;
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        std::int64_t y = oy * stride - pad + i;
                        if (y < 0 || y >= h) {
                            std::fill(dst + oy * ow, dst + (oy + 1) * ow, 0.0);
                            continue;
                        }
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                            std::int64_t xx = ox * stride - pad + j;
                            dst[oy * ow + ox] = (xx >= 0 && xx < w) ? src[y * w + xx] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const double* cols, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t k,
            int stride, int pad, std::int64_t oh, std::int64_t ow, double* x) {
    const std::int64_t ncols = n * oh * ow;
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t i = 0; i < k; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                const double* row = cols + ((ci * k + i) * k + j) * ncols;
                for (std::int64_t b = 0; b < n; ++b) {
                    double* dst = x + (b * c + ci) * h * w;
                    const double* src = row + b * oh * ow;
                    for (std::int64_t oy = 0; oy < oh; ++oy) {
                        std::int64_t y = oy * stride - pad + i;
                        if (y < 0 || y >= h) continue;
                        for (std::int64_t ox = 0; ox < ow; ++ox) {
                            std::int64_t xx = ox * stride - pad + j;
                            if (xx >= 0 && xx < w) dst[y * w + xx] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

// [O, N*S] (GEMM result) <-> [N, O, S] (NCHW)
void unfold_batch(const double* src, std::int64_t o, std::int64_t n, std::int64_t s, double* dst) {
    for (std::int64_t oi = 0; oi < o; ++oi)
        for (std::int64_t b = 0; b < n; ++b)
            std::copy(src + (oi * n + b) * s, src + (oi * n + b + 1) * s, dst + (b * o + oi) * s);
}

void fold_batch(const double* src, std::int64_t o, std::int64_t n, std::int64_t s, double* dst) {
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t oi = 0; oi < o; ++oi)
            std::copy(src + (b * o + oi) * s, src + (b * o + oi + 1) * s, dst + (oi * n + b) * s);
}

struct ResizeTap {
    std::int64_t i0, i1;
    double w1;
};

std::vector<ResizeTap> resize_taps(std::int64_t in, std::int64_t out) {
    std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
    double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::int64_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        std::int64_t i1 = std::min(i0 + 1, in - 1);
        taps[static_cast<std::size_t>(d)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
}

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    std::int64_t period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Var constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    return Var(std::move(node));
}

Var parameter(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = true;
    return Var(std::move(node));
}

void backward(const Var& root) {
    if (!root.valid()) throw ShapeError("backward on empty variable");
    if (root.value().size() != 1) throw ShapeError("backward requires a scalar root, got " + shape_string(root.shape()));
    if (!root.requires_grad()) return;

    // Owning references: clearing parents below would otherwise free nodes still queued.
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            std::shared_ptr<Node> p = node->parents[next++];
            if (p && p->requires_grad && !seen.count(p.get())) {
                seen.insert(p.get());
                stack.emplace_back(std::move(p), 0);
            }
        } else {
            order.push_back(std::move(node));
            stack.pop_back();
        }
    }

    root.node()->ensure_grad().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = it->get();
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
            n->backward_fn = nullptr;
            n->parents.clear();
            if (n != root.node().get()) n->grad = Tensor();
        }
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor y = a.value();
    y.add_inplace(b.value());
    return finish(std::move(y), {a, b}, [](Node& self) {
        if (auto* g = grad_of(self, 0)) g->add_inplace(self.grad);
        if (auto* g = grad_of(self, 1)) g->add_inplace(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return finish(std::move(y), {a, b}, [](Node& self) {
        if (auto* g = grad_of(self, 0)) g->add_inplace(self.grad);
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return finish(std::move(y), {a, b}, [](Node& self) {
        const Tensor& av = value_of(self, 0);
        const Tensor& bv = value_of(self, 1);
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
        if (auto* g = grad_of(self, 1))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a.value();
    for (auto& v : y.storage()) v *= s;
    return finish(std::move(y), {a}, [s](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor y = a.value();
    for (auto& v : y.storage()) v += s;
    return finish(std::move(y), {a}, [](Node& self) {
        if (auto* g = grad_of(self, 0)) g->add_inplace(self.grad);
    });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_bias(const Var& x, const Var& b) {
    const auto& xs = x.shape();
    if (xs.empty() || b.value().rank() != 1 || b.dim(0) != xs.back()) {
        throw ShapeError("add_bias: bias " + shape_string(b.shape()) + " does not match " + shape_string(xs));
    }
    const std::int64_t n = xs.back();
    const std::int64_t rows = leading(xs);
    Tensor y = x.value();
    const Tensor& bv = b.value();
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t j = 0; j < n; ++j) y[static_cast<std::size_t>(r * n + j)] += bv[static_cast<std::size_t>(j)];
    return finish(std::move(y), {x, b}, [rows, n](Node& self) {
        if (auto* g = grad_of(self, 0)) g->add_inplace(self.grad);
        if (auto* g = grad_of(self, 1))
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < n; ++j)
                    (*g)[static_cast<std::size_t>(j)] += self.grad[static_cast<std::size_t>(r * n + j)];
    });
}

Var silu(const Var& x) {
    return unary(x, [](double v) {
        double s = sigmoid_scalar(v);
        return std::pair{v * s, s * (1.0 + v * (1.0 - s))};
    });
}

Var sigmoid(const Var& x) {
    return unary(x, [](double v) {
        double s = sigmoid_scalar(v);
        return std::pair{s, s * (1.0 - s)};
    });
}

Var tanh(const Var& x) {
    return unary(x, [](double v) {
        double t = std::tanh(v);
        return std::pair{t, 1.0 - t * t};
    });
}

Var exp(const Var& x) {
    return unary(x, [](double v) {
        double e = std::exp(v);
        return std::pair{e, e};
    });
}

Var log(const Var& x) {
    return unary(x, [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

Var square(const Var& x) {
    return unary(x, [](double v) { return std::pair{v * v, 2.0 * v}; });
}

Var sum(const Var& x) {
    const auto& xv = x.value().storage();
    double s = std::accumulate(xv.begin(), xv.end(), 0.0);
    return finish(Tensor::scalar(s), {x}, [](Node& self) {
        if (auto* g = grad_of(self, 0)) {
            double gs = self.grad[0];
            for (auto& v : g->storage()) v += gs;
        }
    });
}

Var mean(const Var& x) {
    if (x.value().empty()) throw ShapeError("mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dims differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor y(Shape{m, n});
    map(y, m, n).noalias() = cmap(a.value(), m, k) * cmap(b.value(), k, n);
    return finish(std::move(y), {a, b}, [m, k, n](Node& self) {
        auto gy = cmap(self.grad, m, n);
        if (auto* g = grad_of(self, 0)) map(*g, m, k).noalias() += gy * cmap(value_of(self, 1), k, n).transpose();
        if (auto* g = grad_of(self, 1)) map(*g, k, n).noalias() += cmap(value_of(self, 0), m, k).transpose() * gy;
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(w, 2, "linear");
    const auto& xs = x.shape();
    if (xs.empty() || xs.back() != w.dim(0)) {
        throw ShapeError("linear: input " + shape_string(xs) + " does not match weight " + shape_string(w.shape()));
    }
    const std::int64_t rows = leading(xs), in = w.dim(0), out = w.dim(1);
    Shape ys = xs;
    ys.back() = out;
    Tensor y(ys);
    map(y, rows, out).noalias() = cmap(x.value(), rows, in) * cmap(w.value(), in, out);
    const bool has_bias = b.valid();
    if (has_bias) {
        if (b.value().rank() != 1 || b.dim(0) != out) throw ShapeError("linear: bias shape " + shape_string(b.shape()));
        map(y, rows, out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().data(), out);
    }
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(b);
    return finish(std::move(y), std::move(inputs), [rows, in, out, has_bias](Node& self) {
        auto gy = cmap(self.grad, rows, out);
        if (auto* g = grad_of(self, 0)) map(*g, rows, in).noalias() += gy * cmap(value_of(self, 1), in, out).transpose();
        if (auto* g = grad_of(self, 1)) map(*g, in, out).noalias() += cmap(value_of(self, 0), rows, in).transpose() * gy;
        if (has_bias)
            if (auto* g = grad_of(self, 2))
                Eigen::Map<Eigen::RowVectorXd>(g->data(), out) += gy.colwise().sum();
    });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const std::int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
    const std::int64_t n = trans_b ? b.dim(1) : b.dim(2);
    const std::int64_t bk = trans_b ? b.dim(2) : b.dim(1);
    if (b.dim(0) != batch || bk != k) {
        throw ShapeError("bmm: incompatible " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor y(Shape{batch, m, n});
    for (std::int64_t i = 0; i < batch; ++i) {
        CMapM av(a.value().data() + i * m * k, m, k);
        MapM yv(y.data() + i * m * n, m, n);
        if (trans_b)
            yv.noalias() = av * CMapM(b.value().data() + i * n * k, n, k).transpose();
        else
            yv.noalias() = av * CMapM(b.value().data() + i * k * n, k, n);
    }
    return finish(std::move(y), {a, b}, [batch, m, k, n, trans_b](Node& self) {
        Tensor* ga = grad_of(self, 0);
        Tensor* gb = grad_of(self, 1);
        const Tensor& av = value_of(self, 0);
        const Tensor& bv = value_of(self, 1);
        for (std::int64_t i = 0; i < batch; ++i) {
            CMapM gy(self.grad.data() + i * m * n, m, n);
            CMapM am(av.data() + i * m * k, m, k);
            if (trans_b) {
                CMapM bm(bv.data() + i * n * k, n, k);
                if (ga) MapM(ga->data() + i * m * k, m, k).noalias() += gy * bm;
                if (gb) MapM(gb->data() + i * n * k, n, k).noalias() += gy.transpose() * am;
            } else {
                CMapM bm(bv.data() + i * k * n, k, n);
                if (ga) MapM(ga->data() + i * m * k, m, k).noalias() += gy * bm.transpose();
                if (gb) MapM(gb->data() + i * k * n, k, n).noalias() += am.transpose() * gy;
            }
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor y = x.value().reshaped(std::move(shape));
    return finish(std::move(y), {x}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    });
}

Var permute(const Var& x, const std::vector<std::size_t>& perm) {
    const auto& xs = x.shape();
    const std::size_t r = xs.size();
    if (perm.size() != r) throw ShapeError("permute: rank mismatch");
    std::vector<bool> used(r, false);
    for (auto p : perm) {
        if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
        used[p] = true;
    }
    Shape ys(r);
    for (std::size_t i = 0; i < r; ++i) ys[i] = xs[perm[i]];
    std::vector<std::int64_t> xstride(r, 1);
    for (std::size_t i = r; i-- > 1;) xstride[i - 1] = xstride[i] * xs[i];
    // Source offset for every output element, in output order.
    const auto total = static_cast<std::size_t>(shape_numel(ys));
    auto src_index = std::make_shared<std::vector<std::int64_t>>(total);
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::int64_t off = 0;
        for (std::size_t i = 0; i < r; ++i) off += idx[i] * xstride[perm[i]];
        (*src_index)[flat] = off;
        for (std::size_t i = r; i-- > 0;) {
            if (++idx[i] < ys[i]) break;
            idx[i] = 0;
        }
    }
    Tensor y(ys);
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < total; ++i) y[i] = xv[static_cast<std::size_t>((*src_index)[i])];
    return finish(std::move(y), {x}, [src_index](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < src_index->size(); ++i)
                (*g)[static_cast<std::size_t>((*src_index)[i])] += self.grad[i];
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Shape ys = parts[0].shape();
    if (axis >= ys.size()) throw ShapeError("concat: axis out of range");
    std::int64_t total_axis = 0;
    for (const auto& p : parts) {
        const auto& ps = p.shape();
        if (ps.size() != ys.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < ys.size(); ++i)
            if (i != axis && ps[i] != ys[i])
                throw ShapeError("concat: shape mismatch " + shape_string(ps) + " vs " + shape_string(ys));
        total_axis += ps[axis];
    }
    ys[axis] = total_axis;
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= ys[i];
    for (std::size_t i = axis + 1; i < ys.size(); ++i) inner *= ys[i];
    Tensor y(ys);
    std::vector<std::int64_t> widths;
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        std::int64_t wdt = p.shape()[axis] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(p.value().data() + o * wdt, p.value().data() + (o + 1) * wdt,
                      y.data() + o * total_axis * inner + offset);
        offset += wdt;
        widths.push_back(wdt);
    }
    return finish(std::move(y), parts, [outer, inner, total_axis, widths](Node& self) {
        std::int64_t off = 0;
        for (std::size_t pi = 0; pi < widths.size(); ++pi) {
            if (auto* g = grad_of(self, pi)) {
                for (std::int64_t o = 0; o < outer; ++o) {
                    const double* src = self.grad.data() + o * total_axis * inner + off;
                    double* dst = g->data() + o * widths[pi];
                    for (std::int64_t i = 0; i < widths[pi]; ++i) dst[i] += src[i];
                }
            }
            off += widths[pi];
        }
    });
}

Var slice(const Var& x, std::size_t axis, std::int64_t start, std::int64_t length) {
    const auto& xs = x.shape();
    if (axis >= xs.size() || start < 0 || length < 0 || start + length > xs[axis]) {
        throw ShapeError("slice out of range on " + shape_string(xs));
    }
    Shape ys = xs;
    ys[axis] = length;
    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];
    for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
    const std::int64_t src_w = xs[axis] * inner, dst_w = length * inner, off = start * inner;
    Tensor y(ys);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(x.value().data() + o * src_w + off, x.value().data() + o * src_w + off + dst_w, y.data() + o * dst_w);
    return finish(std::move(y), {x}, [outer, src_w, dst_w, off](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < dst_w; ++i) (*g)[static_cast<std::size_t>(o * src_w + off + i)] +=
                    self.grad[static_cast<std::size_t>(o * dst_w + i)];
    });
}

Var gather_rows(const Var& x, std::span<const std::int64_t> index) {
    require_rank(x, 2, "gather_rows");
    const std::int64_t n = x.dim(0), d = x.dim(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>(index.begin(), index.end());
    Tensor y(Shape{static_cast<std::int64_t>(idx->size()), d});
    for (std::size_t r = 0; r < idx->size(); ++r) {
        std::int64_t s = (*idx)[r];
        if (s < 0 || s >= n) throw ShapeError("gather_rows: index " + std::to_string(s) + " out of range " + std::to_string(n));
        std::copy(x.value().data() + s * d, x.value().data() + (s + 1) * d, y.data() + static_cast<std::int64_t>(r) * d);
    }
    return finish(std::move(y), {x}, [idx, d](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t r = 0; r < idx->size(); ++r) {
                double* dst = g->data() + (*idx)[r] * d;
                const double* src = self.grad.data() + static_cast<std::int64_t>(r) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
    });
}

Var softmax_last(const Var& x) {
    const auto& xs = x.shape();
    if (xs.empty()) throw ShapeError("softmax of scalar");
    const std::int64_t rows = leading(xs), n = xs.back();
    Tensor y(xs);
    const double* xv = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xv + r * n;
        double mx = *std::max_element(row, row + n);
        double s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += (y[static_cast<std::size_t>(r * n + j)] = std::exp(row[j] - mx));
        for (std::int64_t j = 0; j < n; ++j) y[static_cast<std::size_t>(r * n + j)] /= s;
    }
    return finish(y, {x}, [y, rows, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * n;
                const double* gr = self.grad.data() + r * n;
                double dot = 0;
                for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                double* dst = g->data() + r * n;
                for (std::int64_t j = 0; j < n; ++j) dst[j] += yr[j] * (gr[j] - dot);
            }
    });
}

Var log_softmax_last(const Var& x) {
    const auto& xs = x.shape();
    if (xs.empty()) throw ShapeError("log_softmax of scalar");
    const std::int64_t rows = leading(xs), n = xs.back();
    Tensor y(xs);
    const double* xv = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xv + r * n;
        double mx = *std::max_element(row, row + n);
        double s = 0;
        for (std::int64_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        double lse = mx + std::log(s);
        for (std::int64_t j = 0; j < n; ++j) y[static_cast<std::size_t>(r * n + j)] = row[j] - lse;
    }
    return finish(y, {x}, [y, rows, n](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * n;
                const double* gr = self.grad.data() + r * n;
                double gs = 0;
                for (std::int64_t j = 0; j < n; ++j) gs += gr[j];
                double* dst = g->data() + r * n;
                for (std::int64_t j = 0; j < n; ++j) dst[j] += gr[j] - std::exp(yr[j]) * gs;
            }
    });
}

Var cross_entropy_sum(const Var& logits, std::span<const std::int64_t> targets) {
    require_rank(logits, 2, "cross_entropy_sum");
    const std::int64_t rows = logits.dim(0), n = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != rows) throw ShapeError("cross_entropy_sum: target count mismatch");
    auto tgt = std::make_shared<std::vector<std::int64_t>>(targets.begin(), targets.end());
    auto probs = std::make_shared<Tensor>(logits.shape());
    double total = 0;
    const double* xv = logits.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        std::int64_t t = (*tgt)[static_cast<std::size_t>(r)];
        if (t < 0) continue;
        if (t >= n) throw ShapeError("cross_entropy_sum: target " + std::to_string(t) + " >= " + std::to_string(n));
        const double* row = xv + r * n;
        double mx = *std::max_element(row, row + n);
        double s = 0;
        double* pr = probs->data() + r * n;
        for (std::int64_t j = 0; j < n; ++j) s += (pr[j] = std::exp(row[j] - mx));
        for (std::int64_t j = 0; j < n; ++j) pr[j] /= s;
        total += mx + std::log(s) - row[t];
    }
    return finish(Tensor::scalar(total), {logits}, [tgt, probs, rows, n](Node& self) {
        if (auto* g = grad_of(self, 0)) {
            double gs = self.grad[0];
            for (std::int64_t r = 0; r < rows; ++r) {
                std::int64_t t = (*tgt)[static_cast<std::size_t>(r)];
                if (t < 0) continue;
                const double* pr = probs->data() + r * n;
                double* dst = g->data() + r * n;
                for (std::int64_t j = 0; j < n; ++j) dst[j] += gs * pr[j];
                dst[t] -= gs;
            }
        }
    });
}

Var layer_norm_last(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& xs = x.shape();
    const std::int64_t rows = leading(xs), n = xs.back();
    if (gamma.value().size() != static_cast<std::size_t>(n) || beta.value().size() != static_cast<std::size_t>(n)) {
        throw ShapeError("layer_norm: affine parameters do not match " + shape_string(xs));
    }
    auto xhat = std::make_shared<Tensor>(xs);
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    Tensor y(xs);
    const double* xv = x.value().data();
    const double* gv = gamma.value().data();
    const double* bv = beta.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* row = xv + r * n;
        double mu = 0;
        for (std::int64_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0;
        for (std::int64_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(r)] = is;
        for (std::int64_t j = 0; j < n; ++j) {
            double h = (row[j] - mu) * is;
            (*xhat)[static_cast<std::size_t>(r * n + j)] = h;
            y[static_cast<std::size_t>(r * n + j)] = h * gv[j] + bv[j];
        }
    }
    return finish(std::move(y), {x, gamma, beta}, [xhat, inv_std, rows, n](Node& self) {
        Tensor* gx = grad_of(self, 0);
        Tensor* gg = grad_of(self, 1);
        Tensor* gb = grad_of(self, 2);
        const double* gam = value_of(self, 1).data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * n;
            const double* h = xhat->data() + r * n;
            if (gg) for (std::int64_t j = 0; j < n; ++j) (*gg)[static_cast<std::size_t>(j)] += gy[j] * h[j];
            if (gb) for (std::int64_t j = 0; j < n; ++j) (*gb)[static_cast<std::size_t>(j)] += gy[j];
            if (gx) {
                double s1 = 0, s2 = 0;
                for (std::int64_t j = 0; j < n; ++j) {
                    double d = gy[j] * gam[j];
                    s1 += d;
                    s2 += d * h[j];
                }
                double is = (*inv_std)[static_cast<std::size_t>(r)];
                double* dst = gx->data() + r * n;
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::int64_t j = 0; j < n; ++j) dst[j] += is * (gy[j] * gam[j] - inv_n * s1 - h[j] * inv_n * s2);
            }
        }
    });
}

Var normalize_rows(const Var& x) {
    require_rank(x, 2, "normalize_rows");
    const std::int64_t rows = x.dim(0), d = x.dim(1);
    auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    Tensor y = x.value();
    for (std::int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (std::int64_t j = 0; j < d; ++j) s += y[static_cast<std::size_t>(r * d + j)] * y[static_cast<std::size_t>(r * d + j)];
        double nrm = std::sqrt(s);
        if (!(nrm > 0)) throw NumericError("normalize_rows: row " + std::to_string(r) + " has zero norm");
        (*norms)[static_cast<std::size_t>(r)] = nrm;
        for (std::int64_t j = 0; j < d; ++j) y[static_cast<std::size_t>(r * d + j)] /= nrm;
    }
    return finish(y, {x}, [y, norms, rows, d](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * d;
                const double* gr = self.grad.data() + r * d;
                double dot = 0;
                for (std::int64_t j = 0; j < d; ++j) dot += gr[j] * yr[j];
                double inv = 1.0 / (*norms)[static_cast<std::size_t>(r)];
                double* dst = g->data() + r * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += (gr[j] - yr[j] * dot) * inv;
            }
    });
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t o = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c || w.dim(3) != k) {
        throw ShapeError("conv2d: weight " + shape_string(w.shape()) + " incompatible with input " + shape_string(x.shape()));
    }
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/pad");
    const std::int64_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input too small for kernel");
    const std::int64_t ckk = c * k * k, ncols = n * oh * ow;
    const bool has_bias = b.valid();

    Tensor cols(Shape{ckk, ncols});
    im2col(x.value().data(), n, c, h, wd, k, stride, pad, oh, ow, cols.data());
    Tensor tmp(Shape{o, ncols});
    map(tmp, o, ncols).noalias() = cmap(w.value(), o, ckk) * cmap(cols, ckk, ncols);
    if (has_bias)
        map(tmp, o, ncols).colwise() += Eigen::Map<const Eigen::VectorXd>(b.value().data(), o);
    Tensor y(Shape{n, o, oh, ow});
    unfold_batch(tmp.data(), o, n, oh * ow, y.data());

    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(b);
    return finish(std::move(y), std::move(inputs), [=](Node& self) {
        Tensor gt(Shape{o, ncols});
        fold_batch(self.grad.data(), o, n, oh * ow, gt.data());
        auto gmat = cmap(gt, o, ncols);
        Tensor* gx = grad_of(self, 0);
        Tensor* gw = grad_of(self, 1);
        if (gw) {
            Tensor cols2(Shape{ckk, ncols});
            im2col(value_of(self, 0).data(), n, c, h, wd, k, stride, pad, oh, ow, cols2.data());
            map(*gw, o, ckk).noalias() += gmat * cmap(cols2, ckk, ncols).transpose();
        }
        if (gx) {
            Tensor gcols(Shape{ckk, ncols});
            map(gcols, ckk, ncols).noalias() = cmap(value_of(self, 1), o, ckk).transpose() * gmat;
            col2im(gcols.data(), n, c, h, wd, k, stride, pad, oh, ow, gx->data());
        }
        if (has_bias)
            if (auto* gb = grad_of(self, 2)) Eigen::Map<Eigen::VectorXd>(gb->data(), o) += gmat.rowwise().sum();
    });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x, 4, "conv_transpose2d");
    require_rank(w, 4, "conv_transpose2d weight");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t o = w.dim(1), k = w.dim(2);
    if (w.dim(0) != c || w.dim(3) != k) {
        throw ShapeError("conv_transpose2d: weight " + shape_string(w.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
    }
    if (stride < 1 || pad < 0) throw ShapeError("conv_transpose2d: invalid stride/pad");
    const std::int64_t oh = (h - 1) * stride - 2 * pad + k, ow = (wd - 1) * stride - 2 * pad + k;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv_transpose2d: empty output");
    const std::int64_t okk = o * k * k, ncols = n * h * wd;
    const bool has_bias = b.valid();

    // Transposed convolution is the adjoint of a convolution from the output
    // grid down to the input grid with the same geometry.
    Tensor xt(Shape{c, ncols});
    fold_batch(x.value().data(), c, n, h * wd, xt.data());
    Tensor cols(Shape{okk, ncols});
    map(cols, okk, ncols).noalias() = cmap(w.value(), c, okk).transpose() * cmap(xt, c, ncols);
    Tensor y(Shape{n, o, oh, ow});
    col2im(cols.data(), n, o, oh, ow, k, stride, pad, h, wd, y.data());
    if (has_bias) {
        const double* bv = b.value().data();
        for (std::int64_t bi = 0; bi < n; ++bi)
            for (std::int64_t oi = 0; oi < o; ++oi) {
                double* p = y.data() + (bi * o + oi) * oh * ow;
                for (std::int64_t s = 0; s < oh * ow; ++s) p[s] += bv[oi];
            }
    }

    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(b);
    return finish(std::move(y), std::move(inputs), [=](Node& self) {
        Tensor gcols(Shape{okk, ncols});
        im2col(self.grad.data(), n, o, oh, ow, k, stride, pad, h, wd, gcols.data());
        auto gc = cmap(gcols, okk, ncols);
        if (auto* gx = grad_of(self, 0)) {
            Tensor gxt(Shape{c, ncols});
            map(gxt, c, ncols).noalias() = cmap(value_of(self, 1), c, okk) * gc;
            Tensor tmp(Shape{n, c, h, wd});
            unfold_batch(gxt.data(), c, n, h * wd, tmp.data());
            gx->add_inplace(tmp);
        }
        if (auto* gw = grad_of(self, 1)) {
            Tensor xt2(Shape{c, ncols});
            fold_batch(value_of(self, 0).data(), c, n, h * wd, xt2.data());
            map(*gw, c, okk).noalias() += cmap(xt2, c, ncols) * gc.transpose();
        }
        if (has_bias)
            if (auto* gb = grad_of(self, 2))
                for (std::int64_t bi = 0; bi < n; ++bi)
                    for (std::int64_t oi = 0; oi < o; ++oi) {
                        const double* p = self.grad.data() + (bi * o + oi) * oh * ow;
                        double s = 0;
                        for (std::int64_t t = 0; t < oh * ow; ++t) s += p[t];
                        (*gb)[static_cast<std::size_t>(oi)] += s;
                    }
    });
}

Var upsample_bilinear(const Var& x, std::int64_t out_h, std::int64_t out_w) {
    require_rank(x, 4, "upsample_bilinear");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("upsample_bilinear: empty target");
    auto ty = std::make_shared<std::vector<ResizeTap>>(resize_taps(h, out_h));
    auto tx = std::make_shared<std::vector<ResizeTap>>(resize_taps(w, out_w));
    Tensor y(Shape{n, c, out_h, out_w});
    const double* xv = x.value().data();
    for (std::int64_t p = 0; p < n * c; ++p) {
        const double* src = xv + p * h * w;
        double* dst = y.data() + p * out_h * out_w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
            const auto& a = (*ty)[static_cast<std::size_t>(oy)];
            for (std::int64_t ox = 0; ox < out_w; ++ox) {
                const auto& bt = (*tx)[static_cast<std::size_t>(ox)];
                double top = src[a.i0 * w + bt.i0] * (1 - bt.w1) + src[a.i0 * w + bt.i1] * bt.w1;
                double bot = src[a.i1 * w + bt.i0] * (1 - bt.w1) + src[a.i1 * w + bt.i1] * bt.w1;
                dst[oy * out_w + ox] = top * (1 - a.w1) + bot * a.w1;
            }
        }
    }
    return finish(std::move(y), {x}, [=](Node& self) {
        Tensor* g = grad_of(self, 0);
        if (!g) return;
        for (std::int64_t p = 0; p < n * c; ++p) {
            double* dst = g->data() + p * h * w;
            const double* gy = self.grad.data() + p * out_h * out_w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const auto& a = (*ty)[static_cast<std::size_t>(oy)];
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const auto& bt = (*tx)[static_cast<std::size_t>(ox)];
                    double v = gy[oy * out_w + ox];
                    dst[a.i0 * w + bt.i0] += v * (1 - a.w1) * (1 - bt.w1);
                    dst[a.i0 * w + bt.i1] += v * (1 - a.w1) * bt.w1;
                    dst[a.i1 * w + bt.i0] += v * a.w1 * (1 - bt.w1);
                    dst[a.i1 * w + bt.i1] += v * a.w1 * bt.w1;
                }
            }
        }
    });
}

Var global_avg_pool(const Var& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
    Tensor y(Shape{n, c});
    for (std::int64_t p = 0; p < n * c; ++p) {
        const double* src = x.value().data() + p * s;
        y[static_cast<std::size_t>(p)] = std::accumulate(src, src + s, 0.0) / static_cast<double>(s);
    }
    return finish(std::move(y), {x}, [n, c, s](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t p = 0; p < n * c; ++p) {
                double v = self.grad[static_cast<std::size_t>(p)] / static_cast<double>(s);
                double* dst = g->data() + p * s;
                for (std::int64_t i = 0; i < s; ++i) dst[i] += v;
            }
    });
}

Var channel_scale(const Var& x, const Var& g) {
    require_rank(x, 4, "channel_scale");
    require_rank(g, 2, "channel_scale gates");
    const std::int64_t n = x.dim(0), c = x.dim(1), s = x.dim(2) * x.dim(3);
    if (g.dim(0) != n || g.dim(1) != c) {
        throw ShapeError("channel_scale: gates " + shape_string(g.shape()) + " vs features " + shape_string(x.shape()));
    }
    Tensor y = x.value();
    for (std::int64_t p = 0; p < n * c; ++p) {
        double gv = g.value()[static_cast<std::size_t>(p)];
        double* dst = y.data() + p * s;
        for (std::int64_t i = 0; i < s; ++i) dst[i] *= gv;
    }
    return finish(std::move(y), {x, g}, [n, c, s](Node& self) {
        Tensor* gx = grad_of(self, 0);
        Tensor* gg = grad_of(self, 1);
        const Tensor& xv = value_of(self, 0);
        const Tensor& gv = value_of(self, 1);
        for (std::int64_t p = 0; p < n * c; ++p) {
            const double* gy = self.grad.data() + p * s;
            if (gx) {
                double* dst = gx->data() + p * s;
                double sc = gv[static_cast<std::size_t>(p)];
                for (std::int64_t i = 0; i < s; ++i) dst[i] += gy[i] * sc;
            }
            if (gg) {
                const double* src = xv.data() + p * s;
                double acc = 0;
                for (std::int64_t i = 0; i < s; ++i) acc += gy[i] * src[i];
                (*gg)[static_cast<std::size_t>(p)] += acc;
            }
        }
    });
}

Var reflect_pad(const Var& x, std::int64_t top, std::int64_t bottom, std::int64_t left, std::int64_t right) {
    require_rank(x, 4, "reflect_pad");
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (top < 0 || bottom < 0 || left < 0 || right < 0) throw ShapeError("reflect_pad: negative padding");
    const std::int64_t oh = h + top + bottom, ow = w + left + right;
    auto src_index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(oh * ow));
    for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx)
            (*src_index)[static_cast<std::size_t>(y * ow + xx)] =
                reflect_index(y - top, h) * w + reflect_index(xx - left, w);
    Tensor out(Shape{n, c, oh, ow});
    for (std::int64_t p = 0; p < n * c; ++p) {
        const double* src = x.value().data() + p * h * w;
        double* dst = out.data() + p * oh * ow;
        for (std::int64_t i = 0; i < oh * ow; ++i) dst[i] = src[(*src_index)[static_cast<std::size_t>(i)]];
    }
    return finish(std::move(out), {x}, [=](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::int64_t p = 0; p < n * c; ++p) {
                double* dst = g->data() + p * h * w;
                const double* gy = self.grad.data() + p * oh * ow;
                for (std::int64_t i = 0; i < oh * ow; ++i) dst[(*src_index)[static_cast<std::size_t>(i)]] += gy[i];
            }
    });
}

Var mse(const Var& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("mse: prediction " + shape_string(pred.shape()) + " vs target " + shape_string(target.shape()));
    }
    if (target.empty()) throw ShapeError("mse of empty tensor");
    const double inv = 1.0 / static_cast<double>(target.size());
    double acc = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        double d = pred.value()[i] - target[i];
        acc += d * d;
    }
    auto tgt = std::make_shared<Tensor>(target);
    return finish(Tensor::scalar(acc / static_cast<double>(target.size())), {pred}, [tgt, inv](Node& self) {
        if (auto* g = grad_of(self, 0)) {
            const Tensor& pv = value_of(self, 0);
            double gs = self.grad[0] * 2.0 * inv;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += gs * (pv[i] - (*tgt)[i]);
        }
    });
}

}  // namespace plip::ag
