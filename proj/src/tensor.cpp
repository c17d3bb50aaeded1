#include "fome/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fome/error.hpp"
#include "fome/rng.hpp"

namespace fome {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<double>& grad_of(TensorImpl& t) {
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

using ImplPtr = std::shared_ptr<TensorImpl>;

// Marks `out` as differentiable and records `fn` when a tape is active and
// any input requires grad. Returns out for chaining.
template <typename Fn>
Tensor finish(Tensor out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
    Tape* tape = g_active_tape;
    if (tape == nullptr) return out;
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
    if (!needs) return out;
    out.impl()->requires_grad = true;
    out.impl()->leaf = false;
    tape->record(out.impl(), std::forward<Fn>(fn));
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
    }
}

struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size()) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

double sorted_sum(std::span<double> values) {
    std::sort(values.begin(), values.end());
    double acc = 0.0;
    for (double v : values) acc += v;
    return acc;
}

Tensor::Tensor() : impl_(std::make_shared<TensorImpl>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : impl_(std::make_shared<TensorImpl>()) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone(bool requires_grad) const { return Tensor(shape(), impl_->data, requires_grad); }

void Tape::record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw ContractError("backward on a loss that does not require grad");
    for (auto& e : entries_) e.output->grad.clear();
    grad_of(*loss.impl())[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->output->grad.empty()) it->backward_fn();
    }
}

void Tape::clear() { entries_.clear(); }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

void backward(const Tensor& loss) {
    if (g_active_tape == nullptr) throw ContractError("backward called with no active tape");
    g_active_tape->backward(loss);
}

namespace ops {

Tensor add(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
    if (!suffix) {
        throw ShapeError("add: shape " + shape_str(sb) + " does not broadcast onto " + shape_str(sa));
    }
    const std::size_t nb = b.numel();
    Tensor out(sa, std::vector<double>(a.data().begin(), a.data().end()));
    auto od = out.data();
    const auto bd = b.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i % nb];
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    return finish(out, {&a, &b}, [ai, bi, oi, nb] {
        const auto& g = oi->grad;
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % nb] += g[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape(), std::vector<double>(a.numel()));
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    return finish(out, {&a, &b}, [ai, bi, oi] {
        const auto& g = oi->grad;
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape(), std::vector<double>(a.numel()));
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    return finish(out, {&a, &b}, [ai, bi, oi] {
        const auto& g = oi->grad;
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ai->data[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape(), std::vector<double>(a.numel()));
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, s] {
        auto& ga = grad_of(*ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * s;
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 1 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " are incompatible");
    }
    const std::size_t K = b.dim(0), N = b.dim(1), rows = a.numel() / K;
    Shape out_shape = a.shape();
    out_shape.back() = N;
    Tensor out = Tensor::zeros(out_shape);
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* O = out.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
            const double av = A[r * K + k];
            const double* brow = B + k * N;
            double* orow = O + r * N;
            for (std::size_t n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    return finish(out, {&a, &b}, [ai, bi, oi, rows, K, N] {
        const double* G = oi->grad.data();
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t k = 0; k < K; ++k) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < N; ++n) acc += G[r * N + n] * bi->data[k * N + n];
                    ga[r * K + k] += acc;
                }
            }
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double av = ai->data[r * K + k];
                    for (std::size_t n = 0; n < N; ++n) gb[k * N + n] += av * G[r * N + n];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected a 2-D tensor, got " + shape_str(a.shape()));
    const std::size_t R = a.dim(0), C = a.dim(1);
    Tensor out = Tensor::zeros({C, R});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.data()[c * R + r] = a.data()[r * C + c];
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, R, C] {
        auto& ga = grad_of(*ai);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += oi->grad[c * R + r];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    Tensor out(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi] {
        auto& ga = grad_of(*ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(out_shape));
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != out_shape[i]) {
                throw ShapeError("concat: shapes " + shape_str(s) + " and " + shape_str(out_shape) + " differ off-axis");
            }
        }
        total += s[axis];
    }
    out_shape[axis] = total;
    const AxisSplit sp = split_axis(out_shape, axis, "concat");
    Tensor out = Tensor::zeros(out_shape);
    std::vector<ImplPtr> impls;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t n = p.dim(axis);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    out.data()[(o * total + offset + j) * sp.inner + i] = p.data()[(o * n + j) * sp.inner + i];
        impls.push_back(p.impl());
        offsets.push_back(offset);
        offset += n;
    }
    Tape* tape = active_tape();
    const bool needs = std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (tape == nullptr || !needs) return out;
    ImplPtr oi = out.impl();
    oi->requires_grad = true;
    oi->leaf = false;
    tape->record(oi, [impls, offsets, oi, sp, total, axis] {
        for (std::size_t k = 0; k < impls.size(); ++k) {
            if (!impls[k]->requires_grad) continue;
            const std::size_t n = impls[k]->shape[axis];
            auto& g = grad_of(*impls[k]);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        g[(o * n + j) * sp.inner + i] += oi->grad[(o * total + offsets[k] + j) * sp.inner + i];
        }
    });
    return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    const AxisSplit sp = split_axis(a.shape(), axis, "slice");
    if (start + length > sp.n) {
        throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of " + shape_str(a.shape()));
    }
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    Tensor out = Tensor::zeros(out_shape);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < length; ++j)
            for (std::size_t i = 0; i < sp.inner; ++i)
                out.data()[(o * length + j) * sp.inner + i] = a.data()[(o * sp.n + start + j) * sp.inner + i];
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, sp, start, length] {
        auto& ga = grad_of(*ai);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < length; ++j)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    ga[(o * sp.n + start + j) * sp.inner + i] += oi->grad[(o * length + j) * sp.inner + i];
    });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
    Tensor out = Tensor::zeros(a.shape());
    const auto x = a.data();
    auto y = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
            double mx = -INFINITY;
            for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, x[at(j)]);
            double denom = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) denom += (y[at(j)] = std::exp(x[at(j)] - mx));
            for (std::size_t j = 0; j < sp.n; ++j) y[at(j)] /= denom;
        }
    }
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, sp] {
        auto& ga = grad_of(*ai);
        const auto& g = oi->grad;
        const auto& yv = oi->data;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const auto at = [&](std::size_t j) { return (o * sp.n + j) * sp.inner + i; };
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.n; ++j) dot += yv[at(j)] * g[at(j)];
                for (std::size_t j = 0; j < sp.n; ++j) ga[at(j)] += yv[at(j)] * (g[at(j)] - dot);
            }
        }
    });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t D = a.shape().back();
    if (gamma.numel() != D || beta.numel() != D) {
        throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " do not match last axis of " + shape_str(a.shape()));
    }
    const std::size_t rows = a.numel() / D;
    Tensor out = Tensor::zeros(a.shape());
    auto xhat = std::make_shared<std::vector<double>>(a.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.data().data() + r * D;
        double mu = 0.0;
        for (std::size_t d = 0; d < D; ++d) mu += x[d];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t d = 0; d < D; ++d) var += (x[d] - mu) * (x[d] - mu);
        var /= static_cast<double>(D);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::size_t d = 0; d < D; ++d) {
            const double xh = (x[d] - mu) * is;
            (*xhat)[r * D + d] = xh;
            out.data()[r * D + d] = gamma.data()[d] * xh + beta.data()[d];
        }
    }
    ImplPtr ai = a.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    return finish(out, {&a, &gamma, &beta}, [ai, gi, bi, oi, xhat, inv_std, rows, D] {
        const auto& g = oi->grad;
        if (gi->requires_grad) {
            auto& gg = grad_of(*gi);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t d = 0; d < D; ++d) gg[d] += g[r * D + d] * (*xhat)[r * D + d];
        }
        if (bi->requires_grad) {
            auto& gb = grad_of(*bi);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t d = 0; d < D; ++d) gb[d] += g[r * D + d];
        }
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            const double invD = 1.0 / static_cast<double>(D);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double dxh = g[r * D + d] * gi->data[d];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * (*xhat)[r * D + d];
                }
                mean_dxh *= invD;
                mean_dxh_xh *= invD;
                for (std::size_t d = 0; d < D; ++d) {
                    const double dxh = g[r * D + d] * gi->data[d];
                    ga[r * D + d] += (*inv_std)[r] * (dxh - mean_dxh - (*xhat)[r * D + d] * mean_dxh_xh);
                }
            }
        }
    });
}

Tensor gelu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.data()[i];
        out.data()[i] = 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    }
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi] {
        auto& ga = grad_of(*ai);
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double x = ai->data[i];
            const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            ga[i] += oi->grad[i] * (cdf + x * pdf);
        }
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi] {
        auto& ga = grad_of(*ai);
        for (double& g : ga) g += oi->grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    if (pred.numel() == 0) throw ShapeError("mse of empty tensors");
    const double n = static_cast<double>(pred.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / n);
    ImplPtr pi = pred.impl(), ti = target.impl(), oi = out.impl();
    return finish(out, {&pred}, [pi, ti, oi, n] {
        auto& gp = grad_of(*pi);
        const double g = oi->grad[0] * 2.0 / n;
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * (pi->data[i] - ti->data[i]);
    });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices) {
    if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
    const std::size_t V = table.dim(0), D = table.dim(1);
    Tensor out = Tensor::zeros({indices.size(), D});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= V) {
            throw IndexError("embedding index " + std::to_string(indices[i]) + " out of range for table of " +
                             std::to_string(V) + " rows");
        }
        std::copy_n(table.data().begin() + indices[i] * D, D, out.data().begin() + i * D);
    }
    ImplPtr ti = table.impl(), oi = out.impl();
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return finish(out, {&table}, [ti, oi, idx = std::move(idx), D] {
        auto& gt = grad_of(*ti);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t d = 0; d < D; ++d) gt[idx[i] * D + d] += oi->grad[i * D + d];
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    if (a.rank() != 2) throw ShapeError("gather_rows: expected 2-D tensor, got " + shape_str(a.shape()));
    return embedding_lookup(a, rows);
}

Tensor replace_rows(const Tensor& a, const Tensor& row, std::span<const std::size_t> rows) {
    if (a.rank() != 2 || row.numel() != a.dim(1)) {
        throw ShapeError("replace_rows: row " + shape_str(row.shape()) + " does not fit " + shape_str(a.shape()));
    }
    const std::size_t N = a.dim(0), D = a.dim(1);
    Tensor out(a.shape(), std::vector<double>(a.data().begin(), a.data().end()));
    std::vector<char> replaced(N, 0);
    for (std::size_t r : rows) {
        if (r >= N) throw IndexError("replace_rows: row " + std::to_string(r) + " out of range for " + std::to_string(N));
        replaced[r] = 1;
        std::copy_n(row.data().begin(), D, out.data().begin() + r * D);
    }
    ImplPtr ai = a.impl(), ri = row.impl(), oi = out.impl();
    return finish(out, {&a, &row}, [ai, ri, oi, replaced = std::move(replaced), N, D] {
        const auto& g = oi->grad;
        if (ai->requires_grad) {
            auto& ga = grad_of(*ai);
            for (std::size_t r = 0; r < N; ++r)
                if (!replaced[r])
                    for (std::size_t d = 0; d < D; ++d) ga[r * D + d] += g[r * D + d];
        }
        if (ri->requires_grad) {
            auto& gr = grad_of(*ri);
            for (std::size_t r = 0; r < N; ++r)
                if (replaced[r])
                    for (std::size_t d = 0; d < D; ++d) gr[d] += g[r * D + d];
        }
    });
}

Tensor mean_rows(const Tensor& a) {
    if (a.rank() != 2 || a.dim(0) == 0) throw ShapeError("mean_rows: expected non-empty 2-D tensor, got " + shape_str(a.shape()));
    const std::size_t N = a.dim(0), D = a.dim(1);
    Tensor out = Tensor::zeros({1, D});
    std::vector<double> column(N);
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t r = 0; r < N; ++r) column[r] = a.data()[r * D + d];
        out.data()[d] = sorted_sum(column) / static_cast<double>(N);
    }
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, N, D] {
        auto& ga = grad_of(*ai);
        for (std::size_t r = 0; r < N; ++r)
            for (std::size_t d = 0; d < D; ++d) ga[r * D + d] += oi->grad[d] / static_cast<double>(N);
    });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t K = logits.numel();
    if (label >= K) throw IndexError("cross_entropy: label " + std::to_string(label) + " >= classes " + std::to_string(K));
    const auto x = logits.data();
    const double mx = *std::max_element(x.begin(), x.end());
    double denom = 0.0;
    for (double v : x) denom += std::exp(v - mx);
    const double lse = mx + std::log(denom);
    Tensor out = Tensor::scalar(lse - x[label]);
    ImplPtr li = logits.impl(), oi = out.impl();
    return finish(out, {&logits}, [li, oi, label, lse] {
        auto& gl = grad_of(*li);
        const double g = oi->grad[0];
        for (std::size_t k = 0; k < gl.size(); ++k) {
            gl[k] += g * (std::exp(li->data[k] - lse) - (k == label ? 1.0 : 0.0));
        }
    });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw ContractError("dropout probability must be < 1");
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(a.numel());
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) {
        (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out.data()[i] = a.data()[i] * (*mask)[i];
    }
    ImplPtr ai = a.impl(), oi = out.impl();
    return finish(out, {&a}, [ai, oi, mask] {
        auto& ga = grad_of(*ai);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * (*mask)[i];
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const AttentionLayout& layout,
                 double scale, std::vector<double>* probs_out) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.shape() != k.shape() || v.dim(0) != q.dim(0)) {
        throw ShapeError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()) + " are incompatible");
    }
    if (heads == 0 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
        throw ShapeError("attention: width not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t N = q.dim(0);
    const std::size_t G = layout.groups, M = layout.members;
    if (G * M != N || (M > 1 && (G - 1) * layout.group_stride + (M - 1) * layout.member_stride >= N)) {
        throw ShapeError("attention: layout " + std::to_string(G) + "x" + std::to_string(M) + " does not cover " +
                         std::to_string(N) + " tokens");
    }
    const std::size_t QW = q.dim(1), VW = v.dim(1);
    const std::size_t dk = QW / heads, dv = VW / heads;

    auto probs = std::make_shared<std::vector<double>>(G * heads * M * M);
    Tensor out = Tensor::zeros({N, VW});
    const double* Q = q.data().data();
    const double* K = k.data().data();
    const double* V = v.data().data();
    double* O = out.data().data();
    std::vector<std::size_t> tok(M);
    std::vector<double> buf(M);
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t m = 0; m < M; ++m) tok[m] = g * layout.group_stride + m * layout.member_stride;
        for (std::size_t h = 0; h < heads; ++h) {
            double* A = probs->data() + (g * heads + h) * M * M;
            for (std::size_t i = 0; i < M; ++i) {
                const double* qi = Q + tok[i] * QW + h * dk;
                double* row = A + i * M;
                double mx = -INFINITY;
                for (std::size_t j = 0; j < M; ++j) {
                    const double* kj = K + tok[j] * QW + h * dk;
                    double s = 0.0;
                    for (std::size_t d = 0; d < dk; ++d) s += qi[d] * kj[d];
                    row[j] = s * scale;
                    mx = std::max(mx, row[j]);
                }
                for (std::size_t j = 0; j < M; ++j) buf[j] = row[j] = std::exp(row[j] - mx);
                const double denom = sorted_sum(buf);
                for (std::size_t j = 0; j < M; ++j) row[j] /= denom;
                double* oi = O + tok[i] * VW + h * dv;
                for (std::size_t d = 0; d < dv; ++d) {
                    for (std::size_t j = 0; j < M; ++j) buf[j] = row[j] * V[tok[j] * VW + h * dv + d];
                    oi[d] = sorted_sum(buf);
                }
            }
        }
    }
    if (probs_out != nullptr) *probs_out = *probs;

    ImplPtr qi = q.impl(), ki = k.impl(), vi = v.impl(), oi = out.impl();
    return finish(out, {&q, &k, &v}, [qi, ki, vi, oi, probs, layout, heads, scale, dk, dv, QW, VW] {
        const std::size_t G = layout.groups, M = layout.members;
        const double* dO = oi->grad.data();
        double* dQ = qi->requires_grad ? grad_of(*qi).data() : nullptr;
        double* dK = ki->requires_grad ? grad_of(*ki).data() : nullptr;
        double* dV = vi->requires_grad ? grad_of(*vi).data() : nullptr;
        const double* Q = qi->data.data();
        const double* K = ki->data.data();
        const double* V = vi->data.data();
        std::vector<std::size_t> tok(M);
        std::vector<double> dA(M);
        for (std::size_t g = 0; g < G; ++g) {
            for (std::size_t m = 0; m < M; ++m) tok[m] = g * layout.group_stride + m * layout.member_stride;
            for (std::size_t h = 0; h < heads; ++h) {
                const double* A = probs->data() + (g * heads + h) * M * M;
                for (std::size_t i = 0; i < M; ++i) {
                    const double* go = dO + tok[i] * VW + h * dv;
                    const double* row = A + i * M;
                    double rowdot = 0.0;
                    for (std::size_t j = 0; j < M; ++j) {
                        const double* vj = V + tok[j] * VW + h * dv;
                        double s = 0.0;
                        for (std::size_t d = 0; d < dv; ++d) s += go[d] * vj[d];
                        dA[j] = s;
                        rowdot += row[j] * s;
                        if (dV != nullptr) {
                            double* gv = dV + tok[j] * VW + h * dv;
                            for (std::size_t d = 0; d < dv; ++d) gv[d] += row[j] * go[d];
                        }
                    }
                    for (std::size_t j = 0; j < M; ++j) {
                        const double ds = row[j] * (dA[j] - rowdot) * scale;
                        if (dQ != nullptr) {
                            double* gq = dQ + tok[i] * QW + h * dk;
                            const double* kj = K + tok[j] * QW + h * dk;
                            for (std::size_t d = 0; d < dk; ++d) gq[d] += ds * kj[d];
                        }
                        if (dK != nullptr) {
                            double* gk = dK + tok[j] * QW + h * dk;
                            const double* qv = Q + tok[i] * QW + h * dk;
                            for (std::size_t d = 0; d < dk; ++d) gk[d] += ds * qv[d];
                        }
                    }
                }
            }
        }
    });
}

}  // namespace ops

}  // namespace fome
