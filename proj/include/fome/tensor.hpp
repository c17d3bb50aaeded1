#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fome {

class Rng;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    bool leaf = true;
};

/// Dense row-major f64 tensor with shared storage. Copies alias the same
/// storage (handle semantics); use clone() for a deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    const Shape& shape() const noexcept { return impl_->shape; }
    std::size_t rank() const noexcept { return impl_->shape.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
    std::size_t numel() const noexcept { return impl_->data.size(); }

    std::span<double> data() noexcept { return impl_->data; }
    std::span<const double> data() const noexcept { return impl_->data; }
    double item() const;

    bool requires_grad() const noexcept { return impl_->requires_grad; }
    bool has_grad() const noexcept { return !impl_->grad.empty(); }
    std::span<const double> grad() const noexcept { return impl_->grad; }
    std::span<double> grad() noexcept { return impl_->grad; }
    void zero_grad();

    Tensor clone(bool requires_grad = false) const;

    const std::shared_ptr<TensorImpl>& impl() const noexcept { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Define-by-run record of differentiable ops. Ops executed while a tape is
/// active (see TapeScope) append their backward closures; backward() runs
/// them in exact reverse order. Gradients of leaves accumulate across
/// backward calls; intermediate gradients are reset at the start of each.
class Tape {
public:
    void record(std::shared_ptr<TensorImpl> output, std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const noexcept { return entries_.size(); }

private:
    struct Entry {
        std::shared_ptr<TensorImpl> output;
        std::function<void()> backward_fn;
    };
    std::vector<Entry> entries_;
};

/// Makes `tape` the active tape of the calling thread for the scope.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape() noexcept;

/// Convenience: backward on the active tape.
void backward(const Tensor& loss);

/// Token grouping for fused attention: token(g, m) = g*group_stride + m*member_stride.
struct AttentionLayout {
    std::size_t groups = 0;
    std::size_t members = 0;
    std::size_t group_stride = 0;
    std::size_t member_stride = 0;
};

namespace ops {

Tensor add(const Tensor& a, const Tensor& b);  // b same shape or a suffix of a's shape (broadcast)
Tensor sub(const Tensor& a, const Tensor& b);  // same shape
Tensor mul(const Tensor& a, const Tensor& b);  // same shape
Tensor scale(const Tensor& a, double s);
/// [..., K] x [K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor softmax(const Tensor& a, std::size_t axis);
/// Normalizes over the last axis, then gamma * xhat + beta (gamma, beta: [D]).
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact GELU: x * Phi(x).
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// mean((pred - target)^2) over all elements; target is treated as constant.
Tensor mse(const Tensor& pred, const Tensor& target);
/// Rows of table [V, D] picked by index -> [n, D].
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> indices);
/// Rows of a 2-D tensor -> [rows.size(), D].
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Copy of a [N, D] with the listed rows replaced by `row` [D].
Tensor replace_rows(const Tensor& a, const Tensor& row, std::span<const std::size_t> rows);
/// Column mean of a [N, D] -> [1, D]. The per-column sum is formed over
/// values sorted ascending, so it is bitwise invariant to row order.
Tensor mean_rows(const Tensor& a);
/// -log softmax(logits)[label] for logits [1, K] or [K].
Tensor cross_entropy(const Tensor& logits, std::size_t label);
/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, Rng& rng);

/// Multi-head scaled dot-product attention over the groups of `layout`.
/// q, k: [N, heads*dk]; v: [N, heads*dv]; returns [N, heads*dv]. Key-axis
/// reductions sum sorted terms, so permuting members within a group permutes
/// the output rows bitwise-exactly. When `probs` is non-null it receives the
/// attention matrices as [groups][heads][members][members].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const AttentionLayout& layout,
                 double scale, std::vector<double>* probs = nullptr);

}  // namespace ops

/// Sum of values in ascending order; bitwise invariant to input order.
double sorted_sum(std::span<double> values);

}  // namespace fome
