#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace splitlab {

struct TensorData {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    std::vector<double> grad;   // empty until first accumulation
};

// Shared handle to a dense row-major matrix of 64-bit floats. Scalars are
// 1x1. Copying a Tensor aliases the same storage; use clone() to detach.
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}
    Tensor(std::size_t rows, std::size_t cols);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }
    static Tensor scalar(double v) { return Tensor(1, 1, {v}); }
    static Tensor identity(std::size_t n);

    std::size_t rows() const { return d_->rows; }
    std::size_t cols() const { return d_->cols; }
    std::size_t size() const { return d_->values.size(); }
    bool is_scalar() const { return size() == 1; }
    double item() const;

    double& at(std::size_t r, std::size_t c) { return d_->values[r * d_->cols + c]; }
    double at(std::size_t r, std::size_t c) const { return d_->values[r * d_->cols + c]; }

    std::vector<double>& values() { return d_->values; }
    const std::vector<double>& values() const { return d_->values; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& grad();             // allocates zeros on first use
    const std::vector<double>& grad() const; // throws if absent
    void zero_grad();
    void drop_grad() { d_->grad.clear(); }

    Tensor clone() const;
    bool same_storage(const Tensor& other) const { return d_ == other.d_; }
    TensorData* node() const { return d_.get(); }

private:
    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape, rebuilt per forward pass. Operations append a record
// holding the tensors involved and a closure implementing the backward rule.
class Tape {
public:
    void record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward);

    // Seeds d(root)/d(root) = 1 and runs all backward rules in reverse.
    // Gradients of tensors not produced on this tape (parameters, inputs)
    // accumulate additively; gradients of intermediates are reset first, so
    // calling backward twice exactly doubles every parameter gradient.
    void backward(const Tensor& root);

    // Seeds an externally supplied gradient at t (the split-boundary case:
    // the label party returns d(loss)/d(embedding)) and runs the rules for
    // operations recorded before t as usual.
    void backward_from(const Tensor& t, const std::vector<double>& seed);

    std::size_t num_ops() const { return ops_.size(); }
    void clear() { ops_.clear(); }

private:
    struct Op {
        std::vector<Tensor> inputs;
        Tensor output;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;

    bool produced_here(const Tensor& t) const;
    void run_reverse();
};

// Throws numeric_error naming `op` if any value is NaN or infinite.
void check_finite(const Tensor& t, const char* op);
void check_finite(double v, const char* op);

// Forward operations. A null tape runs the forward computation only
// (inference mode); otherwise the backward rule is recorded.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias); // bias 1xN broadcast over rows
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor sum(Tape* tape, const Tensor& x);                          // scalar
Tensor leaky_relu(Tape* tape, const Tensor& x, double slope);
Tensor tanh_act(Tape* tape, const Tensor& x);
Tensor layer_norm(Tape* tape, const Tensor& x);                   // per-row, no affine
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

// Row-wise softmax probabilities (forward only, numerically stabilized).
Tensor softmax(const Tensor& logits);

} // namespace splitlab
