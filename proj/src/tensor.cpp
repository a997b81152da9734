#include "splitlab/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "splitlab/errors.hpp"

namespace splitlab {

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : d_(std::make_shared<TensorData>()) {
    d_->rows = rows;
    d_->cols = cols;
    d_->values.assign(rows * cols, 0.0);
}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : d_(std::make_shared<TensorData>()) {
    if (values.size() != rows * cols)
        throw shape_error("Tensor: " + std::to_string(values.size()) + " values for shape " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    d_->rows = rows;
    d_->cols = cols;
    d_->values = std::move(values);
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (!is_scalar()) throw contract_error("item: tensor is not scalar");
    return d_->values[0];
}

std::vector<double>& Tensor::grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) throw contract_error("grad: no gradient accumulated");
    return d_->grad;
}

void Tensor::zero_grad() {
    d_->grad.assign(d_->values.size(), 0.0);
}

Tensor Tensor::clone() const {
    Tensor t(rows(), cols());
    t.d_->values = d_->values;
    return t;
}

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
        if (!std::isfinite(v))
            throw numeric_error(std::string(op) + ": non-finite value produced");
}

void check_finite(double v, const char* op) {
    if (!std::isfinite(v))
        throw numeric_error(std::string(op) + ": non-finite value produced");
}

void Tape::record(std::vector<Tensor> inputs, Tensor output, std::function<void()> backward) {
    ops_.push_back(Op{std::move(inputs), std::move(output), std::move(backward)});
}

bool Tape::produced_here(const Tensor& t) const {
    for (const Op& op : ops_)
        if (op.output.same_storage(t)) return true;
    return false;
}

void Tape::run_reverse() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
        if (it->backward) it->backward();
}

void Tape::backward(const Tensor& root) {
    if (!root.is_scalar()) throw contract_error("backward: root must be scalar");
    if (!produced_here(root)) throw contract_error("backward: root was not produced on this tape");
    for (Op& op : ops_) op.output.zero_grad();
    Tensor r = root;
    r.grad()[0] += 1.0;
    run_reverse();
}

void Tape::backward_from(const Tensor& t, const std::vector<double>& seed) {
    if (seed.size() != t.size())
        throw shape_error("backward_from: seed gradient size mismatch");
    for (Op& op : ops_) op.output.zero_grad();
    Tensor target = t;
    auto& g = target.grad();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    run_reverse();
}

namespace {

// Accumulates src into dst's grad buffer.
void add_into_grad(Tensor t, const std::vector<double>& src) {
    auto& g = t.grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

} // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw shape_error("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " by " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c(m, n);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& cv = c.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = &bv[p * n];
            double* crow = &cv[i * n];
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    check_finite(c, "matmul");
    if (tape) {
        Tensor A = a, B = b;
        tape->record({a, b}, c, [A, B, c]() mutable {
            const auto& gc = c.grad();
            const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
            auto& ga = A.grad();
            auto& gb = B.grad();
            const auto& av = A.values();
            const auto& bv = B.values();
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += gc[i * n + j] * bv[p * n + j];
                    ga[i * k + p] += s;
                }
            // dB = A^T * dC
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += av[i * k + p] * gc[i * n + j];
                    gb[p * n + j] += s;
                }
        });
    }
    return c;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols())
        throw shape_error("add_bias: bias must be 1x" + std::to_string(x.cols()));
    Tensor out(x.rows(), x.cols());
    const auto& xv = x.values();
    const auto& bv = bias.values();
    auto& ov = out.values();
    const std::size_t n = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = xv[i * n + j] + bv[j];
    check_finite(out, "add_bias");
    if (tape) {
        Tensor X = x, B = bias;
        tape->record({x, bias}, out, [X, B, out]() mutable {
            const auto& go = out.grad();
            auto& gx = X.grad();
            auto& gb = B.grad();
            const std::size_t n = X.cols();
            for (std::size_t i = 0; i < X.rows(); ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    gx[i * n + j] += go[i * n + j];
                    gb[j] += go[i * n + j];
                }
        });
    }
    return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw shape_error("add: shape mismatch");
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] = a.values()[i] + b.values()[i];
    check_finite(out, "add");
    if (tape) {
        Tensor A = a, B = b;
        tape->record({a, b}, out, [A, B, out]() mutable {
            const auto& go = out.grad();
            add_into_grad(A, go);
            add_into_grad(B, go);
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
    Tensor out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = c * a.values()[i];
    check_finite(out, "scale");
    if (tape) {
        Tensor A = a;
        tape->record({a}, out, [A, out, c]() mutable {
            const auto& go = out.grad();
            auto& ga = A.grad();
            for (std::size_t i = 0; i < go.size(); ++i) ga[i] += c * go[i];
        });
    }
    return out;
}

Tensor sum(Tape* tape, const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    check_finite(s, "sum");
    Tensor out = Tensor::scalar(s);
    if (tape) {
        Tensor X = x;
        tape->record({x}, out, [X, out]() mutable {
            const double g = out.grad()[0];
            auto& gx = X.grad();
            for (double& v : gx) v += g;
        });
    }
    return out;
}

Tensor leaky_relu(Tape* tape, const Tensor& x, double slope) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x.values()[i];
        out.values()[i] = v > 0.0 ? v : slope * v;
    }
    check_finite(out, "leaky_relu");
    if (tape) {
        Tensor X = x;
        tape->record({x}, out, [X, out, slope]() mutable {
            const auto& go = out.grad();
            auto& gx = X.grad();
            const auto& xv = X.values();
            // Derivative at exactly 0 is the slope (tie broken toward the leak).
            for (std::size_t i = 0; i < go.size(); ++i)
                gx[i] += go[i] * (xv[i] > 0.0 ? 1.0 : slope);
        });
    }
    return out;
}

Tensor tanh_act(Tape* tape, const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = std::tanh(x.values()[i]);
    check_finite(out, "tanh");
    if (tape) {
        Tensor X = x;
        tape->record({x}, out, [X, out]() mutable {
            const auto& go = out.grad();
            const auto& ov = out.values();
            auto& gx = X.grad();
            for (std::size_t i = 0; i < go.size(); ++i)
                gx[i] += go[i] * (1.0 - ov[i] * ov[i]);
        });
    }
    return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x) {
    if (x.cols() < 2) throw contract_error("layer_norm: needs at least 2 features");
    const std::size_t n = x.rows(), d = x.cols();
    constexpr double kVarGuard = 1e-12;
    Tensor out(n, d);
    std::vector<double> inv_sigma(n);
    std::vector<char> clamped(n, 0);
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xv[i * d + j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xv[i * d + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d); // biased variance makes ||out||^2 = d exact
        clamped[i] = var < kVarGuard ? 1 : 0;
        inv_sigma[i] = 1.0 / std::sqrt(std::max(var, kVarGuard));
        for (std::size_t j = 0; j < d; ++j) ov[i * d + j] = (xv[i * d + j] - mu) * inv_sigma[i];
    }
    check_finite(out, "layer_norm");
    if (tape) {
        Tensor X = x;
        tape->record({x}, out, [X, out, inv_sigma, clamped]() mutable {
            const std::size_t n = X.rows(), d = X.cols();
            const auto& go = out.grad();
            const auto& ov = out.values();
            auto& gx = X.grad();
            for (std::size_t i = 0; i < n; ++i) {
                double gmean = 0.0, gdoty = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    gmean += go[i * d + j];
                    gdoty += go[i * d + j] * ov[i * d + j];
                }
                gmean /= static_cast<double>(d);
                gdoty /= static_cast<double>(d);
                // Clamped rows have sigma fixed at sqrt(guard), so the
                // variance path carries no gradient for them.
                for (std::size_t j = 0; j < d; ++j) {
                    double g = go[i * d + j] - gmean;
                    if (!clamped[i]) g -= ov[i * d + j] * gdoty;
                    gx[i * d + j] += inv_sigma[i] * g;
                }
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    Tensor p(n, c);
    const auto& lv = logits.values();
    auto& pv = p.values();
    for (std::size_t i = 0; i < n; ++i) {
        double mx = lv[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            pv[i * c + j] = std::exp(lv[i * c + j] - mx);
            z += pv[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) pv[i * c + j] /= z;
    }
    return p;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n)
        throw shape_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw contract_error("softmax_cross_entropy: label " + std::to_string(y) +
                                 " out of range [0," + std::to_string(c) + ")");
    if (n == 0) throw contract_error("softmax_cross_entropy: empty batch");
    Tensor p = softmax(logits);
    double loss = 0.0;
    const auto& pv = p.values();
    for (std::size_t i = 0; i < n; ++i) {
        const double q = pv[i * c + static_cast<std::size_t>(labels[i])];
        loss -= std::log(std::max(q, 1e-300));
    }
    loss /= static_cast<double>(n);
    check_finite(loss, "softmax_cross_entropy");
    Tensor out = Tensor::scalar(loss);
    if (tape) {
        Tensor L = logits;
        tape->record({logits}, out, [L, out, p, labels]() mutable {
            const double g = out.grad()[0];
            const std::size_t n = L.rows(), c = L.cols();
            auto& gl = L.grad();
            const auto& pv = p.values();
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    double d = pv[i * c + j];
                    if (j == static_cast<std::size_t>(labels[i])) d -= 1.0;
                    gl[i * c + j] += g * d * inv_n;
                }
        });
    }
    return out;
}

} // namespace splitlab
