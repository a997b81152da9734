#include "splitlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "splitlab/errors.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

std::string defense_name(Defense d) {
    switch (d) {
        case Defense::vanilla: return "vanilla";
        case Defense::pe: return "pe";
        case Defense::dcor: return "dcor";
        case Defense::label_dp: return "label_dp";
    }
    return "vanilla";
}

Defense defense_from_name(const std::string& name) {
    if (name == "vanilla") return Defense::vanilla;
    if (name == "pe") return Defense::pe;
    if (name == "dcor") return Defense::dcor;
    if (name == "label_dp") return Defense::label_dp;
    throw contract_error("unknown defense '" + name + "'");
}

void LossConfig::validate() const {
    if (alpha < 0.0) throw contract_error("loss config: alpha must be >= 0");
    if (flip_ratio < 0.0 || flip_ratio > 1.0)
        throw contract_error("loss config: flip_ratio must be in [0,1]");
    if (!(arccos_clamp > 0.0) || !(arccos_clamp < 1e-3))
        throw contract_error("loss config: arccos clamp must lie in (0, 1e-3)");
}

namespace {

std::vector<std::vector<std::size_t>> class_buckets(const std::vector<int>& y) {
    std::unordered_map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
    std::vector<std::vector<std::size_t>> buckets;
    for (auto& [label, idx] : by_class)
        if (idx.size() >= 2) buckets.push_back(std::move(idx));
    return buckets;
}

} // namespace

Tensor pe_loss_angular(Tape* tape, const Tensor& z, const std::vector<int>& y, double delta) {
    if (y.size() != z.rows()) throw shape_error("pe_loss_angular: labels/rows mismatch");
    if (!(delta > 0.0) || !(delta < 1e-3))
        throw contract_error("pe_loss_angular: clamp delta must lie in (0, 1e-3)");
    const std::size_t d = z.cols();
    const auto buckets = class_buckets(y);

    struct PairTerm {
        std::size_t i, j;
        double weight; // d(loss)/d(u) * (1/d) for the unordered pair, 0 when clamped
    };
    std::vector<PairTerm> terms;
    double loss = 0.0;
    const auto& zv = z.values();
    for (const auto& idx : buckets) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                const std::size_t i = idx[a], j = idx[b];
                double dot = 0.0;
                for (std::size_t k = 0; k < d; ++k) dot += zv[i * d + k] * zv[j * d + k];
                const double raw_u = dot / static_cast<double>(d);
                const bool clamped = raw_u > 1.0 - delta || raw_u < -1.0 + delta;
                const double u = std::clamp(raw_u, -1.0 + delta, 1.0 - delta);
                const double theta = std::acos(u);
                loss += 2.0 / theta; // ordered pairs: both directions
                double w = 0.0;
                if (!clamped)
                    w = 2.0 / (theta * theta * std::sqrt(1.0 - u * u) * static_cast<double>(d));
                terms.push_back({i, j, w});
            }
        }
    }
    check_finite(loss, "pe_loss_angular");
    Tensor zin = z;
    Tensor out = Tensor::scalar(loss);
    if (tape) {
        tape->record({z}, out, [zin, out, terms, d]() mutable {
            const double g = out.grad()[0];
            auto& gz = zin.grad();
            const auto& zv = zin.values();
            for (const PairTerm& t : terms) {
                if (t.weight == 0.0) continue;
                for (std::size_t k = 0; k < d; ++k) {
                    gz[t.i * d + k] += g * t.weight * zv[t.j * d + k];
                    gz[t.j * d + k] += g * t.weight * zv[t.i * d + k];
                }
            }
        });
    }
    return out;
}

Tensor pe_loss_euclidean(Tape* tape, const Tensor& z, const std::vector<int>& y) {
    if (y.size() != z.rows()) throw shape_error("pe_loss_euclidean: labels/rows mismatch");
    const std::size_t d = z.cols();
    const auto buckets = class_buckets(y);

    struct PairTerm {
        std::size_t i, j;
        double inv_r3;
    };
    std::vector<PairTerm> terms;
    double loss = 0.0;
    const auto& zv = z.values();
    for (const auto& idx : buckets) {
        for (std::size_t a = 0; a < idx.size(); ++a) {
            for (std::size_t b = a + 1; b < idx.size(); ++b) {
                const std::size_t i = idx[a], j = idx[b];
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = zv[i * d + k] - zv[j * d + k];
                    s += diff * diff;
                }
                const double r = std::sqrt(s + 1e-12);
                loss += 2.0 / r;
                terms.push_back({i, j, 2.0 / (r * r * r)});
            }
        }
    }
    check_finite(loss, "pe_loss_euclidean");
    Tensor zin = z;
    Tensor out = Tensor::scalar(loss);
    if (tape) {
        tape->record({z}, out, [zin, out, terms, d]() mutable {
            const double g = out.grad()[0];
            auto& gz = zin.grad();
            const auto& zv = zin.values();
            for (const PairTerm& t : terms) {
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = zv[t.i * d + k] - zv[t.j * d + k];
                    gz[t.i * d + k] -= g * t.inv_r3 * diff;
                    gz[t.j * d + k] += g * t.inv_r3 * diff;
                }
            }
        });
    }
    return out;
}

Tensor dcor_loss(Tape* tape, const Tensor& z, const std::vector<int>& y) {
    const std::size_t n = z.rows(), d = z.cols();
    if (y.size() != n) throw shape_error("dcor_loss: labels/rows mismatch");
    if (n < 2) throw contract_error("dcor_loss: batch must have at least 2 rows");

    const auto& zv = z.values();
    std::vector<double> a(n * n, 0.0), b(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = zv[i * d + k] - zv[j * d + k];
                s += diff * diff;
            }
            const double r = std::sqrt(s);
            a[i * n + j] = a[j * n + i] = r;
            const double lbl = y[i] == y[j] ? 0.0 : std::numbers::sqrt2;
            b[i * n + j] = b[j * n + i] = lbl;
        }

    auto double_center = [n](std::vector<double>& m) {
        std::vector<double> row(n, 0.0), col(n, 0.0);
        double grand = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                row[i] += m[i * n + j];
                col[j] += m[i * n + j];
                grand += m[i * n + j];
            }
        for (auto& v : row) v /= static_cast<double>(n);
        for (auto& v : col) v /= static_cast<double>(n);
        grand /= static_cast<double>(n * n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                m[i * n + j] += grand - row[i] - col[j];
    };

    std::vector<double> A = a, B = b;
    double_center(A);
    double_center(B);
    double s_ab = 0.0, s_aa = 0.0, s_bb = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) {
        s_ab += A[i] * B[i];
        s_aa += A[i] * A[i];
        s_bb += B[i] * B[i];
    }

    if (s_aa < 1e-12 || s_bb < 1e-12) {
        Tensor out = Tensor::scalar(0.0);
        if (tape) tape->record({z}, out, nullptr);
        return out;
    }
    const double denom = std::sqrt(s_aa * s_bb);
    const double value = std::max(0.0, s_ab / denom);
    check_finite(value, "dcor_loss");

    Tensor zin = z;
    Tensor out = Tensor::scalar(value);
    if (tape) {
        // dL/dA = B/denom - L*A/s_aa; double centering is self-adjoint, so
        // dL/da = H (dL/dA) H, then a feeds back into z through the pair
        // distances.
        std::vector<double> G(n * n);
        for (std::size_t i = 0; i < n * n; ++i)
            G[i] = B[i] / denom - value * A[i] / s_aa;
        double_center(G);
        tape->record({z}, out, [zin, out, G, a, n, d]() mutable {
            const double g = out.grad()[0];
            auto& gz = zin.grad();
            const auto& zv = zin.values();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i + 1; j < n; ++j) {
                    const double dist = a[i * n + j];
                    if (dist < 1e-9) continue; // coincident rows carry no distance gradient
                    const double coef = g * (G[i * n + j] + G[j * n + i]) / dist;
                    for (std::size_t k = 0; k < d; ++k) {
                        const double diff = zv[i * d + k] - zv[j * d + k];
                        gz[i * d + k] += coef * diff;
                        gz[j * d + k] -= coef * diff;
                    }
                }
        });
    }
    return out;
}

std::vector<int> flip_labels(const std::vector<int>& y, double flip_ratio, int num_classes,
                             std::uint64_t seed) {
    if (num_classes < 2) throw contract_error("flip_labels: need at least 2 classes");
    if (flip_ratio < 0.0 || flip_ratio > 1.0)
        throw contract_error("flip_labels: ratio must be in [0,1]");
    Rng rng(seed);
    std::vector<int> out = y;
    for (auto& label : out) {
        if (rng.uniform() >= flip_ratio) continue;
        int pick = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(num_classes - 1)));
        if (pick >= label) ++pick;
        label = pick;
    }
    return out;
}

Tensor combined_loss(Tape* tape, const Tensor& logits, const std::vector<int>& y,
                     const Tensor& z, const LossConfig& config) {
    config.validate();
    Tensor ce = softmax_cross_entropy(tape, logits, y);
    switch (config.defense) {
        case Defense::vanilla:
        case Defense::label_dp:
            return ce;
        case Defense::pe:
            return add(tape, ce, scale(tape, pe_loss_angular(tape, z, y, config.arccos_clamp),
                                       config.alpha));
        case Defense::dcor:
            return add(tape, ce, scale(tape, dcor_loss(tape, z, y), config.alpha));
    }
    return ce;
}

} // namespace splitlab
