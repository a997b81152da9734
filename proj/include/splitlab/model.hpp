#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "splitlab/tensor.hpp"

namespace splitlab {

enum class ActKind { leaky_relu, tanh };

struct LayerSpec {
    enum class Kind { dense, activation, layer_norm };
    Kind kind = Kind::dense;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    ActKind act = ActKind::leaky_relu;
    double slope = 0.01;

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec leaky(double slope = 0.01);
    static LayerSpec tanh();
    static LayerSpec norm();
};

// An MLP partitioned at split_index: layers [0, split_index) form the bottom
// model (feature party), layers [split_index, end) the top model (label
// party). The tensor crossing the boundary is the forward embedding Z.
class SplitModel {
public:
    SplitModel() = default;

    // Fan-in uniform weights (bound sqrt(1/fan_in)), zero biases.
    static SplitModel build(const std::vector<LayerSpec>& specs, std::size_t split_index,
                            std::uint64_t seed);
    // Unsplit variant: the bottom half is empty, forward_top runs the whole
    // network. Used for standalone attacker models.
    static SplitModel build_plain(const std::vector<LayerSpec>& specs, std::uint64_t seed);

    Tensor forward(Tape* tape, const Tensor& x) const;
    Tensor forward_bottom(Tape* tape, const Tensor& x) const;
    Tensor forward_top(Tape* tape, const Tensor& z) const;

    std::vector<Tensor> parameters() const;
    std::vector<Tensor> bottom_parameters() const;
    std::vector<Tensor> top_parameters() const;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    std::size_t split_index() const { return split_index_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t input_dim() const;
    std::size_t embedding_dim() const;
    std::size_t output_dim() const;
    bool split_has_layer_norm() const;

    // Dense-layer parameter access in layer order.
    std::size_t dense_count() const { return weights_.size(); }
    Tensor weight(std::size_t dense_idx) const { return weights_[dense_idx]; }
    Tensor bias(std::size_t dense_idx) const { return biases_[dense_idx]; }

    // Deep copy: parameter values duplicated, gradients dropped.
    SplitModel snapshot() const;
    // Copies parameter values from a structurally identical model.
    void load_parameters(const SplitModel& other);

private:
    std::vector<LayerSpec> specs_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
    std::size_t split_index_ = 0;
    std::uint64_t seed_ = 0;

    static SplitModel init_model(const std::vector<LayerSpec>& specs, std::size_t split_index,
                                 std::uint64_t seed);
    Tensor run_layers(Tape* tape, const Tensor& x, std::size_t first, std::size_t last) const;
};

// Validates a spec chain and returns the output width of each prefix.
std::size_t validate_specs(const std::vector<LayerSpec>& specs);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    // Bias-corrected update in place; throws contract_error when a parameter
    // has no accumulated gradient.
    void step();
    void zero_grad();
    long steps_taken() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long t_ = 0;
};

// Checkpoint file: "SPLTCKPT1" magic, text header with architecture,
// split index, seed, and caller-supplied metadata lines, then flat
// little-endian float64 parameter blocks in layer order.
void save_checkpoint(const SplitModel& model, const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::string>>& meta = {});
SplitModel load_checkpoint(const std::filesystem::path& path,
                           std::vector<std::pair<std::string, std::string>>* meta = nullptr);

} // namespace splitlab
