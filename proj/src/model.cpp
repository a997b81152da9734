#include "splitlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "splitlab/errors.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = Kind::dense;
    s.in_dim = in;
    s.out_dim = out;
    return s;
}

LayerSpec LayerSpec::leaky(double slope) {
    LayerSpec s;
    s.kind = Kind::activation;
    s.act = ActKind::leaky_relu;
    s.slope = slope;
    return s;
}

LayerSpec LayerSpec::tanh() {
    LayerSpec s;
    s.kind = Kind::activation;
    s.act = ActKind::tanh;
    return s;
}

LayerSpec LayerSpec::norm() {
    LayerSpec s;
    s.kind = Kind::layer_norm;
    return s;
}

std::size_t validate_specs(const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw contract_error("model: empty layer list");
    if (specs.front().kind != LayerSpec::Kind::dense)
        throw contract_error("model: first layer must be dense");
    std::size_t width = specs.front().in_dim;
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (s.kind == LayerSpec::Kind::dense) {
            if (s.in_dim == 0 || s.out_dim == 0)
                throw contract_error("model: dense layer with zero dimension");
            if (s.in_dim != width)
                throw contract_error("model: layer " + std::to_string(i) + " expects width " +
                                     std::to_string(s.in_dim) + " but gets " +
                                     std::to_string(width));
            width = s.out_dim;
        }
    }
    return width;
}

SplitModel SplitModel::build(const std::vector<LayerSpec>& specs, std::size_t split_index,
                             std::uint64_t seed) {
    validate_specs(specs);
    if (split_index == 0 || split_index >= specs.size())
        throw contract_error("model: split_index " + std::to_string(split_index) +
                             " outside (0, " + std::to_string(specs.size()) + ")");
    return init_model(specs, split_index, seed);
}

SplitModel SplitModel::build_plain(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
    validate_specs(specs);
    return init_model(specs, 0, seed);
}

SplitModel SplitModel::init_model(const std::vector<LayerSpec>& specs, std::size_t split_index,
                                  std::uint64_t seed) {
    SplitModel m;
    m.specs_ = specs;
    m.split_index_ = split_index;
    m.seed_ = seed;
    Rng rng(seed);
    for (const LayerSpec& s : specs) {
        if (s.kind != LayerSpec::Kind::dense) continue;
        Tensor w(s.in_dim, s.out_dim);
        const double bound = std::sqrt(1.0 / static_cast<double>(s.in_dim));
        for (auto& v : w.values()) v = rng.uniform(-bound, bound);
        m.weights_.push_back(w);
        m.biases_.push_back(Tensor(1, s.out_dim));
    }
    return m;
}

Tensor SplitModel::run_layers(Tape* tape, const Tensor& x, std::size_t first,
                              std::size_t last) const {
    Tensor h = x;
    std::size_t dense_idx = 0;
    for (std::size_t i = 0; i < first; ++i)
        if (specs_[i].kind == LayerSpec::Kind::dense) ++dense_idx;
    for (std::size_t i = first; i < last; ++i) {
        const LayerSpec& s = specs_[i];
        switch (s.kind) {
            case LayerSpec::Kind::dense:
                h = add_bias(tape, matmul(tape, h, weights_[dense_idx]), biases_[dense_idx]);
                ++dense_idx;
                break;
            case LayerSpec::Kind::activation:
                h = s.act == ActKind::leaky_relu ? leaky_relu(tape, h, s.slope)
                                                 : tanh_act(tape, h);
                break;
            case LayerSpec::Kind::layer_norm:
                h = layer_norm(tape, h);
                break;
        }
    }
    return h;
}

Tensor SplitModel::forward(Tape* tape, const Tensor& x) const {
    return run_layers(tape, x, 0, specs_.size());
}

Tensor SplitModel::forward_bottom(Tape* tape, const Tensor& x) const {
    return run_layers(tape, x, 0, split_index_);
}

Tensor SplitModel::forward_top(Tape* tape, const Tensor& z) const {
    return run_layers(tape, z, split_index_, specs_.size());
}

namespace {

std::size_t width_before(const std::vector<LayerSpec>& specs, std::size_t layer_index) {
    std::size_t width = specs.front().in_dim;
    for (std::size_t i = 0; i < layer_index; ++i)
        if (specs[i].kind == LayerSpec::Kind::dense) width = specs[i].out_dim;
    return width;
}

} // namespace

std::size_t SplitModel::input_dim() const { return specs_.front().in_dim; }

std::size_t SplitModel::embedding_dim() const { return width_before(specs_, split_index_); }

std::size_t SplitModel::output_dim() const { return width_before(specs_, specs_.size()); }

bool SplitModel::split_has_layer_norm() const {
    return split_index_ > 0 && specs_[split_index_ - 1].kind == LayerSpec::Kind::layer_norm;
}

std::vector<Tensor> SplitModel::parameters() const {
    std::vector<Tensor> out;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        out.push_back(weights_[i]);
        out.push_back(biases_[i]);
    }
    return out;
}

std::vector<Tensor> SplitModel::bottom_parameters() const {
    std::vector<Tensor> out;
    std::size_t dense_idx = 0;
    for (std::size_t i = 0; i < split_index_; ++i)
        if (specs_[i].kind == LayerSpec::Kind::dense) {
            out.push_back(weights_[dense_idx]);
            out.push_back(biases_[dense_idx]);
            ++dense_idx;
        }
    return out;
}

std::vector<Tensor> SplitModel::top_parameters() const {
    std::vector<Tensor> out;
    std::size_t dense_idx = 0;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        if (specs_[i].kind != LayerSpec::Kind::dense) continue;
        if (i >= split_index_) {
            out.push_back(weights_[dense_idx]);
            out.push_back(biases_[dense_idx]);
        }
        ++dense_idx;
    }
    return out;
}

SplitModel SplitModel::snapshot() const {
    SplitModel m;
    m.specs_ = specs_;
    m.split_index_ = split_index_;
    m.seed_ = seed_;
    for (const Tensor& w : weights_) m.weights_.push_back(w.clone());
    for (const Tensor& b : biases_) m.biases_.push_back(b.clone());
    return m;
}

void SplitModel::load_parameters(const SplitModel& other) {
    if (other.weights_.size() != weights_.size())
        throw contract_error("load_parameters: structure mismatch");
    for (std::size_t i = 0; i < weights_.size(); ++i) {
        if (other.weights_[i].size() != weights_[i].size() ||
            other.biases_[i].size() != biases_[i].size())
            throw contract_error("load_parameters: shape mismatch at dense layer " +
                                 std::to_string(i));
        weights_[i].values() = other.weights_[i].values();
        biases_[i].values() = other.biases_[i].values();
    }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].size(), 0.0);
        v_[i].assign(params_[i].size(), 0.0);
    }
}

void Adam::step() {
    for (const Tensor& p : params_)
        if (!p.has_grad())
            throw contract_error("adam: parameter has no gradient");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& val = params_[i].values();
        const auto& g = params_[i].grad();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        check_finite(params_[i], "adam_step");
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

namespace {

void write_f64_block(std::ofstream& out, const std::vector<double>& values) {
    static_assert(sizeof(double) == 8);
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char buf[8];
        for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        out.write(reinterpret_cast<const char*>(buf), 8);
    }
}

void read_f64_block(std::ifstream& in, std::vector<double>& values, const std::string& what) {
    for (double& v : values) {
        unsigned char buf[8];
        if (!in.read(reinterpret_cast<char*>(buf), 8))
            throw parse_error("checkpoint: truncated parameter block (" + what + ")");
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[b]) << (8 * b);
        std::memcpy(&v, &bits, 8);
    }
}

std::string act_name(ActKind k) { return k == ActKind::leaky_relu ? "leaky_relu" : "tanh"; }

} // namespace

void save_checkpoint(const SplitModel& model, const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, std::string>>& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("checkpoint: cannot open " + path.string() + " for writing");
    out << "SPLTCKPT1\n";
    out << "layers " << model.specs().size() << "\n";
    for (const LayerSpec& s : model.specs()) {
        switch (s.kind) {
            case LayerSpec::Kind::dense:
                out << "layer dense " << s.in_dim << " " << s.out_dim << "\n";
                break;
            case LayerSpec::Kind::activation:
                out << "layer activation " << act_name(s.act) << " " << s.slope << "\n";
                break;
            case LayerSpec::Kind::layer_norm:
                out << "layer layer_norm\n";
                break;
        }
    }
    out << "split_index " << model.split_index() << "\n";
    out << "seed " << model.seed() << "\n";
    for (const auto& [k, v] : meta) out << "meta " << k << " " << v << "\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < model.dense_count(); ++i) {
        write_f64_block(out, model.weight(i).values());
        write_f64_block(out, model.bias(i).values());
    }
    if (!out) throw io_error("checkpoint: write failed for " + path.string());
}

SplitModel load_checkpoint(const std::filesystem::path& path,
                           std::vector<std::pair<std::string, std::string>>* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("checkpoint: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "SPLTCKPT1")
        throw parse_error("checkpoint: bad magic in " + path.string());

    std::vector<LayerSpec> specs;
    std::size_t expected_layers = 0;
    std::size_t split_index = 0;
    std::uint64_t seed = 0;
    bool saw_end = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "end_header") {
            saw_end = true;
            break;
        } else if (tok == "layers") {
            ls >> expected_layers;
        } else if (tok == "layer") {
            std::string kind;
            ls >> kind;
            if (kind == "dense") {
                std::size_t i = 0, o = 0;
                ls >> i >> o;
                specs.push_back(LayerSpec::dense(i, o));
            } else if (kind == "activation") {
                std::string act;
                double slope = 0.01;
                ls >> act >> slope;
                specs.push_back(act == "tanh" ? LayerSpec::tanh() : LayerSpec::leaky(slope));
            } else if (kind == "layer_norm") {
                specs.push_back(LayerSpec::norm());
            } else {
                throw parse_error("checkpoint: unknown layer kind '" + kind + "'");
            }
        } else if (tok == "split_index") {
            ls >> split_index;
        } else if (tok == "seed") {
            ls >> seed;
        } else if (tok == "meta") {
            std::string k;
            ls >> k;
            std::string v;
            std::getline(ls, v);
            if (!v.empty() && v.front() == ' ') v.erase(0, 1);
            if (meta) meta->emplace_back(k, v);
        } else {
            throw parse_error("checkpoint: unexpected header line '" + line + "'");
        }
        if (ls.fail()) throw parse_error("checkpoint: malformed header line '" + line + "'");
    }
    if (!saw_end) throw parse_error("checkpoint: missing end_header");
    if (specs.size() != expected_layers)
        throw parse_error("checkpoint: layer count mismatch");

    SplitModel m = split_index == 0 ? SplitModel::build_plain(specs, seed)
                                    : SplitModel::build(specs, split_index, seed);
    for (std::size_t i = 0; i < m.dense_count(); ++i) {
        read_f64_block(in, m.weight(i).values(), "dense " + std::to_string(i) + " weights");
        read_f64_block(in, m.bias(i).values(), "dense " + std::to_string(i) + " bias");
    }
    return m;
}

} // namespace splitlab
