#include "splitlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "splitlab/errors.hpp"
#include "splitlab/model.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

Tensor Dataset::gather_x(const std::vector<std::size_t>& idx) const {
    Tensor out(idx.size(), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < X.cols(); ++j) out.at(i, j) = X.at(idx[i], j);
    return out;
}

std::vector<int> Dataset::gather_y(const std::vector<std::size_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = Y[idx[i]];
    return out;
}

void Dataset::validate() const {
    if (X.rows() != Y.size()) throw contract_error("dataset: X rows and Y length differ");
    if (num_classes < 2) throw contract_error("dataset: needs at least 2 classes");
    for (int y : Y)
        if (y < 0 || y >= num_classes)
            throw contract_error("dataset: label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
    std::vector<char> seen(size(), 0);
    for (const auto* part : {&train, &val, &test})
        for (std::size_t i : *part) {
            if (i >= size()) throw contract_error("dataset: partition index out of range");
            if (seen[i]) throw contract_error("dataset: partitions overlap at row " +
                                              std::to_string(i));
            seen[i] = 1;
        }
    for (char s : seen)
        if (!s) throw contract_error("dataset: partitions do not cover all rows");
    std::vector<char> in_train(static_cast<std::size_t>(num_classes), 0);
    for (std::size_t i : train) in_train[static_cast<std::size_t>(Y[i])] = 1;
    for (int c = 0; c < num_classes; ++c)
        if (!in_train[static_cast<std::size_t>(c)])
            throw contract_error("dataset: class " + std::to_string(c) + " missing from train");
}

void assign_partitions(Dataset& data, std::uint64_t seed,
                       const std::optional<SplitSizes>& sizes) {
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(mix64(seed ^ 0x5eedf00dULL));
    rng.shuffle(order);

    std::size_t n_train, n_val;
    if (sizes) {
        if (sizes->train + sizes->val + sizes->test != n)
            throw contract_error("split sizes sum to " +
                                 std::to_string(sizes->train + sizes->val + sizes->test) +
                                 " but dataset has " + std::to_string(n) + " rows");
        n_train = sizes->train;
        n_val = sizes->val;
    } else {
        n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
        n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
    }
    data.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    data.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                    order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    data.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
}

double linear_probe_accuracy(const Dataset& data, std::uint64_t seed) {
    Tensor xtr = data.gather_x(data.train);
    std::vector<int> ytr = data.gather_y(data.train);
    Tensor w(data.input_dim(), static_cast<std::size_t>(data.num_classes));
    Tensor b(1, static_cast<std::size_t>(data.num_classes));
    Rng rng(mix64(seed ^ 0x9b0beULL));
    for (auto& v : w.values()) v = 0.01 * rng.normal();
    Adam opt({w, b}, AdamConfig{0.05, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 200; ++step) {
        Tape tape;
        Tensor logits = add_bias(&tape, matmul(&tape, xtr, w), b);
        Tensor loss = softmax_cross_entropy(&tape, logits, ytr);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
    Tensor xte = data.gather_x(data.test);
    std::vector<int> yte = data.gather_y(data.test);
    Tensor logits = add_bias(nullptr, matmul(nullptr, xte, w), b);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (static_cast<int>(best) == yte[i]) ++correct;
    }
    return logits.rows() == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

Dataset gaussian_blobs(int classes, std::size_t d_in, std::size_t per_class,
                       double center_scale, double noise_sigma, std::uint64_t seed,
                       const std::optional<SplitSizes>& sizes, bool verify, double probe_min) {
    if (classes < 2) throw contract_error("gaussian_blobs: need at least 2 classes");
    if (per_class == 0 || d_in == 0) throw contract_error("gaussian_blobs: empty dimensions");
    Rng rng(mix64(seed ^ 0xb10b5ULL));
    const std::size_t n = static_cast<std::size_t>(classes) * per_class;
    Dataset data;
    data.name = "gaussian_blobs";
    data.num_classes = classes;
    data.X = Tensor(n, d_in);
    data.Y.resize(n);

    std::vector<double> centers(static_cast<std::size_t>(classes) * d_in);
    for (auto& v : centers) v = rng.uniform(-center_scale, center_scale);
    for (int c = 0; c < classes; ++c)
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t row = static_cast<std::size_t>(c) * per_class + s;
            data.Y[row] = c;
            for (std::size_t j = 0; j < d_in; ++j)
                data.X.at(row, j) =
                    centers[static_cast<std::size_t>(c) * d_in + j] + noise_sigma * rng.normal();
        }
    assign_partitions(data, seed, sizes);
    data.meta = {{"generator", "gaussian_blobs"},
                 {"classes", std::to_string(classes)},
                 {"d_in", std::to_string(d_in)},
                 {"per_class", std::to_string(per_class)},
                 {"center_scale", fmt_double(center_scale)},
                 {"noise_sigma", fmt_double(noise_sigma)},
                 {"seed", std::to_string(seed)}};
    data.validate();
    if (verify) {
        const double probe = linear_probe_accuracy(data, seed);
        if (probe < probe_min)
            throw contract_error("gaussian_blobs: linear probe " + fmt_double(probe) +
                                 " below required " + fmt_double(probe_min));
    }
    return data;
}

Dataset concentric_shells(int classes, std::size_t d_in, std::size_t per_class,
                          std::uint64_t seed, const std::optional<SplitSizes>& sizes,
                          bool verify, double probe_max) {
    if (classes < 2) throw contract_error("concentric_shells: need at least 2 classes");
    if (per_class == 0 || d_in == 0) throw contract_error("concentric_shells: empty dimensions");
    Rng rng(mix64(seed ^ 0x53e115ULL));
    const std::size_t n = static_cast<std::size_t>(classes) * per_class;
    Dataset data;
    data.name = "concentric_shells";
    data.num_classes = classes;
    data.X = Tensor(n, d_in);
    data.Y.resize(n);
    for (int c = 0; c < classes; ++c) {
        const double radius = 1.0 + 2.0 * static_cast<double>(c);
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t row = static_cast<std::size_t>(c) * per_class + s;
            data.Y[row] = c;
            double norm2 = 0.0;
            std::vector<double> dir(d_in);
            for (auto& v : dir) {
                v = rng.normal();
                norm2 += v * v;
            }
            const double r = (radius + 0.15 * rng.normal()) / std::sqrt(norm2);
            for (std::size_t j = 0; j < d_in; ++j) data.X.at(row, j) = dir[j] * r;
        }
    }
    assign_partitions(data, seed, sizes);
    data.meta = {{"generator", "concentric_shells"},
                 {"classes", std::to_string(classes)},
                 {"d_in", std::to_string(d_in)},
                 {"per_class", std::to_string(per_class)},
                 {"seed", std::to_string(seed)}};
    data.validate();
    if (verify) {
        const double probe = linear_probe_accuracy(data, seed);
        if (probe > probe_max)
            throw contract_error("concentric_shells: linear probe " + fmt_double(probe) +
                                 " above allowed " + fmt_double(probe_max));
    }
    return data;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw io_error("save_csv: cannot open " + path.string());
    for (std::size_t j = 0; j < data.input_dim(); ++j) out << "f" << j << ",";
    out << "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data.input_dim(); ++j)
            out << fmt_double(data.X.at(i, j)) << ",";
        out << data.Y[i] << "\n";
    }
    if (!out) throw io_error("save_csv: write failed for " + path.string());
    if (!data.meta.empty()) {
        std::ofstream meta(path.string() + ".meta");
        for (const auto& [k, v] : data.meta) meta << k << " = " << v << "\n";
    }
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                 std::uint64_t split_seed, const std::optional<SplitSizes>& sizes) {
    std::ifstream in(path);
    if (!in) throw io_error("load_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw parse_error("load_csv: empty file " + path.string());

    auto split_fields = [](const std::string& s) {
        std::vector<std::string> fields;
        std::string cur;
        for (char ch : s) {
            if (ch == ',') {
                fields.push_back(cur);
                cur.clear();
            } else if (ch != '\r') {
                cur += ch;
            }
        }
        fields.push_back(cur);
        return fields;
    };

    const auto header = split_fields(line);
    std::size_t label_idx = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = i;
    if (label_idx == header.size())
        throw parse_error("load_csv: header of " + path.string() + " lacks column '" +
                          label_column + "' (line 1)");
    const std::size_t d = header.size() - 1;
    if (d == 0) throw parse_error("load_csv: no feature columns (line 1)");

    std::vector<double> features;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw parse_error("load_csv: line " + std::to_string(line_no) + " has " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(header.size()));
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const std::string& f = fields[i];
            if (i == label_idx) {
                std::size_t pos = 0;
                int y = 0;
                try {
                    y = std::stoi(f, &pos);
                } catch (const std::exception&) {
                    pos = 0;
                }
                if (pos != f.size() || f.empty())
                    throw parse_error("load_csv: line " + std::to_string(line_no) + " column " +
                                      std::to_string(i + 1) + ": label '" + f +
                                      "' is not an integer");
                labels.push_back(y);
            } else {
                std::size_t pos = 0;
                double v = 0.0;
                try {
                    v = std::stod(f, &pos);
                } catch (const std::exception&) {
                    pos = 0;
                }
                if (pos != f.size() || f.empty())
                    throw parse_error("load_csv: line " + std::to_string(line_no) + " column " +
                                      std::to_string(i + 1) + ": '" + f + "' is not numeric");
                features.push_back(v);
            }
        }
    }

    Dataset data;
    data.name = path.stem().string();
    const std::size_t n = labels.size();
    if (n == 0) throw parse_error("load_csv: no data rows in " + path.string());
    data.X = Tensor(n, d, std::move(features));
    data.Y = std::move(labels);
    int max_label = 0;
    for (int y : data.Y) {
        if (y < 0) throw parse_error("load_csv: negative label in " + path.string());
        max_label = std::max(max_label, y);
    }
    data.num_classes = max_label + 1;
    assign_partitions(data, split_seed, sizes);
    data.validate();
    return data;
}

namespace {

std::uint32_t read_be_u32(std::ifstream& in, const std::filesystem::path& path,
                          std::size_t& offset) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw parse_error("load_idx: " + path.string() + " truncated at byte " +
                          std::to_string(offset));
    offset += 4;
    return (static_cast<std::uint32_t>(buf[0]) << 24) | (static_cast<std::uint32_t>(buf[1]) << 16) |
           (static_cast<std::uint32_t>(buf[2]) << 8) | static_cast<std::uint32_t>(buf[3]);
}

} // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::uint64_t split_seed,
                 const std::optional<SplitSizes>& sizes) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw io_error("load_idx: cannot open " + images_path.string());
    std::size_t img_off = 0;
    const std::uint32_t img_magic = read_be_u32(img, images_path, img_off);
    if (img_magic != 0x00000803u)
        throw parse_error("load_idx: " + images_path.string() + " has magic " +
                          std::to_string(img_magic) + " at byte 0, expected 2051");
    const std::uint32_t count = read_be_u32(img, images_path, img_off);
    const std::uint32_t rows = read_be_u32(img, images_path, img_off);
    const std::uint32_t cols = read_be_u32(img, images_path, img_off);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw io_error("load_idx: cannot open " + labels_path.string());
    std::size_t lab_off = 0;
    const std::uint32_t lab_magic = read_be_u32(lab, labels_path, lab_off);
    if (lab_magic != 0x00000801u)
        throw parse_error("load_idx: " + labels_path.string() + " has magic " +
                          std::to_string(lab_magic) + " at byte 0, expected 2049");
    const std::uint32_t lab_count = read_be_u32(lab, labels_path, lab_off);
    if (lab_count != count)
        throw parse_error("load_idx: image count " + std::to_string(count) +
                          " does not match label count " + std::to_string(lab_count));

    const std::size_t d = static_cast<std::size_t>(rows) * cols;
    Dataset data;
    data.name = images_path.stem().string();
    data.X = Tensor(count, d);
    data.Y.resize(count);
    std::vector<unsigned char> buf(d);
    for (std::uint32_t i = 0; i < count; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d)))
            throw parse_error("load_idx: " + images_path.string() + " truncated at byte " +
                              std::to_string(img_off));
        img_off += d;
        for (std::size_t j = 0; j < d; ++j)
            data.X.at(i, j) = static_cast<double>(buf[j]) / 255.0;
        unsigned char y;
        if (!lab.read(reinterpret_cast<char*>(&y), 1))
            throw parse_error("load_idx: " + labels_path.string() + " truncated at byte " +
                              std::to_string(lab_off));
        ++lab_off;
        data.Y[i] = static_cast<int>(y);
    }
    int max_label = 0;
    for (int y : data.Y) max_label = std::max(max_label, y);
    data.num_classes = max_label + 1;
    assign_partitions(data, split_seed, sizes);
    data.validate();
    return data;
}

Dataset from_parts(const Tensor& x_train, const std::vector<int>& y_train,
                   const Tensor& x_test, const std::vector<int>& y_test, double val_fraction,
                   std::uint64_t seed, const std::string& name) {
    if (x_train.cols() != x_test.cols())
        throw contract_error("from_parts: feature dimensions differ");
    const std::size_t n_tr = x_train.rows(), n_te = x_test.rows();
    Dataset data;
    data.name = name;
    data.X = Tensor(n_tr + n_te, x_train.cols());
    data.Y.resize(n_tr + n_te);
    for (std::size_t i = 0; i < n_tr; ++i) {
        data.Y[i] = y_train[i];
        for (std::size_t j = 0; j < x_train.cols(); ++j) data.X.at(i, j) = x_train.at(i, j);
    }
    for (std::size_t i = 0; i < n_te; ++i) {
        data.Y[n_tr + i] = y_test[i];
        for (std::size_t j = 0; j < x_test.cols(); ++j) data.X.at(n_tr + i, j) = x_test.at(i, j);
    }
    int max_label = 0;
    for (int y : data.Y) max_label = std::max(max_label, y);
    data.num_classes = max_label + 1;

    std::vector<std::size_t> order(n_tr);
    for (std::size_t i = 0; i < n_tr; ++i) order[i] = i;
    Rng rng(mix64(seed ^ 0x9a275ULL));
    rng.shuffle(order);
    const std::size_t n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(n_tr)));
    data.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    data.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    data.test.resize(n_te);
    for (std::size_t i = 0; i < n_te; ++i) data.test[i] = n_tr + i;
    data.validate();
    return data;
}

std::pair<Tensor, std::vector<int>> sample_leak(const Dataset& data, const LeakSpec& spec) {
    if (spec.k < 1) throw contract_error("sample_leak: k must be >= 1");
    std::unordered_map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i : data.train) by_class[data.Y[i]].push_back(i);
    for (int c = 0; c < data.num_classes; ++c) {
        auto it = by_class.find(c);
        const std::size_t have = it == by_class.end() ? 0 : it->second.size();
        if (have < static_cast<std::size_t>(spec.k))
            throw contract_error("sample_leak: class " + std::to_string(c) + " has only " +
                                 std::to_string(have) + " train samples, need " +
                                 std::to_string(spec.k));
    }
    Rng rng(mix64(spec.seed ^ 0x1ea4ULL));
    std::vector<std::size_t> chosen;
    for (int c = 0; c < data.num_classes; ++c) {
        auto& pool = by_class[c];
        rng.shuffle(pool);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + spec.k);
    }
    return {data.gather_x(chosen), data.gather_y(chosen)};
}

} // namespace splitlab
