#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "splitlab/errors.hpp"
#include "splitlab/model.hpp"
#include "splitlab/rng.hpp"
#include "splitlab/tensor.hpp"

using namespace splitlab;

namespace {

std::vector<LayerSpec> small_arch() {
    return {LayerSpec::dense(6, 10), LayerSpec::leaky(), LayerSpec::dense(10, 8),
            LayerSpec::leaky(), LayerSpec::dense(8, 4)};
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t(r, c);
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

} // namespace

TEST_CASE("build is deterministic under seed") {
    SplitModel a = SplitModel::build(small_arch(), 4, 99);
    SplitModel b = SplitModel::build(small_arch(), 4, 99);
    SplitModel c = SplitModel::build(small_arch(), 4, 100);
    REQUIRE(a.dense_count() == 3);
    bool identical = true, differs = false;
    for (std::size_t i = 0; i < a.dense_count(); ++i) {
        if (a.weight(i).values() != b.weight(i).values()) identical = false;
        if (a.weight(i).values() != c.weight(i).values()) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("split at the last dense layer leaves a single linear top") {
    SplitModel m = SplitModel::build(small_arch(), 4, 1);
    CHECK(m.embedding_dim() == 8);
    CHECK(m.top_parameters().size() == 2);
    CHECK(m.top_parameters()[0].rows() == 8);
    CHECK(m.top_parameters()[0].cols() == 4);
    CHECK(m.bottom_parameters().size() == 4);
}

TEST_CASE("weight initialization matches fan-in uniform moments") {
    SplitModel m2 = SplitModel::build({LayerSpec::dense(100, 50), LayerSpec::leaky()}, 1, 7);
    const auto& w = m2.weight(0).values();
    double mean = 0.0;
    for (double v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (double v : w) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.size());
    const double expected_std = std::sqrt(1.0 / 300.0);
    CHECK(std::sqrt(var) > 0.8 * expected_std);
    CHECK(std::sqrt(var) < 1.2 * expected_std);
    for (double v : m2.bias(0).values()) CHECK(v == 0.0);
}

TEST_CASE("split and unsplit forward agree bitwise") {
    Rng rng(13);
    std::vector<std::vector<LayerSpec>> archs = {
        small_arch(),
        {LayerSpec::dense(5, 12), LayerSpec::tanh(), LayerSpec::dense(12, 6), LayerSpec::norm(),
         LayerSpec::dense(6, 3)},
        {LayerSpec::dense(4, 4), LayerSpec::leaky(0.2), LayerSpec::dense(4, 4)},
    };
    std::vector<std::size_t> splits = {4, 4, 2};
    for (std::size_t k = 0; k < archs.size(); ++k) {
        SplitModel m = SplitModel::build(archs[k], splits[k], 17 + k);
        Tensor x = random_tensor(7, archs[k].front().in_dim, rng);
        Tensor whole = m.forward(nullptr, x);
        Tensor z = m.forward_bottom(nullptr, x);
        Tensor composed = m.forward_top(nullptr, z);
        REQUIRE(whole.size() == composed.size());
        for (std::size_t i = 0; i < whole.size(); ++i)
            CHECK(whole.values()[i] == composed.values()[i]);
    }
}

TEST_CASE("layer_norm at the split pins embeddings to the sphere") {
    std::vector<LayerSpec> arch = {LayerSpec::dense(5, 12), LayerSpec::leaky(),
                                   LayerSpec::dense(12, 6), LayerSpec::norm(),
                                   LayerSpec::dense(6, 3)};
    SplitModel m = SplitModel::build(arch, 4, 3);
    CHECK(m.split_has_layer_norm());
    CHECK(m.embedding_dim() == 6);
    Rng rng(29);
    Tensor x = random_tensor(9, 5, rng);
    Tensor z = m.forward_bottom(nullptr, x);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s2 = 0.0;
        for (std::size_t j = 0; j < z.cols(); ++j) s2 += z.at(i, j) * z.at(i, j);
        CHECK(std::abs(s2 - 6.0) < 1e-9);
    }
}

TEST_CASE("empty batch flows through") {
    SplitModel m = SplitModel::build(small_arch(), 4, 5);
    Tensor x(0, 6);
    Tensor out = m.forward(nullptr, x);
    CHECK(out.rows() == 0);
    CHECK(out.cols() == 4);
}

TEST_CASE("construction contract errors") {
    CHECK_THROWS_AS(SplitModel::build(small_arch(), 0, 1), contract_error);
    CHECK_THROWS_AS(SplitModel::build(small_arch(), 5, 1), contract_error);
    std::vector<LayerSpec> bad = {LayerSpec::dense(6, 10), LayerSpec::dense(11, 4)};
    CHECK_THROWS_AS(SplitModel::build(bad, 1, 1), contract_error);
    CHECK_THROWS_AS(SplitModel::build({}, 1, 1), contract_error);
}

TEST_CASE("adam single step from the update rule") {
    Tensor p = Tensor::scalar(0.0);
    Adam opt({p});
    p.grad()[0] = 1.0;
    opt.step();
    CHECK(p.item() == doctest::Approx(-9.99999990e-4).epsilon(1e-9));
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam zero gradient leaves parameter unchanged") {
    Tensor p = Tensor::scalar(0.7);
    Adam opt({p});
    p.zero_grad();
    opt.step();
    CHECK(p.item() == 0.7);
    CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam requires gradients") {
    Tensor p = Tensor::scalar(0.7);
    Adam opt({p});
    CHECK_THROWS_AS(opt.step(), contract_error);
}

TEST_CASE("adam descends a quadratic monotonically after warmup") {
    Tensor w = Tensor::scalar(1.0);
    Adam opt({w});
    double prev = 1.0;
    for (int t = 0; t < 100; ++t) {
        w.zero_grad();
        w.grad()[0] = 2.0 * w.item();
        opt.step();
        if (t >= 5) CHECK(std::abs(w.item()) < prev);
        prev = std::abs(w.item());
    }
    CHECK(std::abs(w.item()) < 1.0);
}

TEST_CASE("optimizer sanity: separable blobs reach low loss") {
    Rng rng(77);
    const std::size_t n_per = 20;
    Tensor x(2 * n_per, 2);
    std::vector<int> y(2 * n_per);
    for (std::size_t i = 0; i < n_per; ++i) {
        x.at(i, 0) = 2.0 + 0.3 * rng.normal();
        x.at(i, 1) = 2.0 + 0.3 * rng.normal();
        y[i] = 0;
        x.at(n_per + i, 0) = -2.0 + 0.3 * rng.normal();
        x.at(n_per + i, 1) = -2.0 + 0.3 * rng.normal();
        y[n_per + i] = 1;
    }
    SplitModel m = SplitModel::build(
        {LayerSpec::dense(2, 8), LayerSpec::leaky(), LayerSpec::dense(8, 2)}, 2, 7);
    Adam opt(m.parameters());
    double loss_val = 1e9;
    const std::size_t batch = 8;
    for (int epoch = 0; epoch < 200 && loss_val > 0.05; ++epoch) {
        for (std::size_t start = 0; start < x.rows(); start += batch) {
            const std::size_t stop = std::min(start + batch, x.rows());
            Tensor xb(stop - start, 2);
            std::vector<int> yb(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                xb.at(i - start, 0) = x.at(i, 0);
                xb.at(i - start, 1) = x.at(i, 1);
                yb[i - start] = y[i];
            }
            Tape tape;
            Tensor loss = softmax_cross_entropy(&tape, m.forward(&tape, xb), yb);
            opt.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        Tensor full = softmax_cross_entropy(nullptr, m.forward(nullptr, x), y);
        loss_val = full.item();
    }
    CHECK(loss_val < 0.1);
}

TEST_CASE("checkpoint roundtrip preserves everything") {
    std::vector<LayerSpec> arch = {LayerSpec::dense(5, 12), LayerSpec::tanh(),
                                   LayerSpec::dense(12, 6), LayerSpec::norm(),
                                   LayerSpec::dense(6, 3)};
    SplitModel m = SplitModel::build(arch, 4, 321);
    const auto path = std::filesystem::temp_directory_path() / "splitlab_ckpt_test.bin";
    save_checkpoint(m, path, {{"defense", "pe"}, {"alpha", "4"}});

    std::vector<std::pair<std::string, std::string>> meta;
    SplitModel r = load_checkpoint(path, &meta);
    CHECK(r.split_index() == 4);
    CHECK(r.seed() == 321);
    REQUIRE(r.specs().size() == arch.size());
    CHECK(r.specs()[1].act == ActKind::tanh);
    for (std::size_t i = 0; i < m.dense_count(); ++i) {
        CHECK(r.weight(i).values() == m.weight(i).values());
        CHECK(r.bias(i).values() == m.bias(i).values());
    }
    REQUIRE(meta.size() == 2);
    CHECK(meta[0].first == "defense");
    CHECK(meta[0].second == "pe");
    CHECK(meta[1].second == "4");
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupt files") {
    const auto dir = std::filesystem::temp_directory_path();
    const auto bad_magic = dir / "splitlab_bad_magic.bin";
    {
        std::ofstream out(bad_magic, std::ios::binary);
        out << "NOTACKPT\nend_header\n";
    }
    CHECK_THROWS_AS(load_checkpoint(bad_magic), parse_error);
    std::filesystem::remove(bad_magic);

    SplitModel m = SplitModel::build(small_arch(), 4, 1);
    const auto truncated = dir / "splitlab_truncated.bin";
    save_checkpoint(m, truncated);
    auto sz = std::filesystem::file_size(truncated);
    std::filesystem::resize_file(truncated, sz - 16);
    CHECK_THROWS_AS(load_checkpoint(truncated), parse_error);
    std::filesystem::remove(truncated);

    CHECK_THROWS_AS(load_checkpoint(dir / "splitlab_missing.bin"), io_error);
}
