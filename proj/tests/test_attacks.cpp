#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "splitlab/attacks.hpp"
#include "splitlab/dataset.hpp"
#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/losses.hpp"
#include "splitlab/protocol.hpp"
#include "splitlab/rng.hpp"

using namespace splitlab;

namespace {

ConfusionCounts make_counts(std::size_t classes, const std::vector<long>& vals) {
    ConfusionCounts cc;
    cc.classes = classes;
    cc.counts = vals;
    return cc;
}

// Victim trained without defense on easy blobs; reused across attack cases.
struct VictimFixture {
    Dataset data;
    SplitModel model;

    explicit VictimFixture(std::uint64_t seed)
        : data(gaussian_blobs(3, 8, 40, 3.0, 0.5, 31)),
          model(SplitModel()) {
        const std::vector<LayerSpec> arch = {
            LayerSpec::dense(8, 16), LayerSpec::leaky(), LayerSpec::dense(16, 16),
            LayerSpec::norm(), LayerSpec::dense(16, 3)};
        TrainConfig tc;
        tc.epochs = 60;
        tc.batch_size = 16;
        tc.adam.lr = 5e-3;
        model = split_train(SplitModel::build(arch, 4, seed), data, LossConfig{}, tc, seed).model;
    }
};

std::vector<LayerSpec> victim_top_arch() { return {LayerSpec::dense(16, 3)}; }

} // namespace

TEST_CASE("permutation accuracy matches the worked example") {
    const ConfusionCounts cc = make_counts(2, {5, 1, 2, 4});
    CHECK(permutation_accuracy(cc) == doctest::Approx(0.75));
    CHECK(permutation_accuracy_bruteforce(cc) == doctest::Approx(0.75));

    // identity-dominant table scores 1.0 only when off-diagonals vanish
    const ConfusionCounts diag = make_counts(3, {4, 0, 0, 0, 2, 0, 0, 0, 9});
    CHECK(permutation_accuracy(diag) == doctest::Approx(1.0));

    // swapped clusters are repaired by the permutation
    const ConfusionCounts swapped = make_counts(2, {0, 7, 3, 0});
    CHECK(permutation_accuracy(swapped) == doctest::Approx(1.0));
}

TEST_CASE("hungarian agrees with brute force on random tables") {
    Rng rng(808);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t classes = 2 + trial % 5; // up to 6
        std::vector<long> vals(classes * classes);
        for (auto& v : vals) v = static_cast<long>(rng.uniform_index(20));
        if (std::all_of(vals.begin(), vals.end(), [](long v) { return v == 0; })) vals[0] = 1;
        const ConfusionCounts cc = make_counts(classes, vals);
        const double fast = permutation_accuracy(cc);
        const double slow = permutation_accuracy_bruteforce(cc);
        CHECK(fast == doctest::Approx(slow).epsilon(1e-12));
        CHECK(fast >= 1.0 / static_cast<double>(classes) - 1e-12);
    }
}

TEST_CASE("permutation accuracy contracts") {
    CHECK_THROWS_AS(permutation_accuracy(make_counts(2, {0, 0, 0, 0})), contract_error);
    CHECK_THROWS_AS(permutation_accuracy(make_counts(0, {})), contract_error);
    CHECK_THROWS_AS(permutation_accuracy(make_counts(2, {1, -1, 0, 0})), contract_error);
    CHECK_THROWS_AS(permutation_accuracy_bruteforce(make_counts(9, std::vector<long>(81, 1))),
                    contract_error);
}

TEST_CASE("confusion_from tabulates cluster against label") {
    const ConfusionCounts cc = confusion_from({0, 0, 1, 1, 1}, {0, 1, 1, 1, 0}, 2);
    CHECK(cc.at(0, 0) == 1);
    CHECK(cc.at(0, 1) == 1);
    CHECK(cc.at(1, 0) == 1);
    CHECK(cc.at(1, 1) == 2);

    CHECK_THROWS_AS(confusion_from({0}, {0, 1}, 2), shape_error);
    CHECK_THROWS_AS(confusion_from({2}, {0}, 2), contract_error);
    CHECK_THROWS_AS(confusion_from({-1}, {0}, 2), contract_error);
}

TEST_CASE("kmeans recovers well separated planar blobs") {
    Rng rng(909);
    std::vector<double> xs;
    std::vector<int> labels;
    const double cx[3] = {0.0, 10.0, 0.0};
    const double cy[3] = {0.0, 0.0, 10.0};
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 30; ++i) {
            xs.push_back(cx[c] + 0.3 * rng.normal());
            xs.push_back(cy[c] + 0.3 * rng.normal());
            labels.push_back(c);
        }
    }
    const Tensor x(90, 2, xs);

    const KMeansResult km = kmeans(x, 3, 10, 100, 17);
    CHECK(km.assignment.size() == 90);
    CHECK(km.iterations >= 1);
    CHECK(permutation_accuracy(confusion_from(km.assignment, labels, 3)) == doctest::Approx(1.0));

    // Lloyd iterations never increase the objective
    for (std::size_t i = 1; i < km.inertia_trace.size(); ++i)
        CHECK(km.inertia_trace[i] <= km.inertia_trace[i - 1] + 1e-9);
    CHECK(km.inertia == doctest::Approx(km.inertia_trace.back()).epsilon(1e-9));

    const KMeansResult again = kmeans(x, 3, 10, 100, 17);
    CHECK(again.assignment == km.assignment);
    CHECK(again.inertia == km.inertia);
}

TEST_CASE("kmeans edge shapes and contracts") {
    const Tensor x(4, 2, {0, 0, 1, 1, 4, 4, 9, 9});
    const KMeansResult one = kmeans(x, 1, 3, 50, 1);
    CHECK(one.assignment == std::vector<int>{0, 0, 0, 0});
    CHECK(one.centers[0] == doctest::Approx(3.5));

    const KMeansResult each = kmeans(x, 4, 3, 50, 1);
    CHECK(each.inertia == doctest::Approx(0.0));

    CHECK_THROWS_AS(kmeans(x, 0, 1, 10, 1), contract_error);
    CHECK_THROWS_AS(kmeans(x, 5, 1, 10, 1), contract_error);
    CHECK_THROWS_AS(kmeans(x, 2, 0, 10, 1), contract_error);
}

TEST_CASE("clustering attack separates raw blobs and respects contracts") {
    const Dataset data = gaussian_blobs(3, 4, 30, 4.0, 0.3, 33);
    const Tensor test_x = data.gather_x(data.test);
    const std::vector<int> test_y = data.gather_y(data.test);

    const AttackReport rep = clustering_attack(nullptr, test_x, test_y, 3, 2, 55);
    CHECK(rep.kind == AttackKind::cluster);
    CHECK(rep.accuracies.size() == 2);
    CHECK(rep.accuracy >= 0.95);

    const AttackReport rep2 = clustering_attack(nullptr, test_x, test_y, 3, 2, 55);
    CHECK(rep2.accuracy == rep.accuracy);

    CHECK_THROWS_AS(clustering_attack(nullptr, Tensor(2, 4), {0, 1}, 3, 1, 1), contract_error);
    CHECK_THROWS_AS(clustering_attack(nullptr, test_x, test_y, 1, 1, 1), contract_error);
    CHECK_THROWS_AS(clustering_attack(nullptr, test_x, test_y, 3, 0, 1), contract_error);
}

TEST_CASE("fine tuning attack recovers labels from an undefended victim") {
    const VictimFixture fx(71);
    const Tensor test_x = fx.data.gather_x(fx.data.test);
    const std::vector<int> test_y = fx.data.gather_y(fx.data.test);

    AttackConfig cfg;
    cfg.leaked_k = 4;
    cfg.seed = 5;
    const auto [leak_x, leak_y] = sample_leak(fx.data, LeakSpec{cfg.leaked_k, cfg.seed});
    const AttackReport rep =
        fine_tuning_attack(fx.model, victim_top_arch(), leak_x, leak_y, test_x, test_y, cfg);

    CHECK(rep.kind == AttackKind::fine_tune);
    CHECK(rep.leaked_k == 4);
    CHECK(rep.accuracies.size() == 1);
    CHECK(rep.accuracy >= 0.85);

    const AttackReport again =
        fine_tuning_attack(fx.model, victim_top_arch(), leak_x, leak_y, test_x, test_y, cfg);
    CHECK(again.accuracy == rep.accuracy);
}

TEST_CASE("single dense attacker starts from per-class embedding means") {
    const VictimFixture fx(72);
    const Tensor test_x = fx.data.gather_x(fx.data.test);
    const std::vector<int> test_y = fx.data.gather_y(fx.data.test);

    AttackConfig cfg;
    cfg.leaked_k = 2;
    cfg.seed = 6;
    cfg.stop_train_error = 2.0; // stops before the first update
    const auto [leak_x, leak_y] = sample_leak(fx.data, LeakSpec{cfg.leaked_k, cfg.seed});
    const AttackReport rep =
        fine_tuning_attack(fx.model, victim_top_arch(), leak_x, leak_y, test_x, test_y, cfg);

    // replicate the mean-init classifier by hand
    const Tensor z_leak = fx.model.forward_bottom(nullptr, leak_x);
    const Tensor z_test = fx.model.forward_bottom(nullptr, test_x);
    std::vector<double> mean(3 * 16, 0.0);
    std::vector<int> counts(3, 0);
    for (std::size_t i = 0; i < z_leak.rows(); ++i) {
        for (std::size_t j = 0; j < 16; ++j) mean[leak_y[i] * 16 + j] += z_leak.at(i, j);
        ++counts[leak_y[i]];
    }
    std::vector<int> pred(z_test.rows());
    for (std::size_t i = 0; i < z_test.rows(); ++i) {
        double best = -1e300;
        int arg = 0;
        for (int c = 0; c < 3; ++c) {
            double dot = 0.0;
            for (std::size_t j = 0; j < 16; ++j)
                dot += z_test.at(i, j) * mean[c * 16 + j] / counts[c];
            if (dot > best) {
                best = dot;
                arg = c;
            }
        }
        pred[i] = arg;
    }
    CHECK(rep.accuracy == doctest::Approx(accuracy(pred, test_y)).epsilon(1e-12));
}

TEST_CASE("fine tuning accuracy does not degrade with more leaked samples") {
    const VictimFixture fx(73);
    const Tensor test_x = fx.data.gather_x(fx.data.test);
    const std::vector<int> test_y = fx.data.gather_y(fx.data.test);

    double acc_k1 = 0.0, acc_k4 = 0.0;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        AttackConfig cfg;
        cfg.seed = seed;
        cfg.leaked_k = 1;
        auto leak1 = sample_leak(fx.data, LeakSpec{1, seed});
        acc_k1 += fine_tuning_attack(fx.model, victim_top_arch(), leak1.first, leak1.second,
                                     test_x, test_y, cfg)
                      .accuracy;
        cfg.leaked_k = 4;
        auto leak4 = sample_leak(fx.data, LeakSpec{4, seed});
        acc_k4 += fine_tuning_attack(fx.model, victim_top_arch(), leak4.first, leak4.second,
                                     test_x, test_y, cfg)
                      .accuracy;
    }
    CHECK(acc_k4 / 3.0 >= acc_k1 / 3.0 - 0.02);
}

TEST_CASE("scratch baseline learns something from raw leaks alone") {
    const Dataset data = gaussian_blobs(3, 8, 40, 3.0, 0.5, 35);
    const Tensor test_x = data.gather_x(data.test);
    const std::vector<int> test_y = data.gather_y(data.test);

    AttackConfig cfg;
    cfg.leaked_k = 4;
    cfg.seed = 9;
    cfg.restarts = 3;
    const auto [leak_x, leak_y] = sample_leak(data, LeakSpec{cfg.leaked_k, cfg.seed});
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 16), LayerSpec::leaky(),
                                         LayerSpec::dense(16, 3)};
    const AttackReport rep = scratch_baseline(arch, leak_x, leak_y, test_x, test_y, cfg);

    CHECK(rep.kind == AttackKind::scratch);
    CHECK(rep.accuracies.size() == 3);
    CHECK(rep.accuracy > 1.0 / 3.0);

    const AttackReport again = scratch_baseline(arch, leak_x, leak_y, test_x, test_y, cfg);
    CHECK(again.accuracy == rep.accuracy);
}

TEST_CASE("attack functions validate their inputs") {
    const VictimFixture fx(74);
    AttackConfig cfg;
    CHECK_THROWS_AS(fine_tuning_attack(fx.model, victim_top_arch(), Tensor(2, 8), {0},
                                       Tensor(1, 8), {0}, cfg),
                    shape_error);
    CHECK_THROWS_AS(fine_tuning_attack(fx.model, victim_top_arch(), Tensor(0, 8), {},
                                       Tensor(1, 8), {0}, cfg),
                    contract_error);
    cfg.restarts = 0;
    CHECK_THROWS_AS(fine_tuning_attack(fx.model, victim_top_arch(), Tensor(1, 8), {0},
                                       Tensor(1, 8), {0}, cfg),
                    contract_error);
}

TEST_CASE("attack csv schema is stable") {
    CHECK(attack_csv_header() ==
          "dataset,defense,value,attack,leaked_k,seed,accuracy,baseline_accuracy,advantage");
    AttackRow row;
    row.dataset = "blobs";
    row.defense = "pe";
    row.value = 0.5;
    row.attack = AttackKind::fine_tune;
    row.leaked_k = 4;
    row.seed = 11;
    row.accuracy = 0.25;
    row.baseline_accuracy = 0.5;
    row.advantage = 0.25;
    CHECK(attack_csv_row(row) == "blobs,pe,0.5,fine_tune,4,11,0.25,0.5,0.25");
}
