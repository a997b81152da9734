#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "splitlab/dataset.hpp"
#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/losses.hpp"
#include "splitlab/model.hpp"
#include "splitlab/protocol.hpp"
#include "splitlab/rng.hpp"
#include "splitlab/tensor.hpp"

using namespace splitlab;

namespace {

Dataset manual_dataset() {
    Rng rng(404);
    std::vector<double> xv(6 * 4);
    for (auto& v : xv) v = rng.normal();
    Dataset d;
    d.name = "manual";
    d.X = Tensor(6, 4, xv);
    d.Y = {0, 1, 2, 0, 1, 2};
    d.num_classes = 3;
    d.train = {0, 1, 2, 3, 4, 5};
    return d;
}

std::vector<LayerSpec> plain_arch() {
    return {LayerSpec::dense(4, 8), LayerSpec::leaky(), LayerSpec::dense(8, 3)};
}

bool params_bitwise_equal(const SplitModel& a, const SplitModel& b) {
    if (a.dense_count() != b.dense_count()) return false;
    for (std::size_t i = 0; i < a.dense_count(); ++i) {
        if (a.weight(i).values() != b.weight(i).values()) return false;
        if (a.bias(i).values() != b.bias(i).values()) return false;
    }
    return true;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

struct TempFile {
    std::filesystem::path path;
    explicit TempFile(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name) {}
    ~TempFile() { std::remove(path.string().c_str()); }
};

} // namespace

TEST_CASE("epochs zero returns the initial parameters untouched") {
    const SplitModel m = SplitModel::build(plain_arch(), 2, 5);
    TrainConfig tc;
    tc.epochs = 0;
    const TrainRunResult res = split_train(m, manual_dataset(), LossConfig{}, tc, 1);
    CHECK(params_bitwise_equal(res.model, m));
    CHECK(res.history.empty());
    CHECK(res.best_epoch == 0);
    CHECK(res.epochs_run == 0);
    CHECK_FALSE(res.stopped_early);
}

TEST_CASE("one split step matches a centralized step bitwise") {
    const Dataset data = manual_dataset();
    const SplitModel m0 = SplitModel::build(plain_arch(), 2, 11);
    const std::uint64_t seed = 99;

    TrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 6;
    const TrainRunResult res = split_train(m0, data, LossConfig{}, tc, seed);

    // Replica: same shuffle, one centralized tape, one optimizer.
    SplitModel m1 = m0.snapshot();
    std::vector<std::size_t> order = {0, 1, 2, 3, 4, 5};
    Rng order_rng(mix64(seed ^ 0x0bdeULL));
    order_rng.shuffle(order);
    std::vector<std::size_t> rows(order.size());
    std::vector<int> labels(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        rows[i] = data.train[order[i]];
        labels[i] = data.Y[rows[i]];
    }
    const Tensor bx = data.gather_x(rows);
    Tape tape;
    const Tensor logits = m1.forward(&tape, bx);
    const Tensor loss = softmax_cross_entropy(&tape, logits, labels);
    Adam opt(m1.parameters());
    opt.zero_grad();
    tape.backward(loss);
    opt.step();

    CHECK(params_bitwise_equal(res.model, m1));
    CHECK(res.history.size() == 1);
    CHECK(res.history[0].train_loss == doctest::Approx(loss.item()).epsilon(1e-12));
}

TEST_CASE("vanilla split training learns separable blobs") {
    const Dataset data = gaussian_blobs(3, 8, 60, 3.0, 0.5, 21);
    // generator verified a linear probe reaches 0.95; the split MLP should too
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 16), LayerSpec::leaky(),
                                         LayerSpec::dense(16, 3)};
    const SplitModel m = SplitModel::build(arch, 2, 7);
    TrainConfig tc;
    tc.epochs = 120;
    tc.batch_size = 16;
    tc.adam.lr = 5e-3;
    const TrainRunResult res = split_train(m, data, LossConfig{}, tc, 3);
    const double test_acc =
        accuracy(res.model.forward(nullptr, data.gather_x(data.test)), data.gather_y(data.test));
    CHECK(test_acc >= 0.9);
    CHECK(res.best_val_accuracy >= 0.9);
    CHECK(res.best_epoch >= 1);
    CHECK(res.wall_seconds > 0.0);
}

TEST_CASE("channel carries one embedding and one gradient per batch") {
    const Dataset data = gaussian_blobs(3, 8, 20, 3.0, 0.5, 22);
    REQUIRE(data.train.size() == 42);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 16), LayerSpec::leaky(),
                                         LayerSpec::dense(16, 3)};
    const SplitModel m = SplitModel::build(arch, 2, 8);
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 8;
    PartyChannel channel(m.embedding_dim());
    split_train(m, data, LossConfig{}, tc, 4, &channel);

    const std::size_t batches_per_epoch = (42 + 7) / 8;
    CHECK(channel.messages().size() == 2 * batches_per_epoch * 3);

    const auto& log = channel.messages();
    for (std::size_t i = 0; i < log.size(); i += 2) {
        const Message& emb = log[i];
        const Message& grad = log[i + 1];
        CHECK(emb.kind == PayloadKind::embedding);
        CHECK(emb.direction == Direction::to_label_party);
        CHECK(grad.kind == PayloadKind::embedding_grad);
        CHECK(grad.direction == Direction::to_feature_party);
        CHECK(emb.epoch == grad.epoch);
        CHECK(emb.batch == grad.batch);
        CHECK(emb.payload.rows() == grad.payload.rows());
        CHECK(emb.payload.cols() == 16);
    }
}

TEST_CASE("defended runs keep the message schema and counts of vanilla") {
    const Dataset data = gaussian_blobs(3, 8, 20, 3.0, 0.5, 23);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 16), LayerSpec::leaky(),
                                         LayerSpec::dense(16, 16), LayerSpec::norm(),
                                         LayerSpec::dense(16, 3)};
    const SplitModel m = SplitModel::build(arch, 4, 9);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;

    PartyChannel vanilla_ch(m.embedding_dim());
    split_train(m, data, LossConfig{}, tc, 5, &vanilla_ch);

    LossConfig pe;
    pe.defense = Defense::pe;
    pe.alpha = 0.1;
    PartyChannel pe_ch(m.embedding_dim());
    split_train(m, data, pe, tc, 5, &pe_ch);

    REQUIRE(pe_ch.messages().size() == vanilla_ch.messages().size());
    for (std::size_t i = 0; i < pe_ch.messages().size(); ++i) {
        CHECK(pe_ch.messages()[i].kind == vanilla_ch.messages()[i].kind);
        CHECK(pe_ch.messages()[i].payload.rows() == vanilla_ch.messages()[i].payload.rows());
        CHECK(pe_ch.messages()[i].payload.cols() == vanilla_ch.messages()[i].payload.cols());
    }

    // layer norm at the boundary pins every embedding row to the sphere
    const double d = 16.0;
    for (const Message& msg : pe_ch.messages()) {
        if (msg.kind != PayloadKind::embedding) continue;
        for (std::size_t r = 0; r < msg.payload.rows(); ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < msg.payload.cols(); ++c)
                s += msg.payload.at(r, c) * msg.payload.at(r, c);
            CHECK(s == doctest::Approx(d).epsilon(1e-9));
        }
    }
}

TEST_CASE("transcript roundtrip preserves every frame bitwise") {
    const Dataset data = gaussian_blobs(3, 8, 15, 3.0, 0.5, 24);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 12), LayerSpec::leaky(),
                                         LayerSpec::dense(12, 3)};
    const SplitModel m = SplitModel::build(arch, 2, 10);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 10;
    PartyChannel channel(m.embedding_dim());
    const TrainRunResult res = split_train(m, data, LossConfig{}, tc, 6, &channel);

    TempFile tf("splitlab_transcript_test.bin");
    channel.write_transcript(tf.path);
    const std::vector<Message> back = PartyChannel::read_transcript(tf.path);

    REQUIRE(back.size() == channel.messages().size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        const Message& a = channel.messages()[i];
        const Message& b = back[i];
        CHECK(a.direction == b.direction);
        CHECK(a.epoch == b.epoch);
        CHECK(a.batch == b.batch);
        CHECK(a.kind == b.kind);
        CHECK(a.payload.values() == b.payload.values());
    }

    const std::vector<Tensor> live = replay_transcript(channel.messages(), res.model);
    const std::vector<Tensor> replayed = replay_transcript(back, res.model);
    REQUIRE(live.size() == replayed.size());
    REQUIRE(live.size() == back.size() / 2);
    for (std::size_t i = 0; i < live.size(); ++i)
        CHECK(live[i].values() == replayed[i].values());
}

TEST_CASE("empty channel writes a header-only transcript") {
    PartyChannel channel(4);
    TempFile tf("splitlab_transcript_empty.bin");
    channel.write_transcript(tf.path);
    CHECK(slurp(tf.path).size() == 12);
    CHECK(PartyChannel::read_transcript(tf.path).empty());
}

TEST_CASE("training is deterministic under the run seed") {
    const Dataset data = gaussian_blobs(3, 8, 15, 3.0, 0.5, 25);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 12), LayerSpec::leaky(),
                                         LayerSpec::dense(12, 3)};
    const SplitModel m = SplitModel::build(arch, 2, 12);
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 8;

    PartyChannel ch_a(m.embedding_dim());
    PartyChannel ch_b(m.embedding_dim());
    const TrainRunResult a = split_train(m, data, LossConfig{}, tc, 7, &ch_a);
    const TrainRunResult b = split_train(m, data, LossConfig{}, tc, 7, &ch_b);

    CHECK(params_bitwise_equal(a.model, b.model));
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_accuracy == b.history[i].val_accuracy);
    }

    TempFile fa("splitlab_transcript_a.bin");
    TempFile fb("splitlab_transcript_b.bin");
    ch_a.write_transcript(fa.path);
    ch_b.write_transcript(fb.path);
    CHECK(slurp(fa.path) == slurp(fb.path));
}

TEST_CASE("label_dp flips supervision while vanilla keeps it") {
    const Dataset data = gaussian_blobs(2, 4, 30, 3.0, 0.4, 26);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(4, 8), LayerSpec::leaky(),
                                         LayerSpec::dense(8, 2)};
    const SplitModel m = SplitModel::build(arch, 2, 13);
    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 8;

    const TrainRunResult plain = split_train(m, data, LossConfig{}, tc, 8);
    CHECK(plain.best_val_accuracy >= 0.9);

    // With two classes a full flip inverts every label, so the trained model
    // anti-predicts the clean validation labels.
    LossConfig dp;
    dp.defense = Defense::label_dp;
    dp.flip_ratio = 1.0;
    const TrainRunResult flipped = split_train(m, data, dp, tc, 8);
    CHECK(flipped.history.back().val_accuracy <= 0.2);
}

TEST_CASE("selection windows follow the defense") {
    const Dataset data = gaussian_blobs(3, 8, 15, 3.0, 0.5, 27);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(8, 12), LayerSpec::leaky(),
                                         LayerSpec::dense(12, 12), LayerSpec::norm(),
                                         LayerSpec::dense(12, 3)};
    const SplitModel m = SplitModel::build(arch, 4, 14);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;

    LossConfig pe;
    pe.defense = Defense::pe;
    pe.alpha = 0.01;
    const TrainRunResult pe_run = split_train(m, data, pe, tc, 9);
    CHECK(pe_run.best_epoch >= 9);
    CHECK_FALSE(pe_run.stopped_early);

    LossConfig dp;
    dp.defense = Defense::label_dp;
    dp.flip_ratio = 0.1;
    const TrainRunResult dp_run = split_train(m, data, dp, tc, 9);
    CHECK(dp_run.best_epoch >= 5);
    CHECK_FALSE(dp_run.stopped_early);
}

TEST_CASE("early stopping halts a stale vanilla run") {
    // sigma large enough that validation accuracy plateaus quickly
    const Dataset data = gaussian_blobs(2, 4, 40, 1.0, 4.0, 28, std::nullopt, false);
    const std::vector<LayerSpec> arch = {LayerSpec::dense(4, 6), LayerSpec::leaky(),
                                         LayerSpec::dense(6, 2)};
    const SplitModel m = SplitModel::build(arch, 2, 15);
    TrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 16;
    const TrainRunResult res = split_train(m, data, LossConfig{}, tc, 10);
    CHECK(res.stopped_early);
    CHECK(res.epochs_run < 400);
    CHECK(res.epochs_run >= 21);
}

TEST_CASE("divergence is reported with the defense in the message") {
    const Dataset data = manual_dataset();
    const SplitModel m = SplitModel::build(plain_arch(), 2, 16);
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 6;
    tc.adam.lr = 1e308;
    try {
        split_train(m, data, LossConfig{}, tc, 11);
        FAIL("expected divergence_error");
    } catch (const divergence_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("diverged") != std::string::npos);
        CHECK(msg.find("defense=vanilla") != std::string::npos);
        CHECK(msg.find("alpha=") != std::string::npos);
        CHECK(msg.find("epoch=") != std::string::npos);
    }
}

TEST_CASE("channel rejects protocol violations") {
    PartyChannel ch(4);
    const Tensor z(2, 4, {1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor g = z.clone();

    CHECK_THROWS_AS(
        ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding_grad, g}),
        contract_error);

    ch.send(Message{Direction::to_label_party, 1, 0, PayloadKind::embedding, z});
    // second embedding before the gradient
    CHECK_THROWS_AS(ch.send(Message{Direction::to_label_party, 1, 1, PayloadKind::embedding, z}),
                    contract_error);
    // gradient with mismatched batch id
    CHECK_THROWS_AS(
        ch.send(Message{Direction::to_feature_party, 1, 3, PayloadKind::embedding_grad, g}),
        contract_error);
    // gradient with wrong row count
    CHECK_THROWS_AS(ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding_grad,
                                    Tensor(1, 4)}),
                    contract_error);
    // wrong width entirely
    CHECK_THROWS_AS(ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding_grad,
                                    Tensor(2, 3)}),
                    contract_error);
    // embedding marked as flowing to the feature party
    CHECK_THROWS_AS(
        ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding, z}),
        contract_error);

    ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding_grad, g});
    CHECK(ch.messages().size() == 2);
}

TEST_CASE("transcript parse errors carry byte positions") {
    TempFile tf("splitlab_transcript_bad.bin");

    {
        std::ofstream f(tf.path, std::ios::binary);
        f << "NOTMAGIC" << std::string(4, '\0');
    }
    CHECK_THROWS_AS(PartyChannel::read_transcript(tf.path), parse_error);

    PartyChannel ch(4);
    ch.send(Message{Direction::to_label_party, 1, 0, PayloadKind::embedding, Tensor(2, 4)});
    ch.send(Message{Direction::to_feature_party, 1, 0, PayloadKind::embedding_grad, Tensor(2, 4)});
    ch.write_transcript(tf.path);
    const std::string full = slurp(tf.path);

    {
        std::ofstream f(tf.path, std::ios::binary);
        f.write(full.data(), static_cast<std::streamsize>(full.size() - 7));
    }
    try {
        PartyChannel::read_transcript(tf.path);
        FAIL("expected parse_error");
    } catch (const parse_error& e) {
        CHECK(std::string(e.what()).find("byte") != std::string::npos);
    }

    {
        std::ofstream f(tf.path, std::ios::binary);
        f.write(full.data(), static_cast<std::streamsize>(full.size()));
        f << "junk";
    }
    CHECK_THROWS_AS(PartyChannel::read_transcript(tf.path), parse_error);

    CHECK_THROWS_AS(PartyChannel::read_transcript("/nonexistent/transcript.bin"), io_error);
}

TEST_CASE("replay rejects embeddings of the wrong width") {
    const SplitModel m = SplitModel::build(plain_arch(), 2, 17);
    std::vector<Message> msgs = {
        Message{Direction::to_label_party, 1, 0, PayloadKind::embedding, Tensor(2, 5)}};
    CHECK_THROWS_AS(replay_transcript(msgs, m), contract_error);
}

TEST_CASE("split_train validates shapes up front") {
    const Dataset data = manual_dataset();
    const SplitModel m = SplitModel::build(plain_arch(), 2, 18);

    TrainConfig bad_batch;
    bad_batch.batch_size = 0;
    CHECK_THROWS_AS(split_train(m, data, LossConfig{}, bad_batch, 1), contract_error);

    PartyChannel narrow(3);
    CHECK_THROWS_AS(split_train(m, data, LossConfig{}, TrainConfig{}, 1, &narrow),
                    contract_error);

    Dataset wide = manual_dataset();
    wide.X = Tensor(6, 5);
    CHECK_THROWS_AS(split_train(m, wide, LossConfig{}, TrainConfig{}, 1), contract_error);

    Dataset more_classes = manual_dataset();
    more_classes.num_classes = 4;
    CHECK_THROWS_AS(split_train(m, more_classes, LossConfig{}, TrainConfig{}, 1), contract_error);
}
