#include "splitlab/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <utility>

#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/losses.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

PartyChannel::PartyChannel(std::size_t embedding_dim) : dim_(embedding_dim) {
    if (dim_ == 0) throw contract_error("PartyChannel: embedding_dim must be positive");
}

void PartyChannel::send(Message m) {
    if (m.payload.cols() != dim_) {
        std::ostringstream os;
        os << "PartyChannel: payload has " << m.payload.cols() << " columns, channel carries "
           << dim_;
        throw contract_error(os.str());
    }
    const bool expect_embedding = log_.empty() || log_.back().kind == PayloadKind::embedding_grad;
    if (expect_embedding) {
        if (m.kind != PayloadKind::embedding)
            throw contract_error("PartyChannel: expected an embedding message");
        if (m.direction != Direction::to_label_party)
            throw contract_error("PartyChannel: embeddings flow to the label party");
    } else {
        const Message& prev = log_.back();
        if (m.kind != PayloadKind::embedding_grad)
            throw contract_error("PartyChannel: expected the matching embedding_grad message");
        if (m.direction != Direction::to_feature_party)
            throw contract_error("PartyChannel: gradients flow to the feature party");
        if (m.epoch != prev.epoch || m.batch != prev.batch)
            throw contract_error("PartyChannel: gradient does not match the pending embedding");
        if (m.payload.rows() != prev.payload.rows())
            throw contract_error("PartyChannel: gradient row count does not match the embedding");
    }
    log_.push_back(std::move(m));
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

constexpr char kTranscriptMagic[] = "SPLTLOG1";

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            std::ostringstream os;
            os << "transcript truncated at byte " << buf.size() << " while reading " << what
               << " at byte " << pos;
            throw parse_error(os.str());
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
};

} // namespace

void PartyChannel::write_transcript(const std::filesystem::path& path) const {
    std::string out(kTranscriptMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(log_.size()));
    for (const Message& m : log_) {
        std::string frame;
        frame.push_back(static_cast<char>(m.direction));
        put_u32(frame, m.epoch);
        put_u32(frame, m.batch);
        frame.push_back(static_cast<char>(m.kind));
        put_u32(frame, static_cast<std::uint32_t>(m.payload.rows()));
        put_u32(frame, static_cast<std::uint32_t>(m.payload.cols()));
        for (double v : m.payload.values()) put_f64(frame, v);
        put_u32(out, static_cast<std::uint32_t>(frame.size()));
        out += frame;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open transcript for writing: " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("short write to transcript: " + path.string());
}

std::vector<Message> PartyChannel::read_transcript(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open transcript: " + path.string());
    std::ostringstream raw;
    raw << f.rdbuf();
    const std::string buf = raw.str();

    ByteReader r{buf};
    r.need(8, "magic");
    if (buf.compare(0, 8, kTranscriptMagic) != 0)
        throw parse_error("transcript has wrong magic, expected SPLTLOG1");
    r.pos = 8;
    const std::uint32_t count = r.u32("message count");
    std::vector<Message> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t frame_len = r.u32("frame length");
        const std::size_t frame_end = r.pos + frame_len;
        r.need(frame_len, "frame body");
        const std::uint8_t dir = r.u8("direction");
        if (dir > 1) throw parse_error("transcript has invalid direction byte");
        const std::uint32_t epoch = r.u32("epoch");
        const std::uint32_t batch = r.u32("batch");
        const std::uint8_t kind = r.u8("payload kind");
        if (kind > 1) throw parse_error("transcript has invalid payload kind byte");
        const std::uint32_t rows = r.u32("rows");
        const std::uint32_t cols = r.u32("cols");
        if (frame_end - r.pos != static_cast<std::size_t>(rows) * cols * 8)
            throw parse_error("transcript frame length does not match its payload shape");
        std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
        for (double& v : vals) v = r.f64("payload value");
        out.push_back(Message{static_cast<Direction>(dir), epoch, batch,
                              static_cast<PayloadKind>(kind), Tensor(rows, cols, vals)});
    }
    if (r.pos != buf.size()) throw parse_error("transcript has trailing bytes after last frame");
    return out;
}

std::vector<Tensor> replay_transcript(const std::vector<Message>& messages,
                                      const SplitModel& model) {
    std::vector<Tensor> out;
    for (const Message& m : messages) {
        if (m.kind != PayloadKind::embedding) continue;
        if (m.payload.cols() != model.embedding_dim())
            throw contract_error("replay_transcript: embedding width does not match the model");
        out.push_back(model.forward_top(nullptr, m.payload));
    }
    return out;
}

namespace {

struct SelectionWindow {
    int first_eligible_epoch; // 1-based
    bool early_stop;
    const char* rule;
};

SelectionWindow selection_window(Defense defense, int epochs) {
    switch (defense) {
    case Defense::vanilla:
        return {1, true, "best validation accuracy, early stop after 20 stale epochs"};
    case Defense::pe:
    case Defense::dcor:
        return {(9 * epochs + 9) / 10, false, "best validation accuracy in the last tenth"};
    case Defense::label_dp:
        return {(epochs + 1) / 2, false, "best validation accuracy in the last half"};
    }
    throw contract_error("selection_window: unknown defense");
}

} // namespace

TrainRunResult split_train(const SplitModel& initial, const Dataset& data,
                           const LossConfig& loss, const TrainConfig& config,
                           std::uint64_t seed, PartyChannel* channel) {
    loss.validate();
    if (config.batch_size == 0) throw contract_error("split_train: batch_size must be positive");
    if (data.input_dim() != initial.input_dim())
        throw contract_error("split_train: dataset width does not match the model input");
    if (initial.output_dim() != static_cast<std::size_t>(data.num_classes))
        throw contract_error("split_train: model output width does not match the class count");
    if (channel && channel->embedding_dim() != initial.embedding_dim())
        throw contract_error("split_train: channel width does not match the embedding");

    const auto t0 = std::chrono::steady_clock::now();
    SplitModel model = initial.snapshot();

    TrainRunResult result;
    result.seed = seed;
    const SelectionWindow window = selection_window(loss.defense, config.epochs);
    result.selection_rule = window.rule;
    result.model = model.snapshot();

    if (config.epochs == 0) {
        result.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return result;
    }

    std::vector<int> train_y = data.gather_y(data.train);
    if (loss.defense == Defense::label_dp)
        train_y = flip_labels(train_y, loss.flip_ratio, data.num_classes, mix64(seed ^ 0xf11bULL));

    Adam bottom_opt(model.bottom_parameters(), config.adam);
    Adam top_opt(model.top_parameters(), config.adam);
    Rng order_rng(mix64(seed ^ 0x0bdeULL));

    const Tensor val_x = data.gather_x(data.val);
    const std::vector<int> val_y = data.gather_y(data.val);

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    double best_acc = -1.0;
    int stale = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::uint32_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<std::size_t> rows(stop - start);
            std::vector<int> batch_y(stop - start);
            for (std::size_t i = start; i < stop; ++i) {
                rows[i - start] = data.train[order[i]];
                batch_y[i - start] = train_y[order[i]];
            }
            const Tensor batch_x = data.gather_x(rows);

            try {
                // Feature party: bottom forward, embedding crosses the boundary.
                Tape bottom_tape;
                Tensor z = model.forward_bottom(&bottom_tape, batch_x);
                if (channel)
                    channel->send(Message{Direction::to_label_party,
                                          static_cast<std::uint32_t>(epoch), batch_index,
                                          PayloadKind::embedding, z.clone()});

                // Label party: its own tape, rooted at a copy of the embedding.
                Tape top_tape;
                Tensor z_label(z.rows(), z.cols(), z.values());
                Tensor logits = model.forward_top(&top_tape, z_label);
                Tensor batch_loss = combined_loss(&top_tape, logits, batch_y, z_label, loss);
                const double loss_value = batch_loss.item();
                if (!std::isfinite(loss_value)) throw numeric_error("loss is not finite");
                loss_sum += loss_value * static_cast<double>(stop - start);

                bottom_opt.zero_grad();
                top_opt.zero_grad();
                top_tape.backward(batch_loss);

                // Gradient message back across the boundary.
                const std::vector<double> z_grad = z_label.grad();
                if (channel)
                    channel->send(Message{Direction::to_feature_party,
                                          static_cast<std::uint32_t>(epoch), batch_index,
                                          PayloadKind::embedding_grad,
                                          Tensor(z.rows(), z.cols(), z_grad)});

                bottom_tape.backward_from(z, z_grad);
                top_opt.step();
                bottom_opt.step();
            } catch (const numeric_error& e) {
                std::ostringstream os;
                os << "training diverged: defense=" << defense_name(loss.defense)
                   << " alpha=" << loss.alpha << " flip_ratio=" << loss.flip_ratio
                   << " epoch=" << epoch << " batch=" << batch_index << " (" << e.what() << ")";
                throw divergence_error(os.str());
            }
            ++batch_index;
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.train_loss = loss_sum / static_cast<double>(order.size());
        metrics.val_accuracy =
            data.val.empty() ? 0.0 : accuracy(model.forward(nullptr, val_x), val_y);
        result.history.push_back(metrics);
        result.epochs_run = epoch;

        const bool eligible = epoch >= window.first_eligible_epoch;
        if (eligible && metrics.val_accuracy > best_acc) {
            best_acc = metrics.val_accuracy;
            result.best_epoch = epoch;
            result.best_val_accuracy = metrics.val_accuracy;
            result.model = model.snapshot();
            stale = 0;
        } else {
            ++stale;
        }
        if (window.early_stop && stale >= 20) {
            result.stopped_early = true;
            break;
        }
    }

    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

} // namespace splitlab
