#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "splitlab/dataset.hpp"
#include "splitlab/losses.hpp"
#include "splitlab/model.hpp"
#include "splitlab/tensor.hpp"

namespace splitlab {

enum class Direction : std::uint8_t { to_label_party = 0, to_feature_party = 1 };
enum class PayloadKind : std::uint8_t { embedding = 0, embedding_grad = 1 };

struct Message {
    Direction direction;
    std::uint32_t epoch;
    std::uint32_t batch;
    PayloadKind kind;
    Tensor payload;
};

// In-memory two-party channel. Enforces the protocol shape: per batch, one
// embedding toward the label party followed by one matching gradient back.
class PartyChannel {
public:
    explicit PartyChannel(std::size_t embedding_dim);

    void send(Message m);
    const std::vector<Message>& messages() const { return log_; }
    std::size_t embedding_dim() const { return dim_; }

    void write_transcript(const std::filesystem::path& path) const;
    static std::vector<Message> read_transcript(const std::filesystem::path& path);

private:
    std::size_t dim_;
    std::vector<Message> log_;
};

// Forwards every recorded embedding frame through the model's top half;
// returns one logits tensor per embedding message.
std::vector<Tensor> replay_transcript(const std::vector<Message>& messages,
                                      const SplitModel& model);

struct TrainConfig {
    int epochs = 100;
    std::size_t batch_size = 64;
    AdamConfig adam;
};

struct EpochMetrics {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainRunResult {
    SplitModel model; // best snapshot per the selection rule
    std::vector<EpochMetrics> history;
    std::string selection_rule;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    int epochs_run = 0;
    bool stopped_early = false;
    std::uint64_t seed = 0;
    double wall_seconds = 0.0;
};

// Two-party split training: the feature party runs the bottom model, the
// label party runs the top model and the loss; only embeddings and embedding
// gradients cross the boundary. Model selection follows the defense:
// vanilla uses early stopping with patience 20, pe/dcor keep the best
// validation epoch in [0.9E, E], label_dp in [0.5E, E]. Deterministic under
// seed. Divergence aborts with a diagnostic naming the defense and alpha.
TrainRunResult split_train(const SplitModel& model, const Dataset& data,
                           const LossConfig& loss_config, const TrainConfig& train_config,
                           std::uint64_t seed, PartyChannel* channel = nullptr);

} // namespace splitlab
