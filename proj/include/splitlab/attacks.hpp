#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitlab/dataset.hpp"
#include "splitlab/model.hpp"
#include "splitlab/tensor.hpp"

namespace splitlab {

enum class AttackKind { fine_tune, cluster, scratch };

const char* attack_kind_name(AttackKind kind);

struct AttackConfig {
    int leaked_k = 1;              // leaked samples per class
    int max_epochs = 1000;         // fine-tune / scratch step budget
    double stop_train_error = 0.01;
    int restarts = 1;
    std::uint64_t seed = 0;
    AdamConfig adam;               // library defaults
};

struct AttackReport {
    AttackKind kind = AttackKind::fine_tune;
    int leaked_k = 0;
    std::uint64_t seed = 0;
    std::vector<double> accuracies; // one per restart
    double accuracy = 0.0;          // mean over restarts
};

// Model-completion attack: embeddings of the leaked samples are produced by
// the frozen victim bottom model, a fresh top model of the given architecture
// is trained on them until the leak-set error drops below stop_train_error or
// the epoch budget runs out, and the result is scored on the test split. When
// the top architecture is a single dense layer its weight columns are seeded
// with the per-class mean embeddings and zero bias before training.
AttackReport fine_tuning_attack(const SplitModel& victim,
                                const std::vector<LayerSpec>& top_arch,
                                const Tensor& leak_x, const std::vector<int>& leak_y,
                                const Tensor& test_x, const std::vector<int>& test_y,
                                const AttackConfig& cfg);

// Null attacker: trains the full architecture from random initialization on
// the raw leaked samples alone. Same stopping rule as the fine-tuning attack.
AttackReport scratch_baseline(const std::vector<LayerSpec>& full_arch,
                              const Tensor& leak_x, const std::vector<int>& leak_y,
                              const Tensor& test_x, const std::vector<int>& test_y,
                              const AttackConfig& cfg);

struct KMeansResult {
    std::vector<int> assignment;
    std::vector<double> centers;      // k x d row-major
    double inertia = 0.0;
    int iterations = 0;
    std::vector<double> inertia_trace; // per Lloyd iteration of the best restart
};

// k-means++ seeding, Lloyd iterations until assignments stabilize or
// max_iters, best of `restarts` runs by inertia. Empty clusters are reseeded
// with the point farthest from its current center.
KMeansResult kmeans(const Tensor& x, int k, int restarts, int max_iters,
                    std::uint64_t seed);

// Clustering attack: k-means on the victim's forward embeddings (or on raw
// inputs when victim is null), scored as the best label permutation against
// the true labels.
AttackReport clustering_attack(const SplitModel* victim, const Tensor& x,
                               const std::vector<int>& y, int num_classes,
                               int restarts, std::uint64_t seed);

// Square contingency table between cluster ids and labels.
struct ConfusionCounts {
    std::size_t classes = 0;
    std::vector<long> counts; // classes x classes row-major, [cluster][label]

    long& at(std::size_t cluster, std::size_t label);
    long at(std::size_t cluster, std::size_t label) const;
};

ConfusionCounts confusion_from(const std::vector<int>& clusters,
                               const std::vector<int>& labels, int num_classes);

// Best-permutation accuracy max_sigma sum_i counts[i][sigma(i)] / total,
// solved with the Hungarian algorithm.
double permutation_accuracy(const ConfusionCounts& counts);

// Exhaustive reference for small class counts (<= 8).
double permutation_accuracy_bruteforce(const ConfusionCounts& counts);

// One row of the attack-grid CSV. value is alpha for pe/dcor and the flip
// ratio for label_dp; baseline_accuracy is the matching scratch attacker.
struct AttackRow {
    std::string dataset;
    std::string defense;
    double value = 0.0;
    AttackKind attack = AttackKind::fine_tune;
    int leaked_k = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double baseline_accuracy = 0.0;
    double advantage = 0.0;
};

std::string attack_csv_header();
std::string attack_csv_row(const AttackRow& row);

} // namespace splitlab
