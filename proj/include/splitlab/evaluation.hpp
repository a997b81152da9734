#pragma once

#include <filesystem>
#include <vector>

#include "splitlab/attacks.hpp"
#include "splitlab/tensor.hpp"

namespace splitlab {

// Fraction of rows whose argmax matches the label; ties broken toward the
// lower class index.
double accuracy(const Tensor& logits, const std::vector<int>& labels);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);

struct AdvantageRecord {
    double r_null = 0.0;    // attacker error without the bottom model
    double r_with = 0.0;    // attacker error with the bottom model
    double advantage = 0.0; // r_null - r_with
    bool perfect = false;   // advantage <= 0
};

// Bottom model advantage over seeds: mean error of the null (scratch)
// attacks minus mean error of the bottom-model attacks. Lists must be
// non-empty and agree on attack kind and leaked k.
AdvantageRecord bottom_model_advantage(const std::vector<AttackReport>& null_reports,
                                       const std::vector<AttackReport>& with_reports);

struct AngularHistogram {
    std::vector<double> edges; // bins+1 edges spanning [0, pi]
    std::vector<long> same_counts;
    std::vector<long> diff_counts;
    double median_same = 0.0;
    double median_diff = 0.0;
    std::size_t pair_count = 0; // unordered pairs, counted once
};

// Pairwise angular distances arccos(<z,z'>/d) for rows on the sqrt(d)-sphere,
// partitioned into same-class and different-class pairs.
AngularHistogram angular_distance_histogram(const Tensor& z, const std::vector<int>& y,
                                            int bins);

// CSV schema: bin_left,bin_right,same_count,diff_count.
void write_histogram_csv(const AngularHistogram& hist, const std::filesystem::path& path);

} // namespace splitlab
