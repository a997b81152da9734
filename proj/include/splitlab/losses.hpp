#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splitlab/tensor.hpp"

namespace splitlab {

enum class Defense { vanilla, pe, dcor, label_dp };

std::string defense_name(Defense d);
Defense defense_from_name(const std::string& name);

struct LossConfig {
    Defense defense = Defense::vanilla;
    double alpha = 0.0;       // weight of the auxiliary loss (pe, dcor)
    double flip_ratio = 0.0;  // label_dp
    double arccos_clamp = 1e-7;

    void validate() const; // throws contract_error
};

// Sum over classes of 1/arccos(cos_sim(z, z')) across ordered same-class
// pairs. Embeddings are expected on the sqrt(d)-sphere, so the cosine is
// dot/d, clamped to [-1+delta, 1-delta]. Clamped pairs contribute value but
// no gradient. Batches with no same-class pair yield exactly 0.
Tensor pe_loss_angular(Tape* tape, const Tensor& z, const std::vector<int>& y,
                       double delta = 1e-7);

// Sum over ordered same-class pairs of 1/||z - z'||, the distance guarded by
// +1e-12 under the square root.
Tensor pe_loss_euclidean(Tape* tape, const Tensor& z, const std::vector<int>& y);

// Sample distance correlation between the embedding rows and the one-hot
// label rows (pairwise label distance is 0 for equal labels, sqrt(2)
// otherwise). Returns 0 with no gradient when either doubly-centered
// distance matrix is degenerate.
Tensor dcor_loss(Tape* tape, const Tensor& z, const std::vector<int>& y);

// Flips each label with probability flip_ratio to a uniformly chosen
// different class. Applied once to the training partition before training.
std::vector<int> flip_labels(const std::vector<int>& y, double flip_ratio, int num_classes,
                             std::uint64_t seed);

// Cross-entropy plus alpha times the configured auxiliary loss; vanilla and
// label_dp return cross-entropy alone.
Tensor combined_loss(Tape* tape, const Tensor& logits, const std::vector<int>& y,
                     const Tensor& z, const LossConfig& config);

} // namespace splitlab
