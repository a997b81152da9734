#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "splitlab/tensor.hpp"

namespace splitlab {

// Explicit partition sizes; when absent a 70/10/20 split is used.
struct SplitSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

struct Dataset {
    std::string name;
    Tensor X;            // n x d_in
    std::vector<int> Y;  // n labels in [0, C)
    int num_classes = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::vector<std::pair<std::string, std::string>> meta; // generator provenance

    std::size_t size() const { return Y.size(); }
    std::size_t input_dim() const { return X.cols(); }

    Tensor gather_x(const std::vector<std::size_t>& idx) const;
    std::vector<int> gather_y(const std::vector<std::size_t>& idx) const;

    // Checks label range, partition disjointness/exhaustiveness, and that
    // every class appears in the train partition. Throws contract_error.
    void validate() const;
};

// Shuffled split into train/val/test. Deterministic under seed.
void assign_partitions(Dataset& data, std::uint64_t seed,
                       const std::optional<SplitSizes>& sizes = std::nullopt);

// Multinomial logistic probe (Adam, full batch): train on the train
// partition, return test accuracy. The generators use it as their
// generation-time oracle.
double linear_probe_accuracy(const Dataset& data, std::uint64_t seed = 0);

// Isotropic Gaussian class blobs with centers uniform in a scaled cube.
// When verify is true the linear probe must reach probe_min on the result.
Dataset gaussian_blobs(int classes, std::size_t d_in, std::size_t per_class,
                       double center_scale, double noise_sigma, std::uint64_t seed,
                       const std::optional<SplitSizes>& sizes = std::nullopt,
                       bool verify = true, double probe_min = 0.95);

// Concentric spherical shells: not linearly separable by construction.
// When verify is true the linear probe must stay at or below probe_max.
Dataset concentric_shells(int classes, std::size_t d_in, std::size_t per_class,
                          std::uint64_t seed,
                          const std::optional<SplitSizes>& sizes = std::nullopt,
                          bool verify = true, double probe_max = 0.6);

// CSV with header f0,...,f{d-1},label. Writes a sidecar <path>.meta file
// when the dataset carries metadata.
void save_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label",
                 std::uint64_t split_seed = 0,
                 const std::optional<SplitSizes>& sizes = std::nullopt);

// IDX image/label pair (big-endian magics 0x00000803 / 0x00000801), pixels
// rescaled to [0,1].
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path, std::uint64_t split_seed = 0,
                 const std::optional<SplitSizes>& sizes = std::nullopt);

// Stitches preseparated train/test data into one Dataset, carving the
// validation partition out of the train rows.
Dataset from_parts(const Tensor& x_train, const std::vector<int>& y_train,
                   const Tensor& x_test, const std::vector<int>& y_test, double val_fraction,
                   std::uint64_t seed, const std::string& name);

struct LeakSpec {
    int k = 1;
    std::uint64_t seed = 0;
};

// Exactly k train-partition samples per class, drawn without replacement.
std::pair<Tensor, std::vector<int>> sample_leak(const Dataset& data, const LeakSpec& spec);

} // namespace splitlab
