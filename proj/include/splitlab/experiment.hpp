#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "splitlab/dataset.hpp"
#include "splitlab/losses.hpp"
#include "splitlab/model.hpp"
#include "splitlab/protocol.hpp"
#include "splitlab/report.hpp"

namespace splitlab {

struct DatasetSpec {
    std::string kind = "blobs"; // blobs | shells | csv | idx
    int classes = 4;
    std::size_t input_dim = 16;
    std::size_t per_class = 725;
    double center_scale = 4.0;
    double noise_sigma = 0.7;
    std::uint64_t seed = 1;
    std::optional<SplitSizes> split;
    std::string path;        // csv file or idx image file
    std::string labels_path; // idx label file
    std::string label_column = "label";
    bool verify = true;

    Dataset build() const;
};

struct ArchitectureSpec {
    std::vector<LayerSpec> layers;
    std::size_t split_index = 0;

    std::vector<LayerSpec> top_layers() const; // layers from split_index on
};

struct DefenseSweep {
    Defense defense = Defense::vanilla;
    std::vector<double> values; // alpha or flip ratio; empty only for vanilla
};

struct AttackGrid {
    bool fine_tune = true;
    bool cluster = true;
    std::vector<int> k_values = {1, 4};
    int restarts = 1;
    int max_epochs = 1000;
    double stop_train_error = 0.01;
};

struct ExperimentConfig {
    int schema_version = 1;
    std::string name = "experiment";
    DatasetSpec dataset;
    ArchitectureSpec architecture;
    TrainConfig train;
    std::vector<DefenseSweep> defenses;
    AttackGrid attacks;
    int trials = 3;
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    void validate() const;
    // Structured text config with a versioned schema; parse failures carry
    // line/column diagnostics.
    static ExperimentConfig from_json_text(const std::string& text);
    static ExperimentConfig from_json_file(const std::filesystem::path& path);
    // Deterministic serialization; hashed for row provenance.
    std::string canonical_text() const;
    std::uint64_t config_hash() const;
};

struct ExperimentResult {
    int exit_code = 0; // 2 when every trial of some sweep cell diverged
    std::filesystem::path long_csv;
    std::filesystem::path summary_csv;
    std::filesystem::path checkpoint_dir;
    CsvTable long_table;
    CsvTable summary_table;
};

// Full sweep: (defense, value) x trial cells, each trained, checkpointed,
// attacked, and recorded. Diverged runs keep their rows (status=diverged)
// but are excluded from the summary means. Independent cells may run on
// `jobs` threads; results are canonically sorted, so the files are identical
// whatever the job count.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

std::uint64_t fnv1a64(const std::string& text);

} // namespace splitlab
