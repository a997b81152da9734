#include "splitlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "splitlab/attacks.hpp"
#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

using nlohmann::json;

Dataset DatasetSpec::build() const {
    if (kind == "blobs")
        return gaussian_blobs(classes, input_dim, per_class, center_scale, noise_sigma, seed,
                              split, verify);
    if (kind == "shells") return concentric_shells(classes, input_dim, per_class, seed, split, verify);
    if (kind == "csv") return load_csv(path, label_column, seed, split);
    if (kind == "idx") return load_idx(path, labels_path, seed, split);
    throw contract_error("dataset.kind '" + kind + "' is not one of blobs/shells/csv/idx");
}

std::vector<LayerSpec> ArchitectureSpec::top_layers() const {
    if (split_index == 0 || split_index >= layers.size())
        throw contract_error("architecture.split_index outside the layer list");
    return {layers.begin() + static_cast<std::ptrdiff_t>(split_index), layers.end()};
}

void ExperimentConfig::validate() const {
    if (schema_version != 1)
        throw contract_error("schema_version " + std::to_string(schema_version) +
                             " is not supported (expected 1)");
    if (name.empty()) throw contract_error("name must not be empty");
    if (output_dir.empty()) throw contract_error("output_dir must not be empty");
    if (trials < 1) throw contract_error("trials must be at least 1");

    if (dataset.kind == "blobs" || dataset.kind == "shells") {
        if (dataset.classes < 2) throw contract_error("dataset.classes must be at least 2");
        if (dataset.per_class == 0) throw contract_error("dataset.per_class must be positive");
        if (dataset.input_dim == 0) throw contract_error("dataset.input_dim must be positive");
    } else if (dataset.kind == "csv") {
        if (dataset.path.empty()) throw contract_error("dataset.path required for csv");
    } else if (dataset.kind == "idx") {
        if (dataset.path.empty() || dataset.labels_path.empty())
            throw contract_error("dataset.path and dataset.labels_path required for idx");
    } else {
        throw contract_error("dataset.kind '" + dataset.kind + "' unknown");
    }

    validate_specs(architecture.layers);
    if (architecture.split_index == 0 || architecture.split_index >= architecture.layers.size())
        throw contract_error("architecture.split_index outside the layer list");

    if (train.epochs < 0) throw contract_error("train.epochs must be non-negative");
    if (train.batch_size == 0) throw contract_error("train.batch_size must be positive");

    if (defenses.empty()) throw contract_error("defenses must not be empty");
    for (const DefenseSweep& d : defenses) {
        if (d.defense == Defense::vanilla) {
            if (!d.values.empty())
                throw contract_error("vanilla defense takes no sweep values");
            continue;
        }
        if (d.values.empty())
            throw contract_error(std::string(defense_name(d.defense)) +
                                 " defense needs sweep values");
        for (std::size_t i = 0; i < d.values.size(); ++i) {
            if (d.values[i] <= 0.0)
                throw contract_error("sweep values must be positive");
            if (i > 0 && d.values[i] <= d.values[i - 1])
                throw contract_error("sweep values must be strictly increasing");
        }
        if (d.defense == Defense::label_dp)
            for (double v : d.values)
                if (v > 1.0) throw contract_error("flip ratios must be at most 1");
    }

    for (std::size_t i = 0; i < attacks.k_values.size(); ++i) {
        if (attacks.k_values[i] < 1) throw contract_error("attack k values must be positive");
        if (i > 0 && attacks.k_values[i] <= attacks.k_values[i - 1])
            throw contract_error("attack k values must be strictly increasing");
    }
    if (attacks.fine_tune && attacks.k_values.empty())
        throw contract_error("fine_tune attack needs k values");
    if (attacks.restarts < 1) throw contract_error("attack restarts must be positive");
    if (attacks.max_epochs < 1) throw contract_error("attack max_epochs must be positive");
}

namespace {

json parse_with_diag(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t stop = e.byte > 0 ? std::min<std::size_t>(e.byte - 1, text.size())
                                            : 0;
        for (std::size_t i = 0; i < stop; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        std::ostringstream os;
        os << "config line " << line << " column " << col << ": " << e.what();
        throw parse_error(os.str());
    }
}

LayerSpec parse_layer(const json& j, std::size_t idx) {
    const std::string where = "architecture.layers[" + std::to_string(idx) + "]";
    if (!j.is_object() || !j.contains("type"))
        throw contract_error(where + " needs a type field");
    const std::string type = j.at("type").get<std::string>();
    if (type == "dense") {
        if (!j.contains("in") || !j.contains("out"))
            throw contract_error(where + " dense needs in and out");
        return LayerSpec::dense(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
    }
    if (type == "leaky_relu") return LayerSpec::leaky(j.value("slope", 0.01));
    if (type == "tanh") return LayerSpec::tanh();
    if (type == "layer_norm") return LayerSpec::norm();
    throw contract_error(where + " has unknown type '" + type + "'");
}

json layer_to_json(const LayerSpec& s) {
    json j;
    switch (s.kind) {
    case LayerSpec::Kind::dense:
        j["type"] = "dense";
        j["in"] = s.in_dim;
        j["out"] = s.out_dim;
        break;
    case LayerSpec::Kind::activation:
        if (s.act == ActKind::leaky_relu) {
            j["type"] = "leaky_relu";
            j["slope"] = s.slope;
        } else {
            j["type"] = "tanh";
        }
        break;
    case LayerSpec::Kind::layer_norm: j["type"] = "layer_norm"; break;
    }
    return j;
}

} // namespace

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
    const json j = parse_with_diag(text);
    if (!j.is_object()) throw contract_error("config root must be an object");

    ExperimentConfig c;
    c.schema_version = j.value("schema_version", 1);
    c.name = j.value("name", std::string("experiment"));
    c.trials = j.value("trials", 3);
    c.seed = j.value("seed", std::uint64_t{0});
    c.output_dir = j.value("output_dir", std::string("out"));

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        c.dataset.kind = d.value("kind", std::string("blobs"));
        c.dataset.classes = d.value("classes", 4);
        c.dataset.input_dim = d.value("input_dim", std::size_t{16});
        c.dataset.per_class = d.value("per_class", std::size_t{725});
        c.dataset.center_scale = d.value("center_scale", 4.0);
        c.dataset.noise_sigma = d.value("noise_sigma", 0.7);
        c.dataset.seed = d.value("seed", std::uint64_t{1});
        c.dataset.path = d.value("path", std::string());
        c.dataset.labels_path = d.value("labels_path", std::string());
        c.dataset.label_column = d.value("label_column", std::string("label"));
        c.dataset.verify = d.value("verify", true);
        if (d.contains("split")) {
            const json& s = d.at("split");
            SplitSizes sizes;
            sizes.train = s.value("train", std::size_t{0});
            sizes.val = s.value("val", std::size_t{0});
            sizes.test = s.value("test", std::size_t{0});
            c.dataset.split = sizes;
        }
    }

    if (!j.contains("architecture"))
        throw contract_error("config needs an architecture section");
    const json& a = j.at("architecture");
    if (!a.contains("layers") || !a.at("layers").is_array())
        throw contract_error("architecture.layers must be an array");
    std::size_t li = 0;
    for (const json& lj : a.at("layers")) c.architecture.layers.push_back(parse_layer(lj, li++));
    c.architecture.split_index = a.value("split_index", std::size_t{0});

    if (j.contains("train")) {
        const json& t = j.at("train");
        c.train.epochs = t.value("epochs", 100);
        c.train.batch_size = t.value("batch_size", std::size_t{64});
        c.train.adam.lr = t.value("lr", 1e-3);
        c.train.adam.beta1 = t.value("beta1", 0.9);
        c.train.adam.beta2 = t.value("beta2", 0.999);
        c.train.adam.eps = t.value("eps", 1e-8);
    }

    if (j.contains("defenses")) {
        for (const json& dj : j.at("defenses")) {
            DefenseSweep sweep;
            if (!dj.contains("kind")) throw contract_error("each defense needs a kind");
            sweep.defense = defense_from_name(dj.at("kind").get<std::string>());
            if (dj.contains("values"))
                sweep.values = dj.at("values").get<std::vector<double>>();
            c.defenses.push_back(std::move(sweep));
        }
    } else {
        c.defenses.push_back(DefenseSweep{});
    }

    if (j.contains("attacks")) {
        const json& at = j.at("attacks");
        c.attacks.fine_tune = at.value("fine_tune", true);
        c.attacks.cluster = at.value("cluster", true);
        if (at.contains("k_values"))
            c.attacks.k_values = at.at("k_values").get<std::vector<int>>();
        c.attacks.restarts = at.value("restarts", 1);
        c.attacks.max_epochs = at.value("max_epochs", 1000);
        c.attacks.stop_train_error = at.value("stop_train_error", 0.01);
    }

    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open config: " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return from_json_text(os.str());
}

std::string ExperimentConfig::canonical_text() const {
    // output_dir stays out: where results land is not part of the
    // experiment's identity, so --out overrides keep the hash stable.
    json j;
    j["schema_version"] = schema_version;
    j["name"] = name;
    j["trials"] = trials;
    j["seed"] = seed;
    json d;
    d["kind"] = dataset.kind;
    d["classes"] = dataset.classes;
    d["input_dim"] = dataset.input_dim;
    d["per_class"] = dataset.per_class;
    d["center_scale"] = dataset.center_scale;
    d["noise_sigma"] = dataset.noise_sigma;
    d["seed"] = dataset.seed;
    d["path"] = dataset.path;
    d["labels_path"] = dataset.labels_path;
    d["label_column"] = dataset.label_column;
    d["verify"] = dataset.verify;
    if (dataset.split) {
        d["split"] = {{"train", dataset.split->train},
                      {"val", dataset.split->val},
                      {"test", dataset.split->test}};
    }
    j["dataset"] = d;
    json layers = json::array();
    for (const LayerSpec& s : architecture.layers) layers.push_back(layer_to_json(s));
    j["architecture"] = {{"layers", layers}, {"split_index", architecture.split_index}};
    j["train"] = {{"epochs", train.epochs},   {"batch_size", train.batch_size},
                  {"lr", train.adam.lr},      {"beta1", train.adam.beta1},
                  {"beta2", train.adam.beta2}, {"eps", train.adam.eps}};
    json defs = json::array();
    for (const DefenseSweep& sweep : defenses)
        defs.push_back({{"kind", defense_name(sweep.defense)}, {"values", sweep.values}});
    j["defenses"] = defs;
    j["attacks"] = {{"fine_tune", attacks.fine_tune},
                    {"cluster", attacks.cluster},
                    {"k_values", attacks.k_values},
                    {"restarts", attacks.restarts},
                    {"max_epochs", attacks.max_epochs},
                    {"stop_train_error", attacks.stop_train_error}};
    return j.dump();
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char b : text) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a64(canonical_text()); }

namespace {

struct Cell {
    std::size_t defense_idx;
    std::size_t value_idx;
    int trial;
};

struct AttackOutcome {
    AttackKind kind;
    int leaked_k;
    double accuracy;
    double baseline;
};

struct CellOutput {
    Cell cell{};
    std::uint64_t run_seed = 0;
    std::string status = "ok";
    int epochs_run = 0;
    int best_epoch = 0;
    double test_accuracy = 0.0;
    std::vector<AttackOutcome> attacks;
};

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double sweep_value(const DefenseSweep& sweep, std::size_t value_idx) {
    return sweep.defense == Defense::vanilla ? 0.0 : sweep.values[value_idx];
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
    config.validate();
    if (jobs < 1) throw contract_error("run_experiment: jobs must be positive");

    const Dataset data = config.dataset.build();
    if (data.test.empty()) throw contract_error("run_experiment: test partition is empty");
    const Tensor test_x = data.gather_x(data.test);
    const std::vector<int> test_y = data.gather_y(data.test);

    const std::uint64_t hash = config.config_hash();
    const std::string hash_str = hash_hex(hash);

    std::vector<Cell> cells;
    for (std::size_t d = 0; d < config.defenses.size(); ++d) {
        const std::size_t value_count =
            config.defenses[d].defense == Defense::vanilla ? 1 : config.defenses[d].values.size();
        for (std::size_t v = 0; v < value_count; ++v)
            for (int t = 0; t < config.trials; ++t) cells.push_back(Cell{d, v, t});
    }

    const std::filesystem::path out_dir = config.output_dir;
    const std::filesystem::path ckpt_dir = out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);

    auto run_cell = [&](const Cell& cell) -> CellOutput {
        const DefenseSweep& sweep = config.defenses[cell.defense_idx];
        const double value = sweep_value(sweep, cell.value_idx);

        CellOutput out;
        out.cell = cell;
        std::uint64_t s = mix64(config.seed ^ 0xce11ULL);
        s = mix64(s ^ (cell.defense_idx + 1));
        s = mix64(s ^ (cell.value_idx + 1));
        s = mix64(s ^ static_cast<std::uint64_t>(cell.trial + 1));
        out.run_seed = s;

        LossConfig loss;
        loss.defense = sweep.defense;
        if (sweep.defense == Defense::pe || sweep.defense == Defense::dcor) loss.alpha = value;
        if (sweep.defense == Defense::label_dp) loss.flip_ratio = value;

        const SplitModel model0 = SplitModel::build(
            config.architecture.layers, config.architecture.split_index, mix64(s ^ 0x30de1ULL));

        TrainRunResult trained;
        try {
            trained = split_train(model0, data, loss, config.train, s);
        } catch (const divergence_error&) {
            out.status = "diverged";
            return out;
        }
        out.epochs_run = trained.epochs_run;
        out.best_epoch = trained.best_epoch;
        out.test_accuracy = accuracy(trained.model.forward(nullptr, test_x), test_y);

        std::ostringstream name;
        name << defense_name(sweep.defense) << '_' << fmt_num(value) << "_t" << cell.trial
             << ".ckpt";
        save_checkpoint(trained.model, ckpt_dir / name.str(),
                        {{"config_hash", hash_str},
                         {"defense", defense_name(sweep.defense)},
                         {"value", fmt_num(value)},
                         {"trial", std::to_string(cell.trial)},
                         {"run_seed", std::to_string(s)}});

        if (config.attacks.fine_tune) {
            for (int k : config.attacks.k_values) {
                AttackConfig ac;
                ac.leaked_k = k;
                ac.max_epochs = config.attacks.max_epochs;
                ac.stop_train_error = config.attacks.stop_train_error;
                ac.restarts = config.attacks.restarts;
                ac.seed = mix64(s ^ mix64(0xa11acULL + static_cast<std::uint64_t>(k)));
                const auto leak = sample_leak(
                    data, LeakSpec{k, mix64(s ^ mix64(0x1ea7ULL + static_cast<std::uint64_t>(k)))});
                const AttackReport rep =
                    fine_tuning_attack(trained.model, config.architecture.top_layers(),
                                       leak.first, leak.second, test_x, test_y, ac);
                AttackConfig bc = ac;
                bc.seed = mix64(s ^ mix64(0x5c4a7ULL + static_cast<std::uint64_t>(k)));
                const AttackReport base = scratch_baseline(config.architecture.layers, leak.first,
                                                           leak.second, test_x, test_y, bc);
                out.attacks.push_back(
                    AttackOutcome{AttackKind::fine_tune, k, rep.accuracy, base.accuracy});
            }
        }
        if (config.attacks.cluster) {
            const AttackReport rep =
                clustering_attack(&trained.model, test_x, test_y, data.num_classes,
                                  config.attacks.restarts, mix64(s ^ 0xc105ULL));
            const AttackReport base =
                clustering_attack(nullptr, test_x, test_y, data.num_classes,
                                  config.attacks.restarts, mix64(s ^ 0xba5eULL));
            out.attacks.push_back(
                AttackOutcome{AttackKind::cluster, 0, rep.accuracy, base.accuracy});
        }
        return out;
    };

    std::vector<CellOutput> outputs(cells.size());
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                outputs[i] = run_cell(cells[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                return;
            }
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    ExperimentResult result;
    result.checkpoint_dir = ckpt_dir;
    result.long_csv = out_dir / "results.csv";
    result.summary_csv = out_dir / "summary.csv";

    CsvTable& longt = result.long_table;
    longt.columns = {"config_hash", "dataset",       "defense",
                     "value",       "trial",         "seed",
                     "status",      "epochs_run",    "best_epoch",
                     "test_accuracy", "attack",      "leaked_k",
                     "attack_accuracy", "baseline_accuracy", "advantage"};
    for (const CellOutput& out : outputs) {
        const DefenseSweep& sweep = config.defenses[out.cell.defense_idx];
        const std::string defense = defense_name(sweep.defense);
        const std::string value = fmt_num(sweep_value(sweep, out.cell.value_idx));
        const std::string trial = std::to_string(out.cell.trial);
        const std::string seed = std::to_string(out.run_seed);
        const bool ok = out.status == "ok";
        longt.add_row({hash_str, data.name, defense, value, trial, seed, out.status,
                       ok ? std::to_string(out.epochs_run) : "",
                       ok ? std::to_string(out.best_epoch) : "",
                       ok ? fmt_num(out.test_accuracy) : "", "none", "", "", "", ""});
        for (const AttackOutcome& a : out.attacks) {
            longt.add_row({hash_str, data.name, defense, value, trial, seed, out.status,
                           std::to_string(out.epochs_run), std::to_string(out.best_epoch),
                           fmt_num(out.test_accuracy), attack_kind_name(a.kind),
                           std::to_string(a.leaked_k), fmt_num(a.accuracy), fmt_num(a.baseline),
                           fmt_num(a.accuracy - a.baseline)});
        }
    }
    longt.sort_rows();
    longt.write(result.long_csv);

    CsvTable& sum = result.summary_table;
    sum.columns = {"config_hash",        "dataset",
                   "defense",            "value",
                   "attack",             "leaked_k",
                   "trials_total",       "trials_diverged",
                   "test_accuracy_mean", "test_accuracy_std",
                   "attack_accuracy_mean", "attack_accuracy_std",
                   "baseline_accuracy_mean", "advantage_mean"};
    bool any_cell_all_diverged = false;
    for (std::size_t d = 0; d < config.defenses.size(); ++d) {
        const DefenseSweep& sweep = config.defenses[d];
        const std::size_t value_count =
            sweep.defense == Defense::vanilla ? 1 : sweep.values.size();
        for (std::size_t v = 0; v < value_count; ++v) {
            std::vector<const CellOutput*> group;
            int diverged = 0;
            for (const CellOutput& out : outputs) {
                if (out.cell.defense_idx != d || out.cell.value_idx != v) continue;
                if (out.status == "ok")
                    group.push_back(&out);
                else
                    ++diverged;
            }
            const std::string defense = defense_name(sweep.defense);
            const std::string value = fmt_num(sweep_value(sweep, v));
            const std::string total = std::to_string(config.trials);
            const std::string div = std::to_string(diverged);
            if (group.empty()) any_cell_all_diverged = true;

            std::vector<double> test_accs;
            for (const CellOutput* out : group) test_accs.push_back(out->test_accuracy);
            const std::string tmean = group.empty() ? "" : fmt_num(mean_of(test_accs));
            const std::string tstd = group.empty() ? "" : fmt_num(std_of(test_accs));
            sum.add_row({hash_str, data.name, defense, value, "none", "", total, div, tmean,
                         tstd, "", "", "", ""});

            if (!group.empty()) {
                // attack grids are identical across trials of a cell
                for (std::size_t ai = 0; ai < group.front()->attacks.size(); ++ai) {
                    std::vector<double> accs, bases, advs;
                    for (const CellOutput* out : group) {
                        const AttackOutcome& a = out->attacks[ai];
                        accs.push_back(a.accuracy);
                        bases.push_back(a.baseline);
                        advs.push_back(a.accuracy - a.baseline);
                    }
                    const AttackOutcome& proto = group.front()->attacks[ai];
                    sum.add_row({hash_str, data.name, defense, value,
                                 attack_kind_name(proto.kind), std::to_string(proto.leaked_k),
                                 total, div, tmean, tstd, fmt_num(mean_of(accs)),
                                 fmt_num(std_of(accs)), fmt_num(mean_of(bases)),
                                 fmt_num(mean_of(advs))});
                }
            }
        }
    }
    sum.sort_rows();
    sum.write(result.summary_csv);

    result.exit_code = any_cell_all_diverged ? 2 : 0;
    return result;
}

} // namespace splitlab
