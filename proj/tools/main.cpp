#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitlab/attacks.hpp"
#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/experiment.hpp"
#include "splitlab/model.hpp"
#include "splitlab/protocol.hpp"
#include "splitlab/report.hpp"
#include "splitlab/rng.hpp"
#include "splitlab/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splitlab;

namespace {

std::string load_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open config: " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

json parse_with_diag(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t stop = e.byte > 0 ? std::min<std::size_t>(e.byte - 1, text.size()) : 0;
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

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

LossConfig loss_for(const DefenseSweep& sweep, double value) {
    LossConfig loss;
    loss.defense = sweep.defense;
    if (sweep.defense == Defense::pe || sweep.defense == Defense::dcor) loss.alpha = value;
    if (sweep.defense == Defense::label_dp) loss.flip_ratio = value;
    return loss;
}

int run_train(const ExperimentConfig& cfg) {
    const Dataset data = cfg.dataset.build();
    const DefenseSweep& sweep = cfg.defenses.front();
    const double value = sweep.defense == Defense::vanilla ? 0.0 : sweep.values.front();

    const SplitModel m0 = SplitModel::build(cfg.architecture.layers, cfg.architecture.split_index,
                                            mix64(cfg.seed ^ 0x30de1ULL));
    PartyChannel channel(m0.embedding_dim());
    const TrainRunResult res = split_train(m0, data, loss_for(sweep, value), cfg.train, cfg.seed,
                                           &channel);

    const fs::path out = cfg.output_dir;
    fs::create_directories(out);
    save_checkpoint(res.model, out / "model.ckpt",
                    {{"config_hash", hash_hex(cfg.config_hash())},
                     {"defense", defense_name(sweep.defense)},
                     {"value", fmt_num(value)},
                     {"seed", std::to_string(cfg.seed)}});
    channel.write_transcript(out / "transcript.bin");

    CsvTable hist;
    hist.columns = {"epoch", "train_loss", "val_accuracy"};
    for (const EpochMetrics& m : res.history)
        hist.add_row({std::to_string(m.epoch), fmt_num(m.train_loss), fmt_num(m.val_accuracy)});
    hist.write(out / "history.csv");

    double test_acc = 0.0;
    if (!data.test.empty())
        test_acc = accuracy(res.model.forward(nullptr, data.gather_x(data.test)),
                            data.gather_y(data.test));
    std::cout << "trained " << defense_name(sweep.defense) << " value=" << fmt_num(value)
              << " epochs=" << res.epochs_run << " best_epoch=" << res.best_epoch
              << " val=" << fmt_num(res.best_val_accuracy) << " test=" << fmt_num(test_acc)
              << '\n';
    std::cout << "selection: " << res.selection_rule << '\n';
    std::cout << "wrote " << (out / "model.ckpt").string() << ", history.csv, transcript.bin\n";
    return 0;
}

int run_attack(const ExperimentConfig& cfg) {
    const Dataset data = cfg.dataset.build();
    if (data.test.empty()) throw contract_error("attack needs a test partition");
    const Tensor test_x = data.gather_x(data.test);
    const std::vector<int> test_y = data.gather_y(data.test);

    std::vector<std::pair<std::string, std::string>> meta;
    const fs::path out = cfg.output_dir;
    const SplitModel victim = load_checkpoint(out / "model.ckpt", &meta);
    std::string defense = "vanilla", value = "0";
    for (const auto& [k, v] : meta) {
        if (k == "defense") defense = v;
        if (k == "value") value = v;
    }

    std::vector<AttackRow> rows;
    if (cfg.attacks.fine_tune) {
        for (int k : cfg.attacks.k_values) {
            AttackConfig ac;
            ac.leaked_k = k;
            ac.max_epochs = cfg.attacks.max_epochs;
            ac.stop_train_error = cfg.attacks.stop_train_error;
            ac.restarts = cfg.attacks.restarts;
            ac.seed = mix64(cfg.seed ^ mix64(0xa11acULL + static_cast<std::uint64_t>(k)));
            const auto leak = sample_leak(
                data,
                LeakSpec{k, mix64(cfg.seed ^ mix64(0x1ea7ULL + static_cast<std::uint64_t>(k)))});
            const AttackReport rep =
                fine_tuning_attack(victim, cfg.architecture.top_layers(), leak.first, leak.second,
                                   test_x, test_y, ac);
            AttackConfig bc = ac;
            bc.seed = mix64(cfg.seed ^ mix64(0x5c4a7ULL + static_cast<std::uint64_t>(k)));
            const AttackReport base = scratch_baseline(cfg.architecture.layers, leak.first,
                                                       leak.second, test_x, test_y, bc);
            rows.push_back(AttackRow{data.name, defense, std::stod(value), AttackKind::fine_tune,
                                     k, ac.seed, rep.accuracy, base.accuracy,
                                     rep.accuracy - base.accuracy});
        }
    }
    if (cfg.attacks.cluster) {
        const std::uint64_t cs = mix64(cfg.seed ^ 0xc105ULL);
        const AttackReport rep =
            clustering_attack(&victim, test_x, test_y, data.num_classes, cfg.attacks.restarts, cs);
        const AttackReport base =
            clustering_attack(nullptr, test_x, test_y, data.num_classes, cfg.attacks.restarts,
                              mix64(cfg.seed ^ 0xba5eULL));
        rows.push_back(AttackRow{data.name, defense, std::stod(value), AttackKind::cluster, 0, cs,
                                 rep.accuracy, base.accuracy, rep.accuracy - base.accuracy});
    }

    std::vector<std::string> lines;
    for (const AttackRow& r : rows) lines.push_back(attack_csv_row(r));
    std::sort(lines.begin(), lines.end());

    std::ofstream f(out / "attacks.csv", std::ios::binary);
    if (!f) throw io_error("cannot open csv for writing: " + (out / "attacks.csv").string());
    f << attack_csv_header() << '\n';
    std::cout << attack_csv_header() << '\n';
    for (const std::string& line : lines) {
        f << line << '\n';
        std::cout << line << '\n';
    }
    std::cout << "wrote " << (out / "attacks.csv").string() << '\n';
    return 0;
}

int run_eval(const ExperimentConfig& cfg) {
    const Dataset data = cfg.dataset.build();
    if (data.test.empty()) throw contract_error("eval needs a test partition");
    const Tensor test_x = data.gather_x(data.test);
    const std::vector<int> test_y = data.gather_y(data.test);

    const fs::path out = cfg.output_dir;
    const SplitModel model = load_checkpoint(out / "model.ckpt");
    const double acc = accuracy(model.forward(nullptr, test_x), test_y);
    const Tensor z = model.forward_bottom(nullptr, test_x);
    const AngularHistogram hist = angular_distance_histogram(z, test_y, 36);
    write_histogram_csv(hist, out / "histogram.csv");

    CsvTable t;
    t.columns = {"dataset", "test_accuracy", "median_same", "median_diff", "pairs"};
    t.add_row({data.name, fmt_num(acc), fmt_num(hist.median_same), fmt_num(hist.median_diff),
               std::to_string(hist.pair_count)});
    t.write(out / "eval.csv");

    std::cout << "test accuracy " << fmt_num(acc) << '\n';
    std::cout << "median same-class angle " << fmt_num(hist.median_same)
              << ", median cross-class angle " << fmt_num(hist.median_diff) << '\n';
    std::cout << "wrote " << (out / "eval.csv").string() << ", histogram.csv\n";
    return 0;
}

int run_sweep(const ExperimentConfig& cfg, int jobs) {
    const ExperimentResult res = run_experiment(cfg, jobs);
    std::cout << "wrote " << res.long_csv.string() << '\n';
    std::cout << "wrote " << res.summary_csv.string() << '\n';
    std::cout << "checkpoints in " << res.checkpoint_dir.string() << '\n';
    if (res.exit_code != 0)
        std::cerr << "some sweep cells diverged on every trial; see the status column\n";
    return res.exit_code;
}

int run_theory(const std::string& config_path, std::optional<std::uint64_t> seed,
               std::optional<std::string> out_override) {
    const json j = parse_with_diag(load_text(config_path));
    if (!j.is_object()) throw contract_error("theory config root must be an object");
    const bool all =
        !j.contains("particles") && !j.contains("halfspace") && !j.contains("scaling");
    const fs::path out = out_override.value_or(j.value("output_dir", std::string("out")));
    fs::create_directories(out);

    if (all || j.contains("particles")) {
        const json p = j.value("particles", json::object());
        ParticleConfig pc;
        pc.n = p.value("n", std::size_t{128});
        const std::size_t dim = p.value("dim", std::size_t{3});
        const std::string region = p.value("region", std::string("ball"));
        if (region == "ball")
            pc.region = Region::ball(dim, p.value("radius", 1.0));
        else if (region == "box")
            pc.region = Region::box(dim, p.value("side", 2.0));
        else
            throw contract_error("particles.region must be ball or box");
        pc.step = p.value("step", 1e-4);
        pc.iterations = p.value("iterations", 2000);
        pc.seed = seed.value_or(p.value("seed", std::uint64_t{0}));
        const double tol = p.value("tol", 0.05);

        const ParticleResult res = minimize_potential_energy(pc);
        const double mass = border_mass(res.positions, pc.region, tol);

        CsvTable trace;
        trace.columns = {"iteration", "pe"};
        for (std::size_t i = 0; i < res.pe_trace.size(); ++i)
            trace.add_row({std::to_string(i + 1), fmt_num(res.pe_trace[i])});
        trace.write(out / "pe_trace.csv");

        CsvTable pos;
        pos.columns = {"index"};
        for (std::size_t d = 0; d < dim; ++d) pos.columns.push_back("x" + std::to_string(d));
        for (std::size_t i = 0; i < pc.n; ++i) {
            std::vector<std::string> row{std::to_string(i)};
            for (std::size_t d = 0; d < dim; ++d)
                row.push_back(fmt_num(res.positions[i * dim + d]));
            pos.add_row(std::move(row));
        }
        pos.write(out / "positions.csv");

        CsvTable mass_t;
        mass_t.columns = {"n",   "dim",         "region",   "extent",   "tol",
                          "border_mass", "final_pe", "converged", "iterations_run"};
        mass_t.add_row({std::to_string(pc.n), std::to_string(dim), region,
                        fmt_num(pc.region.half_extent()), fmt_num(tol), fmt_num(mass),
                        fmt_num(res.final_pe), res.converged ? "1" : "0",
                        std::to_string(res.iterations_run)});
        mass_t.write(out / "border_mass.csv");
        std::cout << "particles: n=" << pc.n << " dim=" << dim << " border_mass=" << fmt_num(mass)
                  << " final_pe=" << fmt_num(res.final_pe)
                  << (res.converged ? "" : " (not converged)") << '\n';
    }

    if (all || j.contains("halfspace")) {
        const json h = j.value("halfspace", json::object());
        GenErrorConfig gc;
        const std::string density = h.value("density", std::string("sphere"));
        if (density == "sphere")
            gc.density = DensityKind::uniform_sphere;
        else if (density == "box")
            gc.density = DensityKind::uniform_box;
        else
            throw contract_error("halfspace.density must be sphere or box");
        gc.dim = h.value("dim", std::size_t{3});
        gc.lo = h.value("lo", -1.0);
        gc.hi = h.value("hi", 1.0);
        gc.samples = h.value("samples", std::size_t{100000});
        gc.seed = seed.value_or(h.value("seed", std::uint64_t{0}));
        const std::vector<double> epsilons =
            h.value("epsilons", std::vector<double>{0.02, 0.05, 0.1});

        CsvTable t;
        t.columns = {"density", "dim", "epsilon", "samples", "measured_r", "bound", "p1_zero"};
        for (double eps : epsilons) {
            gc.epsilon = eps;
            const GenErrorResult res = generalization_error_mc(gc);
            t.add_row({density, std::to_string(gc.dim), fmt_num(eps),
                       std::to_string(gc.samples), fmt_num(res.measured_r), fmt_num(res.bound),
                       fmt_num(res.p1_zero)});
            std::cout << "halfspace: epsilon=" << fmt_num(eps) << " measured_r="
                      << fmt_num(res.measured_r) << " bound=" << fmt_num(res.bound) << '\n';
        }
        t.write(out / "gen_error.csv");
    }

    if (all || j.contains("scaling")) {
        const json s = j.value("scaling", json::object());
        ScalingConfig sc;
        sc.dim = s.value("dim", std::size_t{3});
        sc.sample_sizes =
            s.value("sample_sizes", std::vector<std::size_t>{8, 16, 32, 64, 128});
        sc.trials = s.value("trials", 2000);
        sc.seed = seed.value_or(s.value("seed", std::uint64_t{0}));
        const std::string shape = s.value("shape", std::string("uniform"));
        if (shape == "uniform")
            sc.shape = HemisphereShape::uniform;
        else if (shape == "boundary")
            sc.shape = HemisphereShape::boundary;
        else if (shape == "pole")
            sc.shape = HemisphereShape::pole;
        else
            throw contract_error("scaling.shape must be uniform, boundary, or pole");

        const ScalingResult res = sampling_error_scaling(sc);
        CsvTable t;
        t.columns = {"shape", "dim", "trials", "samples", "mean_sq_eps", "slope"};
        for (std::size_t i = 0; i < sc.sample_sizes.size(); ++i)
            t.add_row({shape, std::to_string(sc.dim), std::to_string(sc.trials),
                       std::to_string(sc.sample_sizes[i]), fmt_num(res.mean_sq_eps[i]),
                       fmt_num(res.slope)});
        t.write(out / "scaling.csv");
        std::cout << "scaling: shape=" << shape << " slope=" << fmt_num(res.slope) << '\n';
    }

    std::cout << "wrote theory tables to " << out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"split learning label privacy laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::uint64_t seed_override = 0;
    int jobs = 1;
    std::string summary_path;

    CLI::App* train_cmd = app.add_subcommand(
        "train", "train one split model (first defense, first sweep value) and checkpoint it");
    CLI::App* attack_cmd = app.add_subcommand(
        "attack", "run the attack grid against the checkpoint in the output directory");
    CLI::App* eval_cmd = app.add_subcommand(
        "eval", "test accuracy and angular label-distance histogram for the checkpoint");
    CLI::App* theory_cmd =
        app.add_subcommand("theory", "particle minimizer, halfspace bound, and scaling tables");
    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "full defense sweep with attacks, CSVs, and checkpoints");
    CLI::App* plot_cmd =
        app.add_subcommand("plot", "utility/leakage tradeoff SVG from a sweep summary CSV");

    for (CLI::App* cmd : {train_cmd, attack_cmd, eval_cmd, theory_cmd, sweep_cmd}) {
        cmd->add_option("--config", config_path, "JSON config path")->required();
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("--out", out_override, "override the output directory");
    }
    sweep_cmd->add_option("--jobs", jobs, "worker threads for sweep cells");
    plot_cmd->add_option("summary", summary_path, "sweep summary CSV")->required();
    plot_cmd->add_option("--out", out_override, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (plot_cmd->parsed()) {
            const fs::path out = out_override.empty() ? fs::path(".") : fs::path(out_override);
            fs::create_directories(out);
            emit_tradeoff_plot(summary_path, out / "tradeoff.svg");
            std::cout << "wrote " << (out / "tradeoff.svg").string() << '\n';
            return 0;
        }
        if (theory_cmd->parsed()) {
            std::optional<std::uint64_t> seed;
            if (theory_cmd->count("--seed")) seed = seed_override;
            std::optional<std::string> out;
            if (theory_cmd->count("--out")) out = out_override;
            return run_theory(config_path, seed, out);
        }

        ExperimentConfig cfg = ExperimentConfig::from_json_file(config_path);
        CLI::App* active = app.get_subcommands().front();
        if (active->count("--seed")) cfg.seed = seed_override;
        if (active->count("--out")) cfg.output_dir = out_override;

        if (train_cmd->parsed()) return run_train(cfg);
        if (attack_cmd->parsed()) return run_attack(cfg);
        if (eval_cmd->parsed()) return run_eval(cfg);
        if (sweep_cmd->parsed()) return run_sweep(cfg, jobs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
