#include "splitlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "splitlab/errors.hpp"
#include "splitlab/evaluation.hpp"
#include "splitlab/rng.hpp"

namespace splitlab {

const char* attack_kind_name(AttackKind kind) {
    switch (kind) {
    case AttackKind::fine_tune: return "fine_tune";
    case AttackKind::cluster: return "cluster";
    case AttackKind::scratch: return "scratch";
    }
    throw contract_error("attack_kind_name: unknown kind");
}

namespace {

void check_pair(const Tensor& x, const std::vector<int>& y, const char* what) {
    if (x.rows() != y.size()) {
        std::ostringstream os;
        os << what << ": " << x.rows() << " rows but " << y.size() << " labels";
        throw shape_error(os.str());
    }
    if (y.empty()) throw contract_error(std::string(what) + ": empty sample set");
}

// Full-batch Adam until the train error drops below the stop threshold or the
// epoch budget runs out.
void train_until(SplitModel& model, const Tensor& x, const std::vector<int>& y,
                 const AttackConfig& cfg) {
    Adam opt(model.parameters(), cfg.adam);
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Tape tape;
        Tensor logits = model.forward(&tape, x);
        if (1.0 - accuracy(logits, y) < cfg.stop_train_error) break;
        Tensor loss = softmax_cross_entropy(&tape, logits, y);
        opt.zero_grad();
        tape.backward(loss);
        opt.step();
    }
}

void mean_init_single_dense(SplitModel& top, const Tensor& z, const std::vector<int>& y) {
    const std::size_t d = z.cols();
    const std::size_t classes = top.weight(0).cols();
    std::vector<double> sums(classes * d, 0.0);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto c = static_cast<std::size_t>(y[i]);
        for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += z.at(i, j);
        ++counts[c];
    }
    std::vector<double>& w = top.weight(0).values();
    for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] == 0) continue;
        for (std::size_t j = 0; j < d; ++j)
            w[j * classes + c] = sums[c * d + j] / static_cast<double>(counts[c]);
    }
    std::fill(top.bias(0).values().begin(), top.bias(0).values().end(), 0.0);
}

} // namespace

AttackReport fine_tuning_attack(const SplitModel& victim,
                                const std::vector<LayerSpec>& top_arch,
                                const Tensor& leak_x, const std::vector<int>& leak_y,
                                const Tensor& test_x, const std::vector<int>& test_y,
                                const AttackConfig& cfg) {
    check_pair(leak_x, leak_y, "fine_tuning_attack leak set");
    check_pair(test_x, test_y, "fine_tuning_attack test set");
    if (cfg.restarts < 1) throw contract_error("fine_tuning_attack: restarts must be positive");

    const Tensor z_leak = victim.forward_bottom(nullptr, leak_x);
    const Tensor z_test = victim.forward_bottom(nullptr, test_x);
    const bool single_dense =
        top_arch.size() == 1 && top_arch.front().kind == LayerSpec::Kind::dense;

    AttackReport report;
    report.kind = AttackKind::fine_tune;
    report.leaked_k = cfg.leaked_k;
    report.seed = cfg.seed;
    Rng seeder(cfg.seed);
    for (int r = 0; r < cfg.restarts; ++r) {
        SplitModel top = SplitModel::build_plain(top_arch, seeder.fork(r));
        if (single_dense) mean_init_single_dense(top, z_leak, leak_y);
        train_until(top, z_leak, leak_y, cfg);
        report.accuracies.push_back(accuracy(top.forward(nullptr, z_test), test_y));
    }
    report.accuracy = std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) /
                      static_cast<double>(report.accuracies.size());
    return report;
}

AttackReport scratch_baseline(const std::vector<LayerSpec>& full_arch,
                              const Tensor& leak_x, const std::vector<int>& leak_y,
                              const Tensor& test_x, const std::vector<int>& test_y,
                              const AttackConfig& cfg) {
    check_pair(leak_x, leak_y, "scratch_baseline leak set");
    check_pair(test_x, test_y, "scratch_baseline test set");
    if (cfg.restarts < 1) throw contract_error("scratch_baseline: restarts must be positive");

    AttackReport report;
    report.kind = AttackKind::scratch;
    report.leaked_k = cfg.leaked_k;
    report.seed = cfg.seed;
    Rng seeder(cfg.seed);
    for (int r = 0; r < cfg.restarts; ++r) {
        SplitModel model = SplitModel::build_plain(full_arch, seeder.fork(r));
        train_until(model, leak_x, leak_y, cfg);
        report.accuracies.push_back(accuracy(model.forward(nullptr, test_x), test_y));
    }
    report.accuracy = std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) /
                      static_cast<double>(report.accuracies.size());
    return report;
}

namespace {

double sq_dist(const Tensor& x, std::size_t row, const std::vector<double>& centers,
               std::size_t center, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = x.at(row, j) - centers[center * d + j];
        s += diff * diff;
    }
    return s;
}

} // namespace

KMeansResult kmeans(const Tensor& x, int k, int restarts, int max_iters, std::uint64_t seed) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    if (k < 1) throw contract_error("kmeans: k must be positive");
    if (n < static_cast<std::size_t>(k)) throw contract_error("kmeans: fewer points than clusters");
    if (restarts < 1 || max_iters < 1)
        throw contract_error("kmeans: restarts and max_iters must be positive");

    const auto ku = static_cast<std::size_t>(k);
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();

    Rng seeder(seed);
    for (int rs = 0; rs < restarts; ++rs) {
        Rng rng(seeder.fork(rs));

        // k-means++ seeding.
        std::vector<double> centers(ku * d);
        std::vector<double> dist2(n);
        const std::size_t first = rng.uniform_index(n);
        for (std::size_t j = 0; j < d; ++j) centers[j] = x.at(first, j);
        for (std::size_t i = 0; i < n; ++i) dist2[i] = sq_dist(x, i, centers, 0, d);
        for (std::size_t c = 1; c < ku; ++c) {
            const double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
            std::size_t pick;
            if (total <= 0.0) {
                pick = rng.uniform_index(n);
            } else {
                double target = rng.uniform() * total;
                pick = n - 1;
                for (std::size_t i = 0; i < n; ++i) {
                    target -= dist2[i];
                    if (target <= 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
            for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = x.at(pick, j);
            for (std::size_t i = 0; i < n; ++i)
                dist2[i] = std::min(dist2[i], sq_dist(x, i, centers, c, d));
        }

        // Lloyd iterations.
        std::vector<int> assign(n, -1);
        std::vector<int> prev(n, -2);
        std::vector<double> trace;
        for (int iter = 0; iter < max_iters; ++iter) {
            double inertia = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t arg = 0;
                double bestd = sq_dist(x, i, centers, 0, d);
                for (std::size_t c = 1; c < ku; ++c) {
                    const double cand = sq_dist(x, i, centers, c, d);
                    if (cand < bestd) {
                        bestd = cand;
                        arg = c;
                    }
                }
                assign[i] = static_cast<int>(arg);
                inertia += bestd;
            }

            std::vector<std::size_t> counts(ku, 0);
            for (std::size_t i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(assign[i])];
            for (std::size_t c = 0; c < ku; ++c) {
                if (counts[c] > 0) continue;
                // Reseed an empty cluster with the point farthest from its
                // current center, drawn from a cluster that keeps a member.
                std::size_t far = 0;
                double fard = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto a = static_cast<std::size_t>(assign[i]);
                    if (counts[a] < 2) continue;
                    const double cand = sq_dist(x, i, centers, a, d);
                    if (cand > fard) {
                        fard = cand;
                        far = i;
                    }
                }
                --counts[static_cast<std::size_t>(assign[far])];
                assign[far] = static_cast<int>(c);
                ++counts[c];
            }

            std::vector<double> sums(ku * d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const auto c = static_cast<std::size_t>(assign[i]);
                for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += x.at(i, j);
            }
            for (std::size_t c = 0; c < ku; ++c)
                for (std::size_t j = 0; j < d; ++j)
                    centers[c * d + j] = sums[c * d + j] / static_cast<double>(counts[c]);

            trace.push_back(inertia);
            if (assign == prev) break;
            prev = assign;
        }

        // Final inertia against the converged centers.
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            inertia += sq_dist(x, i, centers, static_cast<std::size_t>(assign[i]), d);

        if (inertia < best.inertia) {
            best.assignment = assign;
            best.centers = centers;
            best.inertia = inertia;
            best.iterations = static_cast<int>(trace.size());
            best.inertia_trace = trace;
        }
    }
    return best;
}

AttackReport clustering_attack(const SplitModel* victim, const Tensor& x,
                               const std::vector<int>& y, int num_classes,
                               int restarts, std::uint64_t seed) {
    check_pair(x, y, "clustering_attack");
    if (num_classes < 2) throw contract_error("clustering_attack: need at least two classes");
    if (x.rows() < static_cast<std::size_t>(num_classes))
        throw contract_error("clustering_attack: fewer samples than classes");
    if (restarts < 1) throw contract_error("clustering_attack: restarts must be positive");

    const Tensor z = victim ? victim->forward_bottom(nullptr, x) : x;

    AttackReport report;
    report.kind = AttackKind::cluster;
    report.leaked_k = 0;
    report.seed = seed;
    Rng seeder(seed);
    for (int r = 0; r < restarts; ++r) {
        const KMeansResult km = kmeans(z, num_classes, 10, 100, seeder.fork(r));
        const ConfusionCounts counts = confusion_from(km.assignment, y, num_classes);
        report.accuracies.push_back(permutation_accuracy(counts));
    }
    report.accuracy = std::accumulate(report.accuracies.begin(), report.accuracies.end(), 0.0) /
                      static_cast<double>(report.accuracies.size());
    return report;
}

long& ConfusionCounts::at(std::size_t cluster, std::size_t label) {
    return counts[cluster * classes + label];
}

long ConfusionCounts::at(std::size_t cluster, std::size_t label) const {
    return counts[cluster * classes + label];
}

ConfusionCounts confusion_from(const std::vector<int>& clusters, const std::vector<int>& labels,
                               int num_classes) {
    if (clusters.size() != labels.size())
        throw shape_error("confusion_from: cluster and label counts differ");
    if (num_classes < 1) throw contract_error("confusion_from: need at least one class");
    ConfusionCounts cc;
    cc.classes = static_cast<std::size_t>(num_classes);
    cc.counts.assign(cc.classes * cc.classes, 0);
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        if (clusters[i] < 0 || clusters[i] >= num_classes || labels[i] < 0 ||
            labels[i] >= num_classes)
            throw contract_error("confusion_from: id outside [0, classes)");
        ++cc.at(static_cast<std::size_t>(clusters[i]), static_cast<std::size_t>(labels[i]));
    }
    return cc;
}

namespace {

// Hungarian algorithm (potentials form), minimizing; O(n^3).
double assignment_min_cost(const std::vector<double>& a, std::size_t n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    double cost = 0.0;
    for (std::size_t j = 1; j <= n; ++j) cost += a[(p[j] - 1) * n + (j - 1)];
    return cost;
}

long total_count(const ConfusionCounts& counts) {
    long total = 0;
    for (long c : counts.counts) {
        if (c < 0) throw contract_error("permutation_accuracy: negative count");
        total += c;
    }
    if (total == 0) throw contract_error("permutation_accuracy: empty counts");
    return total;
}

} // namespace

double permutation_accuracy(const ConfusionCounts& counts) {
    const std::size_t n = counts.classes;
    if (n == 0) throw contract_error("permutation_accuracy: no classes");
    const long total = total_count(counts);
    std::vector<double> neg(n * n);
    for (std::size_t i = 0; i < n * n; ++i) neg[i] = -static_cast<double>(counts.counts[i]);
    const double best = -assignment_min_cost(neg, n);
    return best / static_cast<double>(total);
}

double permutation_accuracy_bruteforce(const ConfusionCounts& counts) {
    const std::size_t n = counts.classes;
    if (n == 0) throw contract_error("permutation_accuracy: no classes");
    if (n > 8) throw contract_error("permutation_accuracy_bruteforce: too many classes");
    const long total = total_count(counts);
    std::vector<std::size_t> sigma(n);
    std::iota(sigma.begin(), sigma.end(), 0);
    long best = 0;
    do {
        long sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += counts.at(i, sigma[i]);
        best = std::max(best, sum);
    } while (std::next_permutation(sigma.begin(), sigma.end()));
    return static_cast<double>(best) / static_cast<double>(total);
}

std::string attack_csv_header() {
    return "dataset,defense,value,attack,leaked_k,seed,accuracy,baseline_accuracy,advantage";
}

std::string attack_csv_row(const AttackRow& row) {
    std::ostringstream os;
    os.precision(17);
    os << row.dataset << ',' << row.defense << ',' << row.value << ','
       << attack_kind_name(row.attack) << ',' << row.leaked_k << ',' << row.seed << ','
       << row.accuracy << ',' << row.baseline_accuracy << ',' << row.advantage;
    return os.str();
}

} // namespace splitlab
