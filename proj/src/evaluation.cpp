#include "splitlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "splitlab/errors.hpp"

namespace splitlab {

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size())
        throw shape_error("accuracy: logits rows and label count differ");
    if (labels.empty()) throw contract_error("accuracy: empty batch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c)
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
    if (predicted.size() != labels.size())
        throw shape_error("accuracy: prediction and label counts differ");
    if (labels.empty()) throw contract_error("accuracy: empty batch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (predicted[i] == labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

AdvantageRecord bottom_model_advantage(const std::vector<AttackReport>& null_reports,
                                       const std::vector<AttackReport>& with_reports) {
    if (null_reports.empty() || with_reports.empty())
        throw contract_error("bottom_model_advantage: empty report list");
    const AttackKind kind = with_reports.front().kind;
    const int k = with_reports.front().leaked_k;
    for (const AttackReport& r : with_reports)
        if (r.kind != kind || r.leaked_k != k)
            throw contract_error("bottom_model_advantage: mixed attack settings");
    for (const AttackReport& r : null_reports)
        if (r.leaked_k != k)
            throw contract_error("bottom_model_advantage: baseline uses a different leak size");

    auto mean_error = [](const std::vector<AttackReport>& reports) {
        double sum = 0.0;
        for (const AttackReport& r : reports) sum += 1.0 - r.accuracy;
        return sum / static_cast<double>(reports.size());
    };
    AdvantageRecord rec;
    rec.r_null = mean_error(null_reports);
    rec.r_with = mean_error(with_reports);
    rec.advantage = rec.r_null - rec.r_with;
    rec.perfect = rec.advantage <= 0.0;
    return rec;
}

namespace {

double median_of(std::vector<double>& v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

AngularHistogram angular_distance_histogram(const Tensor& z, const std::vector<int>& y,
                                            int bins) {
    if (z.rows() != y.size())
        throw shape_error("angular_distance_histogram: rows and label count differ");
    if (bins < 1) throw contract_error("angular_distance_histogram: bins must be positive");
    if (z.rows() < 2) throw contract_error("angular_distance_histogram: need at least two rows");

    const double pi = std::acos(-1.0);
    AngularHistogram h;
    h.edges.resize(bins + 1);
    for (int b = 0; b <= bins; ++b)
        h.edges[b] = pi * static_cast<double>(b) / static_cast<double>(bins);
    h.same_counts.assign(bins, 0);
    h.diff_counts.assign(bins, 0);

    const double d = static_cast<double>(z.cols());
    std::vector<double> same, diff;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        for (std::size_t j = i + 1; j < z.rows(); ++j) {
            double dot = 0.0;
            for (std::size_t c = 0; c < z.cols(); ++c) dot += z.at(i, c) * z.at(j, c);
            const double cosv = std::clamp(dot / d, -1.0, 1.0);
            const double theta = std::acos(cosv);
            int b = static_cast<int>(theta / pi * bins);
            if (b >= bins) b = bins - 1;
            if (y[i] == y[j]) {
                ++h.same_counts[b];
                same.push_back(theta);
            } else {
                ++h.diff_counts[b];
                diff.push_back(theta);
            }
            ++h.pair_count;
        }
    }
    h.median_same = median_of(same);
    h.median_diff = median_of(diff);
    return h;
}

void write_histogram_csv(const AngularHistogram& hist, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open histogram csv for writing: " + path.string());
    f << "bin_left,bin_right,same_count,diff_count\n";
    std::ostringstream os;
    os.precision(17);
    for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
        os.str("");
        os << hist.edges[b] << ',' << hist.edges[b + 1] << ',' << hist.same_counts[b] << ','
           << hist.diff_counts[b] << '\n';
        f << os.str();
    }
    if (!f) throw io_error("short write to histogram csv: " + path.string());
}

} // namespace splitlab
