#include "splitlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "splitlab/errors.hpp"

namespace splitlab {

std::string fmt_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::size_t CsvTable::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw parse_error("csv: missing column '" + name + "'");
}

void CsvTable::require_columns(const std::vector<std::string>& names) const {
    for (const std::string& n : names) column_index(n);
}

void CsvTable::add_row(std::vector<std::string> row) {
    if (row.size() != columns.size())
        throw contract_error("csv: row width " + std::to_string(row.size()) +
                             " does not match " + std::to_string(columns.size()) + " columns");
    rows.push_back(std::move(row));
}

void CsvTable::sort_rows() { std::sort(rows.begin(), rows.end()); }

namespace {

bool needs_quoting(const std::string& field) {
    return field.find_first_of(",\"\n") != std::string::npos;
}

void write_field(std::ostream& out, const std::string& field) {
    if (!needs_quoting(field)) {
        out << field;
        return;
    }
    out << '"';
    for (char c : field) {
        if (c == '"') out << '"';
        out << c;
    }
    out << '"';
}

} // namespace

void CsvTable::write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary); // \n endings everywhere
    if (!f) throw io_error("cannot open csv for writing: " + path.string());
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) f << ',';
        write_field(f, columns[i]);
    }
    f << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) f << ',';
            write_field(f, row[i]);
        }
        f << '\n';
    }
    if (!f) throw io_error("short write to csv: " + path.string());
}

namespace {

std::vector<std::string> parse_csv_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            if (!cur.empty())
                throw parse_error("csv line " + std::to_string(line_no) +
                                  ": quote inside unquoted field");
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted)
        throw parse_error("csv line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

} // namespace

CsvTable CsvTable::read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open csv: " + path.string());
    CsvTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            t.columns = parse_csv_line(line, line_no);
            continue;
        }
        auto fields = parse_csv_line(line, line_no);
        if (fields.size() != t.columns.size())
            throw parse_error("csv line " + std::to_string(line_no) + ": expected " +
                              std::to_string(t.columns.size()) + " fields, got " +
                              std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    if (t.columns.empty()) throw parse_error("csv: empty file " + path.string());
    return t;
}

namespace {

struct AxisRange {
    double lo = 0.0;
    double hi = 1.0;

    void include(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (hi <= lo) hi = lo + 1.0;
        const double margin = 0.05 * (hi - lo);
        lo -= margin;
        hi += margin;
    }
};

std::string esc_xml(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out.push_back(c);
        }
    }
    return out;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

} // namespace

void write_chart_svg(const ChartSpec& spec, const std::filesystem::path& path) {
    const double ml = 60.0, mr = 140.0, mt = 40.0, mb = 50.0;
    const double pw = spec.width - ml - mr;
    const double ph = spec.height - mt - mb;
    if (pw <= 0 || ph <= 0) throw contract_error("write_chart_svg: canvas too small");

    AxisRange xr, yr;
    bool any = false;
    for (const auto& s : spec.series) {
        for (const auto& p : s.points) {
            xr.include(p[0]);
            yr.include(p[1]);
            any = true;
        }
    }
    for (const auto& r : spec.reference_lines) (r.vertical ? xr : yr).include(r.value);
    if (spec.shade_below_y) yr.include(*spec.shade_below_y);
    if (!any && spec.reference_lines.empty() && !spec.shade_below_y) {
        xr = {0.0, 1.0};
        yr = {0.0, 1.0};
    }
    xr.pad();
    yr.pad();

    const auto px = [&](double x) { return ml + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    const auto py = [&](double y) { return mt + ph - (y - yr.lo) / (yr.hi - yr.lo) * ph; };

    std::ostringstream svg;
    svg.precision(6);
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << spec.width << ' '
        << spec.height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<rect width=\"" << spec.width << "\" height=\"" << spec.height
        << "\" fill=\"white\"/>\n";

    if (spec.shade_below_y) {
        const double top = py(std::min(*spec.shade_below_y, yr.hi));
        svg << "<rect x=\"" << ml << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\""
            << mt + ph - top << "\" fill=\"#dddddd\"/>\n";
        svg << "<text x=\"" << ml + 6 << "\" y=\"" << mt + ph - 6
            << "\" fill=\"#555555\">perfect protection</text>\n";
    }

    // axes and ticks
    svg << "<g stroke=\"black\" fill=\"none\">\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\"/>\n";
    svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
        << "\"/>\n";
    svg << "</g>\n";
    for (int t = 0; t <= 4; ++t) {
        const double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
        svg << "<line x1=\"" << px(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(fx)
            << "\" y2=\"" << mt + ph + 4 << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << px(fx) << "\" y=\"" << mt + ph + 18
            << "\" text-anchor=\"middle\">" << short_num(fx) << "</text>\n";
        svg << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(fy) << "\" x2=\"" << ml << "\" y2=\""
            << py(fy) << "\" stroke=\"black\"/>\n";
        svg << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
            << "\" text-anchor=\"end\">" << short_num(fy) << "</text>\n";
    }

    for (const auto& r : spec.reference_lines) {
        svg << "<line ";
        if (r.vertical)
            svg << "x1=\"" << px(r.value) << "\" y1=\"" << mt << "\" x2=\"" << px(r.value)
                << "\" y2=\"" << mt + ph << '"';
        else
            svg << "x1=\"" << ml << "\" y1=\"" << py(r.value) << "\" x2=\"" << ml + pw
                << "\" y2=\"" << py(r.value) << '"';
        svg << " stroke=\"#888888\" stroke-dasharray=\"6 4\"/>\n";
        if (!r.label.empty()) {
            if (r.vertical)
                svg << "<text x=\"" << px(r.value) + 4 << "\" y=\"" << mt + 12
                    << "\" fill=\"#555555\">" << esc_xml(r.label) << "</text>\n";
            else
                svg << "<text x=\"" << ml + pw - 4 << "\" y=\"" << py(r.value) - 4
                    << "\" text-anchor=\"end\" fill=\"#555555\">" << esc_xml(r.label)
                    << "</text>\n";
        }
    }

    double legend_y = mt + 10;
    for (const auto& s : spec.series) {
        if (s.draw_line && s.points.size() > 1) {
            svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" points=\"";
            for (const auto& p : s.points) svg << px(p[0]) << ',' << py(p[1]) << ' ';
            svg << "\"/>\n";
        }
        for (const auto& p : s.points)
            svg << "<circle cx=\"" << px(p[0]) << "\" cy=\"" << py(p[1])
                << "\" r=\"4\" fill=\"" << s.color << "\"/>\n";
        svg << "<circle cx=\"" << ml + pw + 12 << "\" cy=\"" << legend_y << "\" r=\"4\" fill=\""
            << s.color << "\"/>\n";
        svg << "<text x=\"" << ml + pw + 22 << "\" y=\"" << legend_y + 4 << "\">"
            << esc_xml(s.label) << "</text>\n";
        legend_y += 18;
    }

    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << mt - 12
        << "\" text-anchor=\"middle\" font-size=\"14\">" << esc_xml(spec.title) << "</text>\n";
    svg << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 12
        << "\" text-anchor=\"middle\">" << esc_xml(spec.x_label) << "</text>\n";
    svg << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">"
        << esc_xml(spec.y_label) << "</text>\n";
    svg << "</svg>\n";

    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open svg for writing: " + path.string());
    f << svg.str();
    if (!f) throw io_error("short write to svg: " + path.string());
}

void emit_tradeoff_plot(const std::filesystem::path& summary_csv,
                        const std::filesystem::path& svg_path) {
    const CsvTable t = CsvTable::read(summary_csv);
    t.require_columns({"defense", "value", "attack", "test_accuracy_mean",
                       "attack_accuracy_mean", "baseline_accuracy_mean"});
    const std::size_t c_def = t.column_index("defense");
    const std::size_t c_att = t.column_index("attack");
    const std::size_t c_test = t.column_index("test_accuracy_mean");
    const std::size_t c_atk = t.column_index("attack_accuracy_mean");
    const std::size_t c_base = t.column_index("baseline_accuracy_mean");

    const std::map<std::string, std::string> palette = {{"vanilla", "#444444"},
                                                        {"pe", "#d62728"},
                                                        {"dcor", "#1f77b4"},
                                                        {"label_dp", "#2ca02c"}};

    ChartSpec spec;
    spec.title = "Utility vs. attack accuracy";
    spec.x_label = "test accuracy";
    spec.y_label = "fine-tuning attack accuracy";

    std::map<std::string, PlotSeries> by_defense;
    double baseline_sum = 0.0;
    std::size_t baseline_n = 0;
    std::optional<double> vanilla_test, vanilla_attack;
    for (const auto& row : t.rows) {
        if (row[c_att] != "fine_tune") continue;
        const double test_acc = std::stod(row[c_test]);
        const double attack_acc = std::stod(row[c_atk]);
        auto& series = by_defense[row[c_def]];
        if (series.label.empty()) {
            series.label = row[c_def];
            const auto it = palette.find(row[c_def]);
            series.color = it == palette.end() ? "#9467bd" : it->second;
            series.draw_line = true;
        }
        series.points.push_back({test_acc, attack_acc});
        baseline_sum += std::stod(row[c_base]);
        ++baseline_n;
        if (row[c_def] == "vanilla") {
            vanilla_test = test_acc;
            vanilla_attack = attack_acc;
        }
    }
    for (auto& [name, series] : by_defense) spec.series.push_back(series);
    if (baseline_n > 0) spec.shade_below_y = baseline_sum / static_cast<double>(baseline_n);
    if (vanilla_test)
        spec.reference_lines.push_back({*vanilla_test, true, "vanilla test"});
    if (vanilla_attack)
        spec.reference_lines.push_back({*vanilla_attack, false, "vanilla attack"});

    write_chart_svg(spec, svg_path);
}

} // namespace splitlab
