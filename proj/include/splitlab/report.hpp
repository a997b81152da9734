#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace splitlab {

// %.17g, the same formatting everywhere so reruns diff clean.
std::string fmt_num(double v);

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    std::size_t column_index(const std::string& name) const; // parse_error when absent
    void require_columns(const std::vector<std::string>& names) const;
    void add_row(std::vector<std::string> row); // must match the column count
    // Canonical order: lexicographic across the whole row. Applied before
    // writing so parallel and serial runs emit identical files.
    void sort_rows();
    void write(const std::filesystem::path& path) const;
    static CsvTable read(const std::filesystem::path& path);
};

struct PlotSeries {
    std::string label;
    std::vector<std::array<double, 2>> points;
    std::string color = "#1f77b4";
    bool draw_line = false;
};

struct ReferenceLine {
    double value = 0.0;
    bool vertical = false; // horizontal otherwise
    std::string label;
};

struct ChartSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotSeries> series;
    std::vector<ReferenceLine> reference_lines; // dashed
    std::optional<double> shade_below_y;        // gray region under this level
    double width = 640.0;
    double height = 480.0;
};

// Standalone SVG, no external assets. Empty series still produce valid axes.
void write_chart_svg(const ChartSpec& spec, const std::filesystem::path& path);

// Test accuracy vs. attack accuracy from a sweep summary CSV: one series per
// defense, gray perfect-protection region bounded by the scratch baseline,
// dashed reference lines at the vanilla accuracies when a vanilla row exists.
void emit_tradeoff_plot(const std::filesystem::path& summary_csv,
                        const std::filesystem::path& svg_path);

} // namespace splitlab
