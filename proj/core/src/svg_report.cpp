// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include "serireg/svg_report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "serireg/format.hpp"

namespace serireg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 440;
constexpr int kMarginLeft = 64;
constexpr int kMarginRight = 16;
constexpr int kMarginTop = 34;
constexpr int kMarginBottom = 48;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

// 1-2-5 ladder step aiming for about six intervals.
double nice_step(double range, int target = 6) {
    if (range <= 0.0) return 1.0;
    const double raw = range / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double norm = raw / mag;
    if (norm < 1.5) return mag;
    if (norm < 3.5) return 2.0 * mag;
    if (norm < 7.5) return 5.0 * mag;
    return 10.0 * mag;
}

std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

struct Series {
    std::string label;
    std::vector<double> values;
    // Metadata payload: column name -> values as they appear in metrics.csv.
    // When empty, the plotted values are embedded under "values".
    std::vector<std::pair<std::string, std::vector<double>>> metadata_columns;
};

void write_line_plot(const fs::path& file, const std::string& title,
                     const std::string& y_label, const std::vector<Series>& series) {
    std::size_t max_n = 0;
    double y_max = 0.0;
    for (const auto& s : series) {
        max_n = std::max(max_n, s.values.size());
        for (const double v : s.values)
            if (std::isfinite(v)) y_max = std::max(y_max, v);
    }
    if (max_n == 0) throw InvalidSpec("emit_plots: series have no points");
    if (y_max <= 0.0) y_max = 1.0;

    const double y_step = nice_step(y_max);
    const double y_top = y_step * std::ceil(y_max / y_step);
    const double x_max = static_cast<double>(max_n - 1);
    const double x_step = std::max(1.0, std::round(nice_step(std::max(1.0, x_max))));

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const auto sx = [&](double x) {
        return kMarginLeft + (x_max > 0 ? x / x_max : 0.5) * plot_w;
    };
    const auto sy = [&](double y) { return kMarginTop + (1.0 - y / y_top) * plot_h; };

    std::ofstream out(file);
    if (!out) throw IoFailure("emit_plots: cannot write " + file.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";

    // Machine-checkable copy of the plotted data. Every number here also
    // appears in metrics.csv (same formatter), so plots can be cross-checked
    // byte for byte.
    json meta;
    meta["title"] = title;
    json jseries = json::array();
    for (const auto& s : series) {
        json entry;
        entry["label"] = s.label;
        if (s.metadata_columns.empty()) {
            json values = json::array();
            for (const double v : s.values) values.push_back(format_number(v));
            entry["values"] = std::move(values);
        } else {
            for (const auto& [column, column_values] : s.metadata_columns) {
                json values = json::array();
                for (const double v : column_values) values.push_back(format_number(v));
                entry[column] = std::move(values);
            }
        }
        jseries.push_back(std::move(entry));
    }
    meta["series"] = std::move(jseries);
    out << "<metadata id=\"serireg-data\">" << meta.dump() << "</metadata>\n";

    out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";

    // Axes, ticks, grid.
    for (double y = 0.0; y <= y_top + 1e-9; y += y_step) {
        const double py = sy(y);
        out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << fmt_coord(py) << "\" x2=\""
            << kWidth - kMarginRight << "\" y2=\"" << fmt_coord(py)
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << fmt_coord(py + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_number(y) << "</text>\n";
    }
    for (double x = 0.0; x <= x_max + 1e-9; x += x_step) {
        const double px = sx(x);
        out << "<line x1=\"" << fmt_coord(px) << "\" y1=\"" << kMarginTop + plot_h
            << "\" x2=\"" << fmt_coord(px) << "\" y2=\"" << kMarginTop + plot_h + 4
            << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << fmt_coord(px) << "\" y=\"" << kMarginTop + plot_h + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << format_number(x) << "</text>\n";
    }
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\""
        << kMarginLeft << "\" y2=\"" << kMarginTop + plot_h
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kMarginTop + plot_h
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<text x=\"16\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << kMarginTop + plot_h / 2 << ")\">" << y_label
        << "</text>\n";
    out << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << "slice" << "</text>\n";

    // Series.
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        std::string points;
        for (std::size_t k = 0; k < series[i].values.size(); ++k) {
            const double v = series[i].values[k];
            if (!std::isfinite(v)) continue;
            points += fmt_coord(sx(static_cast<double>(k)));
            points += ',';
            points += fmt_coord(sy(std::min(v, y_top)));
            points += ' ';
        }
        out << "<polyline fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.5\" points=\"" << points << "\"/>\n";
    }

    // Legend.
    const int legend_x = kMarginLeft + 12;
    int legend_y = kMarginTop + 12;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = kPalette[i % std::size(kPalette)];
        out << "<line x1=\"" << legend_x << "\" y1=\"" << legend_y - 4 << "\" x2=\""
            << legend_x + 22 << "\" y2=\"" << legend_y - 4 << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << legend_x + 28 << "\" y=\"" << legend_y
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << series[i].label
            << "</text>\n";
        legend_y += 16;
    }

    out << "</svg>\n";
}

} // namespace

void emit_plots(const std::vector<MetricsRecord>& records, const fs::path& out_dir) {
    if (records.empty()) throw InvalidSpec("emit_plots: need at least one record");
    for (const auto& r : records)
        if (r.slices.empty()) throw InvalidSpec("emit_plots: record has no slices");
    std::error_code ec;
    fs::create_directories(out_dir, ec);

    std::vector<Series> mean_error, drift;
    for (const auto& r : records) {
        Series me{r.method, {}, {}};
        for (const auto& s : r.slices) me.values.push_back(s.error.mean_px);
        mean_error.push_back(std::move(me));

        // The drift curve plots ||C_z||; its metadata carries the per-slice
        // mean residual components the curve is summed from, which are the
        // m_x_px/m_y_px columns of metrics.csv.
        Series d{r.method, {}, {}};
        std::vector<double> mx, my;
        for (const auto& c : r.drift.cumulative) d.values.push_back(c.norm());
        for (const auto& m : r.drift.per_slice_mean) {
            mx.push_back(m.x);
            my.push_back(m.y);
        }
        d.metadata_columns = {{"m_x_px", std::move(mx)}, {"m_y_px", std::move(my)}};
        drift.push_back(std::move(d));
    }
    write_line_plot(out_dir / "mean_error.svg", "Per-slice mean geometric error",
                    "mean error [px]", mean_error);
    write_line_plot(out_dir / "drift.svg", "Cumulative drift", "||C_z|| [px]", drift);
}

void write_comparison_csv(const std::vector<MetricsRecord>& records, const fs::path& file) {
    std::ofstream out(file);
    if (!out) throw IoFailure("write_comparison_csv: cannot write " + file.string());
    out << "method,strategy,mean_px,rms_px,median_px,p95_px,max_px,drift_score_px,"
           "mse,psnr_db,ncc,ssim\n";
    for (const auto& r : records) {
        out << r.method << ',' << r.strategy << ',' << format_number(r.aggregate.mean_px)
            << ',' << format_number(r.aggregate.rms_px) << ','
            << format_number(r.aggregate.median_px) << ','
            << format_number(r.aggregate.p95_px) << ',' << format_number(r.aggregate.max_px)
            << ',' << format_number(r.drift.score_px) << ','
            << format_number(r.similarity_mean.mse) << ','
            << format_number(r.similarity_mean.psnr_db) << ','
            << format_number(r.similarity_mean.ncc) << ','
            << format_number(r.similarity_mean.ssim) << '\n';
    }
}

} // namespace serireg
