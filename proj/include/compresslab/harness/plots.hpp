#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "compresslab/analysis/alignment.hpp"
#include "compresslab/core/errors.hpp"
#include "compresslab/harness/run.hpp"

// Static SVG charts for a finished matrix run, one CSV sibling per chart
// carrying exactly the plotted points.  Nothing here is interactive: the
// artifacts are meant to be checked into experiment logs.

namespace clab {

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

namespace plot_detail {

inline const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
                                 "#bcbd22", "#e377c2"};
inline constexpr int kPaletteSize = 10;

inline std::string fmt(double v) {
    std::ostringstream out;
    out << std::setprecision(6) << v;
    return out.str();
}

struct Range {
    double lo = 0.0, hi = 1.0;
};

inline Range span(const std::vector<PlotSeries>& series, bool x_axis) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            double v = x_axis ? x : y;
            if (std::isnan(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(lo <= hi)) return {0.0, 1.0};
    if (lo == hi) {  // degenerate: pad around the single value
        lo -= 0.5;
        hi += 0.5;
    }
    double pad = 0.06 * (hi - lo);
    return {lo - pad, hi + pad};
}

}  // namespace plot_detail

/// Writes `<path>` as an SVG chart and `<path minus .svg>.csv` with the
/// identical series data ("series,x,y" rows in plot order).  Lines connect
/// points in series order when `lines` is set; `identity` adds a y=x
/// reference line across the data range.
inline void write_chart(const std::string& path, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        const std::vector<PlotSeries>& series, bool lines,
                        bool identity = false) {
    namespace pd = plot_detail;
    if (path.size() < 4 || path.substr(path.size() - 4) != ".svg")
        throw UsageError("chart path must end in .svg: " + path);
    if (series.empty()) throw UsageError("chart needs >= 1 series: " + path);

    const double W = 640, H = 480, ml = 64, mr = 16, mt = 36, mb = 48;
    pd::Range xr = pd::span(series, true), yr = pd::span(series, false);
    auto sx = [&](double x) {
        return ml + (x - xr.lo) / (xr.hi - xr.lo) * (W - ml - mr);
    };
    auto sy = [&](double y) {
        return H - mb - (y - yr.lo) / (yr.hi - yr.lo) * (H - mt - mb);
    };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
        << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
        << "\">\n"
        << "<rect width=\"" << W << "\" height=\"" << H
        << "\" fill=\"white\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">"
        << title << "</text>\n";

    // axes with 5 ticks each
    for (int t = 0; t <= 4; ++t) {
        double fx = xr.lo + (xr.hi - xr.lo) * t / 4.0;
        double fy = yr.lo + (yr.hi - yr.lo) * t / 4.0;
        svg << "<line x1=\"" << sx(fx) << "\" y1=\"" << H - mb << "\" x2=\""
            << sx(fx) << "\" y2=\"" << mt
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
            << "<text x=\"" << sx(fx) << "\" y=\"" << H - mb + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"10\">"
            << pd::fmt(fx) << "</text>\n"
            << "<line x1=\"" << ml << "\" y1=\"" << sy(fy) << "\" x2=\""
            << W - mr << "\" y2=\"" << sy(fy)
            << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
            << "<text x=\"" << ml - 6 << "\" y=\"" << sy(fy) + 3
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
               "font-size=\"10\">"
            << pd::fmt(fy) << "</text>\n";
    }
    svg << "<text x=\"" << W / 2 << "\" y=\"" << H - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\">"
        << x_label << "</text>\n"
        << "<text x=\"16\" y=\"" << H / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"12\" transform=\"rotate(-90 16 "
        << H / 2 << ")\">" << y_label << "</text>\n";

    if (identity) {
        double lo = std::max(xr.lo, yr.lo), hi = std::min(xr.hi, yr.hi);
        if (lo < hi)
            svg << "<line x1=\"" << sx(lo) << "\" y1=\"" << sy(lo)
                << "\" x2=\"" << sx(hi) << "\" y2=\"" << sy(hi)
                << "\" stroke=\"#888888\" stroke-width=\"1\" "
                   "stroke-dasharray=\"5,4\"/>\n";
    }

    for (size_t s = 0; s < series.size(); ++s) {
        const char* color = pd::kPalette[s % pd::kPaletteSize];
        if (lines && series[s].points.size() > 1) {
            svg << "<polyline fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"2\" points=\"";
            for (const auto& [x, y] : series[s].points)
                if (!std::isnan(x) && !std::isnan(y))
                    svg << pd::fmt(sx(x)) << "," << pd::fmt(sy(y)) << " ";
            svg << "\"/>\n";
        }
        for (const auto& [x, y] : series[s].points)
            if (!std::isnan(x) && !std::isnan(y))
                svg << "<circle cx=\"" << pd::fmt(sx(x)) << "\" cy=\""
                    << pd::fmt(sy(y)) << "\" r=\"3\" fill=\"" << color
                    << "\"/>\n";
        svg << "<rect x=\"" << W - mr - 150 << "\" y=\""
            << mt + 8 + 16 * static_cast<double>(s)
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n"
            << "<text x=\"" << W - mr - 136 << "\" y=\""
            << mt + 17 + 16 * static_cast<double>(s)
            << "\" font-family=\"sans-serif\" font-size=\"11\">"
            << series[s].name << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << svg.str();

    std::string csv_path = path.substr(0, path.size() - 4) + ".csv";
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw DataError("cannot write " + csv_path);
    csv.precision(std::numeric_limits<double>::max_digits10);
    csv << "series," << x_label << "," << y_label << "\n";
    for (const auto& s : series)
        for (const auto& [x, y] : s.points)
            csv << s.name << "," << x << "," << y << "\n";
}

namespace plot_detail {

/// Median rows keyed by label, points ordered by ascending bpp.
inline std::map<std::string, std::vector<const MedianRow*>> by_label(
    const ExperimentReport& report) {
    std::map<std::string, std::vector<const MedianRow*>> groups;
    for (const auto& m : report.medians) groups[m.label].push_back(&m);
    for (auto& [label, rows] : groups)
        std::sort(rows.begin(), rows.end(),
                  [](const MedianRow* a, const MedianRow* b) {
                      return a->bpp < b->bpp;
                  });
    return groups;
}

}  // namespace plot_detail

/// Renders the standard charts for a finished matrix run into `dir`:
/// rd_psnr / rd_msssim (codec rate-distortion, ascending bpp), rate_miou
/// (per-label), and cost_performance.  Every SVG gets a CSV sibling.
inline void emit_plots(const ExperimentReport& report, const std::string& dir) {
    namespace pd = plot_detail;
    if (report.rows.empty()) throw UsageError("emit_plots needs a non-empty report");
    std::filesystem::create_directories(dir);

    // codec R-D: one point per knob, shared by all codec-using labels
    std::map<double, std::pair<double, double>> rd;  // bpp -> (psnr, msssim)
    for (const auto& r : report.rows)
        if (!r.failed && r.bpp > 0.0 && !std::isnan(r.psnr_db))
            rd[r.bpp] = {r.psnr_db, r.msssim_db};
    if (!rd.empty()) {
        PlotSeries psnr{"psnr", {}}, msssim{"ms-ssim", {}};
        for (const auto& [bpp, v] : rd) {  // std::map iterates ascending
            psnr.points.push_back({bpp, v.first});
            msssim.points.push_back({bpp, v.second});
        }
        write_chart(dir + "/rd_psnr.svg", "codec rate-distortion", "bpp",
                    "psnr_db", {psnr}, true);
        write_chart(dir + "/rd_msssim.svg", "codec rate-distortion", "bpp",
                    "msssim_db", {msssim}, true);
    }

    // rate vs segmentation quality; codec-free labels ride the knob's bpp
    auto groups = pd::by_label(report);
    std::map<double, double> knob_bpp;
    for (const auto& m : report.medians)
        if (m.bpp > 0.0) knob_bpp[m.knob] = m.bpp;
    std::vector<PlotSeries> rate_series;
    std::vector<PlotSeries> cost_series;
    for (const auto& label : report.config.at("labels")) {
        const auto& rows = groups.at(label.get<std::string>());
        PlotSeries rate{label.get<std::string>(), {}};
        PlotSeries cost{label.get<std::string>(), {}};
        for (const MedianRow* m : rows) {
            if (m->n_ok == 0) continue;
            double x = m->bpp;
            if (x == 0.0) {
                auto ref = knob_bpp.find(m->knob);
                if (ref == knob_bpp.end()) continue;
                x = ref->second;
            }
            rate.points.push_back({x, m->miou});
            cost.points.push_back({m->cost_fraction, m->miou});
        }
        std::sort(rate.points.begin(), rate.points.end());
        std::sort(cost.points.begin(), cost.points.end());
        if (!rate.points.empty()) rate_series.push_back(std::move(rate));
        if (!cost.points.empty()) cost_series.push_back(std::move(cost));
    }
    if (!rate_series.empty())
        write_chart(dir + "/rate_miou.svg", "rate vs segmentation quality",
                    "bpp", "miou", rate_series, true);
    if (!cost_series.empty())
        write_chart(dir + "/cost_performance.svg",
                    "collection cost vs segmentation quality", "cost_fraction",
                    "miou", cost_series, true);
}

/// Scatter of per-channel mean activations (set B against set A) with the
/// identity reference line the correlation is judged against.
inline void emit_alignment_plot(const FeatureAlignmentReport& report,
                                const std::string& path) {
    PlotSeries points{"channels", {}};
    for (size_t c = 0; c < report.mean_a.size(); ++c)
        points.points.push_back({report.mean_a[c], report.mean_b[c]});
    std::ostringstream title;
    title << "feature alignment (r = " << plot_detail::fmt(report.correlation)
          << ")";
    write_chart(path, title.str(), "mean_a", "mean_b", {points}, false, true);
}

}  // namespace clab
