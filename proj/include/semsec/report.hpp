#pragma once

#include <iomanip>
#include <sstream>

#include "semsec/harness.hpp"

namespace semsec {

// ---------------------------------------------------------------------------
// SVG line plots: metric vs SNR, one series per strategy, SNR ascending.
// ---------------------------------------------------------------------------

struct PlotSeries {
    std::string label;
    std::vector<std::pair<double, double>> points; // (snr, value)
};

inline std::string render_svg_plot(const std::string& title, const std::string& ylabel,
                                   std::vector<PlotSeries> series) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
    const int W = 640, H = 420, ML = 70, MR = 160, MT = 40, MB = 50;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (auto& s : series) {
        std::sort(s.points.begin(), s.points.end());
        for (auto [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (series.empty() || !(xmin <= xmax)) {
        xmin = 0;
        xmax = 1;
        ymin = 0;
        ymax = 1;
    }
    if (xmax - xmin < 1e-12) {
        xmin -= 1;
        xmax += 1;
    }
    if (ymax - ymin < 1e-12) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double ypad = 0.06 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
    auto py = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << (ML + (W - ML - MR) / 2) << "' y='24' text-anchor='middle' font-size='15' "
        << "font-family='sans-serif'>" << title << "</text>\n";
    // axes
    svg << "<line x1='" << ML << "' y1='" << (H - MB) << "' x2='" << (W - MR) << "' y2='" << (H - MB)
        << "' stroke='black'/>\n"
        << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << (H - MB) << "' stroke='black'/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        svg << "<text x='" << px(xv) << "' y='" << (H - MB + 18) << "' text-anchor='middle' font-size='11' "
            << "font-family='sans-serif'>" << std::fixed << std::setprecision(1) << xv << "</text>\n"
            << "<text x='" << (ML - 8) << "' y='" << (py(yv) + 4) << "' text-anchor='end' font-size='11' "
            << "font-family='sans-serif'>" << std::setprecision(2) << yv << "</text>\n"
            << "<line x1='" << ML << "' y1='" << py(yv) << "' x2='" << (W - MR) << "' y2='" << py(yv)
            << "' stroke='#dddddd'/>\n";
    }
    svg << "<text x='" << (ML + (W - ML - MR) / 2) << "' y='" << (H - 12)
        << "' text-anchor='middle' font-size='12' font-family='sans-serif'>SNR (dB)</text>\n"
        << "<text x='18' y='" << (MT + (H - MT - MB) / 2) << "' text-anchor='middle' font-size='12' "
        << "font-family='sans-serif' transform='rotate(-90 18 " << (MT + (H - MT - MB) / 2) << ")'>" << ylabel
        << "</text>\n";
    int ci = 0;
    for (const auto& s : series) {
        const char* color = palette[ci % 7];
        if (s.points.size() > 1) {
            svg << "<polyline fill='none' stroke='" << color << "' stroke-width='2' points='";
            for (auto [x, y] : s.points) svg << px(x) << "," << py(y) << " ";
            svg << "'/>\n";
        }
        for (auto [x, y] : s.points)
            svg << "<circle cx='" << px(x) << "' cy='" << py(y) << "' r='3.5' fill='" << color << "'/>\n";
        svg << "<text x='" << (W - MR + 14) << "' y='" << (MT + 18 + 18 * ci) << "' font-size='12' "
            << "font-family='sans-serif' fill='" << color << "'>" << s.label << "</text>\n";
        ++ci;
    }
    svg << "</svg>\n";
    return svg.str();
}

// ---------------------------------------------------------------------------
// Report emission from a record
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, int prec = 2) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

} // namespace detail

/// Renders plots (one SVG per family x defense x metric), a CSV of every
/// cell aggregate, and a markdown table per condition with the column groups
/// (similarity to host | similarity to private | FPESR).
inline std::vector<std::filesystem::path> emit_report(const ExperimentConfig& cfg, const ExperimentRecord& record) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    if (record.cells.empty()) throw EmptyDataset("emit_report: record has no metric cells");
    fs::create_directories(cfg.report_dir());

    std::set<std::string> strategies, families;
    std::set<double> snrs;
    bool any_defended = false;
    for (const auto& [name, cell] : record.cells.items()) {
        strategies.insert(cell.at("strategy").get<std::string>());
        families.insert(cell.at("family").get<std::string>());
        snrs.insert(cell.at("snr_db").get<double>());
        if (cell.at("defended").get<bool>()) any_defended = true;
    }

    auto find_cell = [&](const std::string& strategy, const std::string& family, double snr,
                         bool defended) -> const json* {
        for (const auto& [name, cell] : record.cells.items()) {
            if (cell.at("strategy") == strategy && cell.at("family") == family &&
                cell.at("snr_db").get<double>() == snr && cell.at("defended").get<bool>() == defended)
                return &cell;
        }
        return nullptr;
    };

    // CSV over every cell
    {
        const auto path = cfg.report_dir() / "cells.csv";
        std::ofstream os(path, std::ios::trunc);
        os << "strategy,family,snr_db,defended,"
              "eve_priv_psnr,eve_priv_msssim,eve_priv_perceptual,eve_priv_fpesr,"
              "eve_host_psnr,eve_host_msssim,eve_host_perceptual,eve_host_fpesr,"
              "bob_priv_psnr,bob_priv_msssim,bob_priv_perceptual\n";
        for (const auto& [name, cell] : record.cells.items()) {
            const auto& ep = cell.at("eve_vs_private");
            const auto& bp = cell.at("bob_private");
            os << cell.at("strategy").get<std::string>() << "," << cell.at("family").get<std::string>() << ","
               << cell.at("snr_db").get<double>() << "," << (cell.at("defended").get<bool>() ? 1 : 0) << ","
               << ep.at("psnr_mean").get<double>() << "," << ep.at("ms_ssim_mean").get<double>() << ","
               << ep.at("perceptual_mean").get<double>() << "," << ep.at("fpesr").get<double>() << ",";
            if (cell.contains("eve_vs_host")) {
                const auto& eh = cell.at("eve_vs_host");
                os << eh.at("psnr_mean").get<double>() << "," << eh.at("ms_ssim_mean").get<double>() << ","
                   << eh.at("perceptual_mean").get<double>() << "," << eh.at("fpesr").get<double>() << ",";
            } else {
                os << ",,,,";
            }
            os << bp.at("psnr_mean").get<double>() << "," << bp.at("ms_ssim_mean").get<double>() << ","
               << bp.at("perceptual_mean").get<double>() << "\n";
        }
        files.push_back(path);
    }

    // curves per family and defense flag
    for (const auto& family : families) {
        for (int defended = 0; defended < (any_defended ? 2 : 1); ++defended) {
            struct MetricDef {
                const char* key;
                const char* label;
                const char* file;
            };
            for (const auto& m : {MetricDef{"psnr_mean", "PSNR (dB)", "psnr"},
                                  MetricDef{"ms_ssim_mean", "MS-SSIM", "ms_ssim"},
                                  MetricDef{"perceptual_mean", "perceptual distance", "perceptual"},
                                  MetricDef{"fpesr", "FPESR", "fpesr"}}) {
                std::vector<PlotSeries> series;
                for (const auto& strategy : strategies) {
                    PlotSeries s;
                    s.label = strategy;
                    for (double snr : snrs) {
                        if (const json* cell = find_cell(strategy, family, snr, defended != 0))
                            s.points.emplace_back(snr, cell->at("eve_vs_private").at(m.key).get<double>());
                    }
                    if (!s.points.empty()) series.push_back(std::move(s));
                }
                if (series.empty()) continue;
                const std::string title = std::string("Eavesdropper vs private, ") + family +
                                          (defended ? " (defended)" : " (undefended)");
                const auto path = cfg.report_dir() / (std::string("eve_") + m.file + "_" + family +
                                                      (defended ? "_defended" : "") + ".svg");
                std::ofstream os(path, std::ios::trunc);
                os << render_svg_plot(title, m.label, std::move(series));
                files.push_back(path);
            }

            // Bob's quality curve (identical across strategies; first found wins)
            std::vector<PlotSeries> bob;
            PlotSeries s;
            s.label = defended ? "bob private (defended)" : "bob (undefended)";
            for (double snr : snrs)
                for (const auto& strategy : strategies)
                    if (const json* cell = find_cell(strategy, family, snr, defended != 0)) {
                        s.points.emplace_back(snr, cell->at("bob_private").at("psnr_mean").get<double>());
                        break;
                    }
            if (!s.points.empty()) {
                bob.push_back(std::move(s));
                const auto path =
                    cfg.report_dir() / (std::string("bob_psnr_") + family + (defended ? "_defended" : "") + ".svg");
                std::ofstream os(path, std::ios::trunc);
                os << render_svg_plot(std::string("Receiver quality, ") + family, "PSNR (dB)", std::move(bob));
                files.push_back(path);
            }
        }
    }

    // markdown summary with the three column groups per defended condition
    {
        const auto path = cfg.report_dir() / "report.md";
        std::ofstream os(path, std::ios::trunc);
        os << "# Evaluation report\n\n";
        os << "Run: `" << cfg.run_dir << "`, seed " << cfg.seed << "\n\n";
        if (any_defended) {
            for (const auto& family : families) {
                for (double snr : snrs) {
                    bool have = false;
                    for (const auto& strategy : strategies)
                        if (find_cell(strategy, family, snr, true)) have = true;
                    if (!have) continue;
                    os << "## Covert transmission, " << family << " @ " << snr << " dB\n\n";
                    os << "| Method | Host PSNR | Host MS-SSIM | Host Perc. | Private PSNR | Private MS-SSIM | "
                          "Private Perc. | FPESR |\n";
                    os << "|---|---|---|---|---|---|---|---|\n";
                    for (const auto& strategy : strategies) {
                        const json* cell = find_cell(strategy, family, snr, true);
                        if (!cell) continue;
                        const auto& eh = cell->at("eve_vs_host");
                        const auto& ep = cell->at("eve_vs_private");
                        os << "| " << strategy << " | " << detail::fmt(eh.at("psnr_mean").get<double>()) << " dB | "
                           << detail::fmt(eh.at("ms_ssim_mean").get<double>(), 4) << " | "
                           << detail::fmt(eh.at("perceptual_mean").get<double>(), 4) << " | "
                           << detail::fmt(ep.at("psnr_mean").get<double>()) << " dB | "
                           << detail::fmt(ep.at("ms_ssim_mean").get<double>(), 4) << " | "
                           << detail::fmt(ep.at("perceptual_mean").get<double>(), 4) << " | "
                           << detail::fmt(ep.at("fpesr").get<double>(), 3) << " |\n";
                    }
                    os << "\n";
                }
            }
        }
        os << "## Undefended eavesdropping (vs private image)\n\n";
        os << "| Strategy | Family | SNR | PSNR | MS-SSIM | Perceptual | FPESR |\n|---|---|---|---|---|---|---|\n";
        for (const auto& [name, cell] : record.cells.items()) {
            if (cell.at("defended").get<bool>()) continue;
            const auto& ep = cell.at("eve_vs_private");
            os << "| " << cell.at("strategy").get<std::string>() << " | " << cell.at("family").get<std::string>()
               << " | " << cell.at("snr_db").get<double>() << " dB | "
               << detail::fmt(ep.at("psnr_mean").get<double>()) << " dB | "
               << detail::fmt(ep.at("ms_ssim_mean").get<double>(), 4) << " | "
               << detail::fmt(ep.at("perceptual_mean").get<double>(), 4) << " | "
               << detail::fmt(ep.at("fpesr").get<double>(), 3) << " |\n";
        }
        os << "\n";
        files.push_back(path);
    }
    return files;
}

} // namespace semsec
