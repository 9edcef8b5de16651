#include "adaptagen/report.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <vector>

#include "adaptagen/evaluation.hpp"

namespace adaptagen {

namespace {

struct Row {
    std::string label;
    CategoryMetrics m;
};

std::vector<Row> rows_of(const json& metrics) {
    const auto problems = validate_metrics_json(metrics);
    if (!problems.empty()) {
        throw Error("metrics document is invalid: " + join(problems, "; "));
    }
    const MetricReport report = metric_report_from_json(metrics);
    std::vector<Row> rows;
    for (const auto& [cat, m] : report.per_category) {
        rows.push_back({cat, m});
    }
    rows.push_back({"overall", report.overall});
    return rows;
}

std::string escape_xml(const std::string& s) {
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

}  // namespace

std::string render_metrics_table(const json& metrics) {
    const auto rows = rows_of(metrics);
    std::size_t width = 8;
    for (const auto& r : rows) {
        width = std::max(width, r.label.size());
    }
    std::ostringstream os;
    auto rule = [&] { os << std::string(width + 58, '-') << '\n'; };
    os << std::left << std::setw(static_cast<int>(width)) << "category" << std::right << std::setw(11) << "FID"
       << std::setw(10) << "IS" << std::setw(10) << "IS std" << std::setw(10) << "CLIP" << std::setw(8) << "real"
       << std::setw(9) << "gen" << '\n';
    rule();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i + 1 == rows.size()) {
            rule();
        }
        const auto& [label, m] = rows[i];
        os << std::left << std::setw(static_cast<int>(width)) << label << std::right << std::fixed
           << std::setprecision(3) << std::setw(11) << m.fid << std::setw(10) << m.is_mean << std::setw(10)
           << m.is_std << std::setw(10) << m.clip_score << std::setw(8) << m.n_real << std::setw(9) << m.n_generated
           << '\n';
    }
    if (metrics.contains("metadata")) {
        os << "backends: " << metrics["metadata"].value("backends", json::object()).dump()
           << "  clip: " << metrics["metadata"].value("clip_convention", std::string("raw")) << '\n';
    }
    return os.str();
}

std::string render_metrics_svg(const json& metrics) {
    auto rows = rows_of(metrics);
    rows.pop_back();  // panels show categories only

    constexpr int kPanelW = 320, kPanelH = 240, kMargin = 40;
    const std::pair<const char*, double CategoryMetrics::*> panels[] = {
        {"FID (lower is better)", &CategoryMetrics::fid},
        {"IS", &CategoryMetrics::is_mean},
        {"CLIP score", &CategoryMetrics::clip_score},
    };
    const int width = 3 * kPanelW + 2 * kMargin;
    const int height = kPanelH + 2 * kMargin + 40;

    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t p = 0; p < std::size(panels); ++p) {
        const auto& [title, field] = panels[p];
        const double x0 = kMargin + static_cast<double>(p) * kPanelW;
        const double y0 = kMargin;
        const double plot_w = kPanelW - 30.0;
        const double plot_h = kPanelH - 40.0;
        double lo = 0.0, hi = 0.0;
        for (const auto& r : rows) {
            lo = std::min(lo, r.m.*field);
            hi = std::max(hi, r.m.*field);
        }
        if (hi - lo <= 0.0) {
            hi = lo + 1.0;
        }
        auto y_of = [&](double v) { return y0 + plot_h * (hi - v) / (hi - lo); };
        os << "<text x=\"" << x0 << "\" y=\"" << y0 - 12 << "\" font-size=\"13\">" << title << "</text>\n";
        os << "<line x1=\"" << x0 << "\" y1=\"" << y_of(0.0) << "\" x2=\"" << x0 + plot_w << "\" y2=\"" << y_of(0.0)
           << "\" stroke=\"black\"/>\n";
        const double slot = plot_w / static_cast<double>(std::max<std::size_t>(rows.size(), 1));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double v = rows[i].m.*field;
            const double top = std::min(y_of(v), y_of(0.0));
            const double h = std::abs(y_of(v) - y_of(0.0));
            const double bx = x0 + slot * static_cast<double>(i) + slot * 0.15;
            os << "<rect x=\"" << bx << "\" y=\"" << top << "\" width=\"" << slot * 0.7 << "\" height=\"" << h
               << "\" fill=\"#4b7bb5\"/>\n";
            os << "<text x=\"" << bx << "\" y=\"" << top - 3 << "\">" << std::setprecision(3) << v
               << std::setprecision(2) << "</text>\n";
            os << "<text transform=\"translate(" << bx + slot * 0.35 << "," << y0 + plot_h + 12
               << ") rotate(30)\">" << escape_xml(rows[i].label) << "</text>\n";
        }
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace adaptagen
