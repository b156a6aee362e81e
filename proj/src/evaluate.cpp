#include "fia/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "fia/util.hpp"

namespace fia::evaluate {

double overall_score(double preserve_acc, double forget_acc) {
    if (!(preserve_acc >= 0.0 && preserve_acc <= 1.0) ||
        !(forget_acc >= 0.0 && forget_acc <= 1.0)) {
        throw std::invalid_argument("overall_score: accuracies must be in [0, 1]");
    }
    const double forget_rate = 1.0 - forget_acc;
    const double denom = preserve_acc + forget_rate;
    if (denom == 0.0) return 0.0;
    return 2.0 * preserve_acc * forget_rate / denom * 100.0;
}

double forget_success_rate(std::span<const double> orig_scores,
                           std::span<const double> edited_scores) {
    if (orig_scores.size() != edited_scores.size()) {
        throw std::invalid_argument("forget_success_rate: score lists differ in length");
    }
    if (orig_scores.empty()) {
        throw std::invalid_argument("forget_success_rate: empty score lists");
    }
    std::size_t successes = 0;
    for (std::size_t i = 0; i < orig_scores.size(); ++i) {
        if (edited_scores[i] < orig_scores[i]) ++successes;
    }
    return static_cast<double>(successes) / static_cast<double>(orig_scores.size());
}

double assignment_accuracy(const std::vector<Point2>& samples, std::size_t target_mode_index,
                           const std::vector<Point2>& modes) {
    if (samples.empty() || modes.empty()) {
        throw std::invalid_argument("assignment_accuracy: empty samples or modes");
    }
    if (target_mode_index >= modes.size()) {
        throw std::invalid_argument("assignment_accuracy: target mode out of range");
    }
    std::size_t hits = 0;
    for (const Point2& p : samples) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < modes.size(); ++m) {
            const double dx = p[0] - modes[m][0];
            const double dy = p[1] - modes[m][1];
            const double d = dx * dx + dy * dy;
            if (d < best_d) {  // strict: ties stay with the lower index
                best_d = d;
                best = m;
            }
        }
        if (best == target_mode_index) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

Summary summarize(const RunReport& report, std::ostream& per_concept_csv,
                  std::ostream& aggregate_csv) {
    per_concept_csv << "concept_id,role,acc_pre,acc_post\n";
    double forget_sum = 0.0, preserve_sum = 0.0;
    std::size_t forget_n = 0, preserve_n = 0;
    for (const ConceptResult& c : report.concepts) {
        if (!(c.acc_pre >= 0.0 && c.acc_pre <= 1.0) ||
            !(c.acc_post >= 0.0 && c.acc_post <= 1.0)) {
            throw std::invalid_argument("summarize: accuracies must be in [0, 1]");
        }
        per_concept_csv << c.concept_id << ',' << (c.forget ? "forget" : "preserve") << ','
                        << format_double(c.acc_pre) << ',' << format_double(c.acc_post) << '\n';
        if (c.forget) {
            forget_sum += c.acc_post;
            ++forget_n;
        } else {
            preserve_sum += c.acc_post;
            ++preserve_n;
        }
    }

    Summary summary;
    if (forget_n > 0) summary.forget_acc = forget_sum / static_cast<double>(forget_n);
    if (preserve_n > 0) summary.preserve_acc = preserve_sum / static_cast<double>(preserve_n);
    if (summary.forget_acc && summary.preserve_acc) {
        summary.overall = overall_score(*summary.preserve_acc, *summary.forget_acc);
    }
    for (const auto& [layer, fraction] : report.pruned_fraction) {
        summary.pruned_fraction_total += fraction;
    }
    if (!report.pruned_fraction.empty()) {
        summary.pruned_fraction_total /= static_cast<double>(report.pruned_fraction.size());
    }

    aggregate_csv << "F,P,overall_score,pruned_fraction_total\n";
    auto cell = [](const std::optional<double>& v) {
        return v ? format_double(*v) : std::string();
    };
    aggregate_csv << cell(summary.forget_acc) << ',' << cell(summary.preserve_acc) << ','
                  << cell(summary.overall) << ',' << format_double(summary.pruned_fraction_total)
                  << '\n';
    return summary;
}

void write_scatter_svg(std::ostream& out, const std::vector<Point2>& pre_samples,
                       const std::vector<Point2>& post_samples,
                       const std::vector<Point2>& modes, const std::string& title) {
    // Fixed world window keeps pre/post panels comparable.
    double extent = 1.0;
    auto grow = [&extent](const std::vector<Point2>& pts) {
        for (const Point2& p : pts) {
            extent = std::max({extent, std::abs(p[0]), std::abs(p[1])});
        }
    };
    grow(modes);
    grow(pre_samples);
    grow(post_samples);
    extent = std::min(extent * 1.1, 50.0);  // clip runaway samples instead of shrinking modes

    const double panel = 300.0;
    auto sx = [&](double x, double offset) {
        const double clamped = std::clamp(x, -extent, extent);
        return offset + (clamped + extent) / (2.0 * extent) * panel;
    };
    auto sy = [&](double y) {
        const double clamped = std::clamp(y, -extent, extent);
        return panel - (clamped + extent) / (2.0 * extent) * panel + 20.0;
    };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"360\">\n";
    out << "<text x=\"8\" y=\"14\" font-size=\"12\">" << title << "</text>\n";
    out << "<text x=\"8\" y=\"334\" font-size=\"11\">before</text>\n";
    out << "<text x=\"328\" y=\"334\" font-size=\"11\">after</text>\n";
    auto panel_box = [&](double offset) {
        out << "<rect x=\"" << offset << "\" y=\"20\" width=\"300\" height=\"300\" fill=\"none\" "
               "stroke=\"#888\"/>\n";
    };
    panel_box(8.0);
    panel_box(328.0);

    auto draw = [&](const std::vector<Point2>& pts, double offset, const char* color) {
        for (const Point2& p : pts) {
            out << "<circle cx=\"" << format_double(sx(p[0], offset)) << "\" cy=\""
                << format_double(sy(p[1])) << "\" r=\"1.6\" fill=\"" << color
                << "\" fill-opacity=\"0.5\"/>\n";
        }
    };
    auto draw_modes = [&](double offset) {
        for (const Point2& m : modes) {
            out << "<circle cx=\"" << format_double(sx(m[0], offset)) << "\" cy=\""
                << format_double(sy(m[1])) << "\" r=\"4\" fill=\"none\" stroke=\"#000\"/>\n";
        }
    };
    draw(pre_samples, 8.0, "#1f77b4");
    draw_modes(8.0);
    draw(post_samples, 328.0, "#d62728");
    draw_modes(328.0);
    out << "</svg>\n";
}

}  // namespace fia::evaluate
