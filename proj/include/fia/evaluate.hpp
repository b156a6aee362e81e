#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

// Composite unlearning metrics: forgetting/preserving aggregation, the
// harmonic-mean overall score, and the forget-success rate, plus the
// plot-ready summaries the pipeline emits.

namespace fia::evaluate {

using Point2 = std::array<double, 2>;

struct ConceptResult {
    std::string concept_id;
    bool forget = false;  // false = preserve set
    double acc_pre = 0.0;
    double acc_post = 0.0;
};

struct RunReport {
    std::vector<ConceptResult> concepts;
    std::map<std::string, double> pruned_fraction;  // per layer_id
};

struct Summary {
    std::optional<double> forget_acc;    // mean post-prune accuracy, forget set
    std::optional<double> preserve_acc;  // mean post-prune accuracy, preserve set
    std::optional<double> overall;       // harmonic-mean score, percent
    double pruned_fraction_total = 0.0;
};

/// 2·P·(1−F) / (P + (1−F)) · 100; the degenerate P = 0, F = 1 case is 0.
double overall_score(double preserve_acc, double forget_acc);

/// Fraction of indices where edited < orig, strictly (ties count as failures).
double forget_success_rate(std::span<const double> orig_scores,
                           std::span<const double> edited_scores);

/// Fraction of samples whose nearest mode (Euclidean, ties to the lower
/// index) is the target mode.
double assignment_accuracy(const std::vector<Point2>& samples, std::size_t target_mode_index,
                           const std::vector<Point2>& modes);

/// Emits per-concept CSV rows plus the aggregate row and returns the
/// aggregates. A missing forget or preserve set leaves the corresponding
/// aggregate (and the overall score) absent.
Summary summarize(const RunReport& report, std::ostream& per_concept_csv,
                  std::ostream& aggregate_csv);

/// Scatter of sample clouds before/after pruning, for eyeballing only.
void write_scatter_svg(std::ostream& out, const std::vector<Point2>& pre_samples,
                       const std::vector<Point2>& post_samples,
                       const std::vector<Point2>& modes, const std::string& title);

}  // namespace fia::evaluate
