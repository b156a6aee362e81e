#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fia/config.hpp"
#include "fia/evaluate.hpp"

// File-based pipeline stages. Every stage reads its inputs from the artifact
// directory, checks that they were produced under a compatible configuration
// (chained config hashes in manifest.json), and writes its own outputs
// deterministically.

namespace fia::pipeline {

class PipelineError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

// Artifact names inside the output directory.
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kModelFile = "model.fiam";
inline constexpr const char* kPrunedModelFile = "model_pruned.fiam";
inline constexpr const char* kTraceFile = "trace.fiat";
inline constexpr const char* kLossFile = "train_loss.csv";
inline constexpr const char* kSaliencyFile = "saliency.csv";
inline constexpr const char* kSensitivityFile = "sensitivity.csv";
inline constexpr const char* kEvalConceptsFile = "eval_concepts.csv";
inline constexpr const char* kEvalAggregateFile = "eval_aggregate.csv";
inline constexpr const char* kSweepFile = "sweep.csv";

std::string mask_file_name(const std::string& concept_id);
std::string plan_file_name(const std::string& layer_id);

enum class Stage { Trace, Saliency, Sensitivity, Select, Fuse, Apply, Eval };

std::optional<Stage> stage_from_name(std::string_view name);
const char* stage_name(Stage stage);

struct StageContext {
    config::PipelineConfig cfg;
    std::filesystem::path out_dir;
    int workers = 1;
    std::ostream* log = nullptr;  // progress notes; null = quiet
};

void run_stage(const StageContext& ctx, Stage stage);

/// All stages in order: trace, saliency, sensitivity, select, fuse, apply, eval.
void run_all(const StageContext& ctx);

struct SweepRow {
    std::string value;
    std::size_t agnostic_count = 0;
    std::size_t prune_count = 0;
    std::optional<double> forget_acc;
    std::optional<double> preserve_acc;
    std::optional<double> overall;
};

/// One pipeline evaluation per swept value over a shared trace. param is
/// "alpha", "r2" or "granularity". Writes sweep.csv and returns the rows.
std::vector<SweepRow> run_sweep(const StageContext& ctx, const std::string& param,
                                const std::vector<std::string>& values);

/// Aggregate summary of a standalone per-concept report CSV
/// (concept_id,role,acc_pre,acc_post), for `eval --report`.
evaluate::Summary summarize_report_file(const std::filesystem::path& report,
                                        std::ostream& per_concept_csv,
                                        std::ostream& aggregate_csv);

}  // namespace fia::pipeline
