#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fia/saliency.hpp"
#include "fia/selection.hpp"
#include "fia/toydiff.hpp"

// Declarative pipeline configuration: one text file with [section] headers
// and key = value lines. Bare numbers are fractions; a trailing '%' divides
// by 100 (hyperparameter tables usually speak in percent).

namespace fia::config {

class ConfigError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

struct PipelineConfig {
    // [data]
    toydiff::ToyDataSpec data = toydiff::ToyDataSpec::default_spec();

    // [train]
    toydiff::TrainParams train;
    std::uint32_t hidden_width = 64;
    std::uint32_t cond_dim = 8;
    std::uint32_t total_timesteps = 50;
    double beta_first = 0.004;
    double beta_last = 0.2;
    std::uint64_t seed = 7;

    // [trace]
    std::uint32_t prompts_per_group = 16;
    std::uint32_t positions = 2;
    std::vector<std::string> trace_layers = {"ffn1", "ffn2"};

    // [saliency]
    double epsilon = 1e-12;
    saliency::StdMode std_mode = saliency::StdMode::Population;
    saliency::TimestepWindow window{1, 10};

    // [sensitivity]
    double r1 = 0.05;

    // [select]
    double r2 = 0.01;
    std::map<std::string, double> r2_per_concept;
    selection::Granularity granularity = selection::Granularity::Both;

    // [fuse]
    double alpha = 0.6;

    // [run]
    std::vector<std::string> forget_concepts = {"concept0", "concept1"};
    std::vector<std::string> preserve_concepts = {"concept2", "concept3"};
    std::vector<std::string> target_layers = {"FFN2"};  // layer ids or kind names
    std::uint32_t eval_samples = 2000;
    std::uint64_t eval_seed = 1234;

    void validate() const;

    double r2_for(const std::string& concept_id) const;

    /// Layer ids from the trace-layer list that match the target filter
    /// (exact id or target-kind name).
    std::vector<std::string> resolve_target_layers() const;

    std::uint32_t concept_index_of(const std::string& concept_id) const;

    /// Deterministic key = value dump; the basis of all artifact hashes.
    std::string canonical() const;
};

/// Chained per-stage fingerprints: a stage's hash covers every upstream
/// parameter that can influence its artifact bytes.
struct StageHashes {
    std::string trace;
    std::string saliency;
    std::string sensitivity;
    std::string select;
    std::string fuse;
    std::string apply;
    std::string eval;
};

StageHashes compute_stage_hashes(const PipelineConfig& cfg);

PipelineConfig parse_config_text(const std::string& text);
PipelineConfig parse_config_file(const std::filesystem::path& path);

/// "5%" -> 0.05, "0.3" -> 0.3. Used for config values that are fractions.
double parse_fraction(const std::string& text);

/// Command-line r1/r2 values follow the hyperparameter tables: bare numbers
/// are percentages ("3.0" -> 0.03); an explicit '%' suffix works too.
double parse_percent_flag(const std::string& text);

}  // namespace fia::config
