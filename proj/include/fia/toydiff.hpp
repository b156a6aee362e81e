#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fia/evaluate.hpp"
#include "fia/matrix.hpp"
#include "fia/rng.hpp"
#include "fia/selection.hpp"
#include "fia/trace.hpp"

// Desk-scale conditional denoising testbed: a small epsilon-prediction MLP
// over 2-D concept clusters. Its two hidden projections are the pruning
// targets; sampling runs double as trace exporters.

namespace fia::toydiff {

using evaluate::Point2;

struct ToyDataSpec {
    std::uint32_t concept_count = 4;
    std::vector<Point2> modes;  // one per concept
    double mode_std = 0.3;
    std::uint32_t samples_per_concept = 512;

    void validate() const;
    static ToyDataSpec default_spec();
};

struct LabeledPoint {
    Point2 x{0.0, 0.0};
    std::uint32_t concept_index = 0;
};

std::vector<LabeledPoint> make_dataset(const ToyDataSpec& spec, std::uint64_t seed);

struct NoiseSchedule {
    std::uint32_t total_timesteps = 0;
    std::vector<double> beta;       // beta[t-1], t = 1..T
    std::vector<double> alpha_bar;  // cumulative product of (1 - beta)

    static NoiseSchedule linear(std::uint32_t total_timesteps, double beta_first,
                                double beta_last);
    void validate() const;
};

enum class ModelLayer { Ffn1, Ffn2 };

const char* model_layer_id(ModelLayer layer);
std::optional<ModelLayer> model_layer_from_id(std::string_view id);

/// Raised when training or sampling produces non-finite values.
class DivergenceError : public std::runtime_error {
 public:
    using std::runtime_error::runtime_error;
};

struct TrainParams {
    std::uint32_t steps = 2000;
    double learning_rate = 0.019;
    std::uint32_t batch_size = 64;
    double cond_dropout = 0.3;  // fraction of steps trained on the null condition
    // L1 strengths (proximal soft-threshold after each step) on the two
    // hidden projections. Sparse routing through the second projection is
    // what makes per-concept pruning bite; the first stays mostly dense so
    // the model keeps its fitting capacity.
    double l1_ffn1 = 0.001;
    double l1_ffn2 = 0.01;
};

/// Condition-gated verification plant: when the model runs under the planted
/// concept, the target layer's input channels named by the cells get a
/// constant additive boost, and the planted connections are given a dominant
/// weight so the boost has a dedicated route. Other conditions see the
/// unmodified forward pass.
struct PlantSpec {
    bool active = false;
    std::uint32_t concept_index = 0;
    ModelLayer layer = ModelLayer::Ffn2;
    std::vector<selection::Cell> cells;
    double gain = 0.0;
    double weight_value = 0.0;
};

class ToyDiffusionModel {
 public:
    ToyDiffusionModel() = default;
    ToyDiffusionModel(std::uint32_t hidden_width, std::uint32_t concept_count,
                      std::uint32_t cond_dim, std::uint64_t seed);

    std::uint32_t hidden_width() const { return hidden_width_; }
    std::uint32_t concept_count() const { return concept_count_; }
    std::uint32_t cond_dim() const { return cond_dim_; }
    /// Condition index of the null/base embedding.
    std::uint32_t base_condition() const { return concept_count_; }

    const Matrix& layer_weights(ModelLayer layer) const;
    Matrix& layer_weights(ModelLayer layer);
    /// Weights as seen under the given condition (includes the plant route).
    Matrix effective_layer_weights(ModelLayer layer, std::uint32_t condition) const;

    const PlantSpec& plant() const { return plant_; }

    struct ForwardState {
        std::vector<double> input;  // [x, condition embedding]
        std::vector<double> ffn1_in;
        std::vector<double> ffn1_out;
        std::vector<double> ffn2_in;
        std::vector<double> ffn2_out;
        Point2 eps_hat{0.0, 0.0};
    };

    std::vector<double> time_embedding(std::uint32_t timestep) const;

    void forward(const Point2& x, const std::vector<double>& time_emb, std::uint32_t condition,
                 ForwardState& state) const;

    // Weight storage is public enough for the pipeline to prune and for the
    // trainer to update; keep the layout in one place.
    Matrix embed_w;  // H × (2 + cond_dim)
    std::vector<double> embed_b;
    Matrix ffn1_w;  // H × H
    std::vector<double> ffn1_b;
    Matrix ffn2_w;  // H × H
    std::vector<double> ffn2_b;
    Matrix head_w;  // 2 × H
    std::vector<double> head_b;
    Matrix cond_embed;  // (C + 1) × cond_dim, last row = null condition

 private:
    std::uint32_t hidden_width_ = 0;
    std::uint32_t concept_count_ = 0;
    std::uint32_t cond_dim_ = 0;
    PlantSpec plant_;
    Matrix planted_weights_;  // target-layer weights with the plant route applied

    friend ToyDiffusionModel plant_concept_neurons(const ToyDiffusionModel&, std::uint32_t,
                                                   ModelLayer, const std::vector<selection::Cell>&,
                                                   double);
};

/// Per-step mean squared epsilon-prediction loss (mean over batch and the
/// two coordinates). steps == 0 leaves the model untouched.
std::vector<double> train(ToyDiffusionModel& model, const std::vector<LabeledPoint>& dataset,
                          const NoiseSchedule& schedule, const TrainParams& params,
                          std::uint64_t seed);

/// Ancestral sampling under one condition (a concept index or
/// model.base_condition()).
std::vector<Point2> sample(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                           std::uint32_t condition, std::uint32_t count, std::uint64_t seed);

/// One sampling run per prompt per group; records every target layer's input
/// at every denoising step. Trace timesteps count denoising steps: 1 is the
/// first (noisiest) step.
trace::ActivationTrace export_trace(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                                    const std::vector<std::uint32_t>& concept_indices,
                                    std::uint32_t prompts_per_group, std::uint32_t positions,
                                    const std::vector<ModelLayer>& layers, std::uint64_t seed);

ToyDiffusionModel plant_concept_neurons(const ToyDiffusionModel& model,
                                        std::uint32_t concept_index, ModelLayer layer,
                                        const std::vector<selection::Cell>& cells, double gain);

/// Median input-channel norm of a layer over one base-conditioned sampling
/// run; the yardstick for choosing plant gains.
double typical_activation_norm(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                               ModelLayer layer, std::uint32_t positions, std::uint64_t seed);

std::string concept_group_id(std::uint32_t concept_index);

void save_model(const ToyDiffusionModel& model, const std::filesystem::path& path);
ToyDiffusionModel load_model(const std::filesystem::path& path);

}  // namespace fia::toydiff
