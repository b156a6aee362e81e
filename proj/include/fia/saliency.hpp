#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fia/matrix.hpp"
#include "fia/trace.hpp"

// Per-connection saliency. unified_energy scores one prompt's activations
// against the layer weights; contrastive_saliency turns concept-vs-base
// statistics of those scores into the per-timestep saliency matrix S.

namespace fia::saliency {

enum class StdMode { Population, Sample };

/// Inclusive timestep range, 1-based.
struct TimestepWindow {
    std::uint32_t first = 1;
    std::uint32_t last = 1;

    std::uint32_t length() const { return last - first + 1; }
    bool valid_for(std::uint32_t total_timesteps) const {
        return first >= 1 && first <= last && last <= total_timesteps;
    }
};

/// Energy values of one (layer, timestep, prompt): a C_out × C_in matrix,
/// non-negative and finite everywhere.
struct EnergySlice {
    std::string layer_id;
    std::uint32_t timestep = 0;
    std::string group_id;
    std::uint32_t prompt_index = 0;
    Matrix values;
};

/// Timestep-indexed stack of saliency matrices for one (layer, concept).
struct ContrastiveSaliency {
    std::string layer_id;
    std::string concept_id;
    std::vector<std::uint32_t> timesteps;
    std::vector<Matrix> slices;  // aligned with timesteps
    double epsilon = 0.0;
    StdMode std_mode = StdMode::Population;
};

/// Connection energy U[i][j] = |W[i][j]| · ‖X_j‖ · |⟨X_j, Y_i⟩| / (‖X_j‖·‖Y_i‖ + ε)
/// with Y_i the layer response. weights is C_out × C_in, activations N × C_in.
Matrix unified_energy(const Matrix& weights, const Matrix& activations, double epsilon);

/// Elementwise S = max(0, μ_c − μ_b − σ_b) over prompt slices of one
/// (layer, timestep). Needs at least one concept slice and two base slices.
Matrix contrastive_saliency(const std::vector<EnergySlice>& concept_slices,
                            const std::vector<EnergySlice>& base_slices, StdMode std_mode);

/// Full per-concept saliency stack for one layer over a timestep window.
ContrastiveSaliency saliency_for_concept(const trace::ActivationTrace& trace,
                                         const std::string& layer_id,
                                         const std::string& concept_group,
                                         const std::string& base_group, TimestepWindow window,
                                         double epsilon, StdMode std_mode);

/// CSV rows: layer_id,concept_id,timestep,i,j,S
void write_saliency_csv(std::ostream& out, const ContrastiveSaliency& saliency,
                        bool header = true);

}  // namespace fia::saliency
