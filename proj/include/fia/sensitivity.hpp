#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fia/matrix.hpp"
#include "fia/saliency.hpp"

// Aggregates per-timestep saliency into the time-integrated sensitivity A:
// half average response strength, half above-threshold activation frequency,
// with thresholds adapted per timestep from the temporal sparsity r1.

namespace fia::sensitivity {

struct ThresholdTable {
    std::string layer_id;
    std::vector<std::uint32_t> timesteps;
    std::vector<double> tau;  // aligned with timesteps
    double r1 = 0.0;
};

struct SensitivityMap {
    std::string layer_id;
    std::string concept_id;
    Matrix values;  // C_out × C_in
    std::uint32_t window_length = 0;
};

/// τ per timestep = the k1-th largest saliency value with
/// k1 = ⌈r1 · C_out · C_in⌉. Equal values share a rank.
ThresholdTable compute_thresholds(const saliency::ContrastiveSaliency& saliency, double r1);

/// A[i][j] = ½·mean_t S_t[i][j] + ½·mean_t 1[S_t[i][j] > τ_t], strict inequality.
SensitivityMap integrate_time(const saliency::ContrastiveSaliency& saliency,
                              const ThresholdTable& thresholds);

/// CSV rows: layer_id,concept_id,i,j,A
void write_sensitivity_csv(std::ostream& out, const SensitivityMap& map, bool header = true);

}  // namespace fia::sensitivity
