#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "fia/matrix.hpp"
#include "fia/selection.hpp"

#include "json.hpp"

// Per-concept binary masks and the multi-concept fusion rule: neurons hit by
// at least ⌈αC⌉ concepts are concept-agnostic and kept; neurons hit by fewer
// (but at least one) are pruned.

namespace fia::fusion {

using selection::Cell;

struct ConceptMask {
    std::string layer_id;
    std::string concept_id;
    std::uint32_t c_out = 0;
    std::uint32_t c_in = 0;
    std::vector<std::uint8_t> mask;  // C_out × C_in indicator, row-major

    bool at(std::uint32_t i, std::uint32_t j) const {
        return mask[static_cast<std::size_t>(i) * c_in + j] != 0;
    }
};

struct FusedMaskPlan {
    std::string layer_id;
    std::uint32_t c_out = 0;
    std::uint32_t c_in = 0;
    std::vector<std::uint32_t> counts;  // per-cell concept hit count s
    std::uint32_t concept_total = 0;    // C
    double alpha = 0.0;
    std::uint32_t tau_ca = 0;           // ⌈α·C⌉
    std::set<Cell> prune_set;           // 0 < s < τ_ca
    std::set<Cell> agnostic_set;        // s ≥ τ_ca

    std::uint32_t count_at(std::uint32_t i, std::uint32_t j) const {
        return counts[static_cast<std::size_t>(i) * c_in + j];
    }
};

/// Exact indicator matrix of a neuron set.
ConceptMask build_mask(const selection::NeuronSet& neurons, std::uint32_t c_out,
                       std::uint32_t c_in);

/// Fuses C ≥ 2 same-layer masks under the concept-agnostic threshold
/// τ_ca = ⌈α·C⌉. Warns on τ_ca ≤ 1 (every touched neuron would be kept).
FusedMaskPlan fuse_masks(const std::vector<ConceptMask>& masks, double alpha);

/// Baseline fusion: prune every neuron selected by at least one concept.
FusedMaskPlan naive_union_plan(const std::vector<ConceptMask>& masks);

/// Single-concept degenerate case: prune the mask's cells directly,
/// bypassing the agnostic threshold.
FusedMaskPlan direct_prune_plan(const ConceptMask& mask);

/// Copy of the weights with prune-set entries zeroed; everything else is
/// bit-identical. Agnostic cells are never zeroed.
Matrix apply_plan(const Matrix& weights, const FusedMaskPlan& plan);

nlohmann::ordered_json plan_to_json(const FusedMaskPlan& plan);
FusedMaskPlan plan_from_json(const nlohmann::json& j);

}  // namespace fia::fusion
