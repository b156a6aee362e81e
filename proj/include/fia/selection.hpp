#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "fia/sensitivity.hpp"

// Converts a sensitivity map into the concept-sensitive neuron set:
// per-channel top-k, layer-global top-K, and their intersection.

namespace fia::selection {

using Cell = std::pair<std::uint32_t, std::uint32_t>;  // (output row i, input column j)

enum class Granularity { Channel, Layer, Both };

const char* granularity_name(Granularity g);
std::optional<Granularity> granularity_from_name(std::string_view name);

struct SelectionConfig {
    double r2 = 0.0;  // spatial sparsity fraction in (0, 1]
    Granularity granularity = Granularity::Both;
};

struct NeuronSet {
    std::string layer_id;
    std::string concept_id;
    std::set<Cell> members;
};

/// Per output channel, the ⌈r2·C_in⌉ strongest input indices (ties go to the
/// smaller column). Union over channels.
NeuronSet channel_candidates(const sensitivity::SensitivityMap& map, double r2);

/// The ⌈r2·C_out·C_in⌉ strongest cells over the whole layer (ties in
/// row-major order).
NeuronSet global_candidates(const sensitivity::SensitivityMap& map, double r2);

/// Channel ∩ global under Both; either set alone under the single modes.
NeuronSet select_neurons(const sensitivity::SensitivityMap& map, const SelectionConfig& config);

/// CSV rows: layer_id,concept_id,i,j
void write_neurons_csv(std::ostream& out, const NeuronSet& neurons, bool header = true);

}  // namespace fia::selection
