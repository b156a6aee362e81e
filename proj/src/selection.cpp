#include "fia/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace fia::selection {

namespace {

void check_r2(double r2) {
    if (!(r2 > 0.0 && r2 <= 1.0)) {
        throw std::invalid_argument("selection: r2 must be in (0, 1]");
    }
}

void check_map(const sensitivity::SensitivityMap& map) {
    if (map.values.size() == 0) {
        throw std::invalid_argument("selection: empty sensitivity map");
    }
}

std::size_t ceil_fraction(double fraction, std::size_t count) {
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count)));
    return std::min(std::max<std::size_t>(k, 1), count);
}

}  // namespace

const char* granularity_name(Granularity g) {
    switch (g) {
        case Granularity::Channel: return "channel";
        case Granularity::Layer: return "layer";
        case Granularity::Both: return "both";
    }
    return "both";
}

std::optional<Granularity> granularity_from_name(std::string_view name) {
    if (name == "channel" || name == "CHANNEL") return Granularity::Channel;
    if (name == "layer" || name == "LAYER") return Granularity::Layer;
    if (name == "both" || name == "BOTH") return Granularity::Both;
    return std::nullopt;
}

NeuronSet channel_candidates(const sensitivity::SensitivityMap& map, double r2) {
    check_r2(r2);
    check_map(map);
    const Matrix& a = map.values;
    const std::size_t c_in = a.cols();
    const std::size_t k = ceil_fraction(r2, c_in);

    NeuronSet out{map.layer_id, map.concept_id, {}};
    std::vector<std::uint32_t> order(c_in);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* row = a.row(i);
        std::iota(order.begin(), order.end(), 0u);
        std::partial_sort(order.begin(), order.begin() + k, order.end(),
                          [row](std::uint32_t lhs, std::uint32_t rhs) {
                              if (row[lhs] != row[rhs]) return row[lhs] > row[rhs];
                              return lhs < rhs;  // ties to the smaller column
                          });
        for (std::size_t m = 0; m < k; ++m) {
            out.members.emplace(static_cast<std::uint32_t>(i), order[m]);
        }
    }
    return out;
}

NeuronSet global_candidates(const sensitivity::SensitivityMap& map, double r2) {
    check_r2(r2);
    check_map(map);
    const Matrix& a = map.values;
    const std::size_t cells = a.size();
    const std::size_t k_g = ceil_fraction(r2, cells);

    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), 0u);
    const double* p = a.data();
    std::partial_sort(order.begin(), order.begin() + k_g, order.end(),
                      [p](std::size_t lhs, std::size_t rhs) {
                          if (p[lhs] != p[rhs]) return p[lhs] > p[rhs];
                          return lhs < rhs;  // ties in row-major order
                      });

    NeuronSet out{map.layer_id, map.concept_id, {}};
    for (std::size_t m = 0; m < k_g; ++m) {
        out.members.emplace(static_cast<std::uint32_t>(order[m] / a.cols()),
                            static_cast<std::uint32_t>(order[m] % a.cols()));
    }
    return out;
}

NeuronSet select_neurons(const sensitivity::SensitivityMap& map, const SelectionConfig& config) {
    switch (config.granularity) {
        case Granularity::Channel:
            return channel_candidates(map, config.r2);
        case Granularity::Layer:
            return global_candidates(map, config.r2);
        case Granularity::Both: {
            const NeuronSet local = channel_candidates(map, config.r2);
            const NeuronSet global = global_candidates(map, config.r2);
            NeuronSet out{map.layer_id, map.concept_id, {}};
            std::set_intersection(local.members.begin(), local.members.end(),
                                  global.members.begin(), global.members.end(),
                                  std::inserter(out.members, out.members.begin()));
            return out;
        }
    }
    throw std::invalid_argument("select_neurons: invalid granularity");
}

void write_neurons_csv(std::ostream& out, const NeuronSet& neurons, bool header) {
    if (header) out << "layer_id,concept_id,i,j\n";
    for (const auto& [i, j] : neurons.members) {
        out << neurons.layer_id << ',' << neurons.concept_id << ',' << i << ',' << j << '\n';
    }
}

}  // namespace fia::selection
