#include "fia/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include "fia/kernels.hpp"
#include "fia/util.hpp"

namespace fia::sensitivity {

ThresholdTable compute_thresholds(const saliency::ContrastiveSaliency& sal, double r1) {
    if (!(r1 > 0.0 && r1 <= 1.0)) {
        throw std::invalid_argument("compute_thresholds: r1 must be in (0, 1]");
    }
    if (sal.slices.empty()) {
        throw std::invalid_argument("compute_thresholds: empty saliency stack");
    }
    ThresholdTable table;
    table.layer_id = sal.layer_id;
    table.timesteps = sal.timesteps;
    table.r1 = r1;
    table.tau.reserve(sal.slices.size());

    std::vector<double> buffer;
    for (const Matrix& slice : sal.slices) {
        if (slice.size() == 0) {
            throw std::invalid_argument("compute_thresholds: empty saliency matrix");
        }
        const auto k1 =
            static_cast<std::size_t>(std::ceil(r1 * static_cast<double>(slice.size())));
        buffer.assign(slice.data(), slice.data() + slice.size());
        // k1-th largest by value; ties share the rank by construction.
        std::nth_element(buffer.begin(), buffer.begin() + (k1 - 1), buffer.end(),
                         std::greater<double>());
        table.tau.push_back(buffer[k1 - 1]);
    }
    return table;
}

SensitivityMap integrate_time(const saliency::ContrastiveSaliency& sal,
                              const ThresholdTable& thresholds) {
    if (sal.slices.empty()) {
        throw std::invalid_argument("integrate_time: empty saliency stack");
    }
    if (thresholds.timesteps != sal.timesteps) {
        throw std::invalid_argument("integrate_time: threshold window mismatch");
    }
    const Matrix& first = sal.slices.front();
    const std::size_t cells = first.size();
    std::vector<double> strength(cells, 0.0);
    std::vector<double> hits(cells, 0.0);

    for (std::size_t s = 0; s < sal.slices.size(); ++s) {
        const Matrix& slice = sal.slices[s];
        if (!slice.same_shape(first)) {
            throw std::invalid_argument("integrate_time: slice shape mismatch");
        }
        kernels::add(slice.data(), strength.data(), cells);
        const double tau = thresholds.tau[s];
        const double* p = slice.data();
        for (std::size_t k = 0; k < cells; ++k) {
            if (p[k] > tau) hits[k] += 1.0;
        }
    }

    const double window = static_cast<double>(sal.slices.size());
    SensitivityMap map;
    map.layer_id = sal.layer_id;
    map.concept_id = sal.concept_id;
    map.window_length = static_cast<std::uint32_t>(sal.slices.size());
    map.values = Matrix(first.rows(), first.cols());
    double* out = map.values.data();
    for (std::size_t k = 0; k < cells; ++k) {
        out[k] = 0.5 * (strength[k] / window) + 0.5 * (hits[k] / window);
    }
    return map;
}

void write_sensitivity_csv(std::ostream& out, const SensitivityMap& map, bool header) {
    if (header) out << "layer_id,concept_id,i,j,A\n";
    for (std::size_t i = 0; i < map.values.rows(); ++i) {
        for (std::size_t j = 0; j < map.values.cols(); ++j) {
            out << map.layer_id << ',' << map.concept_id << ',' << i << ',' << j << ','
                << format_double(map.values(i, j)) << '\n';
        }
    }
}

}  // namespace fia::sensitivity
