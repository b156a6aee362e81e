#include "fia/saliency.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "fia/kernels.hpp"
#include "fia/util.hpp"

namespace fia::saliency {

namespace {

void check_finite(const Matrix& m, const char* what) {
    const double* p = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(p[i])) {
            throw std::invalid_argument(std::string("non-finite value in ") + what);
        }
    }
}

Matrix widen(const std::vector<float>& values, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    double* p = m.data();
    for (std::size_t i = 0; i < values.size(); ++i) p[i] = static_cast<double>(values[i]);
    return m;
}

}  // namespace

Matrix unified_energy(const Matrix& weights, const Matrix& activations, double epsilon) {
    const std::size_t c_out = weights.rows();
    const std::size_t c_in = weights.cols();
    const std::size_t n = activations.rows();
    if (activations.cols() != c_in) {
        throw std::invalid_argument("unified_energy: activation columns must match C_in");
    }
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw std::invalid_argument("unified_energy: epsilon must be non-negative");
    }
    check_finite(weights, "weights");
    check_finite(activations, "activations");

    // Layer response Y = X · Wᵀ (N × C_out); bias plays no role here.
    Matrix response(n, c_out);
    for (std::size_t r = 0; r < n; ++r) {
        const double* x_row = activations.row(r);
        double* y_row = response.row(r);
        for (std::size_t i = 0; i < c_out; ++i) {
            y_row[i] = kernels::dot(x_row, weights.row(i), c_in);
        }
    }

    // Column norms of X and Y.
    std::vector<double> x_normsq(c_in, 0.0);
    std::vector<double> y_normsq(c_out, 0.0);
    for (std::size_t r = 0; r < n; ++r) kernels::add_sq(activations.row(r), x_normsq.data(), c_in);
    for (std::size_t r = 0; r < n; ++r) kernels::add_sq(response.row(r), y_normsq.data(), c_out);

    // Gram of input columns against output columns: G[j][i] = ⟨X_j, Y_i⟩,
    // accumulated as rank-1 updates so rows stay contiguous.
    Matrix gram(c_in, c_out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double* x_row = activations.row(r);
        const double* y_row = response.row(r);
        for (std::size_t j = 0; j < c_in; ++j) {
            if (x_row[j] != 0.0) kernels::axpy(x_row[j], y_row, gram.row(j), c_out);
        }
    }

    std::vector<double> x_norm(c_in), y_norm(c_out);
    for (std::size_t j = 0; j < c_in; ++j) x_norm[j] = std::sqrt(x_normsq[j]);
    for (std::size_t i = 0; i < c_out; ++i) y_norm[i] = std::sqrt(y_normsq[i]);

    Matrix energy(c_out, c_in);
    for (std::size_t i = 0; i < c_out; ++i) {
        const double* w_row = weights.row(i);
        double* u_row = energy.row(i);
        for (std::size_t j = 0; j < c_in; ++j) {
            const double denom = x_norm[j] * y_norm[i] + epsilon;
            const double numer = std::abs(w_row[j]) * x_norm[j] * std::abs(gram(j, i));
            // denom == 0 forces numer == 0 as well; keep the formula's limit.
            u_row[j] = denom > 0.0 ? numer / denom : 0.0;
        }
    }
    return energy;
}

Matrix contrastive_saliency(const std::vector<EnergySlice>& concept_slices,
                            const std::vector<EnergySlice>& base_slices, StdMode std_mode) {
    if (concept_slices.empty()) {
        throw std::invalid_argument("contrastive_saliency: need at least one concept slice");
    }
    if (base_slices.size() < 2) {
        throw std::invalid_argument(
            "contrastive_saliency: need at least two base slices (base std undefined)");
    }
    const EnergySlice& ref = concept_slices.front();
    auto check_slice = [&](const EnergySlice& s) {
        if (s.layer_id != ref.layer_id || s.timestep != ref.timestep) {
            throw std::invalid_argument("contrastive_saliency: slice layer/timestep mismatch");
        }
        if (!s.values.same_shape(ref.values)) {
            throw std::invalid_argument("contrastive_saliency: slice shape mismatch");
        }
    };
    for (const auto& s : concept_slices) check_slice(s);
    for (const auto& s : base_slices) check_slice(s);

    const std::size_t cells = ref.values.size();
    const double p_c = static_cast<double>(concept_slices.size());
    const double p_b = static_cast<double>(base_slices.size());

    std::vector<double> mean_c(cells, 0.0), mean_b(cells, 0.0), var_b(cells, 0.0);
    for (const auto& s : concept_slices) kernels::add(s.values.data(), mean_c.data(), cells);
    for (const auto& s : base_slices) kernels::add(s.values.data(), mean_b.data(), cells);
    for (std::size_t k = 0; k < cells; ++k) mean_c[k] /= p_c;
    for (std::size_t k = 0; k < cells; ++k) mean_b[k] /= p_b;

    for (const auto& s : base_slices) {
        kernels::add_sq_diff(s.values.data(), mean_b.data(), var_b.data(), cells);
    }
    const double var_denom = std_mode == StdMode::Population ? p_b : p_b - 1.0;

    Matrix out(ref.values.rows(), ref.values.cols());
    double* o = out.data();
    for (std::size_t k = 0; k < cells; ++k) {
        const double sigma_b = std::sqrt(var_b[k] / var_denom);
        o[k] = std::max(0.0, mean_c[k] - mean_b[k] - sigma_b);
    }
    return out;
}

ContrastiveSaliency saliency_for_concept(const trace::ActivationTrace& tr,
                                         const std::string& layer_id,
                                         const std::string& concept_group,
                                         const std::string& base_group, TimestepWindow window,
                                         double epsilon, StdMode std_mode) {
    const auto li = tr.layer_index(layer_id);
    const auto cgi = tr.group_index(concept_group);
    const auto bgi = tr.group_index(base_group);
    if (!window.valid_for(tr.total_timesteps())) {
        throw std::invalid_argument("saliency_for_concept: window outside [1, T]");
    }
    const auto& spec = tr.layer_spec(li);
    const auto n = tr.layer_positions(li);
    const Matrix weights = widen(tr.layer_weights(li), spec.c_out, spec.c_in);

    ContrastiveSaliency result;
    result.layer_id = layer_id;
    result.concept_id = tr.group(cgi).concept_id;
    result.epsilon = epsilon;
    result.std_mode = std_mode;

    auto energy_slices = [&](std::uint32_t timestep, const std::string& group_id,
                             std::uint32_t group_index) {
        const auto records = tr.slice_records(layer_id, timestep, group_id);
        if (records.size() != tr.group(group_index).prompt_count) {
            throw std::invalid_argument("saliency_for_concept: missing records for layer '" +
                                        layer_id + "' group '" + group_id + "' timestep " +
                                        std::to_string(timestep));
        }
        std::vector<EnergySlice> slices;
        slices.reserve(records.size());
        for (const auto* rec : records) {
            EnergySlice slice;
            slice.layer_id = layer_id;
            slice.timestep = timestep;
            slice.group_id = group_id;
            slice.prompt_index = rec->key.prompt_index;
            slice.values =
                unified_energy(weights, widen(rec->activations, n, spec.c_in), epsilon);
            slices.push_back(std::move(slice));
        }
        return slices;
    };

    for (std::uint32_t t = window.first; t <= window.last; ++t) {
        const auto concept_slices = energy_slices(t, concept_group, cgi);
        const auto base_slices = energy_slices(t, base_group, bgi);
        result.timesteps.push_back(t);
        result.slices.push_back(contrastive_saliency(concept_slices, base_slices, std_mode));
    }
    return result;
}

void write_saliency_csv(std::ostream& out, const ContrastiveSaliency& saliency, bool header) {
    if (header) out << "layer_id,concept_id,timestep,i,j,S\n";
    for (std::size_t s = 0; s < saliency.slices.size(); ++s) {
        const Matrix& m = saliency.slices[s];
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t j = 0; j < m.cols(); ++j) {
                out << saliency.layer_id << ',' << saliency.concept_id << ','
                    << saliency.timesteps[s] << ',' << i << ',' << j << ','
                    << format_double(m(i, j)) << '\n';
            }
        }
    }
}

}  // namespace fia::saliency
