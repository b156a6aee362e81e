#include "fia/fusion.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

namespace fia::fusion {

namespace {

const char* strategy_name(std::uint32_t concept_total, std::uint32_t tau_ca) {
    if (concept_total == 1) return "direct";
    if (tau_ca == concept_total + 1) return "naive";
    return "fused";
}

void partition(FusedMaskPlan& plan) {
    for (std::uint32_t i = 0; i < plan.c_out; ++i) {
        for (std::uint32_t j = 0; j < plan.c_in; ++j) {
            const std::uint32_t s = plan.count_at(i, j);
            if (s == 0) continue;
            if (s >= plan.tau_ca) {
                plan.agnostic_set.emplace(i, j);
            } else {
                plan.prune_set.emplace(i, j);
            }
        }
    }
}

FusedMaskPlan accumulate(const std::vector<ConceptMask>& masks) {
    const ConceptMask& ref = masks.front();
    FusedMaskPlan plan;
    plan.layer_id = ref.layer_id;
    plan.c_out = ref.c_out;
    plan.c_in = ref.c_in;
    plan.concept_total = static_cast<std::uint32_t>(masks.size());
    plan.counts.assign(static_cast<std::size_t>(ref.c_out) * ref.c_in, 0u);
    for (const ConceptMask& m : masks) {
        if (m.layer_id != ref.layer_id || m.c_out != ref.c_out || m.c_in != ref.c_in) {
            throw std::invalid_argument("fusion: mask layer/shape mismatch");
        }
        if (m.mask.size() != plan.counts.size()) {
            throw std::invalid_argument("fusion: mask size mismatch");
        }
        for (std::size_t k = 0; k < m.mask.size(); ++k) {
            plan.counts[k] += m.mask[k] != 0 ? 1u : 0u;
        }
    }
    return plan;
}

}  // namespace

ConceptMask build_mask(const selection::NeuronSet& neurons, std::uint32_t c_out,
                       std::uint32_t c_in) {
    ConceptMask mask;
    mask.layer_id = neurons.layer_id;
    mask.concept_id = neurons.concept_id;
    mask.c_out = c_out;
    mask.c_in = c_in;
    mask.mask.assign(static_cast<std::size_t>(c_out) * c_in, 0u);
    for (const auto& [i, j] : neurons.members) {
        if (i >= c_out || j >= c_in) {
            throw std::out_of_range("build_mask: neuron index outside layer shape");
        }
        mask.mask[static_cast<std::size_t>(i) * c_in + j] = 1u;
    }
    return mask;
}

FusedMaskPlan fuse_masks(const std::vector<ConceptMask>& masks, double alpha) {
    if (masks.size() < 2) {
        throw std::invalid_argument(
            "fuse_masks: needs at least two concept masks; prune a single mask directly");
    }
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("fuse_masks: alpha must be in (0, 1]");
    }
    FusedMaskPlan plan = accumulate(masks);
    plan.alpha = alpha;
    plan.tau_ca = static_cast<std::uint32_t>(
        std::ceil(alpha * static_cast<double>(plan.concept_total)));
    if (plan.tau_ca <= 1) {
        std::cerr << "warning: concept-agnostic threshold is " << plan.tau_ca
                  << "; every selected neuron counts as agnostic and nothing gets pruned\n";
    }
    partition(plan);
    return plan;
}

FusedMaskPlan naive_union_plan(const std::vector<ConceptMask>& masks) {
    if (masks.empty()) {
        throw std::invalid_argument("naive_union_plan: needs at least one mask");
    }
    FusedMaskPlan plan = accumulate(masks);
    plan.alpha = 1.0;
    // Threshold above the reachable count: every touched neuron is pruned.
    plan.tau_ca = plan.concept_total + 1;
    partition(plan);
    return plan;
}

FusedMaskPlan direct_prune_plan(const ConceptMask& mask) {
    FusedMaskPlan plan = accumulate({mask});
    plan.alpha = 1.0;
    plan.tau_ca = 2;  // s can only reach 1, so the whole mask is pruned
    partition(plan);
    return plan;
}

Matrix apply_plan(const Matrix& weights, const FusedMaskPlan& plan) {
    if (weights.rows() != plan.c_out || weights.cols() != plan.c_in) {
        throw std::invalid_argument("apply_plan: weight shape does not match plan");
    }
    Matrix out = weights;
    for (const auto& [i, j] : plan.prune_set) out(i, j) = 0.0;
    return out;
}

nlohmann::ordered_json plan_to_json(const FusedMaskPlan& plan) {
    nlohmann::ordered_json j;
    j["layer_id"] = plan.layer_id;
    j["c_out"] = plan.c_out;
    j["c_in"] = plan.c_in;
    j["alpha"] = plan.alpha;
    j["tau_ca"] = plan.tau_ca;
    j["concept_total"] = plan.concept_total;
    j["strategy"] = strategy_name(plan.concept_total, plan.tau_ca);

    auto cells_to_json = [](const std::set<Cell>& cells) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& [i, j_] : cells) arr.push_back({i, j_});
        return arr;
    };
    j["prune"] = cells_to_json(plan.prune_set);
    j["agnostic"] = cells_to_json(plan.agnostic_set);

    std::map<std::uint32_t, std::uint32_t> histogram;
    for (std::uint32_t s : plan.counts) {
        if (s > 0) ++histogram[s];
    }
    nlohmann::ordered_json hist = nlohmann::ordered_json::object();
    for (const auto& [s, count] : histogram) hist[std::to_string(s)] = count;
    j["counts_histogram"] = hist;
    return j;
}

FusedMaskPlan plan_from_json(const nlohmann::json& j) {
    FusedMaskPlan plan;
    plan.layer_id = j.at("layer_id").get<std::string>();
    plan.c_out = j.at("c_out").get<std::uint32_t>();
    plan.c_in = j.at("c_in").get<std::uint32_t>();
    plan.alpha = j.at("alpha").get<double>();
    plan.tau_ca = j.at("tau_ca").get<std::uint32_t>();
    plan.concept_total = j.at("concept_total").get<std::uint32_t>();
    // Per-cell counts are summarized as a histogram in the document, so the
    // reconstruction keeps only what downstream stages use: membership.
    plan.counts.assign(static_cast<std::size_t>(plan.c_out) * plan.c_in, 0u);
    auto read_cells = [&](const char* key, std::set<Cell>& into, std::uint32_t count_value) {
        for (const auto& cell : j.at(key)) {
            const auto i = cell.at(0).get<std::uint32_t>();
            const auto jj = cell.at(1).get<std::uint32_t>();
            if (i >= plan.c_out || jj >= plan.c_in) {
                throw std::invalid_argument("plan_from_json: cell outside layer shape");
            }
            into.emplace(i, jj);
            plan.counts[static_cast<std::size_t>(i) * plan.c_in + jj] = count_value;
        }
    };
    read_cells("prune", plan.prune_set, 1u);
    read_cells("agnostic", plan.agnostic_set, plan.tau_ca);
    return plan;
}

}  // namespace fia::fusion
