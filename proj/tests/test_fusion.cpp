#include "doctest.h"

#include <cmath>
#include <sstream>

#include "fia/fusion.hpp"
#include "fia/rng.hpp"

using namespace fia;
using namespace fia::fusion;

namespace {

ConceptMask mask_from_cells(const std::set<Cell>& cells, std::uint32_t c_out,
                            std::uint32_t c_in, const std::string& concept_id = "c") {
    selection::NeuronSet set{"L", concept_id, cells};
    return build_mask(set, c_out, c_in);
}

std::vector<ConceptMask> random_masks(fia::Rng& rng, std::uint32_t count, std::uint32_t c_out,
                                      std::uint32_t c_in, double density) {
    std::vector<ConceptMask> masks;
    for (std::uint32_t c = 0; c < count; ++c) {
        std::set<Cell> cells;
        for (std::uint32_t i = 0; i < c_out; ++i) {
            for (std::uint32_t j = 0; j < c_in; ++j) {
                if (rng.uniform() < density) cells.emplace(i, j);
            }
        }
        masks.push_back(mask_from_cells(cells, c_out, c_in, "c" + std::to_string(c)));
    }
    return masks;
}

}  // namespace

TEST_CASE("build_mask is the exact indicator") {
    CHECK(mask_from_cells({}, 2, 2).mask == std::vector<std::uint8_t>{0, 0, 0, 0});
    CHECK(mask_from_cells({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, 2, 2).mask ==
          std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(mask_from_cells({{0, 0}, {1, 1}}, 2, 2).mask == std::vector<std::uint8_t>{1, 0, 0, 1});
    CHECK_THROWS_AS(mask_from_cells({{2, 0}}, 2, 2), std::out_of_range);
}

TEST_CASE("tau_ca follows the ceiling rule") {
    fia::Rng rng(1);
    auto masks = random_masks(rng, 10, 3, 3, 0.4);
    CHECK(fuse_masks(masks, 0.6).tau_ca == 6);
    CHECK(fuse_masks(masks, 1.0).tau_ca == 10);
    CHECK(fuse_masks(masks, 0.05).tau_ca == 1);
    CHECK(fuse_masks(masks, 0.11).tau_ca == 2);
}

TEST_CASE("hand-enumerated three-concept example") {
    const auto m1 = mask_from_cells({{0, 0}, {0, 1}}, 2, 2, "c1");
    const auto m2 = mask_from_cells({{0, 0}, {1, 1}}, 2, 2, "c2");
    const auto m3 = mask_from_cells({{0, 0}}, 2, 2, "c3");
    const auto plan = fuse_masks({m1, m2, m3}, 0.6);

    CHECK(plan.tau_ca == 2);
    CHECK(plan.count_at(0, 0) == 3);
    CHECK(plan.count_at(0, 1) == 1);
    CHECK(plan.count_at(1, 1) == 1);
    CHECK(plan.count_at(1, 0) == 0);
    CHECK(plan.agnostic_set == std::set<Cell>{{0, 0}});
    CHECK(plan.prune_set == std::set<Cell>{{0, 1}, {1, 1}});

    SUBCASE("apply_plan zeroes exactly the pruned cells") {
        const Matrix w = Matrix::from_rows({{1.5, -2.5}, {3.5, 4.5}});
        const Matrix pruned = apply_plan(w, plan);
        CHECK(pruned(0, 0) == 1.5);
        CHECK(pruned(0, 1) == 0.0);
        CHECK(pruned(1, 0) == 3.5);
        CHECK(pruned(1, 1) == 0.0);
    }

    SUBCASE("naive union prunes all touched cells") {
        const auto naive = naive_union_plan({m1, m2, m3});
        CHECK(naive.prune_set == std::set<Cell>{{0, 0}, {0, 1}, {1, 1}});
        CHECK(naive.agnostic_set.empty());
    }
}

TEST_CASE("unanimity threshold keeps only cells selected by every concept") {
    const auto m1 = mask_from_cells({{0, 0}, {0, 1}}, 2, 2, "c1");
    const auto m2 = mask_from_cells({{0, 0}, {1, 0}}, 2, 2, "c2");
    const auto plan = fuse_masks({m1, m2}, 1.0);
    CHECK(plan.tau_ca == 2);
    CHECK(plan.agnostic_set == std::set<Cell>{{0, 0}});
    CHECK(plan.prune_set == std::set<Cell>{{0, 1}, {1, 0}});
}

TEST_CASE("identical masks are fully concept-agnostic and nothing is pruned") {
    const auto m = mask_from_cells({{0, 1}, {1, 0}}, 2, 2);
    const auto plan = fuse_masks({m, m, m}, 0.9);
    CHECK(plan.prune_set.empty());
    const Matrix w = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(apply_plan(w, plan) == w);
}

TEST_CASE("empty prune set leaves weights bit-identical") {
    const auto plan = naive_union_plan({mask_from_cells({}, 2, 3)});
    const Matrix w = Matrix::from_rows({{-0.0, 1.0, 2.0}, {0.25, -1.0, 5.0}});
    CHECK(apply_plan(w, plan) == w);
}

TEST_CASE("naive union of a single mask prunes that mask") {
    const auto m = mask_from_cells({{0, 0}, {1, 2}}, 2, 3);
    const auto naive = naive_union_plan({m});
    CHECK(naive.prune_set == std::set<Cell>{{0, 0}, {1, 2}});
    const auto direct = direct_prune_plan(m);
    CHECK(direct.prune_set == naive.prune_set);
}

TEST_CASE("all-empty masks make an empty plan") {
    const auto naive =
        naive_union_plan({mask_from_cells({}, 2, 2, "a"), mask_from_cells({}, 2, 2, "b")});
    CHECK(naive.prune_set.empty());
    CHECK(naive.agnostic_set.empty());
}

TEST_CASE("fuse_masks validates its inputs") {
    const auto m = mask_from_cells({{0, 0}}, 2, 2);
    CHECK_THROWS_AS(fuse_masks({m}, 0.6), std::invalid_argument);
    CHECK_THROWS_AS(fuse_masks({}, 0.6), std::invalid_argument);
    CHECK_THROWS_AS(fuse_masks({m, m}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fuse_masks({m, m}, 1.5), std::invalid_argument);
    const auto other_shape = mask_from_cells({{0, 0}}, 2, 3);
    CHECK_THROWS_AS(fuse_masks({m, other_shape}, 0.6), std::invalid_argument);
    CHECK_THROWS_AS(apply_plan(Matrix(3, 3), fuse_masks({m, m}, 0.6)), std::invalid_argument);
}

TEST_CASE("fusion properties over random mask ensembles") {
    fia::Rng rng(202);
    for (int it = 0; it < 200; ++it) {
        const auto c = static_cast<std::uint32_t>(2 + rng.uniform_index(6));
        const auto c_out = static_cast<std::uint32_t>(1 + rng.uniform_index(5));
        const auto c_in = static_cast<std::uint32_t>(1 + rng.uniform_index(5));
        const auto masks = random_masks(rng, c, c_out, c_in, rng.uniform(0.1, 0.9));
        const double alpha_low = rng.uniform(0.05, 0.95);
        const double alpha_high = rng.uniform(alpha_low, 1.0);

        const auto plan_low = fuse_masks(masks, alpha_low);
        const auto plan_high = fuse_masks(masks, alpha_high);
        const auto naive = naive_union_plan(masks);

        // Raising alpha never grows the agnostic set and never shrinks the prune set.
        CHECK(std::includes(plan_low.agnostic_set.begin(), plan_low.agnostic_set.end(),
                            plan_high.agnostic_set.begin(), plan_high.agnostic_set.end()));
        CHECK(std::includes(plan_high.prune_set.begin(), plan_high.prune_set.end(),
                            plan_low.prune_set.begin(), plan_low.prune_set.end()));

        // Fused pruning is always a subset of the naive union.
        CHECK(std::includes(naive.prune_set.begin(), naive.prune_set.end(),
                            plan_low.prune_set.begin(), plan_low.prune_set.end()));

        // Partition: prune, agnostic and untouched cells cover the layer.
        std::size_t touched = 0;
        for (std::uint32_t s : plan_low.counts) {
            if (s > 0) ++touched;
        }
        CHECK(plan_low.prune_set.size() + plan_low.agnostic_set.size() == touched);
        for (const auto& cell : plan_low.prune_set) {
            CHECK(plan_low.agnostic_set.count(cell) == 0);
        }

        // Idempotence of application.
        Matrix w(c_out, c_in, 1.0);
        const Matrix once = apply_plan(w, plan_low);
        CHECK(apply_plan(once, plan_low) == once);
    }
}

TEST_CASE("plan json round-trips the decision content") {
    const auto m1 = mask_from_cells({{0, 0}, {0, 1}}, 2, 2, "c1");
    const auto m2 = mask_from_cells({{0, 0}, {1, 1}}, 2, 2, "c2");
    const auto m3 = mask_from_cells({{0, 0}}, 2, 2, "c3");
    const auto plan = fuse_masks({m1, m2, m3}, 0.6);
    const auto j = plan_to_json(plan);

    CHECK(j.at("layer_id") == "L");
    CHECK(j.at("tau_ca") == 2);
    CHECK(j.at("counts_histogram").at("1") == 2);
    CHECK(j.at("counts_histogram").at("3") == 1);

    const auto back = plan_from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.layer_id == plan.layer_id);
    CHECK(back.c_out == plan.c_out);
    CHECK(back.c_in == plan.c_in);
    CHECK(back.alpha == plan.alpha);
    CHECK(back.tau_ca == plan.tau_ca);
    CHECK(back.concept_total == plan.concept_total);
    CHECK(back.prune_set == plan.prune_set);
    CHECK(back.agnostic_set == plan.agnostic_set);
}
