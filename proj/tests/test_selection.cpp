#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "fia/rng.hpp"
#include "fia/selection.hpp"
#include "oracles.hpp"

using namespace fia;
using namespace fia::selection;

namespace {

sensitivity::SensitivityMap make_map(Matrix values) {
    sensitivity::SensitivityMap map;
    map.layer_id = "L";
    map.concept_id = "c";
    map.window_length = 1;
    map.values = std::move(values);
    return map;
}

const Matrix kSpecExample =
    Matrix::from_rows({{0.9, 0.85, 0.1, 0.1}, {0.3, 0.2, 0.1, 0.05}});

bool subset_of(const std::set<Cell>& small, const std::set<Cell>& big) {
    return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

}  // namespace

TEST_CASE("r2 = 1 selects everything in every mode") {
    const auto map = make_map(kSpecExample);
    for (Granularity g : {Granularity::Channel, Granularity::Layer, Granularity::Both}) {
        const auto set = select_neurons(map, {1.0, g});
        CHECK(set.members.size() == 8);
    }
}

TEST_CASE("channel candidates: spec example at r2 = 0.25") {
    const auto set = channel_candidates(make_map(kSpecExample), 0.25);
    CHECK(set.members == std::set<Cell>{{0, 0}, {1, 0}});
}

TEST_CASE("global candidates: spec example at r2 = 0.25") {
    const auto set = global_candidates(make_map(kSpecExample), 0.25);
    CHECK(set.members == std::set<Cell>{{0, 0}, {0, 1}});
}

TEST_CASE("intersection: spec example at r2 = 0.25") {
    const auto set = select_neurons(make_map(kSpecExample), {0.25, Granularity::Both});
    CHECK(set.members == std::set<Cell>{{0, 0}});
}

TEST_CASE("all-equal row breaks ties toward column zero") {
    const auto set = channel_candidates(make_map(Matrix(1, 4, 0.5)), 0.25);
    CHECK(set.members == std::set<Cell>{{0, 0}});
}

TEST_CASE("single-cell layer is selected at any r2") {
    for (double r2 : {0.01, 0.5, 1.0}) {
        const auto set = global_candidates(make_map(Matrix(1, 1, 0.0)), r2);
        CHECK(set.members == std::set<Cell>{{0, 0}});
    }
}

TEST_CASE("channel and global match sort oracles on random maps") {
    fia::Rng rng(55);
    for (int it = 0; it < 40; ++it) {
        const auto c_out = 1 + rng.uniform_index(6);
        const auto c_in = 1 + rng.uniform_index(6);
        const auto map = make_map(oracles::random_matrix(rng, c_out, c_in, 0.0, 1.0));
        const double r2 = rng.uniform(0.05, 1.0);

        const auto local = channel_candidates(map, r2);
        const auto k = static_cast<std::size_t>(
            std::ceil(r2 * static_cast<double>(c_in)));
        std::set<Cell> expected_local;
        for (std::size_t i = 0; i < c_out; ++i) {
            std::vector<double> row(map.values.row(i), map.values.row(i) + c_in);
            for (std::size_t j : oracles::top_k_indices(row, k)) {
                expected_local.emplace(static_cast<std::uint32_t>(i),
                                       static_cast<std::uint32_t>(j));
            }
        }
        CHECK(local.members == expected_local);

        const auto global = global_candidates(map, r2);
        std::vector<double> flat(map.values.data(), map.values.data() + map.values.size());
        const auto k_g = static_cast<std::size_t>(
            std::ceil(r2 * static_cast<double>(flat.size())));
        std::set<Cell> expected_global;
        for (std::size_t idx : oracles::top_k_indices(flat, k_g)) {
            expected_global.emplace(static_cast<std::uint32_t>(idx / c_in),
                                    static_cast<std::uint32_t>(idx % c_in));
        }
        CHECK(global.members == expected_global);

        const auto both = select_neurons(map, {r2, Granularity::Both});
        CHECK(subset_of(both.members, local.members));
        CHECK(subset_of(both.members, global.members));
        CHECK(both.members.size() <= std::min(local.members.size(), global.members.size()));

        // Cardinality bounds.
        CHECK(local.members.size() <= c_out * k);
        CHECK(global.members.size() == std::min(k_g, flat.size()));
    }
}

TEST_CASE("selection is monotone in r2") {
    fia::Rng rng(66);
    for (int it = 0; it < 20; ++it) {
        const auto map = make_map(oracles::random_matrix(rng, 5, 7, 0.0, 1.0));
        const double r_small = rng.uniform(0.05, 0.5);
        const double r_large = rng.uniform(r_small, 1.0);
        for (Granularity g : {Granularity::Channel, Granularity::Layer, Granularity::Both}) {
            const auto small = select_neurons(map, {r_small, g});
            const auto large = select_neurons(map, {r_large, g});
            CHECK(subset_of(small.members, large.members));
        }
    }
}

TEST_CASE("selection is invariant under strictly increasing transforms") {
    fia::Rng rng(67);
    const auto map = make_map(oracles::random_matrix(rng, 4, 6, 0.0, 2.0));
    Matrix transformed = map.values;
    for (std::size_t k = 0; k < transformed.size(); ++k) {
        transformed.data()[k] = std::exp(2.0 * transformed.data()[k]) + 1.0;
    }
    const auto t_map = make_map(transformed);
    for (double r2 : {0.1, 0.3, 0.8}) {
        for (Granularity g : {Granularity::Channel, Granularity::Layer, Granularity::Both}) {
            CHECK(select_neurons(map, {r2, g}).members ==
                  select_neurons(t_map, {r2, g}).members);
        }
    }
}

TEST_CASE("equal inputs give equal selections") {
    fia::Rng rng(68);
    const auto map = make_map(oracles::random_matrix(rng, 3, 5, 0.0, 1.0));
    const auto a = select_neurons(map, {0.3, Granularity::Both});
    const auto b = select_neurons(map, {0.3, Granularity::Both});
    CHECK(a.members == b.members);
}

TEST_CASE("invalid r2 rejected") {
    const auto map = make_map(Matrix(2, 2, 0.0));
    CHECK_THROWS_AS(channel_candidates(map, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(global_candidates(map, 1.0001), std::invalid_argument);
}
