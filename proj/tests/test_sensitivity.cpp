#include "doctest.h"

#include <algorithm>

#include "fia/rng.hpp"
#include "fia/sensitivity.hpp"
#include "oracles.hpp"

using namespace fia;
using namespace fia::sensitivity;

namespace {

saliency::ContrastiveSaliency make_stack(std::vector<Matrix> slices) {
    saliency::ContrastiveSaliency s;
    s.layer_id = "L";
    s.concept_id = "c";
    for (std::size_t i = 0; i < slices.size(); ++i) {
        s.timesteps.push_back(static_cast<std::uint32_t>(i + 1));
    }
    s.slices = std::move(slices);
    return s;
}

}  // namespace

TEST_CASE("threshold at r1 = 1 is the matrix minimum") {
    const auto stack = make_stack({Matrix::from_rows({{4.0, 3.0}, {2.0, 1.0}})});
    const auto table = compute_thresholds(stack, 1.0);
    CHECK(table.tau.size() == 1);
    CHECK(table.tau[0] == 1.0);
}

TEST_CASE("threshold picks the k1-th largest value") {
    const auto stack = make_stack({Matrix::from_rows({{4.0, 3.0}, {2.0, 1.0}})});
    CHECK(compute_thresholds(stack, 0.25).tau[0] == 4.0);
    CHECK(compute_thresholds(stack, 0.5).tau[0] == 3.0);
    CHECK(compute_thresholds(stack, 0.75).tau[0] == 2.0);
}

TEST_CASE("all-equal matrix thresholds to that value for any r1") {
    const auto stack = make_stack({Matrix(3, 3, 0.7)});
    for (double r1 : {0.1, 0.4, 1.0}) {
        CHECK(compute_thresholds(stack, r1).tau[0] == 0.7);
    }
}

TEST_CASE("threshold matches a full-sort oracle on random stacks") {
    fia::Rng rng(77);
    for (int it = 0; it < 30; ++it) {
        const auto rows = 1 + rng.uniform_index(6);
        const auto cols = 1 + rng.uniform_index(6);
        const auto steps = 1 + rng.uniform_index(5);
        std::vector<Matrix> slices;
        for (std::uint64_t s = 0; s < steps; ++s) {
            slices.push_back(oracles::random_matrix(rng, rows, cols, 0.0, 1.0));
        }
        const double r1 = rng.uniform(0.05, 1.0);
        const auto stack = make_stack(std::move(slices));
        const auto table = compute_thresholds(stack, r1);
        for (std::size_t s = 0; s < stack.slices.size(); ++s) {
            const Matrix& m = stack.slices[s];
            std::vector<double> flat(m.data(), m.data() + m.size());
            const auto k1 = static_cast<std::size_t>(
                std::ceil(r1 * static_cast<double>(flat.size())));
            CHECK(table.tau[s] == oracles::kth_largest(flat, k1));
        }
    }
}

TEST_CASE("integration: constant saliency above threshold") {
    // S constant c > tau at every step -> A = c/2 + 1/2.
    const double c = 0.8;
    auto stack = make_stack({Matrix(2, 2, c), Matrix(2, 2, c), Matrix(2, 2, c)});
    ThresholdTable table{"L", {1, 2, 3}, {0.1, 0.2, 0.3}, 0.5};
    const auto map = integrate_time(stack, table);
    CHECK(map.window_length == 3);
    for (std::size_t k = 0; k < map.values.size(); ++k) {
        CHECK(map.values.data()[k] == doctest::Approx(c / 2.0 + 0.5));
    }
}

TEST_CASE("integration: all-zero saliency stays zero under strict inequality") {
    auto stack = make_stack({Matrix(2, 2, 0.0), Matrix(2, 2, 0.0)});
    ThresholdTable table{"L", {1, 2}, {0.0, 0.0}, 0.5};
    const auto map = integrate_time(stack, table);
    for (std::size_t k = 0; k < map.values.size(); ++k) CHECK(map.values.data()[k] == 0.0);
}

TEST_CASE("integration: direct evaluation example") {
    Matrix s1(1, 1, 0.4), s2(1, 1, 0.1);
    auto stack = make_stack({s1, s2});
    ThresholdTable table{"L", {1, 2}, {0.3, 0.3}, 0.5};
    const auto map = integrate_time(stack, table);
    CHECK(map.values(0, 0) == doctest::Approx(0.375).epsilon(1e-15));
}

TEST_CASE("integration rejects mismatched windows") {
    auto stack = make_stack({Matrix(1, 1, 0.1)});
    ThresholdTable table{"L", {1, 2}, {0.0, 0.0}, 0.5};
    CHECK_THROWS_AS(integrate_time(stack, table), std::invalid_argument);
}

TEST_CASE("A stays within [0, max_S/2 + 1/2] and frequency half within [0, 1/2]") {
    fia::Rng rng(13);
    for (int it = 0; it < 20; ++it) {
        const auto steps = 1 + rng.uniform_index(6);
        std::vector<Matrix> slices;
        double max_s = 0.0;
        for (std::uint64_t s = 0; s < steps; ++s) {
            slices.push_back(oracles::random_matrix(rng, 3, 4, 0.0, 2.0));
            for (std::size_t k = 0; k < slices.back().size(); ++k) {
                max_s = std::max(max_s, slices.back().data()[k]);
            }
        }
        const auto stack = make_stack(std::move(slices));
        const auto table = compute_thresholds(stack, 0.3);
        const auto map = integrate_time(stack, table);
        for (std::size_t k = 0; k < map.values.size(); ++k) {
            CHECK(map.values.data()[k] >= 0.0);
            CHECK(map.values.data()[k] <= max_s / 2.0 + 0.5 + 1e-12);
        }
    }
}

TEST_CASE("raising r1 never lowers any A value") {
    fia::Rng rng(29);
    std::vector<Matrix> slices;
    for (int s = 0; s < 5; ++s) slices.push_back(oracles::random_matrix(rng, 4, 4, 0.0, 1.0));
    const auto stack = make_stack(std::move(slices));
    const auto low = integrate_time(stack, compute_thresholds(stack, 0.2));
    const auto high = integrate_time(stack, compute_thresholds(stack, 0.8));
    for (std::size_t k = 0; k < low.values.size(); ++k) {
        CHECK(high.values.data()[k] >= low.values.data()[k] - 1e-15);
    }
}

TEST_CASE("permuting cells permutes A identically") {
    fia::Rng rng(31);
    std::vector<Matrix> slices;
    for (int s = 0; s < 3; ++s) slices.push_back(oracles::random_matrix(rng, 2, 3, 0.0, 1.0));
    const auto stack = make_stack(slices);
    const auto base_map = integrate_time(stack, compute_thresholds(stack, 0.4));

    // Reverse the flattened cell order in every slice.
    std::vector<Matrix> reversed;
    for (const Matrix& m : slices) {
        Matrix r(2, 3);
        for (std::size_t k = 0; k < m.size(); ++k) {
            r.data()[m.size() - 1 - k] = m.data()[k];
        }
        reversed.push_back(r);
    }
    const auto rev_stack = make_stack(std::move(reversed));
    const auto rev_map = integrate_time(rev_stack, compute_thresholds(rev_stack, 0.4));
    for (std::size_t k = 0; k < base_map.values.size(); ++k) {
        CHECK(rev_map.values.data()[base_map.values.size() - 1 - k] ==
              doctest::Approx(base_map.values.data()[k]).epsilon(1e-15));
    }
}

TEST_CASE("tie-free stacks count exactly k1 - 1 cells above tau") {
    fia::Rng rng(37);
    for (int it = 0; it < 10; ++it) {
        Matrix m(4, 4);
        // Distinct values by construction.
        std::vector<double> values(m.size());
        for (std::size_t k = 0; k < values.size(); ++k) {
            values[k] = rng.uniform(0.0, 1.0) + static_cast<double>(k) * 2.0;
        }
        for (std::size_t k = 0; k < m.size(); ++k) m.data()[k] = values[k];
        const auto stack = make_stack({m});
        const double r1 = rng.uniform(0.05, 1.0);
        const auto table = compute_thresholds(stack, r1);
        const auto k1 =
            static_cast<std::size_t>(std::ceil(r1 * static_cast<double>(m.size())));
        std::size_t above = 0;
        for (std::size_t k = 0; k < m.size(); ++k) {
            if (m.data()[k] > table.tau[0]) ++above;
        }
        CHECK(above == k1 - 1);
    }
}

TEST_CASE("r1 outside (0,1] is rejected") {
    const auto stack = make_stack({Matrix(1, 1, 0.0)});
    CHECK_THROWS_AS(compute_thresholds(stack, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(compute_thresholds(stack, 1.5), std::invalid_argument);
}
