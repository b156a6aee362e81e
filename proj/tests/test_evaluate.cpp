#include "doctest.h"

#include <cmath>
#include <sstream>

#include "fia/evaluate.hpp"
#include "fia/rng.hpp"

using namespace fia::evaluate;

TEST_CASE("overall score reproduces the published aggregate") {
    CHECK(overall_score(0.767, 0.021) == doctest::Approx(86.0).epsilon(0.0006));
    CHECK(std::abs(overall_score(0.767, 0.021) - 86.0) < 0.05);
}

TEST_CASE("overall score endpoints and symmetry") {
    CHECK(overall_score(1.0, 0.0) == doctest::Approx(100.0));
    CHECK(overall_score(0.5, 0.5) == doctest::Approx(50.0));
    CHECK(overall_score(0.0, 1.0) == 0.0);

    // Symmetric in (P, 1-F).
    CHECK(overall_score(0.3, 1.0 - 0.8) == doctest::Approx(overall_score(0.8, 1.0 - 0.3)));

    // Increasing in P, decreasing in F.
    CHECK(overall_score(0.9, 0.2) > overall_score(0.7, 0.2));
    CHECK(overall_score(0.9, 0.1) > overall_score(0.9, 0.3));

    CHECK_THROWS_AS(overall_score(1.2, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(overall_score(0.5, -0.1), std::invalid_argument);
}

TEST_CASE("forget success rate uses strict comparison") {
    const std::vector<double> orig = {3.0, 2.0, 5.0};
    CHECK(forget_success_rate(orig, std::vector<double>{2.0, 1.0, 4.0}) == doctest::Approx(1.0));
    CHECK(forget_success_rate(orig, orig) == 0.0);
    CHECK(forget_success_rate(orig, std::vector<double>{2.0, 2.0, 1.0}) ==
          doctest::Approx(2.0 / 3.0));
    CHECK_THROWS_AS(forget_success_rate(orig, std::vector<double>{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(forget_success_rate({}, {}), std::invalid_argument);
}

TEST_CASE("forget success rate depends only on per-index difference signs") {
    fia::Rng rng(8);
    for (int it = 0; it < 20; ++it) {
        std::vector<double> orig(10), edited(10);
        for (int i = 0; i < 10; ++i) {
            orig[i] = rng.uniform(0.0, 10.0);
            edited[i] = rng.uniform(0.0, 10.0);
        }
        const double base = forget_success_rate(orig, edited);
        const double shift = rng.uniform(-5.0, 5.0);
        std::vector<double> orig_s = orig, edited_s = edited;
        for (int i = 0; i < 10; ++i) {
            orig_s[i] += shift;
            edited_s[i] += shift;
        }
        CHECK(forget_success_rate(orig_s, edited_s) == doctest::Approx(base));
    }
}

TEST_CASE("assignment accuracy nearest-mode basics") {
    const std::vector<Point2> modes = {{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}};
    std::vector<Point2> at_target(25, Point2{3.0, 3.0});
    CHECK(assignment_accuracy(at_target, 3, modes) == doctest::Approx(1.0));
    CHECK(assignment_accuracy(at_target, 0, modes) == 0.0);
    CHECK_THROWS_AS(assignment_accuracy({}, 0, modes), std::invalid_argument);
    CHECK_THROWS_AS(assignment_accuracy(at_target, 7, modes), std::invalid_argument);

    // Equidistant point goes to the lower index.
    const std::vector<Point2> tie = {{0.0, 0.0}};
    CHECK(assignment_accuracy(tie, 0, modes) == doctest::Approx(1.0));
    CHECK(assignment_accuracy(tie, 1, modes) == 0.0);
}

TEST_CASE("uniform samples over the bounding square split evenly across 4 symmetric modes") {
    const std::vector<Point2> modes = {{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}};
    fia::Rng rng(99);
    std::vector<Point2> samples(10000);
    for (auto& p : samples) {
        p[0] = rng.uniform(-6.0, 6.0);
        p[1] = rng.uniform(-6.0, 6.0);
    }
    for (std::size_t m = 0; m < 4; ++m) {
        CHECK(std::abs(assignment_accuracy(samples, m, modes) - 0.25) < 0.05);
    }
}

TEST_CASE("assignment accuracy is invariant under a rigid transform of samples and modes") {
    fia::Rng rng(12);
    std::vector<Point2> modes = {{-2.0, 0.0}, {2.0, 0.5}, {0.0, 3.0}};
    std::vector<Point2> samples(200);
    for (auto& p : samples) {
        p[0] = rng.uniform(-4.0, 4.0);
        p[1] = rng.uniform(-4.0, 4.0);
    }
    const double base = assignment_accuracy(samples, 1, modes);

    const double theta = 0.83;
    auto rotate = [theta](const Point2& p) {
        return Point2{std::cos(theta) * p[0] - std::sin(theta) * p[1] + 5.0,
                      std::sin(theta) * p[0] + std::cos(theta) * p[1] - 1.5};
    };
    std::vector<Point2> modes_r, samples_r;
    for (const auto& m : modes) modes_r.push_back(rotate(m));
    for (const auto& p : samples) samples_r.push_back(rotate(p));
    CHECK(assignment_accuracy(samples_r, 1, modes_r) == doctest::Approx(base));
}

TEST_CASE("summarize emits per-concept rows and the aggregate line") {
    RunReport report;
    report.concepts = {
        {"c0", true, 0.95, 0.10},
        {"c1", true, 0.92, 0.20},
        {"c2", false, 0.94, 0.90},
        {"c3", false, 0.96, 0.92},
    };
    report.pruned_fraction["ffn2"] = 0.02;

    std::ostringstream per_concept, aggregate;
    const Summary s = summarize(report, per_concept, aggregate);
    REQUIRE(s.forget_acc.has_value());
    REQUIRE(s.preserve_acc.has_value());
    REQUIRE(s.overall.has_value());
    CHECK(*s.forget_acc == doctest::Approx(0.15));
    CHECK(*s.preserve_acc == doctest::Approx(0.91));
    CHECK(*s.overall == doctest::Approx(overall_score(0.91, 0.15)));
    CHECK(per_concept.str().find("c0,forget,0.95,0.1\n") != std::string::npos);
    CHECK(aggregate.str().find("F,P,overall_score,pruned_fraction_total") != std::string::npos);
}

TEST_CASE("summarize with table-2 aggregates prints the published overall score") {
    RunReport report;
    report.concepts = {{"forgot", true, 0.9, 0.021}, {"kept", false, 0.9, 0.767}};
    std::ostringstream per_concept, aggregate;
    const Summary s = summarize(report, per_concept, aggregate);
    REQUIRE(s.overall.has_value());
    CHECK(std::abs(*s.overall - 86.0) < 0.05);
}

TEST_CASE("summarize without a preserve set omits the overall score") {
    RunReport report;
    report.concepts = {{"c0", true, 0.9, 0.1}};
    std::ostringstream per_concept, aggregate;
    const Summary s = summarize(report, per_concept, aggregate);
    CHECK(s.forget_acc.has_value());
    CHECK_FALSE(s.preserve_acc.has_value());
    CHECK_FALSE(s.overall.has_value());
}

TEST_CASE("summarize with uniform 0.5 accuracies gives overall 50") {
    RunReport report;
    report.concepts = {{"a", true, 0.5, 0.5}, {"b", false, 0.5, 0.5}};
    std::ostringstream per_concept, aggregate;
    const Summary s = summarize(report, per_concept, aggregate);
    CHECK(*s.overall == doctest::Approx(50.0));
}

TEST_CASE("scatter svg contains both panels") {
    std::ostringstream svg;
    write_scatter_svg(svg, {{1.0, 1.0}}, {{-1.0, -1.0}}, {{0.0, 0.0}}, "concept0");
    const std::string text = svg.str();
    CHECK(text.find("<svg") != std::string::npos);
    CHECK(text.find("before") != std::string::npos);
    CHECK(text.find("after") != std::string::npos);
    CHECK(text.find("concept0") != std::string::npos);
}
