#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "fia/evaluate.hpp"
#include "fia/saliency.hpp"
#include "fia/selection.hpp"
#include "fia/sensitivity.hpp"
#include "fia/toydiff.hpp"
#include "fia/trace.hpp"

using namespace fia;
using namespace fia::toydiff;

namespace {

std::string trace_bytes(const trace::ActivationTrace& tr) {
    std::ostringstream out(std::ios::binary);
    trace::write_trace(tr, out);
    return out.str();
}

}  // namespace

TEST_CASE("dataset generation is deterministic and concentrated at the modes") {
    ToyDataSpec spec;
    spec.concept_count = 4;
    spec.modes = {{-3.0, -3.0}, {3.0, -3.0}, {-3.0, 3.0}, {3.0, 3.0}};
    spec.mode_std = 0.3;
    spec.samples_per_concept = 512;
    const auto a = make_dataset(spec, 41);
    const auto b = make_dataset(spec, 41);
    REQUIRE(a.size() == spec.concept_count * spec.samples_per_concept);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].concept_index == b[i].concept_index);
    }

    std::size_t near = 0;
    for (const auto& p : a) {
        const auto& mode = spec.modes[p.concept_index];
        const double dx = p.x[0] - mode[0];
        const double dy = p.x[1] - mode[1];
        if (std::sqrt(dx * dx + dy * dy) <= 1.2) ++near;
    }
    CHECK(static_cast<double>(near) / static_cast<double>(a.size()) >= 0.99);

    SUBCASE("zero samples per concept gives an empty dataset") {
        ToyDataSpec empty = spec;
        empty.samples_per_concept = 0;
        CHECK(make_dataset(empty, 1).empty());
    }

    SUBCASE("overlapping modes are rejected") {
        ToyDataSpec bad = spec;
        bad.modes[1] = {-3.0 + 0.5, -3.0};
        CHECK_THROWS_AS(make_dataset(bad, 1), std::invalid_argument);
    }
}

TEST_CASE("noise schedule: monotone alpha_bar and near-total noising at T") {
    const auto schedule = NoiseSchedule::linear(50, 0.004, 0.2);
    REQUIRE(schedule.beta.size() == 50);
    CHECK(schedule.beta.front() == doctest::Approx(0.004));
    CHECK(schedule.beta.back() == doctest::Approx(0.2));
    for (std::size_t t = 1; t < 50; ++t) {
        CHECK(schedule.alpha_bar[t] < schedule.alpha_bar[t - 1]);
    }
    CHECK(schedule.alpha_bar.back() < 0.05);

    CHECK_THROWS_AS(NoiseSchedule::linear(50, 0.2, 0.004), std::invalid_argument);
    CHECK_THROWS_AS(NoiseSchedule::linear(0, 0.004, 0.2), std::invalid_argument);
}

TEST_CASE("forward noising at t = T approaches the standard normal") {
    const auto spec = ToyDataSpec::default_spec();
    const auto schedule = NoiseSchedule::linear(50, 0.004, 0.2);
    const double ab = schedule.alpha_bar.back();
    Rng rng(7);

    const std::size_t n = 20000;
    double mean[2] = {0.0, 0.0};
    double cov[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
    std::vector<evaluate::Point2> noised(n);
    for (std::size_t s = 0; s < n; ++s) {
        const auto c = static_cast<std::uint32_t>(rng.uniform_index(spec.concept_count));
        const double x0 = spec.modes[c][0] + spec.mode_std * rng.normal();
        const double y0 = spec.modes[c][1] + spec.mode_std * rng.normal();
        noised[s][0] = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * rng.normal();
        noised[s][1] = std::sqrt(ab) * y0 + std::sqrt(1.0 - ab) * rng.normal();
        mean[0] += noised[s][0];
        mean[1] += noised[s][1];
    }
    mean[0] /= static_cast<double>(n);
    mean[1] /= static_cast<double>(n);
    for (const auto& p : noised) {
        cov[0][0] += (p[0] - mean[0]) * (p[0] - mean[0]);
        cov[0][1] += (p[0] - mean[0]) * (p[1] - mean[1]);
        cov[1][1] += (p[1] - mean[1]) * (p[1] - mean[1]);
    }
    cov[0][0] /= static_cast<double>(n);
    cov[0][1] /= static_cast<double>(n);
    cov[1][1] /= static_cast<double>(n);

    CHECK(std::sqrt(mean[0] * mean[0] + mean[1] * mean[1]) < 0.2);
    CHECK(std::abs(cov[0][0] - 1.0) < 0.2);
    CHECK(std::abs(cov[1][1] - 1.0) < 0.2);
    CHECK(std::abs(cov[0][1]) < 0.2);
}

TEST_CASE("training is a no-op at zero steps and deterministic otherwise") {
    const auto spec = ToyDataSpec::default_spec();
    const auto dataset = make_dataset(spec, 3);
    const auto schedule = NoiseSchedule::linear(50, 0.004, 0.2);

    ToyDiffusionModel untouched(16, 4, 8, 5);
    const Matrix before = untouched.ffn2_w;
    const auto empty_curve = train(untouched, dataset, schedule, {0, 0.05, 16, 0.2}, 1);
    CHECK(empty_curve.empty());
    CHECK(untouched.ffn2_w == before);

    ToyDiffusionModel m1(16, 4, 8, 5);
    ToyDiffusionModel m2(16, 4, 8, 5);
    const auto c1 = train(m1, dataset, schedule, {40, 0.05, 16, 0.2}, 9);
    const auto c2 = train(m2, dataset, schedule, {40, 0.05, 16, 0.2}, 9);
    REQUIRE(c1.size() == 40);
    CHECK(c1 == c2);  // bit-identical curves
    CHECK(m1.ffn2_w == m2.ffn2_w);
}

TEST_CASE("a short training run already reduces the loss") {
    const auto spec = ToyDataSpec::default_spec();
    const auto dataset = make_dataset(spec, 11);
    const auto schedule = NoiseSchedule::linear(50, 0.004, 0.2);
    ToyDiffusionModel model(32, 4, 8, 2);
    const auto curve = train(model, dataset, schedule, {400, 0.05, 32, 0.2}, 3);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 20; ++i) head += curve[i];
    for (int i = 0; i < 20; ++i) tail += curve[curve.size() - 1 - i];
    CHECK(tail < head);
}

TEST_CASE("sampling determinism and count") {
    const auto schedule = NoiseSchedule::linear(20, 0.004, 0.2);
    ToyDiffusionModel model(16, 4, 8, 5);
    CHECK(sample(model, schedule, 0, 0, 1).empty());
    const auto a = sample(model, schedule, 2, 9, 77);
    const auto b = sample(model, schedule, 2, 9, 77);
    REQUIRE(a.size() == 9);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    CHECK_THROWS_AS(sample(model, schedule, 9, 4, 1), std::invalid_argument);
}

TEST_CASE("an untrained model samples without mode preference") {
    const auto spec = ToyDataSpec::default_spec();
    const auto schedule = NoiseSchedule::linear(50, 0.004, 0.2);
    ToyDiffusionModel model(64, 4, 8, 123);
    for (std::uint32_t c = 0; c < 4; ++c) {
        const auto points = sample(model, schedule, c, 2000, 31 + c);
        const double acc = evaluate::assignment_accuracy(points, c, spec.modes);
        CHECK(std::abs(acc - 0.25) < 0.15);
    }
}

TEST_CASE("trace export: record counting and determinism") {
    const auto schedule = NoiseSchedule::linear(8, 0.004, 0.2);
    ToyDiffusionModel model(16, 4, 8, 5);
    const std::vector<ModelLayer> layers = {ModelLayer::Ffn1, ModelLayer::Ffn2};
    const auto tr = export_trace(model, schedule, {0, 2}, 3, 4, layers, 55);

    // L layers x T steps x G groups x P prompts records; groups = 2 concepts + base.
    CHECK(tr.record_count() == 2u * 8u * 3u * 3u);
    CHECK(tr.total_timesteps() == 8);
    CHECK(tr.layer_spec(tr.layer_index("ffn2")).target_kind == trace::TargetKind::Ffn2);
    CHECK(tr.group(tr.group_index("base")).kind == trace::GroupKind::Base);

    const auto again = export_trace(model, schedule, {0, 2}, 3, 4, layers, 55);
    CHECK(trace_bytes(tr) == trace_bytes(again));

    CHECK_THROWS_AS(export_trace(model, schedule, {9}, 3, 4, layers, 1), std::invalid_argument);
}

TEST_CASE("plant: zero gain leaves the model unchanged") {
    ToyDiffusionModel model(16, 4, 8, 5);
    const auto planted = plant_concept_neurons(model, 0, ModelLayer::Ffn2, {{1, 2}}, 0.0);
    CHECK_FALSE(planted.plant().active);
    CHECK(planted.ffn2_w == model.ffn2_w);
    CHECK_THROWS_AS(plant_concept_neurons(model, 0, ModelLayer::Ffn2, {{99, 0}}, 1.0),
                    std::out_of_range);
}

TEST_CASE("plant: base-condition activations are identical to the unplanted model") {
    const auto schedule = NoiseSchedule::linear(6, 0.004, 0.2);
    ToyDiffusionModel model(16, 4, 8, 5);
    const auto planted =
        plant_concept_neurons(model, 1, ModelLayer::Ffn2, {{2, 3}, {7, 9}}, 25.0);

    const auto plain = export_trace(model, schedule, {1}, 2, 4, {ModelLayer::Ffn2}, 3);
    const auto with_plant = export_trace(planted, schedule, {1}, 2, 4, {ModelLayer::Ffn2}, 3);
    for (std::uint32_t t = 1; t <= 6; ++t) {
        const auto base_plain = plain.slice_records("ffn2", t, "base");
        const auto base_planted = with_plant.slice_records("ffn2", t, "base");
        REQUIRE(base_plain.size() == base_planted.size());
        for (std::size_t p = 0; p < base_plain.size(); ++p) {
            CHECK(base_plain[p]->activations == base_planted[p]->activations);
        }
        // Concept records do differ.
        const auto c_plain = plain.slice_records("ffn2", t, "concept1");
        const auto c_planted = with_plant.slice_records("ffn2", t, "concept1");
        CHECK(c_plain[0]->activations != c_planted[0]->activations);
    }
}

TEST_CASE("planted cells dominate the saliency map and are recovered exactly") {
    const auto schedule = NoiseSchedule::linear(10, 0.004, 0.2);
    ToyDiffusionModel model(16, 4, 8, 5);

    const std::vector<selection::Cell> cells = {{2, 5}, {6, 11}, {12, 0}};
    const double typical = typical_activation_norm(model, schedule, ModelLayer::Ffn2, 8, 17);
    const double gain = 10.0 * typical;
    const auto planted = plant_concept_neurons(model, 0, ModelLayer::Ffn2, cells, gain);

    const auto tr = export_trace(planted, schedule, {0}, 3, 8, {ModelLayer::Ffn2}, 21);
    const auto sal = saliency::saliency_for_concept(tr, "ffn2", "concept0", "base",
                                                    saliency::TimestepWindow{1, 10}, 1e-12,
                                                    saliency::StdMode::Population);

    // Mean saliency over the window, enumerated over all cells.
    Matrix mean_s(16, 16, 0.0);
    for (const Matrix& s : sal.slices) {
        for (std::size_t k = 0; k < s.size(); ++k) mean_s.data()[k] += s.data()[k];
    }
    double weakest_planted = std::numeric_limits<double>::infinity();
    for (const auto& [i, j] : cells) weakest_planted = std::min(weakest_planted, mean_s(i, j));
    double strongest_other = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        for (std::size_t j = 0; j < 16; ++j) {
            const bool is_planted =
                std::find(cells.begin(), cells.end(),
                          selection::Cell{static_cast<std::uint32_t>(i),
                                          static_cast<std::uint32_t>(j)}) != cells.end();
            if (!is_planted) strongest_other = std::max(strongest_other, mean_s(i, j));
        }
    }
    CHECK(weakest_planted > strongest_other);

    // Full pipeline recovery: r2 sized to select exactly |cells| cells.
    const auto thresholds = sensitivity::compute_thresholds(sal, 0.05);
    const auto map = sensitivity::integrate_time(sal, thresholds);
    const double r2 = static_cast<double>(cells.size()) / (16.0 * 16.0);
    const auto selected =
        selection::select_neurons(map, {r2, selection::Granularity::Both});
    CHECK(selected.members == std::set<selection::Cell>(cells.begin(), cells.end()));
}

TEST_CASE("checkpoint round-trip preserves the model to f32 precision") {
    namespace fs = std::filesystem;
    ToyDiffusionModel model(16, 4, 8, 5);
    const fs::path path = fs::temp_directory_path() / "fia_test_model.fiam";
    save_model(model, path);
    const auto back = load_model(path);
    CHECK(back.hidden_width() == 16);
    CHECK(back.concept_count() == 4);
    CHECK(back.cond_dim() == 8);
    for (std::size_t k = 0; k < model.ffn2_w.size(); ++k) {
        CHECK(back.ffn2_w.data()[k] ==
              static_cast<double>(static_cast<float>(model.ffn2_w.data()[k])));
    }
    // Saving the loaded model reproduces identical bytes.
    const fs::path path2 = fs::temp_directory_path() / "fia_test_model2.fiam";
    save_model(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream s1, s2;
    s1 << f1.rdbuf();
    s2 << f2.rdbuf();
    CHECK(s1.str() == s2.str());
    fs::remove(path);
    fs::remove(path2);
}
