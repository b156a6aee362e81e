#include "fia/toydiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fia/kernels.hpp"

namespace fia::toydiff {

namespace {

constexpr double kPlantWeightScale = 4.0;

void matvec(const Matrix& w, const std::vector<double>& x, const std::vector<double>& bias,
            std::vector<double>& out) {
    out.resize(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        out[i] = kernels::dot(w.row(i), x.data(), w.cols()) + bias[i];
    }
}

/// out[j] = Σ_i w[i][j]·d[i], accumulated row-wise to stay contiguous.
void matvec_transposed(const Matrix& w, const std::vector<double>& d, std::vector<double>& out) {
    out.assign(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        kernels::axpy(d[i], w.row(i), out.data(), w.cols());
    }
}

}  // namespace

void ToyDataSpec::validate() const {
    if (concept_count < 2) throw std::invalid_argument("ToyDataSpec: need at least 2 concepts");
    if (modes.size() != concept_count) {
        throw std::invalid_argument("ToyDataSpec: modes must match concept_count");
    }
    if (!(mode_std > 0.0)) throw std::invalid_argument("ToyDataSpec: mode_std must be positive");
    for (std::size_t a = 0; a < modes.size(); ++a) {
        for (std::size_t b = a + 1; b < modes.size(); ++b) {
            const double dx = modes[a][0] - modes[b][0];
            const double dy = modes[a][1] - modes[b][1];
            if (std::sqrt(dx * dx + dy * dy) < 6.0 * mode_std) {
                throw std::invalid_argument("ToyDataSpec: modes closer than 6 x mode_std");
            }
        }
    }
}

ToyDataSpec ToyDataSpec::default_spec() {
    ToyDataSpec spec;
    spec.concept_count = 4;
    spec.modes = {{4.0, 0.0}, {0.0, 4.0}, {-4.0, 0.0}, {0.0, -4.0}};
    spec.mode_std = 0.3;
    spec.samples_per_concept = 512;
    return spec;
}

std::vector<LabeledPoint> make_dataset(const ToyDataSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    std::vector<LabeledPoint> points;
    points.reserve(static_cast<std::size_t>(spec.concept_count) * spec.samples_per_concept);
    for (std::uint32_t c = 0; c < spec.concept_count; ++c) {
        for (std::uint32_t s = 0; s < spec.samples_per_concept; ++s) {
            LabeledPoint p;
            p.concept_index = c;
            p.x[0] = spec.modes[c][0] + spec.mode_std * rng.normal();
            p.x[1] = spec.modes[c][1] + spec.mode_std * rng.normal();
            points.push_back(p);
        }
    }
    return points;
}

NoiseSchedule NoiseSchedule::linear(std::uint32_t total_timesteps, double beta_first,
                                    double beta_last) {
    if (total_timesteps == 0) throw std::invalid_argument("NoiseSchedule: T must be positive");
    NoiseSchedule s;
    s.total_timesteps = total_timesteps;
    s.beta.resize(total_timesteps);
    s.alpha_bar.resize(total_timesteps);
    double cumulative = 1.0;
    for (std::uint32_t t = 0; t < total_timesteps; ++t) {
        const double frac = total_timesteps == 1
                                ? 0.0
                                : static_cast<double>(t) / (total_timesteps - 1);
        s.beta[t] = beta_first + (beta_last - beta_first) * frac;
        cumulative *= 1.0 - s.beta[t];
        s.alpha_bar[t] = cumulative;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (beta.size() != total_timesteps || alpha_bar.size() != total_timesteps) {
        throw std::invalid_argument("NoiseSchedule: inconsistent sizes");
    }
    if (!(beta.front() > 0.0) || !(beta.back() < 1.0) || !(beta.front() < beta.back())) {
        throw std::invalid_argument("NoiseSchedule: need 0 < beta_1 < beta_T < 1");
    }
    for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
        if (!(alpha_bar[t] < alpha_bar[t - 1])) {
            throw std::invalid_argument("NoiseSchedule: alpha_bar must strictly decrease");
        }
    }
}

const char* model_layer_id(ModelLayer layer) {
    return layer == ModelLayer::Ffn1 ? "ffn1" : "ffn2";
}

std::optional<ModelLayer> model_layer_from_id(std::string_view id) {
    if (id == "ffn1") return ModelLayer::Ffn1;
    if (id == "ffn2") return ModelLayer::Ffn2;
    return std::nullopt;
}

std::string concept_group_id(std::uint32_t concept_index) {
    return "concept" + std::to_string(concept_index);
}

ToyDiffusionModel::ToyDiffusionModel(std::uint32_t hidden_width, std::uint32_t concept_count,
                                     std::uint32_t cond_dim, std::uint64_t seed)
    : hidden_width_(hidden_width), concept_count_(concept_count), cond_dim_(cond_dim) {
    if (hidden_width == 0 || concept_count == 0 || cond_dim == 0) {
        throw std::invalid_argument("ToyDiffusionModel: zero-sized dimension");
    }
    Rng rng(seed);
    const std::uint32_t in_dim = 2 + cond_dim;
    auto init = [&rng](Matrix& w, std::uint32_t rows, std::uint32_t cols) {
        w = Matrix(rows, cols);
        const double scale = std::sqrt(2.0 / static_cast<double>(cols));
        for (std::size_t k = 0; k < w.size(); ++k) w.data()[k] = scale * rng.normal();
    };
    init(embed_w, hidden_width, in_dim);
    embed_b.assign(hidden_width, 0.0);
    init(ffn1_w, hidden_width, hidden_width);
    ffn1_b.assign(hidden_width, 0.0);
    // FFN2 starts at zero and grows only where the objective demands, which
    // keeps its routing sparse; with it zeroed the fresh model predicts zero
    // noise, so sampling starts as an unbiased random walk.
    ffn2_w = Matrix(hidden_width, hidden_width, 0.0);
    ffn2_b.assign(hidden_width, 0.0);
    // The head stays a fixed dense random readout (never trained). Every
    // FFN2 row then carries comparable leverage and concept routes spread
    // across rows instead of funnelling into a favoured few.
    init(head_w, 2, hidden_width);
    head_b.assign(2, 0.0);

    // Distinct near-orthogonal condition embeddings; the extra row is the
    // null/base condition. Strong conditioning pushes hidden units to
    // specialize per concept.
    cond_embed = Matrix(concept_count + 1, cond_dim);
    for (std::uint32_t c = 0; c <= concept_count; ++c) {
        for (std::uint32_t d = 0; d < cond_dim; ++d) {
            cond_embed(c, d) = (d == c % cond_dim ? 3.0 : 0.0) + 0.05 * rng.normal();
        }
    }
}

const Matrix& ToyDiffusionModel::layer_weights(ModelLayer layer) const {
    return layer == ModelLayer::Ffn1 ? ffn1_w : ffn2_w;
}

Matrix& ToyDiffusionModel::layer_weights(ModelLayer layer) {
    return layer == ModelLayer::Ffn1 ? ffn1_w : ffn2_w;
}

Matrix ToyDiffusionModel::effective_layer_weights(ModelLayer layer,
                                                  std::uint32_t condition) const {
    if (plant_.active && plant_.layer == layer && condition == plant_.concept_index) {
        return planted_weights_;
    }
    return layer_weights(layer);
}

std::vector<double> ToyDiffusionModel::time_embedding(std::uint32_t timestep) const {
    std::vector<double> emb(hidden_width_, 0.0);
    const double t = static_cast<double>(timestep);
    const std::uint32_t half = hidden_width_ / 2;
    for (std::uint32_t k = 0; k < half; ++k) {
        const double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        emb[2 * k] = std::sin(t * freq);
        emb[2 * k + 1] = std::cos(t * freq);
    }
    return emb;
}

void ToyDiffusionModel::forward(const Point2& x, const std::vector<double>& time_emb,
                                std::uint32_t condition, ForwardState& state) const {
    const bool planted = plant_.active && condition == plant_.concept_index;

    state.input.resize(2 + cond_dim_);
    state.input[0] = x[0];
    state.input[1] = x[1];
    for (std::uint32_t d = 0; d < cond_dim_; ++d) {
        state.input[2 + d] = cond_embed(condition, d);
    }

    matvec(embed_w, state.input, embed_b, state.ffn1_in);
    kernels::add(time_emb.data(), state.ffn1_in.data(), hidden_width_);
    const bool plant_ffn1 = planted && plant_.layer == ModelLayer::Ffn1;
    const bool plant_ffn2 = planted && plant_.layer == ModelLayer::Ffn2;
    if (plant_ffn1) {
        for (const auto& cell : plant_.cells) state.ffn1_in[cell.second] += plant_.gain;
    }
    matvec(plant_ffn1 ? planted_weights_ : ffn1_w, state.ffn1_in, ffn1_b, state.ffn1_out);

    // Clipped ReLU: exact zeros let hidden features gate per concept, the
    // cap keeps activations (and any plant boost feedback) bounded.
    state.ffn2_in.resize(hidden_width_);
    for (std::uint32_t i = 0; i < hidden_width_; ++i) {
        state.ffn2_in[i] = std::clamp(state.ffn1_out[i], 0.0, 6.0);
    }
    if (plant_ffn2) {
        for (const auto& cell : plant_.cells) state.ffn2_in[cell.second] += plant_.gain;
    }
    matvec(plant_ffn2 ? planted_weights_ : ffn2_w, state.ffn2_in, ffn2_b, state.ffn2_out);

    state.eps_hat[0] = kernels::dot(head_w.row(0), state.ffn2_out.data(), hidden_width_) + head_b[0];
    state.eps_hat[1] = kernels::dot(head_w.row(1), state.ffn2_out.data(), hidden_width_) + head_b[1];
}

namespace {

struct Gradients {
    Matrix embed_w, ffn1_w, ffn2_w, head_w, cond_embed;
    std::vector<double> embed_b, ffn1_b, ffn2_b, head_b;

    explicit Gradients(const ToyDiffusionModel& m)
        : embed_w(m.embed_w.rows(), m.embed_w.cols()),
          ffn1_w(m.ffn1_w.rows(), m.ffn1_w.cols()),
          ffn2_w(m.ffn2_w.rows(), m.ffn2_w.cols()),
          head_w(m.head_w.rows(), m.head_w.cols()),
          cond_embed(m.cond_embed.rows(), m.cond_embed.cols()),
          embed_b(m.embed_b.size(), 0.0),
          ffn1_b(m.ffn1_b.size(), 0.0),
          ffn2_b(m.ffn2_b.size(), 0.0),
          head_b(m.head_b.size(), 0.0) {}

    void reset() {
        auto zero_m = [](Matrix& m) { std::fill(m.data(), m.data() + m.size(), 0.0); };
        auto zero_v = [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); };
        zero_m(embed_w);
        zero_m(ffn1_w);
        zero_m(ffn2_w);
        zero_m(head_w);
        zero_m(cond_embed);
        zero_v(embed_b);
        zero_v(ffn1_b);
        zero_v(ffn2_b);
        zero_v(head_b);
    }
};

void backward_accumulate(const ToyDiffusionModel& model,
                         const ToyDiffusionModel::ForwardState& state, const Point2& eps,
                         std::uint32_t condition, double scale, Gradients& g) {
    const std::uint32_t h = model.hidden_width();
    const Point2 d_eps{scale * (state.eps_hat[0] - eps[0]),
                       scale * (state.eps_hat[1] - eps[1])};

    // head: eps_hat = head_w · ffn2_out + head_b
    kernels::axpy(d_eps[0], state.ffn2_out.data(), g.head_w.row(0), h);
    kernels::axpy(d_eps[1], state.ffn2_out.data(), g.head_w.row(1), h);
    g.head_b[0] += d_eps[0];
    g.head_b[1] += d_eps[1];

    std::vector<double> d_ffn2_out(h, 0.0);
    kernels::axpy(d_eps[0], model.head_w.row(0), d_ffn2_out.data(), h);
    kernels::axpy(d_eps[1], model.head_w.row(1), d_ffn2_out.data(), h);

    // ffn2: ffn2_out = ffn2_w · ffn2_in + ffn2_b
    for (std::uint32_t i = 0; i < h; ++i) {
        if (d_ffn2_out[i] != 0.0) {
            kernels::axpy(d_ffn2_out[i], state.ffn2_in.data(), g.ffn2_w.row(i), h);
        }
        g.ffn2_b[i] += d_ffn2_out[i];
    }
    std::vector<double> d_ffn2_in;
    matvec_transposed(model.ffn2_w, d_ffn2_out, d_ffn2_in);

    // Clipped-ReLU gate.
    std::vector<double> d_ffn1_out(h);
    for (std::uint32_t i = 0; i < h; ++i) {
        const double a = state.ffn1_out[i];
        d_ffn1_out[i] = (a > 0.0 && a < 6.0) ? d_ffn2_in[i] : 0.0;
    }

    // ffn1: ffn1_out = ffn1_w · ffn1_in + ffn1_b
    for (std::uint32_t i = 0; i < h; ++i) {
        if (d_ffn1_out[i] != 0.0) {
            kernels::axpy(d_ffn1_out[i], state.ffn1_in.data(), g.ffn1_w.row(i), h);
        }
        g.ffn1_b[i] += d_ffn1_out[i];
    }
    std::vector<double> d_ffn1_in;
    matvec_transposed(model.ffn1_w, d_ffn1_out, d_ffn1_in);

    // embed: ffn1_in = embed_w · input + embed_b + time_emb
    const std::size_t in_dim = state.input.size();
    for (std::uint32_t i = 0; i < h; ++i) {
        if (d_ffn1_in[i] != 0.0) {
            kernels::axpy(d_ffn1_in[i], state.input.data(), g.embed_w.row(i), in_dim);
        }
        g.embed_b[i] += d_ffn1_in[i];
    }
    std::vector<double> d_input;
    matvec_transposed(model.embed_w, d_ffn1_in, d_input);
    kernels::add(d_input.data() + 2, g.cond_embed.row(condition), model.cond_dim());
}

double grad_norm_sq(const Gradients& g) {
    double acc = 0.0;
    for (const Matrix* m : {&g.embed_w, &g.ffn1_w, &g.ffn2_w, &g.head_w, &g.cond_embed}) {
        acc += kernels::dot(m->data(), m->data(), m->size());
    }
    for (const std::vector<double>* v : {&g.embed_b, &g.ffn1_b, &g.ffn2_b, &g.head_b}) {
        acc += kernels::dot(v->data(), v->data(), v->size());
    }
    return acc;
}

void scale_gradients(Gradients& g, double factor) {
    for (Matrix* m : {&g.embed_w, &g.ffn1_w, &g.ffn2_w, &g.head_w, &g.cond_embed}) {
        double* p = m->data();
        for (std::size_t k = 0; k < m->size(); ++k) p[k] *= factor;
    }
    for (std::vector<double>* v : {&g.embed_b, &g.ffn1_b, &g.ffn2_b, &g.head_b}) {
        for (double& x : *v) x *= factor;
    }
}

void sgd_step(ToyDiffusionModel& model, const Gradients& g, double lr) {
    auto update_m = [lr](Matrix& w, const Matrix& grad) {
        kernels::axpy(-lr, grad.data(), w.data(), w.size());
    };
    auto update_v = [lr](std::vector<double>& v, const std::vector<double>& grad) {
        kernels::axpy(-lr, grad.data(), v.data(), v.size());
    };
    update_m(model.embed_w, g.embed_w);
    update_m(model.ffn1_w, g.ffn1_w);
    update_m(model.ffn2_w, g.ffn2_w);
    update_m(model.cond_embed, g.cond_embed);
    update_v(model.embed_b, g.embed_b);
    update_v(model.ffn1_b, g.ffn1_b);
    update_v(model.ffn2_b, g.ffn2_b);
    // head_w / head_b stay at their fixed random-readout values
}

}  // namespace

std::vector<double> train(ToyDiffusionModel& model, const std::vector<LabeledPoint>& dataset,
                          const NoiseSchedule& schedule, const TrainParams& params,
                          std::uint64_t seed) {
    if (params.steps == 0) return {};
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    if (!(params.learning_rate > 0.0)) {
        throw std::invalid_argument("train: learning rate must be positive");
    }
    if (params.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");

    Rng rng(seed);
    Gradients grads(model);
    ToyDiffusionModel::ForwardState state;
    std::vector<double> curve;
    curve.reserve(params.steps);

    const std::uint32_t t_count = schedule.total_timesteps;
    for (std::uint32_t step = 0; step < params.steps; ++step) {
        grads.reset();
        double loss = 0.0;
        for (std::uint32_t b = 0; b < params.batch_size; ++b) {
            const LabeledPoint& sample_point =
                dataset[rng.uniform_index(dataset.size())];
            const auto t = static_cast<std::uint32_t>(1 + rng.uniform_index(t_count));
            const Point2 eps{rng.normal(), rng.normal()};
            const bool drop = rng.uniform() < params.cond_dropout;
            const std::uint32_t condition =
                drop ? model.base_condition() : sample_point.concept_index;

            const double ab = schedule.alpha_bar[t - 1];
            const Point2 noisy{std::sqrt(ab) * sample_point.x[0] + std::sqrt(1.0 - ab) * eps[0],
                               std::sqrt(ab) * sample_point.x[1] + std::sqrt(1.0 - ab) * eps[1]};

            const auto time_emb = model.time_embedding(t);
            model.forward(noisy, time_emb, condition, state);
            const double d0 = state.eps_hat[0] - eps[0];
            const double d1 = state.eps_hat[1] - eps[1];
            loss += 0.5 * (d0 * d0 + d1 * d1);
            backward_accumulate(model, state, eps, condition,
                                1.0 / static_cast<double>(params.batch_size), grads);
        }
        loss /= static_cast<double>(params.batch_size);
        if (!std::isfinite(loss)) {
            throw DivergenceError("train: non-finite loss at step " + std::to_string(step));
        }
        // Global norm clip keeps plain SGD stable at useful learning rates.
        constexpr double kMaxGradNorm = 5.0;
        const double norm = std::sqrt(grad_norm_sq(grads));
        if (norm > kMaxGradNorm) scale_gradients(grads, kMaxGradNorm / norm);
        sgd_step(model, grads, params.learning_rate);
        auto soft_threshold = [&](Matrix& w, double strength) {
            if (strength <= 0.0) return;
            const double shrink = params.learning_rate * strength;
            double* p = w.data();
            for (std::size_t k = 0; k < w.size(); ++k) {
                const double magnitude = std::abs(p[k]) - shrink;
                p[k] = magnitude > 0.0 ? (p[k] > 0.0 ? magnitude : -magnitude) : 0.0;
            }
        };
        soft_threshold(model.ffn1_w, params.l1_ffn1);
        soft_threshold(model.ffn2_w, params.l1_ffn2);
        curve.push_back(loss);
    }
    return curve;
}

namespace {

struct CaptureSink {
    std::vector<ModelLayer> layers;
    // capture[layer_order][step-1] is a positions × width matrix
    std::vector<std::vector<Matrix>> per_layer;
};

std::vector<Point2> sample_impl(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                                std::uint32_t condition, std::uint32_t count, Rng& rng,
                                CaptureSink* capture) {
    if (condition > model.base_condition()) {
        throw std::invalid_argument("sample: condition out of range");
    }
    std::vector<Point2> points(count);
    for (auto& p : points) {
        p[0] = rng.normal();
        p[1] = rng.normal();
    }
    if (capture != nullptr) {
        capture->per_layer.assign(capture->layers.size(), {});
        for (auto& steps : capture->per_layer) {
            steps.assign(schedule.total_timesteps, Matrix());
        }
    }

    ToyDiffusionModel::ForwardState state;
    const std::uint32_t t_total = schedule.total_timesteps;
    for (std::uint32_t step = 1; step <= t_total; ++step) {
        const std::uint32_t t = t_total - step + 1;  // diffusion time runs backwards
        const double beta = schedule.beta[t - 1];
        const double ab = schedule.alpha_bar[t - 1];
        const double ab_prev = t > 1 ? schedule.alpha_bar[t - 2] : 1.0;
        const double sigma =
            t > 1 ? std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
        const auto time_emb = model.time_embedding(t);

        if (capture != nullptr) {
            for (auto& steps : capture->per_layer) {
                steps[step - 1] = Matrix(count, model.hidden_width());
            }
        }

        for (std::uint32_t p = 0; p < count; ++p) {
            model.forward(points[p], time_emb, condition, state);
            if (capture != nullptr) {
                for (std::size_t li = 0; li < capture->layers.size(); ++li) {
                    const auto& values = capture->layers[li] == ModelLayer::Ffn1
                                             ? state.ffn1_in
                                             : state.ffn2_in;
                    std::copy(values.begin(), values.end(),
                              capture->per_layer[li][step - 1].row(p));
                }
            }
            const double mean0 =
                (points[p][0] - beta / std::sqrt(1.0 - ab) * state.eps_hat[0]) /
                std::sqrt(1.0 - beta);
            const double mean1 =
                (points[p][1] - beta / std::sqrt(1.0 - ab) * state.eps_hat[1]) /
                std::sqrt(1.0 - beta);
            points[p][0] = mean0 + (t > 1 ? sigma * rng.normal() : 0.0);
            points[p][1] = mean1 + (t > 1 ? sigma * rng.normal() : 0.0);
            if (!std::isfinite(points[p][0]) || !std::isfinite(points[p][1])) {
                throw DivergenceError("sample: non-finite state at step " +
                                      std::to_string(step));
            }
        }
    }
    return points;
}

}  // namespace

std::vector<Point2> sample(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                           std::uint32_t condition, std::uint32_t count, std::uint64_t seed) {
    Rng rng(seed);
    return sample_impl(model, schedule, condition, count, rng, nullptr);
}

trace::ActivationTrace export_trace(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                                    const std::vector<std::uint32_t>& concept_indices,
                                    std::uint32_t prompts_per_group, std::uint32_t positions,
                                    const std::vector<ModelLayer>& layers, std::uint64_t seed) {
    if (prompts_per_group < 2) {
        throw std::invalid_argument("export_trace: need at least 2 prompts per group");
    }
    if (positions == 0) throw std::invalid_argument("export_trace: positions must be positive");
    if (layers.empty()) throw std::invalid_argument("export_trace: no layers requested");

    trace::ActivationTrace out(schedule.total_timesteps);
    const std::uint32_t h = model.hidden_width();
    for (ModelLayer layer : layers) {
        trace::LayerSpec spec;
        spec.layer_id = model_layer_id(layer);
        spec.c_in = h;
        spec.c_out = h;
        spec.target_kind =
            layer == ModelLayer::Ffn1 ? trace::TargetKind::Ffn1 : trace::TargetKind::Ffn2;
        // Store the weights as each concept's sampling actually used them:
        // with an active plant this includes the planted route.
        const Matrix w = model.plant().active && model.plant().layer == layer
                             ? model.effective_layer_weights(layer, model.plant().concept_index)
                             : model.layer_weights(layer);
        std::vector<float> weights(w.size());
        for (std::size_t k = 0; k < w.size(); ++k) {
            weights[k] = static_cast<float>(w.data()[k]);
        }
        out.add_layer(spec, std::move(weights), positions);
    }

    struct GroupPlan {
        std::string group_id;
        std::uint32_t condition;
    };
    std::vector<GroupPlan> plans;
    for (std::uint32_t c : concept_indices) {
        if (c >= model.concept_count()) {
            throw std::invalid_argument("export_trace: concept index out of range");
        }
        trace::PromptGroup group;
        group.group_id = concept_group_id(c);
        group.kind = trace::GroupKind::Concept;
        group.concept_id = group.group_id;
        group.prompt_count = prompts_per_group;
        out.add_group(group);
        plans.push_back({group.group_id, c});
    }
    {
        trace::PromptGroup base;
        base.group_id = "base";
        base.kind = trace::GroupKind::Base;
        base.prompt_count = prompts_per_group;
        out.add_group(base);
        plans.push_back({base.group_id, model.base_condition()});
    }

    CaptureSink capture;
    capture.layers = layers;
    for (std::size_t gi = 0; gi < plans.size(); ++gi) {
        for (std::uint32_t prompt = 0; prompt < prompts_per_group; ++prompt) {
            Rng rng(mix_seed(seed, gi, prompt));
            sample_impl(model, schedule, plans[gi].condition, positions, rng, &capture);
            for (std::size_t li = 0; li < layers.size(); ++li) {
                for (std::uint32_t step = 1; step <= schedule.total_timesteps; ++step) {
                    const Matrix& m = capture.per_layer[li][step - 1];
                    std::vector<float> values(m.size());
                    for (std::size_t k = 0; k < m.size(); ++k) {
                        values[k] = static_cast<float>(m.data()[k]);
                    }
                    out.add_record(model_layer_id(layers[li]), step, plans[gi].group_id, prompt,
                                   std::move(values));
                }
            }
        }
    }
    return out;
}

ToyDiffusionModel plant_concept_neurons(const ToyDiffusionModel& model,
                                        std::uint32_t concept_index, ModelLayer layer,
                                        const std::vector<selection::Cell>& cells, double gain) {
    if (concept_index >= model.concept_count()) {
        throw std::invalid_argument("plant_concept_neurons: concept index out of range");
    }
    if (gain < 0.0) throw std::invalid_argument("plant_concept_neurons: gain must be >= 0");
    const Matrix& w = model.layer_weights(layer);
    for (const auto& [i, j] : cells) {
        if (i >= w.rows() || j >= w.cols()) {
            throw std::out_of_range("plant_concept_neurons: cell outside layer shape");
        }
    }
    ToyDiffusionModel planted = model;
    if (gain == 0.0 || cells.empty()) return planted;  // zero plant leaves the model unchanged

    double max_abs = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
        max_abs = std::max(max_abs, std::abs(w.data()[k]));
    }
    planted.plant_.active = true;
    planted.plant_.concept_index = concept_index;
    planted.plant_.layer = layer;
    planted.plant_.cells = cells;
    planted.plant_.gain = gain;
    planted.plant_.weight_value = max_abs > 0.0 ? kPlantWeightScale * max_abs : 1.0;
    planted.planted_weights_ = w;
    for (const auto& [i, j] : cells) planted.planted_weights_(i, j) = planted.plant_.weight_value;
    return planted;
}

double typical_activation_norm(const ToyDiffusionModel& model, const NoiseSchedule& schedule,
                               ModelLayer layer, std::uint32_t positions, std::uint64_t seed) {
    CaptureSink capture;
    capture.layers = {layer};
    Rng rng(seed);
    sample_impl(model, schedule, model.base_condition(), positions, rng, &capture);
    std::vector<double> norms;
    for (const Matrix& step : capture.per_layer[0]) {
        for (std::size_t j = 0; j < step.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t r = 0; r < step.rows(); ++r) acc += step(r, j) * step(r, j);
            norms.push_back(std::sqrt(acc));
        }
    }
    std::nth_element(norms.begin(), norms.begin() + norms.size() / 2, norms.end());
    return norms[norms.size() / 2];
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "FIAM", u16 version, dims, then f32 row-major
// payloads in a fixed order. Plant state is a verification harness and is
// deliberately not serialized.
// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'F', 'I', 'A', 'M'};
constexpr std::uint16_t kModelVersion = 1;

void put_matrix(std::ofstream& out, const Matrix& m) {
    for (std::size_t k = 0; k < m.size(); ++k) {
        const float v = static_cast<float>(m.data()[k]);
        out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
}

void put_vector(std::ofstream& out, const std::vector<double>& v) {
    for (double d : v) {
        const float f = static_cast<float>(d);
        out.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
}

void get_matrix(std::ifstream& in, Matrix& m) {
    for (std::size_t k = 0; k < m.size(); ++k) {
        float v = 0.0F;
        in.read(reinterpret_cast<char*>(&v), sizeof(float));
        m.data()[k] = static_cast<double>(v);
    }
}

void get_vector(std::ifstream& in, std::vector<double>& v) {
    for (double& d : v) {
        float f = 0.0F;
        in.read(reinterpret_cast<char*>(&f), sizeof(float));
        d = static_cast<double>(f);
    }
}

}  // namespace

void save_model(const ToyDiffusionModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_model: cannot open " + path.string());
    out.write(kModelMagic, 4);
    auto put_u16 = [&out](std::uint16_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    auto put_u32 = [&out](std::uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    };
    put_u16(kModelVersion);
    put_u32(model.hidden_width());
    put_u32(model.concept_count());
    put_u32(model.cond_dim());
    put_matrix(out, model.embed_w);
    put_vector(out, model.embed_b);
    put_matrix(out, model.ffn1_w);
    put_vector(out, model.ffn1_b);
    put_matrix(out, model.ffn2_w);
    put_vector(out, model.ffn2_b);
    put_matrix(out, model.head_w);
    put_vector(out, model.head_b);
    put_matrix(out, model.cond_embed);
    if (!out) throw std::runtime_error("save_model: write failed: " + path.string());
}

ToyDiffusionModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_model: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kModelMagic, 4) != 0) {
        throw std::runtime_error("load_model: bad magic");
    }
    std::uint16_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kModelVersion) throw std::runtime_error("load_model: unsupported version");
    std::uint32_t h = 0, c = 0, cond_dim = 0;
    in.read(reinterpret_cast<char*>(&h), sizeof(h));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    in.read(reinterpret_cast<char*>(&cond_dim), sizeof(cond_dim));
    if (!in || h == 0 || c == 0 || cond_dim == 0) {
        throw std::runtime_error("load_model: corrupt header");
    }
    ToyDiffusionModel model(h, c, cond_dim, /*seed=*/0);
    get_matrix(in, model.embed_w);
    get_vector(in, model.embed_b);
    get_matrix(in, model.ffn1_w);
    get_vector(in, model.ffn1_b);
    get_matrix(in, model.ffn2_w);
    get_vector(in, model.ffn2_b);
    get_matrix(in, model.head_w);
    get_vector(in, model.head_b);
    get_matrix(in, model.cond_embed);
    if (!in) throw std::runtime_error("load_model: truncated file");
    return model;
}

}  // namespace fia::toydiff
