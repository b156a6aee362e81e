#include "fia/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <map>
#include <sstream>

#include "fia/fusion.hpp"
#include "fia/kernels.hpp"
#include "fia/saliency.hpp"
#include "fia/selection.hpp"
#include "fia/sensitivity.hpp"
#include "fia/toydiff.hpp"
#include "fia/trace.hpp"
#include "fia/util.hpp"

#include "json.hpp"

namespace fia::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_line(const StageContext& ctx, const std::string& message) {
    if (ctx.log != nullptr) *ctx.log << message << '\n';
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

json load_manifest(const fs::path& dir) {
    std::ifstream in(dir / kManifestFile);
    if (!in) return json{{"format", 1}, {"stages", json::object()}};
    json manifest;
    in >> manifest;
    return manifest;
}

void store_manifest(const fs::path& dir, const json& manifest) {
    std::ofstream out(dir / kManifestFile, std::ios::binary);
    out << manifest.dump(2) << '\n';
}

void record_stage(const fs::path& dir, const char* stage, const std::string& hash) {
    json manifest = load_manifest(dir);
    manifest["stages"][stage] = json{{"hash", hash}};
    store_manifest(dir, manifest);
}

void require_stage(const fs::path& dir, const char* stage, const std::string& expected_hash) {
    const json manifest = load_manifest(dir);
    if (!manifest.contains("stages") || !manifest["stages"].contains(stage)) {
        throw PipelineError(std::string("missing input artifacts: run the '") + stage +
                            "' stage first");
    }
    const std::string found = manifest["stages"][stage].value("hash", "");
    if (found != expected_hash) {
        throw PipelineError(std::string("incompatible artifacts: stage '") + stage +
                            "' was produced under a different configuration");
    }
}

// ---------------------------------------------------------------------------
// Seed derivation (stable stream ids per purpose)
// ---------------------------------------------------------------------------

enum SeedPurpose : std::uint64_t {
    kSeedDataset = 1,
    kSeedModelInit = 2,
    kSeedTrain = 3,
    kSeedExport = 4,
};

// ---------------------------------------------------------------------------
// CSV helpers
// ---------------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    return fields;
}

struct SaliencyKey {
    std::string layer_id;
    std::string concept_id;
    friend auto operator<=>(const SaliencyKey&, const SaliencyKey&) = default;
};

std::map<SaliencyKey, saliency::ContrastiveSaliency> read_saliency_csv(const fs::path& path,
                                                                       double epsilon,
                                                                       saliency::StdMode mode) {
    std::ifstream in(path);
    if (!in) throw PipelineError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header

    struct CellRow {
        std::uint32_t timestep, i, j;
        double value;
    };
    std::map<SaliencyKey, std::vector<CellRow>> rows;
    std::map<SaliencyKey, std::pair<std::uint32_t, std::uint32_t>> dims;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 6) throw PipelineError("malformed saliency row: " + line);
        SaliencyKey key{fields[0], fields[1]};
        CellRow row{static_cast<std::uint32_t>(std::stoul(fields[2])),
                    static_cast<std::uint32_t>(std::stoul(fields[3])),
                    static_cast<std::uint32_t>(std::stoul(fields[4])), parse_double(fields[5])};
        auto& d = dims[key];
        d.first = std::max(d.first, row.i + 1);
        d.second = std::max(d.second, row.j + 1);
        rows[key].push_back(row);
    }

    std::map<SaliencyKey, saliency::ContrastiveSaliency> out;
    for (auto& [key, cell_rows] : rows) {
        saliency::ContrastiveSaliency stack;
        stack.layer_id = key.layer_id;
        stack.concept_id = key.concept_id;
        stack.epsilon = epsilon;
        stack.std_mode = mode;
        std::map<std::uint32_t, Matrix> slices;
        const auto [c_out, c_in] = dims[key];
        for (const CellRow& row : cell_rows) {
            auto [it, inserted] = slices.try_emplace(row.timestep, Matrix(c_out, c_in));
            it->second(row.i, row.j) = row.value;
        }
        for (auto& [timestep, matrix] : slices) {
            stack.timesteps.push_back(timestep);
            stack.slices.push_back(std::move(matrix));
        }
        out.emplace(key, std::move(stack));
    }
    return out;
}

std::map<SaliencyKey, sensitivity::SensitivityMap> read_sensitivity_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw PipelineError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);  // header

    struct CellRow {
        std::uint32_t i, j;
        double value;
    };
    std::map<SaliencyKey, std::vector<CellRow>> rows;
    std::map<SaliencyKey, std::pair<std::uint32_t, std::uint32_t>> dims;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5) throw PipelineError("malformed sensitivity row: " + line);
        SaliencyKey key{fields[0], fields[1]};
        CellRow row{static_cast<std::uint32_t>(std::stoul(fields[2])),
                    static_cast<std::uint32_t>(std::stoul(fields[3])), parse_double(fields[4])};
        auto& d = dims[key];
        d.first = std::max(d.first, row.i + 1);
        d.second = std::max(d.second, row.j + 1);
        rows[key].push_back(row);
    }

    std::map<SaliencyKey, sensitivity::SensitivityMap> out;
    for (auto& [key, cell_rows] : rows) {
        sensitivity::SensitivityMap map;
        map.layer_id = key.layer_id;
        map.concept_id = key.concept_id;
        const auto [c_out, c_in] = dims[key];
        map.values = Matrix(c_out, c_in);
        for (const CellRow& row : cell_rows) map.values(row.i, row.j) = row.value;
        out.emplace(key, std::move(map));
    }
    return out;
}

// ---------------------------------------------------------------------------
// In-memory pieces shared by stages and the sweep runner
// ---------------------------------------------------------------------------

std::vector<toydiff::ModelLayer> parse_layers(const std::vector<std::string>& ids) {
    std::vector<toydiff::ModelLayer> layers;
    for (const auto& id : ids) {
        const auto layer = toydiff::model_layer_from_id(id);
        if (!layer) throw PipelineError("unknown model layer '" + id + "'");
        layers.push_back(*layer);
    }
    return layers;
}

/// Saliency stacks for every (target layer, forget concept), fanned out over
/// a small worker pool; results land in request order.
std::vector<saliency::ContrastiveSaliency> compute_saliency_stacks(
    const StageContext& ctx, const trace::ActivationTrace& tr) {
    const auto targets = ctx.cfg.resolve_target_layers();
    struct Task {
        std::string layer_id;
        std::string concept_id;
    };
    std::vector<Task> tasks;
    for (const auto& layer_id : targets) {
        for (const auto& concept_id : ctx.cfg.forget_concepts) {
            tasks.push_back({layer_id, concept_id});
        }
    }

    std::vector<saliency::ContrastiveSaliency> results(tasks.size());
    auto run_task = [&](std::size_t index) {
        const Task& task = tasks[index];
        results[index] =
            saliency::saliency_for_concept(tr, task.layer_id, task.concept_id, "base",
                                           ctx.cfg.window, ctx.cfg.epsilon, ctx.cfg.std_mode);
    };

    const int workers = std::max(1, ctx.workers);
    if (workers == 1 || tasks.size() <= 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
    } else {
        std::size_t next = 0;
        while (next < tasks.size()) {
            std::vector<std::future<void>> batch;
            for (int w = 0; w < workers && next < tasks.size(); ++w, ++next) {
                batch.push_back(std::async(std::launch::async, run_task, next));
            }
            for (auto& f : batch) f.get();
        }
    }
    return results;
}

struct PlanBundle {
    std::map<std::string, fusion::FusedMaskPlan> per_layer;  // keyed by layer_id

    std::size_t agnostic_count() const {
        std::size_t n = 0;
        for (const auto& [id, plan] : per_layer) n += plan.agnostic_set.size();
        return n;
    }
    std::size_t prune_count() const {
        std::size_t n = 0;
        for (const auto& [id, plan] : per_layer) n += plan.prune_set.size();
        return n;
    }
};

PlanBundle build_plans(const StageContext& ctx,
                       const std::map<SaliencyKey, sensitivity::SensitivityMap>& maps,
                       std::ostream* warnings) {
    PlanBundle bundle;
    for (const auto& layer_id : ctx.cfg.resolve_target_layers()) {
        std::vector<fusion::ConceptMask> masks;
        for (const auto& concept_id : ctx.cfg.forget_concepts) {
            auto it = maps.find(SaliencyKey{layer_id, concept_id});
            if (it == maps.end()) {
                throw PipelineError("missing sensitivity map for layer '" + layer_id +
                                    "' concept '" + concept_id + "'");
            }
            const auto& map = it->second;
            const selection::SelectionConfig selection_cfg{ctx.cfg.r2_for(concept_id),
                                                           ctx.cfg.granularity};
            const auto neurons = selection::select_neurons(map, selection_cfg);
            masks.push_back(fusion::build_mask(neurons,
                                               static_cast<std::uint32_t>(map.values.rows()),
                                               static_cast<std::uint32_t>(map.values.cols())));
        }
        if (masks.size() == 1) {
            if (warnings != nullptr) {
                *warnings << "warning: single concept, bypassing fusion and pruning its mask "
                             "directly\n";
            }
            bundle.per_layer.emplace(layer_id, fusion::direct_prune_plan(masks.front()));
        } else {
            bundle.per_layer.emplace(layer_id, fusion::fuse_masks(masks, ctx.cfg.alpha));
        }
    }
    return bundle;
}

toydiff::ToyDiffusionModel apply_bundle(const toydiff::ToyDiffusionModel& model,
                                        const PlanBundle& bundle) {
    toydiff::ToyDiffusionModel pruned = model;
    for (const auto& [layer_id, plan] : bundle.per_layer) {
        const auto layer = toydiff::model_layer_from_id(layer_id);
        if (!layer) throw PipelineError("plan references unknown layer '" + layer_id + "'");
        pruned.layer_weights(*layer) = fusion::apply_plan(pruned.layer_weights(*layer), plan);
    }
    return pruned;
}

evaluate::RunReport evaluate_models(const StageContext& ctx,
                                    const toydiff::ToyDiffusionModel& before,
                                    const toydiff::ToyDiffusionModel& after,
                                    const PlanBundle& bundle,
                                    std::map<std::string, std::vector<evaluate::Point2>>* pre_out,
                                    std::map<std::string, std::vector<evaluate::Point2>>* post_out) {
    const auto schedule = toydiff::NoiseSchedule::linear(ctx.cfg.total_timesteps,
                                                         ctx.cfg.beta_first, ctx.cfg.beta_last);
    evaluate::RunReport report;
    auto eval_concept = [&](const std::string& concept_id, bool forget) {
        const auto c = ctx.cfg.concept_index_of(concept_id);
        const auto seed = mix_seed(ctx.cfg.eval_seed, 100, c);
        const auto pre = toydiff::sample(before, schedule, c, ctx.cfg.eval_samples, seed);
        const auto post = toydiff::sample(after, schedule, c, ctx.cfg.eval_samples, seed);
        evaluate::ConceptResult result;
        result.concept_id = concept_id;
        result.forget = forget;
        result.acc_pre = evaluate::assignment_accuracy(pre, c, ctx.cfg.data.modes);
        result.acc_post = evaluate::assignment_accuracy(post, c, ctx.cfg.data.modes);
        report.concepts.push_back(result);
        if (pre_out != nullptr) (*pre_out)[concept_id] = pre;
        if (post_out != nullptr) (*post_out)[concept_id] = post;
    };
    for (const auto& concept_id : ctx.cfg.forget_concepts) eval_concept(concept_id, true);
    for (const auto& concept_id : ctx.cfg.preserve_concepts) eval_concept(concept_id, false);

    for (const auto& [layer_id, plan] : bundle.per_layer) {
        const double cells = static_cast<double>(plan.c_out) * plan.c_in;
        report.pruned_fraction[layer_id] =
            static_cast<double>(plan.prune_set.size()) / cells;
    }
    return report;
}

PlanBundle load_plans(const StageContext& ctx) {
    PlanBundle bundle;
    for (const auto& layer_id : ctx.cfg.resolve_target_layers()) {
        const fs::path path = ctx.out_dir / plan_file_name(layer_id);
        std::ifstream in(path);
        if (!in) throw PipelineError("cannot open " + path.string());
        json j;
        in >> j;
        bundle.per_layer.emplace(layer_id, fusion::plan_from_json(j));
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

void stage_trace(const StageContext& ctx) {
    const auto& cfg = ctx.cfg;
    const auto hashes = config::compute_stage_hashes(cfg);
    fs::create_directories(ctx.out_dir);

    log_line(ctx, "[trace] generating dataset and training the testbed");
    const auto dataset = toydiff::make_dataset(cfg.data, mix_seed(cfg.seed, kSeedDataset));
    toydiff::ToyDiffusionModel model(cfg.hidden_width, cfg.data.concept_count, cfg.cond_dim,
                                     mix_seed(cfg.seed, kSeedModelInit));
    const auto schedule =
        toydiff::NoiseSchedule::linear(cfg.total_timesteps, cfg.beta_first, cfg.beta_last);
    const auto curve =
        toydiff::train(model, dataset, schedule, cfg.train, mix_seed(cfg.seed, kSeedTrain));

    {
        std::ofstream loss(ctx.out_dir / kLossFile, std::ios::binary);
        loss << "step,loss\n";
        for (std::size_t s = 0; s < curve.size(); ++s) {
            loss << s << ',' << format_double(curve[s]) << '\n';
        }
    }
    toydiff::save_model(model, ctx.out_dir / kModelFile);

    log_line(ctx, "[trace] exporting activation trace");
    std::vector<std::uint32_t> concepts(cfg.data.concept_count);
    for (std::uint32_t c = 0; c < cfg.data.concept_count; ++c) concepts[c] = c;
    const auto tr =
        toydiff::export_trace(model, schedule, concepts, cfg.prompts_per_group, cfg.positions,
                              parse_layers(cfg.trace_layers), mix_seed(cfg.seed, kSeedExport));
    trace::save_trace(tr, ctx.out_dir / kTraceFile);
    record_stage(ctx.out_dir, "trace", hashes.trace);
}

void stage_saliency(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "trace", hashes.trace);
    log_line(ctx, "[saliency] contrasting concept groups against the base group");

    const auto tr = trace::load_trace(ctx.out_dir / kTraceFile);
    const auto stacks = compute_saliency_stacks(ctx, tr);
    std::ofstream out(ctx.out_dir / kSaliencyFile, std::ios::binary);
    bool header = true;
    for (const auto& stack : stacks) {
        saliency::write_saliency_csv(out, stack, header);
        header = false;
    }
    record_stage(ctx.out_dir, "saliency", hashes.saliency);
}

void stage_sensitivity(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "saliency", hashes.saliency);
    log_line(ctx, "[sensitivity] integrating saliency across the timestep window");

    const auto stacks =
        read_saliency_csv(ctx.out_dir / kSaliencyFile, ctx.cfg.epsilon, ctx.cfg.std_mode);
    std::ofstream out(ctx.out_dir / kSensitivityFile, std::ios::binary);
    bool header = true;
    for (const auto& [key, stack] : stacks) {
        const auto thresholds = sensitivity::compute_thresholds(stack, ctx.cfg.r1);
        const auto map = sensitivity::integrate_time(stack, thresholds);
        sensitivity::write_sensitivity_csv(out, map, header);
        header = false;
    }
    record_stage(ctx.out_dir, "sensitivity", hashes.sensitivity);
}

void stage_select(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "sensitivity", hashes.sensitivity);
    log_line(ctx, "[select] picking concept-sensitive neurons");

    const auto maps = read_sensitivity_csv(ctx.out_dir / kSensitivityFile);
    for (const auto& concept_id : ctx.cfg.forget_concepts) {
        nlohmann::ordered_json doc;
        doc["concept_id"] = concept_id;
        doc["granularity"] = selection::granularity_name(ctx.cfg.granularity);
        doc["r2"] = ctx.cfg.r2_for(concept_id);
        nlohmann::ordered_json layers = nlohmann::ordered_json::array();
        for (const auto& layer_id : ctx.cfg.resolve_target_layers()) {
            auto it = maps.find(SaliencyKey{layer_id, concept_id});
            if (it == maps.end()) {
                throw PipelineError("missing sensitivity map for layer '" + layer_id +
                                    "' concept '" + concept_id + "'");
            }
            const selection::SelectionConfig selection_cfg{ctx.cfg.r2_for(concept_id),
                                                           ctx.cfg.granularity};
            const auto neurons = selection::select_neurons(it->second, selection_cfg);
            nlohmann::ordered_json layer_doc;
            layer_doc["layer_id"] = layer_id;
            layer_doc["c_out"] = it->second.values.rows();
            layer_doc["c_in"] = it->second.values.cols();
            nlohmann::ordered_json cells = nlohmann::ordered_json::array();
            for (const auto& [i, j] : neurons.members) cells.push_back({i, j});
            layer_doc["cells"] = cells;
            layers.push_back(layer_doc);
        }
        doc["layers"] = layers;
        std::ofstream out(ctx.out_dir / mask_file_name(concept_id), std::ios::binary);
        out << doc.dump(2) << '\n';
    }
    record_stage(ctx.out_dir, "select", hashes.select);
}

void stage_fuse(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "select", hashes.select);
    log_line(ctx, "[fuse] fusing per-concept masks");

    // Collect masks per layer from the per-concept files.
    std::map<std::string, std::vector<fusion::ConceptMask>> per_layer;
    for (const auto& concept_id : ctx.cfg.forget_concepts) {
        const fs::path path = ctx.out_dir / mask_file_name(concept_id);
        std::ifstream in(path);
        if (!in) throw PipelineError("cannot open " + path.string());
        json doc;
        in >> doc;
        for (const auto& layer_doc : doc.at("layers")) {
            fusion::ConceptMask mask;
            mask.layer_id = layer_doc.at("layer_id").get<std::string>();
            mask.concept_id = concept_id;
            mask.c_out = layer_doc.at("c_out").get<std::uint32_t>();
            mask.c_in = layer_doc.at("c_in").get<std::uint32_t>();
            mask.mask.assign(static_cast<std::size_t>(mask.c_out) * mask.c_in, 0u);
            for (const auto& cell : layer_doc.at("cells")) {
                const auto i = cell.at(0).get<std::uint32_t>();
                const auto j = cell.at(1).get<std::uint32_t>();
                mask.mask[static_cast<std::size_t>(i) * mask.c_in + j] = 1u;
            }
            per_layer[mask.layer_id].push_back(std::move(mask));
        }
    }

    for (const auto& [layer_id, masks] : per_layer) {
        fusion::FusedMaskPlan plan;
        if (masks.size() == 1) {
            log_line(ctx, "[fuse] warning: single concept, pruning its mask directly");
            plan = fusion::direct_prune_plan(masks.front());
        } else {
            plan = fusion::fuse_masks(masks, ctx.cfg.alpha);
        }
        std::ofstream out(ctx.out_dir / plan_file_name(layer_id), std::ios::binary);
        out << fusion::plan_to_json(plan).dump(2) << '\n';
    }
    record_stage(ctx.out_dir, "fuse", hashes.fuse);
}

void stage_apply(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "trace", hashes.trace);
    require_stage(ctx.out_dir, "fuse", hashes.fuse);
    log_line(ctx, "[apply] zeroing pruned connections");

    auto model = toydiff::load_model(ctx.out_dir / kModelFile);
    const auto bundle = load_plans(ctx);
    const auto pruned = apply_bundle(model, bundle);
    toydiff::save_model(pruned, ctx.out_dir / kPrunedModelFile);
    record_stage(ctx.out_dir, "apply", hashes.apply);
}

void stage_eval(const StageContext& ctx) {
    const auto hashes = config::compute_stage_hashes(ctx.cfg);
    require_stage(ctx.out_dir, "apply", hashes.apply);
    log_line(ctx, "[eval] sampling before/after models");

    const auto before = toydiff::load_model(ctx.out_dir / kModelFile);
    const auto after = toydiff::load_model(ctx.out_dir / kPrunedModelFile);
    const auto bundle = load_plans(ctx);

    std::map<std::string, std::vector<evaluate::Point2>> pre, post;
    const auto report = evaluate_models(ctx, before, after, bundle, &pre, &post);

    std::ofstream concepts_csv(ctx.out_dir / kEvalConceptsFile, std::ios::binary);
    std::ofstream aggregate_csv(ctx.out_dir / kEvalAggregateFile, std::ios::binary);
    evaluate::summarize(report, concepts_csv, aggregate_csv);

    for (const auto& [concept_id, pre_samples] : pre) {
        std::ofstream svg(ctx.out_dir / ("scatter_" + concept_id + ".svg"), std::ios::binary);
        evaluate::write_scatter_svg(svg, pre_samples, post.at(concept_id), ctx.cfg.data.modes,
                                    concept_id);
    }
    record_stage(ctx.out_dir, "eval", hashes.eval);
}

}  // namespace

std::string mask_file_name(const std::string& concept_id) {
    return "mask_" + concept_id + ".json";
}

std::string plan_file_name(const std::string& layer_id) { return "plan_" + layer_id + ".json"; }

std::optional<Stage> stage_from_name(std::string_view name) {
    if (name == "trace") return Stage::Trace;
    if (name == "saliency") return Stage::Saliency;
    if (name == "sensitivity") return Stage::Sensitivity;
    if (name == "select") return Stage::Select;
    if (name == "fuse") return Stage::Fuse;
    if (name == "apply") return Stage::Apply;
    if (name == "eval") return Stage::Eval;
    return std::nullopt;
}

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Trace: return "trace";
        case Stage::Saliency: return "saliency";
        case Stage::Sensitivity: return "sensitivity";
        case Stage::Select: return "select";
        case Stage::Fuse: return "fuse";
        case Stage::Apply: return "apply";
        case Stage::Eval: return "eval";
    }
    return "?";
}

void run_stage(const StageContext& ctx, Stage stage) {
    ctx.cfg.validate();
    fs::create_directories(ctx.out_dir);
    switch (stage) {
        case Stage::Trace: stage_trace(ctx); return;
        case Stage::Saliency: stage_saliency(ctx); return;
        case Stage::Sensitivity: stage_sensitivity(ctx); return;
        case Stage::Select: stage_select(ctx); return;
        case Stage::Fuse: stage_fuse(ctx); return;
        case Stage::Apply: stage_apply(ctx); return;
        case Stage::Eval: stage_eval(ctx); return;
    }
}

void run_all(const StageContext& ctx) {
    for (Stage stage : {Stage::Trace, Stage::Saliency, Stage::Sensitivity, Stage::Select,
                        Stage::Fuse, Stage::Apply, Stage::Eval}) {
        run_stage(ctx, stage);
    }
}

std::vector<SweepRow> run_sweep(const StageContext& ctx, const std::string& param,
                                const std::vector<std::string>& values) {
    if (values.empty()) throw config::ConfigError("sweep: empty value list");
    if (param != "alpha" && param != "r2" && param != "granularity") {
        throw config::ConfigError("sweep: param must be alpha, r2 or granularity");
    }
    ctx.cfg.validate();

    // Shared upstream artifacts: one trace, one saliency/sensitivity pass.
    run_stage(ctx, Stage::Trace);
    run_stage(ctx, Stage::Saliency);
    run_stage(ctx, Stage::Sensitivity);

    const auto maps = read_sensitivity_csv(ctx.out_dir / kSensitivityFile);
    const auto model = toydiff::load_model(ctx.out_dir / kModelFile);

    std::vector<SweepRow> rows;
    for (const std::string& value : values) {
        StageContext local = ctx;
        if (param == "alpha") {
            local.cfg.alpha = config::parse_fraction(value);
        } else if (param == "r2") {
            local.cfg.r2 = config::parse_fraction(value);
            local.cfg.r2_per_concept.clear();
        } else {
            const auto g = selection::granularity_from_name(value);
            if (!g) throw config::ConfigError("sweep: bad granularity '" + value + "'");
            local.cfg.granularity = *g;
        }
        local.cfg.validate();

        const auto bundle = build_plans(local, maps, nullptr);
        const auto pruned = apply_bundle(model, bundle);
        const auto report = evaluate_models(local, model, pruned, bundle, nullptr, nullptr);
        std::ostringstream discard_a, discard_b;
        const auto summary = evaluate::summarize(report, discard_a, discard_b);

        SweepRow row;
        row.value = value;
        row.agnostic_count = bundle.agnostic_count();
        row.prune_count = bundle.prune_count();
        row.forget_acc = summary.forget_acc;
        row.preserve_acc = summary.preserve_acc;
        row.overall = summary.overall;
        rows.push_back(row);
        log_line(ctx, "[sweep] " + param + " = " + value + " done");
    }

    // Sanity checks on the direction of the sweep.
    if (param == "alpha") {
        std::vector<std::size_t> order(rows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return config::parse_fraction(rows[a].value) < config::parse_fraction(rows[b].value);
        });
        for (std::size_t k = 1; k < order.size(); ++k) {
            if (rows[order[k]].agnostic_count > rows[order[k - 1]].agnostic_count) {
                throw PipelineError("sweep: agnostic count increased with alpha");
            }
        }
    }
    if (param == "r2") {
        std::vector<std::size_t> order(rows.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return config::parse_fraction(rows[a].value) < config::parse_fraction(rows[b].value);
        });
        for (std::size_t k = 1; k < order.size(); ++k) {
            const auto selected = rows[order[k]].agnostic_count + rows[order[k]].prune_count;
            const auto prev =
                rows[order[k - 1]].agnostic_count + rows[order[k - 1]].prune_count;
            if (selected < prev) {
                throw PipelineError("sweep: selected cell count decreased with r2");
            }
        }
    }

    std::ofstream csv(ctx.out_dir / kSweepFile, std::ios::binary);
    csv << param << ",agnostic_count,prune_count,F,P,overall\n";
    auto cell = [](const std::optional<double>& v) {
        return v ? format_double(*v) : std::string();
    };
    for (const auto& row : rows) {
        csv << row.value << ',' << row.agnostic_count << ',' << row.prune_count << ','
            << cell(row.forget_acc) << ',' << cell(row.preserve_acc) << ',' << cell(row.overall)
            << '\n';
    }
    return rows;
}

evaluate::Summary summarize_report_file(const std::filesystem::path& report,
                                        std::ostream& per_concept_csv,
                                        std::ostream& aggregate_csv) {
    std::ifstream in(report);
    if (!in) throw PipelineError("cannot open " + report.string());
    std::string line;
    std::getline(in, line);  // header
    evaluate::RunReport parsed;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4) throw PipelineError("malformed report row: " + line);
        evaluate::ConceptResult result;
        result.concept_id = fields[0];
        if (fields[1] == "forget") {
            result.forget = true;
        } else if (fields[1] == "preserve") {
            result.forget = false;
        } else {
            throw PipelineError("report role must be forget or preserve: " + line);
        }
        result.acc_pre = parse_double(fields[2]);
        result.acc_post = parse_double(fields[3]);
        parsed.concepts.push_back(result);
    }
    return evaluate::summarize(parsed, per_concept_csv, aggregate_csv);
}

}  // namespace fia::pipeline
