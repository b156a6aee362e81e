// Command-line front end for the concept-unlearning pipeline. Subcommands map
// one-to-one onto pipeline stages, plus `run` (all stages) and `sweep`.

#include <chrono>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fia/config.hpp"
#include "fia/kernels.hpp"
#include "fia/pipeline.hpp"
#include "fia/util.hpp"

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    int workers = 1;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> granularity;
    std::optional<std::string> window;
    std::optional<double> alpha;
    std::optional<std::string> r1;  // percent semantics, e.g. "5" or "5%"
    std::optional<std::string> r2;
};

void add_common_options(CLI::App* cmd, CliOptions& opts) {
    cmd->add_option("--config", opts.config_path, "pipeline configuration file");
    cmd->add_option("--out-dir", opts.out_dir,
                    "artifact directory (default: timestamped fia-run-*)");
    cmd->add_option("--seed", opts.seed, "master seed override");
    cmd->add_option("--workers", opts.workers, "worker threads for per-concept fan-out")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--granularity", opts.granularity, "channel | layer | both");
    cmd->add_option("--alpha", opts.alpha, "concept-agnostic ratio in (0, 1]");
    cmd->add_option("--r1", opts.r1, "temporal sparsity in percent (e.g. 5 or 5%)");
    cmd->add_option("--r2", opts.r2, "spatial sparsity in percent (e.g. 1 or 0.7%)");
    cmd->add_option("--window", opts.window, "timestep window first:last");
}

std::string timestamped_dir() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_buf{};
    localtime_r(&now, &tm_buf);
    char buf[64];
    std::strftime(buf, sizeof(buf), "fia-run-%Y%m%d-%H%M%S", &tm_buf);
    return buf;
}

fia::pipeline::StageContext make_context(const CliOptions& opts) {
    fia::config::PipelineConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = fia::config::parse_config_file(opts.config_path);
    }
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.alpha) cfg.alpha = *opts.alpha;
    if (opts.r1) cfg.r1 = fia::config::parse_percent_flag(*opts.r1);
    if (opts.r2) {
        cfg.r2 = fia::config::parse_percent_flag(*opts.r2);
        cfg.r2_per_concept.clear();
    }
    if (opts.granularity) {
        const auto g = fia::selection::granularity_from_name(*opts.granularity);
        if (!g) throw fia::config::ConfigError("granularity must be channel, layer or both");
        cfg.granularity = *g;
    }
    if (opts.window) {
        const auto sep = opts.window->find(':');
        if (sep == std::string::npos) {
            throw fia::config::ConfigError("window must be first:last");
        }
        cfg.window.first = static_cast<std::uint32_t>(
            std::stoul(opts.window->substr(0, sep)));
        cfg.window.last = static_cast<std::uint32_t>(std::stoul(opts.window->substr(sep + 1)));
    }
    cfg.validate();

    fia::pipeline::StageContext ctx;
    ctx.cfg = cfg;
    ctx.out_dir = opts.out_dir.empty() ? timestamped_dir() : opts.out_dir;
    ctx.workers = opts.workers;
    ctx.log = &std::cout;
    return ctx;
}

int fail_stage(const std::string& stage, const std::exception& e) {
    std::cerr << "stage " << stage << " failed: " << e.what() << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free concept unlearning on a toy conditional diffusion testbed"};
    app.require_subcommand(1);

    CliOptions opts;
    std::string sweep_param;
    std::vector<std::string> sweep_values;
    std::string report_path;

    auto* cmd_run = app.add_subcommand("run", "execute the full pipeline");
    add_common_options(cmd_run, opts);

    const char* stage_names[] = {"trace", "saliency", "sensitivity", "select",
                                 "fuse", "apply", "eval"};
    const char* stage_help[] = {
        "train the testbed and record the activation trace",
        "compute contrastive saliency per concept",
        "integrate saliency over the timestep window",
        "select concept-sensitive neurons",
        "fuse per-concept masks into a pruning plan",
        "apply the pruning plan to the checkpoint",
        "evaluate forgetting/preservation accuracy",
    };
    std::vector<CLI::App*> stage_cmds;
    for (int s = 0; s < 7; ++s) {
        auto* cmd = app.add_subcommand(stage_names[s], stage_help[s]);
        add_common_options(cmd, opts);
        stage_cmds.push_back(cmd);
    }
    // eval can also summarize a standalone report file.
    stage_cmds[6]->add_option("--report", report_path,
                              "summarize a per-concept report CSV instead of artifacts");

    auto* cmd_sweep = app.add_subcommand("sweep", "run the pipeline across parameter values");
    add_common_options(cmd_sweep, opts);
    cmd_sweep->add_option("--param", sweep_param, "alpha | r2 | granularity")->required();
    cmd_sweep
        ->add_option("--values", sweep_values,
                     "comma-separated list of swept values")
        ->required()
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags count as configuration errors
    }

    std::string current_stage = "startup";
    try {
        if (cmd_run->parsed()) {
            const auto ctx = make_context(opts);
            current_stage = "run";
            fia::pipeline::run_all(ctx);
            std::cout << "artifacts written to " << ctx.out_dir.string() << '\n';
            return 0;
        }
        if (cmd_sweep->parsed()) {
            const auto ctx = make_context(opts);
            current_stage = "sweep";
            fia::pipeline::run_sweep(ctx, sweep_param, sweep_values);
            std::cout << "sweep written to "
                      << (ctx.out_dir / fia::pipeline::kSweepFile).string() << '\n';
            return 0;
        }
        for (int s = 0; s < 7; ++s) {
            if (!stage_cmds[s]->parsed()) continue;
            if (s == 6 && !report_path.empty()) {
                // Standalone report summary; no artifacts involved.
                const auto summary =
                    fia::pipeline::summarize_report_file(report_path, std::cout, std::cout);
                if (summary.overall) {
                    std::printf("overall_score = %.1f\n", *summary.overall);
                }
                return 0;
            }
            const auto ctx = make_context(opts);
            current_stage = stage_names[s];
            fia::pipeline::run_stage(ctx, *fia::pipeline::stage_from_name(stage_names[s]));
            return 0;
        }
    } catch (const fia::config::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        return fail_stage(current_stage, e);
    }
    return 0;
}
