#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "adaptagen/config.hpp"
#include "adaptagen/pipeline.hpp"
#include "adaptagen/registry.hpp"
#include "adaptagen/report.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string from;
    std::string until;
    bool disable_fusion = false;
    bool disable_transform = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool stage_range) {
    cmd->add_option("--config", args.config, "run configuration (YAML or JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.seed, "override the run seed");
    cmd->add_option("--out-dir", args.out_dir, "override output.out_dir");
    if (stage_range) {
        cmd->add_option("--from", args.from, "first stage to run");
        cmd->add_option("--until", args.until, "last stage to run");
    }
    cmd->add_flag("--disable-fusion", args.disable_fusion, "replace fused prompts with cycled paraphrases");
    cmd->add_flag("--disable-transform", args.disable_transform, "use selected captions as prompts verbatim");
}

int run(const CommonArgs& args, std::optional<adaptagen::Stage> only) {
    using namespace adaptagen;
    const BackendRegistry registry = default_registry();
    RunConfig cfg = load_config(args.config, &registry);
    if (args.seed) {
        cfg.seed = *args.seed;
    }
    if (!args.out_dir.empty()) {
        cfg.out_dir = args.out_dir;
    }
    cfg.transform.disable_fusion = cfg.transform.disable_fusion || args.disable_fusion;
    cfg.transform.disable_transform = cfg.transform.disable_transform || args.disable_transform;

    RunOptions options;
    if (only) {
        options.from = options.until = *only;
    } else {
        if (!args.from.empty()) options.from = stage_from_string(args.from);
        if (!args.until.empty()) options.until = stage_from_string(args.until);
    }
    const RunReport report = run_pipeline(cfg, registry, options);
    for (const auto& s : report.stages) {
        if (s.status != StageStatus::skipped) {
            std::cout << to_string(s.stage) << ": " << to_string(s.status);
            if (!s.error.empty()) {
                std::cout << " (" << s.error << ")";
            }
            std::cout << "\n";
        }
    }
    std::cout << "digest " << report.digest << "\n";
    return report.ok() ? EXIT_SUCCESS : EXIT_FAILURE;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain-adapted synthetic image generation pipeline"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    CommonArgs args;
    std::optional<adaptagen::Stage> only;
    for (adaptagen::Stage stage : adaptagen::kAllStages) {
        const std::string name(adaptagen::to_string(stage));
        auto* cmd = app.add_subcommand(name, "run only the " + name + " stage");
        add_common(cmd, args, false);
        cmd->callback([&only, stage] { only = stage; });
    }
    auto* pipeline = app.add_subcommand("pipeline", "run every stage (or a --from/--until range)");
    add_common(pipeline, args, true);

    std::string metrics_path;
    std::string svg_path;
    auto* report = app.add_subcommand("report", "print a metrics table, optionally write an SVG plot");
    report->add_option("metrics", metrics_path, "metrics.json (or a run directory)")->required();
    report->add_option("--svg", svg_path, "write bar charts to this SVG file");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    spdlog::set_pattern("[%H:%M:%S] [%l] %v");

    try {
        if (report->parsed()) {
            std::filesystem::path path = metrics_path;
            if (std::filesystem::is_directory(path)) {
                path /= adaptagen::artifact::kMetrics;
            }
            const auto doc = adaptagen::read_json(path);
            std::cout << adaptagen::render_metrics_table(doc);
            if (!svg_path.empty()) {
                adaptagen::write_text_atomic(svg_path, adaptagen::render_metrics_svg(doc));
            }
            return EXIT_SUCCESS;
        }
        return run(args, pipeline->parsed() ? std::nullopt : only);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return EXIT_FAILURE;
    }
}
