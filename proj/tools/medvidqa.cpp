#include <filesystem>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "medvid/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"medvidqa-kit: medical video question answering toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string strategy;
    int k = 0;
    double theta = -1.0;
    bool stub = false;
    int workers = 0;
    long long ndcg_cutoff = 0;
    std::string output_dir;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "pipeline config file (TOML)")->required();
        cmd->add_option("--strategy", strategy,
                        "retrieval strategy (run1_orig_max .. run5_text_to_vision)");
        cmd->add_option("-k", k, "rank cutoff");
        cmd->add_option("--theta", theta, "localization agreement threshold");
        cmd->add_flag("--stub", stub, "force offline stub clients");
        cmd->add_option("--workers", workers, "worker threads");
        cmd->add_option("--ndcg-cutoff", ndcg_cutoff, "nDCG rank cutoff (default: full run)");
        cmd->add_option("--output-dir", output_dir, "override the artifact directory");
    };

    for (const char* name : {"ingest", "retrieve", "localize", "stepcap", "eval-retrieval",
                             "eval-steps", "pipeline"})
        add_common(app.add_subcommand(name));

    CLI11_PARSE(app, argc, argv);

    medvid::pipeline::CliOptions options;
    options.command = app.get_subcommands().front()->get_name();
    options.config_path = config_path;
    if (!strategy.empty()) options.overrides.strategy = strategy;
    if (k > 0) options.overrides.k = k;
    if (theta >= 0.0) options.overrides.theta = theta;
    if (stub) options.overrides.stub = true;
    if (workers > 0) options.overrides.workers = workers;
    if (ndcg_cutoff > 0) options.overrides.ndcg_cutoff = static_cast<std::size_t>(ndcg_cutoff);
    if (!output_dir.empty()) options.overrides.output_dir = output_dir;

    return medvid::pipeline::execute(options);
}
