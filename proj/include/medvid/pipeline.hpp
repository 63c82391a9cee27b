#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "medvid/config.hpp"

namespace medvid::pipeline {

// Subcommands: ingest | retrieve | localize | stepcap | eval-retrieval |
// eval-steps | pipeline.
struct CliOptions {
    std::string command;
    std::filesystem::path config_path;
    config::Overrides overrides;
};

// Runs one command end to end. Returns the process exit code: 0 success,
// 1 usage/config, 2 data, 3 service. Structured error messages go to
// stderr. Stage outputs land under output_dir; each stage records a stamp
// keyed by its input digests and is skipped while the stamp matches.
// Timestamps are confined to meta.json so artifact trees stay
// byte-comparable.
int execute(const CliOptions& options);

// Stage entry points (used by execute and by tests).
struct StageResult {
    std::vector<std::filesystem::path> outputs;
    bool cached = false;
};

StageResult stage_ingest(const config::PipelineConfig& cfg);
StageResult stage_retrieve(const config::PipelineConfig& cfg);
StageResult stage_localize(const config::PipelineConfig& cfg);
StageResult stage_stepcap(const config::PipelineConfig& cfg);
StageResult stage_eval_retrieval(const config::PipelineConfig& cfg);
StageResult stage_eval_steps(const config::PipelineConfig& cfg);
void run_pipeline(const config::PipelineConfig& cfg);

// Canonical artifact locations under cfg.output_dir.
std::filesystem::path run_file_path(const config::PipelineConfig& cfg);
std::filesystem::path localization_path(const config::PipelineConfig& cfg);
std::filesystem::path steps_path(const config::PipelineConfig& cfg);

}  // namespace medvid::pipeline
