#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/clients.hpp"
#include "medvid/localization.hpp"
#include "medvid/retrieval.hpp"

namespace medvid::config {

// Minimal TOML reader covering the config surface: [section.sub] tables,
// string / integer / float / boolean values, arrays of strings, # comments.
// Keys are exposed flattened as "section.key". Errors carry line numbers.
class Toml {
public:
    static Toml parse(std::string_view text);
    static Toml parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, std::string fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_string_array(const std::string& key,
                                              std::vector<std::string> fallback) const;

private:
    struct Value {
        enum class Kind { string, integer, real, boolean, string_array } kind;
        std::string str;
        std::int64_t integer = 0;
        double real = 0.0;
        bool boolean = false;
        std::vector<std::string> array;
    };

    const Value* find(const std::string& key) const;

    std::map<std::string, Value> values_;
};

// Which (query, video) pairs the stepcap stage runs on.
enum class StepcapPairs { gold, top1 };

struct PipelineConfig {
    std::filesystem::path corpus_dir;
    std::filesystem::path topics_path;
    std::filesystem::path qrels_path;
    std::filesystem::path gold_steps_path;  // empty: stepcap/eval-steps unavailable
    std::filesystem::path captions_dir;     // generated captions, per-video JSON
    std::filesystem::path output_dir;

    retrieval::StrategyConfig strategy;
    localization::LocalizeConfig localization;
    int localize_top = 1;  // videos per query taken from the run file
    StepcapPairs stepcap_pairs = StepcapPairs::gold;

    clients::ServiceConfig embedding_service;
    clients::ServiceConfig chat_service;
    std::string chat_model = "gpt-4";

    bool stub_mode = false;
    std::size_t stub_dim = 64;
    std::filesystem::path stub_fixtures_dir;

    int workers = 1;
    std::uint64_t seed = 0;
    std::optional<std::size_t> ndcg_cutoff;
};

// Flag overrides applied on top of the config file.
struct Overrides {
    std::optional<std::string> strategy;
    std::optional<int> k;
    std::optional<double> theta;
    std::optional<bool> stub;
    std::optional<int> workers;
    std::optional<std::size_t> ndcg_cutoff;
    std::optional<std::filesystem::path> output_dir;
};

// Loads and validates a config file; relative paths resolve against the
// config file's directory. Raises errc::config_error on bad values.
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const Overrides& overrides);

}  // namespace medvid::config
