#include "medvid/config.hpp"

#include <algorithm>
#include <cctype>

#include "medvid/errors.hpp"
#include "medvid/text.hpp"

namespace medvid::config {

namespace {

[[noreturn]] void fail(std::size_t line_no, const std::string& message) {
    throw Error(errc::config_error, "config line " + std::to_string(line_no) + ": " + message);
}

std::string parse_quoted(const std::string& raw, std::size_t line_no) {
    if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"')
        fail(line_no, "expected a quoted string, got '" + raw + "'");
    std::string out;
    for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
        char c = raw[i];
        if (c == '\\' && i + 2 < raw.size()) {
            const char next = raw[++i];
            switch (next) {
                case 'n': c = '\n'; break;
                case 't': c = '\t'; break;
                case '"': c = '"'; break;
                case '\\': c = '\\'; break;
                default: fail(line_no, std::string("unsupported escape \\") + next);
            }
        }
        out.push_back(c);
    }
    return out;
}

// strips a trailing comment that is not inside a string
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

}  // namespace

Toml Toml::parse(std::string_view text) {
    Toml toml;
    std::string section;
    std::size_t line_no = 0;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string_view::npos) end = text.size();
        std::string line = trim(strip_comment(std::string(text.substr(begin, end - begin))));
        begin = end + 1;
        ++line_no;
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail(line_no, "empty section name");
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string raw = trim(line.substr(eq + 1));
        if (key.empty() || raw.empty()) fail(line_no, "empty key or value");

        const std::string full_key = section.empty() ? key : section + "." + key;
        if (toml.values_.count(full_key)) fail(line_no, "duplicate key '" + full_key + "'");

        Value value;
        if (raw.front() == '"') {
            value.kind = Value::Kind::string;
            value.str = parse_quoted(raw, line_no);
        } else if (raw.front() == '[') {
            if (raw.back() != ']') fail(line_no, "unterminated array");
            value.kind = Value::Kind::string_array;
            std::string inner = trim(raw.substr(1, raw.size() - 2));
            while (!inner.empty()) {
                const auto comma = [&] {
                    bool in_string = false;
                    for (std::size_t i = 0; i < inner.size(); ++i) {
                        if (inner[i] == '"') in_string = !in_string;
                        if (inner[i] == ',' && !in_string) return i;
                    }
                    return inner.size();
                }();
                value.array.push_back(parse_quoted(trim(inner.substr(0, comma)), line_no));
                inner = comma == inner.size() ? "" : trim(inner.substr(comma + 1));
            }
        } else if (raw == "true" || raw == "false") {
            value.kind = Value::Kind::boolean;
            value.boolean = raw == "true";
        } else if (raw.find_first_of(".eE") != std::string::npos &&
                   raw.find_first_not_of("+-0123456789.eE") == std::string::npos) {
            value.kind = Value::Kind::real;
            try {
                value.real = std::stod(raw);
            } catch (const std::exception&) {
                fail(line_no, "bad number '" + raw + "'");
            }
        } else {
            value.kind = Value::Kind::integer;
            try {
                std::size_t used = 0;
                value.integer = std::stoll(raw, &used);
                if (used != raw.size()) fail(line_no, "bad value '" + raw + "'");
            } catch (const Error&) {
                throw;
            } catch (const std::exception&) {
                fail(line_no, "bad value '" + raw + "'");
            }
        }
        toml.values_.emplace(full_key, std::move(value));
    }
    return toml;
}

Toml Toml::parse_file(const std::filesystem::path& path) {
    try {
        return parse(corpus::read_file(path));
    } catch (const Error& e) {
        if (e.code() == errc::io_error)
            throw Error(errc::config_error, "cannot read config file " + path.string());
        throw;
    }
}

bool Toml::has(const std::string& key) const { return values_.count(key) > 0; }

const Toml::Value* Toml::find(const std::string& key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
}

std::string Toml::get_string(const std::string& key, std::string fallback) const {
    const Value* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::string)
        throw Error(errc::config_error, "key '" + key + "' is not a string");
    return v->str;
}

std::int64_t Toml::get_int(const std::string& key, std::int64_t fallback) const {
    const Value* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::integer)
        throw Error(errc::config_error, "key '" + key + "' is not an integer");
    return v->integer;
}

double Toml::get_double(const std::string& key, double fallback) const {
    const Value* v = find(key);
    if (!v) return fallback;
    if (v->kind == Value::Kind::integer) return static_cast<double>(v->integer);
    if (v->kind != Value::Kind::real)
        throw Error(errc::config_error, "key '" + key + "' is not a number");
    return v->real;
}

bool Toml::get_bool(const std::string& key, bool fallback) const {
    const Value* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::boolean)
        throw Error(errc::config_error, "key '" + key + "' is not a boolean");
    return v->boolean;
}

std::vector<std::string> Toml::get_string_array(const std::string& key,
                                                std::vector<std::string> fallback) const {
    const Value* v = find(key);
    if (!v) return fallback;
    if (v->kind != Value::Kind::string_array)
        throw Error(errc::config_error, "key '" + key + "' is not a string array");
    return v->array;
}

namespace {

clients::ServiceConfig load_service(const Toml& toml, const std::string& section,
                                    const std::filesystem::path& base) {
    clients::ServiceConfig cfg;
    cfg.endpoint = toml.get_string(section + ".endpoint", "");
    cfg.api_key_env = toml.get_string(section + ".api_key_env", "");
    cfg.timeout_s = toml.get_double(section + ".timeout_s", 30.0);
    cfg.max_retries = static_cast<int>(toml.get_int(section + ".max_retries", 3));
    cfg.max_parallel = static_cast<int>(toml.get_int(section + ".max_parallel", 4));
    cfg.backoff_initial_ms =
        static_cast<int>(toml.get_int(section + ".backoff_initial_ms", 200));
    if (const auto dir = toml.get_string(section + ".cache_dir", ""); !dir.empty())
        cfg.cache_dir = base / dir;
    if (cfg.max_retries < 0)
        throw Error(errc::config_error, section + ".max_retries must be >= 0");
    if (cfg.max_parallel < 1)
        throw Error(errc::config_error, section + ".max_parallel must be >= 1");
    return cfg;
}

}  // namespace

PipelineConfig load_pipeline_config(const std::filesystem::path& path,
                                    const Overrides& overrides) {
    const Toml toml = Toml::parse_file(path);
    const std::filesystem::path base = path.has_parent_path() ? path.parent_path() : ".";

    PipelineConfig cfg;
    auto resolve = [&](const std::string& key) -> std::filesystem::path {
        const std::string value = toml.get_string(key, "");
        if (value.empty()) return {};
        std::filesystem::path p(value);
        return p.is_absolute() ? p : base / p;
    };

    cfg.corpus_dir = resolve("paths.corpus_dir");
    cfg.topics_path = resolve("paths.topics");
    cfg.qrels_path = resolve("paths.qrels");
    cfg.gold_steps_path = resolve("paths.gold_steps");
    cfg.captions_dir = resolve("paths.captions_dir");
    cfg.output_dir = resolve("paths.output_dir");
    if (cfg.output_dir.empty()) cfg.output_dir = base / "out";

    cfg.strategy.strategy =
        retrieval::strategy_from_string(toml.get_string("retrieval.strategy", "run1_orig_max"));
    cfg.strategy.encoders = toml.get_string_array("retrieval.encoders", {"stub-64"});
    cfg.strategy.k = static_cast<int>(toml.get_int("retrieval.k", 10));
    cfg.strategy.chunk_tokens = static_cast<int>(toml.get_int("retrieval.chunk_tokens", 256));
    cfg.strategy.chunk_stride = static_cast<int>(toml.get_int("retrieval.chunk_stride", 128));
    cfg.strategy.rrf_k = toml.get_double("retrieval.rrf_k", 60.0);
    cfg.strategy.run_tag = toml.get_string("retrieval.run_tag", "");

    cfg.localization.theta = toml.get_double("localization.theta", 0.5);
    cfg.localization.window = static_cast<int>(toml.get_int("localization.window", 3));
    cfg.localization.tau = toml.get_double("localization.tau", 0.8);
    cfg.localization.encoder = toml.get_string("localization.encoder", "");
    cfg.localize_top = static_cast<int>(toml.get_int("localization.top_videos", 1));

    const std::string pairs = toml.get_string("stepcap.pairs", "gold");
    if (pairs == "gold")
        cfg.stepcap_pairs = StepcapPairs::gold;
    else if (pairs == "top1")
        cfg.stepcap_pairs = StepcapPairs::top1;
    else
        throw Error(errc::config_error, "stepcap.pairs must be 'gold' or 'top1'");

    cfg.embedding_service = load_service(toml, "services.embedding", base);
    cfg.chat_service = load_service(toml, "services.chat", base);
    cfg.chat_model = toml.get_string("services.chat_model", "gpt-4");

    cfg.stub_mode = toml.get_bool("run.stub_mode", false);
    cfg.stub_dim = static_cast<std::size_t>(toml.get_int("stub.dim", 64));
    cfg.stub_fixtures_dir = resolve("stub.fixtures_dir");
    cfg.workers = static_cast<int>(toml.get_int("run.workers", 1));
    cfg.seed = static_cast<std::uint64_t>(toml.get_int("run.seed", 0));
    if (toml.has("metrics.ndcg_cutoff"))
        cfg.ndcg_cutoff = static_cast<std::size_t>(toml.get_int("metrics.ndcg_cutoff", 0));

    // flag overrides
    if (overrides.strategy)
        cfg.strategy.strategy = retrieval::strategy_from_string(*overrides.strategy);
    if (overrides.k) cfg.strategy.k = *overrides.k;
    if (overrides.theta) cfg.localization.theta = *overrides.theta;
    if (overrides.stub) cfg.stub_mode = *overrides.stub;
    if (overrides.workers) cfg.workers = *overrides.workers;
    if (overrides.ndcg_cutoff) cfg.ndcg_cutoff = *overrides.ndcg_cutoff;
    if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;

    if (cfg.strategy.run_tag.empty())
        cfg.strategy.run_tag = std::string(retrieval::to_string(cfg.strategy.strategy));
    if (cfg.localization.encoder.empty() && !cfg.strategy.encoders.empty())
        cfg.localization.encoder = cfg.strategy.encoders[0];

    if (cfg.strategy.k < 1) throw Error(errc::config_error, "retrieval.k must be >= 1");
    if (cfg.strategy.chunk_stride > cfg.strategy.chunk_tokens || cfg.strategy.chunk_stride < 1)
        throw Error(errc::config_error, "need 1 <= chunk_stride <= chunk_tokens");
    if (cfg.strategy.rrf_k <= 0.0) throw Error(errc::config_error, "retrieval.rrf_k must be > 0");
    if (cfg.localization.theta < 0.0 || cfg.localization.theta > 1.0)
        throw Error(errc::config_error, "localization.theta must be in [0, 1]");
    if (cfg.workers < 1) throw Error(errc::config_error, "run.workers must be >= 1");
    if (cfg.stub_dim < 1) throw Error(errc::config_error, "stub.dim must be >= 1");
    if (cfg.localize_top < 1) throw Error(errc::config_error, "localization.top_videos >= 1");

    return cfg;
}

}  // namespace medvid::config
