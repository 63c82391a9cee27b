#include "medvid/clients.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "medvid/hash.hpp"
#include "medvid/parallel.hpp"
#include "medvid/text.hpp"

namespace medvid::clients {

using nlohmann::json;

EmbeddingVector stub_embed(std::string_view text, std::size_t dim) {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw Error(errc::empty_text, "no tokens to embed");

    std::vector<double> values(dim, 0.0);
    for (const auto& token : tokens) values[fnv1a64(token) % dim] += 1.0;

    double norm_sq = 0.0;
    for (double v : values) norm_sq += v * v;
    const double norm = std::sqrt(norm_sq);
    for (double& v : values) v /= norm;

    return EmbeddingVector{"stub-" + std::to_string(dim), dim, std::move(values)};
}

std::string embedding_cache_key(std::string_view model_id, std::string_view text) {
    std::string material(model_id);
    material.push_back('\0');
    material.append(text);
    return sha256_hex(material);
}

std::string prompt_cache_key(std::string_view model_id, std::string_view system,
                             std::string_view user) {
    std::string material(model_id);
    material.push_back('\0');
    material.append(system);
    material.push_back('\0');
    material.append(user);
    return sha256_hex(material);
}

namespace {

void sleep_backoff(const ServiceConfig& cfg, int attempt) {
    if (cfg.backoff_initial_ms <= 0) return;
    long long delay = cfg.backoff_initial_ms;
    for (int i = 0; i < attempt; ++i) delay *= 2;
    delay = std::min<long long>(delay, 10'000);
    std::this_thread::sleep_for(std::chrono::milliseconds(delay));
}

// Retries transient failures up to cfg.max_retries with exponential backoff;
// permanent failures propagate immediately.
template <typename Fn>
auto with_retries(const ServiceConfig& cfg, Fn&& fn) {
    for (int attempt = 0;; ++attempt) {
        try {
            return fn();
        } catch (const TransientServiceError&) {
            if (attempt >= cfg.max_retries) throw;
            sleep_backoff(cfg, attempt);
        }
    }
}

std::optional<std::string> cache_read(const std::filesystem::path& dir, const std::string& key,
                                      const char* ext) {
    if (dir.empty()) return std::nullopt;
    const auto path = dir / (key + ext);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    return corpus::read_file(path);
}

void cache_write(const std::filesystem::path& dir, const std::string& key, const char* ext,
                 std::string_view contents) {
    if (dir.empty()) return;
    corpus::write_file_atomic(dir / (key + ext), contents);
}

std::size_t stub_dim_for_model(const std::string& model_id, std::size_t default_dim) {
    constexpr std::string_view prefix = "stub-";
    if (model_id.rfind(prefix, 0) == 0) {
        const std::string digits = model_id.substr(prefix.size());
        if (!digits.empty() && std::all_of(digits.begin(), digits.end(), [](unsigned char c) {
                return std::isdigit(c) != 0;
            }))
            return static_cast<std::size_t>(std::stoull(digits));
    }
    return default_dim;
}

class StubEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit StubEmbeddingBackend(std::size_t default_dim) : default_dim_(default_dim) {}

    std::vector<double> embed_one(const std::string& text, const std::string& model_id) override {
        return stub_embed(text, stub_dim_for_model(model_id, default_dim_)).values;
    }

private:
    std::size_t default_dim_;
};

// scheme://host[:port] base plus request path.
struct SplitUrl {
    std::string base;
    std::string path;
};

SplitUrl split_url(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw Error(errc::config_error, "endpoint '" + endpoint + "' has no scheme");
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

httplib::Result post_json(const ServiceConfig& cfg, const json& body) {
    const auto url = split_url(cfg.endpoint);
    httplib::Client client(url.base);
    const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);

    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    return client.Post(url.path, headers, body.dump(), "application/json");
}

json parse_service_response(const httplib::Result& res, const std::string& what) {
    if (!res)
        throw TransientServiceError(what + ": " + httplib::to_string(res.error()));
    if (res->status >= 500)
        throw TransientServiceError(what + ": HTTP " + std::to_string(res->status));
    if (res->status != 200)
        throw Error(errc::service_unavailable, what + ": HTTP " + std::to_string(res->status));
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw Error(errc::service_unavailable, what + ": bad response body: " + e.what());
    }
}

class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

    std::vector<double> embed_one(const std::string& text, const std::string& model_id) override {
        const json body = {{"model", model_id}, {"input", json::array({text})}};
        const json doc = parse_service_response(post_json(cfg_, body), "embedding service");
        if (!doc.contains("data") || !doc["data"].is_array() || doc["data"].empty() ||
            !doc["data"][0].contains("embedding"))
            throw Error(errc::service_unavailable, "embedding service: missing data[0].embedding");
        return doc["data"][0]["embedding"].get<std::vector<double>>();
    }

private:
    ServiceConfig cfg_;
};

class StubChatBackend final : public ChatBackend {
public:
    explicit StubChatBackend(std::filesystem::path fixtures_dir)
        : fixtures_dir_(std::move(fixtures_dir)) {}

    std::string complete(const std::string& system, const std::string& user,
                         const std::string& model_id) override {
        const std::string key = prompt_cache_key(model_id, system, user);
        const auto path = fixtures_dir_ / (key + ".txt");
        std::error_code ec;
        if (!std::filesystem::exists(path, ec))
            throw Error(errc::stub_miss, "no fixture for prompt key " + key);
        return corpus::read_file(path);
    }

private:
    std::filesystem::path fixtures_dir_;
};

class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(ServiceConfig cfg) : cfg_(std::move(cfg)) {}

    std::string complete(const std::string& system, const std::string& user,
                         const std::string& model_id) override {
        const json body = {{"model", model_id},
                           {"messages", json::array({json{{"role", "system"}, {"content", system}},
                                                     json{{"role", "user"}, {"content", user}}})}};
        const json doc = parse_service_response(post_json(cfg_, body), "chat service");
        if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty() ||
            !doc["choices"][0].contains("message") ||
            !doc["choices"][0]["message"].contains("content"))
            throw Error(errc::service_unavailable,
                        "chat service: missing choices[0].message.content");
        return doc["choices"][0]["message"]["content"].get<std::string>();
    }

private:
    ServiceConfig cfg_;
};

}  // namespace

std::shared_ptr<EmbeddingBackend> make_stub_embedding_backend(std::size_t default_dim) {
    return std::make_shared<StubEmbeddingBackend>(default_dim);
}

std::shared_ptr<EmbeddingBackend> make_http_embedding_backend(ServiceConfig cfg) {
    return std::make_shared<HttpEmbeddingBackend>(std::move(cfg));
}

std::shared_ptr<ChatBackend> make_stub_chat_backend(std::filesystem::path fixtures_dir) {
    return std::make_shared<StubChatBackend>(std::move(fixtures_dir));
}

std::shared_ptr<ChatBackend> make_http_chat_backend(ServiceConfig cfg) {
    return std::make_shared<HttpChatBackend>(std::move(cfg));
}

EmbeddingClient::EmbeddingClient(std::shared_ptr<EmbeddingBackend> backend, ServiceConfig cfg)
    : backend_(std::move(backend)), cfg_(std::move(cfg)) {}

std::vector<EmbeddingVector> EmbeddingClient::embed_texts(const std::vector<std::string>& texts,
                                                          const std::string& model_id) {
    std::vector<std::optional<EmbeddingVector>> slots(texts.size());
    std::vector<std::size_t> failed;
    std::mutex failed_mutex;
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    parallel_for(texts.size(), cfg_.max_parallel, [&](std::size_t i) {
        const std::string key = embedding_cache_key(model_id, texts[i]);
        if (auto cached = cache_read(cfg_.cache_dir, key, ".json")) {
            try {
                const json doc = json::parse(*cached);
                EmbeddingVector vec{doc["model_id"].get<std::string>(),
                                    doc["dim"].get<std::size_t>(),
                                    doc["values"].get<std::vector<double>>()};
                slots[i] = std::move(vec);
                return;
            } catch (const json::exception&) {
                // corrupt entry: fall through and recompute
            }
        }
        try {
            std::vector<double> values =
                with_retries(cfg_, [&] { return backend_->embed_one(texts[i], model_id); });
            EmbeddingVector vec{model_id, values.size(), std::move(values)};
            const json doc = {
                {"model_id", vec.model_id}, {"dim", vec.dim}, {"values", vec.values}};
            cache_write(cfg_.cache_dir, key, ".json", doc.dump());
            slots[i] = std::move(vec);
        } catch (const Error& e) {
            if (e.code() == errc::service_unavailable) {
                std::lock_guard lock(failed_mutex);
                failed.push_back(i);
            } else {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
            }
        }
    });

    if (fatal) std::rethrow_exception(fatal);
    if (!failed.empty()) {
        std::sort(failed.begin(), failed.end());
        throw ServiceUnavailable(failed, std::to_string(failed.size()) + " of " +
                                             std::to_string(texts.size()) +
                                             " embeddings failed after retries");
    }

    std::vector<EmbeddingVector> results;
    results.reserve(slots.size());
    for (auto& slot : slots) results.push_back(std::move(*slot));
    for (std::size_t i = 1; i < results.size(); ++i)
        if (results[i].dim != results[0].dim)
            throw Error(errc::inconsistent_dim,
                        "batch mixes dims " + std::to_string(results[0].dim) + " and " +
                            std::to_string(results[i].dim));
    return results;
}

ChatClient::ChatClient(std::shared_ptr<ChatBackend> backend, ServiceConfig cfg)
    : backend_(std::move(backend)), cfg_(std::move(cfg)) {}

std::string ChatClient::complete_chat(const std::string& system, const std::string& user,
                                      const std::string& model_id) {
    const std::string key = prompt_cache_key(model_id, system, user);
    if (auto cached = cache_read(cfg_.cache_dir, key, ".txt")) return *cached;

    std::string response =
        with_retries(cfg_, [&] { return backend_->complete(system, user, model_id); });
    cache_write(cfg_.cache_dir, key, ".txt", response);
    return response;
}

ExpandedAnswer ChatClient::expand_question(const corpus::MedicalQuestion& q,
                                           const std::string& model_id) {
    try {
        std::string text = complete_chat(std::string(kExpansionSystemPrompt), q.text, model_id);
        return ExpandedAnswer{q.query_id, std::move(text), model_id, false};
    } catch (const Error& e) {
        if (e.code() == errc::service_unavailable || e.code() == errc::stub_miss)
            throw Error(errc::expansion_failed,
                        "query '" + q.query_id + "': " + std::string(e.what()));
        throw;
    }
}

}  // namespace medvid::clients
