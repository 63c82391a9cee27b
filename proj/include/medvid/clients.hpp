#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/corpus.hpp"
#include "medvid/errors.hpp"

namespace medvid::clients {

struct EmbeddingVector {
    std::string model_id;
    std::size_t dim = 0;
    std::vector<double> values;
};

struct ExpandedAnswer {
    std::string query_id;
    std::string text;
    std::string source_model;
    bool failed = false;  // expansion failed; text empty, caller falls back
};

struct ServiceConfig {
    std::string endpoint;     // full URL the request is POSTed to
    std::string api_key_env;  // env var holding the bearer token, may be empty
    double timeout_s = 30.0;
    int max_retries = 3;
    int max_parallel = 4;
    std::filesystem::path cache_dir;  // empty disables the disk cache
    int backoff_initial_ms = 200;     // doubles per retry
};

// The question-expansion system prompt, sent verbatim.
inline constexpr std::string_view kExpansionSystemPrompt =
    "You act as a medical or a health helper. Given a list of medical or "
    "health-related how-to questions, output the instructions step by step.";

// Deterministic offline embedding: tokenize (corpus rule), bucket each token
// by FNV-1a-64 mod dim, accumulate counts, L2-normalize. model_id becomes
// "stub-<dim>". Bit-exact across platforms. Raises errc::empty_text when the
// text has no tokens.
EmbeddingVector stub_embed(std::string_view text, std::size_t dim);

// Content-addressed cache keys.
std::string embedding_cache_key(std::string_view model_id, std::string_view text);
std::string prompt_cache_key(std::string_view model_id, std::string_view system, std::string_view user);

// Backends throw Error with errc::service_unavailable (transient flag via
// is_transient_message) or errc::stub_miss.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<double> embed_one(const std::string& text, const std::string& model_id) = 0;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const std::string& system, const std::string& user,
                                 const std::string& model_id) = 0;
};

// Transient failures are retried, permanent ones are not. Backends tag the
// distinction by throwing TransientServiceError vs Error(service_unavailable).
class TransientServiceError : public Error {
public:
    explicit TransientServiceError(const std::string& message)
        : Error(errc::service_unavailable, message) {}
};

// stub-<dim> model ids embed at that dimension, anything else at default_dim.
std::shared_ptr<EmbeddingBackend> make_stub_embedding_backend(std::size_t default_dim);

// POSTs {"model","input":[text]} to cfg.endpoint, expects
// {"data":[{"embedding":[...]}]}. 5xx and connection failures are transient.
std::shared_ptr<EmbeddingBackend> make_http_embedding_backend(ServiceConfig cfg);

// Replays fixtures_dir/<prompt_cache_key>.txt; a missing file raises
// errc::stub_miss (never fabricates).
std::shared_ptr<ChatBackend> make_stub_chat_backend(std::filesystem::path fixtures_dir);

// POSTs {"model","messages":[{role,content}...]} to cfg.endpoint, expects
// {"choices":[{"message":{"content"}}]}.
std::shared_ptr<ChatBackend> make_http_chat_backend(ServiceConfig cfg);

class EmbeddingClient {
public:
    EmbeddingClient(std::shared_ptr<EmbeddingBackend> backend, ServiceConfig cfg);

    // Order-preserving; per-text disk cache; up to max_parallel in flight;
    // per-text retries with exponential backoff. Indices that never succeed
    // are collected into a ServiceUnavailable. A batch whose results differ
    // in dimension raises errc::inconsistent_dim.
    std::vector<EmbeddingVector> embed_texts(const std::vector<std::string>& texts,
                                             const std::string& model_id);

private:
    std::shared_ptr<EmbeddingBackend> backend_;
    ServiceConfig cfg_;
};

class ChatClient {
public:
    ChatClient(std::shared_ptr<ChatBackend> backend, ServiceConfig cfg);

    // Cached by prompt_cache_key, retried like embeddings.
    std::string complete_chat(const std::string& system, const std::string& user,
                              const std::string& model_id);

    // Sends the expansion prompt with the question as user content. Service
    // failure surfaces as errc::expansion_failed; callers may degrade to
    // original-question scoring.
    ExpandedAnswer expand_question(const corpus::MedicalQuestion& q, const std::string& model_id);

private:
    std::shared_ptr<ChatBackend> backend_;
    ServiceConfig cfg_;
};

}  // namespace medvid::clients
