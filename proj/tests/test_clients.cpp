#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "medvid/clients.hpp"
#include "medvid/corpus.hpp"
#include "medvid/hash.hpp"
#include "test_support.hpp"

using namespace medvid;
using namespace medvid::clients;
using medvid::test::TempDir;
using medvid::test::throws_code;

namespace {

ServiceConfig fast_config(std::filesystem::path cache_dir = {}) {
    ServiceConfig cfg;
    cfg.max_retries = 3;
    cfg.max_parallel = 4;
    cfg.backoff_initial_ms = 0;
    cfg.cache_dir = std::move(cache_dir);
    return cfg;
}

// fails permanently for one specific text
class FailOnTextBackend final : public EmbeddingBackend {
public:
    FailOnTextBackend(std::shared_ptr<EmbeddingBackend> inner, std::string poison)
        : inner_(std::move(inner)), poison_(std::move(poison)) {}

    std::vector<double> embed_one(const std::string& text, const std::string& model_id) override {
        if (text == poison_) throw Error(errc::service_unavailable, "poisoned text");
        return inner_->embed_one(text, model_id);
    }

private:
    std::shared_ptr<EmbeddingBackend> inner_;
    std::string poison_;
};

// transient failures for the first N calls
class FlakyChatBackend final : public ChatBackend {
public:
    FlakyChatBackend(int failures, std::string response)
        : failures_(failures), response_(std::move(response)) {}

    std::string complete(const std::string&, const std::string&, const std::string&) override {
        ++calls;
        if (calls <= failures_) throw TransientServiceError("flaky");
        return response_;
    }

    int calls = 0;

private:
    int failures_;
    std::string response_;
};

}  // namespace

TEST_CASE("stub_embed: determinism and unit norm") {
    const auto a = stub_embed("wash hands", 64);
    const auto b = stub_embed("wash hands", 64);
    CHECK(a.values == b.values);
    CHECK(a.model_id == "stub-64");
    CHECK(a.dim == 64);

    double norm_sq = 0.0;
    for (double v : a.values) norm_sq += v * v;
    CHECK(std::abs(std::sqrt(norm_sq) - 1.0) < 1e-9);
}

TEST_CASE("stub_embed: hashed bucket counts normalize as expected") {
    const std::size_t dim = 8;
    const std::size_t bucket_a = fnv1a64("a") % dim;
    const std::size_t bucket_b = fnv1a64("b") % dim;
    REQUIRE(bucket_a != bucket_b);  // fixture precondition

    const auto vec = stub_embed("a a b", dim);
    CHECK(vec.values[bucket_a] == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-12));
    CHECK(vec.values[bucket_b] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
    for (std::size_t i = 0; i < dim; ++i)
        if (i != bucket_a && i != bucket_b) CHECK(vec.values[i] == 0.0);
}

TEST_CASE("stub_embed: unit norm holds for random texts") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::string text;
        const int words = 1 + static_cast<int>(rng() % 10);
        for (int w = 0; w < words; ++w) text += "tok" + std::to_string(rng() % 50) + " ";
        const auto vec = stub_embed(text, 1 + rng() % 128);
        double norm_sq = 0.0;
        for (double v : vec.values) norm_sq += v * v;
        CHECK(std::abs(std::sqrt(norm_sq) - 1.0) < 1e-9);
    }
}

TEST_CASE("stub_embed: empty text errors") {
    CHECK(throws_code([] { stub_embed("", 16); }, errc::empty_text));
    CHECK(throws_code([] { stub_embed("   ", 16); }, errc::empty_text));
}

TEST_CASE("embed_texts: stub passthrough and batch split invariance") {
    EmbeddingClient client(make_stub_embedding_backend(32), fast_config());

    const auto single = client.embed_texts({"q"}, "stub-32");
    REQUIRE(single.size() == 1);
    CHECK(single[0].values == stub_embed("q", 32).values);

    const std::vector<std::string> xs{"alpha beta", "gamma"};
    const std::vector<std::string> ys{"delta", "epsilon zeta"};
    std::vector<std::string> joined = xs;
    joined.insert(joined.end(), ys.begin(), ys.end());

    const auto all = client.embed_texts(joined, "stub-32");
    const auto first = client.embed_texts(xs, "stub-32");
    const auto second = client.embed_texts(ys, "stub-32");
    REQUIRE(all.size() == 4);
    CHECK(all[0].values == first[0].values);
    CHECK(all[1].values == first[1].values);
    CHECK(all[2].values == second[0].values);
    CHECK(all[3].values == second[1].values);
}

TEST_CASE("embed_texts: cache round trip is bit-identical") {
    TempDir dir("embcache");
    EmbeddingClient client(make_stub_embedding_backend(48), fast_config(dir.path()));

    const auto first = client.embed_texts({"irrigate the wound", "apply pressure"}, "stub-48");
    const auto second = client.embed_texts({"irrigate the wound", "apply pressure"}, "stub-48");
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) {
        CHECK(first[i].values == second[i].values);  // exact doubles
        CHECK(first[i].model_id == second[i].model_id);
    }

    // the cache actually holds the entries
    const auto key = embedding_cache_key("stub-48", "irrigate the wound");
    CHECK(std::filesystem::exists(dir.path() / (key + ".json")));
}

TEST_CASE("embed_texts: permanent failure surfaces failed indices") {
    auto backend = std::make_shared<FailOnTextBackend>(make_stub_embedding_backend(16), "bad");
    EmbeddingClient client(backend, fast_config());

    try {
        client.embed_texts({"good one", "bad", "good two"}, "stub-16");
        FAIL("expected ServiceUnavailable");
    } catch (const ServiceUnavailable& e) {
        CHECK(e.failed_indices == std::vector<std::size_t>{1});
    }
}

TEST_CASE("complete_chat: transient failures are retried") {
    auto backend = std::make_shared<FlakyChatBackend>(2, "recovered");
    ChatClient client(backend, fast_config());
    CHECK(client.complete_chat("sys", "user", "chat-1") == "recovered");
    CHECK(backend->calls == 3);
}

TEST_CASE("complete_chat: retries exhausted raises service_unavailable") {
    auto cfg = fast_config();
    cfg.max_retries = 1;
    auto backend = std::make_shared<FlakyChatBackend>(5, "never");
    ChatClient client(backend, cfg);
    CHECK(throws_code([&] { client.complete_chat("sys", "user", "chat-1"); },
                      errc::service_unavailable));
    CHECK(backend->calls == 2);  // initial try + one retry
}

TEST_CASE("stub chat backend: replay is byte-identical, misses fail closed") {
    TempDir fixtures("fixtures");
    const std::string response = "Step 1: rinse.\nStep 2: dry.\n";
    const auto key = prompt_cache_key("chat-1", "sys", "what now?");
    corpus::write_file_atomic(fixtures.path() / (key + ".txt"), response);

    ChatClient client(make_stub_chat_backend(fixtures.path()), fast_config());
    CHECK(client.complete_chat("sys", "what now?", "chat-1") == response);
    CHECK(throws_code([&] { client.complete_chat("sys", "unseen prompt", "chat-1"); },
                      errc::stub_miss));
}

TEST_CASE("complete_chat: cache makes repeat calls backend-free") {
    TempDir fixtures("fixtures");
    TempDir cache("chatcache");
    const auto key = prompt_cache_key("chat-1", "sys", "q");
    corpus::write_file_atomic(fixtures.path() / (key + ".txt"), "answer");

    ChatClient client(make_stub_chat_backend(fixtures.path()), fast_config(cache.path()));
    CHECK(client.complete_chat("sys", "q", "chat-1") == "answer");

    // remove the fixture: the cached copy must now satisfy the call
    std::filesystem::remove(fixtures.path() / (key + ".txt"));
    CHECK(client.complete_chat("sys", "q", "chat-1") == "answer");
}

TEST_CASE("expand_question: fixture replay, cache determinism, failure mode") {
    TempDir fixtures("fixtures");
    const corpus::MedicalQuestion q{"q1", "How do I treat a minor burn?"};
    const std::string expansion = "Step 1: cool the burn under running water.";
    const auto key =
        prompt_cache_key("chat-1", std::string(kExpansionSystemPrompt), q.text);
    corpus::write_file_atomic(fixtures.path() / (key + ".txt"), expansion);

    ChatClient client(make_stub_chat_backend(fixtures.path()), fast_config());
    const auto first = client.expand_question(q, "chat-1");
    CHECK(first.text == expansion);
    CHECK(first.query_id == "q1");
    CHECK_FALSE(first.failed);

    const auto second = client.expand_question(q, "chat-1");
    CHECK(second.text == first.text);

    const corpus::MedicalQuestion unknown{"q2", "Unknown question"};
    CHECK(throws_code([&] { client.expand_question(unknown, "chat-1"); },
                      errc::expansion_failed));
}

TEST_CASE("http backends: wire formats and 5xx retry against a local server") {
    httplib::Server server;
    std::atomic<int> embed_calls{0};

    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.contains("model"));
        REQUIRE(body.contains("input"));
        const int call = ++embed_calls;
        if (call == 1) {  // first call: transient failure, client must retry
            res.status = 503;
            return;
        }
        const std::string text = body["input"][0].get<std::string>();
        nlohmann::json out = {
            {"data", {{{"embedding", {static_cast<double>(text.size()), 1.0}}}}}};
        res.set_content(out.dump(), "application/json");
    });
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        REQUIRE(body["messages"].size() == 2);
        const std::string user = body["messages"][1]["content"].get<std::string>();
        nlohmann::json out = {
            {"choices", {{{"message", {{"content", "echo: " + user}}}}}}};
        res.set_content(out.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    ServiceConfig cfg = fast_config();
    cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings";
    EmbeddingClient embedder(make_http_embedding_backend(cfg), cfg);
    const auto vecs = embedder.embed_texts({"abc"}, "remote-model");
    REQUIRE(vecs.size() == 1);
    CHECK(vecs[0].values == std::vector<double>{3.0, 1.0});
    CHECK(embed_calls.load() == 2);  // 503 then success

    ServiceConfig chat_cfg = fast_config();
    chat_cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    ChatClient chat(make_http_chat_backend(chat_cfg), chat_cfg);
    CHECK(chat.complete_chat("sys", "hello", "remote-model") == "echo: hello");

    server.stop();
    server_thread.join();
}
