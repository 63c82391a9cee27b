#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "medvid/retrieval.hpp"
#include "test_support.hpp"

using namespace medvid;
using namespace medvid::retrieval;
using medvid::test::TempDir;
using medvid::test::throws_code;

namespace {

EmbeddingVector vec(std::vector<double> values) {
    return {"test", values.size(), std::move(values)};
}

// unit vector whose cosine against (1,0) is exactly c
EmbeddingVector unit_with_cosine(double c) {
    return vec({c, std::sqrt(1.0 - c * c)});
}

RunFile make_run(const std::vector<std::tuple<std::string, std::string, int>>& rows,
                 const std::string& tag = "t") {
    RunFile run;
    for (const auto& [qid, vid, rank] : rows)
        run.push_back({qid, vid, rank, 1.0 / rank, tag});
    return run;
}

}  // namespace

TEST_CASE("cosine: fixtures and errors") {
    CHECK(cosine(vec({3.0, 4.0}), vec({3.0, 4.0})) == doctest::Approx(1.0));
    CHECK(cosine(vec({1.0, 0.0}), vec({0.0, 1.0})) == doctest::Approx(0.0));
    CHECK(std::abs(cosine(vec({1.0, 0.0}), vec({1.0, 1.0})) - 0.70710678) < 1e-8);
    CHECK(throws_code([] { cosine(vec({0.0, 0.0}), vec({1.0, 0.0})); }, errc::zero_vector));
    CHECK(throws_code([] { cosine(vec({1.0}), vec({1.0, 0.0})); }, errc::dim_mismatch));
}

TEST_CASE("score_query_video: max and mean over encoders") {
    const std::vector<EmbeddingVector> q_embs{vec({1.0, 0.0}), vec({1.0, 0.0})};
    const std::vector<std::vector<EmbeddingVector>> chunks{
        {unit_with_cosine(0.2), unit_with_cosine(0.6)},
        {unit_with_cosine(0.5), unit_with_cosine(0.4)},
    };
    CHECK(score_query_video(q_embs, chunks, Combine::max) == doctest::Approx(0.6));
    CHECK(score_query_video(q_embs, chunks, Combine::mean) == doctest::Approx(0.55));
}

TEST_CASE("score_query_video: single encoder single chunk is plain cosine") {
    const std::vector<EmbeddingVector> q{vec({1.0, 0.0})};
    const std::vector<std::vector<EmbeddingVector>> chunks{{unit_with_cosine(0.37)}};
    CHECK(score_query_video(q, chunks, Combine::max) == doctest::Approx(0.37));
    CHECK(score_query_video(q, chunks, Combine::mean) == doctest::Approx(0.37));
}

TEST_CASE("score_query_video: empty chunk list errors") {
    const std::vector<EmbeddingVector> q{vec({1.0, 0.0})};
    const std::vector<std::vector<EmbeddingVector>> chunks{{}};
    CHECK(throws_code([&] { score_query_video(q, chunks, Combine::max); }, errc::no_chunks));
}

TEST_CASE("sim_final: fixtures") {
    CHECK(sim_final(0.3, 0.5) == doctest::Approx(0.5));
    CHECK(sim_final(0.42, 0.42) == doctest::Approx(0.42));
    CHECK(sim_final(0.3, std::nullopt) == doctest::Approx(0.3));
}

TEST_CASE("sim_final property: max semantics over 1000 random pairs") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = dist(rng), b = dist(rng);
        const double out = sim_final(a, b);
        CHECK(out >= a);
        CHECK(out >= b);
        CHECK((out == a || out == b));
    }
}

TEST_CASE("rank_videos: tie-break by ascending video id") {
    const std::map<std::string, double> scores{{"v_a", 0.9}, {"v_b", 0.9}, {"v_c", 0.1}};
    const auto run = rank_videos("q1", scores, 2, "tag");
    REQUIRE(run.size() == 2);
    CHECK(run[0].video_id == "v_a");
    CHECK(run[0].rank == 1);
    CHECK(run[1].video_id == "v_b");
    CHECK(run[1].rank == 2);
}

TEST_CASE("rank_videos: k beyond corpus size keeps everything; empty map is empty") {
    const std::map<std::string, double> scores{{"a", 0.5}, {"b", 0.4}};
    CHECK(rank_videos("q", scores, 100, "t").size() == 2);
    CHECK(rank_videos("q", {}, 5, "t").empty());
}

TEST_CASE("rank_videos property: scores non-increasing, ranks contiguous") {
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::map<std::string, double> scores;
        const int n = static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) scores["v" + std::to_string(i)] = dist(rng);
        const int k = 1 + static_cast<int>(rng() % 12);
        const auto run = rank_videos("q", scores, k, "t");
        CHECK(run.size() == std::min<std::size_t>(k, scores.size()));
        for (std::size_t i = 0; i < run.size(); ++i) {
            CHECK(run[i].rank == static_cast<int>(i + 1));
            if (i) CHECK(run[i].score <= run[i - 1].score);
        }
    }
}

TEST_CASE("fuse_runs: reciprocal rank fixtures") {
    // rank 1 in a, rank 2 in b with rrf_k = 60
    const auto a = make_run({{"q1", "v", 1}});
    const auto b = make_run({{"q1", "v", 2}});
    const auto fused = fuse_runs(a, b, 60.0, 100, "fused");
    REQUIRE(fused.size() == 1);
    const double expected = 1.0 / 61.0 + 1.0 / 62.0;
    CHECK(std::abs(fused[0].score - expected) < 1e-8);

    // single-source entry keeps 1/(rrf_k + rank)
    const auto single = fuse_runs(make_run({{"q1", "w", 1}}), {}, 60.0, 100, "fused");
    REQUIRE(single.size() == 1);
    CHECK(std::abs(single[0].score - 1.0 / 61.0) < 1e-12);
}

TEST_CASE("fuse_runs: fusing a run with itself preserves its order") {
    const auto a = make_run({{"q1", "x", 1}, {"q1", "y", 2}, {"q1", "z", 3}});
    const auto fused = fuse_runs(a, a, 60.0, 100, "f");
    REQUIRE(fused.size() == 3);
    CHECK(fused[0].video_id == "x");
    CHECK(fused[1].video_id == "y");
    CHECK(fused[2].video_id == "z");
}

TEST_CASE("fuse_runs property: symmetric in its arguments") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        auto random_run = [&](const std::string& tag) {
            RunFile run;
            for (int q = 0; q < 1 + static_cast<int>(rng() % 3); ++q) {
                std::vector<std::string> vids;
                for (int v = 0; v < 8; ++v) vids.push_back("v" + std::to_string(v));
                std::shuffle(vids.begin(), vids.end(), rng);
                const int depth = 1 + static_cast<int>(rng() % 6);
                for (int r = 1; r <= depth; ++r)
                    run.push_back({"q" + std::to_string(q), vids[r - 1], r, 1.0 / r, tag});
            }
            return run;
        };
        const auto a = random_run("a");
        const auto b = random_run("b");
        const auto ab = fuse_runs(a, b, 60.0, 100, "f");
        const auto ba = fuse_runs(b, a, 60.0, 100, "f");
        REQUIRE(ab.size() == ba.size());
        for (std::size_t i = 0; i < ab.size(); ++i) {
            CHECK(ab[i].video_id == ba[i].video_id);
            CHECK(ab[i].rank == ba[i].rank);
            CHECK(ab[i].score == doctest::Approx(ba[i].score).epsilon(1e-12));
        }
    }
}

TEST_CASE("text_to_vision_score: max pooling over frames") {
    FrameMatrix frames;
    frames.dim = 2;
    for (double c : {0.1, 0.5, 0.3}) {
        const auto row = unit_with_cosine(c);
        frames.data.insert(frames.data.end(), row.values.begin(), row.values.end());
    }
    const auto q = vec({1.0, 0.0});
    CHECK(text_to_vision_score(q, frames) == doctest::Approx(0.5));

    FrameMatrix identical;
    identical.dim = 2;
    for (int i = 0; i < 4; ++i) identical.data.insert(identical.data.end(), {1.0, 0.0});
    CHECK(text_to_vision_score(q, identical) == doctest::Approx(1.0));

    FrameMatrix single;
    single.dim = 2;
    single.data = unit_with_cosine(0.42).values;
    CHECK(text_to_vision_score(q, single) == doctest::Approx(0.42));

    FrameMatrix empty;
    empty.dim = 2;
    CHECK(throws_code([&] { text_to_vision_score(q, empty); }, errc::no_frames));
}

TEST_CASE("frame features: file round trip") {
    TempDir dir("feat");
    FrameMatrix m;
    m.dim = 3;
    m.data = {0.25, -1.5, 3.0, 0.125, 2.25, -0.75};
    const auto path = dir.path() / "v.feat";
    write_frame_features(path, m);
    const auto back = read_frame_features(path);
    CHECK(back.dim == 3);
    CHECK(back.data == m.data);

    corpus::write_file_atomic(path, "BOGUS v9 1 1\n0.5\n");
    CHECK(throws_code([&] { read_frame_features(path); }, errc::parse_error));
}

TEST_CASE("run file io: format fixture and round trip") {
    const RunFile run{{"q1", "v9", 1, 0.873146, "tagA"}};
    CHECK(write_run(run) == "q1 Q0 v9 1 0.873146 tagA\n");

    const RunFile three{{"q1", "a", 1, 0.9, "t"}, {"q1", "b", 2, 0.5, "t"},
                        {"q2", "c", 1, 0.8, "t"}};
    const auto text = write_run(three);
    const auto parsed = read_run(text);
    REQUIRE(parsed.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(parsed[i].query_id == three[i].query_id);
        CHECK(parsed[i].video_id == three[i].video_id);
        CHECK(parsed[i].rank == three[i].rank);
        CHECK(parsed[i].score == doctest::Approx(three[i].score).epsilon(1e-6));
        CHECK(parsed[i].run_tag == three[i].run_tag);
    }
}

TEST_CASE("run file io: malformed lines and invalid runs") {
    CHECK(throws_code([] { read_run("q1 v9 1\n"); }, errc::parse_error));
    CHECK(throws_code([] { write_run({{"q1", "v", 2, 0.5, "t"}}); }, errc::parse_error));
    CHECK(throws_code(
        [] {
            write_run({{"q1", "a", 1, 0.2, "t"}, {"q1", "b", 2, 0.9, "t"}});
        },
        errc::parse_error));
}

TEST_CASE("chunk_texts: windows, stride, degenerate single chunk") {
    const std::vector<std::string> tokens{"a", "b", "c", "d", "e"};
    const auto chunks = chunk_texts(tokens, 3, 2);
    REQUIRE(chunks.size() == 2);
    CHECK(chunks[0] == "a b c");
    CHECK(chunks[1] == "c d e");

    const auto whole = chunk_texts(tokens, 10, 5);
    REQUIRE(whole.size() == 1);
    CHECK(whole[0] == "a b c d e");

    CHECK(chunk_texts({}, 4, 2).empty());
    CHECK(throws_code([&] { chunk_texts(tokens, 2, 3); }, errc::config_error));
}

TEST_CASE("mean-over-encoders never beats max-over-encoders") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> dist(-0.99, 0.99);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t encoders = 1 + rng() % 4;
        std::vector<EmbeddingVector> q;
        std::vector<std::vector<EmbeddingVector>> chunks(encoders);
        for (std::size_t e = 0; e < encoders; ++e) {
            q.push_back(vec({1.0, 0.0}));
            const std::size_t n = 1 + rng() % 5;
            for (std::size_t c = 0; c < n; ++c) chunks[e].push_back(unit_with_cosine(dist(rng)));
        }
        const double run1 = score_query_video(q, chunks, Combine::max);
        const double run4 = score_query_video(q, chunks, Combine::mean);
        CHECK(run4 <= run1 + 1e-12);
    }
}

TEST_CASE("Retriever: strategies over a tiny corpus") {
    TempDir dir("retr");
    auto write = [&](const std::string& name, const std::string& contents) {
        corpus::write_file_atomic(dir.path() / name, contents);
    };
    write("a.srt", "1\n00:00:00,000 --> 00:00:10,000\nwash your hands with soap and water\n");
    write("b.srt", "1\n00:00:00,000 --> 00:00:10,000\napply a cold compress to the sprain\n");
    write("c.srt", "1\n00:00:00,000 --> 00:00:10,000\ncheck the smoke detector battery\n");
    write("videos.json",
          R"([{"vid":"a","transcript":"a.srt","format":"srt","duration":10},
              {"vid":"b","transcript":"b.srt","format":"srt","duration":10},
              {"vid":"c","transcript":"c.srt","format":"srt","duration":10}])");

    const auto corpus = corpus::load_corpus(dir.path());
    clients::EmbeddingClient embedder(clients::make_stub_embedding_backend(64), {});

    StrategyConfig cfg;
    cfg.strategy = Strategy::run1_orig_max;
    cfg.encoders = {"stub-64"};
    cfg.k = 3;

    const std::vector<corpus::MedicalQuestion> topics{{"q1", "how to wash hands with soap"}};
    const Retriever retriever(corpus, embedder, cfg);
    const auto run = retriever.retrieve(topics, {}, 1);
    REQUIRE(run.size() == 3);
    CHECK(run[0].video_id == "a");  // token overlap wins under the stub encoder
    CHECK(run[0].run_tag == "run1_orig_max");

    // identical output regardless of worker count
    const auto run4 = retriever.retrieve(topics, {}, 4);
    CHECK(write_run(run) == write_run(run4));

    // run2 with an expansion that mentions video b's content
    StrategyConfig cfg2 = cfg;
    cfg2.strategy = Strategy::run2_expanded;
    const Retriever retriever2(corpus, embedder, cfg2);
    std::map<std::string, clients::ExpandedAnswer> expansions;
    expansions["q1"] = {"q1", "apply a cold compress to the sprain", "m", false};
    const auto run2 = retriever2.retrieve(topics, expansions, 1);
    CHECK(run2[0].video_id == "b");

    // failed expansion falls back to the original question
    expansions["q1"] = {"q1", "", "m", true};
    const auto run2_fallback = retriever2.retrieve(topics, expansions, 1);
    CHECK(run2_fallback[0].video_id == "a");

    // run3 fuses run1 and run2; check against RRF recomputed from the parts
    StrategyConfig cfg3 = cfg;
    cfg3.strategy = Strategy::run3_fused;
    const Retriever retriever3(corpus, embedder, cfg3);
    expansions["q1"] = {"q1", "apply a cold compress to the sprain", "m", false};
    const auto run3 = retriever3.retrieve(topics, expansions, 1);
    REQUIRE(run3.size() == 3);
    CHECK(run3[0].run_tag == "run3_fused");
    const auto expected = fuse_runs(run, run2, cfg.rrf_k, cfg.k, "run3_fused");
    CHECK(write_run(run3) == write_run(expected));
}

TEST_CASE("Retriever: run5 scores only videos with frame features") {
    TempDir dir("retr5");
    corpus::write_file_atomic(dir.path() / "a.srt",
                              "1\n00:00:00,000 --> 00:00:10,000\nwash your hands\n");
    corpus::write_file_atomic(dir.path() / "b.srt",
                              "1\n00:00:00,000 --> 00:00:10,000\ntie the bandage\n");

    // frame features: one matrix aligned with the query's stub embedding
    const auto q_emb = clients::stub_embed("how to wash hands", 16);
    FrameMatrix aligned;
    aligned.dim = 16;
    aligned.data = q_emb.values;
    write_frame_features(dir.path() / "a.feat", aligned);

    corpus::write_file_atomic(
        dir.path() / "videos.json",
        R"([{"vid":"a","transcript":"a.srt","format":"srt","duration":10,"frame_features":"a.feat"},
            {"vid":"b","transcript":"b.srt","format":"srt","duration":10}])");

    const auto corpus = corpus::load_corpus(dir.path());
    clients::EmbeddingClient embedder(clients::make_stub_embedding_backend(16), {});

    StrategyConfig cfg;
    cfg.strategy = Strategy::run5_text_to_vision;
    cfg.encoders = {"stub-16"};
    cfg.k = 10;
    const Retriever retriever(corpus, embedder, cfg);
    const auto run = retriever.retrieve({{"q1", "how to wash hands"}}, {}, 1);
    REQUIRE(run.size() == 1);  // only the video with features is ranked
    CHECK(run[0].video_id == "a");
    CHECK(run[0].score == doctest::Approx(1.0));
}
