#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "medvid/clients.hpp"
#include "medvid/localization.hpp"
#include "medvid/retrieval.hpp"
#include "test_support.hpp"

using namespace medvid;
using namespace medvid::localization;
using medvid::test::TempDir;
using medvid::test::throws_code;

namespace {

corpus::VideoRecord two_segment_video() {
    corpus::VideoRecord v;
    v.video_id = "v";
    v.duration_s = 5.0;
    v.segments = {{1, 0.0, 2.0, "wash hands"}, {2, 2.0, 5.0, "use soap"}};
    return v;
}

// literal lexicographic scan over all i <= j (the independent oracle)
std::pair<std::size_t, std::size_t> brute_force_best(const ScoreSequence& s) {
    std::size_t bi = 0, bj = 0;
    double best = s.start_scores[0] + s.end_scores[0];
    for (std::size_t i = 0; i < s.start_scores.size(); ++i)
        for (std::size_t j = i; j < s.end_scores.size(); ++j) {
            const double v = s.start_scores[i] + s.end_scores[j];
            if (v > best) {
                best = v;
                bi = i;
                bj = j;
            }
        }
    return {bi, bj};
}

clients::EmbeddingVector unit_with_cosine(double c) {
    return {"test", 2, {c, std::sqrt(1.0 - c * c)}};
}

}  // namespace

TEST_CASE("temporal_iou: fixtures") {
    CHECK(std::abs(temporal_iou({0, 10}, {5, 15}) - 0.33333) < 1e-5);
    CHECK(temporal_iou({3, 7}, {3, 7}) == doctest::Approx(1.0));
    CHECK(temporal_iou({0, 1}, {2, 3}) == doctest::Approx(0.0));
}

TEST_CASE("temporal_iou properties: symmetry, bounds, identity") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double a1 = dist(rng), a2 = dist(rng), b1 = dist(rng), b2 = dist(rng);
        const TimeSpan a{std::min(a1, a2), std::max(a1, a2) + 0.001};
        const TimeSpan b{std::min(b1, b2), std::max(b1, b2) + 0.001};
        const double ab = temporal_iou(a, b);
        CHECK(ab == doctest::Approx(temporal_iou(b, a)).epsilon(1e-12));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
        CHECK(temporal_iou(a, a) == doctest::Approx(1.0));
        if (ab == doctest::Approx(1.0).epsilon(1e-9)) {
            CHECK(a.start_s == doctest::Approx(b.start_s).epsilon(1e-6));
            CHECK(a.end_s == doctest::Approx(b.end_s).epsilon(1e-6));
        }
    }
}

TEST_CASE("build_lookup: rows mirror segment token offsets") {
    const auto table = build_lookup(two_segment_video());
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].segment == 0);
    CHECK(table.rows[0].tokens.first == 0);
    CHECK(table.rows[0].tokens.last == 1);
    CHECK(table.rows[0].time.start_s == doctest::Approx(0.0));
    CHECK(table.rows[0].time.end_s == doctest::Approx(2.0));
    CHECK(table.rows[1].tokens.first == 2);
    CHECK(table.rows[1].tokens.last == 3);
    CHECK(table.rows[1].time.end_s == doctest::Approx(5.0));
    CHECK(table.token_count() == 4);
}

TEST_CASE("build_lookup: single segment covers everything") {
    corpus::VideoRecord v;
    v.video_id = "v";
    v.duration_s = 3.0;
    v.segments = {{1, 0.0, 3.0, "one two three"}};
    const auto table = build_lookup(v);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0].tokens.first == 0);
    CHECK(table.rows[0].tokens.last == 2);
}

TEST_CASE("lookup: token and time span mapping fixtures") {
    const auto table = build_lookup(two_segment_video());
    const auto span = token_span_to_time(table, {1, 2});
    CHECK(span.start_s == doctest::Approx(0.0));
    CHECK(span.end_s == doctest::Approx(5.0));

    const auto tokens = time_span_to_tokens(table, {2.5, 4.0});
    CHECK(tokens.start_tok == 2);
    CHECK(tokens.end_tok == 3);

    CHECK(throws_code([&] { token_span_to_time(table, {0, 99}); }, errc::token_out_of_range));
    CHECK(throws_code([&] { time_span_to_tokens(table, {90.0, 95.0}); }, errc::no_coverage));
}

TEST_CASE("lookup properties: partition and round-trip containment") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        corpus::VideoRecord v;
        v.video_id = "v";
        const int n = 1 + static_cast<int>(rng() % 10);
        double t = 0.0;
        for (int s = 0; s < n; ++s) {
            const int words = 1 + static_cast<int>(rng() % 5);
            std::string text;
            for (int w = 0; w < words; ++w) text += "w" + std::to_string(rng() % 40) + " ";
            const double start = t;
            const double end = start + 0.5 + static_cast<double>(rng() % 4);
            t = end - (rng() % 3 == 0 ? 0.25 : 0.0);  // occasional overlap
            v.segments.push_back({s + 1, start, end, text});
        }
        v.duration_s = 0.0;
        for (const auto& s : v.segments) v.duration_s = std::max(v.duration_s, s.end_s);

        const auto table = build_lookup(v);
        std::size_t cursor = 0;
        for (const auto& row : table.rows) {
            CHECK(row.tokens.first == cursor);
            cursor = row.tokens.last + 1;
            CHECK(row.time.start_s < row.time.end_s);
        }
        const std::size_t total = cursor;
        CHECK(total == table.token_count());

        const std::size_t a = rng() % total;
        const std::size_t b = a + rng() % (total - a);
        const auto span = token_span_to_time(table, {a, b});
        const auto back = time_span_to_tokens(table, span);
        CHECK(back.start_tok <= a);
        CHECK(back.end_tok >= b);
    }
}

TEST_CASE("decode_span: fixtures and exact tie-breaks") {
    const ScoreSequence s{{0.1, 0.7, 0.2}, {0.1, 0.2, 0.7}};
    const auto best = decode_span(s);
    CHECK(best.tokens.start_tok == 1);
    CHECK(best.tokens.end_tok == 2);
    CHECK(best.confidence > 0.0);
    CHECK(best.confidence <= 1.0);

    const auto single = decode_span({{0.4}, {0.6}});
    CHECK(single.tokens.start_tok == 0);
    CHECK(single.tokens.end_tok == 0);
    CHECK(single.confidence == doctest::Approx(1.0));

    CHECK(throws_code([] { decode_span({{}, {}}); }, errc::empty_sequence));
}

TEST_CASE("decode_span matches the exhaustive oracle with ties") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        ScoreSequence s;
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid so ties actually happen
            s.start_scores.push_back(0.25 * static_cast<double>(rng() % 5));
            s.end_scores.push_back(0.25 * static_cast<double>(rng() % 5));
        }
        const auto fast = decode_span(s);
        const auto [oi, oj] = brute_force_best(s);
        CHECK(fast.tokens.start_tok == oi);
        CHECK(fast.tokens.end_tok == oj);
    }
}

TEST_CASE("predict_span_from_scores maps through the table") {
    const auto table = build_lookup(two_segment_video());
    const ScoreSequence s{{0.0, 0.0, 5.0, 0.0}, {0.0, 0.0, 0.0, 5.0}};
    const auto pred = predict_span_from_scores(s, table, Modality::textual);
    CHECK(pred.span.start_s == doctest::Approx(2.0));
    CHECK(pred.span.end_s == doctest::Approx(5.0));
    CHECK(pred.modality == Modality::textual);
}

TEST_CASE("frame_time_table tiles the duration") {
    const auto table = frame_time_table(4, 20.0);
    REQUIRE(table.rows.size() == 4);
    CHECK(table.rows[0].time.start_s == doctest::Approx(0.0));
    CHECK(table.rows[0].time.end_s == doctest::Approx(5.0));
    CHECK(table.rows[3].time.start_s == doctest::Approx(15.0));
    CHECK(table.rows[3].time.end_s == doctest::Approx(20.0));
}

TEST_CASE("segment_relevance_localizer: threshold fixture") {
    // cosines 0.1, 0.8, 0.9, 0.2 with window 1, tau 0.8 -> threshold 0.72
    const auto q = unit_with_cosine(1.0);
    std::vector<clients::EmbeddingVector> embs{unit_with_cosine(0.1), unit_with_cosine(0.8),
                                               unit_with_cosine(0.9), unit_with_cosine(0.2)};
    std::vector<TimeSpan> times{{0, 5}, {5, 10}, {10, 15}, {15, 20}};
    const auto pred = segment_relevance_localizer(q, embs, times, 1, 0.8);
    CHECK(pred.span.start_s == doctest::Approx(5.0));
    CHECK(pred.span.end_s == doctest::Approx(15.0));
    CHECK(pred.confidence == doctest::Approx(0.85));
    CHECK(pred.modality == Modality::textual);
}

TEST_CASE("segment_relevance_localizer: uniform scores select everything") {
    const auto q = unit_with_cosine(1.0);
    std::vector<clients::EmbeddingVector> embs(5, unit_with_cosine(0.6));
    std::vector<TimeSpan> times{{0, 2}, {2, 4}, {4, 6}, {6, 8}, {8, 10}};
    const auto pred = segment_relevance_localizer(q, embs, times, 3, 0.9);
    CHECK(pred.span.start_s == doctest::Approx(0.0));
    CHECK(pred.span.end_s == doctest::Approx(10.0));
}

TEST_CASE("segment_relevance_localizer: single segment and errors") {
    const auto q = unit_with_cosine(1.0);
    std::vector<clients::EmbeddingVector> embs{unit_with_cosine(0.4)};
    std::vector<TimeSpan> times{{1, 4}};
    const auto pred = segment_relevance_localizer(q, embs, times, 1, 0.5);
    CHECK(pred.span.start_s == doctest::Approx(1.0));
    CHECK(pred.span.end_s == doctest::Approx(4.0));

    CHECK(throws_code([&] { segment_relevance_localizer(q, {}, {}, 1, 0.5); },
                      errc::no_segments));
    CHECK(throws_code([&] { segment_relevance_localizer(q, embs, times, 2, 0.5); },
                      errc::config_error));
}

TEST_CASE("one_way_gate: fixtures") {
    const SpanPrediction vis{{0, 10}, 0.9, Modality::visual};
    const SpanPrediction txt{{2, 10}, 0.4, Modality::textual};  // IoU 0.8
    CHECK(one_way_gate(vis, txt, 0.5) == TransferDecision::none);

    const SpanPrediction far_txt{{40, 50}, 0.4, Modality::textual};  // IoU 0
    CHECK(one_way_gate(vis, far_txt, 0.5) == TransferDecision::visual_teaches_textual);

    const SpanPrediction strong_txt{{40, 50}, 0.95, Modality::textual};
    CHECK(one_way_gate(vis, strong_txt, 0.5) == TransferDecision::textual_teaches_visual);

    const SpanPrediction tied{{40, 50}, 0.9, Modality::textual};
    CHECK(one_way_gate(vis, tied, 0.5) == TransferDecision::none);
}

TEST_CASE("one_way_gate property: no transfer on agreement, teacher always stronger") {
    std::mt19937_64 rng(44);
    std::uniform_real_distribution<double> pos(0.0, 50.0);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double a = pos(rng), b = pos(rng);
        const SpanPrediction vis{{std::min(a, b), std::max(a, b) + 0.1}, conf(rng),
                                 Modality::visual};
        const double c = pos(rng), d = pos(rng);
        const SpanPrediction txt{{std::min(c, d), std::max(c, d) + 0.1}, conf(rng),
                                 Modality::textual};
        const double theta = conf(rng);
        const auto decision = one_way_gate(vis, txt, theta);
        const double iou = temporal_iou(vis.span, txt.span);
        if (iou >= theta) {
            CHECK(decision == TransferDecision::none);
        } else if (decision == TransferDecision::visual_teaches_textual) {
            CHECK(vis.confidence > txt.confidence);
        } else if (decision == TransferDecision::textual_teaches_visual) {
            CHECK(txt.confidence > vis.confidence);
        } else {
            CHECK(vis.confidence == txt.confidence);
        }
    }
}

TEST_CASE("transfer_targets: coordinates follow the student modality") {
    const auto table = build_lookup(two_segment_video());

    const SpanPrediction visual_teacher{{2.5, 4.0}, 0.9, Modality::visual};
    const auto token_target = transfer_targets(visual_teacher, table);
    REQUIRE(std::holds_alternative<TokenSpan>(token_target));
    CHECK(std::get<TokenSpan>(token_target).start_tok == 2);
    CHECK(std::get<TokenSpan>(token_target).end_tok == 3);

    const SpanPrediction textual_teacher{{0.0, 5.0}, 0.9, Modality::textual};
    const auto time_target = transfer_targets(textual_teacher, table);
    REQUIRE(std::holds_alternative<TimeSpan>(time_target));
    CHECK(std::get<TimeSpan>(time_target).start_s == doctest::Approx(0.0));
    CHECK(std::get<TimeSpan>(time_target).end_s == doctest::Approx(5.0));

    const SpanPrediction outside{{90.0, 95.0}, 0.9, Modality::visual};
    CHECK(throws_code([&] { transfer_targets(outside, table); }, errc::no_coverage));
}

TEST_CASE("total_loss: exact sum, zero case, negative rejected") {
    CHECK(total_loss(1.0, 2.0, 0.5, 0.25) == 3.75);
    CHECK(total_loss(0, 0, 0, 0) == 0.0);
    CHECK(throws_code([] { total_loss(1, 1, -0.1, 0); }, errc::negative_loss));
}

TEST_CASE("total_loss property: additive and transfer-permutation invariant") {
    std::mt19937_64 rng(45);
    std::uniform_real_distribution<double> dist(0.0, 10.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double a = dist(rng), b = dist(rng), c = dist(rng), d = dist(rng);
        CHECK(total_loss(a, b, c, d) == a + b + c + d);
        CHECK(total_loss(a, b, c, d) ==
              doctest::Approx(total_loss(a, b, d, c)).epsilon(1e-12));
    }
}

TEST_CASE("localize: textual-only video passes through") {
    TempDir dir("loc");
    corpus::VideoRecord v;
    v.video_id = "v";
    v.duration_s = 20.0;
    v.segments = {{1, 0.0, 5.0, "totally unrelated filler chatter"},
                  {2, 5.0, 15.0, "wash hands carefully now"},
                  {3, 15.0, 20.0, "closing remarks and outro"}};

    clients::EmbeddingClient embedder(clients::make_stub_embedding_backend(64), {});
    const auto q_emb = clients::stub_embed("wash hands carefully now", 64);
    LocalizeConfig cfg;
    cfg.theta = 0.3;
    cfg.window = 1;
    cfg.tau = 0.9;
    cfg.encoder = "stub-64";

    const auto pred = localize(v, {"q1", "wash hands carefully now"}, q_emb, embedder, cfg);
    CHECK(pred.modality == Modality::textual);
    CHECK(pred.span.start_s == doctest::Approx(5.0));
    CHECK(pred.span.end_s == doctest::Approx(15.0));
}

TEST_CASE("localize: agreement intersects, disagreement follows the gate") {
    TempDir dir("loc2");
    corpus::VideoRecord v;
    v.video_id = "v";
    v.duration_s = 20.0;
    v.segments = {{1, 0.0, 5.0, "totally unrelated filler chatter"},
                  {2, 5.0, 15.0, "wash hands carefully now"},
                  {3, 15.0, 20.0, "closing remarks and outro"}};

    // two frames tiling [0,10) and [10,20); frame 0 matches the query exactly
    const auto q_emb = clients::stub_embed("wash hands carefully now", 64);
    retrieval::FrameMatrix frames;
    frames.dim = 64;
    frames.data = q_emb.values;
    auto off = clients::stub_embed("totally unrelated filler chatter", 64);
    frames.data.insert(frames.data.end(), off.values.begin(), off.values.end());
    const auto feat_path = dir.path() / "v.feat";
    retrieval::write_frame_features(feat_path, frames);
    v.frame_features_path = feat_path;

    clients::EmbeddingClient embedder(clients::make_stub_embedding_backend(64), {});
    LocalizeConfig cfg;
    cfg.window = 1;
    cfg.tau = 0.9;
    cfg.encoder = "stub-64";

    // textual span is [5,15], visual span is [0,10]; IoU = 1/3
    cfg.theta = 0.3;  // agreement: intersection [5,10]
    const auto merged = localize(v, {"q1", "wash hands carefully now"}, q_emb, embedder, cfg);
    CHECK(merged.span.start_s == doctest::Approx(5.0));
    CHECK(merged.span.end_s == doctest::Approx(10.0));

    cfg.theta = 0.5;  // disagreement: the higher-confidence side teaches
    const auto taught = localize(v, {"q1", "wash hands carefully now"}, q_emb, embedder, cfg);
    const bool is_txt = taught.span.start_s == doctest::Approx(5.0) &&
                        taught.span.end_s == doctest::Approx(15.0);
    const bool is_vis = taught.span.start_s == doctest::Approx(0.0) &&
                        taught.span.end_s == doctest::Approx(10.0);
    CHECK((is_txt || is_vis));
}

TEST_CASE("localization file round trip") {
    const std::vector<LocalizationEntry> entries{{"q1", "v1", {1.25, 7.5}, 0.875},
                                                 {"q2", "v2", {0.0, 3.0}, 0.5}};
    const auto text = write_localization(entries);
    CHECK(text == "q1 v1 1.250 7.500 0.875000\nq2 v2 0.000 3.000 0.500000\n");
    const auto back = read_localization(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0].span.end_s == doctest::Approx(7.5));
    CHECK(back[1].confidence == doctest::Approx(0.5));
}
