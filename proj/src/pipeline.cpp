#include "medvid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"
#include "medvid/errors.hpp"
#include "medvid/hash.hpp"
#include "medvid/localization.hpp"
#include "medvid/metrics.hpp"
#include "medvid/parallel.hpp"
#include "medvid/stepcap.hpp"
#include "medvid/text.hpp"

namespace medvid::pipeline {

using nlohmann::json;

namespace {

constexpr std::string_view kStageSalt = "medvidqa-stage-v1";

std::string digest_file(const std::filesystem::path& path) {
    return sha256_hex(corpus::read_file(path));
}

std::string digest_file_or_absent(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.empty() || !std::filesystem::exists(path, ec)) return "absent";
    return digest_file(path);
}

// filenames plus content digests, sorted, so fixture edits invalidate stages
std::string digest_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    if (dir.empty() || !std::filesystem::is_directory(dir, ec)) return "absent";
    std::vector<std::string> entries;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        entries.push_back(e.path().filename().string() + ":" + digest_file(e.path()));
    }
    std::sort(entries.begin(), entries.end());
    std::string joined;
    for (const auto& s : entries) {
        joined += s;
        joined += '\n';
    }
    return sha256_hex(joined);
}

std::string digest_corpus_inputs(const config::PipelineConfig& cfg) {
    std::vector<std::string> material{digest_file(cfg.corpus_dir / "videos.json")};
    const json manifest = json::parse(corpus::read_file(cfg.corpus_dir / "videos.json"));
    for (const auto& entry : manifest) {
        if (entry.contains("transcript"))
            material.push_back(
                digest_file_or_absent(cfg.corpus_dir / entry["transcript"].get<std::string>()));
        if (entry.contains("frame_features"))
            material.push_back(
                digest_file_or_absent(cfg.corpus_dir / entry["frame_features"].get<std::string>()));
    }
    std::string joined;
    for (const auto& s : material) {
        joined += s;
        joined += '\n';
    }
    return sha256_hex(joined);
}

std::string stage_key(const std::vector<std::string>& material) {
    std::string joined(kStageSalt);
    for (const auto& s : material) {
        joined += '\n';
        joined += s;
    }
    return sha256_hex(joined);
}

std::filesystem::path stamp_path(const config::PipelineConfig& cfg, const std::string& stage) {
    return cfg.output_dir / "stamps" / (stage + ".json");
}

bool up_to_date(const config::PipelineConfig& cfg, const std::string& stage,
                const std::string& key, const std::vector<std::filesystem::path>& outputs) {
    std::error_code ec;
    const auto path = stamp_path(cfg, stage);
    if (!std::filesystem::exists(path, ec)) return false;
    try {
        const json doc = json::parse(corpus::read_file(path));
        if (doc.value("key", "") != key) return false;
    } catch (const json::exception&) {
        return false;
    }
    for (const auto& out : outputs)
        if (!std::filesystem::exists(out, ec)) return false;
    return true;
}

void save_stamp(const config::PipelineConfig& cfg, const std::string& stage,
                const std::string& key) {
    const json doc = {{"stage", stage}, {"key", key}};
    corpus::write_file_atomic(stamp_path(cfg, stage), doc.dump(2) + "\n");
}

clients::EmbeddingClient make_embedder(const config::PipelineConfig& cfg) {
    auto svc = cfg.embedding_service;
    if (svc.cache_dir.empty()) svc.cache_dir = cfg.output_dir / "cache" / "embedding";
    auto backend = cfg.stub_mode ? clients::make_stub_embedding_backend(cfg.stub_dim)
                                 : clients::make_http_embedding_backend(svc);
    return clients::EmbeddingClient(std::move(backend), std::move(svc));
}

clients::ChatClient make_chat(const config::PipelineConfig& cfg) {
    auto svc = cfg.chat_service;
    if (svc.cache_dir.empty()) svc.cache_dir = cfg.output_dir / "cache" / "chat";
    auto backend = cfg.stub_mode ? clients::make_stub_chat_backend(cfg.stub_fixtures_dir)
                                 : clients::make_http_chat_backend(svc);
    return clients::ChatClient(std::move(backend), std::move(svc));
}

bool strategy_uses_expansions(retrieval::Strategy s) {
    return s == retrieval::Strategy::run2_expanded || s == retrieval::Strategy::run3_fused;
}

void require_path(const std::filesystem::path& path, const std::string& what) {
    std::error_code ec;
    if (path.empty() || !std::filesystem::exists(path, ec))
        throw Error(errc::config_error, what + " not found: '" + path.string() + "'");
}

std::map<std::string, corpus::MedicalQuestion> topics_by_id(
    const std::vector<corpus::MedicalQuestion>& topics) {
    std::map<std::string, corpus::MedicalQuestion> out;
    for (const auto& t : topics) out[t.query_id] = t;
    return out;
}

}  // namespace

std::filesystem::path run_file_path(const config::PipelineConfig& cfg) {
    return cfg.output_dir / "runs" / (cfg.strategy.run_tag + ".run");
}

std::filesystem::path localization_path(const config::PipelineConfig& cfg) {
    return cfg.output_dir / "localization" / (cfg.strategy.run_tag + ".loc");
}

std::filesystem::path steps_path(const config::PipelineConfig& cfg) {
    return cfg.output_dir / "steps" / "steps.json";
}

StageResult stage_ingest(const config::PipelineConfig& cfg) {
    require_path(cfg.corpus_dir / "videos.json", "corpus manifest");
    require_path(cfg.topics_path, "topics file");

    const auto out_path = cfg.output_dir / "corpus_summary.json";
    const std::string key = stage_key({digest_corpus_inputs(cfg), digest_file(cfg.topics_path),
                                       digest_file_or_absent(cfg.qrels_path),
                                       digest_file_or_absent(cfg.gold_steps_path)});
    if (up_to_date(cfg, "ingest", key, {out_path})) return {{out_path}, true};

    const auto corpus = corpus::load_corpus(cfg.corpus_dir);
    const auto topics = corpus::load_topics(cfg.topics_path);
    std::size_t qrel_count = 0;
    if (!cfg.qrels_path.empty() && std::filesystem::exists(cfg.qrels_path))
        qrel_count = corpus::load_qrels(cfg.qrels_path).size();

    json videos = json::array();
    for (const auto& video : corpus.videos) {
        std::size_t tokens = 0;
        for (const auto& seg : video.segments) tokens += tokenize(seg.text).size();
        videos.push_back({{"vid", video.video_id},
                          {"duration", video.duration_s},
                          {"segments", video.segments.size()},
                          {"tokens", tokens},
                          {"has_frame_features", video.frame_features_path.has_value()}});
    }
    const json doc = {{"videos", videos}, {"topics", topics.size()}, {"qrels", qrel_count}};
    corpus::write_file_atomic(out_path, doc.dump(2) + "\n");
    save_stamp(cfg, "ingest", key);
    return {{out_path}, false};
}

StageResult stage_retrieve(const config::PipelineConfig& cfg) {
    require_path(cfg.corpus_dir / "videos.json", "corpus manifest");
    require_path(cfg.topics_path, "topics file");

    const bool expand = strategy_uses_expansions(cfg.strategy.strategy);
    const auto out_path = run_file_path(cfg);
    const auto expansions_path = cfg.output_dir / "expansions.json";

    std::vector<std::string> material{
        digest_corpus_inputs(cfg),
        digest_file(cfg.topics_path),
        std::string(retrieval::to_string(cfg.strategy.strategy)),
        std::to_string(cfg.strategy.k),
        std::to_string(cfg.strategy.chunk_tokens),
        std::to_string(cfg.strategy.chunk_stride),
        format_fixed(cfg.strategy.rrf_k, 6),
        cfg.strategy.run_tag,
        cfg.stub_mode ? "stub-" + std::to_string(cfg.stub_dim) : "live",
    };
    for (const auto& enc : cfg.strategy.encoders) material.push_back(enc);
    if (expand) {
        material.push_back(cfg.chat_model);
        if (cfg.stub_mode) material.push_back(digest_dir(cfg.stub_fixtures_dir));
    }
    const std::string key = stage_key(material);

    std::vector<std::filesystem::path> outputs{out_path};
    if (expand) outputs.push_back(expansions_path);
    if (up_to_date(cfg, "retrieve", key, outputs)) return {outputs, true};

    const auto corpus = corpus::load_corpus(cfg.corpus_dir);
    const auto topics = corpus::load_topics(cfg.topics_path);
    auto embedder = make_embedder(cfg);

    std::map<std::string, clients::ExpandedAnswer> expansions;
    if (expand) {
        auto chat = make_chat(cfg);
        for (const auto& topic : topics) {
            try {
                expansions[topic.query_id] = chat.expand_question(topic, cfg.chat_model);
            } catch (const Error& e) {
                if (e.code() != errc::expansion_failed) throw;
                std::cerr << "medvidqa: expansion fallback: " << e.what() << "\n";
                expansions[topic.query_id] =
                    clients::ExpandedAnswer{topic.query_id, "", cfg.chat_model, true};
            }
        }
    }

    const retrieval::Retriever retriever(corpus, embedder, cfg.strategy);
    const auto run = retriever.retrieve(topics, expansions, cfg.workers);
    retrieval::write_run_file(out_path, run);

    if (expand) {
        json doc = json::object();
        for (const auto& [qid, answer] : expansions)
            doc[qid] = {{"text", answer.text},
                        {"source_model", answer.source_model},
                        {"failed", answer.failed}};
        corpus::write_file_atomic(expansions_path, doc.dump(2) + "\n");
    }
    save_stamp(cfg, "retrieve", key);
    return {outputs, false};
}

StageResult stage_localize(const config::PipelineConfig& cfg) {
    stage_retrieve(cfg);  // dependency (cached when unchanged)

    const auto run_path = run_file_path(cfg);
    const auto out_path = localization_path(cfg);
    const std::string key = stage_key({
        digest_file(run_path),
        digest_corpus_inputs(cfg),
        digest_file(cfg.topics_path),
        format_fixed(cfg.localization.theta, 6),
        std::to_string(cfg.localization.window),
        format_fixed(cfg.localization.tau, 6),
        cfg.localization.encoder,
        std::to_string(cfg.localize_top),
        cfg.stub_mode ? "stub-" + std::to_string(cfg.stub_dim) : "live",
    });
    if (up_to_date(cfg, "localize", key, {out_path})) return {{out_path}, true};

    const auto corpus = corpus::load_corpus(cfg.corpus_dir);
    const auto topics = topics_by_id(corpus::load_topics(cfg.topics_path));
    auto embedder = make_embedder(cfg);

    auto run = retrieval::read_run_file(run_path);
    std::stable_sort(run.begin(), run.end(), [](const auto& a, const auto& b) {
        if (a.query_id != b.query_id) return a.query_id < b.query_id;
        return a.rank < b.rank;
    });

    struct Pair {
        const corpus::MedicalQuestion* question;
        const corpus::VideoRecord* video;
    };
    std::vector<Pair> pairs;
    for (const auto& entry : run) {
        if (entry.rank > cfg.localize_top) continue;
        const auto topic = topics.find(entry.query_id);
        if (topic == topics.end())
            throw Error(errc::parse_error,
                        "run file query '" + entry.query_id + "' missing from topics");
        const auto* video = corpus.find(entry.video_id);
        if (!video)
            throw Error(errc::parse_error,
                        "run file video '" + entry.video_id + "' missing from corpus");
        pairs.push_back({&topic->second, video});
    }

    // question embeddings up front, then parallel per pair
    std::map<std::string, clients::EmbeddingVector> q_embs;
    for (const auto& pair : pairs)
        if (!q_embs.count(pair.question->query_id))
            q_embs[pair.question->query_id] =
                embedder.embed_texts({pair.question->text}, cfg.localization.encoder)[0];

    std::vector<localization::LocalizationEntry> entries(pairs.size());
    parallel_for(pairs.size(), cfg.workers, [&](std::size_t i) {
        const auto prediction =
            localization::localize(*pairs[i].video, *pairs[i].question,
                                   q_embs.at(pairs[i].question->query_id), embedder,
                                   cfg.localization);
        entries[i] = {pairs[i].question->query_id, pairs[i].video->video_id, prediction.span,
                      prediction.confidence};
    });

    corpus::write_file_atomic(out_path, localization::write_localization(entries));
    save_stamp(cfg, "localize", key);
    return {{out_path}, false};
}

StageResult stage_stepcap(const config::PipelineConfig& cfg) {
    require_path(cfg.corpus_dir / "videos.json", "corpus manifest");
    require_path(cfg.topics_path, "topics file");
    if (cfg.stepcap_pairs == config::StepcapPairs::gold)
        require_path(cfg.gold_steps_path, "gold steps file");
    else
        stage_retrieve(cfg);

    const auto out_path = steps_path(cfg);
    std::vector<std::string> material{
        digest_corpus_inputs(cfg),
        digest_file(cfg.topics_path),
        cfg.chat_model,
        digest_dir(cfg.captions_dir),
        cfg.stepcap_pairs == config::StepcapPairs::gold ? "pairs:gold" : "pairs:top1",
        cfg.stub_mode ? digest_dir(cfg.stub_fixtures_dir) : "live",
    };
    if (cfg.stepcap_pairs == config::StepcapPairs::gold)
        material.push_back(digest_file(cfg.gold_steps_path));
    else
        material.push_back(digest_file(run_file_path(cfg)));
    const std::string key = stage_key(material);
    if (up_to_date(cfg, "stepcap", key, {out_path})) return {{out_path}, true};

    const auto corpus = corpus::load_corpus(cfg.corpus_dir);
    const auto topics = topics_by_id(corpus::load_topics(cfg.topics_path));
    auto chat = make_chat(cfg);

    std::vector<std::pair<std::string, std::string>> pair_keys;
    if (cfg.stepcap_pairs == config::StepcapPairs::gold) {
        for (const auto& set : corpus::load_gold_steps(cfg.gold_steps_path))
            pair_keys.emplace_back(set.query_id, set.video_id);
    } else {
        for (const auto& entry : retrieval::read_run_file(run_file_path(cfg)))
            if (entry.rank == 1) pair_keys.emplace_back(entry.query_id, entry.video_id);
    }
    std::sort(pair_keys.begin(), pair_keys.end());
    pair_keys.erase(std::unique(pair_keys.begin(), pair_keys.end()), pair_keys.end());

    std::vector<corpus::GoldStepSet> sets;
    for (const auto& [qid, vid] : pair_keys) {
        const auto topic = topics.find(qid);
        if (topic == topics.end())
            throw Error(errc::parse_error, "step pair query '" + qid + "' missing from topics");
        const auto* video = corpus.find(vid);
        if (!video)
            throw Error(errc::parse_error, "step pair video '" + vid + "' missing from corpus");

        std::vector<stepcap::SourcedCaption> generated;
        const auto caption_path = cfg.captions_dir / (vid + ".json");
        std::error_code ec;
        if (!cfg.captions_dir.empty() && std::filesystem::exists(caption_path, ec))
            generated = stepcap::load_generated_captions(caption_path);

        try {
            auto steps = stepcap::run_qfisc(*video, topic->second, generated, chat, cfg.chat_model);
            sets.push_back({qid, vid, std::move(steps)});
        } catch (const Error& e) {
            // these abort the pair, not the batch
            if (e.code() == errc::unparseable_response || e.code() == errc::no_valid_steps ||
                e.code() == errc::nothing_to_summarize) {
                std::cerr << "medvidqa: stepcap skipped (" << qid << ", " << vid
                          << "): " << e.what() << "\n";
                continue;
            }
            throw;
        }
    }

    corpus::write_file_atomic(out_path, stepcap::write_step_sets(sets));
    save_stamp(cfg, "stepcap", key);
    return {{out_path}, false};
}

StageResult stage_eval_retrieval(const config::PipelineConfig& cfg) {
    require_path(cfg.qrels_path, "qrels file");
    stage_retrieve(cfg);

    const auto json_path = cfg.output_dir / "reports" / "retrieval_report.json";
    const auto table_path = cfg.output_dir / "reports" / "retrieval_report.txt";
    const std::string key = stage_key({
        digest_file(run_file_path(cfg)),
        digest_file(cfg.qrels_path),
        cfg.ndcg_cutoff ? std::to_string(*cfg.ndcg_cutoff) : "full",
    });
    if (up_to_date(cfg, "eval-retrieval", key, {json_path, table_path}))
        return {{json_path, table_path}, true};

    const auto run = retrieval::read_run_file(run_file_path(cfg));
    const auto qrels = corpus::load_qrels(cfg.qrels_path);
    const auto report = metrics::evaluate_retrieval(run, qrels, cfg.ndcg_cutoff);

    corpus::write_file_atomic(json_path, metrics::retrieval_report_json(report));
    corpus::write_file_atomic(table_path, metrics::retrieval_report_table(report));
    save_stamp(cfg, "eval-retrieval", key);
    return {{json_path, table_path}, false};
}

StageResult stage_eval_steps(const config::PipelineConfig& cfg) {
    require_path(cfg.gold_steps_path, "gold steps file");
    stage_stepcap(cfg);

    const auto json_path = cfg.output_dir / "reports" / "caption_report.json";
    const auto table_path = cfg.output_dir / "reports" / "caption_report.txt";
    const std::string key = stage_key({
        digest_file(steps_path(cfg)),
        digest_file(cfg.gold_steps_path),
    });
    if (up_to_date(cfg, "eval-steps", key, {json_path, table_path}))
        return {{json_path, table_path}, true};

    const auto pred = corpus::load_gold_steps(steps_path(cfg));
    const auto gold = corpus::load_gold_steps(cfg.gold_steps_path);
    const auto report = metrics::evaluate_steps(pred, gold);

    corpus::write_file_atomic(json_path, metrics::caption_report_json(report));
    corpus::write_file_atomic(table_path, metrics::caption_report_table(report));
    save_stamp(cfg, "eval-steps", key);
    return {{json_path, table_path}, false};
}

void run_pipeline(const config::PipelineConfig& cfg) {
    stage_ingest(cfg);
    stage_retrieve(cfg);
    stage_localize(cfg);

    const bool steps_enabled = cfg.stepcap_pairs == config::StepcapPairs::top1 ||
                               (!cfg.gold_steps_path.empty() &&
                                std::filesystem::exists(cfg.gold_steps_path));
    if (steps_enabled) stage_stepcap(cfg);

    json summary = json::object();
    summary["run_file"] = run_file_path(cfg).filename().string();
    summary["localization_file"] = localization_path(cfg).filename().string();

    if (!cfg.qrels_path.empty() && std::filesystem::exists(cfg.qrels_path)) {
        stage_eval_retrieval(cfg);
        summary["retrieval"] =
            json::parse(corpus::read_file(cfg.output_dir / "reports" / "retrieval_report.json"));
    }
    if (steps_enabled && !cfg.gold_steps_path.empty() &&
        std::filesystem::exists(cfg.gold_steps_path)) {
        stage_eval_steps(cfg);
        summary["stepcap"] =
            json::parse(corpus::read_file(cfg.output_dir / "reports" / "caption_report.json"));
    }
    corpus::write_file_atomic(cfg.output_dir / "summary.json", summary.dump(2) + "\n");
}

int execute(const CliOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    try {
        const auto cfg = config::load_pipeline_config(options.config_path, options.overrides);
        std::filesystem::create_directories(cfg.output_dir);

        if (options.command == "ingest")
            stage_ingest(cfg);
        else if (options.command == "retrieve")
            stage_retrieve(cfg);
        else if (options.command == "localize")
            stage_localize(cfg);
        else if (options.command == "stepcap")
            stage_stepcap(cfg);
        else if (options.command == "eval-retrieval")
            stage_eval_retrieval(cfg);
        else if (options.command == "eval-steps")
            stage_eval_steps(cfg);
        else if (options.command == "pipeline")
            run_pipeline(cfg);
        else
            throw Error(errc::usage_error, "unknown command '" + options.command + "'");

        // wall-clock metadata lives here and only here
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        const json meta = {{"command", options.command},
                           {"seconds", seconds},
                           {"written_at_epoch_s",
                            std::chrono::duration_cast<std::chrono::seconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count()}};
        corpus::write_file_atomic(cfg.output_dir / "meta.json", meta.dump(2) + "\n");
        return 0;
    } catch (const Error& e) {
        std::cerr << "medvidqa: error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "medvidqa: error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace medvid::pipeline
