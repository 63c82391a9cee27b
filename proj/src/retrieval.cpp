#include "medvid/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "medvid/errors.hpp"
#include "medvid/parallel.hpp"
#include "medvid/text.hpp"

namespace medvid::retrieval {

Strategy strategy_from_string(std::string_view name) {
    if (name == "run1_orig_max" || name == "run1") return Strategy::run1_orig_max;
    if (name == "run2_expanded" || name == "run2") return Strategy::run2_expanded;
    if (name == "run3_fused" || name == "run3") return Strategy::run3_fused;
    if (name == "run4_orig_mean" || name == "run4") return Strategy::run4_orig_mean;
    if (name == "run5_text_to_vision" || name == "run5") return Strategy::run5_text_to_vision;
    throw Error(errc::config_error, "unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::run1_orig_max: return "run1_orig_max";
        case Strategy::run2_expanded: return "run2_expanded";
        case Strategy::run3_fused: return "run3_fused";
        case Strategy::run4_orig_mean: return "run4_orig_mean";
        case Strategy::run5_text_to_vision: return "run5_text_to_vision";
    }
    return "?";
}

namespace {

double cosine_span(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw Error(errc::dim_mismatch, "vectors of dim " + std::to_string(u.size()) + " and " +
                                            std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw Error(errc::zero_vector, "cosine of a zero-norm vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

}  // namespace

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    return cosine_span(u.values, v.values);
}

double score_query_video(std::span<const EmbeddingVector> q_embs,
                         std::span<const std::vector<EmbeddingVector>> chunk_embs,
                         Combine combine) {
    if (q_embs.empty() || q_embs.size() != chunk_embs.size())
        throw Error(errc::usage_error, "per-encoder query and chunk inputs differ");

    double best = 0.0, sum = 0.0;
    for (std::size_t e = 0; e < q_embs.size(); ++e) {
        if (chunk_embs[e].empty()) throw Error(errc::no_chunks, "encoder has no chunks to score");
        double enc = -2.0;
        for (const auto& chunk : chunk_embs[e]) enc = std::max(enc, cosine(q_embs[e], chunk));
        if (e == 0 || enc > best) best = enc;
        sum += enc;
    }
    return combine == Combine::max ? best : sum / static_cast<double>(q_embs.size());
}

double sim_final(double sim_orig, std::optional<double> sim_expanded) {
    return sim_expanded ? std::max(sim_orig, *sim_expanded) : sim_orig;
}

RunFile rank_videos(const std::string& query_id, const std::map<std::string, double>& scores,
                    int k, const std::string& run_tag) {
    if (k < 1) throw Error(errc::usage_error, "rank cutoff must be >= 1");

    std::vector<std::pair<std::string, double>> order(scores.begin(), scores.end());
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (order.size() > static_cast<std::size_t>(k)) order.resize(static_cast<std::size_t>(k));

    RunFile entries;
    entries.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        entries.push_back({query_id, order[i].first, static_cast<int>(i + 1), order[i].second,
                           run_tag});
    return entries;
}

RunFile fuse_runs(const RunFile& a, const RunFile& b, double rrf_k, int k,
                  const std::string& run_tag) {
    if (rrf_k <= 0.0) throw Error(errc::usage_error, "rrf_k must be positive");

    // query -> video -> fused score
    std::map<std::string, std::map<std::string, double>> fused;
    for (const RunFile* run : {&a, &b})
        for (const auto& entry : *run)
            fused[entry.query_id][entry.video_id] += 1.0 / (rrf_k + entry.rank);

    RunFile out;
    for (const auto& [query_id, scores] : fused) {
        RunFile ranked = rank_videos(query_id, scores, k, run_tag);
        out.insert(out.end(), ranked.begin(), ranked.end());
    }
    return out;
}

double text_to_vision_score(const EmbeddingVector& q_emb, const FrameMatrix& frames) {
    const auto scores = frame_scores(q_emb, frames);
    return *std::max_element(scores.begin(), scores.end());
}

std::vector<double> frame_scores(const EmbeddingVector& q_emb, const FrameMatrix& frames) {
    if (frames.rows() == 0) throw Error(errc::no_frames, "frame matrix is empty");
    std::vector<double> scores;
    scores.reserve(frames.rows());
    for (std::size_t i = 0; i < frames.rows(); ++i)
        scores.push_back(cosine_span(q_emb.values, frames.row(i)));
    return scores;
}

FrameMatrix read_frame_features(const std::filesystem::path& path) {
    const std::string contents = corpus::read_file(path);
    std::istringstream in(contents);
    std::string magic, version;
    std::size_t k = 0, d = 0;
    if (!(in >> magic >> version >> k >> d) || magic != "MEDVID-FEAT" || version != "v1")
        throw Error(errc::parse_error, path.string() + ": bad frame feature header");
    if (d == 0) throw Error(errc::parse_error, path.string() + ": zero feature dim");

    FrameMatrix m;
    m.dim = d;
    m.data.resize(k * d);
    for (std::size_t i = 0; i < k * d; ++i) {
        if (!(in >> m.data[i]))
            throw Error(errc::parse_error,
                        path.string() + ": expected " + std::to_string(k * d) + " values");
    }
    return m;
}

void write_frame_features(const std::filesystem::path& path, const FrameMatrix& m) {
    std::string out = "MEDVID-FEAT v1 " + std::to_string(m.rows()) + " " + std::to_string(m.dim);
    out += '\n';
    char buf[64];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.dim; ++c) {
            auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), row[c]);
            if (c) out += ' ';
            out.append(buf, p);
        }
        out += '\n';
    }
    corpus::write_file_atomic(path, out);
}

std::string write_run(const RunFile& entries) {
    RunFile sorted = entries;
    std::stable_sort(sorted.begin(), sorted.end(), [](const RunEntry& a, const RunEntry& b) {
        if (a.query_id != b.query_id) return a.query_id < b.query_id;
        return a.rank < b.rank;
    });

    std::string out;
    const std::string* query = nullptr;
    int expected_rank = 1;
    double previous_score = 0.0;
    for (const auto& entry : sorted) {
        if (!query || entry.query_id != *query) {
            query = &entry.query_id;
            expected_rank = 1;
        }
        if (entry.rank != expected_rank)
            throw Error(errc::parse_error, "query '" + entry.query_id +
                                               "': non-contiguous rank " +
                                               std::to_string(entry.rank));
        if (expected_rank > 1 && entry.score > previous_score + 1e-12)
            throw Error(errc::parse_error,
                        "query '" + entry.query_id + "': scores increase at rank " +
                            std::to_string(entry.rank));
        previous_score = entry.score;
        ++expected_rank;

        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", entry.score);
        out += entry.query_id;
        out += " Q0 ";
        out += entry.video_id;
        out += ' ';
        out += std::to_string(entry.rank);
        out += ' ';
        out += buf;
        out += ' ';
        out += entry.run_tag;
        out += '\n';
    }
    return out;
}

RunFile read_run(std::string_view text) {
    RunFile entries;
    std::size_t line_no = 0;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        std::size_t end = text.find('\n', begin);
        if (end == std::string_view::npos) end = text.size();
        const std::string line(text.substr(begin, end - begin));
        begin = end + 1;
        ++line_no;
        if (trim(line).empty()) continue;

        std::istringstream iss(line);
        RunEntry entry;
        std::string q0, rank_str, score_str;
        if (!(iss >> entry.query_id >> q0 >> entry.video_id >> rank_str >> score_str >>
              entry.run_tag))
            throw Error(errc::parse_error,
                        "run line " + std::to_string(line_no) + ": expected 6 fields");
        std::string extra;
        if (iss >> extra)
            throw Error(errc::parse_error,
                        "run line " + std::to_string(line_no) + ": trailing fields");
        try {
            entry.rank = std::stoi(rank_str);
            entry.score = std::stod(score_str);
        } catch (const std::exception&) {
            throw Error(errc::parse_error,
                        "run line " + std::to_string(line_no) + ": bad rank or score");
        }
        if (entry.rank < 1)
            throw Error(errc::parse_error, "run line " + std::to_string(line_no) + ": rank < 1");
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_run_file(const std::filesystem::path& path, const RunFile& entries) {
    corpus::write_file_atomic(path, write_run(entries));
}

RunFile read_run_file(const std::filesystem::path& path) {
    return read_run(corpus::read_file(path));
}

std::vector<std::string> chunk_texts(const std::vector<std::string>& tokens, int chunk_tokens,
                                     int chunk_stride) {
    if (chunk_tokens < 1 || chunk_stride < 1 || chunk_stride > chunk_tokens)
        throw Error(errc::config_error, "need 1 <= chunk_stride <= chunk_tokens");
    if (tokens.empty()) return {};

    std::vector<std::string> chunks;
    const std::size_t n = tokens.size();
    const auto width = static_cast<std::size_t>(chunk_tokens);
    const auto stride = static_cast<std::size_t>(chunk_stride);
    for (std::size_t start = 0;; start += stride) {
        const std::size_t end = std::min(n, start + width);
        std::string chunk;
        for (std::size_t i = start; i < end; ++i) {
            if (i > start) chunk += ' ';
            chunk += tokens[i];
        }
        chunks.push_back(std::move(chunk));
        if (end == n) break;
    }
    return chunks;
}

Retriever::Retriever(const corpus::Corpus& corpus, clients::EmbeddingClient& embedder,
                     StrategyConfig cfg)
    : corpus_(&corpus), embedder_(&embedder), cfg_(std::move(cfg)) {
    if (cfg_.run_tag.empty()) cfg_.run_tag = std::string(to_string(cfg_.strategy));
    if (cfg_.strategy != Strategy::run5_text_to_vision && cfg_.encoders.empty())
        throw Error(errc::config_error, "text strategies need at least one encoder");
}

RunFile Retriever::retrieve(const std::vector<corpus::MedicalQuestion>& topics,
                            const std::map<std::string, clients::ExpandedAnswer>& expansions,
                            int workers) const {
    switch (cfg_.strategy) {
        case Strategy::run3_fused: {
            RunFile run1 = retrieve_text(topics, expansions, Strategy::run1_orig_max, workers,
                                         "run1_orig_max");
            RunFile run2 =
                retrieve_text(topics, expansions, Strategy::run2_expanded, workers, "run2_expanded");
            return fuse_runs(run1, run2, cfg_.rrf_k, cfg_.k, cfg_.run_tag);
        }
        case Strategy::run5_text_to_vision:
            return retrieve_vision(topics, workers, cfg_.run_tag);
        default:
            return retrieve_text(topics, expansions, cfg_.strategy, workers, cfg_.run_tag);
    }
}

RunFile Retriever::retrieve_text(const std::vector<corpus::MedicalQuestion>& topics,
                                 const std::map<std::string, clients::ExpandedAnswer>& expansions,
                                 Strategy strategy, int workers, const std::string& run_tag) const {
    const Combine combine =
        strategy == Strategy::run4_orig_mean ? Combine::mean : Combine::max;

    // chunk embeddings per encoder per scorable video
    std::vector<const corpus::VideoRecord*> videos;
    std::vector<std::vector<std::string>> video_chunks;
    for (const auto& video : corpus_->videos) {
        if (video.segments.empty()) continue;  // nothing to score against
        auto text = corpus::transcript_text(video);
        auto chunks = chunk_texts(text.tokens, cfg_.chunk_tokens, cfg_.chunk_stride);
        if (chunks.empty()) continue;
        videos.push_back(&video);
        video_chunks.push_back(std::move(chunks));
    }

    // video -> encoder -> chunk embeddings
    std::vector<std::vector<std::vector<EmbeddingVector>>> chunk_embs(videos.size());
    for (auto& per_video : chunk_embs) per_video.resize(cfg_.encoders.size());
    std::vector<std::string> flat;
    for (const auto& chunks : video_chunks) flat.insert(flat.end(), chunks.begin(), chunks.end());
    for (std::size_t e = 0; e < cfg_.encoders.size(); ++e) {
        auto embedded = embedder_->embed_texts(flat, cfg_.encoders[e]);
        std::size_t cursor = 0;
        for (std::size_t v = 0; v < videos.size(); ++v) {
            chunk_embs[v][e].assign(std::make_move_iterator(embedded.begin() + cursor),
                                    std::make_move_iterator(embedded.begin() + cursor +
                                                            video_chunks[v].size()));
            cursor += video_chunks[v].size();
        }
    }

    RunFile out;
    for (const auto& topic : topics) {
        std::string query_text = topic.text;
        if (strategy == Strategy::run2_expanded) {
            // expansion text when available; the original question otherwise
            if (auto it = expansions.find(topic.query_id);
                it != expansions.end() && !it->second.failed && !trim(it->second.text).empty())
                query_text = it->second.text;
        }

        std::vector<EmbeddingVector> q_embs;
        for (const auto& encoder : cfg_.encoders)
            q_embs.push_back(embedder_->embed_texts({query_text}, encoder)[0]);

        std::vector<double> slots(videos.size());
        parallel_for(videos.size(), workers, [&](std::size_t v) {
            slots[v] = score_query_video(q_embs, chunk_embs[v], combine);
        });

        std::map<std::string, double> scores;
        for (std::size_t v = 0; v < videos.size(); ++v) scores[videos[v]->video_id] = slots[v];
        RunFile ranked = rank_videos(topic.query_id, scores, cfg_.k, run_tag);
        out.insert(out.end(), ranked.begin(), ranked.end());
    }
    return out;
}

RunFile Retriever::retrieve_vision(const std::vector<corpus::MedicalQuestion>& topics, int workers,
                                   const std::string& run_tag) const {
    if (cfg_.encoders.empty())
        throw Error(errc::config_error, "run5 needs an encoder for the query text");

    std::vector<const corpus::VideoRecord*> videos;
    std::vector<FrameMatrix> features;
    for (const auto& video : corpus_->videos) {
        if (!video.frame_features_path) continue;
        FrameMatrix m = read_frame_features(*video.frame_features_path);
        if (m.rows() == 0) continue;
        videos.push_back(&video);
        features.push_back(std::move(m));
    }

    RunFile out;
    for (const auto& topic : topics) {
        const EmbeddingVector q_emb = embedder_->embed_texts({topic.text}, cfg_.encoders[0])[0];

        std::vector<double> slots(videos.size());
        parallel_for(videos.size(), workers,
                     [&](std::size_t v) { slots[v] = text_to_vision_score(q_emb, features[v]); });

        std::map<std::string, double> scores;
        for (std::size_t v = 0; v < videos.size(); ++v) scores[videos[v]->video_id] = slots[v];
        RunFile ranked = rank_videos(topic.query_id, scores, cfg_.k, run_tag);
        out.insert(out.end(), ranked.begin(), ranked.end());
    }
    return out;
}

}  // namespace medvid::retrieval
