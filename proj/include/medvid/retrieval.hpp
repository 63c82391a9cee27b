#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/clients.hpp"
#include "medvid/corpus.hpp"

namespace medvid::retrieval {

using clients::EmbeddingVector;

// One line of a trec run file. Within a query: ranks contiguous from 1,
// scores non-increasing.
struct RunEntry {
    std::string query_id;
    std::string video_id;
    int rank = 0;
    double score = 0.0;
    std::string run_tag;
};

using RunFile = std::vector<RunEntry>;

enum class Strategy {
    run1_orig_max,
    run2_expanded,
    run3_fused,
    run4_orig_mean,
    run5_text_to_vision,
};

Strategy strategy_from_string(std::string_view name);
std::string_view to_string(Strategy strategy);

enum class Combine { max, mean };

struct StrategyConfig {
    Strategy strategy = Strategy::run1_orig_max;
    std::vector<std::string> encoders;
    int k = 10;
    int chunk_tokens = 256;
    int chunk_stride = 128;
    double rrf_k = 60.0;
    std::string run_tag;  // defaults to the strategy name
};

// u.v / (|u||v|). Raises errc::dim_mismatch / errc::zero_vector.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

// Per encoder: max over chunks of cosine(query, chunk); across encoders:
// max (run 1/2) or arithmetic mean (run 4). q_embs[i] pairs with
// chunk_embs[i]. Raises errc::no_chunks when any encoder has no chunks.
double score_query_video(std::span<const EmbeddingVector> q_embs,
                         std::span<const std::vector<EmbeddingVector>> chunk_embs,
                         Combine combine);

// max of the available similarities; absent expansion falls back to the
// original-question similarity.
double sim_final(double sim_orig, std::optional<double> sim_expanded);

// Descending score, ties by ascending video_id, ranks 1..n, at most k
// entries. Empty scores yield an empty run.
RunFile rank_videos(const std::string& query_id, const std::map<std::string, double>& scores,
                    int k, const std::string& run_tag);

// Reciprocal-rank fusion per query: score(v) = sum over runs containing v
// of 1/(rrf_k + rank). Queries present in only one run are fused from that
// run alone.
RunFile fuse_runs(const RunFile& a, const RunFile& b, double rrf_k, int k,
                  const std::string& run_tag);

// k x d frame feature matrix, row-major.
struct FrameMatrix {
    std::size_t dim = 0;
    std::vector<double> data;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};

// Max over frames of cosine(query, frame row). Raises errc::no_frames.
double text_to_vision_score(const EmbeddingVector& q_emb, const FrameMatrix& frames);

// Per-frame cosine scores, one per row, in frame order.
std::vector<double> frame_scores(const EmbeddingVector& q_emb, const FrameMatrix& frames);

// Text container: header "MEDVID-FEAT v1 <k> <d>" then k lines of d reals.
FrameMatrix read_frame_features(const std::filesystem::path& path);
void write_frame_features(const std::filesystem::path& path, const FrameMatrix& m);

// trec interchange: "query_id Q0 video_id rank score run_tag", score to 6
// decimals. write_run validates the RunEntry invariants; read_run reports
// malformed lines with their line number.
std::string write_run(const RunFile& entries);
RunFile read_run(std::string_view text);
void write_run_file(const std::filesystem::path& path, const RunFile& entries);
RunFile read_run_file(const std::filesystem::path& path);

// Sliding token windows: chunk_tokens wide, chunk_stride apart, last window
// covers the tail. chunk_tokens >= token count yields exactly one chunk.
std::vector<std::string> chunk_texts(const std::vector<std::string>& tokens, int chunk_tokens,
                                     int chunk_stride);

// Runs one retrieval strategy over a corpus. Chunk embeddings are fetched
// through the client (and so its cache); scoring is parallel per video with
// worker-count-independent output.
class Retriever {
public:
    Retriever(const corpus::Corpus& corpus, clients::EmbeddingClient& embedder, StrategyConfig cfg);

    // expansions: query_id -> expansion (entries with failed=true fall back
    // to the original question).
    RunFile retrieve(const std::vector<corpus::MedicalQuestion>& topics,
                     const std::map<std::string, clients::ExpandedAnswer>& expansions,
                     int workers) const;

private:
    RunFile retrieve_text(const std::vector<corpus::MedicalQuestion>& topics,
                          const std::map<std::string, clients::ExpandedAnswer>& expansions,
                          Strategy strategy, int workers, const std::string& run_tag) const;
    RunFile retrieve_vision(const std::vector<corpus::MedicalQuestion>& topics, int workers,
                            const std::string& run_tag) const;

    const corpus::Corpus* corpus_;
    clients::EmbeddingClient* embedder_;
    StrategyConfig cfg_;
};

}  // namespace medvid::retrieval
