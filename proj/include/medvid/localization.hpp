#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "medvid/clients.hpp"
#include "medvid/corpus.hpp"
#include "medvid/types.hpp"

namespace medvid::localization {

using clients::EmbeddingVector;

// Inclusive token index span.
struct TokenSpan {
    std::size_t start_tok = 0;
    std::size_t end_tok = 0;
};

struct LookupRow {
    std::size_t segment = 0;  // position in VideoRecord::segments
    corpus::TokenRange tokens;
    TimeSpan time;
};

// Token<->time mapping for one video. Token ranges partition 0..N-1 in
// order; overlap between cues is resolved by keeping each token on its own
// segment's time range.
struct LookupTable {
    std::vector<LookupRow> rows;

    std::size_t token_count() const { return rows.empty() ? 0 : rows.back().tokens.last + 1; }
};

enum class Modality { visual, textual };

struct SpanPrediction {
    TimeSpan span;
    double confidence = 0.0;  // in [0,1]
    Modality modality = Modality::textual;
};

// Start/end score sequences over n positions (frame or token granularity).
struct ScoreSequence {
    std::vector<double> start_scores;
    std::vector<double> end_scores;
};

// |a n b| / |a u b| on the real line; disjoint spans score 0.
double temporal_iou(TimeSpan a, TimeSpan b);

// Rows from transcript_text offsets plus the segment times. Raises
// errc::empty_transcript on a segment-less video.
LookupTable build_lookup(const corpus::VideoRecord& video);

// One row per frame, uniformly tiling [0, duration]. Lets frame-level score
// sequences decode through the same span machinery as tokens.
LookupTable frame_time_table(std::size_t frames, double duration_s);

// token->time: [min start, max end] over the covering rows.
TimeSpan token_span_to_time(const LookupTable& table, TokenSpan s);

// time->token: [first token, last token] over rows whose time range
// overlaps s. Raises errc::no_coverage when nothing overlaps.
TokenSpan time_span_to_tokens(const LookupTable& table, TimeSpan s);

struct DecodedSpan {
    TokenSpan tokens;
    double confidence = 0.0;
};

// Argmax of start[i] + end[j] over i <= j; ties take smallest i then
// smallest j. Confidence is the softmax mass of the winning pair over all
// valid pairs.
DecodedSpan decode_span(const ScoreSequence& s);

// decode_span mapped through the table into time coordinates.
SpanPrediction predict_span_from_scores(const ScoreSequence& s, const LookupTable& table,
                                        Modality modality = Modality::textual);

// Desk-scale textual localizer: per-segment cosine scores, moving-average
// smoothing (odd window, edge-truncated), threshold tau * max, answer = the
// contiguous above-threshold run with the highest total score (earliest on
// ties; if nothing clears the threshold, the single best segment).
// Confidence = mean smoothed score in the run, clamped to [0,1].
SpanPrediction segment_relevance_localizer(const EmbeddingVector& q_emb,
                                           std::span<const EmbeddingVector> segment_embs,
                                           std::span<const TimeSpan> segment_times, int window,
                                           double tau);

enum class TransferDecision { none, visual_teaches_textual, textual_teaches_visual };

// Agreement (IoU >= theta) short-circuits to none; otherwise the strictly
// higher-confidence predictor teaches. Equal confidence -> none.
TransferDecision one_way_gate(const SpanPrediction& vis, const SpanPrediction& txt, double theta);

// Teacher target expressed in the student modality's coordinates: a visual
// teacher yields a token span, a textual teacher a segment-snapped time span.
using TransferTarget = std::variant<TokenSpan, TimeSpan>;
TransferTarget transfer_targets(const SpanPrediction& teacher, const LookupTable& table);

// Exact sum of the four non-negative terms; gated-off transfer terms are 0.
double total_loss(double l_visual, double l_textual, double l_transfer_visual,
                  double l_transfer_textual);

struct LocalizeConfig {
    double theta = 0.5;
    int window = 3;
    double tau = 0.8;
    std::string encoder;  // model id for question/segment embeddings
};

// Inference-time composition: textual prediction always, visual prediction
// when frame features exist. One modality -> returned unchanged; agreement
// (IoU >= theta, non-empty overlap) -> intersection span with the mean
// confidence; disagreement -> the gate teacher's span (tie falls back to
// the textual prediction).
SpanPrediction localize(const corpus::VideoRecord& video, const corpus::MedicalQuestion& question,
                        const EmbeddingVector& q_emb, clients::EmbeddingClient& embedder,
                        const LocalizeConfig& cfg);

struct LocalizationEntry {
    std::string query_id;
    std::string video_id;
    TimeSpan span;
    double confidence = 0.0;
};

// Lines "query_id video_id start_s end_s confidence", seconds to 3
// decimals, confidence to 6.
std::string write_localization(const std::vector<LocalizationEntry>& entries);
std::vector<LocalizationEntry> read_localization(std::string_view text);

}  // namespace medvid::localization
