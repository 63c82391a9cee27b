#include "medvid/localization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "medvid/errors.hpp"
#include "medvid/retrieval.hpp"
#include "medvid/text.hpp"

namespace medvid::localization {

double temporal_iou(TimeSpan a, TimeSpan b) {
    const double inter = std::min(a.end_s, b.end_s) - std::max(a.start_s, b.start_s);
    if (inter <= 0.0) return 0.0;
    const double uni = a.length() + b.length() - inter;
    return inter / uni;
}

LookupTable build_lookup(const corpus::VideoRecord& video) {
    const auto text = corpus::transcript_text(video);
    LookupTable table;
    table.rows.reserve(text.offsets.size());
    for (const auto& offset : text.offsets) {
        const auto& seg = video.segments[offset.segment];
        table.rows.push_back({offset.segment, offset.tokens, {seg.start_s, seg.end_s}});
    }
    return table;
}

LookupTable frame_time_table(std::size_t frames, double duration_s) {
    if (frames == 0) throw Error(errc::no_frames, "cannot build a table over zero frames");
    if (duration_s <= 0.0) throw Error(errc::usage_error, "duration must be positive");
    LookupTable table;
    table.rows.reserve(frames);
    const double step = duration_s / static_cast<double>(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        const double start = step * static_cast<double>(i);
        const double end = i + 1 == frames ? duration_s : step * static_cast<double>(i + 1);
        table.rows.push_back({i, {i, i}, {start, end}});
    }
    return table;
}

TimeSpan token_span_to_time(const LookupTable& table, TokenSpan s) {
    if (s.start_tok > s.end_tok)
        throw Error(errc::token_out_of_range, "token span start after end");
    if (table.rows.empty() || s.end_tok >= table.token_count())
        throw Error(errc::token_out_of_range,
                    "token " + std::to_string(s.end_tok) + " outside table of " +
                        std::to_string(table.token_count()) + " tokens");

    double start = 0.0, end = 0.0;
    bool first = true;
    for (const auto& row : table.rows) {
        if (row.tokens.last < s.start_tok || row.tokens.first > s.end_tok) continue;
        if (first) {
            start = row.time.start_s;
            end = row.time.end_s;
            first = false;
        } else {
            start = std::min(start, row.time.start_s);
            end = std::max(end, row.time.end_s);
        }
    }
    return {start, end};
}

TokenSpan time_span_to_tokens(const LookupTable& table, TimeSpan s) {
    bool found = false;
    std::size_t first = 0, last = 0;
    for (const auto& row : table.rows) {
        if (row.time.start_s < s.end_s && s.start_s < row.time.end_s) {
            if (!found) {
                first = row.tokens.first;
                found = true;
            }
            last = row.tokens.last;
        }
    }
    if (!found)
        throw Error(errc::no_coverage, "time span [" + format_seconds_trim(s.start_s) + ", " +
                                           format_seconds_trim(s.end_s) +
                                           "] overlaps no lookup row");
    return {first, last};
}

DecodedSpan decode_span(const ScoreSequence& s) {
    const std::size_t n = s.start_scores.size();
    if (n == 0) throw Error(errc::empty_sequence, "no positions to decode");
    if (s.end_scores.size() != n)
        throw Error(errc::dim_mismatch, "start/end score lengths differ");

    // best pair: scan j ascending, tracking the smallest argmax start index
    std::size_t best_i = 0, best_j = 0;
    double best_val = s.start_scores[0] + s.end_scores[0];
    std::size_t max_start_idx = 0;
    double max_start = s.start_scores[0];
    for (std::size_t j = 0; j < n; ++j) {
        if (s.start_scores[j] > max_start) {
            max_start = s.start_scores[j];
            max_start_idx = j;
        }
        const double val = max_start + s.end_scores[j];
        if (j == 0 ? false : val > best_val) {
            best_val = val;
            best_i = max_start_idx;
            best_j = j;
        }
    }

    // softmax mass of the winning pair over all valid pairs, computed via
    // logsumexp over i<=j: sum_j exp(e_j) * prefixsum_i<=j exp(s_i)
    double max_s = *std::max_element(s.start_scores.begin(), s.start_scores.end());
    double max_e = *std::max_element(s.end_scores.begin(), s.end_scores.end());
    double prefix = 0.0, total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        prefix += std::exp(s.start_scores[j] - max_s);
        total += std::exp(s.end_scores[j] - max_e) * prefix;
    }
    const double lse = max_s + max_e + std::log(total);
    const double confidence = std::exp(best_val - lse);

    return {{best_i, best_j}, std::min(1.0, std::max(0.0, confidence))};
}

SpanPrediction predict_span_from_scores(const ScoreSequence& s, const LookupTable& table,
                                        Modality modality) {
    const DecodedSpan decoded = decode_span(s);
    return {token_span_to_time(table, decoded.tokens), decoded.confidence, modality};
}

SpanPrediction segment_relevance_localizer(const EmbeddingVector& q_emb,
                                           std::span<const EmbeddingVector> segment_embs,
                                           std::span<const TimeSpan> segment_times, int window,
                                           double tau) {
    const std::size_t n = segment_embs.size();
    if (n == 0) throw Error(errc::no_segments, "no segment embeddings");
    if (segment_times.size() != n)
        throw Error(errc::dim_mismatch, "segment embeddings and times differ in length");
    if (window < 1 || window % 2 == 0)
        throw Error(errc::config_error, "smoothing window must be a positive odd integer");
    if (tau <= 0.0 || tau > 1.0) throw Error(errc::config_error, "tau must be in (0, 1]");

    std::vector<double> scores(n);
    for (std::size_t i = 0; i < n; ++i) scores[i] = retrieval::cosine(q_emb, segment_embs[i]);

    // edge-truncated moving average
    std::vector<double> smoothed(n);
    const std::size_t half = static_cast<std::size_t>(window) / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double sum = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) sum += scores[k];
        smoothed[i] = sum / static_cast<double>(hi - lo + 1);
    }

    const double peak = *std::max_element(smoothed.begin(), smoothed.end());
    const double threshold = tau * peak;

    // best contiguous above-threshold run by total score, earliest on ties;
    // a negative peak can leave nothing above threshold, fall back to the
    // single best segment
    std::size_t best_first = static_cast<std::size_t>(
        std::max_element(smoothed.begin(), smoothed.end()) - smoothed.begin());
    std::size_t best_last = best_first;
    double best_total = smoothed[best_first];
    bool found = false;
    std::size_t i = 0;
    while (i < n) {
        if (smoothed[i] < threshold) {
            ++i;
            continue;
        }
        std::size_t j = i;
        double total = 0.0;
        while (j < n && smoothed[j] >= threshold) total += smoothed[j++];
        if (!found || total > best_total) {
            best_first = i;
            best_last = j - 1;
            best_total = total;
            found = true;
        }
        i = j;
    }

    double span_end = segment_times[best_first].end_s;
    double conf_sum = 0.0;
    for (std::size_t k = best_first; k <= best_last; ++k) {
        span_end = std::max(span_end, segment_times[k].end_s);
        conf_sum += smoothed[k];
    }
    const double mean = conf_sum / static_cast<double>(best_last - best_first + 1);
    return {{segment_times[best_first].start_s, span_end}, std::min(1.0, std::max(0.0, mean)),
            Modality::textual};
}

TransferDecision one_way_gate(const SpanPrediction& vis, const SpanPrediction& txt, double theta) {
    if (theta < 0.0 || theta > 1.0) throw Error(errc::config_error, "theta must be in [0, 1]");
    if (temporal_iou(vis.span, txt.span) >= theta) return TransferDecision::none;
    if (vis.confidence > txt.confidence) return TransferDecision::visual_teaches_textual;
    if (txt.confidence > vis.confidence) return TransferDecision::textual_teaches_visual;
    return TransferDecision::none;
}

TransferTarget transfer_targets(const SpanPrediction& teacher, const LookupTable& table) {
    const TokenSpan tokens = time_span_to_tokens(table, teacher.span);
    if (teacher.modality == Modality::visual) return tokens;
    // textual teacher: time target snapped to the covered rows
    return token_span_to_time(table, tokens);
}

double total_loss(double l_visual, double l_textual, double l_transfer_visual,
                  double l_transfer_textual) {
    for (double term : {l_visual, l_textual, l_transfer_visual, l_transfer_textual})
        if (!(term >= 0.0) || !std::isfinite(term))
            throw Error(errc::negative_loss, "loss terms must be finite and non-negative");
    return l_visual + l_textual + l_transfer_visual + l_transfer_textual;
}

SpanPrediction localize(const corpus::VideoRecord& video, const corpus::MedicalQuestion& question,
                        const EmbeddingVector& q_emb, clients::EmbeddingClient& embedder,
                        const LocalizeConfig& cfg) {
    (void)question;

    std::vector<std::string> seg_texts;
    std::vector<TimeSpan> seg_times;
    for (const auto& seg : video.segments) {
        seg_texts.push_back(seg.text);
        seg_times.push_back({seg.start_s, seg.end_s});
    }
    if (seg_texts.empty())
        throw Error(errc::empty_transcript, "video '" + video.video_id + "' has no segments");

    const auto seg_embs = embedder.embed_texts(seg_texts, cfg.encoder);
    const SpanPrediction txt =
        segment_relevance_localizer(q_emb, seg_embs, seg_times, cfg.window, cfg.tau);

    if (!video.frame_features_path) return txt;

    const auto frames = retrieval::read_frame_features(*video.frame_features_path);
    const auto scores = retrieval::frame_scores(q_emb, frames);
    const ScoreSequence seq{scores, scores};
    const auto table = frame_time_table(frames.rows(), video.duration_s);
    const SpanPrediction vis = predict_span_from_scores(seq, table, Modality::visual);

    if (temporal_iou(vis.span, txt.span) >= cfg.theta) {
        const TimeSpan inter{std::max(vis.span.start_s, txt.span.start_s),
                             std::min(vis.span.end_s, txt.span.end_s)};
        if (inter.start_s < inter.end_s) {
            const Modality m =
                vis.confidence > txt.confidence ? Modality::visual : Modality::textual;
            return {inter, (vis.confidence + txt.confidence) / 2.0, m};
        }
        // theta == 0 with disjoint spans: fall through to the gate
    }
    switch (one_way_gate(vis, txt, cfg.theta)) {
        case TransferDecision::visual_teaches_textual: return vis;
        case TransferDecision::textual_teaches_visual: return txt;
        case TransferDecision::none: return txt;  // tie: the textual path is always available
    }
    return txt;
}

std::string write_localization(const std::vector<LocalizationEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        out += e.query_id;
        out += ' ';
        out += e.video_id;
        out += ' ';
        out += format_fixed(e.span.start_s, 3);
        out += ' ';
        out += format_fixed(e.span.end_s, 3);
        out += ' ';
        out += format_fixed(e.confidence, 6);
        out += '\n';
    }
    return out;
}

std::vector<LocalizationEntry> read_localization(std::string_view text) {
    std::vector<LocalizationEntry> entries;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::istringstream iss(line);
        LocalizationEntry e;
        if (!(iss >> e.query_id >> e.video_id >> e.span.start_s >> e.span.end_s >> e.confidence))
            throw Error(errc::parse_error,
                        "localization line " + std::to_string(line_no) + ": expected 5 fields");
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace medvid::localization
