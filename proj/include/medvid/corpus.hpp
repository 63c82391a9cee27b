#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/types.hpp"

namespace medvid::corpus {

// One subtitle cue. `index` is the 1-based cue ordinal after sorting;
// structural references elsewhere (token offsets, lookup rows) use 0-based
// positions into the segments vector instead.
struct TranscriptSegment {
    int index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
};

struct VideoRecord {
    std::string video_id;
    double duration_s = 0.0;
    std::vector<TranscriptSegment> segments;
    std::optional<std::filesystem::path> frame_features_path;
};

struct MedicalQuestion {
    std::string query_id;
    std::string text;
};

struct QrelEntry {
    std::string query_id;
    std::string video_id;
    int relevance = 0;
    std::optional<TimeSpan> gold_span;
};

struct GoldStepSet {
    std::string query_id;
    std::string video_id;
    std::vector<StepCaption> steps;
};

enum class TranscriptFormat { srt, vtt, yt_json };

TranscriptFormat transcript_format_from_string(std::string_view name);
std::string_view to_string(TranscriptFormat format);

// Parse subtitle bytes in the given format (no sniffing). A UTF-8 BOM is
// tolerated. Cues are stable-sorted by start time and re-numbered 1..n;
// cues whose text is empty after trimming are dropped. Empty input yields
// an empty list. Malformed timestamps or start >= end raise
// errc::malformed_cue; a VTT stream without the WEBVTT header raises
// errc::missing_vtt_header; a yt-json stream that is not an array raises
// errc::parse_error.
std::vector<TranscriptSegment> parse_transcript(std::string_view raw, TranscriptFormat format);

// Canonical serializations: millisecond timestamps, 1..n numbering, one
// text line per cue, trailing blank line. Reparsing a canonical stream
// yields identical segments (times to 1 ms).
std::string to_canonical_srt(const std::vector<TranscriptSegment>& segments);
std::string to_canonical_vtt(const std::vector<TranscriptSegment>& segments);

// Inclusive token index range.
struct TokenRange {
    std::size_t first = 0;
    std::size_t last = 0;
};

struct SegmentTokens {
    std::size_t segment = 0;  // position in VideoRecord::segments
    TokenRange tokens;
};

struct TranscriptText {
    std::string full_text;            // segment texts joined by single spaces
    std::vector<std::string> tokens;  // tokenize(full_text)
    std::vector<SegmentTokens> offsets;
};

// Token-offset-aware transcript text. The offsets partition 0..N-1 in
// order, one entry per segment. Raises errc::empty_transcript when the
// video has no segments.
TranscriptText transcript_text(const VideoRecord& video);

// topics: JSON array of {"qid","question"}, file order preserved.
std::vector<MedicalQuestion> load_topics(const std::filesystem::path& path);

// qrels: whitespace-separated lines "query_id 0 video_id relevance
// [start_s end_s]". Duplicate (query_id, video_id) raises
// errc::duplicate_judgment; unparseable lines carry their line number.
std::vector<QrelEntry> load_qrels(const std::filesystem::path& path);

// gold steps: JSON array of {"qid","vid","steps":[{"start","end","step"}]}.
std::vector<GoldStepSet> load_gold_steps(const std::filesystem::path& path);

// Immutable after load; shareable across workers.
struct Corpus {
    std::vector<VideoRecord> videos;

    const VideoRecord* find(std::string_view video_id) const;
};

// Loads a corpus directory via its videos.json manifest: array of
// {"vid","transcript","format"[,"duration"][,"frame_features"]} with paths
// relative to the directory. Missing duration falls back to the last cue
// end.
Corpus load_corpus(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace medvid::corpus
