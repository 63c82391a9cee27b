#include "medvid/corpus.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "medvid/errors.hpp"
#include "medvid/text.hpp"

namespace medvid::corpus {

using nlohmann::json;

namespace {

constexpr std::string_view kBom = "\xEF\xBB\xBF";

std::string_view strip_bom(std::string_view raw) {
    if (raw.substr(0, kBom.size()) == kBom) raw.remove_prefix(kBom.size());
    return raw;
}

// Splits into lines; accepts \n, \r\n and bare \r terminators.
std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::string current;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            lines.push_back(std::move(current));
            current.clear();
        } else if (c == '\r') {
            lines.push_back(std::move(current));
            current.clear();
            if (i + 1 < text.size() && text[i + 1] == '\n') ++i;
        } else {
            current.push_back(c);
        }
    }
    lines.push_back(std::move(current));
    return lines;
}

// "<start> --> <end> [settings]"; settings after the end stamp are ignored.
void parse_cue_timing(const std::string& line, std::size_t line_no, double& start, double& end) {
    const auto arrow = line.find("-->");
    if (arrow == std::string::npos)
        throw Error(errc::malformed_cue, "line " + std::to_string(line_no) + ": missing '-->'");
    const std::string lhs = trim(line.substr(0, arrow));
    std::string rhs = trim(line.substr(arrow + 3));
    if (auto sp = rhs.find_first_of(" \t"); sp != std::string::npos) rhs = rhs.substr(0, sp);

    if (!parse_clock(lhs, start) || !parse_clock(rhs, end))
        throw Error(errc::malformed_cue,
                    "line " + std::to_string(line_no) + ": malformed timestamp in '" + line + "'");
    if (start >= end)
        throw Error(errc::malformed_cue, "line " + std::to_string(line_no) + ": start " +
                                             format_seconds_trim(start) + " >= end " +
                                             format_seconds_trim(end));
}

bool is_all_digits(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isdigit(c) != 0;
    });
}

std::vector<TranscriptSegment> parse_srt(std::string_view raw) {
    const auto lines = split_lines(raw);
    std::vector<TranscriptSegment> cues;
    std::size_t i = 0;
    while (i < lines.size()) {
        if (trim(lines[i]).empty()) {
            ++i;
            continue;
        }
        // block starts here: optional numeric index, then the timing line
        std::size_t timing = i;
        if (is_all_digits(trim(lines[i]))) {
            if (i + 1 >= lines.size() || trim(lines[i + 1]).empty())
                throw Error(errc::malformed_cue,
                            "line " + std::to_string(i + 1) + ": cue index without timing line");
            timing = i + 1;
        }
        TranscriptSegment seg;
        parse_cue_timing(trim(lines[timing]), timing + 1, seg.start_s, seg.end_s);

        std::vector<std::string> payload;
        std::size_t j = timing + 1;
        for (; j < lines.size(); ++j) {
            const std::string t = trim(lines[j]);
            if (t.empty()) break;
            payload.push_back(t);
        }
        std::string text;
        for (std::size_t p = 0; p < payload.size(); ++p) {
            if (p) text += ' ';
            text += payload[p];
        }
        seg.text = std::move(text);
        if (!seg.text.empty()) cues.push_back(std::move(seg));
        i = j;
    }
    return cues;
}

void skip_block(const std::vector<std::string>& lines, std::size_t& i) {
    while (i < lines.size() && !trim(lines[i]).empty()) ++i;
}

std::vector<TranscriptSegment> parse_vtt(std::string_view raw) {
    const auto lines = split_lines(raw);
    if (lines.empty() || trim(lines[0]).substr(0, 6) != "WEBVTT")
        throw Error(errc::missing_vtt_header, "stream does not start with WEBVTT");

    std::size_t i = 0;
    skip_block(lines, i);  // header block (WEBVTT line plus description)

    std::vector<TranscriptSegment> cues;
    while (i < lines.size()) {
        std::string line = trim(lines[i]);
        if (line.empty()) {
            ++i;
            continue;
        }
        if (line.rfind("NOTE", 0) == 0 || line.rfind("STYLE", 0) == 0 ||
            line.rfind("REGION", 0) == 0) {
            skip_block(lines, i);
            continue;
        }
        if (line.find("-->") == std::string::npos) {
            // cue identifier; the timing line must follow
            if (i + 1 >= lines.size() || trim(lines[i + 1]).find("-->") == std::string::npos)
                throw Error(errc::malformed_cue,
                            "line " + std::to_string(i + 1) + ": expected cue timing after '" +
                                line + "'");
            ++i;
            line = trim(lines[i]);
        }
        TranscriptSegment seg;
        parse_cue_timing(line, i + 1, seg.start_s, seg.end_s);

        std::vector<std::string> payload;
        std::size_t j = i + 1;
        for (; j < lines.size(); ++j) {
            const std::string t = trim(lines[j]);
            if (t.empty()) break;
            payload.push_back(t);
        }
        std::string text;
        for (std::size_t p = 0; p < payload.size(); ++p) {
            if (p) text += ' ';
            text += payload[p];
        }
        seg.text = std::move(text);
        if (!seg.text.empty()) cues.push_back(std::move(seg));
        i = j;
    }
    return cues;
}

std::vector<TranscriptSegment> parse_yt_json(std::string_view raw) {
    json doc;
    try {
        doc = json::parse(raw);
    } catch (const json::exception& e) {
        throw Error(errc::parse_error, std::string("yt-json: ") + e.what());
    }
    if (!doc.is_array()) throw Error(errc::parse_error, "yt-json root is not an array");

    std::vector<TranscriptSegment> cues;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("text") || !entry.contains("start") ||
            !entry.contains("duration") || !entry["text"].is_string() ||
            !entry["start"].is_number() || !entry["duration"].is_number())
            throw Error(errc::parse_error,
                        "yt-json entry " + std::to_string(i) + ": expected text/start/duration");
        TranscriptSegment seg;
        seg.start_s = entry["start"].get<double>();
        seg.end_s = seg.start_s + entry["duration"].get<double>();
        seg.text = trim(entry["text"].get<std::string>());
        if (seg.start_s < 0.0 || seg.start_s >= seg.end_s)
            throw Error(errc::malformed_cue,
                        "yt-json entry " + std::to_string(i) + ": invalid start/duration");
        if (!seg.text.empty()) cues.push_back(std::move(seg));
    }
    return cues;
}

std::string format_timestamp(double seconds, char ms_sep) {
    const auto total_ms = static_cast<long long>(std::llround(seconds * 1000.0));
    const long long ms = total_ms % 1000;
    const long long total_s = total_ms / 1000;
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%02lld:%02lld:%02lld%c%03lld", total_s / 3600,
                  (total_s / 60) % 60, total_s % 60, ms_sep, ms);
    return buf;
}

}  // namespace

TranscriptFormat transcript_format_from_string(std::string_view name) {
    if (name == "srt") return TranscriptFormat::srt;
    if (name == "vtt") return TranscriptFormat::vtt;
    if (name == "yt-json") return TranscriptFormat::yt_json;
    throw Error(errc::config_error, "unknown transcript format '" + std::string(name) + "'");
}

std::string_view to_string(TranscriptFormat format) {
    switch (format) {
        case TranscriptFormat::srt: return "srt";
        case TranscriptFormat::vtt: return "vtt";
        case TranscriptFormat::yt_json: return "yt-json";
    }
    return "?";
}

std::vector<TranscriptSegment> parse_transcript(std::string_view raw, TranscriptFormat format) {
    raw = strip_bom(raw);
    if (trim(raw).empty()) return {};

    std::vector<TranscriptSegment> cues;
    switch (format) {
        case TranscriptFormat::srt: cues = parse_srt(raw); break;
        case TranscriptFormat::vtt: cues = parse_vtt(raw); break;
        case TranscriptFormat::yt_json: cues = parse_yt_json(raw); break;
    }

    std::stable_sort(cues.begin(), cues.end(),
                     [](const TranscriptSegment& a, const TranscriptSegment& b) {
                         return a.start_s < b.start_s;
                     });
    for (std::size_t i = 0; i < cues.size(); ++i) cues[i].index = static_cast<int>(i + 1);
    return cues;
}

std::string to_canonical_srt(const std::vector<TranscriptSegment>& segments) {
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& seg = segments[i];
        out += std::to_string(i + 1);
        out += '\n';
        out += format_timestamp(seg.start_s, ',');
        out += " --> ";
        out += format_timestamp(seg.end_s, ',');
        out += '\n';
        out += seg.text;
        out += "\n\n";
    }
    return out;
}

std::string to_canonical_vtt(const std::vector<TranscriptSegment>& segments) {
    std::string out = "WEBVTT\n\n";
    for (const auto& seg : segments) {
        out += format_timestamp(seg.start_s, '.');
        out += " --> ";
        out += format_timestamp(seg.end_s, '.');
        out += '\n';
        out += seg.text;
        out += "\n\n";
    }
    return out;
}

TranscriptText transcript_text(const VideoRecord& video) {
    if (video.segments.empty())
        throw Error(errc::empty_transcript, "video '" + video.video_id + "' has no segments");

    TranscriptText result;
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < video.segments.size(); ++s) {
        const auto& seg = video.segments[s];
        if (s) result.full_text += ' ';
        result.full_text += seg.text;

        auto seg_tokens = tokenize(seg.text);
        if (seg_tokens.empty())
            throw Error(errc::empty_text, "video '" + video.video_id + "' segment " +
                                              std::to_string(s) + " has no tokens");
        SegmentTokens entry;
        entry.segment = s;
        entry.tokens = {cursor, cursor + seg_tokens.size() - 1};
        cursor += seg_tokens.size();
        result.offsets.push_back(entry);
        for (auto& t : seg_tokens) result.tokens.push_back(std::move(t));
    }
    return result;
}

std::vector<MedicalQuestion> load_topics(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(errc::parse_error, path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw Error(errc::parse_error, path.string() + ": root is not an array");

    std::vector<MedicalQuestion> topics;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("qid") || !entry.contains("question"))
            throw Error(errc::parse_error,
                        path.string() + ": entry " + std::to_string(i) + " missing qid/question");
        MedicalQuestion q{entry["qid"].get<std::string>(), entry["question"].get<std::string>()};
        if (trim(q.text).empty())
            throw Error(errc::parse_error,
                        path.string() + ": entry " + std::to_string(i) + " has empty question");
        if (!seen.insert(q.query_id).second)
            throw Error(errc::parse_error, path.string() + ": duplicate qid '" + q.query_id + "'");
        topics.push_back(std::move(q));
    }
    return topics;
}

std::vector<QrelEntry> load_qrels(const std::filesystem::path& path) {
    const std::string contents = read_file(path);
    std::vector<QrelEntry> qrels;
    std::set<std::pair<std::string, std::string>> seen;

    std::size_t line_no = 0;
    for (const auto& line : split_lines(contents)) {
        ++line_no;
        if (trim(line).empty()) continue;

        std::istringstream iss(line);
        std::vector<std::string> fields;
        std::string field;
        while (iss >> field) fields.push_back(field);

        if (fields.size() != 4 && fields.size() != 6)
            throw Error(errc::parse_error, path.string() + ":" + std::to_string(line_no) +
                                               ": expected 4 or 6 fields, got " +
                                               std::to_string(fields.size()));
        QrelEntry entry;
        entry.query_id = fields[0];
        entry.video_id = fields[2];
        int relevance = 0;
        auto [p, ec] = std::from_chars(fields[3].data(), fields[3].data() + fields[3].size(),
                                       relevance);
        if (ec != std::errc() || p != fields[3].data() + fields[3].size() || relevance < 0)
            throw Error(errc::parse_error, path.string() + ":" + std::to_string(line_no) +
                                               ": bad relevance '" + fields[3] + "'");
        entry.relevance = relevance;
        if (fields.size() == 6) {
            TimeSpan span;
            try {
                span.start_s = std::stod(fields[4]);
                span.end_s = std::stod(fields[5]);
            } catch (const std::exception&) {
                throw Error(errc::parse_error,
                            path.string() + ":" + std::to_string(line_no) + ": bad gold span");
            }
            if (span.start_s < 0.0 || span.start_s >= span.end_s)
                throw Error(errc::parse_error,
                            path.string() + ":" + std::to_string(line_no) + ": invalid gold span");
            entry.gold_span = span;
        }
        if (!seen.insert({entry.query_id, entry.video_id}).second)
            throw Error(errc::duplicate_judgment, path.string() + ":" + std::to_string(line_no) +
                                                      ": duplicate (" + entry.query_id + ", " +
                                                      entry.video_id + ")");
        qrels.push_back(std::move(entry));
    }
    return qrels;
}

std::vector<GoldStepSet> load_gold_steps(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(errc::parse_error, path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw Error(errc::parse_error, path.string() + ": root is not an array");

    std::vector<GoldStepSet> sets;
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("qid") || !entry.contains("vid") ||
            !entry.contains("steps") || !entry["steps"].is_array())
            throw Error(errc::parse_error,
                        path.string() + ": entry " + std::to_string(i) + " missing qid/vid/steps");
        GoldStepSet set;
        set.query_id = entry["qid"].get<std::string>();
        set.video_id = entry["vid"].get<std::string>();
        for (const auto& step : entry["steps"]) {
            if (!step.is_object() || !step.contains("start") || !step.contains("end") ||
                !step.contains("step"))
                throw Error(errc::parse_error, path.string() + ": entry " + std::to_string(i) +
                                                   " has a step missing start/end/step");
            StepCaption sc{step["start"].get<double>(), step["end"].get<double>(),
                           step["step"].get<std::string>()};
            if (sc.start_s < 0.0 || sc.start_s >= sc.end_s || trim(sc.text).empty())
                throw Error(errc::parse_error, path.string() + ": entry " + std::to_string(i) +
                                                   " has an invalid step");
            set.steps.push_back(std::move(sc));
        }
        std::stable_sort(set.steps.begin(), set.steps.end(),
                         [](const StepCaption& a, const StepCaption& b) {
                             return a.start_s < b.start_s;
                         });
        if (!seen.insert({set.query_id, set.video_id}).second)
            throw Error(errc::parse_error, path.string() + ": duplicate (" + set.query_id + ", " +
                                               set.video_id + ")");
        sets.push_back(std::move(set));
    }
    return sets;
}

const VideoRecord* Corpus::find(std::string_view video_id) const {
    for (const auto& v : videos)
        if (v.video_id == video_id) return &v;
    return nullptr;
}

Corpus load_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "videos.json";
    json doc;
    try {
        doc = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw Error(errc::parse_error, manifest_path.string() + ": " + e.what());
    }
    if (!doc.is_array())
        throw Error(errc::parse_error, manifest_path.string() + ": root is not an array");

    Corpus corpus;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("vid") || !entry.contains("transcript") ||
            !entry.contains("format"))
            throw Error(errc::parse_error, manifest_path.string() + ": entry " +
                                               std::to_string(i) + " missing vid/transcript/format");
        VideoRecord video;
        video.video_id = entry["vid"].get<std::string>();
        if (!seen.insert(video.video_id).second)
            throw Error(errc::parse_error,
                        manifest_path.string() + ": duplicate vid '" + video.video_id + "'");

        const auto format = transcript_format_from_string(entry["format"].get<std::string>());
        const auto transcript_path = dir / entry["transcript"].get<std::string>();
        video.segments = parse_transcript(read_file(transcript_path), format);

        double max_end = 0.0;
        for (const auto& seg : video.segments) max_end = std::max(max_end, seg.end_s);
        video.duration_s = entry.contains("duration") ? entry["duration"].get<double>() : max_end;
        if (video.duration_s + 1e-6 < max_end)
            throw Error(errc::parse_error, manifest_path.string() + ": '" + video.video_id +
                                               "' duration shorter than its last cue");
        if (entry.contains("frame_features"))
            video.frame_features_path = dir / entry["frame_features"].get<std::string>();
        corpus.videos.push_back(std::move(video));
    }
    return corpus;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::io_error, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.parent_path() /
                     (path.filename().string() + ".tmp." + std::to_string(counter.fetch_add(1)) +
                      "." + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(errc::io_error, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error(errc::io_error, "short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace medvid::corpus
