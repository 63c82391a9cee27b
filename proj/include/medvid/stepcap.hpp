#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "medvid/clients.hpp"
#include "medvid/corpus.hpp"
#include "medvid/types.hpp"

namespace medvid::stepcap {

enum class CaptionSource { generated, subtitle };

struct SourcedCaption {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
    CaptionSource source = CaptionSource::subtitle;
};

// The step-segmentation prompt template, versioned with the toolkit.
inline constexpr std::string_view kStepSystemPrompt =
    "You segment medical instructional videos into steps.";
inline constexpr std::string_view kStepPromptFooter =
    "Return a JSON array of {start, end, step} covering the instructional answer.";

// Union of both lists, stably sorted by (start, end, generated-first);
// exact duplicates (same start, end, text) collapse to one entry.
std::vector<SourcedCaption> merge_captions(const std::vector<SourcedCaption>& generated,
                                           const std::vector<SourcedCaption>& subtitles);

struct StepPrompt {
    std::string system;
    std::string user;
};

// Deterministic prompt: question + duration header, one caption line per
// entry as "[start–end] (source) text", then the JSON-array footer.
// Raises errc::nothing_to_summarize on an empty caption list.
StepPrompt build_step_prompt(const corpus::MedicalQuestion& question,
                             const std::vector<SourcedCaption>& merged, double duration_s);

// Primary grammar: a JSON array of {start, end, step} (numbers, numeric
// strings, or "MM:SS"/"HH:MM:SS"), found anywhere in the response. Fallback
// grammar: lines "MM:SS - MM:SS: text". Per-entry failures are skipped;
// zero parseable steps raises errc::unparseable_response carrying the text.
std::vector<StepCaption> parse_step_response(std::string_view raw);

// Sort by start, clamp to [0, duration], truncate an overlapping step's
// start to the previous end, drop steps left empty (start >= end) or with
// empty text. All dropped raises errc::no_valid_steps.
std::vector<StepCaption> validate_steps(std::vector<StepCaption> steps, double duration_s);

// merge -> prompt -> chat -> parse -> validate. One automatic re-prompt
// (with a format reminder appended) on an unparseable response; a second
// failure propagates and aborts only this (query, video) pair.
std::vector<StepCaption> run_qfisc(const corpus::VideoRecord& video,
                                   const corpus::MedicalQuestion& question,
                                   const std::vector<SourcedCaption>& generated,
                                   clients::ChatClient& chat, const std::string& chat_model);

// Subtitle cues as captions (source = subtitle).
std::vector<SourcedCaption> subtitles_as_captions(const corpus::VideoRecord& video);

// Pre-supplied generated captions: JSON array of {"start","end","text"}.
std::vector<SourcedCaption> load_generated_captions(const std::filesystem::path& path);

// Step output file, same schema as the gold steps file.
std::string write_step_sets(const std::vector<corpus::GoldStepSet>& sets);

}  // namespace medvid::stepcap
