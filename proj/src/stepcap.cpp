#include "medvid/stepcap.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <tuple>

#include "json.hpp"
#include "medvid/errors.hpp"
#include "medvid/text.hpp"

namespace medvid::stepcap {

using nlohmann::json;

std::vector<SourcedCaption> merge_captions(const std::vector<SourcedCaption>& generated,
                                           const std::vector<SourcedCaption>& subtitles) {
    std::vector<SourcedCaption> merged;
    merged.reserve(generated.size() + subtitles.size());
    merged.insert(merged.end(), generated.begin(), generated.end());
    merged.insert(merged.end(), subtitles.begin(), subtitles.end());

    std::stable_sort(merged.begin(), merged.end(), [](const SourcedCaption& a,
                                                      const SourcedCaption& b) {
        return std::tuple(a.start_s, a.end_s, a.source != CaptionSource::generated) <
               std::tuple(b.start_s, b.end_s, b.source != CaptionSource::generated);
    });

    std::vector<SourcedCaption> out;
    std::set<std::tuple<double, double, std::string>> seen;
    for (auto& caption : merged)
        if (seen.insert({caption.start_s, caption.end_s, caption.text}).second)
            out.push_back(std::move(caption));
    return out;
}

StepPrompt build_step_prompt(const corpus::MedicalQuestion& question,
                             const std::vector<SourcedCaption>& merged, double duration_s) {
    if (merged.empty())
        throw Error(errc::nothing_to_summarize, "no captions for query '" + question.query_id +
                                                    "'");

    std::string user = "Question: " + question.text + "\nVideo duration: " +
                       format_seconds_trim(duration_s) + " seconds\nCaptions:\n";
    for (const auto& caption : merged) {
        user += '[';
        user += format_seconds_trim(caption.start_s);
        user += "–";
        user += format_seconds_trim(caption.end_s);
        user += "] (";
        user += caption.source == CaptionSource::generated ? "generated" : "subtitle";
        user += ") ";
        user += caption.text;
        user += '\n';
    }
    user += kStepPromptFooter;
    return {std::string(kStepSystemPrompt), std::move(user)};
}

namespace {

// number, numeric string, or clock string -> seconds
bool json_time(const json& v, double& out) {
    if (v.is_number()) {
        out = v.get<double>();
        return true;
    }
    if (v.is_string()) {
        const std::string s = trim(v.get<std::string>());
        if (parse_clock(s, out)) return true;
        try {
            std::size_t used = 0;
            out = std::stod(s, &used);
            return used == s.size();
        } catch (const std::exception&) {
            return false;
        }
    }
    return false;
}

std::vector<StepCaption> steps_from_array(const json& arr) {
    std::vector<StepCaption> steps;
    for (const auto& entry : arr) {
        if (!entry.is_object() || !entry.contains("start") || !entry.contains("end") ||
            !entry.contains("step") || !entry["step"].is_string())
            continue;  // per-entry failures are skipped, valid entries kept
        StepCaption step;
        if (!json_time(entry["start"], step.start_s) || !json_time(entry["end"], step.end_s))
            continue;
        step.text = trim(entry["step"].get<std::string>());
        if (step.text.empty()) continue;
        steps.push_back(std::move(step));
    }
    return steps;
}

// first parseable JSON array anywhere in the response
std::optional<json> find_json_array(std::string_view raw) {
    for (std::size_t pos = raw.find('['); pos != std::string_view::npos;
         pos = raw.find('[', pos + 1)) {
        int depth = 0;
        for (std::size_t i = pos; i < raw.size(); ++i) {
            if (raw[i] == '[') ++depth;
            if (raw[i] == ']' && --depth == 0) {
                try {
                    json doc = json::parse(raw.substr(pos, i - pos + 1));
                    if (doc.is_array()) return doc;
                } catch (const json::exception&) {
                }
                break;
            }
        }
    }
    return std::nullopt;
}

std::vector<StepCaption> steps_from_lines(std::string_view raw) {
    static const std::regex line_re(
        R"(^\s*(\d{1,2}:\d{1,2}(?::\d{1,2})?(?:[.,]\d{1,3})?)\s*-\s*(\d{1,2}:\d{1,2}(?::\d{1,2})?(?:[.,]\d{1,3})?)\s*:\s*(.*\S)\s*$)");

    std::vector<StepCaption> steps;
    std::size_t begin = 0;
    while (begin <= raw.size()) {
        std::size_t end = raw.find('\n', begin);
        if (end == std::string_view::npos) end = raw.size();
        const std::string line(raw.substr(begin, end - begin));
        begin = end + 1;

        std::smatch m;
        if (!std::regex_match(line, m, line_re)) continue;
        StepCaption step;
        if (!parse_clock(m[1].str(), step.start_s) || !parse_clock(m[2].str(), step.end_s))
            continue;
        step.text = m[3].str();
        steps.push_back(std::move(step));
    }
    return steps;
}

}  // namespace

std::vector<StepCaption> parse_step_response(std::string_view raw) {
    if (auto arr = find_json_array(raw)) {
        auto steps = steps_from_array(*arr);
        if (!steps.empty()) return steps;
    }
    auto steps = steps_from_lines(raw);
    if (!steps.empty()) return steps;

    std::string sample(raw.substr(0, 200));
    throw Error(errc::unparseable_response, "no steps found in response: '" + sample + "'");
}

std::vector<StepCaption> validate_steps(std::vector<StepCaption> steps, double duration_s) {
    if (duration_s <= 0.0) throw Error(errc::usage_error, "duration must be positive");

    std::stable_sort(steps.begin(), steps.end(), [](const StepCaption& a, const StepCaption& b) {
        return a.start_s < b.start_s;
    });

    std::vector<StepCaption> out;
    double previous_end = 0.0;
    for (auto& step : steps) {
        step.start_s = std::max(step.start_s, 0.0);
        step.end_s = std::min(step.end_s, duration_s);
        if (!out.empty()) step.start_s = std::max(step.start_s, previous_end);
        step.text = trim(step.text);
        if (step.start_s >= step.end_s || step.text.empty()) continue;
        previous_end = step.end_s;
        out.push_back(std::move(step));
    }
    if (out.empty()) throw Error(errc::no_valid_steps, "every step was dropped by validation");
    return out;
}

std::vector<StepCaption> run_qfisc(const corpus::VideoRecord& video,
                                   const corpus::MedicalQuestion& question,
                                   const std::vector<SourcedCaption>& generated,
                                   clients::ChatClient& chat, const std::string& chat_model) {
    const auto merged = merge_captions(generated, subtitles_as_captions(video));
    const StepPrompt prompt = build_step_prompt(question, merged, video.duration_s);

    const std::string response = chat.complete_chat(prompt.system, prompt.user, chat_model);
    std::vector<StepCaption> steps;
    try {
        steps = parse_step_response(response);
    } catch (const Error& e) {
        if (e.code() != errc::unparseable_response) throw;
        // one re-prompt with a format reminder, then give up on this pair
        const std::string reminded =
            prompt.user + "\nReminder: respond with only a JSON array of {start, end, step} "
                          "objects.";
        steps = parse_step_response(chat.complete_chat(prompt.system, reminded, chat_model));
    }
    return validate_steps(std::move(steps), video.duration_s);
}

std::vector<SourcedCaption> subtitles_as_captions(const corpus::VideoRecord& video) {
    std::vector<SourcedCaption> captions;
    captions.reserve(video.segments.size());
    for (const auto& seg : video.segments)
        captions.push_back({seg.start_s, seg.end_s, seg.text, CaptionSource::subtitle});
    return captions;
}

std::vector<SourcedCaption> load_generated_captions(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(corpus::read_file(path));
    } catch (const json::exception& e) {
        throw Error(errc::parse_error, path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw Error(errc::parse_error, path.string() + ": root is not an array");

    std::vector<SourcedCaption> captions;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& entry = doc[i];
        if (!entry.is_object() || !entry.contains("start") || !entry.contains("end") ||
            !entry.contains("text"))
            throw Error(errc::parse_error,
                        path.string() + ": entry " + std::to_string(i) + " missing start/end/text");
        captions.push_back({entry["start"].get<double>(), entry["end"].get<double>(),
                            entry["text"].get<std::string>(), CaptionSource::generated});
    }
    std::stable_sort(captions.begin(), captions.end(),
                     [](const SourcedCaption& a, const SourcedCaption& b) {
                         return a.start_s < b.start_s;
                     });
    return captions;
}

std::string write_step_sets(const std::vector<corpus::GoldStepSet>& sets) {
    json out = json::array();
    for (const auto& set : sets) {
        json steps = json::array();
        for (const auto& step : set.steps)
            steps.push_back({{"start", step.start_s}, {"end", step.end_s}, {"step", step.text}});
        out.push_back({{"qid", set.query_id}, {"vid", set.video_id}, {"steps", steps}});
    }
    return out.dump(2) + "\n";
}

}  // namespace medvid::stepcap
