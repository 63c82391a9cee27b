#include "medvid/errors.hpp"

namespace medvid {

const char* errc_name(errc code) {
    switch (code) {
        case errc::config_error: return "ConfigError";
        case errc::usage_error: return "UsageError";
        case errc::io_error: return "IoError";
        case errc::parse_error: return "ParseError";
        case errc::malformed_cue: return "MalformedCue";
        case errc::missing_vtt_header: return "MissingVttHeader";
        case errc::empty_transcript: return "EmptyTranscript";
        case errc::duplicate_judgment: return "DuplicateJudgment";
        case errc::empty_text: return "EmptyText";
        case errc::inconsistent_dim: return "InconsistentDim";
        case errc::zero_vector: return "ZeroVector";
        case errc::dim_mismatch: return "DimMismatch";
        case errc::no_chunks: return "NoChunks";
        case errc::no_frames: return "NoFrames";
        case errc::token_out_of_range: return "TokenOutOfRange";
        case errc::no_coverage: return "NoCoverage";
        case errc::empty_sequence: return "EmptySequence";
        case errc::no_segments: return "NoSegments";
        case errc::negative_loss: return "NegativeLoss";
        case errc::nothing_to_summarize: return "NothingToSummarize";
        case errc::unparseable_response: return "UnparseableResponse";
        case errc::no_valid_steps: return "NoValidSteps";
        case errc::disjoint_evaluation: return "DisjointEvaluation";
        case errc::no_relevant: return "NoRelevant";
        case errc::service_unavailable: return "ServiceUnavailable";
        case errc::expansion_failed: return "ExpansionFailed";
        case errc::stub_miss: return "StubMiss";
    }
    return "Error";
}

int exit_code_for(errc code) {
    switch (code) {
        case errc::config_error:
        case errc::usage_error:
            return 1;
        case errc::service_unavailable:
        case errc::expansion_failed:
        case errc::stub_miss:
            return 3;
        default:
            return 2;
    }
}

}  // namespace medvid
