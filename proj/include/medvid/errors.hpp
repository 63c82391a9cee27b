#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace medvid {

// Every failure the toolkit can raise. Codes map onto process exit
// categories: config/usage -> 1, data/parse -> 2, service -> 3.
enum class errc {
    // config / usage
    config_error,
    usage_error,
    // data / parse
    io_error,
    parse_error,
    malformed_cue,
    missing_vtt_header,
    empty_transcript,
    duplicate_judgment,
    empty_text,
    inconsistent_dim,
    zero_vector,
    dim_mismatch,
    no_chunks,
    no_frames,
    token_out_of_range,
    no_coverage,
    empty_sequence,
    no_segments,
    negative_loss,
    nothing_to_summarize,
    unparseable_response,
    no_valid_steps,
    disjoint_evaluation,
    no_relevant,
    // service
    service_unavailable,
    expansion_failed,
    stub_miss,
};

const char* errc_name(errc code);

// 1 = usage/config, 2 = data, 3 = service.
int exit_code_for(errc code);

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

// Batch embedding failure; carries the indices that never succeeded.
class ServiceUnavailable : public Error {
public:
    ServiceUnavailable(std::vector<std::size_t> indices, const std::string& message)
        : Error(errc::service_unavailable, message), failed_indices(std::move(indices)) {}

    std::vector<std::size_t> failed_indices;
};

}  // namespace medvid
