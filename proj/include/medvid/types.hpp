#pragma once

#include <string>

namespace medvid {

// Closed interval on the video timeline, seconds. start_s < end_s.
struct TimeSpan {
    double start_s = 0.0;
    double end_s = 0.0;

    double length() const { return end_s - start_s; }
};

// One instructional step: a time range plus its caption.
struct StepCaption {
    double start_s = 0.0;
    double end_s = 0.0;
    std::string text;
};

}  // namespace medvid
