#pragma once

// Frame-level score assembly, ROC AUC and average precision.

#include <span>
#include <stdexcept>
#include <vector>

namespace sadet {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct SpanScore {
    int start = 0;   // first frame
    int end = 0;     // one past the last frame
    double score = 0.0;
};

/// Per-frame maximum over every clip covering the frame; uncovered frames score 0.
std::vector<double> frame_scores(std::span<const SpanScore> clip_scores, int video_len);

/// Area under the ROC curve; tied scores count one half (Mann-Whitney).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Step-interpolated average precision, sum over thresholds of (R_n - R_{n-1}) P_n.
double average_precision(std::span<const double> scores, std::span<const int> labels);

} // namespace sadet
