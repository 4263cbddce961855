#include "sadet/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace sadet {

std::vector<double> frame_scores(std::span<const SpanScore> clip_scores, int video_len)
{
    if (video_len < 0) throw MetricError("frame_scores: negative video length");
    std::vector<double> out(static_cast<std::size_t>(video_len), 0.0);
    std::vector<bool> covered(out.size(), false);
    for (const auto& c : clip_scores) {
        if (c.start < 0 || c.end > video_len || c.start >= c.end) {
            throw MetricError("frame_scores: span [" + std::to_string(c.start) + ", " + std::to_string(c.end) +
                              ") outside video of " + std::to_string(video_len) + " frames");
        }
        for (int t = c.start; t < c.end; ++t) {
            const auto i = static_cast<std::size_t>(t);
            out[i] = covered[i] ? std::max(out[i], c.score) : c.score;
            covered[i] = true;
        }
    }
    return out;
}

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, std::size_t& positives)
{
    if (scores.size() != labels.size()) throw MetricError("score and label counts differ");
    positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw MetricError("labels must be binary");
        positives += static_cast<std::size_t>(l);
    }
}

std::vector<std::size_t> order_by_score_desc(std::span<const double> scores)
{
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

} // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels)
{
    std::size_t pos = 0;
    check_inputs(scores, labels, pos);
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw MetricError("roc_auc: both classes must be present");

    // Average ranks (1-based, ascending) over tie groups.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) rank_sum += avg_rank;
        }
        i = j;
    }
    const double p = static_cast<double>(pos), n = static_cast<double>(neg);
    return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double average_precision(std::span<const double> scores, std::span<const int> labels)
{
    std::size_t pos = 0;
    check_inputs(scores, labels, pos);
    if (pos == 0) throw MetricError("average_precision: no positive labels");

    const auto order = order_by_score_desc(scores);
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, seen = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            tp += static_cast<std::size_t>(labels[order[j]]);
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(seen);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

} // namespace sadet
