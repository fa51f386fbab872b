#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tfbs/errors.hpp"

namespace tfbs::metrics {

namespace detail {
inline void check_inputs(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size())
        throw DataError("labels and scores differ in length (" + std::to_string(labels.size()) +
                        " vs " + std::to_string(scores.size()) + ")");
    if (labels.empty()) throw DataError("metric of an empty sample");
}

// Indices ordered by descending score; equal scores keep input order.
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}
}  // namespace detail

// Fraction of samples where (score >= threshold) equals the label.
inline double accuracy(std::span<const int> labels, std::span<const double> scores,
                       double threshold = 0.5) {
    detail::check_inputs(labels, scores);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        correct += (scores[i] >= threshold ? 1 : 0) == (labels[i] ? 1 : 0);
    return double(correct) / double(labels.size());
}

// Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie), computed
// from mid-ranks in O(n log n).
inline double roc_auc(std::span<const int> labels, std::span<const double> scores) {
    detail::check_inputs(labels, scores);
    auto order = detail::descending_order(scores);
    std::reverse(order.begin(), order.end());  // ascending
    double n_pos = 0, rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * double(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]]) {
                rank_sum += mid_rank;
                n_pos += 1;
            }
        i = j;
    }
    const double n_neg = double(labels.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("ROC-AUC needs at least one positive and one negative");
    return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

// Average precision: the mean, over positives, of the precision at the
// threshold equal to that positive's score. Tied scores form one threshold,
// so a tie group contributes its end-of-group precision.
inline double pr_auc(std::span<const int> labels, std::span<const double> scores) {
    detail::check_inputs(labels, scores);
    const auto order = detail::descending_order(scores);
    double tp = 0, seen = 0, total = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        double group_pos = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            group_pos += labels[order[j]] ? 1 : 0;
            ++j;
        }
        tp += group_pos;
        seen += double(j - i);
        total += group_pos * (tp / seen);
        i = j;
    }
    if (tp == 0) throw UndefinedMetricError("PR-AUC needs at least one positive");
    return total / tp;
}

struct EvalReport {
    double accuracy = 0;
    double pr_auc = 0;
    double roc_auc = 0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double threshold = 0.5;
};

inline EvalReport evaluate(std::span<const int> labels, std::span<const double> scores,
                           double threshold = 0.5) {
    EvalReport r;
    r.accuracy = accuracy(labels, scores, threshold);
    r.pr_auc = pr_auc(labels, scores);
    r.roc_auc = roc_auc(labels, scores);
    r.n_pos = std::size_t(std::count_if(labels.begin(), labels.end(), [](int y) { return y != 0; }));
    r.n_neg = labels.size() - r.n_pos;
    r.threshold = threshold;
    return r;
}

inline const char* kReportCsvHeader = "accuracy,pr_auc,roc_auc,n_pos,n_neg,threshold";

inline std::string csv_row(const EvalReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%zu,%zu,%g", r.accuracy, r.pr_auc, r.roc_auc,
                  r.n_pos, r.n_neg, r.threshold);
    return buf;
}

inline std::string describe(const EvalReport& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "accuracy %.4f  PR-AUC %.4f  ROC-AUC %.4f  (%zu positive, %zu negative, threshold %g)",
                  r.accuracy, r.pr_auc, r.roc_auc, r.n_pos, r.n_neg, r.threshold);
    return buf;
}

}  // namespace tfbs::metrics
