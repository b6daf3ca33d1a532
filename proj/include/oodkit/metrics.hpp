#pragma once
// Threshold-free detection metrics and calibration error. Convention
// throughout: a score is a degree of in-distribution-ness, so low scores are
// what a detector flags as outliers. Ties are handled by grouping samples
// with exactly equal scores, which makes every implementation here agree
// with an exhaustive brute-force evaluation at distinct-threshold
// granularity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "matrix.hpp"

namespace oodkit {

enum class Origin { in_dist, out_dist };

struct ScoredSample {
    double score = 0.0;
    Origin origin = Origin::in_dist;
};

namespace detail {

struct ScoreGroup {
    double score = 0.0;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
};

// Distinct scores in ascending order with per-origin counts.
inline std::vector<ScoreGroup> group_scores(std::span<const ScoredSample> samples) {
    for (const ScoredSample& s : samples)
        require(std::isfinite(s.score), "metrics: non-finite score");
    std::vector<ScoredSample> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.score < b.score; });
    std::vector<ScoreGroup> groups;
    for (const ScoredSample& s : sorted) {
        if (groups.empty() || groups.back().score != s.score)
            groups.push_back({s.score, 0, 0});
        if (s.origin == Origin::in_dist)
            ++groups.back().n_in;
        else
            ++groups.back().n_out;
    }
    return groups;
}

inline void require_both_origins(std::span<const ScoredSample> samples, const char* what) {
    bool has_in = false;
    bool has_out = false;
    for (const ScoredSample& s : samples) {
        if (s.origin == Origin::in_dist)
            has_in = true;
        else
            has_out = true;
    }
    require(has_in && has_out, std::string(what) + ": need samples of both origins");
}

}  // namespace detail

// False-positive rate at N% true-positive rate, treating outliers as the
// positive class and flagging a sample when its score falls at or below the
// threshold. The threshold is the smallest distinct score whose flag-rate on
// outliers reaches N%; the returned value is the fraction of in-distribution
// samples flagged at that threshold.
inline double fpr_at_tpr(std::span<const ScoredSample> samples, double n_percent) {
    detail::require_both_origins(samples, "fpr_at_tpr");
    require(n_percent > 0.0 && n_percent <= 100.0, "fpr_at_tpr: level outside (0, 100]");
    const auto groups = detail::group_scores(samples);
    std::size_t total_in = 0;
    std::size_t total_out = 0;
    for (const auto& g : groups) {
        total_in += g.n_in;
        total_out += g.n_out;
    }
    std::size_t cum_in = 0;
    std::size_t cum_out = 0;
    for (const auto& g : groups) {
        cum_in += g.n_in;
        cum_out += g.n_out;
        if (100.0 * static_cast<double>(cum_out) >=
            n_percent * static_cast<double>(total_out)) {
            return static_cast<double>(cum_in) / static_cast<double>(total_in);
        }
    }
    return 1.0;  // unreachable: the last group always reaches 100%
}

inline double fpr_at_95_tpr(std::span<const ScoredSample> samples) {
    return fpr_at_tpr(samples, 95.0);
}

// True-negative rate at 95% true-positive rate with the in-distribution set
// as the positive class, flagged when score >= threshold. The threshold is
// the largest distinct score keeping in-distribution recall at 95%; the
// result is the fraction of outliers strictly below it.
inline double tnr_at_95_tpr(std::span<const ScoredSample> samples) {
    detail::require_both_origins(samples, "tnr_at_95_tpr");
    const auto groups = detail::group_scores(samples);
    std::size_t total_in = 0;
    std::size_t total_out = 0;
    for (const auto& g : groups) {
        total_in += g.n_in;
        total_out += g.n_out;
    }
    std::size_t cum_in = 0;
    std::size_t cum_out = 0;
    for (std::size_t gi = groups.size(); gi-- > 0;) {
        cum_in += groups[gi].n_in;
        cum_out += groups[gi].n_out;
        if (100.0 * static_cast<double>(cum_in) >= 95.0 * static_cast<double>(total_in)) {
            return static_cast<double>(total_out - cum_out) / static_cast<double>(total_out);
        }
    }
    return 0.0;  // unreachable: the full range always reaches 100% recall
}

// Area under the ROC curve for the chosen positive origin. Computed by a
// tie-grouped descending sweep with trapezoidal area, which equals the
// pairwise probability P(score_pos > score_neg) + 0.5 P(tie).
inline double auroc(std::span<const ScoredSample> samples, Origin positive) {
    detail::require_both_origins(samples, "auroc");
    auto groups = detail::group_scores(samples);
    // Positive-first orientation: in-distribution ranks by score, outliers by
    // negated score, so "high" always means "looks positive".
    std::size_t total_pos = 0;
    std::size_t total_neg = 0;
    for (const auto& g : groups) {
        total_pos += (positive == Origin::in_dist) ? g.n_in : g.n_out;
        total_neg += (positive == Origin::in_dist) ? g.n_out : g.n_in;
    }
    double area = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    auto visit = [&](const detail::ScoreGroup& g) {
        const std::size_t dtp = (positive == Origin::in_dist) ? g.n_in : g.n_out;
        const std::size_t dfp = (positive == Origin::in_dist) ? g.n_out : g.n_in;
        area += static_cast<double>(dfp) *
                (static_cast<double>(tp) + 0.5 * static_cast<double>(dtp));
        tp += dtp;
        fp += dfp;
    };
    if (positive == Origin::in_dist) {
        for (std::size_t gi = groups.size(); gi-- > 0;) visit(groups[gi]);
    } else {
        for (const auto& g : groups) visit(g);
    }
    return area / (static_cast<double>(total_pos) * static_cast<double>(total_neg));
}

// Area under the precision-recall curve as average precision: each distinct
// threshold contributes (recall gain) * (precision at that threshold).
inline double aupr(std::span<const ScoredSample> samples, Origin positive) {
    detail::require_both_origins(samples, "aupr");
    auto groups = detail::group_scores(samples);
    std::size_t total_pos = 0;
    for (const auto& g : groups)
        total_pos += (positive == Origin::in_dist) ? g.n_in : g.n_out;
    double ap_numerator = 0.0;  // sum of (recall-gain numerator) * precision
    std::size_t tp = 0;
    std::size_t fp = 0;
    auto visit = [&](const detail::ScoreGroup& g) {
        const std::size_t dtp = (positive == Origin::in_dist) ? g.n_in : g.n_out;
        const std::size_t dfp = (positive == Origin::in_dist) ? g.n_out : g.n_in;
        tp += dtp;
        fp += dfp;
        if (dtp > 0) {
            const double precision =
                static_cast<double>(tp) / static_cast<double>(tp + fp);
            ap_numerator += static_cast<double>(dtp) * precision;
        }
    };
    if (positive == Origin::in_dist) {
        for (std::size_t gi = groups.size(); gi-- > 0;) visit(groups[gi]);
    } else {
        for (const auto& g : groups) visit(g);
    }
    return ap_numerator / static_cast<double>(total_pos);
}

// Best achievable balanced accuracy 0.5*TPR + 0.5*TNR over all distinct
// thresholds (in-distribution positive, flagged when score >= threshold).
inline double detection_accuracy(std::span<const ScoredSample> samples) {
    detail::require_both_origins(samples, "detection_accuracy");
    const auto groups = detail::group_scores(samples);
    std::size_t total_in = 0;
    std::size_t total_out = 0;
    for (const auto& g : groups) {
        total_in += g.n_in;
        total_out += g.n_out;
    }
    double best = 0.5;  // threshold above every score: TPR 0, TNR 1
    std::size_t cum_in = 0;
    std::size_t cum_out = 0;
    for (std::size_t gi = groups.size(); gi-- > 0;) {
        cum_in += groups[gi].n_in;
        cum_out += groups[gi].n_out;
        const double tpr = static_cast<double>(cum_in) / static_cast<double>(total_in);
        const double tnr = static_cast<double>(total_out - cum_out) /
                           static_cast<double>(total_out);
        best = std::max(best, 0.5 * tpr + 0.5 * tnr);
    }
    return best;
}

// ---- calibration -----------------------------------------------------------

struct CalibrationBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct CalibrationReport {
    double ece = 0.0;
    double mce = 0.0;
    std::vector<CalibrationBin> bins;
};

// Equal-width confidence bins over (0, 1]; a confidence equal to a bin edge
// goes to the lower bin and 1.0 goes to the top bin. Empty bins contribute
// zero to the expected error and are skipped for the maximum error.
inline CalibrationReport calibration_errors(std::span<const double> confidences,
                                            const std::vector<bool>& correct,
                                            std::size_t num_bins = 15) {
    require(num_bins >= 1, "calibration_errors: need at least one bin");
    require(confidences.size() == correct.size(),
            "calibration_errors: confidence/correct size mismatch");
    require(!confidences.empty(), "calibration_errors: empty input");
    for (double p : confidences)
        require(p >= 0.0 && p <= 1.0, "calibration_errors: confidence outside [0,1]");

    CalibrationReport report;
    report.bins.assign(num_bins, CalibrationBin{});
    std::vector<std::size_t> hits(num_bins, 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double p = confidences[i];
        std::size_t b = 0;
        if (p > 0.0) {
            const double raw = std::ceil(p * static_cast<double>(num_bins)) - 1.0;
            b = std::min(num_bins - 1, static_cast<std::size_t>(raw));
        }
        ++report.bins[b].count;
        report.bins[b].mean_confidence += p;
        if (correct[i]) ++hits[b];
    }
    const double n = static_cast<double>(confidences.size());
    double ece = 0.0;
    double mce = 0.0;
    for (std::size_t b = 0; b < num_bins; ++b) {
        CalibrationBin& bin = report.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence /= static_cast<double>(bin.count);
        bin.accuracy = static_cast<double>(hits[b]) / static_cast<double>(bin.count);
        const double gap = std::fabs(bin.accuracy - bin.mean_confidence);
        ece += (static_cast<double>(bin.count) / n) * gap;
        mce = std::max(mce, gap);
    }
    report.ece = ece;
    report.mce = mce;
    return report;
}

// Convenience bundle for reporting.
struct DetectionReport {
    double fpr95 = 0.0;
    double tnr95 = 0.0;
    double auroc_in = 0.0;   // positive class: in-distribution
    double aupr_in = 0.0;    // positive class: in-distribution
    double aupr_out = 0.0;   // positive class: outlier
    double detection_acc = 0.0;
};

inline DetectionReport evaluate_detection(std::span<const ScoredSample> samples) {
    DetectionReport r;
    r.fpr95 = fpr_at_95_tpr(samples);
    r.tnr95 = tnr_at_95_tpr(samples);
    r.auroc_in = auroc(samples, Origin::in_dist);
    r.aupr_in = aupr(samples, Origin::in_dist);
    r.aupr_out = aupr(samples, Origin::out_dist);
    r.detection_acc = detection_accuracy(samples);
    return r;
}

inline std::vector<ScoredSample> make_scored(std::span<const double> in_scores,
                                             std::span<const double> out_scores) {
    std::vector<ScoredSample> out;
    out.reserve(in_scores.size() + out_scores.size());
    for (double s : in_scores) out.push_back({s, Origin::in_dist});
    for (double s : out_scores) out.push_back({s, Origin::out_dist});
    return out;
}

}  // namespace oodkit
