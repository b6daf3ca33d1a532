#pragma once
// Pairwise-activation range detector: for every (predicted class, layer,
// order, feature pair) it records the min/max of a signed power-mean of the
// two activations over the training set, then scores a test point by how far
// its own values fall outside those ranges, normalized per layer by the
// expected deviation on a held-out partition.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "mlp.hpp"

namespace oodkit {

namespace detail {

inline double ipow(double base, int p) {
    double r = 1.0;
    for (int i = 0; i < p; ++i) r *= base;
    return r;
}

}  // namespace detail

// Upper-triangle (i <= j) entries of the order-p signed pairwise product:
// (|a_i|^p * |a_j|^p)^(1/p) * sign(a_i * a_j).
inline void gram_entries(const double* a, std::size_t d, int p, std::vector<double>& out) {
    require(p >= 1, "gram_entries: order must be >= 1");
    out.clear();
    out.reserve(d * (d + 1) / 2);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            const double prod = a[i] * a[j];
            const double sgn = prod > 0.0 ? 1.0 : (prod < 0.0 ? -1.0 : 0.0);
            double mag;
            if (p == 1) {
                mag = std::fabs(a[i]) * std::fabs(a[j]);
            } else {
                const double powered = detail::ipow(std::fabs(a[i]), p) *
                                       detail::ipow(std::fabs(a[j]), p);
                mag = p == 2 ? std::sqrt(powered)
                             : std::pow(powered, 1.0 / static_cast<double>(p));
            }
            out.push_back(sgn * mag);
        }
    }
}

struct GramBounds {
    std::vector<double> mn;
    std::vector<double> mx;
};

struct GramSignature {
    std::vector<int> orders;
    std::size_t classes = 0;
    std::vector<std::size_t> widths;  // feature width per layer
    // bounds[class][layer][order index]
    std::vector<std::vector<std::vector<GramBounds>>> bounds;
    std::vector<std::uint8_t> usable;  // per class: saw at least one training row
    std::vector<double> normalizers;   // expected raw deviation per layer

    std::size_t layer_count() const { return widths.size(); }
    bool fitted() const { return classes > 0; }
    bool normalized() const { return !normalizers.empty(); }
};

inline std::vector<int> default_gram_orders() { return {1, 2, 3, 4}; }

// Row-wise argmax of a logit (or any score) matrix; the predicted class used
// to bucket rows.
inline std::vector<std::size_t> argmax_rows(const Matrix& logits) {
    std::vector<std::size_t> pred(logits.rows, 0);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zr = logits.row(i);
        for (std::size_t j = 1; j < logits.cols; ++j)
            if (zr[j] > zr[pred[i]]) pred[i] = j;
    }
    return pred;
}

// Record per-class feature-range signatures from precomputed layer features.
// Rows are bucketed by the supplied predictions, so an unlucky class can end
// up empty; such classes are marked unusable and scoring falls back to the
// best-matching usable class.
inline GramSignature fit_gram_features(const std::vector<Matrix>& layer_feats,
                                       const std::vector<std::size_t>& predictions,
                                       std::size_t classes,
                                       const std::vector<int>& orders = default_gram_orders()) {
    require(!layer_feats.empty(), "gram fit: no feature layers");
    require(classes >= 2, "gram fit: need at least two classes");
    require(!orders.empty(), "gram fit: need at least one order");
    for (int p : orders) require(p >= 1, "gram fit: orders must be >= 1");
    const std::size_t n = layer_feats.front().rows;
    require(predictions.size() == n, "gram fit: prediction/feature row mismatch");
    for (const Matrix& f : layer_feats)
        require(f.rows == n, "gram fit: ragged feature layers");
    for (std::size_t p : predictions)
        require(p < classes, "gram fit: prediction out of range");

    const std::size_t layers = layer_feats.size();
    GramSignature sig;
    sig.orders = orders;
    sig.classes = classes;
    for (const Matrix& f : layer_feats) sig.widths.push_back(f.cols);
    sig.usable.assign(classes, 0);
    sig.bounds.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        sig.bounds[c].resize(layers);
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t entries = sig.widths[l] * (sig.widths[l] + 1) / 2;
            sig.bounds[c][l].resize(orders.size());
            for (auto& b : sig.bounds[c][l]) {
                b.mn.assign(entries, std::numeric_limits<double>::infinity());
                b.mx.assign(entries, -std::numeric_limits<double>::infinity());
            }
        }
    }

    std::vector<double> entries;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pred = predictions[i];
        sig.usable[pred] = 1;
        for (std::size_t l = 0; l < layers; ++l) {
            const double* fr = layer_feats[l].row(i);
            for (std::size_t oi = 0; oi < orders.size(); ++oi) {
                gram_entries(fr, sig.widths[l], orders[oi], entries);
                GramBounds& b = sig.bounds[pred][l][oi];
                for (std::size_t e = 0; e < entries.size(); ++e) {
                    b.mn[e] = std::min(b.mn[e], entries[e]);
                    b.mx[e] = std::max(b.mx[e], entries[e]);
                }
            }
        }
    }
    bool any_usable = false;
    for (std::uint8_t u : sig.usable) any_usable |= (u != 0);
    if (!any_usable) throw std::runtime_error("gram fit: no class received any row");
    return sig;
}

// Convenience wrapper: trace the training split through the model and bucket
// by the model's own predictions.
inline GramSignature fit_gram(const MlpModel& model, const Dataset& train,
                              const std::vector<int>& orders = default_gram_orders()) {
    validate_dataset(train);
    require(train.role == DatasetRole::in_train,
            "gram fit: expected the labeled training split");
    const ForwardTrace t = forward(model, train.features);
    return fit_gram_features(t.post, argmax_rows(t.logits()), model.output_dim(), orders);
}

namespace detail {

// Relative overshoot of v outside [mn, mx]; zero inside the range.
inline double range_deviation(double v, double mn, double mx) {
    if (v < mn) return (mn - v) / (std::fabs(mn) + 1e-12);
    if (v > mx) return (v - mx) / (std::fabs(mx) + 1e-12);
    return 0.0;
}

// Raw per-layer deviations of one row of layer features against class c's
// bounds.
inline void row_deviations(const GramSignature& sig, const std::vector<Matrix>& post,
                           std::size_t row, std::size_t c, std::vector<double>& entries,
                           std::vector<double>& out) {
    out.assign(sig.layer_count(), 0.0);
    for (std::size_t l = 0; l < sig.layer_count(); ++l) {
        const double* fr = post[l].row(row);
        for (std::size_t oi = 0; oi < sig.orders.size(); ++oi) {
            gram_entries(fr, sig.widths[l], sig.orders[oi], entries);
            const GramBounds& b = sig.bounds[c][l][oi];
            double acc = 0.0;
            for (std::size_t e = 0; e < entries.size(); ++e)
                acc += range_deviation(entries[e], b.mn[e], b.mx[e]);
            out[l] += acc;
        }
    }
}

}  // namespace detail

// Raw (unnormalized) per-layer deviations from precomputed layer features,
// one column per layer. Each row is compared against the bounds of its
// predicted class; when that class saw no training rows, the usable class
// with the smallest total deviation stands in.
inline Matrix gram_raw_deviations_features(const GramSignature& sig,
                                           const std::vector<Matrix>& layer_feats,
                                           const std::vector<std::size_t>& predictions) {
    if (!sig.fitted()) throw std::logic_error("gram: signature not fitted");
    require(layer_feats.size() == sig.layer_count(), "gram: layer count mismatch");
    const std::size_t n = layer_feats.front().rows;
    require(predictions.size() == n, "gram: prediction/feature row mismatch");
    for (std::size_t l = 0; l < sig.layer_count(); ++l) {
        require(layer_feats[l].rows == n, "gram: ragged feature layers");
        require(layer_feats[l].cols == sig.widths[l], "gram: feature width mismatch");
    }

    Matrix out(n, sig.layer_count());
    std::vector<double> entries;
    std::vector<double> devs;
    std::vector<double> best_devs;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pred = predictions[i];
        require(pred < sig.classes, "gram: prediction out of range");
        if (sig.usable[pred]) {
            detail::row_deviations(sig, layer_feats, i, pred, entries, devs);
        } else {
            double best_total = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < sig.classes; ++c) {
                if (!sig.usable[c]) continue;
                detail::row_deviations(sig, layer_feats, i, c, entries, devs);
                double total = 0.0;
                for (double v : devs) total += v;
                if (total < best_total) {
                    best_total = total;
                    best_devs = devs;
                }
            }
            devs = best_devs;
        }
        for (std::size_t l = 0; l < sig.layer_count(); ++l) out(i, l) = devs[l];
    }
    return out;
}

inline Matrix gram_raw_deviations(const GramSignature& sig, const MlpModel& model,
                                  const Matrix& batch) {
    if (!sig.fitted()) throw std::logic_error("gram: signature not fitted");
    const ForwardTrace t = forward(model, batch);
    return gram_raw_deviations_features(sig, t.post, argmax_rows(t.logits()));
}

namespace detail {

inline void normalizers_from_raw(GramSignature& sig, const Matrix& raw) {
    sig.normalizers.assign(sig.layer_count(), 0.0);
    for (std::size_t i = 0; i < raw.rows; ++i)
        for (std::size_t l = 0; l < raw.cols; ++l) sig.normalizers[l] += raw(i, l);
    for (double& v : sig.normalizers)
        v = std::max(v / static_cast<double>(raw.rows), 1e-12);
}

inline std::vector<double> scores_from_raw(const GramSignature& sig, const Matrix& raw) {
    std::vector<double> out(raw.rows, 0.0);
    for (std::size_t i = 0; i < raw.rows; ++i) {
        double total = 0.0;
        for (std::size_t l = 0; l < raw.cols; ++l) total += raw(i, l) / sig.normalizers[l];
        out[i] = -total;
    }
    return out;
}

}  // namespace detail

// Set per-layer normalizers to the mean raw deviation over a held-out
// partition (floored at 1e-12 so layers that never deviate stay harmless).
inline void compute_normalizers(GramSignature& sig, const MlpModel& model,
                                const Matrix& partition) {
    require(partition.rows >= 1, "gram normalizers: empty partition");
    detail::normalizers_from_raw(sig, gram_raw_deviations(sig, model, partition));
}

inline void compute_normalizers_features(GramSignature& sig,
                                         const std::vector<Matrix>& layer_feats,
                                         const std::vector<std::size_t>& predictions) {
    require(!layer_feats.empty() && layer_feats.front().rows >= 1,
            "gram normalizers: empty partition");
    detail::normalizers_from_raw(
        sig, gram_raw_deviations_features(sig, layer_feats, predictions));
}

// Detector score: the negated sum of per-layer deviations, each divided by
// its expected level. Higher means more in-distribution.
inline std::vector<double> gram_scores(const GramSignature& sig, const MlpModel& model,
                                       const Matrix& batch) {
    if (!sig.normalized())
        throw std::logic_error("gram: normalizers not computed");
    return detail::scores_from_raw(sig, gram_raw_deviations(sig, model, batch));
}

inline std::vector<double> gram_scores_features(const GramSignature& sig,
                                                const std::vector<Matrix>& layer_feats,
                                                const std::vector<std::size_t>& predictions) {
    if (!sig.normalized())
        throw std::logic_error("gram: normalizers not computed");
    return detail::scores_from_raw(
        sig, gram_raw_deviations_features(sig, layer_feats, predictions));
}

}  // namespace oodkit
