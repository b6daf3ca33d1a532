#pragma once
// Fine-tuning objective for outlier exposure: cross-entropy on in-distribution
// rows plus two regularizers — a squared penalty steering mean max-softmax
// confidence toward the pretrained accuracy level, and an L1
// distance-to-uniform penalty on auxiliary outlier rows. Gradients are exact
// (the L1 subgradient at a tie takes the value 0).

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "matrix.hpp"
#include "mlp.hpp"

namespace oodkit {

enum class OeLoss { tv_uniform, kl_uniform };

struct OeccConfig {
    double lambda1 = 0.0;        // weight of the confidence-control term
    double lambda2 = 0.0;        // weight of the uniformity term on outlier rows
    double a_tr = 1.0;           // target mean max-softmax level (training accuracy)
    std::size_t k = 2;           // class count
    OeLoss oe_loss = OeLoss::tv_uniform;  // kl_uniform kept as a comparison baseline

    void validate() const {
        require(lambda1 >= 0.0 && lambda2 >= 0.0, "oecc config: negative lambda");
        require(a_tr >= 0.0 && a_tr <= 1.0, "oecc config: a_tr outside [0,1]");
        require(k >= 2, "oecc config: need at least two classes");
    }
};

struct LossBreakdown {
    double ce_term = 0.0;
    double confidence_term = 0.0;  // already scaled by lambda1
    double tv_term = 0.0;          // already scaled by lambda2
    double total = 0.0;
};

// Mean negative log-likelihood and its exact logit gradient
// (softmax - onehot)/n.
inline std::pair<double, Matrix> cross_entropy(const Matrix& logits,
                                               const std::vector<int>& labels) {
    require(!logits.empty(), "cross_entropy: empty logits");
    require(labels.size() == logits.rows, "cross_entropy: label count mismatch");
    const std::size_t n = logits.rows;
    const std::size_t k = logits.cols;
    for (int y : labels)
        require(y >= 0 && static_cast<std::size_t>(y) < k, "cross_entropy: label out of range");

    const Matrix logp = log_softmax(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss -= logp(i, static_cast<std::size_t>(labels[i]));
    loss /= static_cast<double>(n);

    Matrix grad(n, k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* lp = logp.row(i);
        double* g = grad.row(i);
        for (std::size_t j = 0; j < k; ++j) g[j] = std::exp(lp[j]) * inv_n;
        g[static_cast<std::size_t>(labels[i])] -= inv_n;
    }
    return {loss, std::move(grad)};
}

// Total-variation distance between a probability vector and the uniform
// distribution over k outcomes: 0.5 * sum |1/k - p_l|.
inline double tv_distance(std::span<const double> probs, std::size_t k) {
    require(probs.size() == k, "tv_distance: size mismatch");
    double sum = 0.0;
    for (double p : probs) {
        require(p >= 0.0, "tv_distance: negative probability");
        sum += p;
    }
    require(std::fabs(sum - 1.0) <= 1e-9, "tv_distance: probabilities do not sum to 1");
    const double u = 1.0 / static_cast<double>(k);
    double acc = 0.0;
    for (double p : probs) acc += std::fabs(u - p);
    return 0.5 * acc;
}

struct OeccTerms {
    LossBreakdown loss;
    Matrix grad_in;   // gradient on the in-distribution logits
    Matrix grad_oe;   // gradient on the outlier logits (empty when no outlier rows)
};

// Full objective on one interleaved batch. `logits_oe` may be empty (plain
// cross-entropy training). Terms with zero weight are skipped entirely, so a
// zero-weight run is bit-identical to one that never computes them.
inline OeccTerms oecc_terms(const Matrix& logits_in, const std::vector<int>& labels_in,
                            const Matrix& logits_oe, const OeccConfig& cfg) {
    cfg.validate();
    require(logits_in.cols == cfg.k, "oecc_terms: in-batch class count mismatch");
    require(logits_oe.empty() || logits_oe.cols == cfg.k,
            "oecc_terms: outlier-batch class count mismatch");

    OeccTerms out;
    auto [ce, gce] = cross_entropy(logits_in, labels_in);
    out.loss.ce_term = ce;
    out.grad_in = std::move(gce);

    if (cfg.lambda1 > 0.0) {
        const Matrix p = softmax(logits_in);
        const std::size_t n = p.rows;
        std::vector<std::size_t> arg(n);
        double mean_max = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* pr = p.row(i);
            std::size_t m = 0;
            for (std::size_t j = 1; j < p.cols; ++j)
                if (pr[j] > pr[m]) m = j;
            arg[i] = m;
            mean_max += pr[m];
        }
        mean_max /= static_cast<double>(n);
        const double gap = cfg.a_tr - mean_max;
        out.loss.confidence_term = cfg.lambda1 * gap * gap;
        // d/dz_ij of lambda1*(a_tr - M)^2 with M the batch-mean max prob:
        // -2*lambda1*gap * (1/n) * p_im * (1[j==m] - p_ij), m = row argmax.
        const double coeff = -2.0 * cfg.lambda1 * gap / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* pr = p.row(i);
            double* g = out.grad_in.row(i);
            const std::size_t m = arg[i];
            const double pm = pr[m];
            for (std::size_t j = 0; j < p.cols; ++j) {
                const double ind = (j == m) ? 1.0 : 0.0;
                g[j] += coeff * pm * (ind - pr[j]);
            }
        }
    }

    if (!logits_oe.empty() && cfg.lambda2 > 0.0) {
        const Matrix p = softmax(logits_oe);
        const std::size_t n = p.rows;
        const double u = 1.0 / static_cast<double>(cfg.k);
        out.grad_oe = Matrix(n, p.cols);
        double mean_term = 0.0;
        if (cfg.oe_loss == OeLoss::tv_uniform) {
            // Per row: sum_l |1/k - p_l|; gradient p_j*(s_j - sum_l s_l*p_l)
            // with s = sign(p - 1/k) and subgradient 0 at the tie.
            for (std::size_t i = 0; i < n; ++i) {
                const double* pr = p.row(i);
                double* g = out.grad_oe.row(i);
                double row_sum = 0.0;
                double sp = 0.0;  // sum_l s_l * p_l
                for (std::size_t j = 0; j < p.cols; ++j) {
                    row_sum += std::fabs(u - pr[j]);
                    const double s = pr[j] > u ? 1.0 : (pr[j] < u ? -1.0 : 0.0);
                    sp += s * pr[j];
                }
                mean_term += row_sum;
                for (std::size_t j = 0; j < p.cols; ++j) {
                    const double s = pr[j] > u ? 1.0 : (pr[j] < u ? -1.0 : 0.0);
                    g[j] = cfg.lambda2 * pr[j] * (s - sp) / static_cast<double>(n);
                }
            }
        } else {
            // KL(uniform || p) per row; gradient (p_j - 1/k).
            const Matrix logp = log_softmax(logits_oe);
            for (std::size_t i = 0; i < n; ++i) {
                const double* lp = logp.row(i);
                const double* pr = p.row(i);
                double* g = out.grad_oe.row(i);
                double row_sum = 0.0;
                for (std::size_t j = 0; j < p.cols; ++j) {
                    row_sum += u * (std::log(u) - lp[j]);
                    g[j] = cfg.lambda2 * (pr[j] - u) / static_cast<double>(n);
                }
                mean_term += row_sum;
            }
        }
        out.loss.tv_term = cfg.lambda2 * mean_term / static_cast<double>(n);
    } else if (!logits_oe.empty()) {
        out.grad_oe = Matrix(logits_oe.rows, logits_oe.cols, 0.0);
    }

    out.loss.total = out.loss.ce_term + out.loss.confidence_term + out.loss.tv_term;
    return out;
}

// Fraction of rows whose predicted class matches the label; used to freeze
// the confidence target after the first training stage.
inline double estimate_a_tr(const MlpModel& model, const Matrix& features,
                            const std::vector<int>& labels) {
    require(features.rows >= 1, "estimate_a_tr: empty feature set");
    require(labels.size() == features.rows, "estimate_a_tr: label count mismatch");
    const ForwardTrace t = forward(model, features);
    const Matrix& z = t.logits();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < z.rows; ++i) {
        const double* zr = z.row(i);
        std::size_t m = 0;
        for (std::size_t j = 1; j < z.cols; ++j)
            if (zr[j] > zr[m]) m = j;
        if (m == static_cast<std::size_t>(labels[i])) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(z.rows);
}

}  // namespace oodkit
