#pragma once
// Class-conditional Gaussian scoring on the classifier's layer features:
// per-class means with one tied covariance per layer, a score that is the
// negated squared Mahalanobis distance to the closest class mean, an optional
// gradient-sign input perturbation that sharpens the in-distribution mode,
// and a logistic-regression combination of the per-layer scores.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "mlp.hpp"

namespace oodkit {

// All recorded layer outputs of the network: hidden post-activations plus the
// final logits. This is the feature set both detectors operate on.
inline std::vector<Matrix> feature_layers(const MlpModel& model, const Matrix& batch) {
    ForwardTrace t = forward(model, batch);
    return std::move(t.post);
}

// ---- small SPD solver -------------------------------------------------------

// Lower Cholesky factor; throws std::runtime_error when the matrix is not
// positive definite.
inline Matrix cholesky(const Matrix& a) {
    require(a.rows == a.cols, "cholesky: matrix not square");
    const std::size_t n = a.rows;
    Matrix l(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = a(i, j);
            for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
            if (i == j) {
                if (acc <= 0.0)
                    throw std::runtime_error("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(acc);
            } else {
                l(i, j) = acc / l(j, j);
            }
        }
    }
    return l;
}

// Solve (L L^T) x = b in place.
inline void cholesky_solve(const Matrix& l, std::vector<double>& b) {
    const std::size_t n = l.rows;
    require(b.size() == n, "cholesky_solve: size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        double acc = b[i];
        for (std::size_t k = 0; k < i; ++k) acc -= l(i, k) * b[k];
        b[i] = acc / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t k = i + 1; k < n; ++k) acc -= l(k, i) * b[k];
        b[i] = acc / l(i, i);
    }
}

inline Matrix cholesky_inverse(const Matrix& l) {
    const std::size_t n = l.rows;
    Matrix inv(n, n, 0.0);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = e[i];
    }
    // enforce exact symmetry against round-off
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = v;
            inv(j, i) = v;
        }
    return inv;
}

// ---- fitted statistics ------------------------------------------------------

struct GaussianStats {
    std::size_t classes = 0;
    std::vector<Matrix> means;       // means[l]: classes x width_l
    std::vector<Matrix> covariance;  // tied covariance per layer, ridge included
    std::vector<Matrix> precision;   // inverse of the (ridged) covariance

    std::size_t layer_count() const { return means.size(); }
    bool fitted() const { return classes > 0; }
};

// Fit per-class means and one covariance per layer, pooled over classes. The
// covariance gets a relative ridge eps = 1e-6 * trace/width (absolute 1e-6
// when the features are all identical, where the trace vanishes) so that the
// precision always exists.
inline GaussianStats fit_mahalanobis_features(const std::vector<Matrix>& layer_feats,
                                              const std::vector<int>& labels,
                                              std::size_t classes) {
    require(classes >= 2, "mahalanobis fit: need at least two classes");
    require(!layer_feats.empty(), "mahalanobis fit: no feature layers");
    const std::size_t n = labels.size();
    require(n >= 1, "mahalanobis fit: empty label set");
    std::vector<std::size_t> counts(classes, 0);
    for (int y : labels) {
        require(y >= 0 && static_cast<std::size_t>(y) < classes,
                "mahalanobis fit: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c = 0; c < classes; ++c)
        require(counts[c] >= 2, "mahalanobis fit: every class needs at least two samples");

    GaussianStats s;
    s.classes = classes;
    for (const Matrix& f : layer_feats) {
        require(f.rows == n, "mahalanobis fit: feature/label row mismatch");
        const std::size_t d = f.cols;
        Matrix mu(classes, d, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = static_cast<std::size_t>(labels[i]);
            const double* fr = f.row(i);
            double* mr = mu.row(c);
            for (std::size_t j = 0; j < d; ++j) mr[j] += fr[j];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            double* mr = mu.row(c);
            for (std::size_t j = 0; j < d; ++j) mr[j] /= static_cast<double>(counts[c]);
        }
        Matrix centered(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t c = static_cast<std::size_t>(labels[i]);
            const double* fr = f.row(i);
            const double* mr = mu.row(c);
            double* cr = centered.row(i);
            for (std::size_t j = 0; j < d; ++j) cr[j] = fr[j] - mr[j];
        }
        Matrix cov = matmul_at_b(centered, centered);
        for (double& v : cov.data) v /= static_cast<double>(n);
        double trace = 0.0;
        for (std::size_t j = 0; j < d; ++j) trace += cov(j, j);
        const double eps =
            trace > 0.0 ? 1e-6 * trace / static_cast<double>(d) : 1e-6;
        for (std::size_t j = 0; j < d; ++j) cov(j, j) += eps;
        const Matrix l = cholesky(cov);
        s.precision.push_back(cholesky_inverse(l));
        s.covariance.push_back(std::move(cov));
        s.means.push_back(std::move(mu));
    }
    return s;
}

inline GaussianStats fit_mahalanobis(const MlpModel& model, const Dataset& train) {
    validate_dataset(train);
    require(train.role == DatasetRole::in_train,
            "mahalanobis fit: expected the labeled training split");
    for (int y : train.labels)
        require(static_cast<std::size_t>(y) < model.output_dim(),
                "mahalanobis fit: label exceeds model class count");
    return fit_mahalanobis_features(feature_layers(model, train.features), train.labels,
                                    model.output_dim());
}

namespace detail {

// Negated squared Mahalanobis distance from feature row f to class c.
inline double class_score(const GaussianStats& s, std::size_t layer, std::size_t c,
                          const double* f, std::vector<double>& scratch) {
    const Matrix& mu = s.means[layer];
    const Matrix& p = s.precision[layer];
    const std::size_t d = mu.cols;
    scratch.resize(d);
    const double* m = mu.row(c);
    for (std::size_t j = 0; j < d; ++j) scratch[j] = f[j] - m[j];
    double q = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        const double* pr = p.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += pr[j] * scratch[j];
        q += scratch[i] * acc;
    }
    return -q;
}

}  // namespace detail

// Per-layer score: the best (largest) class score at that layer.
inline double mahalanobis_layer_score(const GaussianStats& s, std::size_t layer,
                                      const double* f) {
    if (!s.fitted()) throw std::logic_error("mahalanobis: statistics not fitted");
    std::vector<double> scratch;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < s.classes; ++c)
        best = std::max(best, detail::class_score(s, layer, c, f, scratch));
    return best;
}

// Scores for a batch, one column per layer.
inline Matrix mahalanobis_scores(const GaussianStats& s,
                                 const std::vector<Matrix>& layer_feats) {
    if (!s.fitted()) throw std::logic_error("mahalanobis: statistics not fitted");
    require(layer_feats.size() == s.layer_count(), "mahalanobis: layer count mismatch");
    const std::size_t n = layer_feats.front().rows;
    Matrix out(n, s.layer_count());
    for (std::size_t l = 0; l < s.layer_count(); ++l) {
        require(layer_feats[l].rows == n, "mahalanobis: ragged feature batch");
        require(layer_feats[l].cols == s.means[l].cols, "mahalanobis: feature width mismatch");
        for (std::size_t i = 0; i < n; ++i)
            out(i, l) = mahalanobis_layer_score(s, l, layer_feats[l].row(i));
    }
    return out;
}

// Unweighted sum of the per-layer scores; the quantity the input perturbation
// ascends.
inline std::vector<double> mahalanobis_total_scores(const GaussianStats& s,
                                                    const std::vector<Matrix>& layer_feats) {
    const Matrix per_layer = mahalanobis_scores(s, layer_feats);
    std::vector<double> out(per_layer.rows, 0.0);
    for (std::size_t i = 0; i < per_layer.rows; ++i) {
        const double* r = per_layer.row(i);
        for (std::size_t l = 0; l < per_layer.cols; ++l) out[i] += r[l];
    }
    return out;
}

// Gradient of the summed layer scores with respect to the inputs. Each layer
// contributes the exact gradient of its best-class score, -2 P (f - mu).
inline Matrix mahalanobis_input_gradient(const MlpModel& model, const GaussianStats& s,
                                         const Matrix& batch) {
    if (!s.fitted()) throw std::logic_error("mahalanobis: statistics not fitted");
    const ForwardTrace t = forward(model, batch);
    require(t.post.size() == s.layer_count(), "mahalanobis: layer count mismatch");
    std::vector<Matrix> feature_grads(t.post.size());
    std::vector<double> scratch;
    for (std::size_t l = 0; l < t.post.size(); ++l) {
        const Matrix& f = t.post[l];
        const std::size_t d = f.cols;
        require(d == s.means[l].cols, "mahalanobis: feature width mismatch");
        Matrix g(f.rows, d, 0.0);
        for (std::size_t i = 0; i < f.rows; ++i) {
            const double* fr = f.row(i);
            std::size_t best_c = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < s.classes; ++c) {
                const double sc = detail::class_score(s, l, c, fr, scratch);
                if (sc > best) {
                    best = sc;
                    best_c = c;
                }
            }
            const Matrix& p = s.precision[l];
            const double* m = s.means[l].row(best_c);
            scratch.resize(d);
            for (std::size_t j = 0; j < d; ++j) scratch[j] = fr[j] - m[j];
            double* gr = g.row(i);
            for (std::size_t r = 0; r < d; ++r) {
                const double* pr = p.row(r);
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += pr[j] * scratch[j];
                gr[r] = -2.0 * acc;
            }
        }
        feature_grads[l] = std::move(g);
    }
    return backward_features(model, t, feature_grads).input;
}

// x + eps * sign(d score / d x): a small step that raises the summed score of
// in-distribution points more than that of outliers. eps = 0 returns the
// input unchanged.
inline Matrix input_preprocess(const MlpModel& model, const GaussianStats& s,
                               const Matrix& batch, double epsilon) {
    require(epsilon >= 0.0, "input_preprocess: negative epsilon");
    if (epsilon == 0.0) return batch;
    const Matrix g = mahalanobis_input_gradient(model, s, batch);
    Matrix out = batch;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double gv = g.data[i];
        const double step = gv > 0.0 ? 1.0 : (gv < 0.0 ? -1.0 : 0.0);
        out.data[i] += epsilon * step;
    }
    return out;
}

// ---- layer-score ensemble ---------------------------------------------------

struct EnsembleWeights {
    std::vector<double> weights;  // one per layer
    double bias = 0.0;
    std::vector<double> mean;     // per-layer standardization, fitted on validation
    std::vector<double> stddev;
    bool degenerate = false;      // validation scores carried no signal; weights uniform
};

namespace detail {

inline Matrix standardized(const Matrix& scores, const std::vector<double>& mean,
                           const std::vector<double>& stddev) {
    Matrix out = scores;
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* r = out.row(i);
        for (std::size_t l = 0; l < out.cols; ++l) r[l] = (r[l] - mean[l]) / stddev[l];
    }
    return out;
}

}  // namespace detail

// Logistic regression separating in-distribution (target +1) from outlier
// (target -1) validation points on standardized per-layer scores. Plain
// gradient descent; stops at gradient norm < 1e-6 or 10000 iterations.
// A small L2 penalty on the weights (not the bias) keeps the optimum unique
// and bounded when the validation scores are linearly separable; otherwise
// the weight direction would be an artifact of the descent trajectory.
inline EnsembleWeights fit_ensemble(const MlpModel& model, const GaussianStats& s,
                                    const Matrix& val_in, const Matrix& val_out,
                                    double epsilon = 0.0) {
    require(val_in.rows >= 1 && val_out.rows >= 1,
            "fit_ensemble: need validation rows of both origins");
    const Matrix s_in = mahalanobis_scores(
        s, feature_layers(model, input_preprocess(model, s, val_in, epsilon)));
    const Matrix s_out = mahalanobis_scores(
        s, feature_layers(model, input_preprocess(model, s, val_out, epsilon)));
    const std::size_t layers = s.layer_count();
    const std::size_t n = s_in.rows + s_out.rows;

    EnsembleWeights ew;
    ew.mean.assign(layers, 0.0);
    ew.stddev.assign(layers, 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
        double m = 0.0;
        for (std::size_t i = 0; i < s_in.rows; ++i) m += s_in(i, l);
        for (std::size_t i = 0; i < s_out.rows; ++i) m += s_out(i, l);
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < s_in.rows; ++i) var += (s_in(i, l) - m) * (s_in(i, l) - m);
        for (std::size_t i = 0; i < s_out.rows; ++i)
            var += (s_out(i, l) - m) * (s_out(i, l) - m);
        var /= static_cast<double>(n);
        ew.mean[l] = m;
        ew.stddev[l] = std::max(std::sqrt(var), 1e-12);
    }

    bool any_signal = false;
    for (std::size_t l = 0; l < layers; ++l)
        if (ew.stddev[l] > 1e-12) any_signal = true;
    if (!any_signal) {
        ew.degenerate = true;
        ew.weights.assign(layers, 1.0 / static_cast<double>(layers));
        ew.bias = 0.0;
        return ew;
    }

    const Matrix x_in = detail::standardized(s_in, ew.mean, ew.stddev);
    const Matrix x_out = detail::standardized(s_out, ew.mean, ew.stddev);
    std::vector<double> w(layers, 0.0);
    double b = 0.0;
    const double lr = 1.0 / static_cast<double>(layers + 1);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double ridge = 1e-2;
    std::vector<double> gw(layers, 0.0);
    for (std::size_t iter = 0; iter < 10000; ++iter) {
        std::fill(gw.begin(), gw.end(), 0.0);
        double gb = 0.0;
        auto accumulate = [&](const Matrix& x, double y) {
            for (std::size_t i = 0; i < x.rows; ++i) {
                const double* r = x.row(i);
                double z = b;
                for (std::size_t l = 0; l < layers; ++l) z += w[l] * r[l];
                const double sig = 1.0 / (1.0 + std::exp(y * z));  // sigma(-y z)
                const double coeff = -y * sig * inv_n;
                for (std::size_t l = 0; l < layers; ++l) gw[l] += coeff * r[l];
                gb += coeff;
            }
        };
        accumulate(x_in, 1.0);
        accumulate(x_out, -1.0);
        for (std::size_t l = 0; l < layers; ++l) gw[l] += ridge * w[l];
        double norm2 = gb * gb;
        for (double v : gw) norm2 += v * v;
        if (std::sqrt(norm2) < 1e-6) break;
        for (std::size_t l = 0; l < layers; ++l) w[l] -= lr * gw[l];
        b -= lr * gb;
    }
    ew.weights = std::move(w);
    ew.bias = b;
    return ew;
}

// Combined detector score for one row of per-layer scores.
inline double ensemble_score(const EnsembleWeights& ew, const double* layer_scores,
                             std::size_t layers) {
    require(ew.weights.size() == layers, "ensemble_score: layer count mismatch");
    double z = ew.bias;
    for (std::size_t l = 0; l < layers; ++l)
        z += ew.weights[l] * (layer_scores[l] - ew.mean[l]) / ew.stddev[l];
    return z;
}

inline std::vector<double> ensemble_scores(const EnsembleWeights& ew,
                                           const Matrix& per_layer_scores) {
    std::vector<double> out(per_layer_scores.rows);
    for (std::size_t i = 0; i < per_layer_scores.rows; ++i)
        out[i] = ensemble_score(ew, per_layer_scores.row(i), per_layer_scores.cols);
    return out;
}

}  // namespace oodkit
