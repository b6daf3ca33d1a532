#pragma once
// Umbrella header for the post-training detectors plus the zero-cost
// baseline: maximum softmax probability.

#include <vector>

#include "gram.hpp"
#include "mahalanobis.hpp"
#include "matrix.hpp"
#include "mlp.hpp"

namespace oodkit {

// Maximum softmax probability per row; the classic confidence baseline.
// Values live in [1/K, 1].
inline std::vector<double> msp_scores(const MlpModel& model, const Matrix& batch) {
    const ForwardTrace t = forward(model, batch);
    const Matrix p = softmax(t.logits());
    std::vector<double> out(p.rows);
    for (std::size_t i = 0; i < p.rows; ++i) {
        const double* pr = p.row(i);
        double mx = pr[0];
        for (std::size_t j = 1; j < p.cols; ++j) mx = std::max(mx, pr[j]);
        out[i] = mx;
    }
    return out;
}

}  // namespace oodkit
