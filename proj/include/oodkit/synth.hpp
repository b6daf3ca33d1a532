#pragma once
// Synthetic data families: one labeled in-distribution generator (Gaussian
// class blobs) and a set of unlabeled outlier generators, three of which are
// derived from a base dataset (pairwise means and coordinate permutation).
// Every generator is a pure function of its spec, so equal specs produce
// byte-identical datasets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace oodkit {

enum class Family {
    gaussian_blobs,   // labeled in-distribution clusters
    gaussian_noise,
    uniform_noise,
    bernoulli,
    rademacher,
    blobs_edges,      // two-level step vectors with jitter
    arithmetic_mean,  // elementwise mean of random base-row pairs
    geometric_mean,   // signed elementwise geometric mean of random base-row pairs
    permuted,         // base rows under one fixed non-identity coordinate permutation
};

inline std::string to_string(Family f) {
    switch (f) {
        case Family::gaussian_blobs: return "gaussian_blobs";
        case Family::gaussian_noise: return "gaussian_noise";
        case Family::uniform_noise: return "uniform_noise";
        case Family::bernoulli: return "bernoulli";
        case Family::rademacher: return "rademacher";
        case Family::blobs_edges: return "blobs_edges";
        case Family::arithmetic_mean: return "arithmetic_mean";
        case Family::geometric_mean: return "geometric_mean";
        case Family::permuted: return "permuted";
    }
    throw std::invalid_argument("unknown family");
}

inline Family family_from_string(const std::string& s) {
    if (s == "gaussian_blobs") return Family::gaussian_blobs;
    if (s == "gaussian_noise") return Family::gaussian_noise;
    if (s == "uniform_noise") return Family::uniform_noise;
    if (s == "bernoulli") return Family::bernoulli;
    if (s == "rademacher") return Family::rademacher;
    if (s == "blobs_edges") return Family::blobs_edges;
    if (s == "arithmetic_mean") return Family::arithmetic_mean;
    if (s == "geometric_mean") return Family::geometric_mean;
    if (s == "permuted") return Family::permuted;
    throw std::invalid_argument("unknown family: " + s);
}

// True for families built by transforming a base dataset's rows.
inline bool is_derived_family(Family f) {
    return f == Family::arithmetic_mean || f == Family::geometric_mean ||
           f == Family::permuted;
}

struct SynthSpec {
    Family family = Family::gaussian_blobs;
    std::size_t dim = 8;
    std::size_t classes = 2;        // gaussian_blobs only
    std::size_t count = 2000;
    double separation = 4.0;        // distance of each default class mean from the origin
    double scale = 1.0;             // noise scale / value magnitude
    std::optional<Matrix> means;    // explicit class means (classes x dim) override
    std::uint64_t seed = 0;
};

// Default class means: separation * e_{c mod dim}.
inline Matrix default_blob_means(const SynthSpec& spec) {
    Matrix m(spec.classes, spec.dim, 0.0);
    for (std::size_t c = 0; c < spec.classes; ++c) m(c, c % spec.dim) = spec.separation;
    return m;
}

inline void validate_spec_common(const SynthSpec& spec) {
    require(spec.dim >= 1, "synth spec: dim must be >= 1");
    require(spec.count >= 1, "synth spec: count must be >= 1");
    require(spec.scale > 0.0, "synth spec: scale must be positive");
}

// Labeled Gaussian clusters with balanced labels (row i gets class i mod K).
inline Dataset gen_in_distribution(const SynthSpec& spec,
                                   DatasetRole role = DatasetRole::in_train) {
    validate_spec_common(spec);
    require(spec.family == Family::gaussian_blobs,
            "gen_in_distribution: family must be gaussian_blobs");
    require(spec.classes >= 2, "gen_in_distribution: need at least two classes");
    require(spec.separation >= 0.0, "gen_in_distribution: negative separation");
    require(is_in_distribution(role), "gen_in_distribution: outlier role requested");
    Matrix means = spec.means ? *spec.means : default_blob_means(spec);
    require(means.rows == spec.classes && means.cols == spec.dim,
            "gen_in_distribution: class-mean matrix has wrong shape");

    Rng rng(spec.seed);
    Dataset d;
    d.role = role;
    d.family = to_string(spec.family);
    d.features = Matrix(spec.count, spec.dim);
    d.labels.resize(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const std::size_t c = i % spec.classes;
        d.labels[i] = static_cast<int>(c);
        double* x = d.features.row(i);
        const double* mu = means.row(c);
        for (std::size_t j = 0; j < spec.dim; ++j) x[j] = mu[j] + spec.scale * rng.normal();
    }
    return d;
}

namespace detail {

inline void arithmetic_mean_rows(const Matrix& base, std::size_t i, std::size_t j,
                                 double* out) {
    for (std::size_t c = 0; c < base.cols; ++c) out[c] = 0.5 * (base(i, c) + base(j, c));
}

// sign(a*b) * sqrt(|a*b|) per coordinate.
inline void geometric_mean_rows(const Matrix& base, std::size_t i, std::size_t j,
                                double* out) {
    for (std::size_t c = 0; c < base.cols; ++c) {
        const double prod = base(i, c) * base(j, c);
        const double s = prod > 0.0 ? 1.0 : (prod < 0.0 ? -1.0 : 0.0);
        out[c] = s * std::sqrt(std::fabs(prod));
    }
}

inline bool is_identity(const std::vector<std::size_t>& perm) {
    for (std::size_t i = 0; i < perm.size(); ++i)
        if (perm[i] != i) return false;
    return true;
}

}  // namespace detail

// Unlabeled outlier set. Derived families (arithmetic_mean, geometric_mean,
// permuted) require a base dataset with the same dimensionality.
inline Dataset gen_ood(const SynthSpec& spec, DatasetRole role = DatasetRole::out_test,
                       const Dataset* base = nullptr) {
    validate_spec_common(spec);
    require(spec.family != Family::gaussian_blobs,
            "gen_ood: gaussian_blobs is the in-distribution family");
    require(!is_in_distribution(role), "gen_ood: in-distribution role requested");
    if (is_derived_family(spec.family)) {
        require(base != nullptr, "gen_ood: derived family needs a base dataset");
        require(base->features.rows >= 1, "gen_ood: empty base dataset");
        require(base->features.cols == spec.dim, "gen_ood: base dimensionality mismatch");
    }

    Rng rng(spec.seed);
    Dataset d;
    d.role = role;
    d.family = to_string(spec.family);
    d.features = Matrix(spec.count, spec.dim);

    switch (spec.family) {
        case Family::gaussian_noise:
            for (double& v : d.features.data) v = spec.scale * rng.normal();
            break;
        case Family::uniform_noise:
            for (double& v : d.features.data) v = rng.uniform(-spec.scale, spec.scale);
            break;
        case Family::bernoulli:
            for (double& v : d.features.data)
                v = spec.scale * (rng.uniform() < 0.5 ? 0.0 : 1.0);
            break;
        case Family::rademacher:
            for (double& v : d.features.data)
                v = spec.scale * (rng.uniform() < 0.5 ? -1.0 : 1.0);
            break;
        case Family::blobs_edges: {
            // Step vectors: a low and a high plateau separated at a random cut.
            require(spec.dim >= 2, "gen_ood: blobs_edges needs dim >= 2");
            for (std::size_t i = 0; i < spec.count; ++i) {
                double* x = d.features.row(i);
                const std::size_t cut = 1 + rng.index(spec.dim - 1);
                const double a = spec.scale * (rng.uniform() < 0.5 ? -1.0 : 1.0);
                const double b = -a;
                for (std::size_t j = 0; j < spec.dim; ++j) {
                    const double level = j < cut ? a : b;
                    x[j] = level + 0.1 * spec.scale * rng.normal();
                }
            }
            break;
        }
        case Family::arithmetic_mean:
            for (std::size_t i = 0; i < spec.count; ++i) {
                const std::size_t r1 = rng.index(base->features.rows);
                const std::size_t r2 = rng.index(base->features.rows);
                detail::arithmetic_mean_rows(base->features, r1, r2, d.features.row(i));
            }
            break;
        case Family::geometric_mean:
            for (std::size_t i = 0; i < spec.count; ++i) {
                const std::size_t r1 = rng.index(base->features.rows);
                const std::size_t r2 = rng.index(base->features.rows);
                detail::geometric_mean_rows(base->features, r1, r2, d.features.row(i));
            }
            break;
        case Family::permuted: {
            require(spec.dim >= 2, "gen_ood: permuted needs dim >= 2");
            std::vector<std::size_t> perm;
            do {
                perm = rng.permutation(spec.dim);
            } while (detail::is_identity(perm));
            for (std::size_t i = 0; i < spec.count; ++i) {
                const double* src = base->features.row(i % base->features.rows);
                double* dst = d.features.row(i);
                for (std::size_t j = 0; j < spec.dim; ++j) dst[j] = src[perm[j]];
            }
            break;
        }
        case Family::gaussian_blobs:
            break;  // rejected above
    }
    return d;
}

// Which outlier family feeds which role. The auxiliary-exposure family must
// never appear among the evaluation families, and validation families must
// not leak into the test list.
struct RoleAssignment {
    Family oe = Family::uniform_noise;
    std::vector<Family> val{Family::arithmetic_mean, Family::permuted};
    std::vector<Family> test{Family::gaussian_noise, Family::rademacher,
                             Family::bernoulli, Family::geometric_mean};
};

inline void validate_roles(const RoleAssignment& ra) {
    std::vector<Family> all;
    all.push_back(ra.oe);
    all.insert(all.end(), ra.val.begin(), ra.val.end());
    all.insert(all.end(), ra.test.begin(), ra.test.end());
    require(!ra.val.empty() && !ra.test.empty(),
            "role assignment: validation and test lists must be nonempty");
    std::vector<Family> sorted = all;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
            "role assignment: a family appears in more than one role");
    require(sorted.size() >= 3, "role assignment: need at least three families");
    for (Family f : all)
        require(f != Family::gaussian_blobs,
                "role assignment: gaussian_blobs is reserved for the in-distribution");
}

inline RoleAssignment default_roles() { return RoleAssignment{}; }

}  // namespace oodkit
