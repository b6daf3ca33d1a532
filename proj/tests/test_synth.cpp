#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "oodkit/synth.hpp"

using namespace oodkit;

TEST_CASE("rademacher coordinates are exactly plus or minus the scale") {
    SynthSpec spec;
    spec.family = Family::rademacher;
    spec.dim = 6;
    spec.count = 500;
    spec.scale = 2.5;
    spec.seed = 1;
    const Dataset d = gen_ood(spec);
    bool saw_pos = false;
    bool saw_neg = false;
    for (double v : d.features.data) {
        REQUIRE((v == 2.5 || v == -2.5));
        (v > 0 ? saw_pos : saw_neg) = true;
    }
    REQUIRE(saw_pos);
    REQUIRE(saw_neg);
    REQUIRE(d.labels.empty());
    REQUIRE(d.family == "rademacher");
}

TEST_CASE("bernoulli coordinates are exactly zero or the scale") {
    SynthSpec spec;
    spec.family = Family::bernoulli;
    spec.dim = 4;
    spec.count = 300;
    spec.scale = 3.0;
    spec.seed = 2;
    const Dataset d = gen_ood(spec);
    for (double v : d.features.data) REQUIRE((v == 0.0 || v == 3.0));
}

TEST_CASE("uniform noise stays inside its box") {
    SynthSpec spec;
    spec.family = Family::uniform_noise;
    spec.dim = 5;
    spec.count = 400;
    spec.scale = 5.0;
    spec.seed = 3;
    const Dataset d = gen_ood(spec);
    double lo = 1e9;
    double hi = -1e9;
    for (double v : d.features.data) {
        REQUIRE(v >= -5.0);
        REQUIRE(v < 5.0);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // actually exercises most of the range
    REQUIRE(lo < -4.0);
    REQUIRE(hi > 4.0);
}

TEST_CASE("pairing a row with itself reproduces it under the arithmetic mean") {
    SynthSpec base_spec;
    base_spec.family = Family::gaussian_blobs;
    base_spec.dim = 4;
    base_spec.count = 10;
    base_spec.seed = 4;
    const Dataset base = gen_in_distribution(base_spec);
    std::vector<double> out(4);
    for (std::size_t i = 0; i < base.features.rows; ++i) {
        detail::arithmetic_mean_rows(base.features, i, i, out.data());
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(out[j] == base.features(i, j));
    }
}

TEST_CASE("signed geometric mean on frozen values") {
    Matrix base(2, 3, 0.0);
    base(0, 0) = 4.0;
    base(0, 1) = -4.0;
    base(0, 2) = 0.0;
    base(1, 0) = 9.0;
    base(1, 1) = 9.0;
    base(1, 2) = 7.0;
    std::vector<double> out(3);
    detail::geometric_mean_rows(base, 0, 1, out.data());
    REQUIRE(out[0] == 6.0);   // sqrt(36), positive product
    REQUIRE(out[1] == -6.0);  // negative product keeps the sign
    REQUIRE(out[2] == 0.0);   // zero annihilates
}

TEST_CASE("derived outlier rows have the same dimensionality as the base") {
    SynthSpec base_spec;
    base_spec.family = Family::gaussian_blobs;
    base_spec.dim = 6;
    base_spec.count = 50;
    base_spec.seed = 5;
    const Dataset base = gen_in_distribution(base_spec);
    for (Family f : {Family::arithmetic_mean, Family::geometric_mean, Family::permuted}) {
        SynthSpec spec;
        spec.family = f;
        spec.dim = 6;
        spec.count = 80;
        spec.seed = 6;
        const Dataset d = gen_ood(spec, DatasetRole::out_val, &base);
        REQUIRE(d.features.rows == 80);
        REQUIRE(d.features.cols == 6);
    }
}

TEST_CASE("permutation keeps the per-dataset value multiset and moves coordinates") {
    SynthSpec base_spec;
    base_spec.family = Family::gaussian_blobs;
    base_spec.dim = 5;
    base_spec.count = 40;
    base_spec.seed = 7;
    const Dataset base = gen_in_distribution(base_spec);

    SynthSpec spec;
    spec.family = Family::permuted;
    spec.dim = 5;
    spec.count = 40;  // one permuted copy of each base row
    spec.seed = 8;
    const Dataset d = gen_ood(spec, DatasetRole::out_test, &base);

    std::vector<double> a = base.features.data;
    std::vector<double> b = d.features.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    REQUIRE(a == b);

    // the permutation is not the identity, so some coordinate moved
    bool moved = false;
    for (std::size_t i = 0; i < d.features.data.size(); ++i)
        if (d.features.data[i] != base.features.data[i]) moved = true;
    REQUIRE(moved);

    // per-row multisets are preserved too (it is a coordinate permutation)
    for (std::size_t i = 0; i < 40; ++i) {
        std::vector<double> ra(base.features.row(i), base.features.row(i) + 5);
        std::vector<double> rb(d.features.row(i), d.features.row(i) + 5);
        std::sort(ra.begin(), ra.end());
        std::sort(rb.begin(), rb.end());
        REQUIRE(ra == rb);
    }
}

TEST_CASE("step vectors hold two opposite plateaus") {
    SynthSpec spec;
    spec.family = Family::blobs_edges;
    spec.dim = 8;
    spec.count = 200;
    spec.scale = 2.0;
    spec.seed = 9;
    const Dataset d = gen_ood(spec);
    for (std::size_t i = 0; i < d.features.rows; ++i) {
        const double* r = d.features.row(i);
        bool saw_pos = false;
        bool saw_neg = false;
        for (std::size_t j = 0; j < 8; ++j) {
            REQUIRE(std::fabs(std::fabs(r[j]) - 2.0) < 1.5);  // near one of the levels
            (r[j] > 0 ? saw_pos : saw_neg) = true;
        }
        REQUIRE(saw_pos);
        REQUIRE(saw_neg);
    }
}

TEST_CASE("class blobs sit at their configured means with balanced labels") {
    SynthSpec spec;
    spec.family = Family::gaussian_blobs;
    spec.dim = 4;
    spec.classes = 3;
    spec.count = 3000;
    spec.separation = 4.0;
    spec.scale = 1.0;
    spec.seed = 10;
    const Dataset d = gen_in_distribution(spec);
    REQUIRE(d.labels.size() == 3000);

    std::map<int, std::size_t> counts;
    for (int y : d.labels) counts[y]++;
    REQUIRE(counts.size() == 3);
    for (const auto& [y, c] : counts) REQUIRE(c == 1000);

    const Matrix means = default_blob_means(spec);
    Matrix emp(3, 4, 0.0);
    for (std::size_t i = 0; i < d.features.rows; ++i) {
        double* er = emp.row(d.labels[i]);
        for (std::size_t j = 0; j < 4; ++j) er[j] += d.features(i, j);
    }
    // standard error is scale/sqrt(1000) ~ 0.032; allow six of those
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 4; ++j)
            REQUIRE(std::fabs(emp(c, j) / 1000.0 - means(c, j)) < 0.2);
}

TEST_CASE("explicit class means override the defaults") {
    SynthSpec spec;
    spec.family = Family::gaussian_blobs;
    spec.dim = 2;
    spec.classes = 2;
    spec.count = 2000;
    spec.scale = 0.5;
    spec.seed = 11;
    Matrix means(2, 2, 0.0);
    means(0, 0) = -7.0;
    means(1, 1) = 9.0;
    spec.means = means;
    const Dataset d = gen_in_distribution(spec);
    double m00 = 0.0;
    double m11 = 0.0;
    for (std::size_t i = 0; i < d.features.rows; ++i) {
        if (d.labels[i] == 0) m00 += d.features(i, 0);
        if (d.labels[i] == 1) m11 += d.features(i, 1);
    }
    REQUIRE(std::fabs(m00 / 1000.0 + 7.0) < 0.15);
    REQUIRE(std::fabs(m11 / 1000.0 - 9.0) < 0.15);
}

TEST_CASE("nearest-mean classification separates well-separated blobs") {
    SynthSpec spec;
    spec.family = Family::gaussian_blobs;
    spec.dim = 4;
    spec.classes = 2;
    spec.count = 2000;
    spec.separation = 6.0;
    spec.seed = 12;
    const Dataset d = gen_in_distribution(spec);
    const Matrix means = default_blob_means(spec);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < d.features.rows; ++i) {
        const double* x = d.features.row(i);
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < 2; ++c) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 4; ++j)
                dist += (x[j] - means(c, j)) * (x[j] - means(c, j));
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        if (static_cast<int>(arg) == d.labels[i]) ++correct;
    }
    REQUIRE(static_cast<double>(correct) / 2000.0 > 0.995);
}

TEST_CASE("generation is a pure function of its parameters") {
    SynthSpec spec;
    spec.family = Family::gaussian_noise;
    spec.dim = 3;
    spec.count = 100;
    spec.seed = 13;
    const Dataset a = gen_ood(spec);
    const Dataset b = gen_ood(spec);
    REQUIRE(a.features.data == b.features.data);
    spec.seed = 14;
    const Dataset c = gen_ood(spec);
    REQUIRE(a.features.data != c.features.data);
}

TEST_CASE("generator argument validation") {
    SynthSpec spec;
    spec.family = Family::gaussian_noise;
    REQUIRE_THROWS_AS(gen_in_distribution(spec), std::invalid_argument);

    spec.family = Family::gaussian_blobs;
    REQUIRE_THROWS_AS(gen_ood(spec), std::invalid_argument);
    REQUIRE_THROWS_AS(gen_in_distribution(spec, DatasetRole::out_test),
                      std::invalid_argument);

    spec.count = 0;
    REQUIRE_THROWS_AS(gen_in_distribution(spec), std::invalid_argument);
    spec.count = 10;
    spec.classes = 1;
    REQUIRE_THROWS_AS(gen_in_distribution(spec), std::invalid_argument);
    spec.classes = 2;
    spec.scale = 0.0;
    REQUIRE_THROWS_AS(gen_in_distribution(spec), std::invalid_argument);
    spec.scale = 1.0;

    SynthSpec derived;
    derived.family = Family::arithmetic_mean;
    derived.dim = 4;
    REQUIRE_THROWS_AS(gen_ood(derived), std::invalid_argument);  // no base
    const Dataset base = gen_in_distribution(spec);
    derived.dim = spec.dim + 1;
    REQUIRE_THROWS_AS(gen_ood(derived, DatasetRole::out_test, &base),
                      std::invalid_argument);  // dimension mismatch
    derived.dim = spec.dim;
    REQUIRE_THROWS_AS(gen_ood(derived, DatasetRole::in_train, &base),
                      std::invalid_argument);  // wrong role
}

TEST_CASE("role assignment validation") {
    RoleAssignment ok = default_roles();
    REQUIRE_NOTHROW(validate_roles(ok));

    RoleAssignment dup = ok;
    dup.test.push_back(dup.oe);
    REQUIRE_THROWS_AS(validate_roles(dup), std::invalid_argument);

    RoleAssignment overlap = ok;
    overlap.val.push_back(overlap.test.front());
    REQUIRE_THROWS_AS(validate_roles(overlap), std::invalid_argument);

    RoleAssignment blob = ok;
    blob.val[0] = Family::gaussian_blobs;
    REQUIRE_THROWS_AS(validate_roles(blob), std::invalid_argument);

    RoleAssignment empty = ok;
    empty.test.clear();
    REQUIRE_THROWS_AS(validate_roles(empty), std::invalid_argument);
}

TEST_CASE("dataset role labeling rules are enforced") {
    Dataset d;
    d.features = Matrix(3, 2, 1.0);
    d.role = DatasetRole::in_train;
    REQUIRE_THROWS_AS(validate_dataset(d), std::invalid_argument);  // labels missing
    d.labels = {0, 1, 0};
    REQUIRE_NOTHROW(validate_dataset(d));
    d.role = DatasetRole::out_test;
    REQUIRE_THROWS_AS(validate_dataset(d), std::invalid_argument);  // labels present
    d.labels.clear();
    REQUIRE_NOTHROW(validate_dataset(d));
    d.features(0, 0) = std::nan("");
    REQUIRE_THROWS_AS(validate_dataset(d), std::invalid_argument);
    REQUIRE(role_from_string(to_string(DatasetRole::out_val)) == DatasetRole::out_val);
    REQUIRE(family_from_string(to_string(Family::blobs_edges)) == Family::blobs_edges);
}
