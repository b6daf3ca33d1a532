#pragma once
// A dataset is a feature matrix with an experiment role attached. Labels are
// present exactly for the in-distribution roles; auxiliary and evaluation
// outlier sets are unlabeled by construction.

#include <stdexcept>
#include <string>
#include <vector>

#include "matrix.hpp"

namespace oodkit {

enum class DatasetRole { in_train, in_test, out_oe, out_val, out_test };

inline bool is_in_distribution(DatasetRole r) {
    return r == DatasetRole::in_train || r == DatasetRole::in_test;
}

inline std::string to_string(DatasetRole r) {
    switch (r) {
        case DatasetRole::in_train: return "in_train";
        case DatasetRole::in_test: return "in_test";
        case DatasetRole::out_oe: return "out_oe";
        case DatasetRole::out_val: return "out_val";
        case DatasetRole::out_test: return "out_test";
    }
    throw std::invalid_argument("unknown dataset role");
}

inline DatasetRole role_from_string(const std::string& s) {
    if (s == "in_train") return DatasetRole::in_train;
    if (s == "in_test") return DatasetRole::in_test;
    if (s == "out_oe") return DatasetRole::out_oe;
    if (s == "out_val") return DatasetRole::out_val;
    if (s == "out_test") return DatasetRole::out_test;
    throw std::invalid_argument("unknown dataset role: " + s);
}

struct Dataset {
    Matrix features;
    std::vector<int> labels;  // one per row for in-distribution roles, empty otherwise
    DatasetRole role = DatasetRole::in_train;
    std::string family;       // generator family tag; empty for externally loaded data
};

inline void validate_dataset(const Dataset& d) {
    require(d.features.rows >= 1 && d.features.cols >= 1, "dataset: empty feature matrix");
    require(d.features.all_finite(), "dataset: non-finite feature value");
    if (is_in_distribution(d.role)) {
        require(d.labels.size() == d.features.rows,
                "dataset: in-distribution role needs one label per row");
        for (int y : d.labels) require(y >= 0, "dataset: negative label");
    } else {
        require(d.labels.empty(), "dataset: outlier role must be unlabeled");
    }
}

}  // namespace oodkit
