#pragma once
// JSON forms for fitted detector state and metric reports. Object keys are
// emitted in sorted order and doubles in shortest round-trip form, so equal
// state always serializes to identical bytes.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gram.hpp"
#include "mahalanobis.hpp"
#include "matrix.hpp"
#include "metrics.hpp"

namespace oodkit {

using Json = nlohmann::json;

inline Json parse_json(const std::string& text, const std::string& what) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(what + ": invalid JSON");
    return j;
}

inline Json matrix_to_json(const Matrix& m) {
    Json rows = Json::array();
    for (std::size_t i = 0; i < m.rows; ++i) {
        Json row = Json::array();
        for (std::size_t j = 0; j < m.cols; ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw std::runtime_error(what + ": expected rows");
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
    if (cols == 0) throw std::runtime_error(what + ": empty row");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        const Json& row = j[i];
        if (!row.is_array() || row.size() != cols)
            throw std::runtime_error(what + ": ragged rows");
        for (std::size_t c = 0; c < cols; ++c) {
            if (!row[c].is_number()) throw std::runtime_error(what + ": non-numeric cell");
            m(i, c) = row[c].get<double>();
        }
    }
    return m;
}

// ---- class-conditional Gaussian state ----------------------------------------

inline Json gaussian_stats_to_json(const GaussianStats& s) {
    Json layers = Json::array();
    for (std::size_t l = 0; l < s.layer_count(); ++l) {
        Json layer;
        layer["means"] = matrix_to_json(s.means[l]);
        layer["covariance"] = matrix_to_json(s.covariance[l]);
        layer["precision"] = matrix_to_json(s.precision[l]);
        layers.push_back(std::move(layer));
    }
    Json j;
    j["kind"] = "mahalanobis";
    j["classes"] = s.classes;
    j["layers"] = std::move(layers);
    return j;
}

inline GaussianStats gaussian_stats_from_json(const Json& j) {
    if (!j.is_object() || j.value("kind", "") != "mahalanobis")
        throw std::runtime_error("detector state: not a mahalanobis record");
    GaussianStats s;
    s.classes = j.at("classes").get<std::size_t>();
    if (s.classes < 2) throw std::runtime_error("detector state: bad class count");
    for (const Json& layer : j.at("layers")) {
        s.means.push_back(matrix_from_json(layer.at("means"), "detector means"));
        s.covariance.push_back(
            matrix_from_json(layer.at("covariance"), "detector covariance"));
        s.precision.push_back(matrix_from_json(layer.at("precision"), "detector precision"));
        const Matrix& mu = s.means.back();
        const Matrix& cov = s.covariance.back();
        if (mu.rows != s.classes || cov.rows != cov.cols || cov.cols != mu.cols ||
            s.precision.back().rows != cov.rows || s.precision.back().cols != cov.cols)
            throw std::runtime_error("detector state: inconsistent layer shapes");
    }
    if (s.means.empty()) throw std::runtime_error("detector state: no layers");
    return s;
}

inline Json ensemble_to_json(const EnsembleWeights& e) {
    Json j;
    j["weights"] = e.weights;
    j["bias"] = e.bias;
    j["mean"] = e.mean;
    j["stddev"] = e.stddev;
    j["degenerate"] = e.degenerate;
    return j;
}

inline EnsembleWeights ensemble_from_json(const Json& j) {
    EnsembleWeights e;
    e.weights = j.at("weights").get<std::vector<double>>();
    e.bias = j.at("bias").get<double>();
    e.mean = j.at("mean").get<std::vector<double>>();
    e.stddev = j.at("stddev").get<std::vector<double>>();
    e.degenerate = j.at("degenerate").get<bool>();
    if (e.weights.size() != e.mean.size() || e.mean.size() != e.stddev.size() ||
        e.weights.empty())
        throw std::runtime_error("ensemble state: inconsistent sizes");
    return e;
}

// ---- pairwise-range state -----------------------------------------------------

inline Json gram_to_json(const GramSignature& s) {
    Json j;
    j["kind"] = "gram";
    j["orders"] = s.orders;
    j["classes"] = s.classes;
    j["widths"] = s.widths;
    Json usable = Json::array();
    for (std::uint8_t u : s.usable) usable.push_back(u != 0);
    j["usable"] = std::move(usable);
    j["normalizers"] = s.normalizers;
    Json classes = Json::array();
    for (std::size_t c = 0; c < s.classes; ++c) {
        Json layers = Json::array();
        for (std::size_t l = 0; l < s.layer_count(); ++l) {
            Json orders = Json::array();
            for (std::size_t oi = 0; oi < s.orders.size(); ++oi) {
                Json b;
                b["min"] = s.bounds[c][l][oi].mn;
                b["max"] = s.bounds[c][l][oi].mx;
                orders.push_back(std::move(b));
            }
            layers.push_back(std::move(orders));
        }
        classes.push_back(std::move(layers));
    }
    j["bounds"] = std::move(classes);
    return j;
}

inline GramSignature gram_from_json(const Json& j) {
    if (!j.is_object() || j.value("kind", "") != "gram")
        throw std::runtime_error("detector state: not a gram record");
    GramSignature s;
    s.orders = j.at("orders").get<std::vector<int>>();
    s.classes = j.at("classes").get<std::size_t>();
    s.widths = j.at("widths").get<std::vector<std::size_t>>();
    for (bool u : j.at("usable").get<std::vector<bool>>())
        s.usable.push_back(u ? 1 : 0);
    s.normalizers = j.at("normalizers").get<std::vector<double>>();
    if (s.classes < 2 || s.orders.empty() || s.widths.empty() ||
        s.usable.size() != s.classes)
        throw std::runtime_error("detector state: inconsistent gram header");
    const Json& classes = j.at("bounds");
    if (classes.size() != s.classes) throw std::runtime_error("detector state: bad bounds");
    s.bounds.resize(s.classes);
    for (std::size_t c = 0; c < s.classes; ++c) {
        const Json& layers = classes[c];
        if (layers.size() != s.widths.size())
            throw std::runtime_error("detector state: bad bounds layer count");
        s.bounds[c].resize(s.widths.size());
        for (std::size_t l = 0; l < s.widths.size(); ++l) {
            const Json& orders = layers[l];
            if (orders.size() != s.orders.size())
                throw std::runtime_error("detector state: bad bounds order count");
            s.bounds[c][l].resize(s.orders.size());
            const std::size_t entries = s.widths[l] * (s.widths[l] + 1) / 2;
            for (std::size_t oi = 0; oi < s.orders.size(); ++oi) {
                GramBounds& b = s.bounds[c][l][oi];
                b.mn = orders[oi].at("min").get<std::vector<double>>();
                b.mx = orders[oi].at("max").get<std::vector<double>>();
                if (b.mn.size() != entries || b.mx.size() != entries)
                    throw std::runtime_error("detector state: bad bounds entry count");
            }
        }
    }
    return s;
}

// ---- metric reports ------------------------------------------------------------

inline Json detection_report_to_json(const DetectionReport& r) {
    Json j;
    j["fpr95"] = r.fpr95;
    j["tnr95"] = r.tnr95;
    j["auroc"] = r.auroc_in;
    j["aupr_in"] = r.aupr_in;
    j["aupr_out"] = r.aupr_out;
    j["detection_accuracy"] = r.detection_acc;
    return j;
}

inline Json calibration_report_to_json(const CalibrationReport& r) {
    Json bins = Json::array();
    for (const CalibrationBin& b : r.bins) {
        Json bj;
        bj["count"] = b.count;
        bj["confidence"] = b.mean_confidence;
        bj["accuracy"] = b.accuracy;
        bins.push_back(std::move(bj));
    }
    Json j;
    j["ece"] = r.ece;
    j["mce"] = r.mce;
    j["bins"] = std::move(bins);
    return j;
}

}  // namespace oodkit
