#pragma once
// File plumbing: CSV round-trips with full double precision, a flat
// key=value config format, atomic file replacement, a stable config hash,
// and the seeded index partition used to hold out normalization data.

#include <algorithm>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace oodkit {

// Shortest-precision-preserving decimal form of a double (17 significant
// digits round-trip exactly).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(what + ": not a number: '" + s + "'");
    }
}

// ---- atomic writes ----------------------------------------------------------

// Write to a sibling temp file, then rename over the target, so an
// interrupted run never leaves a partial file at the destination.
inline void atomic_write_file(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        f.flush();
        if (!f) throw std::runtime_error("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw std::runtime_error("rename failed for " + path + ": " + ec.message());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---- dataset CSV ------------------------------------------------------------

// Labeled datasets carry a leading "label" column; unlabeled ones are pure
// feature columns. Values are written with round-trip precision so that
// save/load is lossless bit for bit.
inline std::string dataset_to_csv(const Dataset& d) {
    validate_dataset(d);
    std::string out;
    const bool labeled = !d.labels.empty();
    if (labeled) out += "label";
    for (std::size_t j = 0; j < d.features.cols; ++j) {
        if (labeled || j > 0) out += ',';
        out += 'x';
        out += std::to_string(j);
    }
    out += '\n';
    for (std::size_t i = 0; i < d.features.rows; ++i) {
        if (labeled) out += std::to_string(d.labels[i]);
        const double* r = d.features.row(i);
        for (std::size_t j = 0; j < d.features.cols; ++j) {
            if (labeled || j > 0) out += ',';
            out += format_double(r[j]);
        }
        out += '\n';
    }
    return out;
}

inline Dataset dataset_from_csv(const std::string& text, DatasetRole role,
                                const std::string& family = "") {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset csv: empty file");
    const std::vector<std::string> header = split(trim(line), ',');
    require(!header.empty(), "dataset csv: empty header");
    const bool labeled = header.front() == "label";
    const std::size_t dim = labeled ? header.size() - 1 : header.size();
    require(dim >= 1, "dataset csv: no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const std::vector<std::string> cells = split(t, ',');
        if (cells.size() != header.size())
            throw std::runtime_error("dataset csv: row " + std::to_string(rows + 1) +
                                     " has " + std::to_string(cells.size()) +
                                     " cells, expected " + std::to_string(header.size()));
        std::size_t start = 0;
        if (labeled) {
            const double raw = parse_double(cells[0], "dataset csv label");
            const int y = static_cast<int>(raw);
            if (static_cast<double>(y) != raw || y < 0)
                throw std::runtime_error("dataset csv: bad label '" + cells[0] + "'");
            labels.push_back(y);
            start = 1;
        }
        for (std::size_t c = start; c < cells.size(); ++c)
            values.push_back(parse_double(cells[c], "dataset csv value"));
        ++rows;
    }
    if (rows == 0) throw std::runtime_error("dataset csv: no data rows");

    Dataset d;
    d.role = role;
    d.family = family;
    d.features = Matrix(rows, dim);
    d.features.data = std::move(values);
    if (is_in_distribution(role)) {
        if (!labeled)
            throw std::runtime_error("dataset csv: role needs labels but none present");
        d.labels = std::move(labels);
    } else if (labeled) {
        throw std::runtime_error("dataset csv: outlier role but label column present");
    }
    validate_dataset(d);
    return d;
}

// Plain feature matrix (no label column expected).
inline Matrix matrix_from_csv(const std::string& text) {
    Dataset d = dataset_from_csv(text, DatasetRole::out_test);
    return std::move(d.features);
}

// ---- flat key=value config --------------------------------------------------

using Config = std::map<std::string, std::string>;

inline Config parse_config(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
        cfg[key] = val;
    }
    return cfg;
}

inline std::string config_get(const Config& cfg, const std::string& key,
                              const std::string& fallback) {
    const auto it = cfg.find(key);
    return it == cfg.end() ? fallback : it->second;
}

inline double config_get_double(const Config& cfg, const std::string& key, double fallback) {
    const auto it = cfg.find(key);
    return it == cfg.end() ? fallback : parse_double(it->second, "config " + key);
}

inline std::uint64_t config_get_u64(const Config& cfg, const std::string& key,
                                    std::uint64_t fallback) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw std::runtime_error("config " + key + ": not an integer: '" + it->second + "'");
    }
}

inline std::vector<double> config_get_doubles(const Config& cfg, const std::string& key,
                                              const std::vector<double>& fallback) {
    const auto it = cfg.find(key);
    if (it == cfg.end()) return fallback;
    std::vector<double> out;
    for (const std::string& cell : split(it->second, ','))
        out.push_back(parse_double(trim(cell), "config " + key));
    return out;
}

// Canonical text of a config: sorted key=value lines. The hash of this text
// is embedded in every output so results can be traced to their settings.
inline std::string canonical_config(const Config& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string config_hash(const Config& cfg) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(canonical_config(cfg)));
    return buf;
}

// ---- seeded partition -------------------------------------------------------

// Deterministic held-out subset: a seeded shuffle of [0, n) truncated to
// round(fraction * n), clamped to at least one and at most n - 1 so both
// sides stay nonempty. Returned sorted.
inline std::vector<std::size_t> validation_partition(std::size_t n, double fraction,
                                                     std::uint64_t seed) {
    require(n >= 2, "validation_partition: need at least two rows");
    require(fraction > 0.0 && fraction < 1.0, "validation_partition: fraction outside (0,1)");
    Rng rng(seed, 777);
    std::vector<std::size_t> idx = rng.permutation(n);
    std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    k = std::max<std::size_t>(1, std::min(k, n - 1));
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline std::vector<std::size_t> complement_indices(std::size_t n,
                                                   const std::vector<std::size_t>& part) {
    std::vector<bool> taken(n, false);
    for (std::size_t i : part) {
        require(i < n, "complement_indices: index out of range");
        taken[i] = true;
    }
    std::vector<std::size_t> out;
    out.reserve(n - part.size());
    for (std::size_t i = 0; i < n; ++i)
        if (!taken[i]) out.push_back(i);
    return out;
}

}  // namespace oodkit
