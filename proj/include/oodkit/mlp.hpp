#pragma once
// Small dense feed-forward softmax classifier with exact hand-derived
// gradients. The forward pass records every layer's pre- and post-activation
// values so that downstream feature-based scoring can reuse them, and the
// backward pass optionally accepts adjoints injected at any layer's output
// (needed when a loss is defined on intermediate features rather than on the
// logits alone).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

namespace oodkit {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

inline std::string to_string(Activation a) {
    return a == Activation::relu ? "relu" : "tanh";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

struct MlpModel {
    std::vector<std::size_t> layer_dims;        // input dim, hidden widths, class count
    std::vector<Matrix> weights;                // weights[l]: layer_dims[l] x layer_dims[l+1]
    std::vector<std::vector<double>> biases;    // biases[l]: layer_dims[l+1]
    Activation activation = Activation::relu;

    std::size_t depth() const { return weights.size(); }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }
};

// Fan-in scaled uniform initialization; biases start at zero.
inline MlpModel make_mlp(const std::vector<std::size_t>& layer_dims, Activation act, Rng& rng) {
    require(layer_dims.size() >= 2, "make_mlp: need at least input and output dims");
    for (std::size_t d : layer_dims) require(d >= 1, "make_mlp: zero layer width");
    MlpModel m;
    m.layer_dims = layer_dims;
    m.activation = act;
    for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
        const std::size_t fan_in = layer_dims[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        Matrix w(layer_dims[l], layer_dims[l + 1]);
        for (double& v : w.data) v = rng.uniform(-limit, limit);
        m.weights.push_back(std::move(w));
        m.biases.emplace_back(layer_dims[l + 1], 0.0);
    }
    return m;
}

struct ForwardTrace {
    Matrix input;               // the batch the trace was produced from
    std::vector<Matrix> pre;    // pre[l]: affine output of layer l
    std::vector<Matrix> post;   // post[l]: activation(pre[l]); last layer is identity

    const Matrix& logits() const { return post.back(); }
};

namespace detail {

inline Matrix apply_activation(const Matrix& z, Activation act) {
    Matrix out = z;
    if (act == Activation::relu) {
        for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    } else {
        for (double& v : out.data) v = std::tanh(v);
    }
    return out;
}

}  // namespace detail

inline ForwardTrace forward(const MlpModel& model, const Matrix& batch) {
    require(batch.cols == model.input_dim(), "forward: batch width != model input dim");
    require(batch.rows >= 1, "forward: empty batch");
    ForwardTrace t;
    t.input = batch;
    const Matrix* cur = &t.input;
    const std::size_t depth = model.depth();
    for (std::size_t l = 0; l < depth; ++l) {
        Matrix z = matmul(*cur, model.weights[l]);
        const std::vector<double>& b = model.biases[l];
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* zr = z.row(i);
            for (std::size_t j = 0; j < z.cols; ++j) zr[j] += b[j];
        }
        if (l + 1 == depth) {
            t.pre.push_back(z);
            t.post.push_back(std::move(z));  // output layer stays linear
        } else {
            t.post.push_back(detail::apply_activation(z, model.activation));
            t.pre.push_back(std::move(z));
        }
        cur = &t.post.back();
    }
    if (!t.logits().all_finite())
        throw std::runtime_error("forward: non-finite logits (diverged parameters?)");
    return t;
}

// Row-wise softmax with max-shift; every row sums to 1 and stays finite for
// any finite logits.
inline Matrix softmax(const Matrix& logits) {
    require(!logits.empty(), "softmax: empty input");
    Matrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zr = logits.row(i);
        double mx = zr[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, zr[j]);
        double denom = 0.0;
        double* orow = out.row(i);
        for (std::size_t j = 0; j < logits.cols; ++j) {
            orow[j] = std::exp(zr[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < logits.cols; ++j) orow[j] /= denom;
    }
    return out;
}

inline Matrix log_softmax(const Matrix& logits) {
    require(!logits.empty(), "log_softmax: empty input");
    Matrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* zr = logits.row(i);
        double mx = zr[0];
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, zr[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) denom += std::exp(zr[j] - mx);
        const double lse = mx + std::log(denom);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < logits.cols; ++j) orow[j] = zr[j] - lse;
    }
    return out;
}

struct ModelGrads {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
    Matrix input;  // gradient with respect to the input batch
};

// Backpropagate adjoints injected at the recorded post-activation outputs.
// feature_grads[l] is the adjoint on trace.post[l]; an empty matrix means no
// contribution at that layer. The common logits-only case passes a single
// nonempty entry at the last layer.
inline ModelGrads backward_features(const MlpModel& model, const ForwardTrace& trace,
                                    const std::vector<Matrix>& feature_grads) {
    const std::size_t depth = model.depth();
    require(trace.post.size() == depth, "backward_features: trace depth mismatch");
    require(feature_grads.size() == depth, "backward_features: need one adjoint slot per layer");
    for (std::size_t l = 0; l < depth; ++l) {
        if (feature_grads[l].empty()) continue;
        require(feature_grads[l].rows == trace.post[l].rows &&
                    feature_grads[l].cols == trace.post[l].cols,
                "backward_features: adjoint shape mismatch");
    }

    ModelGrads g;
    g.weights.resize(depth);
    g.biases.resize(depth);

    Matrix g_post;  // adjoint on post[l] for the layer being processed
    if (!feature_grads[depth - 1].empty()) {
        g_post = feature_grads[depth - 1];
    } else {
        g_post = Matrix(trace.post[depth - 1].rows, trace.post[depth - 1].cols, 0.0);
    }

    for (std::size_t l = depth; l-- > 0;) {
        Matrix g_z;
        if (l + 1 == depth) {
            g_z = std::move(g_post);  // output layer is linear
        } else {
            g_z = g_post;
            const Matrix& pre = trace.pre[l];
            const Matrix& post = trace.post[l];
            if (model.activation == Activation::relu) {
                for (std::size_t i = 0; i < g_z.data.size(); ++i)
                    if (pre.data[i] <= 0.0) g_z.data[i] = 0.0;
            } else {
                for (std::size_t i = 0; i < g_z.data.size(); ++i)
                    g_z.data[i] *= 1.0 - post.data[i] * post.data[i];
            }
        }
        const Matrix& layer_in = (l == 0) ? trace.input : trace.post[l - 1];
        g.weights[l] = matmul_at_b(layer_in, g_z);
        g.biases[l] = column_sums(g_z);
        Matrix g_prev = matmul_a_bt(g_z, model.weights[l]);
        if (l > 0 && !feature_grads[l - 1].empty()) {
            const Matrix& inj = feature_grads[l - 1];
            for (std::size_t i = 0; i < g_prev.data.size(); ++i) g_prev.data[i] += inj.data[i];
        }
        if (l == 0) {
            g.input = std::move(g_prev);
        } else {
            g_post = std::move(g_prev);
        }
    }
    return g;
}

inline ModelGrads backward(const MlpModel& model, const ForwardTrace& trace,
                           const Matrix& dlogits) {
    std::vector<Matrix> feature_grads(model.depth());
    feature_grads.back() = dlogits;
    return backward_features(model, trace, feature_grads);
}

struct MomentumState {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

inline MomentumState init_momentum(const MlpModel& model) {
    MomentumState s;
    for (std::size_t l = 0; l < model.depth(); ++l) {
        s.weights.emplace_back(model.weights[l].rows, model.weights[l].cols, 0.0);
        s.biases.emplace_back(model.biases[l].size(), 0.0);
    }
    return s;
}

// v <- mu*v + g; theta <- theta - lr*v
inline void sgd_momentum_step(MlpModel& model, const ModelGrads& grads, double lr,
                              MomentumState& state, double momentum) {
    require(grads.weights.size() == model.depth(), "sgd step: grad depth mismatch");
    require(lr >= 0.0 && momentum >= 0.0 && momentum < 1.0, "sgd step: bad hyperparameters");
    for (std::size_t l = 0; l < model.depth(); ++l) {
        Matrix& v = state.weights[l];
        const Matrix& g = grads.weights[l];
        require(v.rows == g.rows && v.cols == g.cols, "sgd step: weight grad shape mismatch");
        for (std::size_t i = 0; i < v.data.size(); ++i) {
            v.data[i] = momentum * v.data[i] + g.data[i];
            model.weights[l].data[i] -= lr * v.data[i];
        }
        std::vector<double>& vb = state.biases[l];
        const std::vector<double>& gb = grads.biases[l];
        require(vb.size() == gb.size(), "sgd step: bias grad shape mismatch");
        for (std::size_t i = 0; i < vb.size(); ++i) {
            vb[i] = momentum * vb[i] + gb[i];
            model.biases[l][i] -= lr * vb[i];
        }
    }
}

// Cosine schedule over a fixed horizon: lr0 at epoch 0, decaying to ~0 at the
// final epoch. Epochs outside [0, total) are a caller bug.
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr0) {
    require(total_epochs >= 1, "cosine_lr: total epochs must be >= 1");
    require(epoch < total_epochs, "cosine_lr: epoch out of range");
    const double frac = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// ---- checkpoint format ----------------------------------------------------
// magic "OODMLP1", u32 layer count, u32 per dim, u8 activation, then per
// layer: weight matrix row-major followed by the bias vector, all doubles.
// Everything is little-endian; round trips are bit exact.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class ByteReader {
public:
    ByteReader(const std::string& buf, std::string what)
        : buf_(buf), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return v;
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
        return std::bit_cast<double>(v);
    }

    bool at_end() const { return pos_ == buf_.size(); }

    void expect_bytes(const char* s, std::size_t n) {
        need(n);
        if (std::memcmp(buf_.data() + pos_, s, n) != 0)
            throw std::runtime_error(what_ + ": bad magic");
        pos_ += n;
    }

private:
    void need(std::size_t n) {
        if (pos_ + n > buf_.size()) throw std::runtime_error(what_ + ": truncated data");
    }

    const std::string& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kModelMagic[] = "OODMLP1";

inline std::string serialize_model(const MlpModel& model) {
    std::string out;
    out.append(kModelMagic, 7);
    detail::put_u32(out, static_cast<std::uint32_t>(model.layer_dims.size()));
    for (std::size_t d : model.layer_dims) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.push_back(static_cast<char>(model.activation));
    for (std::size_t l = 0; l < model.depth(); ++l) {
        for (double v : model.weights[l].data) detail::put_f64(out, v);
        for (double v : model.biases[l]) detail::put_f64(out, v);
    }
    return out;
}

inline MlpModel deserialize_model(const std::string& bytes) {
    detail::ByteReader r(bytes, "model checkpoint");
    r.expect_bytes(kModelMagic, 7);
    const std::uint32_t n_dims = r.u32();
    if (n_dims < 2 || n_dims > 64)
        throw std::runtime_error("model checkpoint: implausible layer count");
    MlpModel m;
    for (std::uint32_t i = 0; i < n_dims; ++i) {
        const std::uint32_t d = r.u32();
        if (d == 0) throw std::runtime_error("model checkpoint: zero layer width");
        m.layer_dims.push_back(d);
    }
    const std::uint8_t act = r.u8();
    if (act > 1) throw std::runtime_error("model checkpoint: unknown activation code");
    m.activation = static_cast<Activation>(act);
    for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
        Matrix w(m.layer_dims[l], m.layer_dims[l + 1]);
        for (double& v : w.data) v = r.f64();
        std::vector<double> b(m.layer_dims[l + 1]);
        for (double& v : b) v = r.f64();
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    if (!r.at_end()) throw std::runtime_error("model checkpoint: trailing bytes");
    return m;
}

inline void save_model(const MlpModel& model, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    const std::string bytes = serialize_model(model);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline MlpModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace oodkit
