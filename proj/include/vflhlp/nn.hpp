#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/features.hpp"
#include "vflhlp/matrix.hpp"

namespace vflhlp::nn {

enum class Activation { relu, identity };

/// y = act(x W^T + b), W stored [out_dim x in_dim].
struct DenseLayer {
    Matrix weights;
    std::vector<double> bias;
    Activation activation = Activation::identity;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, Activation act)
        : weights(out, in), bias(out, 0.0), activation(act) {}

    std::size_t in_dim() const { return weights.cols(); }
    std::size_t out_dim() const { return weights.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Uniform Glorot initialization, zero bias.
inline DenseLayer glorot_layer(std::size_t in, std::size_t out, Activation act, Rng& rng) {
    DenseLayer layer(in, out, act);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
    return layer;
}

struct Mlp {
    std::vector<DenseLayer> layers;

    std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

    /// relu on hidden layers, identity on the output layer.
    static Mlp make(std::size_t in, std::span<const std::size_t> hidden, std::size_t out, Rng& rng) {
        Mlp mlp;
        std::size_t prev = in;
        for (std::size_t width : hidden) {
            mlp.layers.push_back(glorot_layer(prev, width, Activation::relu, rng));
            prev = width;
        }
        mlp.layers.push_back(glorot_layer(prev, out, Activation::identity, rng));
        return mlp;
    }

    friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Per-field lookup tables. Row 0 of every table is the reserved "unseen" row,
/// so a field with cardinality c owns c + 1 rows.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::vector<Matrix> tables;

    std::size_t fields() const { return tables.size(); }
    std::size_t output_dim() const { return dim * tables.size(); }

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

/// Architecture of one party encoder h^k.
struct EncoderSpec {
    std::vector<std::size_t> cardinalities;
    std::size_t embed_dim = 8;
    std::size_t num_numerical = 0;
    std::vector<std::size_t> hidden;
    std::size_t out_dim = 16;

    std::size_t input_dim() const { return cardinalities.size() * embed_dim + num_numerical; }

    friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// Embedding lookup followed by an MLP over [embeddings | numerical].
struct Encoder {
    EmbeddingTable embeddings;
    std::size_t num_numerical = 0;
    Mlp mlp;

    std::size_t input_dim() const { return embeddings.output_dim() + num_numerical; }
    std::size_t out_dim() const { return mlp.out_dim(); }

    friend bool operator==(const Encoder&, const Encoder&) = default;
};

inline Encoder make_encoder(const EncoderSpec& spec, Rng& rng) {
    Encoder enc;
    enc.embeddings.dim = spec.embed_dim;
    for (std::size_t card : spec.cardinalities) {
        Matrix table(card + 1, spec.embed_dim);
        for (double& v : table.values()) v = rng.uniform(-0.05, 0.05);
        enc.embeddings.tables.push_back(std::move(table));
    }
    enc.num_numerical = spec.num_numerical;
    enc.mlp = Mlp::make(spec.input_dim(), spec.hidden, spec.out_dim, rng);
    return enc;
}

// ---------------------------------------------------------------------------
// Parameter visitation. f(name, shape, span) is called once per tensor in a
// fixed order; the same order is used by optimizers and checkpoints.

template <typename L, typename F>
    requires std::same_as<std::remove_const_t<L>, DenseLayer>
void visit_tensors(L& layer, const std::string& prefix, F&& f) {
    f(prefix + "weight", std::vector<std::size_t>{layer.weights.rows(), layer.weights.cols()}, layer.weights.values());
    f(prefix + "bias", std::vector<std::size_t>{layer.bias.size()}, std::span(layer.bias));
}

template <typename M, typename F>
    requires std::same_as<std::remove_const_t<M>, Mlp>
void visit_tensors(M& mlp, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
        visit_tensors(mlp.layers[i], prefix + "layer" + std::to_string(i) + ".", f);
    }
}

template <typename E, typename F>
    requires std::same_as<std::remove_const_t<E>, Encoder>
void visit_tensors(E& enc, const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < enc.embeddings.tables.size(); ++i) {
        auto& t = enc.embeddings.tables[i];
        f(prefix + "embedding" + std::to_string(i), std::vector<std::size_t>{t.rows(), t.cols()}, t.values());
    }
    visit_tensors(enc.mlp, prefix + "mlp.", f);
}

template <typename M>
std::vector<std::span<double>> parameter_spans(M& model) {
    std::vector<std::span<double>> out;
    visit_tensors(model, "", [&](const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
        out.push_back(v);
    });
    return out;
}

template <typename M>
std::vector<std::span<const double>> parameter_spans(const M& model) {
    std::vector<std::span<const double>> out;
    visit_tensors(model, "", [&](const std::string&, const std::vector<std::size_t>&, std::span<const double> v) {
        out.push_back(v);
    });
    return out;
}

template <typename M>
std::size_t parameter_count(const M& model) {
    std::size_t n = 0;
    for (auto s : parameter_spans(model)) n += s.size();
    return n;
}

template <typename M>
M zeros_like(const M& model) {
    M out = model;
    for (auto s : parameter_spans(out)) std::fill(s.begin(), s.end(), 0.0);
    return out;
}

template <typename M>
std::vector<double> flatten(const M& model) {
    std::vector<double> out;
    out.reserve(parameter_count(model));
    for (auto s : parameter_spans(model)) out.insert(out.end(), s.begin(), s.end());
    return out;
}

/// dst += alpha * src, tensor by tensor.
template <typename M>
void add_scaled(M& dst, const M& src, double alpha) {
    auto d = parameter_spans(dst);
    auto s = parameter_spans(src);
    if (d.size() != s.size()) throw SchemaError("add_scaled: tensor count mismatch");
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d[i].size() != s[i].size()) throw SchemaError("add_scaled: tensor shape mismatch");
        axpy(alpha, s[i], d[i]);
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename Model>
struct GradBundle {
    Model params;
    Matrix input;
};

using MlpGrad = GradBundle<Mlp>;
using EncoderGrad = GradBundle<Encoder>;

struct MlpTape {
    // activations[0] is the input, activations[i + 1] the output of layer i.
    std::vector<Matrix> activations;
};

inline Matrix forward(const DenseLayer& layer, const Matrix& x) {
    if (x.cols() != layer.in_dim()) {
        throw SchemaError("dense layer expects " + std::to_string(layer.in_dim()) + " inputs, got " +
                          std::to_string(x.cols()));
    }
    Matrix y(x.rows(), layer.out_dim());
    for (std::size_t n = 0; n < x.rows(); ++n) {
        auto xin = x.row(n);
        auto yout = y.row(n);
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
            double v = layer.bias[o] + dot(layer.weights.row(o), xin);
            if (layer.activation == Activation::relu && v < 0.0) v = 0.0;
            yout[o] = v;
        }
    }
    return y;
}

inline Matrix forward(const Mlp& mlp, const Matrix& x, MlpTape* tape = nullptr) {
    if (tape) {
        tape->activations.clear();
        tape->activations.reserve(mlp.layers.size() + 1);
        tape->activations.push_back(x);
    }
    Matrix h = x;
    for (const auto& layer : mlp.layers) {
        h = forward(layer, h);
        if (tape) tape->activations.push_back(h);
    }
    return h;
}

inline MlpGrad backward(const Mlp& mlp, const MlpTape& tape, const Matrix& upstream) {
    if (tape.activations.size() != mlp.layers.size() + 1) throw SchemaError("backward: tape does not match model");
    const Matrix& out = tape.activations.back();
    if (!upstream.same_shape(out)) {
        throw SchemaError("backward: upstream " + upstream.shape_string() + " vs output " + out.shape_string());
    }
    MlpGrad grad{zeros_like(mlp), {}};
    Matrix delta = upstream;
    for (std::size_t li = mlp.layers.size(); li-- > 0;) {
        const DenseLayer& layer = mlp.layers[li];
        const Matrix& input = tape.activations[li];
        const Matrix& output = tape.activations[li + 1];
        if (layer.activation == Activation::relu) {
            auto d = delta.values();
            auto o = output.values();
            for (std::size_t i = 0; i < d.size(); ++i) {
                if (o[i] <= 0.0) d[i] = 0.0;
            }
        }
        DenseLayer& g = grad.params.layers[li];
        Matrix dx(input.rows(), input.cols());
        for (std::size_t n = 0; n < input.rows(); ++n) {
            auto drow = delta.row(n);
            auto xrow = input.row(n);
            auto dxrow = dx.row(n);
            for (std::size_t o = 0; o < layer.out_dim(); ++o) {
                const double d = drow[o];
                if (d == 0.0) continue;
                g.bias[o] += d;
                axpy(d, xrow, g.weights.row(o));
                axpy(d, layer.weights.row(o), dxrow);
            }
        }
        delta = std::move(dx);
    }
    grad.input = std::move(delta);
    return grad;
}

struct EncoderTape {
    std::vector<std::uint32_t> codes;  // clamped categorical codes, rows x fields
    std::size_t rows = 0;
    MlpTape mlp;
};

/// Embedded input [emb(field 0) | ... | emb(field F-1) | numerical].
/// Codes beyond a table's range map to the reserved row 0.
inline Matrix embed(const Encoder& enc, const FeatureBlock& batch, std::vector<std::uint32_t>* codes = nullptr) {
    if (batch.num_categorical != enc.embeddings.fields() || batch.num_numerical() != enc.num_numerical) {
        throw SchemaError("encoder expects " + std::to_string(enc.embeddings.fields()) + " categorical + " +
                          std::to_string(enc.num_numerical) + " numerical fields, batch has " +
                          std::to_string(batch.num_categorical) + " + " + std::to_string(batch.num_numerical()));
    }
    const std::size_t dim = enc.embeddings.dim;
    const std::size_t fields = enc.embeddings.fields();
    Matrix x(batch.rows, enc.input_dim());
    if (codes) codes->assign(batch.rows * fields, 0);
    for (std::size_t r = 0; r < batch.rows; ++r) {
        auto dst = x.row(r);
        for (std::size_t f = 0; f < fields; ++f) {
            const Matrix& table = enc.embeddings.tables[f];
            std::uint32_t code = batch.cat(r, f);
            if (code >= table.rows()) code = 0;
            if (codes) (*codes)[r * fields + f] = code;
            auto src = table.row(code);
            std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(f * dim));
        }
        auto num = batch.numerical.row(r);
        std::copy(num.begin(), num.end(), dst.begin() + static_cast<std::ptrdiff_t>(fields * dim));
    }
    return x;
}

inline Matrix forward(const Encoder& enc, const FeatureBlock& batch, EncoderTape* tape = nullptr) {
    if (tape) {
        tape->rows = batch.rows;
        Matrix x = embed(enc, batch, &tape->codes);
        return forward(enc.mlp, x, &tape->mlp);
    }
    return forward(enc.mlp, embed(enc, batch));
}

inline EncoderGrad backward(const Encoder& enc, const EncoderTape& tape, const Matrix& upstream) {
    MlpGrad mg = backward(enc.mlp, tape.mlp, upstream);
    EncoderGrad grad;
    grad.params.embeddings.dim = enc.embeddings.dim;
    grad.params.num_numerical = enc.num_numerical;
    for (const auto& t : enc.embeddings.tables) grad.params.embeddings.tables.emplace_back(t.rows(), t.cols());
    grad.params.mlp = std::move(mg.params);
    const std::size_t dim = enc.embeddings.dim;
    const std::size_t fields = enc.embeddings.fields();
    for (std::size_t r = 0; r < tape.rows; ++r) {
        auto drow = mg.input.row(r);
        for (std::size_t f = 0; f < fields; ++f) {
            auto dst = grad.params.embeddings.tables[f].row(tape.codes[r * fields + f]);
            axpy(1.0, drow.subspan(f * dim, dim), dst);
        }
    }
    grad.input = std::move(mg.input);
    return grad;
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad;  // d loss / d logit
};

/// Mean binary cross-entropy on logits, log-sum-exp stable.
inline LossResult bce_with_logits(std::span<const double> logits, std::span<const int> labels) {
    if (logits.empty()) throw TrainingError("bce_with_logits: empty batch");
    if (logits.size() != labels.size()) throw SchemaError("bce_with_logits: logits/labels length mismatch");
    const double n = static_cast<double>(logits.size());
    LossResult out;
    out.grad.resize(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits[i];
        const int y = labels[i];
        if (y != 0 && y != 1) throw SchemaError("bce_with_logits: labels must be 0 or 1");
        total += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
        out.grad[i] = (sigmoid(l) - y) / n;
    }
    out.loss = total / n;
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

/// Adam moments; shapes mirror the parameter tensors once the first step ran.
struct AdamState {
    std::vector<std::vector<double>> first;
    std::vector<std::vector<double>> second;
    std::uint64_t step = 0;
};

class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

    const OptimizerConfig& config() const { return config_; }
    const AdamState& state() const { return state_; }
    std::uint64_t steps() const { return state_.step; }

    /// Fails fast on non-finite gradients; parameters are left untouched then.
    void step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads) {
        if (params.size() != grads.size()) throw SchemaError("optimizer: parameter/gradient count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].size() != grads[i].size()) throw SchemaError("optimizer: tensor shape mismatch");
            if (!all_finite(grads[i])) throw TrainingError("optimizer: non-finite gradient");
        }
        if (state_.first.empty()) {
            for (auto p : params) {
                state_.first.emplace_back(p.size(), 0.0);
                state_.second.emplace_back(p.size(), 0.0);
            }
        } else if (state_.first.size() != params.size()) {
            throw SchemaError("optimizer: parameter set changed between steps");
        }
        ++state_.step;
        if (config_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) axpy(-config_.lr, grads[i], params[i]);
            return;
        }
        const double t = static_cast<double>(state_.step);
        const double c1 = 1.0 - std::pow(config_.beta1, t);
        const double c2 = 1.0 - std::pow(config_.beta2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& m = state_.first[i];
            auto& v = state_.second[i];
            auto p = params[i];
            auto g = grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
                v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
                const double mhat = m[j] / c1;
                const double vhat = v[j] / c2;
                p[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
        }
    }

    template <typename M>
    void step(M& model, const M& grad) {
        auto p = parameter_spans(model);
        auto g = parameter_spans(grad);
        step(std::span<const std::span<double>>(p), std::span<const std::span<const double>>(g));
    }

private:
    OptimizerConfig config_;
    AdamState state_;
};

// ---------------------------------------------------------------------------
// Gradient checking

inline constexpr double kGradCheckFloor = 1e-6;

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = kGradCheckFloor) {
    if (analytic.size() != numeric.size()) throw SchemaError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

/// Central differences of `loss` w.r.t. every entry of `params`, perturbed in place.
inline std::vector<double> numeric_gradient(std::span<const std::span<double>> params,
                                            const std::function<double()>& loss, double eps) {
    std::vector<double> out;
    for (auto p : params) {
        for (double& v : p) {
            const double saved = v;
            v = saved + eps;
            const double up = loss();
            v = saved - eps;
            const double down = loss();
            v = saved;
            out.push_back((up - down) / (2.0 * eps));
        }
    }
    return out;
}

/// Compares the analytic BCE gradient of an encoder whose output is a single
/// logit against central differences. `tamper` may corrupt the flattened
/// analytic gradient before comparison.
inline double grad_check(Encoder model, const FeatureBlock& batch, std::span<const int> labels, double eps,
                         const std::function<void(std::vector<double>&)>& tamper = {}) {
    if (model.out_dim() != 1) throw SchemaError("grad_check: model must produce one logit");
    EncoderTape tape;
    Matrix logits = forward(model, batch, &tape);
    LossResult loss = bce_with_logits(logits.values(), labels);
    Matrix upstream(logits.rows(), 1);
    std::copy(loss.grad.begin(), loss.grad.end(), upstream.values().begin());
    std::vector<double> analytic = flatten(backward(model, tape, upstream).params);
    if (tamper) tamper(analytic);

    auto params = parameter_spans(model);
    auto numeric = numeric_gradient(params, [&] {
        return bce_with_logits(forward(model, batch).values(), labels).loss;
    }, eps);
    return max_relative_error(analytic, numeric);
}

}  // namespace vflhlp::nn
