#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "vflhlp/common.hpp"
#include "vflhlp/data.hpp"
#include "vflhlp/features.hpp"
#include "vflhlp/matrix.hpp"
#include "vflhlp/nn.hpp"

namespace vflhlp {

// ---------------------------------------------------------------------------
// Feature corruption

/// Empirical per-field marginals of one party's local features.
struct CorruptionModel {
    double rate = 0.6;
    std::size_t num_categorical = 0;
    // per categorical field: (code, cumulative count), codes ascending
    std::vector<std::vector<std::pair<std::uint32_t, std::size_t>>> categorical_cdf;
    // per numerical field: sorted observed values
    std::vector<std::vector<double>> numerical_sorted;

    bool fitted() const { return !categorical_cdf.empty() || !numerical_sorted.empty(); }
    std::size_t fields() const { return categorical_cdf.size() + numerical_sorted.size(); }

    /// ceil(rate * d), robust to rounding in rate * d.
    std::size_t positions(std::size_t d) const {
        const double raw = rate * static_cast<double>(d);
        const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
        return std::min(k, d);
    }

    static CorruptionModel fit(const FeatureBlock& x, double rate) {
        if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("corruption rate must lie in [0, 1]");
        if (x.rows == 0) throw TrainingError("cannot fit marginals on an empty feature set");
        CorruptionModel m;
        m.rate = rate;
        m.num_categorical = x.num_categorical;
        for (std::size_t f = 0; f < x.num_categorical; ++f) {
            std::vector<std::uint32_t> codes(x.rows);
            for (std::size_t r = 0; r < x.rows; ++r) codes[r] = x.cat(r, f);
            std::sort(codes.begin(), codes.end());
            std::vector<std::pair<std::uint32_t, std::size_t>> cdf;
            for (std::size_t i = 0; i < codes.size(); ++i) {
                if (cdf.empty() || cdf.back().first != codes[i]) cdf.emplace_back(codes[i], 0);
                cdf.back().second = i + 1;
            }
            m.categorical_cdf.push_back(std::move(cdf));
        }
        for (std::size_t f = 0; f < x.num_numerical(); ++f) {
            std::vector<double> v(x.rows);
            for (std::size_t r = 0; r < x.rows; ++r) v[r] = x.numerical(r, f);
            std::sort(v.begin(), v.end());
            m.numerical_sorted.push_back(std::move(v));
        }
        return m;
    }

    /// One draw from field f's empirical marginal.
    double draw(std::size_t f, Rng& rng) const {
        if (f < num_categorical) {
            const auto& cdf = categorical_cdf[f];
            const std::size_t u = rng.below(cdf.back().second);
            auto it = std::upper_bound(cdf.begin(), cdf.end(), u,
                                       [](std::size_t v, const auto& e) { return v < e.second; });
            return static_cast<double>(it->first);
        }
        const auto& sorted = numerical_sorted[f - num_categorical];
        return sorted[rng.below(sorted.size())];
    }
};

struct Corruption {
    FeatureBlock batch;
    std::vector<std::uint8_t> mask;  // rows x fields, 1 = resampled
};

/// Per row, exactly ceil(c * d) uniformly chosen field positions are replaced
/// by independent draws from their marginals; other positions are untouched.
inline Corruption corrupt(const FeatureBlock& x, const CorruptionModel& model, Rng& rng) {
    if (!model.fitted()) throw TrainingError("corrupt: marginals are not fitted");
    const std::size_t d = x.num_fields();
    if (d != model.fields() || x.num_categorical != model.num_categorical) {
        throw SchemaError("corrupt: batch layout does not match the fitted marginals");
    }
    const std::size_t k = model.positions(d);
    Corruption out{x, std::vector<std::uint8_t>(x.rows * d, 0)};
    std::vector<std::size_t> slots = iota_indices(d);
    for (std::size_t r = 0; r < x.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(slots[i], slots[i + rng.below(d - i)]);
            const std::size_t f = slots[i];
            out.mask[r * d + f] = 1;
            out.batch.set_field(r, f, model.draw(f, rng));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Similarity and contrastive loss

inline constexpr double kNormEpsilon = 1e-12;

struct CosineTape {
    Matrix unit_a;
    Matrix unit_b;
    std::vector<double> norm_a;
    std::vector<double> norm_b;
};

namespace detail {

inline void normalize_rows(const Matrix& z, Matrix& unit, std::vector<double>& norms) {
    unit = z;
    norms.resize(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const double n = std::max(std::sqrt(squared_norm(z.row(i))), kNormEpsilon);
        norms[i] = n;
        for (double& v : unit.row(i)) v /= n;
    }
}

/// Gradient through u = z / max(|z|, eps).
inline Matrix normalize_backward(const Matrix& unit, const std::vector<double>& norms, const Matrix& d_unit) {
    Matrix dz(unit.rows(), unit.cols());
    for (std::size_t i = 0; i < unit.rows(); ++i) {
        const double n = norms[i];
        const bool clamped = n <= kNormEpsilon;
        const double proj = clamped ? 0.0 : dot(d_unit.row(i), unit.row(i));
        auto out = dz.row(i);
        auto du = d_unit.row(i);
        auto u = unit.row(i);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] = (du[j] - proj * u[j]) / n;
    }
    return dz;
}

}  // namespace detail

/// S[i][j] = <a_i, b_j> / (|a_i| |b_j|), each norm guarded by 1e-12.
inline Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b, CosineTape* tape = nullptr) {
    if (a.cols() != b.cols()) throw SchemaError("cosine_similarity_matrix: dimension mismatch");
    CosineTape local;
    CosineTape& t = tape ? *tape : local;
    detail::normalize_rows(a, t.unit_a, t.norm_a);
    detail::normalize_rows(b, t.unit_b, t.norm_b);
    Matrix s(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) s(i, j) = dot(t.unit_a.row(i), t.unit_b.row(j));
    }
    return s;
}

/// Gradients of a scalar w.r.t. a and b given its gradient w.r.t. S.
inline std::pair<Matrix, Matrix> cosine_backward(const CosineTape& t, const Matrix& d_s) {
    Matrix du_a(t.unit_a.rows(), t.unit_a.cols());
    Matrix du_b(t.unit_b.rows(), t.unit_b.cols());
    for (std::size_t i = 0; i < d_s.rows(); ++i) {
        for (std::size_t j = 0; j < d_s.cols(); ++j) {
            const double g = d_s(i, j);
            if (g == 0.0) continue;
            axpy(g, t.unit_b.row(j), du_a.row(i));
            axpy(g, t.unit_a.row(i), du_b.row(j));
        }
    }
    return {detail::normalize_backward(t.unit_a, t.norm_a, du_a),
            detail::normalize_backward(t.unit_b, t.norm_b, du_b)};
}

struct InfoNceResult {
    double loss = 0.0;
    Matrix grad;  // d loss / d S
};

/// L = (1/N) sum_i -log( exp(s_ii / tau) / ((1/N) sum_j exp(s_ij / tau)) ).
/// The 1/N inside the denominator shifts the usual InfoNCE by -log N.
inline InfoNceResult info_nce(const Matrix& s, double tau) {
    if (!(tau > 0.0)) throw ConfigError("info_nce: temperature must be positive");
    if (s.rows() != s.cols() || s.rows() == 0) throw SchemaError("info_nce: S must be a non-empty square matrix");
    const std::size_t n = s.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double log_n = std::log(static_cast<double>(n));
    InfoNceResult out{0.0, Matrix(n, n)};
    for (std::size_t i = 0; i < n; ++i) {
        auto row = s.row(i);
        double m = row[0] / tau;
        for (double v : row) m = std::max(m, v / tau);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v / tau - m);
        const double lse = m + std::log(sum);
        out.loss += -row[i] / tau + lse - log_n;
        auto g = out.grad.row(i);
        for (std::size_t j = 0; j < n; ++j) g[j] = std::exp(row[j] / tau - lse) * inv_n / tau;
        g[i] -= inv_n / tau;
    }
    out.loss *= inv_n;
    return out;
}

struct ContrastiveBatchResult {
    Matrix similarity;
    double temperature = 1.0;
    double loss = 0.0;
    Matrix grad_z;
    Matrix grad_z_tilde;
};

inline ContrastiveBatchResult contrastive_loss(const Matrix& z, const Matrix& z_tilde, double tau) {
    if (!z.same_shape(z_tilde)) throw SchemaError("contrastive_loss: view shapes differ");
    CosineTape tape;
    ContrastiveBatchResult out;
    out.similarity = cosine_similarity_matrix(z, z_tilde, &tape);
    out.temperature = tau;
    InfoNceResult nce = info_nce(out.similarity, tau);
    out.loss = nce.loss;
    std::tie(out.grad_z, out.grad_z_tilde) = cosine_backward(tape, nce.grad);
    return out;
}

// ---------------------------------------------------------------------------
// Passive-party pre-training

struct SslConfig {
    double corruption_rate = 0.6;
    double temperature = 1.0;
    std::size_t epochs = 10;
    std::size_t batch = 128;
    nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-3};
    std::vector<std::size_t> projection_hidden;  // empty = one layer of the encoder width
    std::uint64_t seed = 0;

    friend bool operator==(const SslConfig&, const SslConfig&) = default;
};

struct PassivePretrained {
    std::size_t party = 0;
    nn::Encoder encoder;              // Theta^k; the projection head is discarded
    std::vector<double> loss_trace;   // mean training loss per epoch
    double initial_loss = 0.0;        // fixed evaluation pass before training
    double final_loss = 0.0;          // same pass after training
    // Same passes in the conventional cross-entropy form (paper form + log N
    // per batch), which is non-negative and starts near log N.
    double initial_cross_entropy = 0.0;
    double final_cross_entropy = 0.0;

    /// Relative reduction of the cross-entropy form over training.
    double cross_entropy_reduction() const {
        return initial_cross_entropy > 0.0 ? (initial_cross_entropy - final_cross_entropy) / initial_cross_entropy
                                           : 0.0;
    }
};

/// Random initialization of party `party`'s encoder under root `seed`;
/// downstream training draws from the same stream.
inline nn::Encoder initial_encoder(const nn::EncoderSpec& spec, std::uint64_t seed, std::size_t party) {
    Rng rng(derive_seed(seed, "init.party", party));
    return nn::make_encoder(spec, rng);
}

namespace detail {

struct SslStep {
    double loss = 0.0;
    nn::Encoder encoder_grad;
    nn::Mlp projection_grad;
};

inline SslStep ssl_step(const nn::Encoder& enc, const nn::Mlp& proj, const FeatureBlock& x, const FeatureBlock& xc,
                        double tau, bool want_grad) {
    nn::EncoderTape et1, et2;
    nn::MlpTape pt1, pt2;
    Matrix h1 = nn::forward(enc, x, &et1);
    Matrix h2 = nn::forward(enc, xc, &et2);
    Matrix z1 = nn::forward(proj, h1, &pt1);
    Matrix z2 = nn::forward(proj, h2, &pt2);
    ContrastiveBatchResult c = contrastive_loss(z1, z2, tau);
    SslStep step;
    step.loss = c.loss;
    if (!want_grad) return step;
    nn::MlpGrad pg1 = nn::backward(proj, pt1, c.grad_z);
    nn::MlpGrad pg2 = nn::backward(proj, pt2, c.grad_z_tilde);
    nn::EncoderGrad eg1 = nn::backward(enc, et1, pg1.input);
    nn::EncoderGrad eg2 = nn::backward(enc, et2, pg2.input);
    nn::add_scaled(pg1.params, pg2.params, 1.0);
    nn::add_scaled(eg1.params, eg2.params, 1.0);
    step.projection_grad = std::move(pg1.params);
    step.encoder_grad = std::move(eg1.params);
    return step;
}

struct SslEvaluation {
    double loss = 0.0;
    double cross_entropy = 0.0;
};

inline SslEvaluation ssl_evaluate(const nn::Encoder& enc, const nn::Mlp& proj, const FeatureBlock& x,
                                  const CorruptionModel& marginals, const SslConfig& cfg, std::size_t party) {
    Rng rng(derive_seed(cfg.seed, "ssl.eval", party));
    double total = 0.0;
    double offset = 0.0;
    std::size_t rows = 0;
    for (std::size_t start = 0; start < x.rows; start += cfg.batch) {
        const std::size_t end = std::min(x.rows, start + cfg.batch);
        std::vector<std::size_t> idx;
        for (std::size_t r = start; r < end; ++r) idx.push_back(r);
        FeatureBlock xb = x.select(idx);
        Corruption c = corrupt(xb, marginals, rng);
        const auto n = static_cast<double>(idx.size());
        total += ssl_step(enc, proj, xb, c.batch, cfg.temperature, false).loss * n;
        offset += std::log(n) * n;
        rows += idx.size();
    }
    const double loss = total / static_cast<double>(rows);
    return {loss, loss + offset / static_cast<double>(rows)};
}

}  // namespace detail

/// Contrastive pre-training of passive party `party` (1-based, > 1) on all of
/// its local samples X^k. Returns the encoder only.
inline PassivePretrained pretrain_passive(const FeatureBlock& x, const nn::EncoderSpec& spec, const SslConfig& cfg,
                                          std::size_t party) {
    if (x.rows == 0) throw TrainingError("party " + std::to_string(party) + " has no local samples to pre-train on");
    if (cfg.batch == 0) throw ConfigError("ssl batch size must be positive");
    PassivePretrained out;
    out.party = party;
    out.encoder = initial_encoder(spec, cfg.seed, party);
    Rng proj_rng(derive_seed(cfg.seed, "init.projection", party));
    const std::vector<std::size_t> hidden =
        cfg.projection_hidden.empty() ? std::vector<std::size_t>{spec.out_dim} : cfg.projection_hidden;
    nn::Mlp proj = nn::Mlp::make(spec.out_dim, hidden, spec.out_dim, proj_rng);

    const CorruptionModel marginals = CorruptionModel::fit(x, cfg.corruption_rate);
    const detail::SslEvaluation before = detail::ssl_evaluate(out.encoder, proj, x, marginals, cfg, party);
    out.initial_loss = out.final_loss = before.loss;
    out.initial_cross_entropy = out.final_cross_entropy = before.cross_entropy;
    if (cfg.epochs == 0) return out;

    nn::Optimizer enc_opt(cfg.optimizer);
    nn::Optimizer proj_opt(cfg.optimizer);
    Rng shuffle(derive_seed(cfg.seed, "ssl.shuffle", party));
    Rng corruption(derive_seed(cfg.seed, "ssl.corruption", party));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0;
        std::size_t rows = 0;
        for (const auto& idx : shuffled_batches(x.rows, cfg.batch, shuffle)) {
            FeatureBlock xb = x.select(idx);
            Corruption c = corrupt(xb, marginals, corruption);
            detail::SslStep step = detail::ssl_step(out.encoder, proj, xb, c.batch, cfg.temperature, true);
            enc_opt.step(out.encoder, step.encoder_grad);
            proj_opt.step(proj, step.projection_grad);
            total += step.loss * static_cast<double>(idx.size());
            rows += idx.size();
        }
        out.loss_trace.push_back(total / static_cast<double>(rows));
    }
    const detail::SslEvaluation after = detail::ssl_evaluate(out.encoder, proj, x, marginals, cfg, party);
    out.final_loss = after.loss;
    out.final_cross_entropy = after.cross_entropy;
    return out;
}

}  // namespace vflhlp
