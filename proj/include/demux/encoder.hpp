#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "demux/common.hpp"

namespace demux {

// Desk-scale stand-in for the pretrained encoders: pre-norm transformer,
// GELU FFN, learned absolute positions, double precision throughout.
struct EncoderConfig {
    int d = 32;
    int layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int max_len = 128;
    int vocab_size = 0;
    double layernorm_eps = 1e-5;
    double init_std = 0.02;
    std::uint64_t seed = 0;

    int head_dim() const { return d / heads; }
    int ffn_dim() const { return d * ffn_mult; }

    void validate() const {
        if (d < 1 || layers < 1 || heads < 1 || ffn_mult < 1 || max_len < 1 || vocab_size < 1)
            throw ConfigError("encoder config counts must be >= 1");
        if (d % heads != 0) throw ConfigError("heads must divide d");
        if (!(layernorm_eps > 0.0)) throw ConfigError("layernorm_eps must be positive");
        if (init_std < 0.0) throw ConfigError("init_std must be >= 0");
    }
};

// Named view into one parameter tensor; the visit order is the canonical
// order for optimizer state and checkpoint blobs.
struct TensorRef {
    std::string name;
    double* data = nullptr;
    std::ptrdiff_t rows = 0;
    std::ptrdiff_t cols = 0;
    std::ptrdiff_t size() const { return rows * cols; }
};

struct LayerParameters {
    Eigen::MatrixXd wq, wk, wv, wo;          // d x d
    Eigen::VectorXd bq, bk, bv, bo;          // d
    Eigen::MatrixXd w1;                      // d x ffn
    Eigen::VectorXd b1;                      // ffn
    Eigen::MatrixXd w2;                      // ffn x d
    Eigen::VectorXd b2;                      // d
    Eigen::VectorXd ln1_scale, ln1_bias;     // d
    Eigen::VectorXd ln2_scale, ln2_bias;     // d
};

struct EncoderParameters {
    EncoderConfig config;
    Eigen::MatrixXd token_embedding;         // vocab_size x d
    Eigen::MatrixXd position_embedding;      // max_len x d
    std::vector<LayerParameters> layers;
    Eigen::VectorXd final_ln_scale, final_ln_bias;

    std::vector<TensorRef> tensors() {
        std::vector<TensorRef> out;
        const auto add = [&](const std::string& name, Eigen::MatrixXd& m) {
            out.push_back({name, m.data(), m.rows(), m.cols()});
        };
        const auto addv = [&](const std::string& name, Eigen::VectorXd& v) {
            out.push_back({name, v.data(), v.size(), 1});
        };
        add("token_embedding", token_embedding);
        add("position_embedding", position_embedding);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            LayerParameters& lp = layers[l];
            add(p + "wq", lp.wq); addv(p + "bq", lp.bq);
            add(p + "wk", lp.wk); addv(p + "bk", lp.bk);
            add(p + "wv", lp.wv); addv(p + "bv", lp.bv);
            add(p + "wo", lp.wo); addv(p + "bo", lp.bo);
            add(p + "ffn_w1", lp.w1); addv(p + "ffn_b1", lp.b1);
            add(p + "ffn_w2", lp.w2); addv(p + "ffn_b2", lp.b2);
            addv(p + "ln1_scale", lp.ln1_scale); addv(p + "ln1_bias", lp.ln1_bias);
            addv(p + "ln2_scale", lp.ln2_scale); addv(p + "ln2_bias", lp.ln2_bias);
        }
        addv("final_ln_scale", final_ln_scale);
        addv("final_ln_bias", final_ln_bias);
        return out;
    }

    void set_zero() {
        for (TensorRef& t : tensors())
            std::fill(t.data, t.data + t.size(), 0.0);
    }
};

// Gaussian(0, init_std^2) weights, zero biases, unit layer-norm scales.
inline EncoderParameters init_encoder(const EncoderConfig& config) {
    config.validate();
    EncoderParameters p;
    p.config = config;
    Rng rng(config.seed);
    const auto gaussian = [&](Eigen::MatrixXd& m, std::ptrdiff_t rows, std::ptrdiff_t cols) {
        m.resize(rows, cols);
        for (std::ptrdiff_t j = 0; j < cols; ++j)
            for (std::ptrdiff_t i = 0; i < rows; ++i) m(i, j) = rng.normal(0.0, config.init_std);
    };
    gaussian(p.token_embedding, config.vocab_size, config.d);
    gaussian(p.position_embedding, config.max_len, config.d);
    p.layers.resize(config.layers);
    for (LayerParameters& lp : p.layers) {
        gaussian(lp.wq, config.d, config.d);
        gaussian(lp.wk, config.d, config.d);
        gaussian(lp.wv, config.d, config.d);
        gaussian(lp.wo, config.d, config.d);
        lp.bq = Eigen::VectorXd::Zero(config.d);
        lp.bk = Eigen::VectorXd::Zero(config.d);
        lp.bv = Eigen::VectorXd::Zero(config.d);
        lp.bo = Eigen::VectorXd::Zero(config.d);
        gaussian(lp.w1, config.d, config.ffn_dim());
        lp.b1 = Eigen::VectorXd::Zero(config.ffn_dim());
        gaussian(lp.w2, config.ffn_dim(), config.d);
        lp.b2 = Eigen::VectorXd::Zero(config.d);
        lp.ln1_scale = Eigen::VectorXd::Ones(config.d);
        lp.ln1_bias = Eigen::VectorXd::Zero(config.d);
        lp.ln2_scale = Eigen::VectorXd::Ones(config.d);
        lp.ln2_bias = Eigen::VectorXd::Zero(config.d);
    }
    p.final_ln_scale = Eigen::VectorXd::Ones(config.d);
    p.final_ln_bias = Eigen::VectorXd::Zero(config.d);
    return p;
}

inline EncoderParameters zeros_like(const EncoderParameters& params) {
    EncoderParameters z = params;
    z.set_zero();
    return z;
}

namespace detail {

struct LayerNormCache {
    Eigen::VectorXd mean;     // per row
    Eigen::VectorXd inv_std;  // per row
    Eigen::MatrixXd normalized;  // (x - mean) * inv_std
};

inline Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale,
                                  const Eigen::VectorXd& bias, double eps, LayerNormCache& cache) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    cache.mean.resize(rows);
    cache.inv_std.resize(rows);
    cache.normalized.resize(rows, cols);
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double inv_std = 1.0 / std::sqrt(var + eps);
        cache.mean(i) = mean;
        cache.inv_std(i) = inv_std;
        cache.normalized.row(i) = (x.row(i).array() - mean) * inv_std;
        out.row(i) = cache.normalized.row(i).array() * scale.transpose().array() +
                     bias.transpose().array();
    }
    return out;
}

// d/dx of layer_norm given upstream dy; accumulates scale/bias gradients.
inline Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const LayerNormCache& cache,
                                           const Eigen::VectorXd& scale, Eigen::VectorXd& dscale,
                                           Eigen::VectorXd& dbias) {
    const auto rows = dy.rows();
    const auto cols = dy.cols();
    Eigen::MatrixXd dx(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Eigen::ArrayXd xhat = cache.normalized.row(i).transpose().array();
        const Eigen::ArrayXd g = dy.row(i).transpose().array() * scale.array();
        dscale.array() += dy.row(i).transpose().array() * xhat;
        dbias += dy.row(i).transpose();
        const double g_mean = g.mean();
        const double gx_mean = (g * xhat).mean();
        dx.row(i) = (cache.inv_std(i) * (g - g_mean - xhat * gx_mean)).transpose();
    }
    return dx;
}

}  // namespace detail

struct LayerCache {
    Eigen::MatrixXd input;               // residual stream entering the layer
    detail::LayerNormCache ln1;
    Eigen::MatrixXd ln1_out;
    Eigen::MatrixXd q, k, v;             // L x d, heads concatenated
    std::vector<Eigen::MatrixXd> attn;   // per head, L x L row-softmax weights
    Eigen::MatrixXd ctx;                 // concatenated head outputs
    Eigen::MatrixXd mid;                 // input + attention output
    detail::LayerNormCache ln2;
    Eigen::MatrixXd ln2_out;
    Eigen::MatrixXd ffn_pre;             // L x ffn
    Eigen::MatrixXd ffn_act;
};

struct EncoderCache {
    std::vector<int> ids;
    int valid_len = 0;
    Eigen::MatrixXd embedded;            // token + position embeddings
    std::vector<LayerCache> layers;
    detail::LayerNormCache final_ln;
    Eigen::MatrixXd pre_final;
};

// Per-token output vectors t-hat plus the forward cache for backward.
struct EncoderOutput {
    Eigen::MatrixXd hidden;  // L x d
    EncoderCache cache;
};

// Pre-norm stack: embed + positions, then [attention, FFN] x layers, then a
// final layer norm. valid_len < L masks attention to the padded suffix.
inline EncoderOutput encoder_forward(const EncoderParameters& params, const std::vector<int>& ids,
                                     int valid_len = -1) {
    const EncoderConfig& cfg = params.config;
    const int L = static_cast<int>(ids.size());
    if (L == 0) throw InputError("encoder input must be non-empty");
    if (L > cfg.max_len)
        throw InputError("input length " + std::to_string(L) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
    for (int id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw InputError("token id " + std::to_string(id) + " outside vocabulary");
    if (valid_len < 0) valid_len = L;
    if (valid_len < 1 || valid_len > L) throw InputError("valid_len out of range");

    EncoderOutput out;
    EncoderCache& cache = out.cache;
    cache.ids = ids;
    cache.valid_len = valid_len;

    Eigen::MatrixXd x(L, cfg.d);
    for (int t = 0; t < L; ++t)
        x.row(t) = params.token_embedding.row(ids[t]) + params.position_embedding.row(t);
    cache.embedded = x;

    const int H = cfg.heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    cache.layers.resize(cfg.layers);

    for (int l = 0; l < cfg.layers; ++l) {
        const LayerParameters& lp = params.layers[l];
        LayerCache& lc = cache.layers[l];
        lc.input = x;
        lc.ln1_out = detail::layer_norm(x, lp.ln1_scale, lp.ln1_bias, cfg.layernorm_eps, lc.ln1);

        lc.q = (lc.ln1_out * lp.wq).rowwise() + lp.bq.transpose();
        lc.k = (lc.ln1_out * lp.wk).rowwise() + lp.bk.transpose();
        lc.v = (lc.ln1_out * lp.wv).rowwise() + lp.bv.transpose();

        lc.ctx.resize(L, cfg.d);
        lc.attn.assign(H, Eigen::MatrixXd());
        for (int h = 0; h < H; ++h) {
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            const auto vh = lc.v.middleCols(h * dh, dh);
            Eigen::MatrixXd scores = (qh * kh.transpose()) * scale;
            for (int j = valid_len; j < L; ++j) scores.col(j).setConstant(-1e30);
            Eigen::MatrixXd& a = lc.attn[h];
            a.resize(L, L);
            for (int i = 0; i < L; ++i) {
                const double m = scores.row(i).maxCoeff();
                a.row(i) = (scores.row(i).array() - m).exp();
                a.row(i) /= a.row(i).sum();
            }
            lc.ctx.middleCols(h * dh, dh) = a * vh;
        }
        Eigen::MatrixXd attn_out = (lc.ctx * lp.wo).rowwise() + lp.bo.transpose();
        lc.mid = lc.input + attn_out;

        lc.ln2_out = detail::layer_norm(lc.mid, lp.ln2_scale, lp.ln2_bias, cfg.layernorm_eps, lc.ln2);
        lc.ffn_pre = (lc.ln2_out * lp.w1).rowwise() + lp.b1.transpose();
        lc.ffn_act = lc.ffn_pre.unaryExpr([](double v) { return gelu(v); });
        Eigen::MatrixXd ffn_out = (lc.ffn_act * lp.w2).rowwise() + lp.b2.transpose();
        x = lc.mid + ffn_out;
    }

    cache.pre_final = x;
    out.hidden =
        detail::layer_norm(x, params.final_ln_scale, params.final_ln_bias, cfg.layernorm_eps, cache.final_ln);
    return out;
}

// Exact analytic gradients of encoder_forward. Parameter gradients are
// accumulated into `grads`; the gradient at the embedding sum is returned.
inline Eigen::MatrixXd encoder_backward(const EncoderParameters& params, const EncoderCache& cache,
                                        const Eigen::MatrixXd& d_hidden, EncoderParameters& grads) {
    const EncoderConfig& cfg = params.config;
    const int L = static_cast<int>(cache.ids.size());
    if (d_hidden.rows() != L || d_hidden.cols() != cfg.d)
        throw InputError("encoder_backward: gradient shape mismatch");

    const int H = cfg.heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Eigen::MatrixXd dx = detail::layer_norm_backward(d_hidden, cache.final_ln, params.final_ln_scale,
                                                     grads.final_ln_scale, grads.final_ln_bias);

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerParameters& lp = params.layers[l];
        const LayerCache& lc = cache.layers[l];
        LayerParameters& lg = grads.layers[l];

        // x = mid + ffn(ln2(mid))
        const Eigen::MatrixXd d_ffn_out = dx;
        lg.w2 += lc.ffn_act.transpose() * d_ffn_out;
        lg.b2 += d_ffn_out.colwise().sum().transpose();
        Eigen::MatrixXd d_act = d_ffn_out * lp.w2.transpose();
        Eigen::MatrixXd d_pre =
            d_act.array() * lc.ffn_pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
        lg.w1 += lc.ln2_out.transpose() * d_pre;
        lg.b1 += d_pre.colwise().sum().transpose();
        Eigen::MatrixXd d_ln2_out = d_pre * lp.w1.transpose();
        Eigen::MatrixXd d_mid =
            dx + detail::layer_norm_backward(d_ln2_out, lc.ln2, lp.ln2_scale, lg.ln2_scale, lg.ln2_bias);

        // mid = input + ctx * wo + bo
        lg.wo += lc.ctx.transpose() * d_mid;
        lg.bo += d_mid.colwise().sum().transpose();
        Eigen::MatrixXd d_ctx = d_mid * lp.wo.transpose();

        Eigen::MatrixXd dq(L, cfg.d), dk(L, cfg.d), dv(L, cfg.d);
        for (int h = 0; h < H; ++h) {
            const auto qh = lc.q.middleCols(h * dh, dh);
            const auto kh = lc.k.middleCols(h * dh, dh);
            const auto vh = lc.v.middleCols(h * dh, dh);
            const Eigen::MatrixXd& a = lc.attn[h];
            const auto d_ctxh = d_ctx.middleCols(h * dh, dh);

            Eigen::MatrixXd da = d_ctxh * vh.transpose();
            dv.middleCols(h * dh, dh) = a.transpose() * d_ctxh;

            // softmax rows: ds = a .* (da - rowsum(da .* a))
            Eigen::MatrixXd ds(L, L);
            for (int i = 0; i < L; ++i) {
                const double dot = (da.row(i).array() * a.row(i).array()).sum();
                ds.row(i) = a.row(i).array() * (da.row(i).array() - dot);
            }
            dq.middleCols(h * dh, dh) = (ds * kh) * scale;
            dk.middleCols(h * dh, dh) = (ds.transpose() * qh) * scale;
        }

        lg.wq += lc.ln1_out.transpose() * dq;
        lg.bq += dq.colwise().sum().transpose();
        lg.wk += lc.ln1_out.transpose() * dk;
        lg.bk += dk.colwise().sum().transpose();
        lg.wv += lc.ln1_out.transpose() * dv;
        lg.bv += dv.colwise().sum().transpose();

        Eigen::MatrixXd d_ln1_out = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
        dx = d_mid +
             detail::layer_norm_backward(d_ln1_out, lc.ln1, lp.ln1_scale, lg.ln1_scale, lg.ln1_bias);
    }

    for (int t = 0; t < L; ++t) {
        grads.token_embedding.row(cache.ids[t]) += dx.row(t);
        grads.position_embedding.row(t) += dx.row(t);
    }
    return dx;
}

// Parameter groups excluded from updates.
struct FreezeMask {
    enum class Kind { none, all_word_embeddings, emotion_word_embeddings };
    Kind kind = Kind::none;
    std::vector<int> emotion_token_ids;

    static FreezeMask none() { return FreezeMask{}; }
    static FreezeMask all_words() { return FreezeMask{Kind::all_word_embeddings, {}}; }
    static FreezeMask emotions(std::vector<int> ids) {
        return FreezeMask{Kind::emotion_word_embeddings, std::move(ids)};
    }
};

// Zero the gradients of masked parameter groups.
inline void apply_freeze(EncoderParameters& grads, const FreezeMask& mask) {
    switch (mask.kind) {
        case FreezeMask::Kind::none:
            break;
        case FreezeMask::Kind::all_word_embeddings:
            grads.token_embedding.setZero();
            break;
        case FreezeMask::Kind::emotion_word_embeddings:
            for (int id : mask.emotion_token_ids) {
                if (id < 0 || id >= grads.token_embedding.rows())
                    throw InputError("freeze mask token id outside vocabulary");
                grads.token_embedding.row(id).setZero();
            }
            break;
    }
}

}  // namespace demux
