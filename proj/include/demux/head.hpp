#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "demux/common.hpp"
#include "demux/corpus.hpp"
#include "demux/encoder.hpp"
#include "demux/tokenizer.hpp"

namespace demux {

// The shared 2-layer probability network NN: R^d -> R. One head serves every
// emotion and every cluster; that sharing is what makes zero-shot transfer to
// unseen emotions and clusterings possible.
struct ClassifierHead {
    Eigen::MatrixXd w1;  // d x d
    Eigen::VectorXd b1;  // d
    Eigen::VectorXd w2;  // d
    Eigen::VectorXd b2;  // 1

    int width() const { return static_cast<int>(w1.rows()); }

    std::vector<TensorRef> tensors() {
        return {
            {"head.w1", w1.data(), w1.rows(), w1.cols()},
            {"head.b1", b1.data(), b1.size(), 1},
            {"head.w2", w2.data(), w2.size(), 1},
            {"head.b2", b2.data(), b2.size(), 1},
        };
    }

    void set_zero() {
        w1.setZero();
        b1.setZero();
        w2.setZero();
        b2.setZero();
    }
};

inline ClassifierHead init_head(int d, double init_std, std::uint64_t seed) {
    ClassifierHead head;
    Rng rng(seed);
    head.w1.resize(d, d);
    for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) head.w1(i, j) = rng.normal(0.0, init_std);
    head.b1 = Eigen::VectorXd::Zero(d);
    head.w2.resize(d);
    for (int i = 0; i < d; ++i) head.w2(i) = rng.normal(0.0, init_std);
    head.b2 = Eigen::VectorXd::Zero(1);
    return head;
}

inline ClassifierHead zeros_like(const ClassifierHead& head) {
    ClassifierHead z = head;
    z.set_zero();
    return z;
}

// One pooled vector per target plus the subtoken counts behind each vector.
struct PooledRepresentations {
    Eigen::MatrixXd vectors;           // targets x d
    std::vector<int> subtoken_counts;  // divisor used per target
};

// Predictions and gold bits for a batch, in emotion or cluster mode.
struct PredictionBatch {
    Eigen::MatrixXd probs;  // examples x targets, strictly inside (0, 1)
    LabelMatrix gold;
    LabelMode mode = LabelMode::emotion;
};

// Eq. 2 pooling: vector i = mean of the encoder outputs over span i.
inline PooledRepresentations pool_emotions(const Eigen::MatrixXd& hidden,
                                           const std::vector<Span>& spans) {
    PooledRepresentations pooled;
    pooled.vectors.resize(static_cast<Eigen::Index>(spans.size()), hidden.cols());
    pooled.subtoken_counts.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const Span& s = spans[i];
        if (s.begin >= s.end || s.end > hidden.rows())
            throw InputError("pool_emotions: invalid span");
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(hidden.cols());
        for (int t = s.begin; t < s.end; ++t) acc += hidden.row(t);
        const int count = s.length();
        pooled.vectors.row(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(count);
        pooled.subtoken_counts.push_back(count);
    }
    return pooled;
}

// Eq. 3 pooling: one vector per cluster, the subtoken-count-weighted mean
// over all member emotions (sum of all member subtoken outputs divided by
// the total subtoken count, not a mean of per-emotion means).
inline PooledRepresentations pool_clusters(const Eigen::MatrixXd& hidden,
                                           const std::vector<Span>& spans,
                                           const Clustering& clustering) {
    if (clustering.emotion_count() != static_cast<int>(spans.size()))
        throw InputError("pool_clusters: clustering does not match span count");
    PooledRepresentations pooled;
    pooled.vectors.resize(clustering.size(), hidden.cols());
    pooled.subtoken_counts.reserve(clustering.size());
    for (int c = 0; c < clustering.size(); ++c) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(hidden.cols());
        int count = 0;
        for (int j : clustering.members(c)) {
            const Span& s = spans[j];
            if (s.begin >= s.end || s.end > hidden.rows())
                throw InputError("pool_clusters: invalid span");
            for (int t = s.begin; t < s.end; ++t) acc += hidden.row(t);
            count += s.length();
        }
        pooled.vectors.row(c) = acc / static_cast<double>(count);
        pooled.subtoken_counts.push_back(count);
    }
    return pooled;
}

struct HeadCache {
    Eigen::MatrixXd input;  // targets x d
    Eigen::MatrixXd pre;    // first affine output
    Eigen::MatrixXd act;    // gelu(pre)
    Eigen::VectorXd logits;
    Eigen::VectorXd sigmoids;  // unclamped
    Eigen::VectorXd probs;     // clamped to (0, 1)
};

// Probabilities stay strictly inside (0,1); saturated sigmoids are clamped a
// hair inside so downstream logs remain finite.
inline constexpr double kProbClamp = 1e-12;

// sigma(NN(v)) per pooled vector; the same head weights for every target.
inline HeadCache predict(const ClassifierHead& head, const PooledRepresentations& pooled) {
    if (pooled.vectors.cols() != head.width())
        throw InputError("predict: pooled width " + std::to_string(pooled.vectors.cols()) +
                         " does not match head width " + std::to_string(head.width()));
    HeadCache cache;
    cache.input = pooled.vectors;
    cache.pre = (pooled.vectors * head.w1).rowwise() + head.b1.transpose();
    cache.act = cache.pre.unaryExpr([](double v) { return gelu(v); });
    cache.logits = cache.act * head.w2;
    cache.logits.array() += head.b2(0);
    cache.sigmoids = cache.logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    cache.probs = cache.sigmoids.unaryExpr(
        [](double p) { return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp); });
    return cache;
}

// Table 5 ablation: p(C_i) = max over member emotions of their predicted
// probability, instead of pooling embeddings.
struct MaxProbResult {
    Eigen::VectorXd probs;        // per cluster
    std::vector<int> argmax;      // winning emotion per cluster (first wins ties)
    HeadCache emotion_cache;      // per-emotion head pass
};

inline MaxProbResult predict_cluster_maxprob(const ClassifierHead& head,
                                             const PooledRepresentations& emotion_pooled,
                                             const Clustering& clustering) {
    if (clustering.emotion_count() != emotion_pooled.vectors.rows())
        throw InputError("predict_cluster_maxprob: clustering does not match pooled emotion count");
    MaxProbResult result;
    result.emotion_cache = predict(head, emotion_pooled);
    result.probs.resize(clustering.size());
    result.argmax.resize(clustering.size());
    for (int c = 0; c < clustering.size(); ++c) {
        int best = clustering.members(c).front();
        for (int j : clustering.members(c))
            if (result.emotion_cache.probs(j) > result.emotion_cache.probs(best)) best = j;
        result.argmax[c] = best;
        result.probs(c) = result.emotion_cache.probs(best);
    }
    return result;
}

// Gradients of predict w.r.t. head parameters and pooled vectors, given
// upstream gradients on the probabilities.
inline Eigen::MatrixXd head_backward(const ClassifierHead& head, const HeadCache& cache,
                                     const Eigen::VectorXd& d_probs, ClassifierHead& grads) {
    if (d_probs.size() != cache.probs.size())
        throw InputError("head_backward: gradient shape mismatch");
    // through sigma: dz = dp * s * (1 - s)
    const Eigen::VectorXd d_logits =
        d_probs.array() * cache.sigmoids.array() * (1.0 - cache.sigmoids.array());
    grads.w2 += cache.act.transpose() * d_logits;
    grads.b2(0) += d_logits.sum();
    Eigen::MatrixXd d_act = d_logits * head.w2.transpose();
    Eigen::MatrixXd d_pre =
        d_act.array() * cache.pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    grads.w1 += cache.input.transpose() * d_pre;
    grads.b1 += d_pre.colwise().sum().transpose();
    return d_pre * head.w1.transpose();
}

// Distribute pooled-vector gradients back to the span subtokens: each
// subtoken of target i receives d_pooled.row(i) / count_i.
inline Eigen::MatrixXd pool_emotions_backward(const Eigen::MatrixXd& d_pooled,
                                              const std::vector<Span>& spans, Eigen::Index seq_len) {
    Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(seq_len, d_pooled.cols());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const Span& s = spans[i];
        const Eigen::RowVectorXd share =
            d_pooled.row(static_cast<Eigen::Index>(i)) / static_cast<double>(s.length());
        for (int t = s.begin; t < s.end; ++t) d_hidden.row(t) += share;
    }
    return d_hidden;
}

inline Eigen::MatrixXd pool_clusters_backward(const Eigen::MatrixXd& d_pooled,
                                              const std::vector<Span>& spans,
                                              const Clustering& clustering, Eigen::Index seq_len) {
    Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(seq_len, d_pooled.cols());
    for (int c = 0; c < clustering.size(); ++c) {
        int count = 0;
        for (int j : clustering.members(c)) count += spans[j].length();
        const Eigen::RowVectorXd share = d_pooled.row(c) / static_cast<double>(count);
        for (int j : clustering.members(c))
            for (int t = spans[j].begin; t < spans[j].end; ++t) d_hidden.row(t) += share;
    }
    return d_hidden;
}

// Max pooling routes the cluster gradient to the argmax emotion only.
inline Eigen::VectorXd maxprob_backward(const MaxProbResult& result, const Clustering& clustering,
                                        const Eigen::VectorXd& d_cluster_probs) {
    Eigen::VectorXd d_emotion_probs = Eigen::VectorXd::Zero(clustering.emotion_count());
    for (int c = 0; c < clustering.size(); ++c) d_emotion_probs(result.argmax[c]) += d_cluster_probs(c);
    return d_emotion_probs;
}

}  // namespace demux
