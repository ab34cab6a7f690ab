#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "demux/common.hpp"
#include "demux/corpus.hpp"
#include "demux/encoder.hpp"
#include "demux/head.hpp"
#include "demux/objective.hpp"
#include "demux/tokenizer.hpp"

namespace demux {

// How cluster probabilities are formed: pooling the member embeddings before
// the head (Eq. 3) or taking the maximum member probability (the ablation).
enum class PoolingVariant { embedding, maxprob };

// Everything needed to score a text: tokenizer, prompt label space, optional
// clustering, encoder and head weights.
struct DemuxModel {
    Vocabulary vocab;
    LabelSpace space;
    std::optional<Clustering> clustering;
    PoolingVariant pooling = PoolingVariant::embedding;
    EncoderParameters encoder;
    ClassifierHead head;

    LabelMode mode() const { return clustering ? LabelMode::cluster : LabelMode::emotion; }
    int target_count() const { return clustering ? clustering->size() : space.size(); }

    const std::vector<std::string> target_names() const {
        return clustering ? clustering->names() : space.surfaces();
    }

    PromptEncoding encode_text(const std::string& text) const {
        return encode(vocab, space, text, encoder.config.max_len);
    }
};

struct ModelGradients {
    EncoderParameters encoder;
    ClassifierHead head;
};

inline ModelGradients zero_gradients(const DemuxModel& model) {
    return ModelGradients{zeros_like(model.encoder), zeros_like(model.head)};
}

struct ExampleForward {
    PromptEncoding encoding;
    EncoderOutput encoder_out;
    HeadCache head_cache;                // over targets (or emotions for maxprob)
    std::optional<MaxProbResult> maxprob;
    Eigen::VectorXd probs;               // per target
};

inline ExampleForward model_forward(const DemuxModel& model, const PromptEncoding& enc) {
    ExampleForward fwd;
    fwd.encoding = enc;
    fwd.encoder_out = encoder_forward(model.encoder, enc.ids);
    if (!model.clustering) {
        fwd.head_cache = predict(model.head, pool_emotions(fwd.encoder_out.hidden, enc.spans));
        fwd.probs = fwd.head_cache.probs;
    } else if (model.pooling == PoolingVariant::embedding) {
        fwd.head_cache = predict(
            model.head, pool_clusters(fwd.encoder_out.hidden, enc.spans, *model.clustering));
        fwd.probs = fwd.head_cache.probs;
    } else {
        fwd.maxprob = predict_cluster_maxprob(
            model.head, pool_emotions(fwd.encoder_out.hidden, enc.spans), *model.clustering);
        fwd.head_cache = fwd.maxprob->emotion_cache;
        fwd.probs = fwd.maxprob->probs;
    }
    return fwd;
}

inline ExampleForward model_forward(const DemuxModel& model, const std::string& text) {
    return model_forward(model, model.encode_text(text));
}

// Backpropagate d(loss)/d(probs) for one example; gradients accumulate.
inline void model_backward(const DemuxModel& model, const ExampleForward& fwd,
                           const Eigen::VectorXd& d_probs, ModelGradients& grads) {
    Eigen::MatrixXd d_pooled;
    if (fwd.maxprob) {
        const Eigen::VectorXd d_emotion = maxprob_backward(*fwd.maxprob, *model.clustering, d_probs);
        d_pooled = head_backward(model.head, fwd.head_cache, d_emotion, grads.head);
    } else {
        d_pooled = head_backward(model.head, fwd.head_cache, d_probs, grads.head);
    }
    Eigen::MatrixXd d_hidden;
    if (model.clustering && model.pooling == PoolingVariant::embedding) {
        d_hidden = pool_clusters_backward(d_pooled, fwd.encoding.spans, *model.clustering,
                                          fwd.encoder_out.hidden.rows());
    } else {
        d_hidden = pool_emotions_backward(d_pooled, fwd.encoding.spans, fwd.encoder_out.hidden.rows());
    }
    encoder_backward(model.encoder, fwd.encoder_out.cache, d_hidden, grads.encoder);
}

}  // namespace demux
