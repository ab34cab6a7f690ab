#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "demux/common.hpp"

namespace demux {

struct ConfusionCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    long long samples() const { return tp + fp + fn + tn; }
};

namespace detail {

inline void check_bit_shapes(const LabelMatrix& pred, const LabelMatrix& gold) {
    if (pred.size() != gold.size()) throw InputError("metrics: sample counts differ");
    if (pred.empty()) throw InputError("metrics: no samples");
    const std::size_t labels = gold.front().size();
    if (labels == 0) throw InputError("metrics: no labels");
    for (std::size_t s = 0; s < pred.size(); ++s)
        if (pred[s].size() != labels || gold[s].size() != labels)
            throw InputError("metrics: label counts differ");
}

}  // namespace detail

// bit = 1 iff probability >= threshold (inclusive).
inline LabelMatrix binarize(const Eigen::MatrixXd& probs, double threshold = 0.5) {
    if (!(threshold > 0.0) || !(threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
    LabelMatrix bits(static_cast<std::size_t>(probs.rows()),
                     LabelBits(static_cast<std::size_t>(probs.cols()), 0));
    for (Eigen::Index s = 0; s < probs.rows(); ++s)
        for (Eigen::Index l = 0; l < probs.cols(); ++l)
            bits[s][l] = probs(s, l) >= threshold ? 1 : 0;
    return bits;
}

inline std::vector<ConfusionCounts> confusion_counts(const LabelMatrix& pred, const LabelMatrix& gold) {
    detail::check_bit_shapes(pred, gold);
    std::vector<ConfusionCounts> counts(gold.front().size());
    for (std::size_t s = 0; s < pred.size(); ++s)
        for (std::size_t l = 0; l < counts.size(); ++l) {
            if (pred[s][l] && gold[s][l]) counts[l].tp++;
            else if (pred[s][l] && !gold[s][l]) counts[l].fp++;
            else if (!pred[s][l] && gold[s][l]) counts[l].fn++;
            else counts[l].tn++;
        }
    return counts;
}

// F1 = 2TP / (2TP + FP + FN), with 0/0 defined as 0.
inline double f1_from_counts(long long tp, long long fp, long long fn) {
    const long long denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

inline std::vector<double> per_label_f1(const LabelMatrix& pred, const LabelMatrix& gold) {
    std::vector<double> f1;
    for (const ConfusionCounts& c : confusion_counts(pred, gold))
        f1.push_back(f1_from_counts(c.tp, c.fp, c.fn));
    return f1;
}

// Micro F1 pools TP/FP/FN across labels before the F1 ratio.
inline double micro_f1(const LabelMatrix& pred, const LabelMatrix& gold) {
    long long tp = 0, fp = 0, fn = 0;
    for (const ConfusionCounts& c : confusion_counts(pred, gold)) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
    }
    return f1_from_counts(tp, fp, fn);
}

// Macro F1 averages the per-label F1 scores.
inline double macro_f1(const LabelMatrix& pred, const LabelMatrix& gold) {
    const std::vector<double> f1 = per_label_f1(pred, gold);
    double sum = 0.0;
    for (double v : f1) sum += v;
    return sum / static_cast<double>(f1.size());
}

// Sample-averaged intersection-over-union of predicted and gold label sets.
// A sample with empty prediction and empty gold scores 1.
inline double jaccard(const LabelMatrix& pred, const LabelMatrix& gold) {
    detail::check_bit_shapes(pred, gold);
    double sum = 0.0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
        long long inter = 0, uni = 0;
        for (std::size_t l = 0; l < pred[s].size(); ++l) {
            inter += pred[s][l] && gold[s][l];
            uni += pred[s][l] || gold[s][l];
        }
        sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return sum / static_cast<double>(pred.size());
}

// The evaluation bundle reported everywhere: headline metrics plus one F1
// per label surface.
struct MetricBundle {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    double jaccard = 0.0;
    std::vector<std::pair<std::string, double>> per_label;

    double per_label_value(const std::string& name) const {
        for (const auto& [label, value] : per_label)
            if (label == name) return value;
        throw InputError("metric bundle has no label '" + name + "'");
    }
};

inline MetricBundle compute_metrics(const LabelMatrix& pred, const LabelMatrix& gold,
                                    const std::vector<std::string>& label_names) {
    detail::check_bit_shapes(pred, gold);
    if (label_names.size() != gold.front().size())
        throw InputError("metrics: label name count mismatch");
    MetricBundle bundle;
    bundle.micro_f1 = micro_f1(pred, gold);
    bundle.macro_f1 = macro_f1(pred, gold);
    bundle.jaccard = jaccard(pred, gold);
    const std::vector<double> f1 = per_label_f1(pred, gold);
    for (std::size_t l = 0; l < f1.size(); ++l) bundle.per_label.emplace_back(label_names[l], f1[l]);
    return bundle;
}

inline nlohmann::json metric_bundle_to_json(const MetricBundle& bundle) {
    nlohmann::json j;
    j["micro_f1"] = bundle.micro_f1;
    j["macro_f1"] = bundle.macro_f1;
    j["jaccard"] = bundle.jaccard;
    nlohmann::json per_label = nlohmann::json::object();
    for (const auto& [label, value] : bundle.per_label) per_label[label] = value;
    j["per_label"] = std::move(per_label);
    return j;
}

inline MetricBundle metric_bundle_from_json(const nlohmann::json& j) {
    MetricBundle bundle;
    bundle.micro_f1 = j.at("micro_f1").get<double>();
    bundle.macro_f1 = j.at("macro_f1").get<double>();
    bundle.jaccard = j.at("jaccard").get<double>();
    for (const auto& [label, value] : j.at("per_label").items())
        bundle.per_label.emplace_back(label, value.get<double>());
    return bundle;
}

}  // namespace demux
