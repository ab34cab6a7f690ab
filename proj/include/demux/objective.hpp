#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "demux/common.hpp"

namespace demux {

// What the regularizer exponentiates. The paper writes only "the prediction
// of the model"; probabilities keep the exponentials bounded and are the
// default, logits are exposed for comparison.
enum class RegInput { probabilities, logits };

struct ObjectiveConfig {
    double c = 0.2;          // convex combination coefficient
    double epsilon = 1e-7;   // BCE probability clamp
    RegInput reg_input = RegInput::probabilities;

    void validate() const {
        if (c < 0.0 || c > 1.0) throw ConfigError("objective c must lie in [0, 1]");
        if (!(epsilon > 0.0) || !(epsilon < 0.5)) throw ConfigError("objective epsilon must lie in (0, 0.5)");
    }
};

// Present/absent emotion index groups for one example.
struct GroupSplit {
    std::vector<int> present;
    std::vector<int> absent;

    static GroupSplit from_labels(const LabelBits& y) {
        GroupSplit g;
        for (std::size_t i = 0; i < y.size(); ++i)
            (y[i] ? g.present : g.absent).push_back(static_cast<int>(i));
        return g;
    }
};

namespace detail {

inline void check_shapes(const Eigen::MatrixXd& probs, const LabelMatrix& gold) {
    if (static_cast<std::size_t>(probs.rows()) != gold.size())
        throw InputError("loss: prediction/gold example counts differ");
    for (const LabelBits& row : gold)
        if (static_cast<Eigen::Index>(row.size()) != probs.cols())
            throw InputError("loss: prediction/gold label counts differ");
    if (probs.rows() == 0 || probs.cols() == 0) throw InputError("loss: empty batch");
}

inline double clamp_prob(double p, double eps) {
    return std::min(std::max(p, eps), 1.0 - eps);
}

}  // namespace detail

// Mean binary cross-entropy over examples and targets, with predictions
// clamped to [eps, 1-eps].
inline double bce(const Eigen::MatrixXd& probs, const LabelMatrix& gold, double eps = 1e-7) {
    detail::check_shapes(probs, gold);
    double total = 0.0;
    for (Eigen::Index b = 0; b < probs.rows(); ++b)
        for (Eigen::Index i = 0; i < probs.cols(); ++i) {
            const double p = detail::clamp_prob(probs(b, i), eps);
            total += gold[b][i] ? -std::log(p) : -std::log(1.0 - p);
        }
    return total / static_cast<double>(probs.rows() * probs.cols());
}

// Intra-group correlation regularizer: pairs of absent emotions are pushed
// down together, pairs of present emotions pulled up together,
//   1/2 [ 1/(|N|^2-|N|) sum_{i>j in N} e^{v_i+v_j}
//       + 1/(|P|^2-|P|) sum_{i>j in P} e^{-v_i-v_j} ],
// averaged over the batch. A group with fewer than two members contributes 0
// (its pair set is empty). v is the probability or the logit per config.
inline double intra_group_reg(const Eigen::MatrixXd& probs, const LabelMatrix& gold,
                              RegInput reg_input = RegInput::probabilities, double eps = 1e-7) {
    detail::check_shapes(probs, gold);
    double total = 0.0;
    std::vector<double> v(static_cast<std::size_t>(probs.cols()));
    for (Eigen::Index b = 0; b < probs.rows(); ++b) {
        for (Eigen::Index i = 0; i < probs.cols(); ++i) {
            const double p = detail::clamp_prob(probs(b, i), eps);
            v[static_cast<std::size_t>(i)] =
                reg_input == RegInput::probabilities ? p : std::log(p / (1.0 - p));
        }
        const GroupSplit groups = GroupSplit::from_labels(gold[b]);
        double example = 0.0;
        for (const std::vector<int>* group : {&groups.absent, &groups.present}) {
            const double sign = group == &groups.absent ? 1.0 : -1.0;
            const std::size_t g = group->size();
            if (g < 2) continue;
            double pair_sum = 0.0;
            for (std::size_t a = 1; a < g; ++a)
                for (std::size_t bb = 0; bb < a; ++bb)
                    pair_sum += std::exp(sign * (v[(*group)[a]] + v[(*group)[bb]]));
            example += pair_sum / static_cast<double>(g * g - g);
        }
        total += 0.5 * example;
    }
    return total / static_cast<double>(probs.rows());
}

// Eq. 5: L = (1-c) * BCE + c * intra-group regularizer.
inline double total_loss(const Eigen::MatrixXd& probs, const LabelMatrix& gold,
                         const ObjectiveConfig& config) {
    config.validate();
    return (1.0 - config.c) * bce(probs, gold, config.epsilon) +
           config.c * intra_group_reg(probs, gold, config.reg_input, config.epsilon);
}

// Exact gradient of total_loss w.r.t. the predicted probabilities. The clamp
// is part of the function, so saturated entries get zero gradient.
inline Eigen::MatrixXd loss_backward(const Eigen::MatrixXd& probs, const LabelMatrix& gold,
                                     const ObjectiveConfig& config) {
    config.validate();
    detail::check_shapes(probs, gold);
    const double eps = config.epsilon;
    const Eigen::Index B = probs.rows();
    const Eigen::Index T = probs.cols();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(B, T);

    const double bce_norm = (1.0 - config.c) / static_cast<double>(B * T);
    std::vector<double> v(static_cast<std::size_t>(T));
    std::vector<double> dv_dp(static_cast<std::size_t>(T));
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index i = 0; i < T; ++i) {
            const double raw = probs(b, i);
            const bool interior = raw > eps && raw < 1.0 - eps;
            const double p = detail::clamp_prob(raw, eps);
            if (interior)
                grad(b, i) += bce_norm * (gold[b][i] ? -1.0 / p : 1.0 / (1.0 - p));
            if (config.reg_input == RegInput::probabilities) {
                v[i] = p;
                dv_dp[i] = interior ? 1.0 : 0.0;
            } else {
                v[i] = std::log(p / (1.0 - p));
                dv_dp[i] = interior ? 1.0 / (p * (1.0 - p)) : 0.0;
            }
        }
        const GroupSplit groups = GroupSplit::from_labels(gold[b]);
        const double reg_norm = config.c / static_cast<double>(B);
        for (const std::vector<int>* group : {&groups.absent, &groups.present}) {
            const double sign = group == &groups.absent ? 1.0 : -1.0;
            const std::size_t g = group->size();
            if (g < 2) continue;
            const double denom = 2.0 * static_cast<double>(g * g - g);
            for (std::size_t a = 0; a < g; ++a) {
                double sum = 0.0;
                for (std::size_t bb = 0; bb < g; ++bb) {
                    if (bb == a) continue;
                    sum += std::exp(sign * (v[(*group)[a]] + v[(*group)[bb]]));
                }
                grad(b, (*group)[a]) += reg_norm * sign * sum / denom * dv_dp[(*group)[a]];
            }
        }
    }
    return grad;
}

}  // namespace demux
