#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "demux/common.hpp"
#include "demux/corpus.hpp"
#include "demux/metrics.hpp"
#include "demux/model.hpp"
#include "demux/objective.hpp"

namespace demux {

enum class MetricSelector { jaccard, micro_f1 };

inline std::string to_string(MetricSelector m) {
    return m == MetricSelector::jaccard ? "jaccard" : "micro_f1";
}

inline MetricSelector metric_selector_from_string(const std::string& s) {
    if (s == "jaccard") return MetricSelector::jaccard;
    if (s == "micro_f1") return MetricSelector::micro_f1;
    throw ConfigError("unknown early-stop metric '" + s + "' (jaccard|micro_f1)");
}

// How multilingual dev metrics aggregate for early stopping: pool all dev
// examples (default) or average the metric computed per language.
enum class DevAggregation { pooled, per_language_mean };

struct TrainConfig {
    double learning_rate = 1e-3;
    int warmup_steps = 100;
    int max_epochs = 30;
    int patience = 5;
    int batch_size = 32;
    std::uint64_t seed = 0;
    ObjectiveConfig objective;
    MetricSelector metric = MetricSelector::jaccard;
    DevAggregation dev_aggregation = DevAggregation::pooled;
    FreezeMask freeze;
    double sampler_alpha = 0.0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (warmup_steps < 0) throw ConfigError("warmup steps must be >= 0");
        if (max_epochs < 0) throw ConfigError("max epochs must be >= 0");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (sampler_alpha < 0.0 || sampler_alpha > 1.0) throw ConfigError("sampler alpha must lie in [0, 1]");
        objective.validate();
    }
};

// Linear warmup from zero over warmup_steps, then constant. Steps count
// from 1 at the first update.
inline double learning_rate_at(const TrainConfig& config, long long step) {
    if (config.warmup_steps <= 0 || step >= config.warmup_steps) return config.learning_rate;
    return config.learning_rate * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
}

// Adam with bias correction. Frozen parameters receive zero gradient, keep
// zero moments, and therefore stay bit-identical to initialization.
class AdamOptimizer {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    explicit AdamOptimizer(DemuxModel& model) {
        for (const TensorRef& t : refs(model)) {
            m_.emplace_back(Eigen::ArrayXd::Zero(t.size()));
            v_.emplace_back(Eigen::ArrayXd::Zero(t.size()));
        }
    }

    void step(DemuxModel& model, ModelGradients& grads, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        std::vector<TensorRef> params = refs(model);
        std::vector<TensorRef> gradients = refs_grad(grads);
        if (params.size() != gradients.size()) throw InputError("optimizer: tensor lists differ");
        for (std::size_t i = 0; i < params.size(); ++i) {
            Eigen::Map<Eigen::ArrayXd> p(params[i].data, params[i].size());
            Eigen::Map<const Eigen::ArrayXd> g(gradients[i].data, gradients[i].size());
            m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
            v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * g.square();
            p -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + kEps);
        }
    }

private:
    static std::vector<TensorRef> refs(DemuxModel& model) {
        std::vector<TensorRef> out = model.encoder.tensors();
        for (TensorRef& t : model.head.tensors()) out.push_back(t);
        return out;
    }
    static std::vector<TensorRef> refs_grad(ModelGradients& grads) {
        std::vector<TensorRef> out = grads.encoder.tensors();
        for (TensorRef& t : grads.head.tensors()) out.push_back(t);
        return out;
    }

    long long t_ = 0;
    std::vector<Eigen::ArrayXd> m_, v_;
};

// Self-contained snapshot: weights, vocabulary, label space/clustering and
// the config that produced them.
struct Checkpoint {
    DemuxModel model;
    TrainConfig config;
    std::string metric_name;
    double best_dev_metric = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    MetricBundle dev;      // pooled over all dev examples
    double dev_metric = 0.0;  // the early-stopping value (pooled or per-language mean)
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
};

// Counters proving protocol soundness: which labels contributed loss terms
// and which languages contributed training examples.
struct TrainInstrumentation {
    std::map<std::string, long long> loss_terms_per_label;
    std::map<std::string, long long> training_examples_per_language;
};

using LanguageData = std::vector<std::pair<std::string, const Dataset*>>;

namespace detail {

inline void check_model_dataset(const DemuxModel& model, const Dataset& data, const char* what) {
    if (data.mode != model.mode())
        throw ConfigError(std::string(what) + ": dataset mode does not match model mode");
    if (data.label_dim() != model.target_count())
        throw ConfigError(std::string(what) + ": dataset has " + std::to_string(data.label_dim()) +
                          " labels, model predicts " + std::to_string(model.target_count()));
    const std::vector<std::string> names = model.target_names();
    for (int i = 0; i < data.label_dim(); ++i)
        if (data.label_names[i] != names[i])
            throw ConfigError(std::string(what) + ": label '" + data.label_names[i] +
                              "' does not match model target '" + names[i] + "'");
}

inline std::vector<PromptEncoding> encode_dataset(const DemuxModel& model, const Dataset& data) {
    std::vector<PromptEncoding> encodings;
    encodings.reserve(data.examples.size());
    for (const Example& ex : data.examples) encodings.push_back(model.encode_text(ex.text));
    return encodings;
}

}  // namespace detail

// Forward a whole dataset (no parameter mutation).
inline PredictionBatch predict_dataset(const DemuxModel& model, const Dataset& data,
                                       const std::vector<PromptEncoding>* encodings = nullptr) {
    detail::check_model_dataset(model, data, "predict");
    if (data.examples.empty()) throw InputError("predict: empty dataset");
    PredictionBatch batch;
    batch.mode = data.mode;
    batch.probs.resize(static_cast<Eigen::Index>(data.examples.size()), model.target_count());
    batch.gold.reserve(data.examples.size());
    for (std::size_t i = 0; i < data.examples.size(); ++i) {
        const ExampleForward fwd =
            encodings ? model_forward(model, (*encodings)[i]) : model_forward(model, data.examples[i].text);
        batch.probs.row(static_cast<Eigen::Index>(i)) = fwd.probs.transpose();
        batch.gold.push_back(data.examples[i].labels);
    }
    return batch;
}

// Binarize at 0.5 and compute the metric bundle.
inline MetricBundle evaluate(const DemuxModel& model, const Dataset& data) {
    if (data.examples.empty()) throw InputError("evaluate: empty dataset");
    const PredictionBatch batch = predict_dataset(model, data);
    return compute_metrics(binarize(batch.probs, 0.5), batch.gold, data.label_names);
}

inline MetricBundle evaluate(const Checkpoint& checkpoint, const Dataset& data) {
    return evaluate(checkpoint.model, data);
}

inline double select_metric(const MetricBundle& bundle, MetricSelector selector) {
    return selector == MetricSelector::jaccard ? bundle.jaccard : bundle.micro_f1;
}

// Train with warmup + Adam, dev evaluation each epoch, best-checkpoint
// tracking and patience-based early stopping. Deterministic per seed.
inline TrainResult train(DemuxModel model, const LanguageData& train_sets,
                         const LanguageData& dev_sets, const TrainConfig& config,
                         TrainInstrumentation* instrumentation = nullptr) {
    config.validate();
    if (train_sets.empty()) throw ConfigError("train: no training datasets");
    if (dev_sets.empty()) throw ConfigError("train: no dev datasets");
    std::size_t total_train = 0;
    for (const auto& [lang, data] : train_sets) {
        detail::check_model_dataset(model, *data, "train");
        if (data->examples.empty()) throw ConfigError("train: dataset for '" + lang + "' is empty");
        total_train += data->examples.size();
    }
    for (const auto& [lang, data] : dev_sets) {
        detail::check_model_dataset(model, *data, "dev");
        if (data->examples.empty()) throw ConfigError("train: dev dataset for '" + lang + "' is empty");
    }

    // encodings are pure functions of the text; compute once
    std::vector<std::vector<PromptEncoding>> train_enc, dev_enc;
    for (const auto& [lang, data] : train_sets) train_enc.push_back(detail::encode_dataset(model, *data));
    for (const auto& [lang, data] : dev_sets) dev_enc.push_back(detail::encode_dataset(model, *data));

    const std::vector<std::string> target_names = model.target_names();
    const int T = model.target_count();

    const auto dev_evaluation = [&]() -> std::pair<MetricBundle, double> {
        Eigen::MatrixXd pooled_probs;
        LabelMatrix pooled_gold;
        std::size_t dev_total = 0;
        for (const auto& [lang, data] : dev_sets) dev_total += data->examples.size();
        pooled_probs.resize(static_cast<Eigen::Index>(dev_total), T);
        double per_language_sum = 0.0;
        Eigen::Index row = 0;
        for (std::size_t s = 0; s < dev_sets.size(); ++s) {
            const Dataset& data = *dev_sets[s].second;
            const Eigen::Index start = row;
            for (std::size_t i = 0; i < data.examples.size(); ++i, ++row) {
                pooled_probs.row(row) = model_forward(model, dev_enc[s][i]).probs.transpose();
                pooled_gold.push_back(data.examples[i].labels);
            }
            if (config.dev_aggregation == DevAggregation::per_language_mean) {
                const LabelMatrix bits = binarize(pooled_probs.middleRows(start, row - start), 0.5);
                LabelMatrix gold(pooled_gold.begin() + start, pooled_gold.begin() + row);
                per_language_sum +=
                    select_metric(compute_metrics(bits, gold, data.label_names), config.metric);
            }
        }
        const MetricBundle pooled =
            compute_metrics(binarize(pooled_probs, 0.5), pooled_gold, target_names);
        const double metric = config.dev_aggregation == DevAggregation::pooled
                                  ? select_metric(pooled, config.metric)
                                  : per_language_sum / static_cast<double>(dev_sets.size());
        return {pooled, metric};
    };

    TrainResult result;
    if (config.max_epochs == 0) {
        const auto [bundle, metric] = dev_evaluation();
        result.checkpoint = Checkpoint{std::move(model), config, to_string(config.metric), metric};
        return result;
    }

    std::vector<std::string> languages;
    std::vector<const Dataset*> datasets;
    for (const auto& [lang, data] : train_sets) {
        languages.push_back(lang);
        datasets.push_back(data);
    }
    SamplerConfig sampler =
        sampler_from_sizes(languages, datasets, config.sampler_alpha, splitmix64(config.seed ^ 0xb41c));
    BatchStream stream(datasets, sampler, config.batch_size);

    const long long steps_per_epoch =
        static_cast<long long>((total_train + config.batch_size - 1) / config.batch_size);

    AdamOptimizer optimizer(model);
    ModelGradients grads = zero_gradients(model);
    std::vector<ExampleForward> forwards(config.batch_size);

    double best_metric = -1.0;
    EncoderParameters best_encoder = model.encoder;
    ClassifierHead best_head = model.head;
    int evaluations_without_improvement = 0;
    long long step = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        for (long long s = 0; s < steps_per_epoch; ++s) {
            const BatchStream::Batch batch = stream.next();
            const int B = static_cast<int>(batch.examples.size());
            Eigen::MatrixXd probs(B, T);
            LabelMatrix gold;
            gold.reserve(B);
            for (int b = 0; b < B; ++b) {
                const Example& ex = *batch.examples[b];
                const std::size_t idx =
                    static_cast<std::size_t>(&ex - datasets[batch.language_index]->examples.data());
                forwards[b] = model_forward(model, train_enc[batch.language_index][idx]);
                probs.row(b) = forwards[b].probs.transpose();
                gold.push_back(ex.labels);
            }
            const double loss = total_loss(probs, gold, config.objective);
            if (!std::isfinite(loss))
                throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) +
                                       " step " + std::to_string(s) + "; reduce the learning rate");
            const Eigen::MatrixXd d_probs = loss_backward(probs, gold, config.objective);
            grads.encoder.set_zero();
            grads.head.set_zero();
            for (int b = 0; b < B; ++b)
                model_backward(model, forwards[b], d_probs.row(b).transpose(), grads);
            apply_freeze(grads.encoder, config.freeze);
            ++step;
            optimizer.step(model, grads, learning_rate_at(config, step));
            loss_sum += loss;

            if (instrumentation) {
                instrumentation->training_examples_per_language[batch.language] += B;
                for (int b = 0; b < B; ++b) {
                    const GroupSplit groups = GroupSplit::from_labels(gold[b]);
                    for (int i = 0; i < T; ++i)
                        instrumentation->loss_terms_per_label[target_names[i]] += 1;
                    for (const std::vector<int>* group : {&groups.absent, &groups.present})
                        if (group->size() >= 2)
                            for (int i : *group)
                                instrumentation->loss_terms_per_label[target_names[i]] +=
                                    static_cast<long long>(group->size()) - 1;
                }
            }
        }

        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
        std::tie(record.dev, record.dev_metric) = dev_evaluation();
        result.history.push_back(record);

        if (record.dev_metric > best_metric) {
            best_metric = record.dev_metric;
            best_encoder = model.encoder;
            best_head = model.head;
            evaluations_without_improvement = 0;
        } else {
            ++evaluations_without_improvement;
        }
        if (evaluations_without_improvement >= config.patience) break;
    }

    model.encoder = std::move(best_encoder);
    model.head = std::move(best_head);
    result.checkpoint = Checkpoint{std::move(model), config, to_string(config.metric), best_metric};
    return result;
}

// Continue from a checkpoint on a new label space or clustering: weights and
// vocabulary carry over, the prompt is rebuilt, cluster mode switches pooling.
inline TrainResult finetune(const Checkpoint& checkpoint, const LabelSpace& space,
                            const std::optional<Clustering>& clustering, PoolingVariant pooling,
                            const LanguageData& train_sets, const LanguageData& dev_sets,
                            const TrainConfig& config, TrainInstrumentation* instrumentation = nullptr) {
    if (clustering && clustering->emotion_count() != space.size())
        throw ConfigError("finetune: clustering is over " + std::to_string(clustering->emotion_count()) +
                          " emotions, label space has " + std::to_string(space.size()));
    DemuxModel model = checkpoint.model;
    model.space = space;
    model.clustering = clustering;
    model.pooling = pooling;
    return train(std::move(model), train_sets, dev_sets, config, instrumentation);
}

// --- checkpoint bundle ------------------------------------------------------
//
// A directory holding the vocabulary file, a label-space/clustering manifest,
// a shape manifest, the raw little-endian parameter blob and a version stamp.

inline constexpr const char* kCheckpointVersion = "demux-checkpoint v1";

namespace detail {

inline void write_le_double(std::ostream& out, double value) {
    std::uint64_t bits;
    std::memcpy(&bits, &value, sizeof bits);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(buf, 8);
}

inline double read_le_double(std::istream& in) {
    char buf[8];
    in.read(buf, 8);
    if (!in) throw ParseError("parameter blob truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    double value;
    std::memcpy(&value, &bits, sizeof value);
    return value;
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
    return {{"d", c.d},           {"layers", c.layers},       {"heads", c.heads},
            {"ffn_mult", c.ffn_mult}, {"max_len", c.max_len}, {"vocab_size", c.vocab_size},
            {"layernorm_eps", c.layernorm_eps}, {"init_std", c.init_std}, {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.d = j.at("d").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_mult = j.at("ffn_mult").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.layernorm_eps = j.at("layernorm_eps").get<double>();
    c.init_std = j.at("init_std").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["learning_rate"] = c.learning_rate;
    j["warmup_steps"] = c.warmup_steps;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    j["c"] = c.objective.c;
    j["epsilon"] = c.objective.epsilon;
    j["reg_input"] = c.objective.reg_input == RegInput::probabilities ? "probabilities" : "logits";
    j["metric"] = to_string(c.metric);
    j["dev_aggregation"] =
        c.dev_aggregation == DevAggregation::pooled ? "pooled" : "per_language_mean";
    switch (c.freeze.kind) {
        case FreezeMask::Kind::none: j["freeze"] = "none"; break;
        case FreezeMask::Kind::all_word_embeddings: j["freeze"] = "words"; break;
        case FreezeMask::Kind::emotion_word_embeddings: j["freeze"] = "emotions"; break;
    }
    j["freeze_ids"] = c.freeze.emotion_token_ids;
    j["sampler_alpha"] = c.sampler_alpha;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.at("learning_rate").get<double>();
    c.warmup_steps = j.at("warmup_steps").get<int>();
    c.max_epochs = j.at("max_epochs").get<int>();
    c.patience = j.at("patience").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.objective.c = j.at("c").get<double>();
    c.objective.epsilon = j.at("epsilon").get<double>();
    c.objective.reg_input =
        j.at("reg_input").get<std::string>() == "logits" ? RegInput::logits : RegInput::probabilities;
    c.metric = metric_selector_from_string(j.at("metric").get<std::string>());
    c.dev_aggregation = j.at("dev_aggregation").get<std::string>() == "per_language_mean"
                            ? DevAggregation::per_language_mean
                            : DevAggregation::pooled;
    const std::string freeze = j.at("freeze").get<std::string>();
    if (freeze == "none") c.freeze = FreezeMask::none();
    else if (freeze == "words") c.freeze = FreezeMask::all_words();
    else if (freeze == "emotions") c.freeze = FreezeMask::emotions(j.at("freeze_ids").get<std::vector<int>>());
    else throw ParseError("unknown freeze kind '" + freeze + "'");
    c.sampler_alpha = j.at("sampler_alpha").get<double>();
    return c;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& checkpoint, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "version.txt", std::ios::binary);
        out << kCheckpointVersion << '\n';
    }
    save_vocab(checkpoint.model.vocab, (fs::path(dir) / "vocab.txt").string());

    nlohmann::json labels;
    labels["surfaces"] = checkpoint.model.space.surfaces();
    labels["pooling"] =
        checkpoint.model.pooling == PoolingVariant::embedding ? "embedding" : "maxprob";
    if (checkpoint.model.clustering) {
        nlohmann::json cl;
        cl["names"] = checkpoint.model.clustering->names();
        nlohmann::json groups = nlohmann::json::array();
        for (int c = 0; c < checkpoint.model.clustering->size(); ++c)
            groups.push_back(checkpoint.model.clustering->members(c));
        cl["groups"] = std::move(groups);
        labels["clustering"] = std::move(cl);
    }
    {
        std::ofstream out(fs::path(dir) / "label_space.json", std::ios::binary);
        out << labels.dump(2) << '\n';
    }
    {
        nlohmann::json meta;
        meta["encoder"] = detail::encoder_config_to_json(checkpoint.model.encoder.config);
        meta["train"] = detail::train_config_to_json(checkpoint.config);
        meta["metric_name"] = checkpoint.metric_name;
        meta["best_dev_metric"] = checkpoint.best_dev_metric;
        std::ofstream out(fs::path(dir) / "train_config.json", std::ios::binary);
        out << meta.dump(2) << '\n';
    }

    DemuxModel& model = const_cast<DemuxModel&>(checkpoint.model);
    std::vector<TensorRef> tensors = model.encoder.tensors();
    for (TensorRef& t : model.head.tensors()) tensors.push_back(t);
    nlohmann::json shapes = nlohmann::json::array();
    for (const TensorRef& t : tensors)
        shapes.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
    {
        std::ofstream out(fs::path(dir) / "shapes.json", std::ios::binary);
        out << shapes.dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "params.bin", std::ios::binary);
        for (const TensorRef& t : tensors)
            for (std::ptrdiff_t i = 0; i < t.size(); ++i) detail::write_le_double(out, t.data[i]);
        if (!out) throw ParseError("cannot write parameter blob in " + dir);
    }
}

inline Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    {
        std::ifstream in(fs::path(dir) / "version.txt", std::ios::binary);
        std::string line;
        if (!in || !std::getline(in, line) || line != kCheckpointVersion)
            throw ParseError(dir + ": missing or unsupported checkpoint version stamp");
    }
    Checkpoint checkpoint;
    checkpoint.model.vocab = load_vocab((fs::path(dir) / "vocab.txt").string());

    nlohmann::json labels, meta, shapes;
    {
        std::ifstream in(fs::path(dir) / "label_space.json", std::ios::binary);
        if (!in) throw ParseError(dir + ": missing label_space.json");
        in >> labels;
    }
    {
        std::ifstream in(fs::path(dir) / "train_config.json", std::ios::binary);
        if (!in) throw ParseError(dir + ": missing train_config.json");
        in >> meta;
    }
    {
        std::ifstream in(fs::path(dir) / "shapes.json", std::ios::binary);
        if (!in) throw ParseError(dir + ": missing shapes.json");
        in >> shapes;
    }

    checkpoint.model.space = LabelSpace::from_surfaces(labels.at("surfaces").get<std::vector<std::string>>());
    checkpoint.model.pooling = labels.at("pooling").get<std::string>() == "maxprob"
                                   ? PoolingVariant::maxprob
                                   : PoolingVariant::embedding;
    if (labels.contains("clustering")) {
        const auto& cl = labels.at("clustering");
        checkpoint.model.clustering =
            Clustering::from_groups(cl.at("groups").get<std::vector<std::vector<int>>>(),
                                    cl.at("names").get<std::vector<std::string>>(),
                                    checkpoint.model.space.size());
    }
    const EncoderConfig enc_config = detail::encoder_config_from_json(meta.at("encoder"));
    checkpoint.model.encoder = init_encoder(enc_config);
    checkpoint.model.head = init_head(enc_config.d, 0.0, 0);
    checkpoint.config = detail::train_config_from_json(meta.at("train"));
    checkpoint.metric_name = meta.at("metric_name").get<std::string>();
    checkpoint.best_dev_metric = meta.at("best_dev_metric").get<double>();

    std::vector<TensorRef> tensors = checkpoint.model.encoder.tensors();
    for (TensorRef& t : checkpoint.model.head.tensors()) tensors.push_back(t);
    if (shapes.size() != tensors.size()) throw ParseError(dir + ": shape manifest length mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (shapes[i].at("name").get<std::string>() != tensors[i].name ||
            shapes[i].at("rows").get<std::ptrdiff_t>() != tensors[i].rows ||
            shapes[i].at("cols").get<std::ptrdiff_t>() != tensors[i].cols)
            throw ParseError(dir + ": shape manifest mismatch at tensor '" + tensors[i].name + "'");
    }
    {
        std::ifstream in(fs::path(dir) / "params.bin", std::ios::binary);
        if (!in) throw ParseError(dir + ": missing params.bin");
        for (TensorRef& t : tensors)
            for (std::ptrdiff_t i = 0; i < t.size(); ++i) t.data[i] = detail::read_le_double(in);
        char extra;
        if (in.read(&extra, 1)) throw ParseError(dir + ": parameter blob longer than manifest");
    }
    return checkpoint;
}

}  // namespace demux
