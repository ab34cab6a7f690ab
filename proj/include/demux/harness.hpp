#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cctype>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "demux/common.hpp"
#include "demux/corpus.hpp"
#include "demux/metrics.hpp"
#include "demux/trainer.hpp"

namespace demux {

// --- flat declarative config files ------------------------------------------
//
// `key = value` lines, full-line # comments, no sections. Consumers pull keys
// through the typed getters; anything left unconsumed is an unknown key and a
// hard error (fail-closed).
class FlatConfig {
public:
    static FlatConfig from_string(const std::string& text, const std::string& origin = "<config>") {
        FlatConfig config;
        config.origin_ = origin;
        std::size_t lineno = 0;
        std::size_t start = 0;
        while (start <= text.size()) {
            const std::size_t end = text.find('\n', start);
            std::string line = text.substr(start, end == std::string::npos ? end : end - start);
            start = end == std::string::npos ? text.size() + 1 : end + 1;
            ++lineno;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const std::size_t eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            for (const auto& [k, v] : config.entries_)
                if (k == key)
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            config.entries_.emplace_back(key, value);
            config.consumed_.push_back(false);
        }
        return config;
    }

    static FlatConfig from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        return from_string(buf.str(), path);
    }

    bool has(const std::string& key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return true;
        return false;
    }

    std::string get_string(const std::string& key) {
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first == key) {
                consumed_[i] = true;
                return entries_[i].second;
            }
        throw ConfigError(origin_ + ": missing required key '" + key + "'");
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        try {
            std::size_t pos = 0;
            const double parsed = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return parsed;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" + v + "'");
        }
    }

    long long get_int(const std::string& key, long long fallback) {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        try {
            std::size_t pos = 0;
            const long long parsed = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return parsed;
        } catch (const std::exception&) {
            throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const std::string v = get_string(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" + v + "'");
    }

    std::vector<std::string> get_list(const std::string& key) { return split_list(get_string(key)); }

    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) {
        return has(key) ? get_list(key) : fallback;
    }

    // All keys `prefix<rest>`, in file order, e.g. data.<language> = <path>.
    std::vector<std::pair<std::string, std::string>> prefixed(const std::string& prefix) {
        std::vector<std::pair<std::string, std::string>> out;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (entries_[i].first.rfind(prefix, 0) == 0) {
                consumed_[i] = true;
                out.emplace_back(entries_[i].first.substr(prefix.size()), entries_[i].second);
            }
        return out;
    }

    // Every key must have been consumed by now; unknown keys are errors.
    void finish() const {
        std::string unknown;
        for (std::size_t i = 0; i < entries_.size(); ++i)
            if (!consumed_[i]) unknown += (unknown.empty() ? "" : ", ") + entries_[i].first;
        if (!unknown.empty())
            throw ConfigError(origin_ + ": unknown key(s): " + unknown);
    }

    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    static std::vector<std::string> split_list(const std::string& value) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start <= value.size()) {
            const std::size_t comma = value.find(',', start);
            const std::string item =
                trim(value.substr(start, comma == std::string::npos ? comma : comma - start));
            if (!item.empty()) out.push_back(item);
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return out;
    }

private:
    std::string origin_;
    std::vector<std::pair<std::string, std::string>> entries_;
    std::vector<bool> consumed_;
};

// --- synthetic corpus generator ----------------------------------------------
//
// Pseudo-languages are keyword-lexicon remaps: each emotion is signaled by a
// planted keyword, distinct per language except for a configurable shared
// fraction, which is what makes cross-lingual transfer measurable at desk
// scale. Labels are Bernoulli draws with optional pairwise co-occurrence
// coupling.
struct SyntheticSpec {
    enum class KeywordScheme { surface, synthetic };

    std::vector<std::string> languages;
    std::vector<std::string> emotions;
    int examples_per_language = 1000;
    KeywordScheme keyword_scheme = KeywordScheme::synthetic;
    double overlap = 1.0;
    std::vector<double> marginals;                      // one per emotion
    std::vector<std::tuple<int, int, double>> cooccur;  // (i, j, p): copy y_i into y_j w.p. p
    int filler_vocab_size = 24;
    int filler_words_per_example = 6;
    int keyword_repeat = 1;
    std::vector<std::string> cluster_names;             // optional cluster corpus
    std::vector<std::vector<int>> cluster_groups;
    std::string cluster_language;                       // lexicon used for the cluster corpus
    int cluster_examples = -1;                          // default examples_per_language
    std::uint64_t seed = 0;
    std::string out_dir = ".";

    void validate() const {
        if (languages.empty()) throw ConfigError("generator needs at least one language");
        if (emotions.empty()) throw ConfigError("generator needs at least one emotion");
        std::set<std::string> langs(languages.begin(), languages.end());
        if (langs.size() != languages.size()) throw ConfigError("duplicate language names");
        if (examples_per_language < 1) throw ConfigError("examples_per_language must be >= 1");
        if (overlap < 0.0 || overlap > 1.0) throw ConfigError("overlap must lie in [0, 1]");
        if (marginals.size() != emotions.size())
            throw ConfigError("need one marginal per emotion");
        for (double m : marginals)
            if (m < 0.0 || m > 1.0) throw ConfigError("marginals must lie in [0, 1]");
        for (const auto& [i, j, p] : cooccur) {
            const int n = static_cast<int>(emotions.size());
            if (i < 0 || i >= n || j < 0 || j >= n || i == j)
                throw ConfigError("co-occurrence indices out of range");
            if (p < 0.0 || p > 1.0) throw ConfigError("co-occurrence values must lie in [0, 1]");
        }
        if (filler_vocab_size < 1 || filler_words_per_example < 0 || keyword_repeat < 1)
            throw ConfigError("generator text parameters out of range");
    }
};

namespace detail {

inline std::string pseudo_word(Rng& rng, const std::set<std::string>& used) {
    static const char* kConsonants = "bdfgklmnprstvz";
    static const char* kVowels = "aeiou";
    for (int attempt = 0; attempt < 1000; ++attempt) {
        std::string w;
        const int syllables = 3 + static_cast<int>(rng.uniform_int(2));
        for (int s = 0; s < syllables; ++s) {
            w += kConsonants[rng.uniform_int(14)];
            w += kVowels[rng.uniform_int(5)];
        }
        if (!used.count(w)) return w;
    }
    throw ConfigError("pseudo-word space exhausted; lower the lexicon sizes");
}

}  // namespace detail

struct GeneratedCorpus {
    std::vector<std::pair<std::string, std::string>> tsv_per_language;  // (language, path)
    std::string cluster_jsonl;                                          // empty if no clusters
    std::vector<std::vector<std::string>> keywords_per_language;        // [language][emotion]
};

inline GeneratedCorpus generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(spec.out_dir);

    const int n = static_cast<int>(spec.emotions.size());
    const int L = static_cast<int>(spec.languages.size());
    const LabelSpace space = LabelSpace::from_surfaces(spec.emotions);

    Rng lexicon_rng = Rng(spec.seed).fork(0x1e81c0);
    std::set<std::string> used(spec.emotions.begin(), spec.emotions.end());

    // base lexicon (language 0); other languages share `overlap` of it
    std::vector<std::string> base(n);
    for (int i = 0; i < n; ++i) {
        if (spec.keyword_scheme == SyntheticSpec::KeywordScheme::surface) {
            base[i] = spec.emotions[i];
        } else {
            base[i] = detail::pseudo_word(lexicon_rng, used);
            used.insert(base[i]);
        }
    }
    std::vector<int> shared_order(n);
    std::iota(shared_order.begin(), shared_order.end(), 0);
    lexicon_rng.shuffle(shared_order);
    const int shared_count = static_cast<int>(std::lround(spec.overlap * n));
    std::vector<bool> shared(n, false);
    for (int k = 0; k < shared_count; ++k) shared[shared_order[k]] = true;

    std::vector<std::vector<std::string>> keywords(L, base);
    for (int l = 1; l < L; ++l)
        for (int i = 0; i < n; ++i)
            if (!shared[i]) {
                keywords[l][i] = detail::pseudo_word(lexicon_rng, used);
                used.insert(keywords[l][i]);
            }

    std::vector<std::vector<std::string>> fillers(L);
    for (int l = 0; l < L; ++l)
        for (int f = 0; f < spec.filler_vocab_size; ++f) {
            fillers[l].push_back(detail::pseudo_word(lexicon_rng, used));
            used.insert(fillers[l].back());
        }

    const auto draw_labels = [&](Rng& rng) {
        LabelBits y(n, 0);
        for (int i = 0; i < n; ++i) y[i] = rng.bernoulli(spec.marginals[i]) ? 1 : 0;
        for (const auto& [i, j, p] : spec.cooccur)
            if (rng.bernoulli(p)) y[j] = y[i];
        return y;
    };

    const auto render_text = [&](Rng& rng, int lang, const LabelBits& y) {
        std::vector<std::string> words;
        for (int i = 0; i < n; ++i)
            if (y[i])
                for (int r = 0; r < spec.keyword_repeat; ++r) words.push_back(keywords[lang][i]);
        for (int f = 0; f < spec.filler_words_per_example; ++f)
            words.push_back(fillers[lang][rng.uniform_int(fillers[lang].size())]);
        rng.shuffle(words);
        std::string text;
        for (std::size_t w = 0; w < words.size(); ++w) {
            if (w) text += ' ';
            text += words[w];
        }
        return text;
    };

    GeneratedCorpus out;
    out.keywords_per_language = keywords;
    for (int l = 0; l < L; ++l) {
        Rng rng = Rng(spec.seed).fork(0xd0c5 + static_cast<std::uint64_t>(l));
        Dataset data;
        data.mode = LabelMode::emotion;
        data.label_names = spec.emotions;
        for (int k = 0; k < spec.examples_per_language; ++k) {
            Example ex;
            ex.id = spec.languages[l] + "-" + std::to_string(k);
            ex.language = spec.languages[l];
            ex.labels = draw_labels(rng);
            ex.text = render_text(rng, l, ex.labels);
            data.examples.push_back(std::move(ex));
        }
        const std::string path = (fs::path(spec.out_dir) / (spec.languages[l] + ".tsv")).string();
        save_emotion_tsv(data, path);
        out.tsv_per_language.emplace_back(spec.languages[l], path);
    }

    if (!spec.cluster_names.empty()) {
        const Clustering clustering =
            Clustering::from_groups(spec.cluster_groups, spec.cluster_names, n);
        std::string lang = spec.cluster_language.empty() ? spec.languages.front() : spec.cluster_language;
        int lang_index = -1;
        for (int l = 0; l < L; ++l)
            if (spec.languages[l] == lang) lang_index = l;
        if (lang_index < 0) throw ConfigError("cluster_language '" + lang + "' is not a language");
        const int count = spec.cluster_examples > 0 ? spec.cluster_examples : spec.examples_per_language;
        Rng rng = Rng(spec.seed).fork(0xc1a57e);
        Dataset data;
        data.mode = LabelMode::cluster;
        data.label_names = clustering.names();
        for (int k = 0; k < count; ++k) {
            Example ex;
            ex.id = "cluster-" + std::to_string(k);
            ex.language = lang;
            const LabelBits y = draw_labels(rng);
            ex.text = render_text(rng, lang_index, y);
            ex.labels.assign(clustering.size(), 0);
            for (int c = 0; c < clustering.size(); ++c)
                for (int j : clustering.members(c))
                    if (y[j]) ex.labels[c] = 1;
            data.examples.push_back(std::move(ex));
        }
        out.cluster_jsonl = (fs::path(spec.out_dir) / "clusters.jsonl").string();
        save_cluster_jsonl(data, out.cluster_jsonl);
    }
    return out;
}

// Parse a generator spec file.
inline SyntheticSpec synthetic_spec_from_flat(FlatConfig& config) {
    SyntheticSpec spec;
    spec.languages = config.get_list("languages");
    spec.emotions = config.get_list("emotions");
    spec.examples_per_language = static_cast<int>(config.get_int("examples_per_language", 1000));
    const std::string scheme = config.get_string("keyword_scheme", "synthetic");
    if (scheme == "surface") spec.keyword_scheme = SyntheticSpec::KeywordScheme::surface;
    else if (scheme == "synthetic") spec.keyword_scheme = SyntheticSpec::KeywordScheme::synthetic;
    else throw ConfigError("keyword_scheme must be surface or synthetic");
    spec.overlap = config.get_double("overlap", 1.0);
    std::vector<std::string> marg = config.get_list("marginals", {"0.3"});
    if (marg.size() == 1) {
        spec.marginals.assign(spec.emotions.size(), std::stod(marg[0]));
    } else {
        for (const std::string& m : marg) spec.marginals.push_back(std::stod(m));
    }
    if (config.has("cooccur")) {
        const std::string raw = config.get_string("cooccur");
        std::size_t start = 0;
        while (start < raw.size()) {
            std::size_t semi = raw.find(';', start);
            const std::string item =
                FlatConfig::trim(raw.substr(start, semi == std::string::npos ? semi : semi - start));
            start = semi == std::string::npos ? raw.size() : semi + 1;
            if (item.empty()) continue;
            int i = 0, j = 0;
            double p = 0.0;
            if (std::sscanf(item.c_str(), "%d:%d:%lf", &i, &j, &p) != 3)
                throw ConfigError("cooccur entries must be i:j:p, got '" + item + "'");
            spec.cooccur.emplace_back(i, j, p);
        }
    }
    spec.filler_vocab_size = static_cast<int>(config.get_int("filler_vocab_size", 24));
    spec.filler_words_per_example = static_cast<int>(config.get_int("filler_words_per_example", 6));
    spec.keyword_repeat = static_cast<int>(config.get_int("keyword_repeat", 1));
    for (const auto& [name, members] : config.prefixed("cluster.")) {
        spec.cluster_names.push_back(name);
        std::vector<int> group;
        for (const std::string& member : FlatConfig::split_list(members)) {
            int idx = -1;
            for (std::size_t e = 0; e < spec.emotions.size(); ++e)
                if (spec.emotions[e] == member) idx = static_cast<int>(e);
            if (idx < 0) throw ConfigError("cluster member '" + member + "' is not an emotion");
            group.push_back(idx);
        }
        spec.cluster_groups.push_back(std::move(group));
    }
    spec.cluster_language = config.get_string("cluster_language", "");
    spec.cluster_examples = static_cast<int>(config.get_int("cluster_examples", -1));
    spec.seed = static_cast<std::uint64_t>(config.get_int("seed", 0));
    spec.out_dir = config.get_string("out_dir", ".");
    config.finish();
    return spec;
}

// --- experiment configs -------------------------------------------------------

enum class ExperimentKind {
    train_eval,
    leave_one_language_out,
    leave_one_emotion_out,
    cluster_transfer,
    baseline,
};

inline std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::train_eval: return "train-eval";
        case ExperimentKind::leave_one_language_out: return "leave-one-language-out";
        case ExperimentKind::leave_one_emotion_out: return "leave-one-emotion-out";
        case ExperimentKind::cluster_transfer: return "cluster-transfer";
        case ExperimentKind::baseline: return "baseline";
    }
    return "?";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    if (s == "train-eval") return ExperimentKind::train_eval;
    if (s == "leave-one-language-out") return ExperimentKind::leave_one_language_out;
    if (s == "leave-one-emotion-out") return ExperimentKind::leave_one_emotion_out;
    if (s == "cluster-transfer") return ExperimentKind::cluster_transfer;
    if (s == "baseline") return ExperimentKind::baseline;
    throw ConfigError("unknown experiment kind '" + s + "'");
}

// One protocol run, fully resolved. Everything that affects the metrics is
// in here and echoed into the report.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::train_eval;
    std::vector<std::string> emotions;
    std::vector<std::pair<std::string, std::string>> data_paths;  // (language, path)
    std::string cluster_data;
    std::vector<std::pair<std::string, std::vector<std::string>>> clusters;  // (name, members)
    std::string heldout_language;
    std::string heldout_emotion;
    std::string baseline;  // most-frequent | uniform-random
    bool pretrain = true;
    bool finetune = false;
    PoolingVariant pooling = PoolingVariant::embedding;
    std::string freeze = "none";  // none | words | emotions
    std::vector<std::uint64_t> seeds{0};
    std::uint64_t split_seed = 13;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
    int vocab_target = 512;
    TrainConfig train;
    EncoderConfig encoder;  // vocab_size filled in after vocabulary training

    void validate() const {
        if (seeds.empty()) throw ConfigError("seeds must be non-empty");
        if (emotions.empty() && kind != ExperimentKind::baseline)
            throw ConfigError("emotions must be listed");
        const bool wants_language = kind == ExperimentKind::leave_one_language_out;
        if (!heldout_language.empty() && !wants_language)
            throw ConfigError("heldout_language is only valid for leave-one-language-out");
        if (wants_language && heldout_language.empty())
            throw ConfigError("leave-one-language-out needs heldout_language");
        const bool wants_emotion = kind == ExperimentKind::leave_one_emotion_out;
        if (!heldout_emotion.empty() && !wants_emotion)
            throw ConfigError("heldout_emotion is only valid for leave-one-emotion-out");
        if (wants_emotion && heldout_emotion.empty())
            throw ConfigError("leave-one-emotion-out needs heldout_emotion");
        if (kind == ExperimentKind::cluster_transfer) {
            if (clusters.empty()) throw ConfigError("cluster-transfer needs cluster.<name> groups");
            if (cluster_data.empty()) throw ConfigError("cluster-transfer needs cluster_data");
            if (!pretrain && !finetune)
                throw ConfigError("cluster-transfer needs pretrain and/or finetune");
        } else {
            if (!cluster_data.empty() && kind != ExperimentKind::baseline)
                throw ConfigError("cluster_data is only valid for cluster-transfer or baseline");
        }
        if (kind == ExperimentKind::baseline) {
            if (baseline != "most-frequent" && baseline != "uniform-random")
                throw ConfigError("baseline must be most-frequent or uniform-random");
        } else if (!baseline.empty()) {
            throw ConfigError("baseline is only valid for kind = baseline");
        }
        if (data_paths.empty() && cluster_data.empty())
            throw ConfigError("no datasets configured");
        if (freeze != "none" && freeze != "words" && freeze != "emotions")
            throw ConfigError("freeze must be none, words or emotions");
        train.validate();
    }
};

inline ExperimentConfig experiment_config_from_flat(FlatConfig& config) {
    ExperimentConfig ec;
    ec.kind = experiment_kind_from_string(config.get_string("kind"));
    if (config.has("emotions")) ec.emotions = config.get_list("emotions");
    ec.data_paths = config.prefixed("data.");
    ec.cluster_data = config.get_string("cluster_data", "");
    for (const auto& [name, members] : config.prefixed("cluster."))
        ec.clusters.emplace_back(name, FlatConfig::split_list(members));
    ec.heldout_language = config.get_string("heldout_language", "");
    ec.heldout_emotion = config.get_string("heldout_emotion", "");
    ec.baseline = config.get_string("baseline", "");
    ec.pretrain = config.get_bool("pretrain", true);
    ec.finetune = config.get_bool("finetune", false);
    const std::string pooling = config.get_string("pooling", "embedding");
    if (pooling == "embedding") ec.pooling = PoolingVariant::embedding;
    else if (pooling == "maxprob") ec.pooling = PoolingVariant::maxprob;
    else throw ConfigError("pooling must be embedding or maxprob");
    ec.freeze = config.get_string("freeze", "none");
    ec.seeds.clear();
    for (const std::string& s : config.get_list("seeds", {"0"}))
        ec.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    ec.split_seed = static_cast<std::uint64_t>(config.get_int("split_seed", 13));
    const std::vector<std::string> ratios =
        config.get_list("split_ratios", {"0.8", "0.1", "0.1"});
    if (ratios.size() != 3) throw ConfigError("split_ratios needs three values");
    for (int k = 0; k < 3; ++k) ec.split_ratios[k] = std::stod(ratios[k]);
    ec.vocab_target = static_cast<int>(config.get_int("vocab_size", 512));

    ec.train.learning_rate = config.get_double("learning_rate", 1e-3);
    ec.train.warmup_steps = static_cast<int>(config.get_int("warmup_steps", 100));
    ec.train.max_epochs = static_cast<int>(config.get_int("max_epochs", 30));
    ec.train.patience = static_cast<int>(config.get_int("patience", 5));
    ec.train.batch_size = static_cast<int>(config.get_int("batch_size", 32));
    ec.train.objective.c = config.get_double("c", 0.2);
    ec.train.objective.epsilon = config.get_double("epsilon", 1e-7);
    const std::string reg = config.get_string("reg_input", "probabilities");
    if (reg == "probabilities") ec.train.objective.reg_input = RegInput::probabilities;
    else if (reg == "logits") ec.train.objective.reg_input = RegInput::logits;
    else throw ConfigError("reg_input must be probabilities or logits");
    ec.train.metric = metric_selector_from_string(config.get_string("metric", "jaccard"));
    const std::string agg = config.get_string("dev_aggregation", "pooled");
    if (agg == "pooled") ec.train.dev_aggregation = DevAggregation::pooled;
    else if (agg == "per_language_mean") ec.train.dev_aggregation = DevAggregation::per_language_mean;
    else throw ConfigError("dev_aggregation must be pooled or per_language_mean");
    ec.train.sampler_alpha = config.get_double("alpha", 0.0);

    ec.encoder.d = static_cast<int>(config.get_int("d", 32));
    ec.encoder.layers = static_cast<int>(config.get_int("layers", 2));
    ec.encoder.heads = static_cast<int>(config.get_int("heads", 4));
    ec.encoder.ffn_mult = static_cast<int>(config.get_int("ffn_mult", 4));
    ec.encoder.max_len = static_cast<int>(config.get_int("max_len", 128));
    ec.encoder.layernorm_eps = config.get_double("layernorm_eps", 1e-5);
    ec.encoder.init_std = config.get_double("init_std", 0.02);
    config.finish();
    ec.validate();
    return ec;
}

// The exact resolved configuration, re-parseable by experiment_config_from_flat.
inline std::vector<std::pair<std::string, std::string>> experiment_config_echo(
    const ExperimentConfig& ec) {
    std::vector<std::pair<std::string, std::string>> out;
    const auto add = [&](const std::string& k, const std::string& v) { out.emplace_back(k, v); };
    const auto join = [](const std::vector<std::string>& items) {
        std::string s;
        for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + items[i];
        return s;
    };
    add("kind", to_string(ec.kind));
    if (!ec.emotions.empty()) add("emotions", join(ec.emotions));
    for (const auto& [lang, path] : ec.data_paths) add("data." + lang, path);
    if (!ec.cluster_data.empty()) add("cluster_data", ec.cluster_data);
    for (const auto& [name, members] : ec.clusters) add("cluster." + name, join(members));
    if (!ec.heldout_language.empty()) add("heldout_language", ec.heldout_language);
    if (!ec.heldout_emotion.empty()) add("heldout_emotion", ec.heldout_emotion);
    if (!ec.baseline.empty()) add("baseline", ec.baseline);
    if (ec.kind == ExperimentKind::cluster_transfer) {
        add("pretrain", ec.pretrain ? "true" : "false");
        add("finetune", ec.finetune ? "true" : "false");
        add("pooling", ec.pooling == PoolingVariant::embedding ? "embedding" : "maxprob");
    }
    add("freeze", ec.freeze);
    {
        std::vector<std::string> seeds;
        for (std::uint64_t s : ec.seeds) seeds.push_back(std::to_string(s));
        add("seeds", join(seeds));
    }
    add("split_seed", std::to_string(ec.split_seed));
    {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.17g, %.17g, %.17g", ec.split_ratios[0], ec.split_ratios[1],
                      ec.split_ratios[2]);
        add("split_ratios", buf);
    }
    add("vocab_size", std::to_string(ec.vocab_target));
    const auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    add("learning_rate", fmt(ec.train.learning_rate));
    add("warmup_steps", std::to_string(ec.train.warmup_steps));
    add("max_epochs", std::to_string(ec.train.max_epochs));
    add("patience", std::to_string(ec.train.patience));
    add("batch_size", std::to_string(ec.train.batch_size));
    add("c", fmt(ec.train.objective.c));
    add("epsilon", fmt(ec.train.objective.epsilon));
    add("reg_input",
        ec.train.objective.reg_input == RegInput::probabilities ? "probabilities" : "logits");
    add("metric", to_string(ec.train.metric));
    add("dev_aggregation",
        ec.train.dev_aggregation == DevAggregation::pooled ? "pooled" : "per_language_mean");
    add("alpha", fmt(ec.train.sampler_alpha));
    add("d", std::to_string(ec.encoder.d));
    add("layers", std::to_string(ec.encoder.layers));
    add("heads", std::to_string(ec.encoder.heads));
    add("ffn_mult", std::to_string(ec.encoder.ffn_mult));
    add("max_len", std::to_string(ec.encoder.max_len));
    add("layernorm_eps", fmt(ec.encoder.layernorm_eps));
    add("init_std", fmt(ec.encoder.init_std));
    return out;
}

inline std::string flat_config_text(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string text;
    for (const auto& [k, v] : entries) text += k + " = " + v + "\n";
    return text;
}

// --- run reports --------------------------------------------------------------

struct AggregateStat {
    double mean = 0.0;
    double std_dev = 0.0;  // population std over seeds
};

// One protocol run: per-seed metric bundles keyed by evaluation name, plus
// mean and std per flattened metric. Wall-clock lives beside the report (in
// run_meta.json) so the report bytes depend only on config and seeds.
struct RunReport {
    std::string kind;
    std::vector<std::pair<std::string, std::string>> config_echo;
    std::vector<std::uint64_t> seeds;
    std::vector<std::map<std::string, MetricBundle>> per_seed;  // aligned with seeds
    std::map<std::string, std::map<std::string, AggregateStat>> aggregate;
    std::vector<std::string> highlight_metrics{"micro_f1", "macro_f1", "jaccard"};
    double wall_clock_seconds = 0.0;
};

namespace detail {

inline std::map<std::string, double> flatten_bundle(const MetricBundle& bundle) {
    std::map<std::string, double> flat;
    flat["micro_f1"] = bundle.micro_f1;
    flat["macro_f1"] = bundle.macro_f1;
    flat["jaccard"] = bundle.jaccard;
    for (const auto& [label, value] : bundle.per_label) flat["f1:" + label] = value;
    return flat;
}

inline void aggregate_report(RunReport& report) {
    report.aggregate.clear();
    if (report.per_seed.empty()) return;
    for (const auto& [eval_name, bundle] : report.per_seed.front()) {
        for (const auto& [metric, _] : flatten_bundle(bundle)) {
            double sum = 0.0, sum_sq = 0.0;
            for (const auto& seed_evals : report.per_seed) {
                const double v = flatten_bundle(seed_evals.at(eval_name)).at(metric);
                sum += v;
                sum_sq += v * v;
            }
            const double n = static_cast<double>(report.per_seed.size());
            AggregateStat stat;
            stat.mean = sum / n;
            stat.std_dev = std::sqrt(std::max(0.0, sum_sq / n - stat.mean * stat.mean));
            report.aggregate[eval_name][metric] = stat;
        }
    }
}

}  // namespace detail

inline nlohmann::json report_to_json(const RunReport& report) {
    nlohmann::json j;
    j["version"] = "demux-report v1";
    j["kind"] = report.kind;
    nlohmann::json config = nlohmann::json::array();
    for (const auto& [k, v] : report.config_echo) config.push_back({k, v});
    j["config"] = std::move(config);
    j["seeds"] = report.seeds;
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t s = 0; s < report.per_seed.size(); ++s) {
        nlohmann::json evals;
        for (const auto& [name, bundle] : report.per_seed[s])
            evals[name] = metric_bundle_to_json(bundle);
        per_seed.push_back({{"seed", report.seeds[s]}, {"evals", std::move(evals)}});
    }
    j["per_seed"] = std::move(per_seed);
    nlohmann::json aggregate;
    for (const auto& [eval_name, metrics] : report.aggregate) {
        nlohmann::json entry;
        for (const auto& [metric, stat] : metrics)
            entry[metric] = {{"mean", stat.mean}, {"std", stat.std_dev}};
        aggregate[eval_name] = std::move(entry);
    }
    j["aggregate"] = std::move(aggregate);
    j["highlights"] = report.highlight_metrics;
    return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
    if (j.at("version").get<std::string>() != "demux-report v1")
        throw ParseError("unsupported report version");
    RunReport report;
    report.kind = j.at("kind").get<std::string>();
    for (const auto& kv : j.at("config"))
        report.config_echo.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& entry : j.at("per_seed")) {
        std::map<std::string, MetricBundle> evals;
        for (const auto& [name, bundle] : entry.at("evals").items())
            evals[name] = metric_bundle_from_json(bundle);
        report.per_seed.push_back(std::move(evals));
    }
    for (const auto& [eval_name, metrics] : j.at("aggregate").items())
        for (const auto& [metric, stat] : metrics.items())
            report.aggregate[eval_name][metric] =
                AggregateStat{stat.at("mean").get<double>(), stat.at("std").get<double>()};
    report.highlight_metrics = j.at("highlights").get<std::vector<std::string>>();
    return report;
}

// Markdown table, scores scaled x100 with one decimal, mean±std per cell.
inline std::string report_to_markdown(const RunReport& report) {
    const auto cell = [](const AggregateStat& stat) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%.1f±%.1f", 100.0 * stat.mean, 100.0 * stat.std_dev);
        return std::string(buf);
    };
    std::string md = "# " + report.kind + "\n\n";
    md += "seeds: ";
    for (std::size_t i = 0; i < report.seeds.size(); ++i)
        md += (i ? ", " : "") + std::to_string(report.seeds[i]);
    md += "\n\n| evaluation |";
    for (const std::string& metric : report.highlight_metrics) md += " " + metric + " |";
    md += "\n|---|";
    for (std::size_t i = 0; i < report.highlight_metrics.size(); ++i) md += "---|";
    md += "\n";
    for (const auto& [eval_name, metrics] : report.aggregate) {
        md += "| " + eval_name + " |";
        for (const std::string& metric : report.highlight_metrics) {
            const auto it = metrics.find(metric);
            md += it == metrics.end() ? " - |" : " " + cell(it->second) + " |";
        }
        md += "\n";
    }
    return md;
}

// JSON is the source of truth; markdown is a rendering. Wall-clock and other
// environment details go to run_meta.json so report.json stays reproducible.
inline void write_report(const RunReport& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "report.json", std::ios::binary);
        out << report_to_json(report).dump(2) << '\n';
        if (!out) throw ParseError("cannot write report.json in " + dir);
    }
    {
        std::ofstream out(fs::path(dir) / "report.md", std::ios::binary);
        out << report_to_markdown(report);
    }
    {
        nlohmann::json meta;
        meta["wall_clock_seconds"] = report.wall_clock_seconds;
        std::ofstream out(fs::path(dir) / "run_meta.json", std::ios::binary);
        out << meta.dump(2) << '\n';
    }
}

inline RunReport load_report(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "report.json", std::ios::binary);
    if (!in) throw ParseError("no report.json in " + dir);
    nlohmann::json j;
    in >> j;
    RunReport report = report_from_json(j);
    std::ifstream meta(fs::path(dir) / "run_meta.json", std::ios::binary);
    if (meta) {
        nlohmann::json m;
        meta >> m;
        report.wall_clock_seconds = m.value("wall_clock_seconds", 0.0);
    }
    return report;
}

// --- baselines ----------------------------------------------------------------

// most-frequent: per label, the training-split majority bit (ties -> 1).
// uniform-random: Bernoulli(0.5) per bit, one draw stream per seed.
inline RunReport run_baseline(const std::string& kind, const Dataset& train_data,
                              const Dataset& eval_data, const std::vector<std::uint64_t>& seeds) {
    if (train_data.mode != eval_data.mode || train_data.label_names != eval_data.label_names)
        throw ConfigError("baseline: train and eval datasets must share the label space");
    if (train_data.examples.empty() || eval_data.examples.empty())
        throw ConfigError("baseline: datasets must be non-empty");
    if (seeds.empty()) throw ConfigError("baseline: seeds must be non-empty");

    RunReport report;
    report.kind = "baseline:" + kind;
    report.seeds = seeds;

    LabelMatrix gold;
    for (const Example& ex : eval_data.examples) gold.push_back(ex.labels);
    const std::size_t labels = train_data.label_names.size();

    if (kind == "most-frequent") {
        LabelBits majority(labels, 0);
        for (std::size_t l = 0; l < labels; ++l) {
            std::size_t support = 0;
            for (const Example& ex : train_data.examples) support += ex.labels[l];
            majority[l] = 2 * support >= train_data.examples.size() ? 1 : 0;
        }
        const LabelMatrix pred(eval_data.examples.size(), majority);
        const MetricBundle bundle = compute_metrics(pred, gold, eval_data.label_names);
        for (std::size_t s = 0; s < seeds.size(); ++s)
            report.per_seed.push_back({{"eval", bundle}});
    } else if (kind == "uniform-random") {
        for (std::uint64_t seed : seeds) {
            Rng rng = Rng(seed).fork(0xba5e);
            LabelMatrix pred(eval_data.examples.size(), LabelBits(labels, 0));
            for (auto& row : pred)
                for (std::size_t l = 0; l < labels; ++l) row[l] = rng.bernoulli(0.5) ? 1 : 0;
            report.per_seed.push_back({{"eval", compute_metrics(pred, gold, eval_data.label_names)}});
        }
    } else {
        throw ConfigError("baseline must be most-frequent or uniform-random, got '" + kind + "'");
    }
    detail::aggregate_report(report);
    return report;
}

// --- protocol runner ------------------------------------------------------------

struct RunOptions {
    std::string out_dir;  // when set: report + per-seed checkpoints are written here
    int threads = 1;
    std::optional<std::uint64_t> seed_override;
};

namespace detail {

struct LoadedLanguage {
    std::string language;
    Dataset train, dev, test;
};

// Drop one emotion column from a dataset.
inline Dataset without_label(const Dataset& data, int drop) {
    Dataset out;
    out.mode = data.mode;
    out.split_tag = data.split_tag;
    for (std::size_t l = 0; l < data.label_names.size(); ++l)
        if (static_cast<int>(l) != drop) out.label_names.push_back(data.label_names[l]);
    out.examples.reserve(data.examples.size());
    for (const Example& ex : data.examples) {
        Example copy = ex;
        copy.labels.clear();
        for (std::size_t l = 0; l < ex.labels.size(); ++l)
            if (static_cast<int>(l) != drop) copy.labels.push_back(ex.labels[l]);
        out.examples.push_back(std::move(copy));
    }
    return out;
}

inline Dataset pool_datasets(const std::vector<const Dataset*>& parts) {
    Dataset out;
    if (parts.empty()) throw ConfigError("no datasets to pool");
    out.mode = parts.front()->mode;
    out.label_names = parts.front()->label_names;
    out.split_tag = parts.front()->split_tag;
    for (const Dataset* part : parts) {
        if (part->label_names != out.label_names) throw ConfigError("pooled datasets disagree on labels");
        out.examples.insert(out.examples.end(), part->examples.begin(), part->examples.end());
    }
    return out;
}

}  // namespace detail

// Everything loaded once and shared (read-only) across seed runs.
struct ExperimentContext {
    ExperimentConfig config;
    LabelSpace space;                      // full emotion label space (empty for pure baselines)
    std::optional<Clustering> clustering;  // cluster-transfer only
    std::vector<detail::LoadedLanguage> languages;
    Dataset cluster_train, cluster_dev, cluster_test;
    Vocabulary vocab;
    EncoderConfig encoder_config;          // vocab_size resolved
};

inline ExperimentContext prepare_experiment(const ExperimentConfig& config_in) {
    ExperimentContext ctx;
    ctx.config = config_in;
    ctx.config.validate();
    ExperimentConfig& config = ctx.config;

    if (!config.emotions.empty()) ctx.space = LabelSpace::from_surfaces(config.emotions);

    if (!config.clusters.empty()) {
        std::vector<std::vector<int>> groups;
        std::vector<std::string> names;
        for (const auto& [name, members] : config.clusters) {
            names.push_back(name);
            std::vector<int> group;
            for (const std::string& member : members) {
                const int idx = ctx.space.find(member);
                if (idx < 0)
                    throw ConfigError("cluster member '" + member + "' is not a listed emotion");
                group.push_back(idx);
            }
            groups.push_back(std::move(group));
        }
        ctx.clustering = Clustering::from_groups(groups, names, ctx.space.size());
    }

    for (const auto& [lang, path] : config.data_paths) {
        Dataset full = load_emotion_tsv(path, ctx.space);
        full.set_language(lang);
        auto parts = split(full, config.split_ratios, config.split_seed);
        detail::LoadedLanguage loaded;
        loaded.language = lang;
        loaded.train = std::move(parts[0]);
        loaded.dev = std::move(parts[1]);
        loaded.test = std::move(parts[2]);
        ctx.languages.push_back(std::move(loaded));
    }

    if (!config.cluster_data.empty()) {
        if (!ctx.clustering && config.kind == ExperimentKind::baseline) {
            // baselines on cluster files need the clustering to read names
            throw ConfigError("baseline over cluster_data needs cluster.<name> groups");
        }
        Dataset full = load_cluster_jsonl(config.cluster_data, *ctx.clustering);
        auto parts = split(full, config.split_ratios, config.split_seed);
        ctx.cluster_train = std::move(parts[0]);
        ctx.cluster_dev = std::move(parts[1]);
        ctx.cluster_test = std::move(parts[2]);
    }

    if (config.kind != ExperimentKind::baseline) {
        // vocabulary from the texts the model may train on (training splits
        // only; a held-out language stays out of the vocabulary too)
        std::vector<std::string> corpus;
        for (const detail::LoadedLanguage& lang : ctx.languages) {
            if (config.kind == ExperimentKind::leave_one_language_out &&
                lang.language == config.heldout_language)
                continue;
            for (const Example& ex : lang.train.examples) corpus.push_back(ex.text);
        }
        if (config.kind == ExperimentKind::cluster_transfer && !config.pretrain)
            for (const Example& ex : ctx.cluster_train.examples) corpus.push_back(ex.text);
        if (corpus.empty()) throw ConfigError("no training texts to build a vocabulary from");
        ctx.vocab = train_vocab(corpus, ctx.space.surfaces(), config.vocab_target);
        ctx.encoder_config = config.encoder;
        ctx.encoder_config.vocab_size = ctx.vocab.size();
        ctx.encoder_config.validate();
    }

    if (config.kind == ExperimentKind::leave_one_language_out) {
        bool found = false;
        for (const detail::LoadedLanguage& lang : ctx.languages)
            found = found || lang.language == config.heldout_language;
        if (!found) throw ConfigError("heldout_language '" + config.heldout_language + "' has no data");
        if (ctx.languages.size() < 2)
            throw ConfigError("leave-one-language-out needs at least two languages");
    }
    if (config.kind == ExperimentKind::leave_one_emotion_out &&
        ctx.space.find(config.heldout_emotion) < 0)
        throw ConfigError("heldout_emotion '" + config.heldout_emotion + "' is not a listed emotion");

    return ctx;
}

namespace detail {

inline FreezeMask resolve_freeze(const ExperimentContext& ctx) {
    if (ctx.config.freeze == "none") return FreezeMask::none();
    if (ctx.config.freeze == "words") return FreezeMask::all_words();
    // emotion embeddings, including emotions unseen in training (the full space)
    return FreezeMask::emotions(emotion_token_ids(ctx.vocab, ctx.space));
}

struct SeedOutcome {
    std::map<std::string, MetricBundle> evals;
    TrainInstrumentation instrumentation;
    std::optional<Checkpoint> checkpoint;
};

inline DemuxModel fresh_model(const ExperimentContext& ctx, const LabelSpace& space,
                              std::uint64_t seed) {
    EncoderConfig enc = ctx.encoder_config;
    enc.seed = splitmix64(seed ^ 0xe11c0de5);
    DemuxModel model;
    model.vocab = ctx.vocab;
    model.space = space;
    model.encoder = init_encoder(enc);
    model.head = init_head(enc.d, enc.init_std, splitmix64(seed ^ 0x4ead));
    return model;
}

inline SeedOutcome run_seed(const ExperimentContext& ctx, std::uint64_t seed) {
    const ExperimentConfig& config = ctx.config;
    TrainConfig tc = config.train;
    tc.seed = seed;
    tc.freeze = resolve_freeze(ctx);

    SeedOutcome outcome;
    switch (config.kind) {
        case ExperimentKind::train_eval: {
            LanguageData train_sets, dev_sets;
            for (const LoadedLanguage& lang : ctx.languages) {
                train_sets.emplace_back(lang.language, &lang.train);
                dev_sets.emplace_back(lang.language, &lang.dev);
            }
            TrainResult result = train(fresh_model(ctx, ctx.space, seed), train_sets, dev_sets, tc,
                                       &outcome.instrumentation);
            std::vector<const Dataset*> tests;
            for (const LoadedLanguage& lang : ctx.languages) {
                tests.push_back(&lang.test);
                outcome.evals["test:" + lang.language] = evaluate(result.checkpoint, lang.test);
            }
            outcome.evals["test"] = evaluate(result.checkpoint, pool_datasets(tests));
            outcome.checkpoint = std::move(result.checkpoint);
            break;
        }
        case ExperimentKind::leave_one_language_out: {
            LanguageData train_sets, dev_sets;
            const LoadedLanguage* heldout = nullptr;
            for (const LoadedLanguage& lang : ctx.languages) {
                if (lang.language == config.heldout_language) {
                    heldout = &lang;
                    continue;
                }
                train_sets.emplace_back(lang.language, &lang.train);
                dev_sets.emplace_back(lang.language, &lang.dev);
            }
            TrainResult result = train(fresh_model(ctx, ctx.space, seed), train_sets, dev_sets, tc,
                                       &outcome.instrumentation);
            outcome.evals["heldout:" + heldout->language] = evaluate(result.checkpoint, heldout->test);
            for (const auto& [lang, data] : train_sets) {
                for (const LoadedLanguage& loaded : ctx.languages)
                    if (loaded.language == lang)
                        outcome.evals["test:" + lang] = evaluate(result.checkpoint, loaded.test);
            }
            outcome.checkpoint = std::move(result.checkpoint);
            break;
        }
        case ExperimentKind::leave_one_emotion_out: {
            const int drop = ctx.space.find(config.heldout_emotion);
            const LabelSpace train_space = ctx.space.without(drop);
            std::vector<Dataset> train_data, dev_data;
            train_data.reserve(ctx.languages.size());
            dev_data.reserve(ctx.languages.size());
            LanguageData train_sets, dev_sets;
            for (const LoadedLanguage& lang : ctx.languages) {
                train_data.push_back(without_label(lang.train, drop));
                dev_data.push_back(without_label(lang.dev, drop));
            }
            for (std::size_t l = 0; l < ctx.languages.size(); ++l) {
                train_sets.emplace_back(ctx.languages[l].language, &train_data[l]);
                dev_sets.emplace_back(ctx.languages[l].language, &dev_data[l]);
            }
            TrainResult result = train(fresh_model(ctx, train_space, seed), train_sets, dev_sets, tc,
                                       &outcome.instrumentation);
            // evaluation swaps in the full prompt, unseen emotion included
            DemuxModel eval_model = result.checkpoint.model;
            eval_model.space = ctx.space;
            std::vector<const Dataset*> tests;
            for (const LoadedLanguage& lang : ctx.languages) tests.push_back(&lang.test);
            outcome.evals["test"] = evaluate(eval_model, pool_datasets(tests));
            outcome.checkpoint = std::move(result.checkpoint);
            break;
        }
        case ExperimentKind::cluster_transfer: {
            std::optional<Checkpoint> pretrained;
            if (config.pretrain) {
                LanguageData train_sets, dev_sets;
                for (const LoadedLanguage& lang : ctx.languages) {
                    train_sets.emplace_back(lang.language, &lang.train);
                    dev_sets.emplace_back(lang.language, &lang.dev);
                }
                TrainResult result = train(fresh_model(ctx, ctx.space, seed), train_sets, dev_sets,
                                           tc, &outcome.instrumentation);
                std::vector<const Dataset*> tests;
                for (const LoadedLanguage& lang : ctx.languages) tests.push_back(&lang.test);
                outcome.evals["pretrain_test"] = evaluate(result.checkpoint, pool_datasets(tests));
                pretrained = std::move(result.checkpoint);
            }
            if (config.finetune) {
                LanguageData train_sets{{"cluster", &ctx.cluster_train}};
                LanguageData dev_sets{{"cluster", &ctx.cluster_dev}};
                TrainResult result;
                if (pretrained) {
                    result = finetune(*pretrained, ctx.space, ctx.clustering, config.pooling,
                                      train_sets, dev_sets, tc, &outcome.instrumentation);
                } else {
                    DemuxModel model = fresh_model(ctx, ctx.space, seed);
                    model.clustering = ctx.clustering;
                    model.pooling = config.pooling;
                    result = train(std::move(model), train_sets, dev_sets, tc,
                                   &outcome.instrumentation);
                }
                outcome.evals["cluster_test"] = evaluate(result.checkpoint, ctx.cluster_test);
                outcome.checkpoint = std::move(result.checkpoint);
            } else {
                // zero-shot: rebuild the head-side wiring, no parameter updates
                DemuxModel model = pretrained->model;
                model.clustering = ctx.clustering;
                model.pooling = config.pooling;
                outcome.evals["cluster_test"] = evaluate(model, ctx.cluster_test);
                pretrained->model = std::move(model);
                outcome.checkpoint = std::move(*pretrained);
            }
            break;
        }
        case ExperimentKind::baseline: {
            const bool use_cluster = !config.cluster_data.empty();
            std::vector<const Dataset*> trains, tests;
            if (use_cluster) {
                trains.push_back(&ctx.cluster_train);
                tests.push_back(&ctx.cluster_test);
            } else {
                for (const LoadedLanguage& lang : ctx.languages) {
                    trains.push_back(&lang.train);
                    tests.push_back(&lang.test);
                }
            }
            const RunReport sub = run_baseline(config.baseline, pool_datasets(trains),
                                               pool_datasets(tests), {seed});
            outcome.evals["eval"] = sub.per_seed.front().at("eval");
            break;
        }
    }
    return outcome;
}

}  // namespace detail

// Execute one experiment config: every seed, aggregated. Seed runs are
// independent; `threads` > 1 runs them concurrently with identical results.
inline RunReport run(const ExperimentConfig& config_in, const RunOptions& options = {},
                     std::vector<TrainInstrumentation>* instrumentation_out = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig config = config_in;
    if (options.seed_override) config.seeds = {*options.seed_override};
    const ExperimentContext ctx = prepare_experiment(config);

    std::vector<detail::SeedOutcome> outcomes(ctx.config.seeds.size());
    const int threads = std::max(1, options.threads);
    if (threads == 1 || ctx.config.seeds.size() == 1) {
        for (std::size_t s = 0; s < ctx.config.seeds.size(); ++s)
            outcomes[s] = detail::run_seed(ctx, ctx.config.seeds[s]);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mutex;
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                while (true) {
                    const std::size_t s = next.fetch_add(1);
                    if (s >= ctx.config.seeds.size()) return;
                    try {
                        outcomes[s] = detail::run_seed(ctx, ctx.config.seeds[s]);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        for (std::thread& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    RunReport report;
    report.kind = to_string(ctx.config.kind);
    report.config_echo = experiment_config_echo(ctx.config);
    report.seeds = ctx.config.seeds;
    for (detail::SeedOutcome& outcome : outcomes) report.per_seed.push_back(outcome.evals);
    detail::aggregate_report(report);
    if (ctx.config.kind == ExperimentKind::leave_one_emotion_out)
        report.highlight_metrics.push_back("f1:" + ctx.config.heldout_emotion);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (instrumentation_out) {
        instrumentation_out->clear();
        for (detail::SeedOutcome& outcome : outcomes)
            instrumentation_out->push_back(std::move(outcome.instrumentation));
    }
    if (!options.out_dir.empty()) {
        write_report(report, options.out_dir);
        for (std::size_t s = 0; s < outcomes.size(); ++s)
            if (outcomes[s].checkpoint)
                save_checkpoint(*outcomes[s].checkpoint,
                                (std::filesystem::path(options.out_dir) /
                                 ("seed" + std::to_string(ctx.config.seeds[s])) / "checkpoint")
                                    .string());
    }
    return report;
}

}  // namespace demux
