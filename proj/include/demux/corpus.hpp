#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "demux/common.hpp"

namespace demux {

// One emotion word. The surface is used verbatim in the prompt and stays in
// the prompt language regardless of the example language.
struct Emotion {
    int index = 0;
    std::string surface;
};

class LabelSpace {
public:
    LabelSpace() = default;

    static LabelSpace from_surfaces(const std::vector<std::string>& surfaces) {
        if (surfaces.empty()) throw ConfigError("label space needs at least one emotion");
        LabelSpace space;
        for (std::size_t i = 0; i < surfaces.size(); ++i) {
            const std::string& s = surfaces[i];
            if (s.empty()) throw ConfigError("emotion surface must be non-empty");
            if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
                throw ConfigError("emotion surface contains tab or newline: " + s);
            for (const Emotion& e : space.emotions_)
                if (e.surface == s) throw ConfigError("duplicate emotion surface: " + s);
            space.emotions_.push_back(Emotion{static_cast<int>(i), s});
        }
        return space;
    }

    int size() const { return static_cast<int>(emotions_.size()); }
    const std::vector<Emotion>& emotions() const { return emotions_; }
    const std::string& surface(int i) const { return emotions_.at(i).surface; }

    std::vector<std::string> surfaces() const {
        std::vector<std::string> out;
        out.reserve(emotions_.size());
        for (const Emotion& e : emotions_) out.push_back(e.surface);
        return out;
    }

    // Index of a surface, or -1.
    int find(const std::string& surface) const {
        for (const Emotion& e : emotions_)
            if (e.surface == surface) return e.index;
        return -1;
    }

    // Label space with one emotion removed; indices re-packed to 0..n-2.
    LabelSpace without(int index) const {
        std::vector<std::string> kept;
        for (const Emotion& e : emotions_)
            if (e.index != index) kept.push_back(e.surface);
        return from_surfaces(kept);
    }

private:
    std::vector<Emotion> emotions_;
};

// A partition of the emotion indices [0, n) into m named, disjoint,
// covering, non-empty groups.
class Clustering {
public:
    Clustering() = default;

    static Clustering from_groups(const std::vector<std::vector<int>>& groups,
                                  const std::vector<std::string>& names, int n) {
        if (groups.size() != names.size())
            throw ConfigError("clustering needs one name per cluster");
        if (groups.empty()) throw ConfigError("clustering needs at least one cluster");
        if (static_cast<int>(groups.size()) > n)
            throw ConfigError("more clusters than emotions");
        std::vector<int> seen(n, 0);
        for (std::size_t c = 0; c < groups.size(); ++c) {
            if (names[c].empty()) throw ConfigError("cluster name must be non-empty");
            if (groups[c].empty()) throw ConfigError("cluster '" + names[c] + "' is empty");
            for (int idx : groups[c]) {
                if (idx < 0 || idx >= n)
                    throw ConfigError("cluster '" + names[c] + "' has out-of-range index");
                if (seen[idx]++)
                    throw ConfigError("emotion index " + std::to_string(idx) + " in two clusters");
            }
        }
        for (int i = 0; i < n; ++i)
            if (!seen[i]) throw ConfigError("emotion index " + std::to_string(i) + " not in any cluster");
        for (std::size_t a = 0; a < names.size(); ++a)
            for (std::size_t b = a + 1; b < names.size(); ++b)
                if (names[a] == names[b]) throw ConfigError("duplicate cluster name: " + names[a]);
        Clustering cl;
        cl.groups_ = groups;
        cl.names_ = names;
        cl.n_ = n;
        return cl;
    }

    static Clustering singletons(const LabelSpace& space) {
        std::vector<std::vector<int>> groups;
        for (int i = 0; i < space.size(); ++i) groups.push_back({i});
        return from_groups(groups, space.surfaces(), space.size());
    }

    int size() const { return static_cast<int>(groups_.size()); }
    int emotion_count() const { return n_; }
    const std::vector<int>& members(int c) const { return groups_.at(c); }
    const std::string& name(int c) const { return names_.at(c); }
    const std::vector<std::string>& names() const { return names_; }

    int find(const std::string& name) const {
        for (std::size_t c = 0; c < names_.size(); ++c)
            if (names_[c] == name) return static_cast<int>(c);
        return -1;
    }

private:
    std::vector<std::vector<int>> groups_;
    std::vector<std::string> names_;
    int n_ = 0;
};

enum class LabelMode { emotion, cluster };

struct Example {
    std::string id;
    std::string text;
    std::string language;
    std::vector<std::uint8_t> labels;  // one bit per emotion (or per cluster)
};

struct Dataset {
    std::vector<Example> examples;
    LabelMode mode = LabelMode::emotion;
    std::vector<std::string> label_names;  // surfaces (emotion mode) or cluster names
    std::string split_tag;                 // "", "train", "dev" or "test"

    std::size_t size() const { return examples.size(); }
    int label_dim() const { return static_cast<int>(label_names.size()); }

    void set_language(const std::string& lang) {
        for (Example& e : examples) e.language = lang;
    }
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find('\t', start);
        if (pos == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return cells;
}

}  // namespace detail

// Read the emotion TSV layout: header `ID<TAB>Tweet<TAB>surface...`, then one
// row per example with 0/1 cells, one column per emotion, UTF-8, LF endings.
inline Dataset load_emotion_tsv(const std::string& path, const LabelSpace& space) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);

    Dataset data;
    data.mode = LabelMode::emotion;
    data.label_names = space.surfaces();

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file, header expected");
    const std::vector<std::string> header = detail::split_tabs(line);
    if (header.size() != static_cast<std::size_t>(space.size()) + 2 ||
        header[0] != "ID" || header[1] != "Tweet")
        throw ParseError(path + ":1: header does not match `ID\\tTweet\\t<surfaces>`");
    for (int i = 0; i < space.size(); ++i)
        if (header[i + 2] != space.surface(i))
            throw ParseError(path + ":1: header column " + std::to_string(i + 3) +
                             " is '" + header[i + 2] + "', label space has '" + space.surface(i) + "'");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        const std::vector<std::string> cells = detail::split_tabs(line);
        if (cells.size() != static_cast<std::size_t>(space.size()) + 2)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(space.size() + 2) + " columns, found " +
                             std::to_string(cells.size()));
        Example ex;
        ex.id = cells[0];
        ex.text = cells[1];
        ex.labels.resize(space.size());
        for (int i = 0; i < space.size(); ++i) {
            const std::string& cell = cells[i + 2];
            if (cell == "0")
                ex.labels[i] = 0;
            else if (cell == "1")
                ex.labels[i] = 1;
            else
                throw ParseError(path + ":" + std::to_string(lineno) + ": label cell '" +
                                 cell + "' is not 0 or 1");
        }
        data.examples.push_back(std::move(ex));
    }
    return data;
}

inline void save_emotion_tsv(const Dataset& data, const std::string& path) {
    if (data.mode != LabelMode::emotion) throw InputError("save_emotion_tsv: dataset not in emotion mode");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out << "ID\tTweet";
    for (const std::string& s : data.label_names) out << '\t' << s;
    out << '\n';
    for (const Example& ex : data.examples) {
        out << ex.id << '\t' << ex.text;
        for (std::uint8_t b : ex.labels) out << '\t' << (b ? '1' : '0');
        out << '\n';
    }
}

// Read the cluster JSONL layout: one object per line with keys `id`, `text`
// and `labels` (an array of cluster names).
inline Dataset load_cluster_jsonl(const std::string& path, const Clustering& clustering) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);

    Dataset data;
    data.mode = LabelMode::cluster;
    data.label_names = clustering.names();

    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") || !rec.contains("labels") ||
            !rec["id"].is_string() || !rec["text"].is_string() || !rec["labels"].is_array())
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": record must be {\"id\": str, \"text\": str, \"labels\": [str...]}");
        Example ex;
        ex.id = rec["id"].get<std::string>();
        ex.text = rec["text"].get<std::string>();
        ex.labels.assign(clustering.size(), 0);
        for (const auto& name : rec["labels"]) {
            if (!name.is_string())
                throw ParseError(path + ":" + std::to_string(lineno) + ": label entries must be strings");
            const int c = clustering.find(name.get<std::string>());
            if (c < 0)
                throw ParseError(path + ":" + std::to_string(lineno) + ": unknown cluster name '" +
                                 name.get<std::string>() + "'");
            ex.labels[c] = 1;
        }
        data.examples.push_back(std::move(ex));
    }
    return data;
}

inline void save_cluster_jsonl(const Dataset& data, const std::string& path) {
    if (data.mode != LabelMode::cluster) throw InputError("save_cluster_jsonl: dataset not in cluster mode");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    for (const Example& ex : data.examples) {
        nlohmann::json rec;
        rec["id"] = ex.id;
        rec["text"] = ex.text;
        nlohmann::json labels = nlohmann::json::array();
        for (std::size_t i = 0; i < ex.labels.size(); ++i)
            if (ex.labels[i]) labels.push_back(data.label_names[i]);
        rec["labels"] = std::move(labels);
        out << rec.dump() << '\n';
    }
}

// Random split with largest-remainder rounding of the target sizes.
// Deterministic for a fixed seed; the three parts partition the input.
inline std::array<Dataset, 3> split(const Dataset& data, std::array<double, 3> ratios,
                                    std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    for (double r : ratios)
        if (r <= 0.0) throw ConfigError("split ratios must be positive");
    if (data.examples.empty()) throw ConfigError("cannot split an empty dataset");

    const std::size_t n = data.examples.size();
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double target = static_cast<double>(n) * ratios[k];
        counts[k] = static_cast<std::size_t>(std::floor(target));
        remainder[k] = target - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (std::size_t seat = 0; assigned < n; ++seat, ++assigned) counts[order[seat % 3]]++;

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    static const char* kTags[3] = {"train", "dev", "test"};
    std::array<Dataset, 3> parts;
    std::size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
        parts[k].mode = data.mode;
        parts[k].label_names = data.label_names;
        parts[k].split_tag = kTags[k];
        parts[k].examples.reserve(counts[k]);
        for (std::size_t j = 0; j < counts[k]; ++j, ++pos)
            parts[k].examples.push_back(data.examples[idx[pos]]);
    }
    return parts;
}

// Sampling config for multilingual batches: per-language frequencies p_l and
// the flattening exponent alpha.
struct SamplerConfig {
    double alpha = 0.0;
    std::vector<std::string> languages;
    std::vector<double> frequencies;  // positive; normalized internally
    std::uint64_t seed = 0;
};

// q_l = p_l^alpha / sum_k p_k^alpha. alpha = 1 keeps the empirical
// distribution, alpha = 0 samples languages uniformly.
inline std::vector<double> sampling_distribution(const SamplerConfig& config) {
    if (config.alpha < 0.0 || config.alpha > 1.0)
        throw ConfigError("sampler alpha must lie in [0, 1]");
    if (config.frequencies.empty()) throw ConfigError("sampler needs at least one language");
    if (config.languages.size() != config.frequencies.size())
        throw ConfigError("sampler languages and frequencies must align");
    double total = 0.0;
    for (double p : config.frequencies) {
        if (!(p > 0.0)) throw ConfigError("language frequencies must be positive");
        total += p;
    }
    std::vector<double> q(config.frequencies.size());
    double powered_total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        q[i] = std::pow(config.frequencies[i] / total, config.alpha);
        powered_total += q[i];
    }
    for (double& v : q) v /= powered_total;
    return q;
}

// Infinite batch stream over per-language datasets. Every batch comes from a
// single language drawn from sampling_distribution; within a language,
// examples are drawn without replacement per epoch and reshuffled on
// exhaustion. Single consumer.
class BatchStream {
public:
    BatchStream(std::vector<const Dataset*> per_language, SamplerConfig config, int batch_size)
        : datasets_(std::move(per_language)), config_(std::move(config)),
          batch_size_(batch_size), rng_(config_.seed) {
        if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
        if (datasets_.size() != config_.languages.size())
            throw ConfigError("batch stream needs one dataset per language");
        for (std::size_t l = 0; l < datasets_.size(); ++l)
            if (!datasets_[l] || datasets_[l]->examples.empty())
                throw ConfigError("language dataset '" + config_.languages[l] + "' is empty");
        lang_dist_ = sampling_distribution(config_);
        cursors_.resize(datasets_.size());
        orders_.resize(datasets_.size());
        for (std::size_t l = 0; l < datasets_.size(); ++l) reshuffle(l);
    }

    struct Batch {
        int language_index = 0;
        std::string language;
        std::vector<const Example*> examples;
    };

    Batch next() {
        Batch batch;
        batch.language_index = static_cast<int>(rng_.discrete(lang_dist_));
        batch.language = config_.languages[batch.language_index];
        const std::size_t l = batch.language_index;
        batch.examples.reserve(batch_size_);
        for (int k = 0; k < batch_size_; ++k) {
            if (cursors_[l] >= orders_[l].size()) reshuffle(l);
            batch.examples.push_back(&datasets_[l]->examples[orders_[l][cursors_[l]++]]);
        }
        return batch;
    }

private:
    void reshuffle(std::size_t l) {
        orders_[l].resize(datasets_[l]->examples.size());
        std::iota(orders_[l].begin(), orders_[l].end(), 0);
        rng_.shuffle(orders_[l]);
        cursors_[l] = 0;
    }

    std::vector<const Dataset*> datasets_;
    SamplerConfig config_;
    int batch_size_;
    Rng rng_;
    std::vector<double> lang_dist_;
    std::vector<std::vector<std::size_t>> orders_;
    std::vector<std::size_t> cursors_;
};

// Default frequencies: empirical dataset sizes.
inline SamplerConfig sampler_from_sizes(const std::vector<std::string>& languages,
                                        const std::vector<const Dataset*>& datasets,
                                        double alpha, std::uint64_t seed) {
    SamplerConfig config;
    config.alpha = alpha;
    config.seed = seed;
    config.languages = languages;
    for (const Dataset* d : datasets)
        config.frequencies.push_back(static_cast<double>(d ? d->examples.size() : 0));
    return config;
}

}  // namespace demux
