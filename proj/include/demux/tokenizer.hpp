#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "demux/common.hpp"
#include "demux/corpus.hpp"

namespace demux {

namespace detail {

inline bool is_space_cp(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v';
}

// Canonical composition for the repertoire this artifact meets in practice:
// Latin-1 Supplement / Latin Extended-A precomposed letters plus the Arabic
// hamza/madda compositions. Sequences outside the table pass through.
inline char32_t compose_cp(char32_t base, char32_t mark) {
    struct Entry { char32_t base, mark, composed; };
    static const Entry kTable[] = {
        // grave
        {U'A', 0x300, 0xC0}, {U'E', 0x300, 0xC8}, {U'I', 0x300, 0xCC}, {U'O', 0x300, 0xD2},
        {U'U', 0x300, 0xD9}, {U'a', 0x300, 0xE0}, {U'e', 0x300, 0xE8}, {U'i', 0x300, 0xEC},
        {U'o', 0x300, 0xF2}, {U'u', 0x300, 0xF9},
        // acute
        {U'A', 0x301, 0xC1}, {U'E', 0x301, 0xC9}, {U'I', 0x301, 0xCD}, {U'O', 0x301, 0xD3},
        {U'U', 0x301, 0xDA}, {U'Y', 0x301, 0xDD}, {U'a', 0x301, 0xE1}, {U'e', 0x301, 0xE9},
        {U'i', 0x301, 0xED}, {U'o', 0x301, 0xF3}, {U'u', 0x301, 0xFA}, {U'y', 0x301, 0xFD},
        {U'C', 0x301, 0x106}, {U'c', 0x301, 0x107}, {U'N', 0x301, 0x143}, {U'n', 0x301, 0x144},
        {U'S', 0x301, 0x15A}, {U's', 0x301, 0x15B}, {U'Z', 0x301, 0x179}, {U'z', 0x301, 0x17A},
        // circumflex
        {U'A', 0x302, 0xC2}, {U'E', 0x302, 0xCA}, {U'I', 0x302, 0xCE}, {U'O', 0x302, 0xD4},
        {U'U', 0x302, 0xDB}, {U'a', 0x302, 0xE2}, {U'e', 0x302, 0xEA}, {U'i', 0x302, 0xEE},
        {U'o', 0x302, 0xF4}, {U'u', 0x302, 0xFB},
        // tilde
        {U'A', 0x303, 0xC3}, {U'N', 0x303, 0xD1}, {U'O', 0x303, 0xD5}, {U'a', 0x303, 0xE3},
        {U'n', 0x303, 0xF1}, {U'o', 0x303, 0xF5},
        // diaeresis
        {U'A', 0x308, 0xC4}, {U'E', 0x308, 0xCB}, {U'I', 0x308, 0xCF}, {U'O', 0x308, 0xD6},
        {U'U', 0x308, 0xDC}, {U'a', 0x308, 0xE4}, {U'e', 0x308, 0xEB}, {U'i', 0x308, 0xEF},
        {U'o', 0x308, 0xF6}, {U'u', 0x308, 0xFC}, {U'y', 0x308, 0xFF},
        // ring
        {U'A', 0x30A, 0xC5}, {U'a', 0x30A, 0xE5},
        // caron
        {U'C', 0x30C, 0x10C}, {U'c', 0x30C, 0x10D}, {U'D', 0x30C, 0x10E}, {U'd', 0x30C, 0x10F},
        {U'E', 0x30C, 0x11A}, {U'e', 0x30C, 0x11B}, {U'N', 0x30C, 0x147}, {U'n', 0x30C, 0x148},
        {U'R', 0x30C, 0x158}, {U'r', 0x30C, 0x159}, {U'S', 0x30C, 0x160}, {U's', 0x30C, 0x161},
        {U'T', 0x30C, 0x164}, {U't', 0x30C, 0x165}, {U'Z', 0x30C, 0x17D}, {U'z', 0x30C, 0x17E},
        // cedilla
        {U'C', 0x327, 0xC7}, {U'c', 0x327, 0xE7}, {U'S', 0x327, 0x15E}, {U's', 0x327, 0x15F},
        // Arabic alef/waw/yeh with madda or hamza
        {0x627, 0x653, 0x622}, {0x627, 0x654, 0x623}, {0x648, 0x654, 0x624},
        {0x627, 0x655, 0x625}, {0x64A, 0x654, 0x626},
    };
    for (const Entry& e : kTable)
        if (e.base == base && e.mark == mark) return e.composed;
    return 0;
}

inline std::vector<char32_t> nfc_codepoints(const std::string& text) {
    std::vector<char32_t> raw = decode_utf8(text);
    std::vector<char32_t> out;
    out.reserve(raw.size());
    for (char32_t c : raw) {
        if (!out.empty()) {
            const char32_t composed = compose_cp(out.back(), c);
            if (composed) {
                out.back() = composed;
                continue;
            }
        }
        out.push_back(c);
    }
    return out;
}

inline std::vector<std::vector<char32_t>> whitespace_words(const std::string& text) {
    std::vector<std::vector<char32_t>> words;
    std::vector<char32_t> current;
    for (char32_t c : nfc_codepoints(text)) {
        if (is_space_cp(c)) {
            if (!current.empty()) words.push_back(std::move(current)), current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) words.push_back(std::move(current));
    return words;
}

}  // namespace detail

// Subword vocabulary: dense ids, specials first, plus single-character units
// covering the training corpus and all emotion surfaces. Immutable once built.
class Vocabulary {
public:
    static constexpr int kClsId = 0;
    static constexpr int kSepId = 1;
    static constexpr int kPadId = 2;
    static constexpr int kUnkId = 3;
    static constexpr int kSpecialCount = 4;

    Vocabulary() = default;

    static Vocabulary from_units(const std::vector<std::string>& units) {
        Vocabulary v;
        v.units_ = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
        for (const std::string& u : units) v.add_unit(u);
        v.build_match_index();
        return v;
    }

    int size() const { return static_cast<int>(units_.size()); }
    const std::vector<std::string>& units() const { return units_; }
    const std::string& unit(int id) const { return units_.at(id); }

    // Greedy longest-match subword ids for one word given as codepoints.
    void tokenize_word(const std::vector<char32_t>& word, std::vector<int>& out) const {
        std::size_t pos = 0;
        while (pos < word.size()) {
            int best = -1;
            std::size_t best_len = 0;
            const auto bucket = buckets_.find(word[pos]);
            if (bucket != buckets_.end()) {
                for (const auto& [len, id] : bucket->second) {
                    if (len <= word.size() - pos &&
                        std::equal(units_cp_[id].begin(), units_cp_[id].end(), word.begin() + pos)) {
                        best = id;
                        best_len = len;
                        break;  // bucket is sorted longest first
                    }
                }
            }
            if (best < 0) {
                out.push_back(kUnkId);
                pos += 1;
            } else {
                out.push_back(best);
                pos += best_len;
            }
        }
    }

    friend Vocabulary train_vocab(const std::vector<std::string>&, const std::vector<std::string>&, int);
    friend Vocabulary load_vocab(const std::string&);

private:
    void add_unit(const std::string& u) {
        if (u.empty()) throw ConfigError("vocabulary unit must be non-empty");
        for (const std::string& existing : units_)
            if (existing == u) throw ConfigError("duplicate vocabulary unit: " + u);
        units_.push_back(u);
    }

    void build_match_index() {
        units_cp_.clear();
        units_cp_.reserve(units_.size());
        for (const std::string& u : units_) units_cp_.push_back(decode_utf8(u));
        buckets_.clear();
        for (int id = kSpecialCount; id < size(); ++id) {
            const auto& cps = units_cp_[id];
            buckets_[cps[0]].emplace_back(cps.size(), id);
        }
        for (auto& [first, list] : buckets_)
            std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
    }

    std::vector<std::string> units_;
    std::vector<std::vector<char32_t>> units_cp_;
    std::unordered_map<char32_t, std::vector<std::pair<std::size_t, int>>> buckets_;
};

// Greedy pair-merge (BPE-style) vocabulary of at most target_size units.
// Deterministic: the most frequent pair wins, ties broken by lexicographic
// order of the merged string. Single characters of the corpus, the emotion
// surfaces and the prompt separators are always covered.
inline Vocabulary train_vocab(const std::vector<std::string>& corpus,
                              const std::vector<std::string>& emotion_surfaces,
                              int target_size) {
    if (corpus.empty()) throw ConfigError("train_vocab needs a non-empty corpus");

    // word -> count, words as codepoint-symbol sequences
    std::map<std::vector<std::string>, long long> words;
    const auto add_text = [&](const std::string& text, long long count) {
        for (const auto& word : detail::whitespace_words(text)) {
            std::vector<std::string> syms;
            syms.reserve(word.size());
            for (char32_t c : word) {
                std::string s;
                append_utf8(s, c);
                syms.push_back(std::move(s));
            }
            if (!syms.empty()) words[syms] += count;
        }
    };
    for (const std::string& text : corpus) add_text(text, 1);
    for (const std::string& surface : emotion_surfaces) add_text(surface, 1);
    // prompt separators always tokenizable
    add_text(",", 1);
    add_text("or", 1);
    add_text("?", 1);

    std::map<std::string, int> alphabet;  // sorted for deterministic ids
    for (const auto& [syms, count] : words)
        for (const std::string& s : syms) alphabet[s] = 1;

    const int floor_size = static_cast<int>(alphabet.size()) + Vocabulary::kSpecialCount;
    if (target_size < floor_size)
        throw ConfigError("target_size " + std::to_string(target_size) +
                          " below alphabet+specials floor " + std::to_string(floor_size));

    Vocabulary vocab;
    vocab.units_ = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
    for (const auto& [s, _] : alphabet) vocab.add_unit(s);

    std::vector<std::pair<std::vector<std::string>, long long>> table(words.begin(), words.end());
    while (vocab.size() < target_size) {
        std::map<std::pair<std::string, std::string>, long long> pair_counts;
        for (const auto& [syms, count] : table)
            for (std::size_t i = 0; i + 1 < syms.size(); ++i)
                pair_counts[{syms[i], syms[i + 1]}] += count;

        long long best_count = 1;  // a pair must appear at least twice to merge
        std::pair<std::string, std::string> best;
        std::string best_merged;
        for (const auto& [pair, count] : pair_counts) {
            const std::string merged = pair.first + pair.second;
            if (count > best_count || (count == best_count && !best_merged.empty() && merged < best_merged)) {
                best_count = count;
                best = pair;
                best_merged = merged;
            }
        }
        if (best_merged.empty()) break;

        bool known = false;
        for (const std::string& u : vocab.units_)
            if (u == best_merged) { known = true; break; }
        if (!known) vocab.add_unit(best_merged);

        for (auto& [syms, count] : table) {
            std::vector<std::string> merged_syms;
            merged_syms.reserve(syms.size());
            std::size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    merged_syms.push_back(best_merged);
                    i += 2;
                } else {
                    merged_syms.push_back(syms[i]);
                    i += 1;
                }
            }
            syms = std::move(merged_syms);
        }
        if (known) continue;  // merged string can coincide with an existing unit
    }

    vocab.build_match_index();
    return vocab;
}

// NFC-normalize, split on whitespace, then greedy longest-match per word.
// Total: characters missing from the vocabulary map to [UNK].
inline std::vector<int> tokenize(const Vocabulary& vocab, const std::string& text) {
    std::vector<int> ids;
    for (const auto& word : detail::whitespace_words(text)) vocab.tokenize_word(word, ids);
    return ids;
}

inline std::string decode(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) out += vocab.unit(id);
    return out;
}

// Token ids appearing in any emotion surface (for embedding freezes).
inline std::vector<int> emotion_token_ids(const Vocabulary& vocab, const LabelSpace& space) {
    std::vector<int> ids;
    for (const Emotion& e : space.emotions()) {
        const std::vector<int> t = tokenize(vocab, e.surface);
        ids.insert(ids.end(), t.begin(), t.end());
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

// The prompt string: "e1, e2, ..., or en?"; a single emotion yields "e1?".
inline std::string build_prompt(const LabelSpace& space) {
    const int n = space.size();
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i > 0) out += ", ";
        if (i == n - 1 && n >= 2) out += "or ";
        out += space.surface(i);
    }
    out += "?";
    return out;
}

struct Span {
    int begin = 0;
    int end = 0;  // half-open
    int length() const { return end - begin; }
};

// The prompted input: [CLS] e1 , e2 , ... , or en ? [SEP] x1 ... xl with one
// half-open subtoken span per emotion. Spans cover emotion subtokens only;
// the separator tokens between them belong to no span.
struct PromptEncoding {
    std::vector<int> ids;
    std::vector<Span> spans;
    int prompt_len = 0;  // index of [SEP]
};

// Build the Demux input for one text. The text segment is truncated from the
// right to fit max_len; the prompt never is.
inline PromptEncoding encode(const Vocabulary& vocab, const LabelSpace& space,
                             const std::string& text, int max_len) {
    const int n = space.size();
    PromptEncoding enc;
    enc.ids.push_back(Vocabulary::kClsId);
    enc.spans.reserve(n);
    const std::vector<int> comma = tokenize(vocab, ",");
    const std::vector<int> or_tok = tokenize(vocab, "or");
    const std::vector<int> qmark = tokenize(vocab, "?");
    for (int i = 0; i < n; ++i) {
        Span span;
        span.begin = static_cast<int>(enc.ids.size());
        const std::vector<int> sub = tokenize(vocab, space.surface(i));
        enc.ids.insert(enc.ids.end(), sub.begin(), sub.end());
        span.end = static_cast<int>(enc.ids.size());
        enc.spans.push_back(span);
        if (i < n - 1) enc.ids.insert(enc.ids.end(), comma.begin(), comma.end());
        if (i == n - 2) enc.ids.insert(enc.ids.end(), or_tok.begin(), or_tok.end());
    }
    enc.ids.insert(enc.ids.end(), qmark.begin(), qmark.end());
    enc.prompt_len = static_cast<int>(enc.ids.size());
    enc.ids.push_back(Vocabulary::kSepId);
    if (static_cast<int>(enc.ids.size()) > max_len)
        throw ConfigError("prompt (" + std::to_string(enc.ids.size()) +
                          " tokens with [CLS]/[SEP]) exceeds max_len " + std::to_string(max_len));
    const std::vector<int> text_ids = tokenize(vocab, text);
    const std::size_t room = static_cast<std::size_t>(max_len) - enc.ids.size();
    enc.ids.insert(enc.ids.end(), text_ids.begin(),
                   text_ids.begin() + std::min(room, text_ids.size()));
    return enc;
}

// --- vocabulary file: versioned, one unit per line, specials first ---------

inline constexpr const char* kVocabVersion = "demux-vocab v1";

inline void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot write " + path);
    out << kVocabVersion << '\n';
    for (const std::string& u : vocab.units()) out << u << '\n';
}

inline Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != kVocabVersion)
        throw ParseError(path + ":1: expected version stamp '" + std::string(kVocabVersion) + "'");
    Vocabulary vocab;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() && in.eof()) break;
        if (line.empty()) throw ParseError(path + ":" + std::to_string(lineno) + ": empty unit");
        vocab.units_.push_back(line);
    }
    static const char* kSpecials[4] = {"[CLS]", "[SEP]", "[PAD]", "[UNK]"};
    if (vocab.units_.size() < 4)
        throw ParseError(path + ": vocabulary must start with the four special tokens");
    for (int i = 0; i < 4; ++i)
        if (vocab.units_[i] != kSpecials[i])
            throw ParseError(path + ":" + std::to_string(i + 2) + ": expected special token " +
                             kSpecials[i]);
    for (std::size_t a = 4; a < vocab.units_.size(); ++a)
        for (std::size_t b = a + 1; b < vocab.units_.size(); ++b)
            if (vocab.units_[a] == vocab.units_[b])
                throw ParseError(path + ": duplicate unit '" + vocab.units_[a] + "'");
    vocab.build_match_index();
    return vocab;
}

}  // namespace demux
