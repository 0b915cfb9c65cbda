#include "revat/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace revat::data {

using nlohmann::json;

namespace {

uint64_t fnv1a(uint64_t seed, const std::string& s) {
    uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

Span span_from_json(const json& j, const char* name) {
    if (!j.is_array() || j.size() != 2) {
        throw std::runtime_error(std::string(name) + " span must be [begin, end)");
    }
    return {j[0].get<int>(), j[1].get<int>()};
}

// Maps a character-offset interval over the whitespace-joined text to
// token indices: a token belongs to the span if any of its characters do.
Span char_span_to_tokens(const std::string& text,
                         const std::vector<std::string>& tokens, Span chars) {
    int begin = -1, end = -1;
    size_t pos = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
        pos = text.find(tokens[i], pos);
        if (pos == std::string::npos) break;
        const int tok_begin = static_cast<int>(pos);
        const int tok_end = static_cast<int>(pos + tokens[i].size());
        if (tok_begin < chars.end && chars.begin < tok_end) {
            if (begin < 0) begin = static_cast<int>(i);
            end = static_cast<int>(i) + 1;
        }
        pos += tokens[i].size();
    }
    if (begin < 0) throw std::runtime_error("character span matches no token");
    return {begin, end};
}

}  // namespace

int TokenVocab::id_of(const std::string& token) const {
    auto it = ids.find(token);
    return it == ids.end() ? 0 : it->second;
}

TokenVocab build_vocab(const std::vector<Example>& dataset) {
    TokenVocab vocab;
    vocab.tokens = {kUnkToken, kHeadOpen, kHeadClose, kTailOpen, kTailClose};
    std::set<std::string> unique;
    for (const auto& ex : dataset) {
        unique.insert(ex.tokens.begin(), ex.tokens.end());
    }
    for (const auto& t : vocab.tokens) unique.erase(t);
    vocab.tokens.insert(vocab.tokens.end(), unique.begin(), unique.end());
    for (size_t i = 0; i < vocab.tokens.size(); ++i) {
        vocab.ids[vocab.tokens[i]] = static_cast<int>(i);
    }
    return vocab;
}

int LabelSet::index_of(const std::string& label) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) return -1;
    return static_cast<int>(it - labels.begin());
}

LabelSet build_label_set(const std::vector<Example>& dataset) {
    std::set<std::string> unique;
    for (const auto& ex : dataset) unique.insert(ex.relation);
    return {{unique.begin(), unique.end()}};
}

std::vector<Example> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<Example> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("dataset parse failure at line " +
                                     std::to_string(lineno) + ": " + e.what());
        }
        Example ex;
        ex.id = j.at("id").get<std::string>();
        ex.relation = j.at("relation").get<std::string>();
        if (j.contains("tokens")) {
            ex.tokens = j.at("tokens").get<std::vector<std::string>>();
            ex.head_span = span_from_json(j.at("head"), "head");
            ex.tail_span = span_from_json(j.at("tail"), "tail");
        } else {
            const auto text = j.at("text").get<std::string>();
            ex.tokens = split_whitespace(text);
            ex.head_span =
                char_span_to_tokens(text, ex.tokens, span_from_json(j.at("head_char"), "head_char"));
            ex.tail_span =
                char_span_to_tokens(text, ex.tokens, span_from_json(j.at("tail_char"), "tail_char"));
        }
        auto violations = validate_example(ex);
        if (!violations.empty()) {
            throw std::runtime_error("invalid example '" + ex.id + "' at line " +
                                     std::to_string(lineno) + ": " + violations.front());
        }
        out.push_back(std::move(ex));
    }
    return out;
}

void save_dataset(const std::string& path, const std::vector<Example>& dataset) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset file: " + path);
    for (const auto& ex : dataset) {
        json j{{"id", ex.id},
               {"tokens", ex.tokens},
               {"head", {ex.head_span.begin, ex.head_span.end}},
               {"tail", {ex.tail_span.begin, ex.tail_span.end}},
               {"relation", ex.relation}};
        out << j.dump() << "\n";
    }
}

MarkedTokens insert_entity_markers(const Example& example) {
    auto violations = validate_example(example);
    if (!violations.empty()) {
        throw std::invalid_argument("cannot mark invalid example: " +
                                    violations.front());
    }
    MarkedTokens out;
    const int n = static_cast<int>(example.tokens.size());
    for (int i = 0; i <= n; ++i) {
        if (i == example.head_span.begin) {
            out.head_marker_pos = static_cast<int>(out.tokens.size());
            out.tokens.push_back(kHeadOpen);
            out.roles.push_back(Role::Marker);
        }
        if (i == example.tail_span.begin) {
            out.tail_marker_pos = static_cast<int>(out.tokens.size());
            out.tokens.push_back(kTailOpen);
            out.roles.push_back(Role::Marker);
        }
        if (i == example.head_span.end) {
            out.tokens.push_back(kHeadClose);
            out.roles.push_back(Role::Marker);
        }
        if (i == example.tail_span.end) {
            out.tokens.push_back(kTailClose);
            out.roles.push_back(Role::Marker);
        }
        if (i < n) {
            out.tokens.push_back(example.tokens[static_cast<size_t>(i)]);
            out.roles.push_back(example.head_span.contains(i) ||
                                        example.tail_span.contains(i)
                                    ? Role::Entity
                                    : Role::Context);
        }
    }
    return out;
}

Example strip_markers(const MarkedTokens& marked, const std::string& id,
                      const std::string& relation) {
    Example ex;
    ex.id = id;
    ex.relation = relation;
    bool in_head = false, in_tail = false;
    for (size_t i = 0; i < marked.tokens.size(); ++i) {
        const auto& tok = marked.tokens[i];
        if (marked.roles[i] == Role::Marker) {
            const int next = static_cast<int>(ex.tokens.size());
            if (tok == kHeadOpen) { in_head = true; ex.head_span.begin = next; }
            else if (tok == kHeadClose) { in_head = false; ex.head_span.end = next; }
            else if (tok == kTailOpen) { in_tail = true; ex.tail_span.begin = next; }
            else if (tok == kTailClose) { in_tail = false; ex.tail_span.end = next; }
            continue;
        }
        (void)in_head; (void)in_tail;
        ex.tokens.push_back(tok);
    }
    return ex;
}

MarkedExample mark_and_encode(const Example& example, const TokenVocab& vocab,
                              const LabelSet& labels) {
    MarkedTokens marked = insert_entity_markers(example);
    MarkedExample out;
    out.id = example.id;
    out.tokens = std::move(marked.tokens);
    out.roles = std::move(marked.roles);
    out.head_marker_pos = marked.head_marker_pos;
    out.tail_marker_pos = marked.tail_marker_pos;
    out.label = labels.index_of(example.relation);
    if (out.label < 0) {
        throw std::runtime_error("relation not in label set: " + example.relation);
    }
    out.token_ids.reserve(out.tokens.size());
    for (const auto& t : out.tokens) out.token_ids.push_back(vocab.id_of(t));
    return out;
}

std::vector<MarkedExample> mark_and_encode_all(const std::vector<Example>& dataset,
                                               const TokenVocab& vocab,
                                               const LabelSet& labels) {
    std::vector<MarkedExample> out;
    out.reserve(dataset.size());
    for (const auto& ex : dataset) out.push_back(mark_and_encode(ex, vocab, labels));
    return out;
}

std::vector<Example> sample_availability(const std::vector<Example>& dataset,
                                         double fraction, uint64_t seed) {
    if (fraction <= 0 || fraction > 1) {
        throw std::invalid_argument("fraction must be in (0, 1]");
    }
    const size_t k = static_cast<size_t>(
        std::floor(fraction * static_cast<double>(dataset.size()) + 0.5));

    // Order examples by (rank within their label under a seeded hash,
    // then hash). Prefixes of this order are nested across fractions and
    // cover every label as early as possible.
    struct Keyed { size_t index; uint64_t hash; size_t label_rank; };
    std::unordered_map<std::string, std::vector<size_t>> by_label;
    std::vector<Keyed> keyed(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        keyed[i] = {i, fnv1a(seed, dataset[i].id), 0};
        by_label[dataset[i].relation].push_back(i);
    }
    for (auto& [label, members] : by_label) {
        std::sort(members.begin(), members.end(), [&](size_t a, size_t b) {
            return keyed[a].hash < keyed[b].hash;
        });
        for (size_t r = 0; r < members.size(); ++r) keyed[members[r]].label_rank = r;
    }
    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (keyed[a].label_rank != keyed[b].label_rank) {
            return keyed[a].label_rank < keyed[b].label_rank;
        }
        return keyed[a].hash < keyed[b].hash;
    });

    std::vector<Example> out;
    out.reserve(k);
    for (size_t i = 0; i < k && i < order.size(); ++i) {
        out.push_back(dataset[order[i]]);
    }
    return out;
}

std::vector<std::string> validate_synthetic_spec(const SyntheticSpec& spec) {
    std::vector<std::string> violations;
    if (spec.n_relations < 2) violations.push_back("n_relations must be >= 2");
    if (spec.samples_per_relation < 1) {
        violations.push_back("samples_per_relation must be >= 1");
    }
    if (spec.filler_vocab < 1) violations.push_back("filler_vocab must be >= 1");
    if (spec.generic_entity_vocab < 2) {
        violations.push_back("generic_entity_vocab must be >= 2");
    }
    if (spec.shortcut_strength < 0 || spec.shortcut_strength > 1) {
        violations.push_back("shortcut_strength must be in [0, 1]");
    }
    if (spec.min_len < 5) violations.push_back("min_len must be >= 5");
    if (spec.max_len < spec.min_len) violations.push_back("max_len < min_len");
    return violations;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
    auto violations = validate_synthetic_spec(spec);
    if (!violations.empty()) {
        throw std::invalid_argument("invalid SyntheticSpec: " + violations.front());
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
    std::uniform_int_distribution<int> filler(0, spec.filler_vocab - 1);
    std::uniform_int_distribution<int> generic(0, spec.generic_entity_vocab - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    SyntheticDataset out;
    for (int r = 0; r < spec.n_relations; ++r) {
        for (int k = 0; k < spec.samples_per_relation; ++k) {
            const int len = len_dist(rng);
            const bool entity_cue = coin(rng) < spec.shortcut_strength;

            // head, tail: single tokens; context cue: one bigram.
            std::uniform_int_distribution<int> pos_dist(0, len - 1);
            int head_pos, tail_pos, cue_pos;
            do {
                head_pos = pos_dist(rng);
                tail_pos = pos_dist(rng);
                std::uniform_int_distribution<int> cue_dist(0, len - 2);
                cue_pos = cue_dist(rng);
            } while (head_pos == tail_pos || cue_pos == head_pos ||
                     cue_pos + 1 == head_pos || cue_pos == tail_pos ||
                     cue_pos + 1 == tail_pos);

            Example ex;
            ex.id = "syn-" + std::to_string(r) + "-" + std::to_string(k);
            ex.relation = "R" + std::to_string(r);
            ex.tokens.resize(static_cast<size_t>(len));
            for (auto& t : ex.tokens) t = "w" + std::to_string(filler(rng));
            if (entity_cue) {
                ex.tokens[static_cast<size_t>(head_pos)] = "hent" + std::to_string(r);
                ex.tokens[static_cast<size_t>(tail_pos)] = "tent" + std::to_string(r);
            } else {
                int g1 = generic(rng), g2 = generic(rng);
                ex.tokens[static_cast<size_t>(head_pos)] = "gent" + std::to_string(g1);
                ex.tokens[static_cast<size_t>(tail_pos)] = "gent" + std::to_string(g2);
                ex.tokens[static_cast<size_t>(cue_pos)] = "cue" + std::to_string(r) + "a";
                ex.tokens[static_cast<size_t>(cue_pos) + 1] = "cue" + std::to_string(r) + "b";
            }
            ex.head_span = {head_pos, head_pos + 1};
            ex.tail_span = {tail_pos, tail_pos + 1};
            out.cues[ex.id] = entity_cue ? CueType::EntityCue : CueType::ContextCue;
            out.examples.push_back(std::move(ex));
        }
    }
    // Seeded shuffle so relation labels are interleaved.
    for (size_t i = out.examples.size(); i > 1; --i) {
        std::uniform_int_distribution<size_t> pick(0, i - 1);
        std::swap(out.examples[i - 1], out.examples[pick(rng)]);
    }
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens, int begin, int end) {
    std::string out;
    for (int i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += tokens[static_cast<size_t>(i)];
    }
    return out;
}

std::string head_string(const Example& ex) {
    return join_tokens(ex.tokens, ex.head_span.begin, ex.head_span.end);
}

std::string tail_string(const Example& ex) {
    return join_tokens(ex.tokens, ex.tail_span.begin, ex.tail_span.end);
}

std::string build_augmentation_prompt(const Example& example,
                                      const std::vector<Example>& demonstrations) {
    for (const auto& demo : demonstrations) {
        if (demo.relation != example.relation) {
            throw std::invalid_argument("demonstration label mismatch: " +
                                        demo.relation + " vs " + example.relation);
        }
    }
    std::ostringstream os;
    os << "Read the following examples of the relation '" << example.relation
       << "' between the head and tail and write another new example following "
          "the same format. Note that the sentence must contain both head and "
          "tail:\n";
    auto emit = [&](const Example& ex) {
        os << "head: " << head_string(ex) << ", tail: " << tail_string(ex)
           << ", sentence: " << join_tokens(ex.tokens, 0, static_cast<int>(ex.tokens.size()))
           << "\n";
    };
    emit(example);
    for (const auto& demo : demonstrations) emit(demo);
    return os.str();
}

namespace {

// First contiguous case-insensitive occurrence of `needle` tokens in
// `haystack` tokens, or nullopt.
std::optional<Span> find_subsequence(const std::vector<std::string>& haystack,
                                     const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return std::nullopt;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        bool match = true;
        for (size_t j = 0; j < needle.size(); ++j) {
            if (lower(haystack[i + j]) != lower(needle[j])) {
                match = false;
                break;
            }
        }
        if (match) {
            return Span{static_cast<int>(i), static_cast<int>(i + needle.size())};
        }
    }
    return std::nullopt;
}

}  // namespace

std::optional<Example> validate_augmented(const std::string& text,
                                          const std::string& head,
                                          const std::string& tail) {
    Example ex;
    ex.tokens = split_whitespace(text);
    const auto head_tokens = split_whitespace(head);
    const auto tail_tokens = split_whitespace(tail);
    const auto head_span = find_subsequence(ex.tokens, head_tokens);
    const auto tail_span = find_subsequence(ex.tokens, tail_tokens);
    if (!head_span || !tail_span) return std::nullopt;
    ex.head_span = *head_span;
    ex.tail_span = *tail_span;
    if (ex.head_span.overlaps(ex.tail_span)) return std::nullopt;
    return ex;
}

std::vector<Example> augment_dataset(const std::vector<Example>& dataset,
                                     TextGenerator& generator, int per_sample,
                                     uint64_t seed) {
    std::vector<Example> out = dataset;
    if (per_sample <= 0) return out;

    std::unordered_map<std::string, std::vector<size_t>> by_label;
    for (size_t i = 0; i < dataset.size(); ++i) {
        by_label[dataset[i].relation].push_back(i);
    }
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < dataset.size(); ++i) {
        const auto& src = dataset[i];
        const auto& pool = by_label[src.relation];
        for (int k = 0; k < per_sample; ++k) {
            std::vector<Example> demos;
            for (int attempt = 0; attempt < 8 && demos.size() < 2; ++attempt) {
                std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
                const size_t j = pool[pick(rng)];
                if (j == i && pool.size() > 1) continue;
                demos.push_back(dataset[j]);
            }
            const std::string prompt = build_augmentation_prompt(src, demos);
            std::optional<std::string> text;
            try {
                text = generator.generate(prompt);
            } catch (const std::exception& e) {
                std::cerr << "warning: augmentation endpoint failed for '" << src.id
                          << "': " << e.what() << "\n";
                continue;
            }
            if (!text) {
                std::cerr << "warning: augmentation endpoint returned nothing for '"
                          << src.id << "'\n";
                continue;
            }
            auto accepted =
                validate_augmented(*text, head_string(src), tail_string(src));
            if (!accepted) continue;  // discarded, not an error
            accepted->id = src.id + "-aug" + std::to_string(k);
            accepted->relation = src.relation;
            out.push_back(std::move(*accepted));
        }
    }
    return out;
}

StubGenerator make_echo_stub() {
    return StubGenerator([](const std::string& prompt) -> std::optional<std::string> {
        const std::string tag = "sentence: ";
        auto pos = prompt.find(tag);
        if (pos == std::string::npos) return std::nullopt;
        auto end = prompt.find('\n', pos);
        if (end == std::string::npos) end = prompt.size();
        return prompt.substr(pos + tag.size(), end - pos - tag.size());
    });
}

}  // namespace revat::data
