#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "revat/core.hpp"

namespace revat::data {

inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kHeadOpen = "[E11]";
inline constexpr const char* kHeadClose = "[E12]";
inline constexpr const char* kTailOpen = "[E21]";
inline constexpr const char* kTailClose = "[E22]";

// Fixed whitespace-token id map. Ids 0..4 are reserved for [UNK] and the
// four entity markers; the rest are dataset tokens in sorted order.
struct TokenVocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> ids;

    int size() const { return static_cast<int>(tokens.size()); }
    int id_of(const std::string& token) const;  // OOV maps to [UNK]
};

TokenVocab build_vocab(const std::vector<Example>& dataset);

struct LabelSet {
    std::vector<std::string> labels;  // sorted unique
    int index_of(const std::string& label) const;  // -1 if absent

    int size() const { return static_cast<int>(labels.size()); }
};

LabelSet build_label_set(const std::vector<Example>& dataset);

// Line-delimited records with fields id, tokens, head, tail, relation.
// Records may instead carry text + character-offset spans (text,
// head_char, tail_char); ingestion converts those to token indices.
std::vector<Example> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<Example>& dataset);

struct MarkedTokens {
    std::vector<std::string> tokens;
    RoleMask roles;
    int head_marker_pos = -1;
    int tail_marker_pos = -1;
};

// [E11]/[E12] wrap the head span, [E21]/[E22] the tail span, in surface
// order. Length grows by exactly four.
MarkedTokens insert_entity_markers(const Example& example);

// Inverse of insert_entity_markers (modulo id/relation, supplied by the
// caller).
Example strip_markers(const MarkedTokens& marked, const std::string& id,
                      const std::string& relation);

MarkedExample mark_and_encode(const Example& example, const TokenVocab& vocab,
                              const LabelSet& labels);
std::vector<MarkedExample> mark_and_encode_all(const std::vector<Example>& dataset,
                                               const TokenVocab& vocab,
                                               const LabelSet& labels);

// Deterministic stratified subsample of size round(fraction * |dataset|).
// Subsets are nested across fractions for a fixed seed.
std::vector<Example> sample_availability(const std::vector<Example>& dataset,
                                         double fraction, uint64_t seed);

enum class CueType : uint8_t { EntityCue, ContextCue };

struct SyntheticSpec {
    int n_relations = 5;
    int samples_per_relation = 400;
    int filler_vocab = 200;       // non-diagnostic filler token pool
    int generic_entity_vocab = 50;  // shared entity pool for context-cued samples
    double shortcut_strength = 0.9;  // P(label is recoverable from entities)
    int min_len = 8;
    int max_len = 14;
    uint64_t seed = 1;
};

std::vector<std::string> validate_synthetic_spec(const SyntheticSpec& spec);

struct SyntheticDataset {
    std::vector<Example> examples;
    // Answer key: which cue carries the label for each example id.
    std::unordered_map<std::string, CueType> cues;
};

// Each relation owns an entity-token signature and a context bigram
// pattern; with probability shortcut_strength only the entity signature
// is diagnostic, otherwise only the context pattern is.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

// Abstract text-generation endpoint for data augmentation. Failures are
// values (nullopt), not errors.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::optional<std::string> generate(const std::string& prompt) = 0;
};

class StubGenerator final : public TextGenerator {
public:
    using Fn = std::function<std::optional<std::string>(const std::string&)>;
    explicit StubGenerator(Fn fn) : fn_(std::move(fn)) {}
    std::optional<std::string> generate(const std::string& prompt) override {
        return fn_(prompt);
    }

private:
    Fn fn_;
};

// Deterministic stub that replies with the first demonstration sentence
// found in the prompt.
StubGenerator make_echo_stub();

// HTTP client for a conforming generation endpoint:
// POST /generate {"prompt": ...} -> {"text": ...}
std::unique_ptr<TextGenerator> make_http_generator(const std::string& endpoint);

std::string head_string(const Example& example);
std::string tail_string(const Example& example);

// Few-shot augmentation prompt: instruction naming the relation, the
// entity-containment requirement, then head/tail/sentence lines per
// demonstration.
std::string build_augmentation_prompt(const Example& example,
                                      const std::vector<Example>& demonstrations);

// Accepts generated text iff it contains both entity strings as token
// subsequences (case-insensitive); spans are located at first occurrences.
std::optional<Example> validate_augmented(const std::string& text,
                                          const std::string& head,
                                          const std::string& tail);

std::vector<Example> augment_dataset(const std::vector<Example>& dataset,
                                     TextGenerator& generator, int per_sample,
                                     uint64_t seed);

std::string join_tokens(const std::vector<std::string>& tokens, int begin, int end);

}  // namespace revat::data
