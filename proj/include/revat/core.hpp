#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace revat {

// Half-open token index interval [begin, end).
struct Span {
    int begin = 0;
    int end = 0;

    int size() const { return end - begin; }
    bool contains(int i) const { return i >= begin && i < end; }
    bool overlaps(const Span& other) const {
        return begin < other.end && other.begin < end;
    }
    bool operator==(const Span&) const = default;
};

// One relation-extraction instance: a tokenized sentence with head/tail
// entity spans and a gold relation label.
struct Example {
    std::string id;
    std::vector<std::string> tokens;
    Span head_span;
    Span tail_span;
    std::string relation;

    bool operator==(const Example&) const = default;
};

enum class Role : uint8_t { Entity, Context, Marker, Special };

using RoleMask = std::vector<Role>;

// True for roles that read/write the entity perturbation vocabulary.
// Markers delimit entities and carry entity signal, so they count as
// entity-role for perturbation purposes.
inline bool is_entity_role(Role r) {
    return r == Role::Entity || r == Role::Marker;
}

enum class TrainMode : uint8_t { Normal, FreeLB, TaVat, Read };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::Read;

    // Adversarial hyper-parameters. Defaults sit on the search grid
    // alpha in {2e-2, 5e-2, 1e-1}, epsilon in {2e-1, 4e-1, 6e-1},
    // adv_steps in {1, 2, 3}.
    double epsilon = 0.4;      // Frobenius-ball attack budget
    double sigma = 0.4;        // perturbation initialization bound
    double alpha = 5e-2;       // adversarial step size
    int adv_steps = 2;         // K, inner ascent steps
    double n_percent = 10.0;   // clean-token-leaving probability, [0, 100]

    // Ablation switches (only meaningful in Read mode).
    bool disable_spv = false;  // collapse to a single shared vocabulary
    bool disable_ctl = false;  // never leave clean tokens

    // Optimizer / loop settings.
    double learning_rate = 0.1;
    double weight_decay = 0.0;
    int epochs = 20;
    int batch_size = 32;

    uint64_t seed = 42;

    // Perturbation-table geometry; vocab_size is normally filled in from
    // the dataset vocabulary before training.
    int embedding_dim = 16;
    int vocab_size = 0;

    bool operator==(const TrainConfig&) const = default;
};

// Diagnostic validation; an empty list means all invariants hold.
std::vector<std::string> validate_example(const Example& example);
std::vector<std::string> validate_example(const Example& example,
                                          const std::vector<std::string>& label_set);
std::vector<std::string> validate_config(const TrainConfig& config);

// Flat key=value config document ('#' starts a comment). Unknown keys
// are an error.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize_config(const TrainConfig& config);

// A marked, encoded sequence ready for the model: entity markers
// inserted, roles assigned, tokens mapped to ids.
struct MarkedExample {
    std::string id;
    std::vector<std::string> tokens;   // marked token strings
    std::vector<int> token_ids;
    RoleMask roles;
    int head_marker_pos = -1;  // position of the head opening marker
    int tail_marker_pos = -1;  // position of the tail opening marker
    int label = -1;            // index into the dataset label set
};

}  // namespace revat
