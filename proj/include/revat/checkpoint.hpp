#pragma once

#include <memory>
#include <optional>
#include <string>

#include "revat/core.hpp"
#include "revat/data.hpp"
#include "revat/model.hpp"
#include "revat/perturbation.hpp"

namespace revat {

// Versioned binary checkpoint: training config, encoder config and
// parameters, the dataset token/label maps, and both perturbation
// vocabularies when the mode keeps them.
struct Checkpoint {
    TrainConfig train_config;
    ToyEncoderConfig encoder_config;
    std::vector<Matrix> params;
    data::TokenVocab token_vocab;
    std::vector<std::string> labels;
    std::optional<perturb::PerturbationVocabulary> vocab_entity;
    std::optional<perturb::PerturbationVocabulary> vocab_context;

    std::unique_ptr<ToyEncoder> build_model() const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace revat
