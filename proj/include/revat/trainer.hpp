#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "revat/core.hpp"
#include "revat/model.hpp"
#include "revat/perturbation.hpp"

namespace revat::train {

using Rng = std::mt19937_64;

// Effective feature flags per training mode, including the ablation
// ladder: Read with disable_spv and disable_ctl is exactly TaVat;
// TaVat without token perturbation is FreeLB.
struct ModeFlags {
    bool adversarial = false;
    bool token_perturbation = false;   // eta + perturbation vocabularies
    bool separate_vocab = false;       // SPV
    bool clean_token_leaving = false;  // CTL

    bool operator==(const ModeFlags&) const = default;
};

ModeFlags mode_matrix(const TrainConfig& cfg);

struct StepStats {
    std::vector<double> step_losses;  // mean batch loss per inner step
    double max_delta_norm = 0;
    double max_eta_norm = 0;
    int clean_tokens_total = 0;
};

// Optional training-time assertions and write logs for verification.
struct Instrumentation {
    long clean_row_checks = 0;
    long clean_row_violations = 0;
    long vocab_reads = 0;
    long vocab_commits = 0;
    bool record_contributions = false;
    // One entry per committed batch: the raw per-position contributions
    // before duplicate-id averaging.
    std::vector<std::vector<perturb::VocabularyUpdater::Contribution>>
        contribution_batches;
};

struct EpochRecord {
    double train_loss = 0;
    double dev_metric = 0;  // accuracy, percent
};

struct TrainingRun {
    TrainConfig config;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_dev = 0;
    std::vector<Matrix> best_params;  // snapshot at the best dev epoch
};

double evaluate_accuracy(const ModelAdapter& model,
                         const std::vector<MarkedExample>& examples);

// Min-max training loop. Owns the perturbation vocabularies and the
// optimizer state; the model is externally supplied and mutated in
// place. Deterministic under the config seed on one thread.
class Trainer {
public:
    Trainer(ModelAdapter& model, const TrainConfig& cfg);

    const ModeFlags& flags() const { return flags_; }
    bool shared_vocab() const { return !flags_.separate_vocab; }
    perturb::PerturbationVocabulary& entity_vocab() {
        return shared_vocab() ? vocab_c_ : vocab_e_;
    }
    perturb::PerturbationVocabulary& context_vocab() { return vocab_c_; }

    void set_instrumentation(Instrumentation* instr) { instr_ = instr; }

    // Lines 4-17 of the inner procedure: searches perturbations and
    // returns the accumulated parameter gradient without applying it.
    std::pair<std::vector<Matrix>, StepStats> adversarial_step(
        const std::vector<MarkedExample>& batch);

    // One optimizer step (adversarial or plain, per mode); returns the
    // mean batch loss.
    double step(const std::vector<MarkedExample>& batch);

    TrainingRun train(const std::vector<MarkedExample>& train_set,
                      const std::vector<MarkedExample>& dev_set);

private:
    std::vector<Matrix> plain_gradient(const std::vector<MarkedExample>& batch,
                                       double* mean_loss);
    void apply_gradient(const std::vector<Matrix>& grads);

    ModelAdapter& model_;
    TrainConfig cfg_;
    ModeFlags flags_;
    perturb::PerturbationVocabulary vocab_e_;  // unused when shared
    perturb::PerturbationVocabulary vocab_c_;  // the shared table when !SPV
    Rng shuffle_rng_;
    Rng adv_rng_;
    Instrumentation* instr_ = nullptr;
};

// Trains one run per probability with otherwise equal settings (same
// seeds); returns (probability, best dev metric) pairs.
std::vector<std::pair<double, double>> ctl_sweep(
    const ToyEncoderConfig& encoder_cfg,
    const std::vector<MarkedExample>& train_set,
    const std::vector<MarkedExample>& dev_set, const TrainConfig& cfg,
    const std::vector<double>& probabilities);

}  // namespace revat::train
