#include <doctest.h>

#include <random>

#include "revat/trainer.hpp"

using namespace revat;
using namespace revat::train;

namespace {

constexpr int kVocab = 24;

// A tiny separable corpus: the token after the head marker determines
// the label; the rest of the sentence is shared filler.
MarkedExample make_instance(int label, int variant, const std::string& id) {
    MarkedExample seq;
    seq.id = id;
    const int head_tok = 10 + label;            // diagnostic
    const int tail_tok = 14 + (variant % 3);    // uninformative
    seq.token_ids = {1, head_tok, 2, 6 + (variant % 4), 7, 3, tail_tok, 4, 8};
    seq.roles = {Role::Marker, Role::Entity,  Role::Marker,
                 Role::Context, Role::Context, Role::Marker,
                 Role::Entity, Role::Marker,  Role::Context};
    for (int id_ : seq.token_ids) seq.tokens.push_back("t" + std::to_string(id_));
    seq.head_marker_pos = 0;
    seq.tail_marker_pos = 5;
    seq.label = label;
    return seq;
}

std::vector<MarkedExample> make_dataset(int per_label) {
    std::vector<MarkedExample> out;
    for (int v = 0; v < per_label; ++v) {
        for (int label = 0; label < 2; ++label) {
            out.push_back(make_instance(label, v,
                                        "d" + std::to_string(label) + "-" +
                                            std::to_string(v)));
        }
    }
    return out;
}

ToyEncoderConfig encoder_config() {
    ToyEncoderConfig cfg;
    cfg.vocab_size = kVocab;
    cfg.embedding_dim = 6;
    cfg.hidden_dim = 8;
    cfg.num_classes = 2;
    cfg.seed = 11;
    return cfg;
}

TrainConfig train_config(TrainMode mode) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.embedding_dim = 6;
    cfg.vocab_size = kVocab;
    cfg.seed = 42;
    return cfg;
}

std::vector<Matrix> run_steps(TrainMode mode, int steps, double alpha,
                              double sigma, double n_percent, bool disable_spv,
                              bool disable_ctl) {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(mode);
    cfg.alpha = alpha;
    cfg.sigma = sigma;
    cfg.n_percent = n_percent;
    cfg.disable_spv = disable_spv;
    cfg.disable_ctl = disable_ctl;
    Trainer trainer(model, cfg);
    auto data = make_dataset(4);
    for (int s = 0; s < steps; ++s) {
        std::vector<MarkedExample> batch(data.begin() + (s % 2) * 4,
                                         data.begin() + (s % 2) * 4 + 4);
        trainer.step(batch);
    }
    return model.parameters();
}

double max_param_gap(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
    double gap = 0;
    for (size_t p = 0; p < a.size(); ++p) {
        gap = std::max(gap, (a[p] - b[p]).cwiseAbs().maxCoeff());
    }
    return gap;
}

}  // namespace

TEST_CASE("mode_matrix ladder") {
    CHECK(mode_matrix(train_config(TrainMode::Normal)) == ModeFlags{});
    CHECK(mode_matrix(train_config(TrainMode::FreeLB)) ==
          ModeFlags{.adversarial = true});
    CHECK(mode_matrix(train_config(TrainMode::TaVat)) ==
          ModeFlags{.adversarial = true, .token_perturbation = true});
    CHECK(mode_matrix(train_config(TrainMode::Read)) ==
          ModeFlags{.adversarial = true,
                    .token_perturbation = true,
                    .separate_vocab = true,
                    .clean_token_leaving = true});

    TrainConfig ablated = train_config(TrainMode::Read);
    ablated.disable_spv = true;
    ablated.disable_ctl = true;
    CHECK(mode_matrix(ablated) == mode_matrix(train_config(TrainMode::TaVat)));
}

TEST_CASE("trainer rejects invalid configs") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.adv_steps = 0;
    CHECK_THROWS_AS(Trainer(model, cfg), std::invalid_argument);
    cfg = train_config(TrainMode::Read);
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(Trainer(model, cfg), std::invalid_argument);
}

TEST_CASE("with alpha=0 and sigma=0, adversarial modes match plain training") {
    auto normal = run_steps(TrainMode::Normal, 6, 0.05, 0.4, 10, false, false);
    for (TrainMode mode : {TrainMode::FreeLB, TrainMode::TaVat, TrainMode::Read}) {
        auto degenerate = run_steps(mode, 6, 0.0, 0.0, 10, false, false);
        CHECK(max_param_gap(normal, degenerate) <= 1e-9);
    }
}

TEST_CASE("READ with shared vocab and n=0 reproduces TAVAT exactly") {
    auto tavat = run_steps(TrainMode::TaVat, 8, 0.05, 0.4, 10, false, false);
    auto reduced = run_steps(TrainMode::Read, 8, 0.05, 0.4, 0.0, true, false);
    CHECK(max_param_gap(tavat, reduced) == 0.0);
}

TEST_CASE("modes with live perturbations diverge from plain training") {
    auto normal = run_steps(TrainMode::Normal, 4, 0.05, 0.4, 10, false, false);
    auto read = run_steps(TrainMode::Read, 4, 0.05, 0.4, 10, false, false);
    CHECK(max_param_gap(normal, read) > 1e-8);
}

TEST_CASE("adversarial_step keeps perturbations inside the budget") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.epsilon = 0.4;
    cfg.adv_steps = 3;
    Trainer trainer(model, cfg);
    auto data = make_dataset(3);
    auto [grads, stats] = trainer.adversarial_step(data);
    CHECK(grads.size() == ToyEncoder::kNumParams);
    CHECK(stats.step_losses.size() == 3);
    CHECK(stats.max_delta_norm <= 0.4 + 1e-12);
    CHECK(stats.max_eta_norm <= 0.4 + 1e-12);
}

TEST_CASE("clean rows are bit-identical to the clean embeddings") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.n_percent = 60;  // force non-empty clean sets
    Trainer trainer(model, cfg);
    Instrumentation instr;
    trainer.set_instrumentation(&instr);
    auto data = make_dataset(6);
    for (int s = 0; s < 5; ++s) trainer.step(data);
    CHECK(instr.clean_row_checks > 0);
    CHECK(instr.clean_row_violations == 0);
}

TEST_CASE("clean-token leaving reduces context perturbation writes") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.n_percent = 100;  // every context token stays clean
    Trainer trainer(model, cfg);
    Instrumentation instr;
    instr.record_contributions = true;
    trainer.set_instrumentation(&instr);
    trainer.step(make_dataset(2));
    REQUIRE(instr.contribution_batches.size() == 1);
    for (const auto& c : instr.contribution_batches[0]) {
        if (c.vocab_role == Role::Context) {
            CHECK(c.value.isZero(0.0));  // clean rows contribute zeros
        }
    }
}

TEST_CASE("separate vocabularies stay isolated across a step") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.disable_ctl = true;
    Trainer trainer(model, cfg);
    const Matrix ctx_before = trainer.context_vocab().table;
    auto data = make_dataset(2);
    // Batch containing only ids 10..13 at entity positions: rows of the
    // context table for ids never seen as context must not move.
    trainer.step(data);
    std::vector<bool> seen_ctx(kVocab, false);
    for (const auto& ex : data) {
        for (size_t i = 0; i < ex.token_ids.size(); ++i) {
            if (!is_entity_role(ex.roles[i])) {
                seen_ctx[static_cast<size_t>(ex.token_ids[i])] = true;
            }
        }
    }
    for (int id = 0; id < kVocab; ++id) {
        if (!seen_ctx[static_cast<size_t>(id)]) {
            CHECK(trainer.context_vocab().table.row(id) == ctx_before.row(id));
        }
    }
}

TEST_CASE("training is deterministic under the seed") {
    auto a = run_steps(TrainMode::Read, 6, 0.05, 0.4, 15, false, false);
    auto b = run_steps(TrainMode::Read, 6, 0.05, 0.4, 15, false, false);
    CHECK(max_param_gap(a, b) == 0.0);
}

TEST_CASE("train() fits the separable corpus and tracks the best epoch") {
    ToyEncoder model(encoder_config());
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.epochs = 25;
    Trainer trainer(model, cfg);
    auto train_set = make_dataset(12);
    auto dev_set = make_dataset(4);
    TrainingRun run = trainer.train(train_set, dev_set);
    CHECK(run.history.size() == 25);
    CHECK(run.best_epoch >= 0);
    CHECK(run.best_dev == doctest::Approx(100.0));
    // Best-epoch metric really is the max over the history.
    for (const auto& rec : run.history) CHECK(rec.dev_metric <= run.best_dev);
    CHECK(run.history[static_cast<size_t>(run.best_epoch)].dev_metric ==
          run.best_dev);
    CHECK(run.best_params.size() == ToyEncoder::kNumParams);
}

TEST_CASE("evaluate_accuracy") {
    ToyEncoder model(encoder_config());
    auto data = make_dataset(5);
    const double acc = evaluate_accuracy(model, data);
    CHECK(acc >= 0.0);
    CHECK(acc <= 100.0);
    CHECK_THROWS_AS(evaluate_accuracy(model, {}), std::invalid_argument);
}

TEST_CASE("ctl_sweep trains one run per probability") {
    TrainConfig cfg = train_config(TrainMode::Read);
    cfg.epochs = 2;
    auto series = ctl_sweep(encoder_config(), make_dataset(4), make_dataset(2),
                            cfg, {0.0, 15.0, 50.0});
    REQUIRE(series.size() == 3);
    CHECK(series[0].first == 0.0);
    CHECK(series[2].first == 50.0);
    for (const auto& [p, dev] : series) {
        CHECK(dev >= 0.0);
        CHECK(dev <= 100.0);
    }
    CHECK_THROWS_AS(ctl_sweep(encoder_config(), make_dataset(2), make_dataset(2),
                              cfg, {120.0}),
                    std::invalid_argument);
}
