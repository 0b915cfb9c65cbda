#include "revat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace revat::train {

using perturb::PerturbationState;
using perturb::VocabularyUpdater;

ModeFlags mode_matrix(const TrainConfig& cfg) {
    switch (cfg.mode) {
        case TrainMode::Normal:
            return {};
        case TrainMode::FreeLB:
            return {.adversarial = true};
        case TrainMode::TaVat:
            return {.adversarial = true, .token_perturbation = true};
        case TrainMode::Read:
            return {.adversarial = true,
                    .token_perturbation = true,
                    .separate_vocab = !cfg.disable_spv,
                    .clean_token_leaving = !cfg.disable_ctl};
    }
    throw std::invalid_argument("unknown training mode");
}

double evaluate_accuracy(const ModelAdapter& model,
                         const std::vector<MarkedExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("empty evaluation set");
    int correct = 0;
    for (const auto& ex : examples) {
        if (model.predict(ex).label == ex.label) ++correct;
    }
    return 100.0 * correct / static_cast<double>(examples.size());
}

Trainer::Trainer(ModelAdapter& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg), flags_(mode_matrix(cfg)) {
    auto violations = validate_config(cfg);
    if (!violations.empty()) {
        throw std::invalid_argument("invalid TrainConfig: " + violations.front());
    }
    shuffle_rng_.seed(cfg.seed);
    adv_rng_.seed(cfg.seed ^ 0xadf0adf0adf0adf0ULL);
    if (flags_.token_perturbation) {
        if (cfg.vocab_size < 1) {
            throw std::invalid_argument("vocab_size must be set for token perturbation");
        }
        if (flags_.separate_vocab) {
            vocab_e_ = perturb::init_vocabulary(cfg.vocab_size, cfg.embedding_dim,
                                                cfg.sigma, adv_rng_, Role::Entity);
        }
        vocab_c_ = perturb::init_vocabulary(cfg.vocab_size, cfg.embedding_dim,
                                            cfg.sigma, adv_rng_, Role::Context);
    }
}

std::vector<Matrix> Trainer::plain_gradient(const std::vector<MarkedExample>& batch,
                                            double* mean_loss) {
    std::vector<Matrix> grads;
    double loss_sum = 0;
    for (const auto& ex : batch) {
        Matrix x = model_.embed(ex.token_ids);
        LossGrads lg = model_.loss_and_grads(x, ex, false, true);
        loss_sum += lg.loss;
        if (grads.empty()) {
            grads = std::move(lg.d_params);
        } else {
            for (size_t p = 0; p < grads.size(); ++p) grads[p] += lg.d_params[p];
        }
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads) g *= inv;
    if (mean_loss) *mean_loss = loss_sum * inv;
    return grads;
}

std::pair<std::vector<Matrix>, StepStats> Trainer::adversarial_step(
    const std::vector<MarkedExample>& batch) {
    if (!flags_.adversarial) {
        throw std::logic_error("adversarial_step called in normal mode");
    }
    if (batch.empty()) throw std::invalid_argument("empty batch");

    const int dim = cfg_.embedding_dim;
    const double init_scale = 1.0 / std::sqrt(static_cast<double>(dim));
    std::uniform_real_distribution<double> init(-cfg_.sigma, cfg_.sigma);

    std::vector<Matrix> embeddings(batch.size());
    std::vector<PerturbationState> states(batch.size());
    StepStats stats;

    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        const int len = static_cast<int>(ex.token_ids.size());
        embeddings[b] = model_.embed(ex.token_ids);

        auto& state = states[b];
        if (flags_.token_perturbation) {
            state.eta = perturb::lookup_initial_eta(entity_vocab(), vocab_c_,
                                                    ex.token_ids, ex.roles);
            if (instr_) instr_->vocab_reads += len;
        } else {
            state.eta = Matrix::Zero(len, dim);
        }
        state.delta.resize(len, dim);
        for (int i = 0; i < len; ++i) {
            for (int j = 0; j < dim; ++j) {
                state.delta(i, j) = init_scale * init(adv_rng_);
            }
        }
        if (flags_.clean_token_leaving) {
            std::vector<int> context_indices;
            for (int i = 0; i < len; ++i) {
                if (ex.roles[static_cast<size_t>(i)] == Role::Context) {
                    context_indices.push_back(i);
                }
            }
            state.clean_set = perturb::select_clean_tokens(context_indices,
                                                           cfg_.n_percent, adv_rng_);
            // Clean rows carry no perturbation from step zero on.
            state.eta = perturb::mask_clean_eta(state.eta, state.clean_set);
            stats.clean_tokens_total += static_cast<int>(state.clean_set.size());
        }
    }

    std::vector<Matrix> accumulated;
    const double step_weight = 1.0 / static_cast<double>(cfg_.adv_steps);
    for (int t = 1; t <= cfg_.adv_steps; ++t) {
        std::vector<Matrix> step_grads;
        double loss_sum = 0;
        for (size_t b = 0; b < batch.size(); ++b) {
            const auto& ex = batch[b];
            auto& state = states[b];
            Matrix x_adv = perturb::compose_adversarial_embeddings(embeddings[b], state);
            if (instr_) {
                for (int i : state.clean_set) {
                    ++instr_->clean_row_checks;
                    if (!(x_adv.row(i).array() == embeddings[b].row(i).array()).all()) {
                        ++instr_->clean_row_violations;
                    }
                }
            }
            LossGrads lg = model_.loss_and_grads(x_adv, ex, true, true);
            loss_sum += lg.loss;
            if (step_grads.empty()) {
                step_grads = std::move(lg.d_params);
            } else {
                for (size_t p = 0; p < step_grads.size(); ++p) {
                    step_grads[p] += lg.d_params[p];
                }
            }
            // dL/d(delta) and dL/d(eta) rows equal dL/dX_adv rows; clean
            // rows never entered the composition, so their gradient is zero.
            Matrix pert_grad = perturb::mask_clean_eta(lg.d_input, state.clean_set);
            if (flags_.token_perturbation) {
                state.eta = perturb::project_frobenius(
                    perturb::mask_clean_eta(
                        perturb::normalized_ascent_step(state.eta, pert_grad, cfg_.alpha),
                        state.clean_set),
                    cfg_.epsilon);
                stats.max_eta_norm = std::max(stats.max_eta_norm, state.eta.norm());
            }
            state.delta = perturb::project_frobenius(
                perturb::normalized_ascent_step(state.delta, pert_grad, cfg_.alpha),
                cfg_.epsilon);
            stats.max_delta_norm = std::max(stats.max_delta_norm, state.delta.norm());
            state.step = t;
        }
        const double batch_inv = 1.0 / static_cast<double>(batch.size());
        stats.step_losses.push_back(loss_sum * batch_inv);
        if (accumulated.empty()) {
            accumulated.resize(step_grads.size());
            for (size_t p = 0; p < step_grads.size(); ++p) {
                accumulated[p] = step_weight * batch_inv * step_grads[p];
            }
        } else {
            for (size_t p = 0; p < step_grads.size(); ++p) {
                accumulated[p] += step_weight * batch_inv * step_grads[p];
            }
        }
    }

    if (flags_.token_perturbation) {
        VocabularyUpdater updater;
        for (size_t b = 0; b < batch.size(); ++b) {
            updater.add(batch[b].token_ids, batch[b].roles, states[b].eta);
        }
        if (instr_) {
            ++instr_->vocab_commits;
            if (instr_->record_contributions) {
                instr_->contribution_batches.push_back(updater.contributions());
            }
        }
        if (shared_vocab()) {
            updater.commit_shared(vocab_c_);
        } else {
            updater.commit(vocab_e_, vocab_c_);
        }
    }
    return {std::move(accumulated), std::move(stats)};
}

void Trainer::apply_gradient(const std::vector<Matrix>& grads) {
    auto& params = model_.parameters();
    for (size_t p = 0; p < params.size(); ++p) {
        if (cfg_.weight_decay > 0) {
            params[p] -= cfg_.learning_rate * (grads[p] + cfg_.weight_decay * params[p]);
        } else {
            params[p] -= cfg_.learning_rate * grads[p];
        }
    }
}

double Trainer::step(const std::vector<MarkedExample>& batch) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    double loss = 0;
    if (flags_.adversarial) {
        auto [grads, stats] = adversarial_step(batch);
        loss = std::accumulate(stats.step_losses.begin(), stats.step_losses.end(), 0.0) /
               static_cast<double>(stats.step_losses.size());
        apply_gradient(grads);
    } else {
        auto grads = plain_gradient(batch, &loss);
        apply_gradient(grads);
    }
    return loss;
}

TrainingRun Trainer::train(const std::vector<MarkedExample>& train_set,
                           const std::vector<MarkedExample>& dev_set) {
    if (train_set.empty()) throw std::invalid_argument("empty training set");
    TrainingRun run;
    run.config = cfg_;

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        // Seed-deterministic batch order (hand-rolled Fisher-Yates).
        for (size_t i = order.size(); i > 1; --i) {
            std::uniform_int_distribution<size_t> pick(0, i - 1);
            std::swap(order[i - 1], order[pick(shuffle_rng_)]);
        }
        model_.set_train_mode(true);
        double loss_sum = 0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg_.batch_size)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(cfg_.batch_size));
            std::vector<MarkedExample> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
            const double batch_loss = step(batch);
            loss_sum += batch_loss * static_cast<double>(batch.size());
            seen += batch.size();
        }
        model_.set_train_mode(false);
        EpochRecord rec;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.dev_metric = dev_set.empty() ? 0.0 : evaluate_accuracy(model_, dev_set);
        run.history.push_back(rec);
        // Best dev checkpoint, ties to the earlier epoch.
        if (run.best_epoch < 0 || rec.dev_metric > run.best_dev) {
            run.best_epoch = epoch;
            run.best_dev = rec.dev_metric;
            run.best_params = model_.parameters();
        }
    }
    return run;
}

std::vector<std::pair<double, double>> ctl_sweep(
    const ToyEncoderConfig& encoder_cfg,
    const std::vector<MarkedExample>& train_set,
    const std::vector<MarkedExample>& dev_set, const TrainConfig& cfg,
    const std::vector<double>& probabilities) {
    std::vector<std::pair<double, double>> series;
    for (double p : probabilities) {
        if (p < 0 || p > 100) {
            throw std::invalid_argument("clean-token probability out of [0, 100]");
        }
        TrainConfig run_cfg = cfg;
        run_cfg.n_percent = p;
        ToyEncoder model(encoder_cfg);
        Trainer trainer(model, run_cfg);
        TrainingRun run = trainer.train(train_set, dev_set);
        series.emplace_back(p, run.best_dev);
    }
    return series;
}

}  // namespace revat::train
