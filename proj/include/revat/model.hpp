#pragma once

#include <Eigen/Dense>
#include <memory>
#include <random>
#include <vector>

#include "revat/core.hpp"

namespace revat {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class GradTarget : uint8_t {
    PerturbationToken,  // dL/d(eta) rows == dL/dX_adv rows
    PerturbationSeq,    // dL/d(delta) == dL/dX_adv
    Params,
};

struct LossGrads {
    double loss = 0;
    Vector scores;                 // per-class scores at the supplied input
    Matrix d_input;                // L x D, gradient w.r.t. the embeddings
    std::vector<Matrix> d_params;  // aligned with ModelAdapter::parameters()
};

struct Prediction {
    int label = -1;
    Vector scores;
};

// Differentiable-model contract the trainer and white-box attack require.
// Gradients are always evaluated at the supplied (possibly perturbed)
// embeddings, never at the clean input.
class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;

    virtual int num_classes() const = 0;
    virtual int embedding_dim() const = 0;

    virtual Matrix embed(const std::vector<int>& token_ids) const = 0;
    virtual Vector forward_from_embeddings(const Matrix& x,
                                           const MarkedExample& seq) const = 0;
    virtual Prediction predict(const MarkedExample& seq) const = 0;

    // want_input / want_params select which gradients are filled in.
    virtual LossGrads loss_and_grads(const Matrix& x_adv, const MarkedExample& seq,
                                     bool want_input, bool want_params) = 0;

    virtual std::vector<Matrix>& parameters() = 0;
    virtual const std::vector<Matrix>& parameters() const = 0;

    virtual void set_train_mode(bool train) = 0;
};

// Argmax with ties broken toward the lowest class index.
int argmax_score(const Vector& scores);

struct ToyEncoderConfig {
    int vocab_size = 0;
    int embedding_dim = 16;
    int hidden_dim = 32;
    int num_classes = 2;
    double dropout = 0.0;
    uint64_t seed = 7;
};

// Desk-scale relation-extraction encoder. Two tanh layers; the first
// mixes each token with its right neighbor and the mean-pooled sequence,
// the classifier reads the concatenated hidden states at the two opening
// entity markers (so each marker sees its entity token directly and the
// rest of the sentence through the mean).
//
//   m      = mean_i x_i
//   h1_i   = tanh(W1 x_i + V1 x_{i+1} + U1 m + b1)   (dropout in train mode)
//   h2_i   = tanh(W2 h1_i + b2)
//   scores = Wc [h2_head ; h2_tail] + bc
class ToyEncoder final : public ModelAdapter {
public:
    enum Param : size_t {
        kEmbed, kW1, kV1, kU1, kB1, kW2, kB2, kWc, kBc, kNumParams
    };

    explicit ToyEncoder(const ToyEncoderConfig& cfg);

    int num_classes() const override { return cfg_.num_classes; }
    int embedding_dim() const override { return cfg_.embedding_dim; }

    Matrix embed(const std::vector<int>& token_ids) const override;
    Vector forward_from_embeddings(const Matrix& x,
                                   const MarkedExample& seq) const override;
    Prediction predict(const MarkedExample& seq) const override;
    LossGrads loss_and_grads(const Matrix& x_adv, const MarkedExample& seq,
                             bool want_input, bool want_params) override;

    std::vector<Matrix>& parameters() override { return params_; }
    const std::vector<Matrix>& parameters() const override { return params_; }

    void set_train_mode(bool train) override { train_mode_ = train; }
    bool train_mode() const { return train_mode_; }

    const ToyEncoderConfig& config() const { return cfg_; }

    std::unique_ptr<ToyEncoder> clone() const;

private:
    ToyEncoderConfig cfg_;
    std::vector<Matrix> params_;
    bool train_mode_ = false;
    mutable std::mt19937_64 dropout_rng_;
};

// Softmax cross-entropy; returns loss and d(loss)/d(scores).
std::pair<double, Vector> cross_entropy(const Vector& scores, int label);

}  // namespace revat
