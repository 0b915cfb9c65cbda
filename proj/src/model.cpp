#include "revat/model.hpp"

#include <cmath>
#include <stdexcept>

namespace revat {

int argmax_score(const Vector& scores) {
    int best = 0;
    for (int c = 1; c < scores.size(); ++c) {
        if (scores(c) > scores(best)) best = c;
    }
    return best;
}

std::pair<double, Vector> cross_entropy(const Vector& scores, int label) {
    const double max = scores.maxCoeff();
    Vector exps = (scores.array() - max).exp();
    const double sum = exps.sum();
    Vector probs = exps / sum;
    const double loss = -(scores(label) - max - std::log(sum));
    Vector d_scores = probs;
    d_scores(label) -= 1.0;
    return {loss, d_scores};
}

namespace {

Matrix uniform_matrix(int rows, int cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    }
    return m;
}

struct ForwardCache {
    Vector mean;            // D
    Vector h1[2], h1d[2];   // pre/post dropout, marker rows only
    Vector mask[2];         // dropout masks (scaled), empty if unused
    Vector h2[2];
    Vector scores;
    int pos[2] = {-1, -1};
};

}  // namespace

ToyEncoder::ToyEncoder(const ToyEncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.vocab_size < 1 || cfg.embedding_dim < 1 || cfg.hidden_dim < 1 ||
        cfg.num_classes < 2) {
        throw std::invalid_argument("invalid ToyEncoderConfig dimensions");
    }
    if (cfg.dropout < 0 || cfg.dropout >= 1) {
        throw std::invalid_argument("dropout must be in [0, 1)");
    }
    const int d = cfg.embedding_dim;
    const int h = cfg.hidden_dim;
    const int c = cfg.num_classes;
    std::mt19937_64 rng(cfg.seed);
    params_.resize(kNumParams);
    params_[kEmbed] = uniform_matrix(cfg.vocab_size, d, 1.0 / std::sqrt(d), rng);
    params_[kW1] = uniform_matrix(h, d, 1.0 / std::sqrt(d), rng);
    params_[kV1] = uniform_matrix(h, d, 1.0 / std::sqrt(d), rng);
    params_[kU1] = uniform_matrix(h, d, 1.0 / std::sqrt(d), rng);
    params_[kB1] = Matrix::Zero(h, 1);
    params_[kW2] = uniform_matrix(h, h, 1.0 / std::sqrt(h), rng);
    params_[kB2] = Matrix::Zero(h, 1);
    params_[kWc] = uniform_matrix(c, 2 * h, 1.0 / std::sqrt(2.0 * h), rng);
    params_[kBc] = Matrix::Zero(c, 1);
    dropout_rng_.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
}

Matrix ToyEncoder::embed(const std::vector<int>& token_ids) const {
    Matrix x(static_cast<int>(token_ids.size()), cfg_.embedding_dim);
    const Matrix& table = params_[kEmbed];
    for (size_t i = 0; i < token_ids.size(); ++i) {
        const int id = token_ids[i];
        if (id < 0 || id >= table.rows()) {
            throw std::out_of_range("token id outside embedding table");
        }
        x.row(static_cast<int>(i)) = table.row(id);
    }
    return x;
}

namespace {

ForwardCache run_forward(const std::vector<Matrix>& params, const Matrix& x,
                         const MarkedExample& seq, double dropout,
                         std::mt19937_64* dropout_rng) {
    const int len = static_cast<int>(x.rows());
    if (seq.head_marker_pos < 0 || seq.head_marker_pos >= len ||
        seq.tail_marker_pos < 0 || seq.tail_marker_pos >= len) {
        throw std::invalid_argument("marker positions outside sequence");
    }
    ForwardCache cache;
    cache.pos[0] = seq.head_marker_pos;
    cache.pos[1] = seq.tail_marker_pos;
    cache.mean = x.colwise().mean().transpose();

    const Matrix& w1 = params[ToyEncoder::kW1];
    const Matrix& v1 = params[ToyEncoder::kV1];
    const Matrix& u1 = params[ToyEncoder::kU1];
    const Vector b1 = params[ToyEncoder::kB1].col(0);
    const Matrix& w2 = params[ToyEncoder::kW2];
    const Vector b2 = params[ToyEncoder::kB2].col(0);
    const Matrix& wc = params[ToyEncoder::kWc];
    const Vector bc = params[ToyEncoder::kBc].col(0);

    const int h = static_cast<int>(w1.rows());
    Vector z(2 * h);
    for (int k = 0; k < 2; ++k) {
        const int i = cache.pos[k];
        Vector a1 = w1 * x.row(i).transpose() + u1 * cache.mean + b1;
        if (i + 1 < len) a1 += v1 * x.row(i + 1).transpose();
        cache.h1[k] = a1.array().tanh();
        if (dropout > 0 && dropout_rng != nullptr) {
            std::bernoulli_distribution keep(1.0 - dropout);
            cache.mask[k].resize(h);
            for (int j = 0; j < h; ++j) {
                cache.mask[k](j) = keep(*dropout_rng) ? 1.0 / (1.0 - dropout) : 0.0;
            }
            cache.h1d[k] = cache.h1[k].cwiseProduct(cache.mask[k]);
        } else {
            cache.h1d[k] = cache.h1[k];
        }
        Vector a2 = w2 * cache.h1d[k] + b2;
        cache.h2[k] = a2.array().tanh();
        z.segment(k * h, h) = cache.h2[k];
    }
    cache.scores = wc * z + bc;
    return cache;
}

}  // namespace

Vector ToyEncoder::forward_from_embeddings(const Matrix& x,
                                           const MarkedExample& seq) const {
    // Evaluation path: stochastic layers disabled.
    return run_forward(params_, x, seq, 0.0, nullptr).scores;
}

Prediction ToyEncoder::predict(const MarkedExample& seq) const {
    Vector scores = forward_from_embeddings(embed(seq.token_ids), seq);
    return {argmax_score(scores), std::move(scores)};
}

LossGrads ToyEncoder::loss_and_grads(const Matrix& x_adv, const MarkedExample& seq,
                                     bool want_input, bool want_params) {
    const int len = static_cast<int>(x_adv.rows());
    const int d = cfg_.embedding_dim;
    const int h = cfg_.hidden_dim;
    if (x_adv.cols() != d) throw std::invalid_argument("embedding dim mismatch");

    const double dropout = train_mode_ ? cfg_.dropout : 0.0;
    ForwardCache cache = run_forward(params_, x_adv, seq, dropout,
                                     dropout > 0 ? &dropout_rng_ : nullptr);

    LossGrads out;
    auto [loss, d_scores] = cross_entropy(cache.scores, seq.label);
    out.loss = loss;
    out.scores = cache.scores;
    if (!std::isfinite(loss)) {
        throw std::runtime_error("non-finite loss (divergence)");
    }
    if (!want_input && !want_params) return out;

    const Matrix& w1 = params_[kW1];
    const Matrix& v1 = params_[kV1];
    const Matrix& u1 = params_[kU1];
    const Matrix& w2 = params_[kW2];
    const Matrix& wc = params_[kWc];

    Matrix d_x = Matrix::Zero(len, d);
    std::vector<Matrix> d_params;
    if (want_params) {
        d_params.resize(kNumParams);
        for (size_t p = 0; p < kNumParams; ++p) {
            d_params[p] = Matrix::Zero(params_[p].rows(), params_[p].cols());
        }
    }

    Vector dz = wc.transpose() * d_scores;
    if (want_params) {
        Vector z(2 * h);
        z.segment(0, h) = cache.h2[0];
        z.segment(h, h) = cache.h2[1];
        d_params[kWc] += d_scores * z.transpose();
        d_params[kBc].col(0) += d_scores;
    }

    Vector d_mean = Vector::Zero(d);
    for (int k = 0; k < 2; ++k) {
        const int i = cache.pos[k];
        Vector dh2 = dz.segment(k * h, h);
        Vector da2 =
            dh2.cwiseProduct(Vector::Ones(h) - cache.h2[k].cwiseProduct(cache.h2[k]));
        if (want_params) {
            d_params[kW2] += da2 * cache.h1d[k].transpose();
            d_params[kB2].col(0) += da2;
        }
        Vector dh1d = w2.transpose() * da2;
        Vector dh1 = cache.mask[k].size() > 0 ? dh1d.cwiseProduct(cache.mask[k])
                                              : dh1d;
        Vector da1 =
            dh1.cwiseProduct(Vector::Ones(h) - cache.h1[k].cwiseProduct(cache.h1[k]));
        if (want_params) {
            d_params[kW1] += da1 * x_adv.row(i);
            if (i + 1 < len) d_params[kV1] += da1 * x_adv.row(i + 1);
            d_params[kU1] += da1 * cache.mean.transpose();
            d_params[kB1].col(0) += da1;
        }
        d_x.row(i) += (w1.transpose() * da1).transpose();
        if (i + 1 < len) d_x.row(i + 1) += (v1.transpose() * da1).transpose();
        d_mean += u1.transpose() * da1;
    }
    d_x.rowwise() += (d_mean / len).transpose();

    if (want_params) {
        for (int j = 0; j < len; ++j) {
            d_params[kEmbed].row(seq.token_ids[static_cast<size_t>(j)]) += d_x.row(j);
        }
        out.d_params = std::move(d_params);
    }
    if (want_input) out.d_input = std::move(d_x);
    return out;
}

std::unique_ptr<ToyEncoder> ToyEncoder::clone() const {
    auto copy = std::make_unique<ToyEncoder>(cfg_);
    copy->params_ = params_;
    copy->train_mode_ = train_mode_;
    copy->dropout_rng_ = dropout_rng_;
    return copy;
}

}  // namespace revat
