#include "revat/perturbation.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

namespace revat::perturb {

namespace {
constexpr double kGradFloor = 1e-12;
constexpr char kVocabMagic[4] = {'P', 'V', 'O', 'C'};
constexpr uint32_t kVocabVersion = 1;

void write_raw(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("truncated vocabulary section");
}
}  // namespace

PerturbationVocabulary init_vocabulary(int n, int d, double sigma, Rng& rng,
                                       Role role) {
    if (n < 1 || d < 1) throw std::invalid_argument("vocabulary dims must be >= 1");
    if (sigma < 0) throw std::invalid_argument("sigma must be >= 0");
    PerturbationVocabulary vocab;
    vocab.role = role;
    vocab.table.resize(n, d);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::uniform_real_distribution<double> uniform(-sigma, sigma);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            vocab.table(i, j) = scale * uniform(rng);
        }
    }
    return vocab;
}

Matrix lookup_initial_eta(const PerturbationVocabulary& vocab_e,
                          const PerturbationVocabulary& vocab_c,
                          const std::vector<int>& token_ids,
                          const RoleMask& roles) {
    if (token_ids.size() != roles.size()) {
        throw std::invalid_argument("token_ids and roles length mismatch");
    }
    const int len = static_cast<int>(token_ids.size());
    const int dim = vocab_e.dim();
    Matrix eta(len, dim);
    for (int i = 0; i < len; ++i) {
        const auto& vocab = is_entity_role(roles[i]) ? vocab_e : vocab_c;
        const int id = token_ids[i];
        if (id < 0 || id >= vocab.size()) {
            throw std::out_of_range("token id " + std::to_string(id) +
                                    " outside vocabulary");
        }
        eta.row(i) = vocab.table.row(id);
    }
    return eta;
}

Matrix project_frobenius(const Matrix& m, double epsilon) {
    const double norm = m.norm();
    if (norm <= epsilon) return m;
    return m * (epsilon / norm);
}

Matrix normalized_ascent_step(const Matrix& pert, const Matrix& grad,
                              double alpha) {
    if (pert.rows() != grad.rows() || pert.cols() != grad.cols()) {
        throw std::invalid_argument("perturbation/gradient shape mismatch");
    }
    const double norm = grad.norm();
    if (norm < kGradFloor) return pert;
    return pert + (alpha / norm) * grad;
}

std::set<int> select_clean_tokens(const std::vector<int>& context_indices,
                                  double n_percent, Rng& rng) {
    if (n_percent < 0 || n_percent > 100) {
        throw std::invalid_argument("n_percent out of range");
    }
    const int total = static_cast<int>(context_indices.size());
    const int k = static_cast<int>(
        std::floor(n_percent / 100.0 * total + 0.5));  // round-half-up
    std::vector<int> pool = context_indices;
    std::set<int> chosen;
    // Partial Fisher-Yates, stdlib-independent for reproducibility.
    for (int i = 0; i < k; ++i) {
        std::uniform_int_distribution<int> pick(i, total - 1);
        const int j = pick(rng);
        std::swap(pool[i], pool[j]);
        chosen.insert(pool[i]);
    }
    return chosen;
}

Matrix compose_adversarial_embeddings(const Matrix& x,
                                      const PerturbationState& state) {
    if (x.rows() != state.delta.rows() || x.cols() != state.delta.cols() ||
        x.rows() != state.eta.rows() || x.cols() != state.eta.cols()) {
        throw std::invalid_argument("embedding/perturbation shape mismatch");
    }
    Matrix out = x + state.delta + state.eta;
    for (int i : state.clean_set) {
        out.row(i) = x.row(i);
    }
    return out;
}

Matrix mask_clean_eta(const Matrix& eta, const std::set<int>& clean_set) {
    Matrix out = eta;
    for (int i : clean_set) {
        out.row(i).setZero();
    }
    return out;
}

void VocabularyUpdater::add(const std::vector<int>& token_ids,
                            const RoleMask& roles, const Matrix& eta_final) {
    if (token_ids.size() != roles.size() ||
        eta_final.rows() != static_cast<Eigen::Index>(token_ids.size())) {
        throw std::invalid_argument("eta_final row count mismatch");
    }
    for (size_t i = 0; i < token_ids.size(); ++i) {
        pending_.push_back({is_entity_role(roles[i]) ? Role::Entity : Role::Context,
                            token_ids[i], eta_final.row(static_cast<int>(i))});
    }
}

namespace {
void commit_means(const std::vector<VocabularyUpdater::Contribution>& pending,
                  PerturbationVocabulary* vocab_e,
                  PerturbationVocabulary* vocab_c) {
    // key: (entity?, token id) -> (sum, count)
    std::map<std::pair<bool, int>, std::pair<Eigen::RowVectorXd, int>> acc;
    for (const auto& c : pending) {
        const bool to_entity = vocab_e != nullptr && c.vocab_role == Role::Entity;
        auto key = std::make_pair(to_entity, c.token_id);
        auto it = acc.find(key);
        if (it == acc.end()) {
            acc.emplace(key, std::make_pair(c.value, 1));
        } else {
            it->second.first += c.value;
            ++it->second.second;
        }
    }
    for (const auto& [key, sum_count] : acc) {
        auto& vocab = key.first ? *vocab_e : *vocab_c;
        vocab.table.row(key.second) = sum_count.first / sum_count.second;
    }
}
}  // namespace

void VocabularyUpdater::commit(PerturbationVocabulary& vocab_e,
                               PerturbationVocabulary& vocab_c) {
    commit_means(pending_, &vocab_e, &vocab_c);
    pending_.clear();
}

void VocabularyUpdater::commit_shared(PerturbationVocabulary& shared) {
    commit_means(pending_, nullptr, &shared);
    pending_.clear();
}

void update_vocabularies(PerturbationVocabulary& vocab_e,
                         PerturbationVocabulary& vocab_c,
                         const std::vector<int>& token_ids,
                         const RoleMask& roles, const Matrix& eta_final) {
    VocabularyUpdater updater;
    updater.add(token_ids, roles, eta_final);
    updater.commit(vocab_e, vocab_c);
}

void save_vocabulary(std::ostream& out, const PerturbationVocabulary& vocab) {
    write_raw(out, kVocabMagic, sizeof(kVocabMagic));
    write_raw(out, &kVocabVersion, sizeof(kVocabVersion));
    const uint8_t role = static_cast<uint8_t>(vocab.role);
    write_raw(out, &role, sizeof(role));
    const uint64_t n = static_cast<uint64_t>(vocab.table.rows());
    const uint64_t d = static_cast<uint64_t>(vocab.table.cols());
    write_raw(out, &n, sizeof(n));
    write_raw(out, &d, sizeof(d));
    for (uint64_t i = 0; i < n; ++i) {
        for (uint64_t j = 0; j < d; ++j) {
            const double v = vocab.table(static_cast<int>(i), static_cast<int>(j));
            write_raw(out, &v, sizeof(v));
        }
    }
}

PerturbationVocabulary load_vocabulary(std::istream& in) {
    char magic[4];
    read_raw(in, magic, sizeof(magic));
    if (std::memcmp(magic, kVocabMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("bad vocabulary section magic");
    }
    uint32_t version = 0;
    read_raw(in, &version, sizeof(version));
    if (version != kVocabVersion) {
        throw std::runtime_error("unsupported vocabulary version " +
                                 std::to_string(version));
    }
    uint8_t role = 0;
    read_raw(in, &role, sizeof(role));
    uint64_t n = 0, d = 0;
    read_raw(in, &n, sizeof(n));
    read_raw(in, &d, sizeof(d));
    PerturbationVocabulary vocab;
    vocab.role = static_cast<Role>(role);
    vocab.table.resize(static_cast<int>(n), static_cast<int>(d));
    for (uint64_t i = 0; i < n; ++i) {
        for (uint64_t j = 0; j < d; ++j) {
            double v = 0;
            read_raw(in, &v, sizeof(v));
            vocab.table(static_cast<int>(i), static_cast<int>(j)) = v;
        }
    }
    return vocab;
}

}  // namespace revat::perturb
