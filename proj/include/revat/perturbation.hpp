#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "revat/core.hpp"

namespace revat::perturb {

using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

// Accumulated per-token perturbation table, one per role. Rows are token
// ids, columns the embedding dimension.
struct PerturbationVocabulary {
    Matrix table;  // N x D
    Role role = Role::Context;  // Entity or Context

    int size() const { return static_cast<int>(table.rows()); }
    int dim() const { return static_cast<int>(table.cols()); }
};

// Per-instance perturbation state during the inner ascent loop.
struct PerturbationState {
    Matrix delta;             // L x D sequence-level perturbation
    Matrix eta;               // L x D token-level perturbations
    std::set<int> clean_set;  // token indices left clean this batch
    int step = 0;
};

// Each entry drawn as (1/sqrt(D)) * Uniform(-sigma, sigma).
PerturbationVocabulary init_vocabulary(int n, int d, double sigma, Rng& rng,
                                       Role role);

// Row i reads V_e[w_i] for entity/marker roles, V_c[w_i] otherwise.
Matrix lookup_initial_eta(const PerturbationVocabulary& vocab_e,
                          const PerturbationVocabulary& vocab_c,
                          const std::vector<int>& token_ids,
                          const RoleMask& roles);

// Scales m back onto the Frobenius ball of radius epsilon if needed.
Matrix project_frobenius(const Matrix& m, double epsilon);

// pert + alpha * grad / ||grad||_F, skipping degenerate gradients
// (||grad||_F < 1e-12).
Matrix normalized_ascent_step(const Matrix& pert, const Matrix& grad,
                              double alpha);

// Uniformly random subset of context_indices of size
// round-half-up(n_percent/100 * |context_indices|).
std::set<int> select_clean_tokens(const std::vector<int>& context_indices,
                                  double n_percent, Rng& rng);

// Row i = X_i for clean rows, X_i + delta_i + eta_i otherwise.
Matrix compose_adversarial_embeddings(const Matrix& x,
                                      const PerturbationState& state);

// Zeroes the rows indexed by clean_set.
Matrix mask_clean_eta(const Matrix& eta, const std::set<int>& clean_set);

// Batches vocabulary writes so that duplicate (vocabulary, token id)
// pairs within one mini-batch store the arithmetic mean of their
// contributions. Clean rows contribute their (zeroed) eta rows.
class VocabularyUpdater {
public:
    struct Contribution {
        Role vocab_role;  // Entity or Context vocabulary
        int token_id;
        Eigen::RowVectorXd value;
    };

    void add(const std::vector<int>& token_ids, const RoleMask& roles,
             const Matrix& eta_final);
    void commit(PerturbationVocabulary& vocab_e, PerturbationVocabulary& vocab_c);

    // Commit into a single shared table (no separate vocabularies): every
    // contribution lands in `shared` regardless of role.
    void commit_shared(PerturbationVocabulary& shared);

    const std::vector<Contribution>& contributions() const { return pending_; }

private:
    std::vector<Contribution> pending_;
};

// Single-call convenience covering one sequence.
void update_vocabularies(PerturbationVocabulary& vocab_e,
                         PerturbationVocabulary& vocab_c,
                         const std::vector<int>& token_ids,
                         const RoleMask& roles, const Matrix& eta_final);

// Versioned binary checkpoint section: header (magic, version, role,
// N, D) followed by row-major values.
void save_vocabulary(std::ostream& out, const PerturbationVocabulary& vocab);
PerturbationVocabulary load_vocabulary(std::istream& in);

}  // namespace revat::perturb
