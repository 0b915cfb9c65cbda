#include <doctest.h>

#include <cmath>
#include <sstream>

#include "revat/perturbation.hpp"

using namespace revat;
using namespace revat::perturb;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    }
    return m;
}

}  // namespace

TEST_CASE("init_vocabulary entries stay within sigma/sqrt(D)") {
    Rng rng(5);
    auto vocab = init_vocabulary(4, 2, 0.6, rng, Role::Entity);
    const double bound = 0.6 / std::sqrt(2.0);  // ~0.4243
    CHECK(vocab.table.rows() == 4);
    CHECK(vocab.table.cols() == 2);
    CHECK(vocab.table.maxCoeff() <= bound);
    CHECK(vocab.table.minCoeff() >= -bound);
}

TEST_CASE("init_vocabulary with sigma 0 is all zeros") {
    Rng rng(5);
    auto vocab = init_vocabulary(3, 4, 0.0, rng, Role::Context);
    CHECK(vocab.table.isZero(0.0));
}

TEST_CASE("init_vocabulary is deterministic under seed") {
    Rng rng_a(99), rng_b(99);
    auto a = init_vocabulary(8, 3, 0.5, rng_a, Role::Entity);
    auto b = init_vocabulary(8, 3, 0.5, rng_b, Role::Entity);
    CHECK(a.table == b.table);
}

TEST_CASE("init_vocabulary rejects bad dimensions") {
    Rng rng(1);
    CHECK_THROWS_AS(init_vocabulary(0, 2, 0.5, rng, Role::Entity),
                    std::invalid_argument);
    CHECK_THROWS_AS(init_vocabulary(2, 2, -0.5, rng, Role::Entity),
                    std::invalid_argument);
}

TEST_CASE("lookup_initial_eta reads by role") {
    Rng rng(7);
    auto ve = init_vocabulary(10, 3, 0.5, rng, Role::Entity);
    auto vc = init_vocabulary(10, 3, 0.5, rng, Role::Context);

    SUBCASE("all-context sequence reads the context table") {
        std::vector<int> ids{1, 2, 3};
        RoleMask roles(3, Role::Context);
        Matrix eta = lookup_initial_eta(ve, vc, ids, roles);
        for (int i = 0; i < 3; ++i) {
            CHECK(eta.row(i) == vc.table.row(ids[static_cast<size_t>(i)]));
        }
    }

    SUBCASE("same id as entity and context reads different tables") {
        std::vector<int> ids{0, 0, 7, 0, 0, 7};
        RoleMask roles{Role::Context, Role::Context, Role::Entity,
                       Role::Context, Role::Context, Role::Context};
        Matrix eta = lookup_initial_eta(ve, vc, ids, roles);
        CHECK(eta.row(2) == ve.table.row(7));
        CHECK(eta.row(5) == vc.table.row(7));
        CHECK(eta.row(2) != eta.row(5));
    }

    SUBCASE("marker role reads the entity table") {
        std::vector<int> ids{4};
        RoleMask roles{Role::Marker};
        Matrix eta = lookup_initial_eta(ve, vc, ids, roles);
        CHECK(eta.row(0) == ve.table.row(4));
    }

    SUBCASE("zero tables give a zero matrix") {
        Rng z(1);
        auto ze = init_vocabulary(10, 3, 0.0, z, Role::Entity);
        auto zc = init_vocabulary(10, 3, 0.0, z, Role::Context);
        std::vector<int> ids{1, 2};
        RoleMask roles{Role::Entity, Role::Context};
        CHECK(lookup_initial_eta(ze, zc, ids, roles).isZero(0.0));
    }

    SUBCASE("out-of-range id throws") {
        std::vector<int> ids{10};
        RoleMask roles{Role::Context};
        CHECK_THROWS_AS(lookup_initial_eta(ve, vc, ids, roles), std::out_of_range);
    }
}

TEST_CASE("project_frobenius scales onto the ball") {
    Matrix m(2, 2);
    m << 3, 0, 0, 4;  // norm 5
    Matrix p = project_frobenius(m, 1.0);
    CHECK(p(0, 0) == doctest::Approx(0.6));
    CHECK(p(1, 1) == doctest::Approx(0.8));
    CHECK(p.norm() == doctest::Approx(1.0));
}

TEST_CASE("project_frobenius leaves interior points unchanged") {
    Matrix m = Matrix::Constant(2, 2, 0.15);  // norm 0.3
    CHECK(project_frobenius(m, 0.4) == m);
    CHECK(project_frobenius(Matrix::Zero(3, 3), 0.1).isZero(0.0));
}

TEST_CASE("projection is idempotent and norm-bounding") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        Matrix m = random_matrix(4, 6, rng) * 3.0;
        for (double eps : {0.2, 0.4, 0.6}) {
            Matrix once = project_frobenius(m, eps);
            CHECK(once.norm() <= eps * (1 + 1e-9));
            CHECK((project_frobenius(once, eps) - once).norm() <= 1e-9);
        }
    }
}

TEST_CASE("normalized_ascent_step") {
    Matrix grad(2, 2);
    grad << 1, 1, 1, 1;  // norm 2
    Matrix pert = Matrix::Zero(2, 2);

    SUBCASE("moves alpha along the normalized gradient") {
        Matrix out = normalized_ascent_step(pert, grad, 0.1);
        CHECK((out - 0.05 * grad).norm() == doctest::Approx(0.0));
    }
    SUBCASE("degenerate gradient leaves perturbation unchanged") {
        Matrix p = Matrix::Constant(2, 2, 0.3);
        CHECK(normalized_ascent_step(p, Matrix::Zero(2, 2), 0.1) == p);
    }
    SUBCASE("alpha 0 leaves perturbation unchanged") {
        Matrix p = Matrix::Constant(2, 2, 0.3);
        CHECK(normalized_ascent_step(p, grad, 0.0) == p);
    }
    SUBCASE("shape mismatch throws") {
        CHECK_THROWS_AS(normalized_ascent_step(pert, Matrix::Zero(3, 2), 0.1),
                        std::invalid_argument);
    }
}

TEST_CASE("select_clean_tokens sizing") {
    std::vector<int> ctx{2, 3, 5, 6, 8, 9, 10, 12, 13, 14};
    Rng rng(3);
    CHECK(select_clean_tokens(ctx, 0, rng).empty());
    CHECK(select_clean_tokens(ctx, 100, rng).size() == 10);
    // round-half-up: 15% of 10 -> round(1.5) = 2
    CHECK(select_clean_tokens(ctx, 15, rng).size() == 2);
}

TEST_CASE("select_clean_tokens is a deterministic subset of context") {
    std::vector<int> ctx{1, 4, 5, 9, 11, 17, 20};
    Rng a(42), b(42);
    auto sa = select_clean_tokens(ctx, 40, a);
    auto sb = select_clean_tokens(ctx, 40, b);
    CHECK(sa == sb);
    for (int i : sa) {
        CHECK(std::find(ctx.begin(), ctx.end(), i) != ctx.end());
    }
}

TEST_CASE("select_clean_tokens size property") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> len_dist(0, 30);
        std::uniform_real_distribution<double> pct(0, 100);
        const int n = len_dist(rng);
        std::vector<int> ctx(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) ctx[static_cast<size_t>(i)] = i * 2;
        const double p = pct(rng);
        auto s = select_clean_tokens(ctx, p, rng);
        CHECK(s.size() == static_cast<size_t>(std::floor(p / 100.0 * n + 0.5)));
    }
}

TEST_CASE("compose_adversarial_embeddings") {
    Rng rng(23);
    Matrix x = random_matrix(5, 3, rng);
    PerturbationState state;
    state.delta = random_matrix(5, 3, rng);
    state.eta = random_matrix(5, 3, rng);

    SUBCASE("all indices clean returns X exactly") {
        state.clean_set = {0, 1, 2, 3, 4};
        CHECK(compose_adversarial_embeddings(x, state) == x);
    }
    SUBCASE("no clean indices adds both perturbations") {
        Matrix out = compose_adversarial_embeddings(x, state);
        CHECK((out - (x + state.delta + state.eta)).norm() == 0.0);
    }
    SUBCASE("clean row stays bit-identical, others shift") {
        state.clean_set = {3};
        Matrix out = compose_adversarial_embeddings(x, state);
        CHECK(out.row(3) == x.row(3));
        for (int i : {0, 1, 2, 4}) {
            CHECK(out.row(i) != x.row(i));
        }
    }
    SUBCASE("shape mismatch throws") {
        state.eta = Matrix::Zero(4, 3);
        CHECK_THROWS_AS(compose_adversarial_embeddings(x, state),
                        std::invalid_argument);
    }
}

TEST_CASE("mask_clean_eta") {
    Rng rng(29);
    Matrix eta = random_matrix(4, 2, rng);
    CHECK(mask_clean_eta(eta, {}) == eta);

    Matrix masked = mask_clean_eta(eta, {0});
    CHECK(masked.row(0).isZero(0.0));
    CHECK(masked.row(1) == eta.row(1));

    CHECK(mask_clean_eta(eta, {0, 1, 2, 3}).isZero(0.0));
}

TEST_CASE("update_vocabularies") {
    Rng rng(31);
    auto ve = init_vocabulary(8, 2, 0.5, rng, Role::Entity);
    auto vc = init_vocabulary(8, 2, 0.5, rng, Role::Context);
    const Matrix ve_before = ve.table;
    const Matrix vc_before = vc.table;

    SUBCASE("single context occurrence writes the context row only") {
        std::vector<int> ids{5};
        RoleMask roles{Role::Context};
        Matrix eta(1, 2);
        eta << 0.1, -0.2;
        update_vocabularies(ve, vc, ids, roles, eta);
        CHECK(vc.table.row(5) == eta.row(0));
        CHECK(ve.table == ve_before);
    }

    SUBCASE("duplicate context id stores the mean of contributions") {
        std::vector<int> ids{5, 5};
        RoleMask roles{Role::Context, Role::Context};
        Matrix eta(2, 2);
        eta << 0.2, 0.4, -0.1, 0.0;
        update_vocabularies(ve, vc, ids, roles, eta);
        Eigen::RowVector2d mean(0.05, 0.2);
        CHECK((vc.table.row(5) - mean).norm() == doctest::Approx(0.0));
    }

    SUBCASE("same id as entity and context updates both tables independently") {
        std::vector<int> ids{5, 5};
        RoleMask roles{Role::Entity, Role::Context};
        Matrix eta(2, 2);
        eta << 1.0, 2.0, 3.0, 4.0;
        update_vocabularies(ve, vc, ids, roles, eta);
        CHECK(ve.table.row(5) == eta.row(0));
        CHECK(vc.table.row(5) == eta.row(1));
    }

    SUBCASE("entity positions never touch the context table") {
        std::vector<int> ids{1, 2, 3};
        RoleMask roles{Role::Entity, Role::Marker, Role::Entity};
        Matrix eta = random_matrix(3, 2, rng);
        update_vocabularies(ve, vc, ids, roles, eta);
        CHECK(vc.table == vc_before);
    }
}

TEST_CASE("VocabularyUpdater commit_shared routes every role to one table") {
    Rng rng(37);
    auto shared = init_vocabulary(6, 2, 0.5, rng, Role::Context);
    VocabularyUpdater updater;
    std::vector<int> ids{2, 2};
    RoleMask roles{Role::Entity, Role::Context};
    Matrix eta(2, 2);
    eta << 1.0, 1.0, 3.0, 3.0;
    updater.add(ids, roles, eta);
    updater.commit_shared(shared);
    Eigen::RowVector2d mean(2.0, 2.0);
    CHECK((shared.table.row(2) - mean).norm() == doctest::Approx(0.0));
}

TEST_CASE("vocabulary serialization round-trips") {
    Rng rng(41);
    auto vocab = init_vocabulary(12, 5, 0.3, rng, Role::Entity);
    std::stringstream buf;
    save_vocabulary(buf, vocab);
    auto loaded = load_vocabulary(buf);
    CHECK(loaded.role == Role::Entity);
    CHECK(loaded.table == vocab.table);
}
