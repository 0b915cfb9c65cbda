#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "revat/core.hpp"
#include "revat/model.hpp"

namespace revat::attack {

// Per-sample attack trace. `skipped` marks examples the clean model
// already misclassified; attackers do not attempt those and they count
// as incorrect under attack.
struct AttackResult {
    std::string example_id;
    bool skipped = false;
    bool success = false;
    long queries = 0;
    std::vector<int> perturbed_indices;
    int original_pred = -1;
    int adversarial_pred = -1;
    int gold = -1;
    std::vector<std::string> adversarial_tokens;  // black-box only

    bool operator==(const AttackResult&) const = default;
};

// White-box embedding-space attack: normalized gradient ascent with
// Frobenius-ball projection to radius epsilon. queries = steps + 1.
AttackResult pgd_attack(ModelAdapter& model, const MarkedExample& seq,
                        double epsilon, int steps, double alpha);

using Lexicon = std::unordered_map<std::string, std::vector<std::string>>;
using TokenPredictor =
    std::function<Prediction(const std::vector<std::string>& tokens)>;

struct GreedyOptions {
    int max_candidates = 8;
    long query_budget = 500;
};

// Black-box greedy lexicon substitution: ranks positions by the
// gold-score drop under [UNK] replacement, then tries substitutes in
// rank order, keeping the flip or the largest score reduction. Entity
// markers are never substituted.
AttackResult greedy_substitution_attack(const TokenPredictor& predict,
                                        const MarkedExample& seq,
                                        const Lexicon& lexicon,
                                        const GreedyOptions& opts);

// Wraps a model as a token-string predictor (OOV -> [UNK]) with an
// external query counter; reported queries must match it exactly.
TokenPredictor make_token_predictor(
    const ModelAdapter& model,
    const std::unordered_map<std::string, int>& token_ids, long* query_counter);

double evaluate_clean(const ModelAdapter& model,
                      const std::vector<MarkedExample>& examples);

using Attacker = std::function<AttackResult(const MarkedExample&)>;

struct UnderAttack {
    double aua = 0;                     // percent
    std::optional<double> avg_queries;  // over successful attacks only
    std::vector<AttackResult> results;
};

UnderAttack evaluate_under_attack(const std::vector<MarkedExample>& examples,
                                  const Attacker& attacker);

struct EntityDependency {
    std::optional<double> entity_freq;   // successful attacks touching entities
    std::optional<double> entity_ratio;  // perturbed entity tokens / all perturbed
    double entity_pct = 0;               // entity share of length, markers excluded
};

EntityDependency entity_dependency_metrics(
    const std::vector<AttackResult>& results,
    const std::vector<MarkedExample>& examples);

struct RegionAttackSuccess {
    std::optional<double> entity_as;
    std::optional<double> context_as;
};

RegionAttackSuccess region_attack_success(
    const std::vector<AttackResult>& results,
    const std::vector<MarkedExample>& examples);

// Aggregated robustness report; every field is recomputable from the
// persisted attack log alone.
struct RobustnessReport {
    double clean_accuracy = 0;
    double aua = 0;
    std::optional<double> avg_queries;
    std::optional<double> entity_freq;
    std::optional<double> entity_ratio;
    double entity_pct = 0;
    std::optional<double> entity_as;
    std::optional<double> context_as;
};

RobustnessReport build_report(const std::vector<AttackResult>& results,
                              const std::vector<MarkedExample>& examples);

// Line-delimited structured attack log.
void save_attack_log(const std::string& path,
                     const std::vector<AttackResult>& results);
std::vector<AttackResult> load_attack_log(const std::string& path);

// Plain-text table (Clean / AUA / Query, then the entity metrics).
std::string render_report_text(const RobustnessReport& report);
std::string report_to_json(const RobustnessReport& report);

}  // namespace revat::attack
