#include "revat/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "revat/data.hpp"
#include "revat/perturbation.hpp"

namespace revat::attack {

using nlohmann::json;

AttackResult pgd_attack(ModelAdapter& model, const MarkedExample& seq,
                        double epsilon, int steps, double alpha) {
    AttackResult result;
    result.example_id = seq.id;
    result.gold = seq.label;

    Matrix x = model.embed(seq.token_ids);
    LossGrads lg = model.loss_and_grads(x, seq, true, false);
    result.queries = 1;
    result.original_pred = argmax_score(lg.scores);
    result.adversarial_pred = result.original_pred;
    if (result.original_pred != seq.label) {
        result.skipped = true;  // attack not needed
        return result;
    }

    Matrix delta = Matrix::Zero(x.rows(), x.cols());
    for (int t = 0; t < steps; ++t) {
        delta = perturb::project_frobenius(
            perturb::normalized_ascent_step(delta, lg.d_input, alpha), epsilon);
        lg = model.loss_and_grads(x + delta, seq, true, false);
        ++result.queries;
        result.adversarial_pred = argmax_score(lg.scores);
    }
    result.success = result.adversarial_pred != seq.label;
    for (int i = 0; i < delta.rows(); ++i) {
        if (delta.row(i).norm() > 1e-12) result.perturbed_indices.push_back(i);
    }
    return result;
}

TokenPredictor make_token_predictor(
    const ModelAdapter& model,
    const std::unordered_map<std::string, int>& token_ids, long* query_counter) {
    return [&model, &token_ids, query_counter](const std::vector<std::string>& tokens) {
        MarkedExample seq;
        seq.tokens = tokens;
        seq.token_ids.reserve(tokens.size());
        for (const auto& t : tokens) {
            auto it = token_ids.find(t);
            seq.token_ids.push_back(it == token_ids.end() ? 0 : it->second);
        }
        // Marker positions from the token strings themselves.
        for (size_t i = 0; i < tokens.size(); ++i) {
            if (tokens[i] == data::kHeadOpen) seq.head_marker_pos = static_cast<int>(i);
            if (tokens[i] == data::kTailOpen) seq.tail_marker_pos = static_cast<int>(i);
        }
        if (query_counter) ++*query_counter;
        Vector scores =
            model.forward_from_embeddings(model.embed(seq.token_ids), seq);
        return Prediction{argmax_score(scores), std::move(scores)};
    };
}

AttackResult greedy_substitution_attack(const TokenPredictor& predict,
                                        const MarkedExample& seq,
                                        const Lexicon& lexicon,
                                        const GreedyOptions& opts) {
    AttackResult result;
    result.example_id = seq.id;
    result.gold = seq.label;

    Prediction clean = predict(seq.tokens);
    result.queries = 1;
    result.original_pred = clean.label;
    result.adversarial_pred = clean.label;
    if (clean.label != seq.label) {
        result.skipped = true;
        return result;
    }

    const double clean_gold = clean.scores(seq.label);
    std::vector<int> positions;
    for (size_t i = 0; i < seq.roles.size(); ++i) {
        if (seq.roles[i] == Role::Entity || seq.roles[i] == Role::Context) {
            positions.push_back(static_cast<int>(i));
        }
    }

    // Word importance: gold-score drop when the token is replaced by
    // [UNK] (deletion-free so role masks stay aligned).
    std::vector<double> importance(positions.size(),
                                   -std::numeric_limits<double>::infinity());
    for (size_t k = 0; k < positions.size(); ++k) {
        if (result.queries >= opts.query_budget) break;
        std::vector<std::string> probe = seq.tokens;
        probe[static_cast<size_t>(positions[k])] = data::kUnkToken;
        Prediction p = predict(probe);
        ++result.queries;
        importance[k] = clean_gold - p.scores(seq.label);
    }
    std::vector<size_t> order(positions.size());
    for (size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return importance[a] > importance[b]; });

    std::vector<std::string> current = seq.tokens;
    double current_gold = clean_gold;
    for (size_t k : order) {
        if (result.queries >= opts.query_budget) break;
        const int pos = positions[k];
        auto it = lexicon.find(seq.tokens[static_cast<size_t>(pos)]);
        if (it == lexicon.end()) continue;

        std::optional<std::string> best_sub;
        double best_gold = current_gold;
        int tried = 0;
        for (const auto& candidate : it->second) {
            if (tried >= opts.max_candidates || result.queries >= opts.query_budget) break;
            std::vector<std::string> probe = current;
            probe[static_cast<size_t>(pos)] = candidate;
            Prediction p = predict(probe);
            ++result.queries;
            ++tried;
            if (p.label != seq.label) {
                result.success = true;
                result.adversarial_pred = p.label;
                result.perturbed_indices.push_back(pos);
                result.adversarial_tokens = std::move(probe);
                std::sort(result.perturbed_indices.begin(),
                          result.perturbed_indices.end());
                return result;
            }
            if (p.scores(seq.label) < best_gold) {
                best_gold = p.scores(seq.label);
                best_sub = candidate;
            }
        }
        if (best_sub) {
            current[static_cast<size_t>(pos)] = *best_sub;
            current_gold = best_gold;
            result.perturbed_indices.push_back(pos);
        }
    }
    result.adversarial_tokens = std::move(current);
    std::sort(result.perturbed_indices.begin(), result.perturbed_indices.end());
    return result;
}

double evaluate_clean(const ModelAdapter& model,
                      const std::vector<MarkedExample>& examples) {
    if (examples.empty()) throw std::invalid_argument("empty evaluation set");
    int correct = 0;
    for (const auto& ex : examples) {
        if (model.predict(ex).label == ex.label) ++correct;
    }
    return 100.0 * correct / static_cast<double>(examples.size());
}

UnderAttack evaluate_under_attack(const std::vector<MarkedExample>& examples,
                                  const Attacker& attacker) {
    UnderAttack out;
    long success_queries = 0;
    int successes = 0;
    int still_correct = 0;
    for (const auto& ex : examples) {
        AttackResult r = attacker(ex);
        if (!r.skipped && !r.success) ++still_correct;
        if (r.success) {
            ++successes;
            success_queries += r.queries;
        }
        out.results.push_back(std::move(r));
    }
    out.aua = 100.0 * still_correct / static_cast<double>(examples.size());
    if (successes > 0) {
        out.avg_queries = static_cast<double>(success_queries) / successes;
    }
    return out;
}

namespace {

struct RoleIndex {
    std::unordered_map<std::string, const MarkedExample*> by_id;

    explicit RoleIndex(const std::vector<MarkedExample>& examples) {
        for (const auto& ex : examples) by_id[ex.id] = &ex;
    }
    const MarkedExample& get(const std::string& id) const {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw std::runtime_error("attack log references unknown example: " + id);
        }
        return *it->second;
    }
};

bool touches(const AttackResult& r, const MarkedExample& ex, bool entity) {
    for (int i : r.perturbed_indices) {
        const Role role = ex.roles[static_cast<size_t>(i)];
        if (entity ? is_entity_role(role) : role == Role::Context) return true;
    }
    return false;
}

}  // namespace

EntityDependency entity_dependency_metrics(
    const std::vector<AttackResult>& results,
    const std::vector<MarkedExample>& examples) {
    RoleIndex index(examples);
    EntityDependency out;

    int successes = 0, touching = 0;
    long perturbed_total = 0, perturbed_entity = 0;
    for (const auto& r : results) {
        if (!r.success) continue;
        ++successes;
        const auto& ex = index.get(r.example_id);
        if (touches(r, ex, true)) ++touching;
        for (int i : r.perturbed_indices) {
            ++perturbed_total;
            if (is_entity_role(ex.roles[static_cast<size_t>(i)])) ++perturbed_entity;
        }
    }
    if (successes > 0) {
        out.entity_freq = 100.0 * touching / successes;
    }
    if (perturbed_total > 0) {
        out.entity_ratio = 100.0 * static_cast<double>(perturbed_entity) /
                           static_cast<double>(perturbed_total);
    }

    double pct_sum = 0;
    for (const auto& ex : examples) {
        int entity = 0, total = 0;
        for (Role role : ex.roles) {
            if (role == Role::Marker) continue;  // markers excluded from both
            ++total;
            if (role == Role::Entity) ++entity;
        }
        if (total > 0) pct_sum += static_cast<double>(entity) / total;
    }
    out.entity_pct = 100.0 * pct_sum / static_cast<double>(examples.size());
    return out;
}

RegionAttackSuccess region_attack_success(
    const std::vector<AttackResult>& results,
    const std::vector<MarkedExample>& examples) {
    RoleIndex index(examples);
    int entity_attempted = 0, entity_success = 0;
    int context_attempted = 0, context_success = 0;
    for (const auto& r : results) {
        if (r.skipped) continue;
        const auto& ex = index.get(r.example_id);
        // An attack touching both regions counts in both denominators.
        if (touches(r, ex, true)) {
            ++entity_attempted;
            if (r.success) ++entity_success;
        }
        if (touches(r, ex, false)) {
            ++context_attempted;
            if (r.success) ++context_success;
        }
    }
    RegionAttackSuccess out;
    if (entity_attempted > 0) {
        out.entity_as = 100.0 * entity_success / entity_attempted;
    }
    if (context_attempted > 0) {
        out.context_as = 100.0 * context_success / context_attempted;
    }
    return out;
}

RobustnessReport build_report(const std::vector<AttackResult>& results,
                              const std::vector<MarkedExample>& examples) {
    if (results.empty()) throw std::invalid_argument("empty attack log");
    RobustnessReport report;
    int attempted = 0, still_correct = 0, successes = 0;
    long success_queries = 0;
    for (const auto& r : results) {
        if (!r.skipped) ++attempted;
        if (!r.skipped && !r.success) ++still_correct;
        if (r.success) {
            ++successes;
            success_queries += r.queries;
        }
    }
    const double total = static_cast<double>(results.size());
    report.clean_accuracy = 100.0 * attempted / total;
    report.aua = 100.0 * still_correct / total;
    if (successes > 0) {
        report.avg_queries = static_cast<double>(success_queries) / successes;
    }
    const auto dep = entity_dependency_metrics(results, examples);
    report.entity_freq = dep.entity_freq;
    report.entity_ratio = dep.entity_ratio;
    report.entity_pct = dep.entity_pct;
    const auto region = region_attack_success(results, examples);
    report.entity_as = region.entity_as;
    report.context_as = region.context_as;
    return report;
}

void save_attack_log(const std::string& path,
                     const std::vector<AttackResult>& results) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write attack log: " + path);
    for (const auto& r : results) {
        json j{{"id", r.example_id},
               {"skipped", r.skipped},
               {"success", r.success},
               {"queries", r.queries},
               {"perturbed", r.perturbed_indices},
               {"orig", r.original_pred},
               {"adv", r.adversarial_pred},
               {"gold", r.gold}};
        if (!r.adversarial_tokens.empty()) j["adv_tokens"] = r.adversarial_tokens;
        out << j.dump() << "\n";
    }
}

std::vector<AttackResult> load_attack_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open attack log: " + path);
    std::vector<AttackResult> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        AttackResult r;
        r.example_id = j.at("id").get<std::string>();
        r.skipped = j.at("skipped").get<bool>();
        r.success = j.at("success").get<bool>();
        r.queries = j.at("queries").get<long>();
        r.perturbed_indices = j.at("perturbed").get<std::vector<int>>();
        r.original_pred = j.at("orig").get<int>();
        r.adversarial_pred = j.at("adv").get<int>();
        r.gold = j.at("gold").get<int>();
        if (j.contains("adv_tokens")) {
            r.adversarial_tokens = j.at("adv_tokens").get<std::vector<std::string>>();
        }
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

// One decimal place for percentages, two for query counts; "n/a" for
// undefined sentinels.
std::string fmt1(std::optional<double> v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", *v);
    return buf;
}

std::string fmt2(std::optional<double> v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    return buf;
}

json opt_json(std::optional<double> v) {
    return v ? json(*v) : json(nullptr);
}

}  // namespace

std::string render_report_text(const RobustnessReport& r) {
    std::ostringstream os;
    os << "Clean  AUA    Query\n";
    os << fmt1(r.clean_accuracy) << "   " << fmt1(r.aua) << "   "
       << fmt2(r.avg_queries) << "\n\n";
    os << "Entity Freq  Entity Ratio  Entity %\n";
    os << fmt1(r.entity_freq) << "         " << fmt1(r.entity_ratio)
       << "          " << fmt1(r.entity_pct) << "\n\n";
    os << "Entity AS  Context AS\n";
    os << fmt1(r.entity_as) << "       " << fmt1(r.context_as) << "\n";
    return os.str();
}

std::string report_to_json(const RobustnessReport& r) {
    json j{{"clean_accuracy", r.clean_accuracy},
           {"aua", r.aua},
           {"avg_queries", opt_json(r.avg_queries)},
           {"entity_freq", opt_json(r.entity_freq)},
           {"entity_ratio", opt_json(r.entity_ratio)},
           {"entity_pct", r.entity_pct},
           {"entity_as", opt_json(r.entity_as)},
           {"context_as", opt_json(r.context_as)}};
    return j.dump(2);
}

}  // namespace revat::attack
