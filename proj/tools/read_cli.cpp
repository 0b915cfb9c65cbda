// Command-line front end: training, attack evaluation, analysis,
// clean-token sweeps, synthetic data generation, and augmentation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "revat/attack.hpp"
#include "revat/checkpoint.hpp"
#include "revat/core.hpp"
#include "revat/data.hpp"
#include "revat/model.hpp"
#include "revat/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace revat;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kEndpointEnv = "REVAT_AUGMENT_ENDPOINT";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string now_iso8601() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
    return buf;
}

// Run manifest: provenance for every command. Timestamps live only
// here, never in metric files, so metric outputs stay byte-stable
// across re-runs.
struct ManifestBuilder {
    json j;

    ManifestBuilder(const std::string& command, uint64_t seed) {
        j["command"] = command;
        j["seed"] = seed;
        j["version"] = kVersion;
        j["started"] = now_iso8601();
        j["inputs"] = json::object();
        j["outputs"] = json::object();
    }
    void config_hash(const TrainConfig& cfg) {
        j["config_hash"] = hex64(fnv1a(serialize_config(cfg)));
    }
    void input(const std::string& name, const std::string& path) {
        j["inputs"][name] = path;
    }
    void output(const std::string& name, const std::string& path) {
        j["outputs"][name] = path;
    }
    void write(const fs::path& dir) {
        j["finished"] = now_iso8601();
        std::ofstream out(dir / "manifest.json");
        out << j.dump(2) << "\n";
    }
};

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) {
        throw UsageError(std::string(what) + " not found: " + path);
    }
}

std::vector<Example> load_required_dataset(const std::string& path) {
    require_file(path, "dataset");
    return data::load_dataset(path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

struct Corpus {
    data::TokenVocab vocab;
    data::LabelSet labels;
    std::vector<MarkedExample> train;
    std::vector<MarkedExample> dev;
};

Corpus prepare_corpus(const std::vector<Example>& train_raw,
                      const std::vector<Example>& dev_raw) {
    Corpus c;
    c.vocab = data::build_vocab(train_raw);
    c.labels = data::build_label_set(train_raw);
    c.train = data::mark_and_encode_all(train_raw, c.vocab, c.labels);
    c.dev = data::mark_and_encode_all(dev_raw, c.vocab, c.labels);
    return c;
}

// ---------------------------------------------------------------- train

int cmd_train(const std::string& config_path, const std::string& dataset_path,
              const std::string& dev_path, const std::string& out_dir,
              std::optional<uint64_t> seed_override, int hidden_dim) {
    require_file(config_path, "config");
    TrainConfig cfg = load_config(config_path);
    if (seed_override) cfg.seed = *seed_override;

    auto train_raw = load_required_dataset(dataset_path);
    auto dev_raw = dev_path.empty() ? train_raw : load_required_dataset(dev_path);
    if (train_raw.empty()) throw UsageError("dataset is empty: " + dataset_path);
    Corpus corpus = prepare_corpus(train_raw, dev_raw);
    cfg.vocab_size = corpus.vocab.size();

    auto violations = validate_config(cfg);
    if (!violations.empty()) throw UsageError("invalid config: " + violations.front());

    ToyEncoderConfig enc;
    enc.vocab_size = corpus.vocab.size();
    enc.embedding_dim = cfg.embedding_dim;
    enc.hidden_dim = hidden_dim;
    enc.num_classes = corpus.labels.size();
    enc.seed = cfg.seed;
    ToyEncoder model(enc);

    train::Trainer trainer(model, cfg);
    train::TrainingRun run = trainer.train(corpus.train, corpus.dev);
    for (const auto& rec : run.history) {
        if (!std::isfinite(rec.train_loss)) {
            throw std::runtime_error("training diverged (non-finite loss)");
        }
    }
    model.parameters() = run.best_params;

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    Checkpoint ckpt;
    ckpt.train_config = cfg;
    ckpt.encoder_config = enc;
    ckpt.params = model.parameters();
    ckpt.token_vocab = corpus.vocab;
    ckpt.labels = corpus.labels.labels;
    if (trainer.flags().token_perturbation) {
        ckpt.vocab_context = trainer.context_vocab();
        if (trainer.flags().separate_vocab) ckpt.vocab_entity = trainer.entity_vocab();
    }
    const fs::path ckpt_path = dir / "checkpoint.bin";
    save_checkpoint(ckpt_path.string(), ckpt);

    const fs::path history_path = dir / "history.jsonl";
    {
        std::ofstream out(history_path);
        for (size_t e = 0; e < run.history.size(); ++e) {
            json j{{"epoch", e},
                   {"train_loss", run.history[e].train_loss},
                   {"dev_metric", run.history[e].dev_metric}};
            out << j.dump() << "\n";
        }
    }

    ManifestBuilder manifest("train", cfg.seed);
    manifest.config_hash(cfg);
    manifest.input("config", config_path);
    manifest.input("dataset", dataset_path);
    if (!dev_path.empty()) manifest.input("dev", dev_path);
    manifest.output("checkpoint", ckpt_path.string());
    manifest.output("history", history_path.string());
    manifest.write(dir);

    std::cout << "best epoch " << run.best_epoch << "  dev " << run.best_dev
              << "  checkpoint " << ckpt_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- attack

attack::Lexicon load_lexicon(const std::string& path) {
    require_file(path, "lexicon");
    std::ifstream in(path);
    json j = json::parse(in);
    attack::Lexicon lex;
    for (auto& [token, subs] : j.items()) {
        lex[token] = subs.get<std::vector<std::string>>();
    }
    return lex;
}

attack::Lexicon unk_lexicon(const data::TokenVocab& vocab) {
    attack::Lexicon lex;
    for (const auto& t : vocab.tokens) lex[t] = {data::kUnkToken};
    return lex;
}

std::vector<MarkedExample> select_samples(std::vector<MarkedExample> all,
                                          long samples, uint64_t seed) {
    const size_t k = std::min<size_t>(static_cast<size_t>(samples), all.size());
    std::mt19937_64 rng(seed);
    std::vector<size_t> pool(all.size());
    std::iota(pool.begin(), pool.end(), size_t{0});
    std::vector<size_t> chosen;
    for (size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
        chosen.push_back(pool[i]);
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<MarkedExample> out;
    out.reserve(k);
    for (size_t i : chosen) out.push_back(std::move(all[i]));
    return out;
}

int cmd_attack(const std::string& checkpoint_path, const std::string& dataset_path,
               const std::string& attacker, long samples, uint64_t seed,
               const std::string& out_dir, const std::string& replay_path,
               const std::string& lexicon_path, double epsilon, int steps,
               double alpha) {
    require_file(checkpoint_path, "checkpoint");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    auto model = ckpt.build_model();

    auto raw = load_required_dataset(dataset_path);
    data::LabelSet labels{ckpt.labels};
    auto all = data::mark_and_encode_all(raw, ckpt.token_vocab, labels);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const fs::path log_path = dir / "attack_log.jsonl";

    std::vector<attack::AttackResult> results;
    std::vector<MarkedExample> attacked;
    if (!replay_path.empty()) {
        require_file(replay_path, "attack log");
        results = attack::load_attack_log(replay_path);
        // Restrict metrics to the examples the log actually covers so a
        // replay reproduces the original report exactly.
        std::set<std::string> logged;
        for (const auto& r : results) logged.insert(r.example_id);
        for (auto& ex : all) {
            if (logged.count(ex.id)) attacked.push_back(std::move(ex));
        }
    } else {
        attacked = select_samples(all, samples, seed);
        attack::Attacker attacker_fn;
        if (attacker == "pgd") {
            attacker_fn = [&](const MarkedExample& ex) {
                return attack::pgd_attack(*model, ex, epsilon, steps, alpha);
            };
        } else if (attacker == "greedy-sub") {
            attack::Lexicon lexicon = lexicon_path.empty()
                                          ? unk_lexicon(ckpt.token_vocab)
                                          : load_lexicon(lexicon_path);
            attacker_fn = [&, lexicon](const MarkedExample& ex) {
                auto predict =
                    attack::make_token_predictor(*model, ckpt.token_vocab.ids, nullptr);
                return attack::greedy_substitution_attack(predict, ex, lexicon,
                                                          attack::GreedyOptions{});
            };
        } else {
            throw UsageError("unknown attacker: " + attacker +
                             " (expected pgd or greedy-sub)");
        }
        attack::UnderAttack run = attack::evaluate_under_attack(attacked, attacker_fn);
        results = std::move(run.results);
        attack::save_attack_log(log_path.string(), results);
    }

    attack::RobustnessReport report = attack::build_report(results, attacked);
    const std::string text = attack::render_report_text(report);
    const std::string machine = attack::report_to_json(report);
    write_text(dir / "report.txt", text);
    write_text(dir / "report.json", machine + "\n");
    std::cout << text;

    ManifestBuilder manifest("attack", seed);
    manifest.config_hash(ckpt.train_config);
    manifest.input("checkpoint", checkpoint_path);
    manifest.input("dataset", dataset_path);
    if (!replay_path.empty()) {
        manifest.input("replay", replay_path);
    } else {
        manifest.output("attack_log", log_path.string());
    }
    manifest.output("report_text", (dir / "report.txt").string());
    manifest.output("report_json", (dir / "report.json").string());
    manifest.write(dir);
    return 0;
}

// --------------------------------------------------------------- analyze

int cmd_analyze(const std::string& log_path, const std::string& dataset_path,
                const std::string& checkpoint_path, const std::string& out_dir) {
    require_file(log_path, "attack log");
    auto results = attack::load_attack_log(log_path);
    if (results.empty()) throw std::runtime_error("attack log is empty: " + log_path);

    require_file(checkpoint_path, "checkpoint");
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    auto raw = load_required_dataset(dataset_path);
    data::LabelSet labels{ckpt.labels};
    auto examples = data::mark_and_encode_all(raw, ckpt.token_vocab, labels);

    attack::RobustnessReport report = attack::build_report(results, examples);
    const std::string text = attack::render_report_text(report);
    const std::string machine = attack::report_to_json(report);
    std::cout << text << "\n" << machine << "\n";

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const fs::path dir(out_dir);
        write_text(dir / "report.txt", text);
        write_text(dir / "report.json", machine + "\n");
        ManifestBuilder manifest("analyze", 0);
        manifest.input("attack_log", log_path);
        manifest.input("dataset", dataset_path);
        manifest.input("checkpoint", checkpoint_path);
        manifest.output("report_text", (dir / "report.txt").string());
        manifest.output("report_json", (dir / "report.json").string());
        manifest.write(dir);
    }
    return 0;
}

// ----------------------------------------------------------------- sweep

int cmd_sweep(const std::string& config_path, const std::string& dataset_path,
              const std::string& dev_path, const std::vector<double>& probs,
              const std::string& out_dir, std::optional<uint64_t> seed_override,
              int hidden_dim) {
    require_file(config_path, "config");
    TrainConfig cfg = load_config(config_path);
    if (seed_override) cfg.seed = *seed_override;

    auto train_raw = load_required_dataset(dataset_path);
    auto dev_raw = dev_path.empty() ? train_raw : load_required_dataset(dev_path);
    Corpus corpus = prepare_corpus(train_raw, dev_raw);
    cfg.vocab_size = corpus.vocab.size();

    ToyEncoderConfig enc;
    enc.vocab_size = corpus.vocab.size();
    enc.embedding_dim = cfg.embedding_dim;
    enc.hidden_dim = hidden_dim;
    enc.num_classes = corpus.labels.size();
    enc.seed = cfg.seed;

    auto series = train::ctl_sweep(enc, corpus.train, corpus.dev, cfg, probs);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    std::ostringstream table, tsv;
    json machine = json::array();
    table << "n%     dev\n";
    for (const auto& [p, dev] : series) {
        char line[64];
        std::snprintf(line, sizeof(line), "%-6.1f %.1f\n", p, dev);
        table << line;
        tsv << p << "\t" << dev << "\n";
        machine.push_back({{"n_percent", p}, {"dev_metric", dev}});
    }
    write_text(dir / "sweep.txt", table.str());
    write_text(dir / "sweep.tsv", tsv.str());
    write_text(dir / "sweep.json", machine.dump(2) + "\n");
    std::cout << table.str();

    ManifestBuilder manifest("sweep", cfg.seed);
    manifest.config_hash(cfg);
    manifest.input("config", config_path);
    manifest.input("dataset", dataset_path);
    manifest.output("table", (dir / "sweep.txt").string());
    manifest.output("plot_data", (dir / "sweep.tsv").string());
    manifest.output("series", (dir / "sweep.json").string());
    manifest.write(dir);
    return 0;
}

// --------------------------------------------------------------- gendata

int cmd_gendata(const data::SyntheticSpec& spec, const std::string& out_dir) {
    auto violations = data::validate_synthetic_spec(spec);
    if (!violations.empty()) {
        throw UsageError("invalid synthetic spec: " + violations.front());
    }
    data::SyntheticDataset ds = data::generate_synthetic(spec);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const fs::path data_path = dir / "synthetic.jsonl";
    data::save_dataset(data_path.string(), ds.examples);

    // Answer key, sorted by id for stable output.
    std::vector<std::pair<std::string, data::CueType>> cues(ds.cues.begin(),
                                                            ds.cues.end());
    std::sort(cues.begin(), cues.end());
    const fs::path key_path = dir / "answer_key.jsonl";
    {
        std::ofstream out(key_path);
        for (const auto& [id, cue] : cues) {
            json j{{"id", id},
                   {"cue", cue == data::CueType::EntityCue ? "entity" : "context"}};
            out << j.dump() << "\n";
        }
    }

    ManifestBuilder manifest("gendata", spec.seed);
    manifest.output("dataset", data_path.string());
    manifest.output("answer_key", key_path.string());
    manifest.write(dir);
    std::cout << "wrote " << ds.examples.size() << " examples to "
              << data_path.string() << "\n";
    return 0;
}

// --------------------------------------------------------------- augment

int cmd_augment(const std::string& dataset_path, const std::string& out_dir,
                int per_sample, uint64_t seed, bool use_stub) {
    auto dataset = load_required_dataset(dataset_path);

    std::unique_ptr<data::TextGenerator> generator;
    if (use_stub) {
        generator = std::make_unique<data::StubGenerator>(data::make_echo_stub());
    } else {
        const char* endpoint = std::getenv(kEndpointEnv);
        if (!endpoint || !*endpoint) {
            throw UsageError(std::string("no generation endpoint: set ") +
                             kEndpointEnv + " or pass --stub");
        }
        generator = data::make_http_generator(endpoint);
    }

    auto augmented = data::augment_dataset(dataset, *generator, per_sample, seed);

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const fs::path out_path = dir / "augmented.jsonl";
    data::save_dataset(out_path.string(), augmented);

    ManifestBuilder manifest("augment", seed);
    manifest.input("dataset", dataset_path);
    manifest.output("dataset", out_path.string());
    manifest.write(dir);
    std::cout << "wrote " << augmented.size() << " examples ("
              << augmented.size() - dataset.size() << " new) to "
              << out_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- report

std::optional<double> opt_field(const json& j, const char* name) {
    if (!j.contains(name) || j.at(name).is_null()) return std::nullopt;
    return j.at(name).get<double>();
}

int cmd_report(const std::string& report_path) {
    require_file(report_path, "report");
    std::ifstream in(report_path);
    json j = json::parse(in);
    attack::RobustnessReport r;
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.aua = j.at("aua").get<double>();
    r.avg_queries = opt_field(j, "avg_queries");
    r.entity_freq = opt_field(j, "entity_freq");
    r.entity_ratio = opt_field(j, "entity_ratio");
    r.entity_pct = j.at("entity_pct").get<double>();
    r.entity_as = opt_field(j, "entity_as");
    r.context_as = opt_field(j, "context_as");
    std::cout << attack::render_report_text(r);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity-aware adversarial training and attack evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    // ---- train
    std::string config_path, dataset_path, dev_path, out_dir = "run";
    std::optional<uint64_t> seed_override;
    int hidden_dim = 32;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", config_path, "key=value config file")->required();
    train_cmd->add_option("--dataset", dataset_path, "training data (jsonl)")->required();
    train_cmd->add_option("--dev", dev_path, "dev data (jsonl); defaults to train");
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--seed", seed_override, "override the config seed");
    train_cmd->add_option("--hidden-dim", hidden_dim, "encoder hidden width");

    // ---- attack
    std::string checkpoint_path, attacker = "pgd", replay_path, lexicon_path;
    long samples = 1000;
    uint64_t attack_seed = 42;
    double atk_epsilon = 0.4, atk_alpha = 0.1;
    int atk_steps = 10;
    auto* attack_cmd = app.add_subcommand("attack", "Attack a trained model");
    attack_cmd->add_option("--checkpoint", checkpoint_path)->required();
    attack_cmd->add_option("--dataset", dataset_path, "test data (jsonl)")->required();
    attack_cmd->add_option("--attacker", attacker, "pgd | greedy-sub");
    attack_cmd->add_option("--samples", samples, "test samples to attack");
    attack_cmd->add_option("--seed", attack_seed, "sample-selection seed");
    attack_cmd->add_option("--out", out_dir, "output directory");
    attack_cmd->add_option("--replay", replay_path, "recompute the report from a log");
    attack_cmd->add_option("--lexicon", lexicon_path, "substitution lexicon (json)");
    attack_cmd->add_option("--epsilon", atk_epsilon, "pgd attack radius");
    attack_cmd->add_option("--steps", atk_steps, "pgd steps");
    attack_cmd->add_option("--alpha", atk_alpha, "pgd step size");

    // ---- analyze
    std::string log_path, analyze_out;
    auto* analyze_cmd = app.add_subcommand("analyze", "Entity-dependency report");
    analyze_cmd->add_option("--log", log_path, "attack log (jsonl)")->required();
    analyze_cmd->add_option("--dataset", dataset_path)->required();
    analyze_cmd->add_option("--checkpoint", checkpoint_path)->required();
    analyze_cmd->add_option("--out", analyze_out, "optional output directory");

    // ---- sweep
    std::vector<double> probs{0.0, 5.0, 10.0, 15.0, 20.0};
    auto* sweep_cmd = app.add_subcommand("sweep", "Clean-token probability sweep");
    sweep_cmd->add_option("--config", config_path)->required();
    sweep_cmd->add_option("--dataset", dataset_path)->required();
    sweep_cmd->add_option("--dev", dev_path);
    sweep_cmd->add_option("--probs", probs, "probabilities, percent");
    sweep_cmd->add_option("--out", out_dir, "output directory");
    sweep_cmd->add_option("--seed", seed_override, "override the config seed");
    sweep_cmd->add_option("--hidden-dim", hidden_dim);

    // ---- gendata
    data::SyntheticSpec spec;
    auto* gendata_cmd = app.add_subcommand("gendata", "Generate synthetic data");
    gendata_cmd->add_option("--relations", spec.n_relations);
    gendata_cmd->add_option("--per-relation", spec.samples_per_relation);
    gendata_cmd->add_option("--filler-vocab", spec.filler_vocab);
    gendata_cmd->add_option("--entity-vocab", spec.generic_entity_vocab);
    gendata_cmd->add_option("--shortcut-strength", spec.shortcut_strength);
    gendata_cmd->add_option("--min-len", spec.min_len);
    gendata_cmd->add_option("--max-len", spec.max_len);
    gendata_cmd->add_option("--seed", spec.seed);
    gendata_cmd->add_option("--out", out_dir, "output directory");

    // ---- augment
    int per_sample = 1;
    uint64_t aug_seed = 1;
    bool use_stub = false;
    auto* augment_cmd = app.add_subcommand("augment", "Augment a dataset");
    augment_cmd->add_option("--dataset", dataset_path)->required();
    augment_cmd->add_option("--out", out_dir, "output directory");
    augment_cmd->add_option("--per-sample", per_sample, "generations per example");
    augment_cmd->add_option("--seed", aug_seed);
    augment_cmd->add_flag("--stub", use_stub, "use the offline echo generator");

    // ---- report
    std::string report_path;
    auto* report_cmd = app.add_subcommand("report", "Render a saved report");
    report_cmd->add_option("--in", report_path, "report.json path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) {
            return cmd_train(config_path, dataset_path, dev_path, out_dir,
                             seed_override, hidden_dim);
        }
        if (attack_cmd->parsed()) {
            return cmd_attack(checkpoint_path, dataset_path, attacker, samples,
                              attack_seed, out_dir, replay_path, lexicon_path,
                              atk_epsilon, atk_steps, atk_alpha);
        }
        if (analyze_cmd->parsed()) {
            return cmd_analyze(log_path, dataset_path, checkpoint_path, analyze_out);
        }
        if (sweep_cmd->parsed()) {
            return cmd_sweep(config_path, dataset_path, dev_path, probs, out_dir,
                             seed_override, hidden_dim);
        }
        if (gendata_cmd->parsed()) return cmd_gendata(spec, out_dir);
        if (augment_cmd->parsed()) {
            return cmd_augment(dataset_path, out_dir, per_sample, aug_seed, use_stub);
        }
        if (report_cmd->parsed()) return cmd_report(report_path);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
