#include "revat/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace revat {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Normal: return "normal";
        case TrainMode::FreeLB: return "freelb";
        case TrainMode::TaVat: return "tavat";
        case TrainMode::Read: return "read";
    }
    throw std::logic_error("unhandled TrainMode");
}

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "normal") return TrainMode::Normal;
    if (name == "freelb") return TrainMode::FreeLB;
    if (name == "tavat") return TrainMode::TaVat;
    if (name == "read") return TrainMode::Read;
    throw std::runtime_error("unknown training mode: " + name);
}

std::vector<std::string> validate_example(const Example& example) {
    std::vector<std::string> violations;
    const int n = static_cast<int>(example.tokens.size());

    if (example.id.empty()) violations.push_back("id is empty");
    if (n == 0) violations.push_back("token list is empty");

    auto check_span = [&](const Span& s, const char* name) {
        if (s.size() <= 0) {
            violations.push_back(std::string(name) + " span is empty");
            return false;
        }
        if (s.begin < 0 || s.end > n) {
            violations.push_back(std::string(name) + " span out of bounds");
            return false;
        }
        return true;
    };
    const bool head_ok = check_span(example.head_span, "head");
    const bool tail_ok = check_span(example.tail_span, "tail");
    if (head_ok && tail_ok && example.head_span.overlaps(example.tail_span)) {
        violations.push_back("spans overlap");
    }
    return violations;
}

std::vector<std::string> validate_example(const Example& example,
                                          const std::vector<std::string>& label_set) {
    auto violations = validate_example(example);
    if (std::find(label_set.begin(), label_set.end(), example.relation) ==
        label_set.end()) {
        violations.push_back("relation not in label set: " + example.relation);
    }
    return violations;
}

std::vector<std::string> validate_config(const TrainConfig& c) {
    std::vector<std::string> violations;
    if (c.epsilon <= 0) violations.push_back("epsilon must be > 0");
    if (c.sigma < 0) violations.push_back("sigma must be >= 0");
    if (c.alpha < 0) violations.push_back("alpha must be >= 0");
    if (c.mode != TrainMode::Normal && c.adv_steps < 1) {
        violations.push_back("K must be >= 1 for adversarial modes");
    }
    if (c.n_percent < 0 || c.n_percent > 100) {
        violations.push_back("n_percent out of range");
    }
    if (c.learning_rate <= 0) violations.push_back("learning_rate must be > 0");
    if (c.weight_decay < 0) violations.push_back("weight_decay must be >= 0");
    if (c.epochs < 1) violations.push_back("epochs must be >= 1");
    if (c.batch_size < 1) violations.push_back("batch_size must be >= 1");
    if (c.embedding_dim < 1) violations.push_back("embedding_dim must be >= 1");
    if (c.vocab_size < 0) violations.push_back("vocab_size must be >= 0");
    return violations;
}

namespace {

// Formats doubles so that serialize/parse round-trips exactly.
std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        // trim
        auto strip = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": expected key=value");
        }
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        try {
            if (key == "mode") cfg.mode = train_mode_from_string(value);
            else if (key == "epsilon") cfg.epsilon = std::stod(value);
            else if (key == "sigma") cfg.sigma = std::stod(value);
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "adv_steps") cfg.adv_steps = std::stoi(value);
            else if (key == "n_percent") cfg.n_percent = std::stod(value);
            else if (key == "disable_spv") cfg.disable_spv = (value == "true" || value == "1");
            else if (key == "disable_ctl") cfg.disable_ctl = (value == "true" || value == "1");
            else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
            else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "batch_size") cfg.batch_size = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "embedding_dim") cfg.embedding_dim = std::stoi(value);
            else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
            else {
                throw std::runtime_error("config line " + std::to_string(lineno) +
                                         ": unknown key '" + key + "'");
            }
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("config line " + std::to_string(lineno) +
                                     ": bad value for '" + key + "'");
        }
    }
    return cfg;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "mode = " << to_string(c.mode) << "\n"
       << "epsilon = " << format_double(c.epsilon) << "\n"
       << "sigma = " << format_double(c.sigma) << "\n"
       << "alpha = " << format_double(c.alpha) << "\n"
       << "adv_steps = " << c.adv_steps << "\n"
       << "n_percent = " << format_double(c.n_percent) << "\n"
       << "disable_spv = " << (c.disable_spv ? "true" : "false") << "\n"
       << "disable_ctl = " << (c.disable_ctl ? "true" : "false") << "\n"
       << "learning_rate = " << format_double(c.learning_rate) << "\n"
       << "weight_decay = " << format_double(c.weight_decay) << "\n"
       << "epochs = " << c.epochs << "\n"
       << "batch_size = " << c.batch_size << "\n"
       << "seed = " << c.seed << "\n"
       << "embedding_dim = " << c.embedding_dim << "\n"
       << "vocab_size = " << c.vocab_size << "\n";
    return os.str();
}

}  // namespace revat
