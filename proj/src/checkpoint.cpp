#include "revat/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace revat {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_raw(std::ostream& out, const void* p, size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_raw(std::istream& in, void* p, size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("truncated checkpoint");
}

void write_string(std::ostream& out, const std::string& s) {
    const uint64_t n = s.size();
    write_raw(out, &n, sizeof(n));
    write_raw(out, s.data(), s.size());
}

std::string read_string(std::istream& in) {
    uint64_t n = 0;
    read_raw(in, &n, sizeof(n));
    std::string s(n, '\0');
    read_raw(in, s.data(), n);
    return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    const uint64_t rows = static_cast<uint64_t>(m.rows());
    const uint64_t cols = static_cast<uint64_t>(m.cols());
    write_raw(out, &rows, sizeof(rows));
    write_raw(out, &cols, sizeof(cols));
    for (uint64_t i = 0; i < rows; ++i) {
        for (uint64_t j = 0; j < cols; ++j) {
            const double v = m(static_cast<int>(i), static_cast<int>(j));
            write_raw(out, &v, sizeof(v));
        }
    }
}

Matrix read_matrix(std::istream& in) {
    uint64_t rows = 0, cols = 0;
    read_raw(in, &rows, sizeof(rows));
    read_raw(in, &cols, sizeof(cols));
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (uint64_t i = 0; i < rows; ++i) {
        for (uint64_t j = 0; j < cols; ++j) {
            double v = 0;
            read_raw(in, &v, sizeof(v));
            m(static_cast<int>(i), static_cast<int>(j)) = v;
        }
    }
    return m;
}

}  // namespace

std::unique_ptr<ToyEncoder> Checkpoint::build_model() const {
    auto model = std::make_unique<ToyEncoder>(encoder_config);
    if (params.size() != model->parameters().size()) {
        throw std::runtime_error("checkpoint parameter count mismatch");
    }
    model->parameters() = params;
    return model;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    write_raw(out, kMagic, sizeof(kMagic));
    write_raw(out, &kVersion, sizeof(kVersion));
    write_string(out, serialize_config(ckpt.train_config));

    const auto& ec = ckpt.encoder_config;
    write_raw(out, &ec.vocab_size, sizeof(ec.vocab_size));
    write_raw(out, &ec.embedding_dim, sizeof(ec.embedding_dim));
    write_raw(out, &ec.hidden_dim, sizeof(ec.hidden_dim));
    write_raw(out, &ec.num_classes, sizeof(ec.num_classes));
    write_raw(out, &ec.dropout, sizeof(ec.dropout));
    write_raw(out, &ec.seed, sizeof(ec.seed));

    const uint64_t n_params = ckpt.params.size();
    write_raw(out, &n_params, sizeof(n_params));
    for (const auto& p : ckpt.params) write_matrix(out, p);

    const uint64_t n_tokens = ckpt.token_vocab.tokens.size();
    write_raw(out, &n_tokens, sizeof(n_tokens));
    for (const auto& t : ckpt.token_vocab.tokens) write_string(out, t);

    const uint64_t n_labels = ckpt.labels.size();
    write_raw(out, &n_labels, sizeof(n_labels));
    for (const auto& l : ckpt.labels) write_string(out, l);

    const uint8_t has_entity = ckpt.vocab_entity ? 1 : 0;
    const uint8_t has_context = ckpt.vocab_context ? 1 : 0;
    write_raw(out, &has_entity, sizeof(has_entity));
    write_raw(out, &has_context, sizeof(has_context));
    if (ckpt.vocab_entity) perturb::save_vocabulary(out, *ckpt.vocab_entity);
    if (ckpt.vocab_context) perturb::save_vocabulary(out, *ckpt.vocab_context);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    read_raw(in, magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("bad checkpoint magic");
    }
    uint32_t version = 0;
    read_raw(in, &version, sizeof(version));
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " +
                                 std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.train_config = parse_config(read_string(in));

    auto& ec = ckpt.encoder_config;
    read_raw(in, &ec.vocab_size, sizeof(ec.vocab_size));
    read_raw(in, &ec.embedding_dim, sizeof(ec.embedding_dim));
    read_raw(in, &ec.hidden_dim, sizeof(ec.hidden_dim));
    read_raw(in, &ec.num_classes, sizeof(ec.num_classes));
    read_raw(in, &ec.dropout, sizeof(ec.dropout));
    read_raw(in, &ec.seed, sizeof(ec.seed));

    uint64_t n_params = 0;
    read_raw(in, &n_params, sizeof(n_params));
    ckpt.params.reserve(n_params);
    for (uint64_t i = 0; i < n_params; ++i) ckpt.params.push_back(read_matrix(in));

    uint64_t n_tokens = 0;
    read_raw(in, &n_tokens, sizeof(n_tokens));
    ckpt.token_vocab.tokens.reserve(n_tokens);
    for (uint64_t i = 0; i < n_tokens; ++i) {
        ckpt.token_vocab.tokens.push_back(read_string(in));
        ckpt.token_vocab.ids[ckpt.token_vocab.tokens.back()] = static_cast<int>(i);
    }

    uint64_t n_labels = 0;
    read_raw(in, &n_labels, sizeof(n_labels));
    for (uint64_t i = 0; i < n_labels; ++i) ckpt.labels.push_back(read_string(in));

    uint8_t has_entity = 0, has_context = 0;
    read_raw(in, &has_entity, sizeof(has_entity));
    read_raw(in, &has_context, sizeof(has_context));
    if (has_entity) ckpt.vocab_entity = perturb::load_vocabulary(in);
    if (has_context) ckpt.vocab_context = perturb::load_vocabulary(in);
    return ckpt;
}

}  // namespace revat
