// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/checkpoint.hpp"

#include "opsc/error.hpp"

#include <bit>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace opsc::checkpoint
{
namespace
{
constexpr char kMagic[4] = {'O', 'P', 'S', 'C'};
// Refuse absurd sizes from corrupt files before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

template <typename U>
void put(std::ostream& out, U v)
{
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i)
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
bool get(std::istream& in, U& v)
{
    unsigned char bytes[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U)))
        return false;
    std::uint64_t x = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
        x |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    v = static_cast<U>(x);
    return true;
}

Kind parse_kind(const std::string& s)
{
    if (s == "lm")
        return Kind::LanguageModel;
    if (s == "clf")
        return Kind::Classifier;
    throw CheckpointError("unknown checkpoint kind '" + s + "'");
}

template <typename Model>
Checkpoint snapshot(Kind kind, const Model& m, const Vocab& vocab, nlohmann::json metadata)
{
    if (m.config().vocab_size != vocab.size())
        throw CheckpointError("model vocabulary size " + std::to_string(m.config().vocab_size) +
                              " does not match vocabulary of " + std::to_string(vocab.size()));
    Checkpoint c;
    c.kind = kind;
    c.vocab = vocab;
    c.config = m.config();
    c.metadata = std::move(metadata);
    for (const auto* p : m.parameters())
        c.records.push_back({p->name, p->value});
    if constexpr (requires { m.buffers(); })
        for (const auto& [name, t] : m.buffers())
            c.records.push_back({name, *t});
    return c;
}

void check_header(const Checkpoint& ckpt, Kind want, const Vocab* expected)
{
    if (ckpt.kind != want)
        throw CheckpointError("checkpoint holds a " + kind_name(ckpt.kind) + " model, expected " +
                              kind_name(want));
    if (expected && expected->content_hash() != ckpt.vocab.content_hash())
        throw CheckpointError("vocabulary hash mismatch: checkpoint " +
                              ckpt.vocab.content_hash() + ", vocabulary file " +
                              expected->content_hash());
}

}  // namespace

std::string kind_name(Kind kind)
{
    return kind == Kind::LanguageModel ? "lm" : "clf";
}

void write(std::ostream& out, const Checkpoint& ckpt)
{
    const nlohmann::json header = {{"kind", kind_name(ckpt.kind)},
                                   {"vocab_hash", ckpt.vocab.content_hash()},
                                   {"vocab", ckpt.vocab.tokens()},
                                   {"model", ckpt.config.to_json()},
                                   {"metadata", ckpt.metadata}};
    const std::string text = header.dump();
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
    for (const auto& r : ckpt.records)
    {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
        out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(r.value.rank()));
        for (auto d : r.value.shape())
            put<std::uint64_t>(out, d);
        for (std::size_t i = 0; i < r.value.size(); ++i)
            put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(r.value[i]));
    }
    if (!out)
        throw CheckpointError("failed writing checkpoint");
}

Checkpoint read(std::istream& in)
{
    char magic[4];
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 4, kMagic))
        throw CheckpointError("not a checkpoint file (bad magic)");
    std::uint32_t version = 0, header_len = 0;
    if (!get(in, version))
        throw CheckpointError("truncated checkpoint header");
    if (version != kVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                              " (this build reads " + std::to_string(kVersion) + ")");
    if (!get(in, header_len))
        throw CheckpointError("truncated checkpoint header");
    std::string text(header_len, '\0');
    if (!in.read(text.data(), header_len))
        throw CheckpointError("truncated checkpoint header");

    Checkpoint c;
    try
    {
        const auto header = nlohmann::json::parse(text);
        c.kind = parse_kind(header.at("kind").get<std::string>());
        c.vocab = Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>());
        const auto hash = header.at("vocab_hash").get<std::string>();
        if (hash != c.vocab.content_hash())
            throw CheckpointError("checkpoint vocabulary hash " + hash +
                                  " does not match its vocabulary (" + c.vocab.content_hash() +
                                  "); file was modified");
        c.config = model::ModelConfig::from_json(header.at("model"));
        c.metadata = header.value("metadata", nlohmann::json::object());
    }
    catch (const nlohmann::json::exception& e)
    {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    catch (const UsageError& e)
    {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    catch (const DataError& e)
    {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }

    std::uint32_t n_records = 0;
    if (!get(in, n_records))
        throw CheckpointError("truncated checkpoint: missing record count");
    for (std::uint32_t k = 0; k < n_records; ++k)
    {
        const std::string where = "record " + std::to_string(k);
        std::uint32_t name_len = 0;
        if (!get(in, name_len) || name_len > 4096)
            throw CheckpointError("truncated checkpoint at " + where);
        Record r;
        r.name.resize(name_len);
        if (!in.read(r.name.data(), name_len))
            throw CheckpointError("truncated checkpoint at " + where);
        const std::string what = "parameter record '" + r.name + "'";
        std::uint32_t rank = 0;
        if (!get(in, rank) || rank > 8)
            throw CheckpointError("truncated or corrupt " + what);
        ad::Shape shape(rank);
        std::uint64_t count = 1;
        for (auto& d : shape)
        {
            std::uint64_t v = 0;
            if (!get(in, v))
                throw CheckpointError("truncated " + what);
            d = static_cast<std::size_t>(v);
            count *= v;
            if (count > kMaxElements)
                throw CheckpointError("corrupt " + what + ": implausible shape");
        }
        r.value = ad::Tensor<float>(shape);
        for (std::size_t i = 0; i < r.value.size(); ++i)
        {
            std::uint32_t bits = 0;
            if (!get(in, bits))
                throw CheckpointError("truncated " + what + ": " + std::to_string(i) + " of " +
                                      std::to_string(r.value.size()) + " values present");
            r.value[i] = std::bit_cast<float>(bits);
        }
        c.records.push_back(std::move(r));
    }
    return c;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw CheckpointError("cannot open " + path.string() + " for writing");
    write(out, ckpt);
}

Checkpoint load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw CheckpointError("cannot open checkpoint " + path.string());
    return read(in);
}

Checkpoint from_model(const model::LanguageModel<float>& lm, const Vocab& vocab,
                      nlohmann::json metadata)
{
    return snapshot(Kind::LanguageModel, lm, vocab, std::move(metadata));
}

Checkpoint from_model(const model::Classifier<float>& clf, const Vocab& vocab,
                      nlohmann::json metadata)
{
    return snapshot(Kind::Classifier, clf, vocab, std::move(metadata));
}

void assign(const Checkpoint& ckpt, const std::vector<ad::Parameter<float>*>& params,
            const std::vector<std::pair<std::string, ad::Tensor<float>*>>& buffers)
{
    std::map<std::string, const Record*> by_name;
    for (const auto& r : ckpt.records)
        if (!by_name.emplace(r.name, &r).second)
            throw CheckpointError("duplicate parameter record '" + r.name + "'");
    for (auto* p : params)
    {
        auto it = by_name.find(p->name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint lacks parameter '" + p->name + "'");
        if (it->second->value.shape() != p->value.shape())
            throw CheckpointError("parameter '" + p->name + "' has shape " +
                                  ad::shape_str(it->second->value.shape()) + ", model expects " +
                                  ad::shape_str(p->value.shape()));
        p->value = it->second->value;
        p->zero_grad();
        by_name.erase(it);
    }
    for (const auto& [name, t] : buffers)
    {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint lacks buffer '" + name + "'");
        if (it->second->value.shape() != t->shape())
            throw CheckpointError("buffer '" + name + "' has shape " +
                                  ad::shape_str(it->second->value.shape()) + ", model expects " +
                                  ad::shape_str(t->shape()));
        *t = it->second->value;
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw CheckpointError("checkpoint has unexpected parameter '" + by_name.begin()->first +
                              "'");
}

model::LanguageModel<float> to_language_model(const Checkpoint& ckpt, const Vocab* expected_vocab)
{
    check_header(ckpt, Kind::LanguageModel, expected_vocab);
    Rng init(0);
    model::LanguageModel<float> lm(ckpt.config, init);
    assign(ckpt, lm.parameters());
    return lm;
}

model::Classifier<float> to_classifier(const Checkpoint& ckpt, const Vocab* expected_vocab)
{
    check_header(ckpt, Kind::Classifier, expected_vocab);
    Rng init(0);
    model::Classifier<float> clf(ckpt.config, init);
    assign(ckpt, clf.parameters(), clf.buffers());
    return clf;
}

}  // namespace opsc::checkpoint
