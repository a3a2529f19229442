// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/corpus.hpp"

#include "opsc/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace opsc
{
using json = nlohmann::json;

namespace
{
const std::array<std::string, Vocab::kNumReserved> kReservedTokens = {"<pad>", "<unk>", "<bos>"};

std::string join_tokens(const std::vector<std::string>& tokens)
{
    std::string key;
    for (const auto& t : tokens)
    {
        key += t;
        key.push_back(' ');
    }
    return key;
}

DataError line_error(std::size_t line_no, const std::string& what)
{
    return DataError("corpus line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::string_view label_name(Label label)
{
    switch (label)
    {
    case Label::Suicidal:
        return "Suicidal";
    case Label::Prodigal:
        return "Prodigal";
    case Label::Greedy:
        return "Greedy";
    case Label::Normal:
        return "Normal";
    }
    return "?";
}

IngestResult ingest(std::istream& in, const evm::DisasmOptions& disasm)
{
    IngestResult result;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;

        json obj;
        try
        {
            obj = json::parse(line);
        }
        catch (const json::parse_error& e)
        {
            throw line_error(line_no, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object())
            throw line_error(line_no, "expected a JSON object");
        if (!obj.contains("address") || !obj["address"].is_string())
            throw line_error(line_no, "missing string field 'address'");
        if (!obj.contains("label") || !obj["label"].is_number_integer())
            throw line_error(line_no, "missing integer field 'label'");

        const int label = obj["label"].get<int>();
        if (label < 1 || label > 5)
            throw line_error(line_no, "label " + std::to_string(label) + " outside 1..5");
        if (label == 5)
        {
            ++result.stats.skipped_composite;
            continue;
        }

        ContractRecord rec;
        rec.address = obj["address"].get<std::string>();
        rec.label = static_cast<Label>(label);

        if (obj.contains("tokens"))
        {
            if (!obj["tokens"].is_array())
                throw line_error(line_no, "'tokens' must be an array of strings");
            for (const auto& t : obj["tokens"])
            {
                if (!t.is_string())
                    throw line_error(line_no, "'tokens' must be an array of strings");
                rec.tokens.push_back(t.get<std::string>());
            }
        }
        else if (obj.contains("bytecode") && obj["bytecode"].is_string())
        {
            try
            {
                rec.tokens = evm::disassemble(obj["bytecode"].get<std::string>(),
                                              evm::load_opcode_table(), disasm)
                                 .tokens;
            }
            catch (const DataError& e)
            {
                throw line_error(line_no, e.what());
            }
        }
        else
        {
            throw line_error(line_no, "needs either 'bytecode' or 'tokens'");
        }

        if (rec.tokens.empty())
        {
            ++result.stats.skipped_empty;
            continue;
        }
        if (!seen.insert(rec.address).second)
            throw line_error(line_no, "duplicate address " + rec.address);

        ++result.stats.per_label[class_index(rec.label)];
        result.records.push_back(std::move(rec));
    }
    return result;
}

IngestResult ingest(const std::filesystem::path& path, const evm::DisasmOptions& disasm)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open corpus file " + path.string());
    return ingest(in, disasm);
}

void write_corpus(std::ostream& out, const std::vector<ContractRecord>& records)
{
    for (const auto& r : records)
    {
        json obj;
        obj["address"] = r.address;
        obj["tokens"] = r.tokens;
        obj["label"] = static_cast<int>(r.label);
        out << obj.dump() << '\n';
    }
}

std::vector<ContractRecord> dedup_normals(const std::vector<ContractRecord>& records)
{
    std::vector<ContractRecord> out;
    out.reserve(records.size());
    std::unordered_set<std::string> seen;
    for (const auto& r : records)
    {
        if (r.label == Label::Normal && !seen.insert(join_tokens(r.tokens)).second)
            continue;
        out.push_back(r);
    }
    return out;
}

SplitSizes split_sizes(std::size_t n, const SplitRatios& ratios, SplitRounding rounding)
{
    auto floor_of = [n](double ratio) {
        // Guard against 0.7 * 20 landing just below 14.
        return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
    };

    SplitSizes s;
    if (rounding == SplitRounding::TrainRemainder)
    {
        s.valid = floor_of(ratios.valid);
        s.test = floor_of(ratios.test);
        if (n >= 3)
        {
            s.valid = std::max<std::size_t>(s.valid, 1);
            s.test = std::max<std::size_t>(s.test, 1);
        }
        s.train = n - s.valid - s.test;
    }
    else
    {
        s.train = floor_of(ratios.train);
        s.valid = floor_of(ratios.valid);
        if (n >= 3)
        {
            s.valid = std::max<std::size_t>(s.valid, 1);
            s.train = std::clamp<std::size_t>(s.train, 1, n - s.valid - 1);
        }
        s.test = n - s.train - s.valid;
    }
    return s;
}

SplitDataset stratified_split(const std::vector<ContractRecord>& records,
                              const SplitRatios& ratios, std::uint64_t seed,
                              SplitRounding rounding)
{
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
        std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
        throw UsageError("split ratios must be non-negative and sum to 1");

    std::array<std::vector<std::size_t>, kNumClasses> by_class;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_class[class_index(records[i].label)].push_back(i);

    SplitDataset out;
    out.seed = seed;
    out.ratios = ratios;
    Rng rng(seed);
    for (std::size_t c = 0; c < kNumClasses; ++c)
    {
        auto& idx = by_class[c];
        Rng class_rng = rng.fork();
        if (idx.empty())
            continue;
        if (idx.size() < 3)
            throw DataError("class " + std::string(label_name(label_from_index(c))) + " has only " +
                            std::to_string(idx.size()) + " records; at least 3 are needed");
        class_rng.shuffle(idx);
        const auto sizes = split_sizes(idx.size(), ratios, rounding);
        std::size_t pos = 0;
        for (std::size_t k = 0; k < sizes.train; ++k)
            out.train.push_back(records[idx[pos++]]);
        for (std::size_t k = 0; k < sizes.valid; ++k)
            out.valid.push_back(records[idx[pos++]]);
        for (std::size_t k = 0; k < sizes.test; ++k)
            out.test.push_back(records[idx[pos++]]);
    }
    return out;
}

void write_split_manifest(std::ostream& out, const SplitDataset& split)
{
    auto addresses = [](const std::vector<ContractRecord>& rs) {
        std::vector<std::string> a;
        a.reserve(rs.size());
        for (const auto& r : rs)
            a.push_back(r.address);
        return a;
    };
    json obj;
    obj["seed"] = split.seed;
    obj["ratios"] = {split.ratios.train, split.ratios.valid, split.ratios.test};
    obj["train"] = addresses(split.train);
    obj["valid"] = addresses(split.valid);
    obj["test"] = addresses(split.test);
    out << obj.dump(1) << '\n';
}

SplitDataset apply_split_manifest(std::istream& manifest,
                                  const std::vector<ContractRecord>& records)
{
    json obj;
    try
    {
        obj = json::parse(manifest);
    }
    catch (const json::exception& e)
    {
        throw DataError(std::string("invalid split manifest: ") + e.what());
    }

    std::unordered_map<std::string, std::size_t> by_address;
    for (std::size_t i = 0; i < records.size(); ++i)
        by_address.emplace(records[i].address, i);

    SplitDataset out;
    try
    {
        out.seed = obj.at("seed").get<std::uint64_t>();
        const auto& r = obj.at("ratios");
        out.ratios = {r.at(0).get<double>(), r.at(1).get<double>(), r.at(2).get<double>()};
        auto fill = [&](const char* key, std::vector<ContractRecord>& dst) {
            for (const auto& a : obj.at(key))
            {
                const auto it = by_address.find(a.get<std::string>());
                if (it == by_address.end())
                    throw DataError("split manifest references unknown address " +
                                    a.get<std::string>());
                dst.push_back(records[it->second]);
            }
        };
        fill("train", out.train);
        fill("valid", out.valid);
        fill("test", out.test);
    }
    catch (const json::exception& e)
    {
        throw DataError(std::string("invalid split manifest: ") + e.what());
    }
    return out;
}

Vocab::Vocab()
{
    for (std::size_t i = 0; i < kNumReserved; ++i)
    {
        itos_.push_back(kReservedTokens[i]);
        stoi_.emplace(kReservedTokens[i], static_cast<TokenId>(i));
    }
}

Vocab Vocab::build(const std::vector<ContractRecord>& train, std::size_t min_freq)
{
    if (train.empty())
        throw DataError("cannot build a vocabulary from an empty training split");

    std::map<std::string, std::size_t> freq;
    for (const auto& r : train)
        for (const auto& t : r.tokens)
            ++freq[t];

    std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(), freq.end());
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    Vocab v;
    for (const auto& [tok, count] : entries)
    {
        if (count < min_freq || v.stoi_.count(tok))
            continue;
        v.stoi_.emplace(tok, static_cast<TokenId>(v.itos_.size()));
        v.itos_.push_back(tok);
    }
    return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> itos)
{
    if (itos.size() < kNumReserved)
        throw DataError("vocabulary is missing the reserved entries");
    for (std::size_t i = 0; i < kNumReserved; ++i)
        if (itos[i] != kReservedTokens[i])
            throw DataError("vocabulary reserved id " + std::to_string(i) + " must be " +
                            kReservedTokens[i]);
    Vocab v;
    v.itos_ = std::move(itos);
    v.stoi_.clear();
    for (std::size_t i = 0; i < v.itos_.size(); ++i)
        if (!v.stoi_.emplace(v.itos_[i], static_cast<TokenId>(i)).second)
            throw DataError("duplicate vocabulary token " + v.itos_[i]);
    return v;
}

TokenId Vocab::id(std::string_view token) const
{
    const auto it = stoi_.find(std::string(token));
    return it == stoi_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const
{
    return stoi_.count(std::string(token)) > 0;
}

std::string Vocab::content_hash() const
{
    std::ostringstream tsv;
    save(tsv);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tsv.str())
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4)
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return out;
}

void Vocab::save(std::ostream& out) const
{
    for (std::size_t i = 0; i < itos_.size(); ++i)
        out << itos_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(std::istream& in)
{
    std::vector<std::string> itos;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line))
    {
        ++line_no;
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("vocab line " + std::to_string(line_no) + ": expected token<TAB>id");
        const std::string token = line.substr(0, tab);
        std::size_t id = 0;
        try
        {
            id = std::stoul(line.substr(tab + 1));
        }
        catch (const std::exception&)
        {
            throw DataError("vocab line " + std::to_string(line_no) + ": bad id");
        }
        if (id != itos.size())
            throw DataError("vocab line " + std::to_string(line_no) + ": ids must be contiguous");
        itos.push_back(token);
    }
    return from_tokens(std::move(itos));
}

std::vector<TokenId> numericalize(const std::vector<std::string>& tokens, const Vocab& vocab)
{
    std::vector<TokenId> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(Vocab::kBos);
    for (const auto& t : tokens)
        ids.push_back(vocab.id(t));
    return ids;
}

std::vector<Example> make_examples(const std::vector<ContractRecord>& records, const Vocab& vocab)
{
    std::vector<Example> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back({numericalize(r.tokens, vocab), class_index(r.label)});
    return out;
}

LmBatchStream::LmBatchStream(const std::vector<std::vector<TokenId>>& sequences,
                             std::size_t batch_size, std::size_t bptt)
    : batch_size_(batch_size), bptt_(bptt)
{
    if (batch_size == 0 || bptt == 0)
        throw UsageError("batch_size and bptt must be positive");
    std::size_t total = 0;
    for (const auto& s : sequences)
        total += s.size();
    if (total < batch_size * (bptt + 1))
        throw DataError("language-model stream has " + std::to_string(total) +
                        " tokens; need at least batch_size*(bptt+1) = " +
                        std::to_string(batch_size * (bptt + 1)));

    stream_len_ = total / batch_size;
    num_steps_ = (stream_len_ - 1) / bptt;
    data_.reserve(stream_len_ * batch_size);
    for (const auto& s : sequences)
        for (auto id : s)
        {
            if (data_.size() == stream_len_ * batch_size)
                break;
            data_.push_back(id);
        }
}

bool LmBatchStream::next(LmBatch& batch)
{
    if (step_ >= num_steps_)
        return false;
    batch.batch_size = batch_size_;
    batch.bptt = bptt_;
    batch.inputs.resize(batch_size_ * bptt_);
    batch.targets.resize(batch_size_ * bptt_);
    const std::size_t offset = step_ * bptt_;
    for (std::size_t b = 0; b < batch_size_; ++b)
    {
        const TokenId* row = data_.data() + b * stream_len_ + offset;
        for (std::size_t t = 0; t < bptt_; ++t)
        {
            batch.inputs[b * bptt_ + t] = row[t];
            batch.targets[b * bptt_ + t] = row[t + 1];
        }
    }
    ++step_;
    return true;
}

std::vector<ClfBatch> clf_batches(const std::vector<Example>& examples, std::size_t batch_size,
                                  std::size_t max_len, Rng* rng, Truncate truncate)
{
    if (batch_size == 0 || max_len == 0)
        throw UsageError("batch_size and max_len must be positive");

    auto clipped = [&](std::size_t i) { return std::min(examples[i].ids.size(), max_len); };

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    auto longer = [&](std::size_t a, std::size_t b) { return clipped(a) > clipped(b); };
    if (rng)
    {
        // Shuffle, then sort within chunks of 50 batches so that batches hold
        // similar lengths without a fixed order.
        rng->shuffle(order);
        const std::size_t chunk = batch_size * 50;
        for (std::size_t start = 0; start < order.size(); start += chunk)
        {
            const auto end = std::min(order.size(), start + chunk);
            std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end), longer);
        }
    }
    else
    {
        std::stable_sort(order.begin(), order.end(), longer);
    }

    std::vector<ClfBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size)
    {
        const auto end = std::min(order.size(), start + batch_size);
        ClfBatch b;
        b.batch_size = end - start;
        for (std::size_t k = start; k < end; ++k)
            b.width = std::max(b.width, clipped(order[k]));
        b.ids.assign(b.batch_size * b.width, Vocab::kPad);
        for (std::size_t k = start; k < end; ++k)
        {
            const auto& ex = examples[order[k]];
            const std::size_t len = clipped(order[k]);
            const std::size_t first =
                truncate == Truncate::KeepHead ? 0 : ex.ids.size() - len;
            const std::size_t row = k - start;
            std::copy_n(ex.ids.begin() + static_cast<std::ptrdiff_t>(first), len,
                        b.ids.begin() + static_cast<std::ptrdiff_t>(row * b.width));
            b.lengths.push_back(len);
            b.labels.push_back(ex.label);
            b.indices.push_back(order[k]);
        }
        batches.push_back(std::move(b));
    }
    if (rng)
        rng->shuffle(batches);
    return batches;
}

}  // namespace opsc
