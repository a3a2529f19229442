// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/pipeline.hpp"

#include "opsc/error.hpp"
#include "opsc/evm_disasm.hpp"

#include <fstream>
#include <sstream>

namespace opsc::pipeline
{
namespace
{
std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw UsageError("cannot write " + path.string());
    return out;
}

void split_fields(const std::string& line, std::vector<std::string>& fields)
{
    fields.clear();
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ','))
        fields.push_back(f);
}

std::size_t parse_type(const std::string& field, std::size_t line_no)
{
    std::size_t used = 0;
    int v = 0;
    try
    {
        v = std::stoi(field, &used);
    }
    catch (const std::exception&)
    {
        used = 0;
    }
    if (used != field.size() || v < 1 || v > static_cast<int>(kNumClasses))
        throw DataError("predictions line " + std::to_string(line_no) + ": '" + field +
                        "' is not a class type 1.." + std::to_string(kNumClasses));
    return static_cast<std::size_t>(v - 1);
}

}  // namespace

nlohmann::json Prepared::summary() const
{
    nlohmann::json per = nlohmann::json::object();
    std::array<std::size_t, kNumClasses> kept{};
    for (const auto& r : records)
        ++kept[class_index(r.label)];
    for (std::size_t k = 0; k < kNumClasses; ++k)
        per[std::string(label_name(label_from_index(k)))] = {{"ingested", stats.per_label[k]},
                                                             {"kept", kept[k]}};
    return {{"records", records.size()},
            {"duplicates_removed", duplicates_removed},
            {"skipped_composite", stats.skipped_composite},
            {"skipped_empty", stats.skipped_empty},
            {"per_class", per}};
}

Prepared prepare(std::istream& corpus, const CorpusConfig& config)
{
    evm::DisasmOptions disasm;
    disasm.collapse_push = config.collapse_push;
    auto ingested = ingest(corpus, disasm);
    Prepared p;
    p.stats = ingested.stats;
    p.records = dedup_normals(ingested.records);
    p.duplicates_removed = ingested.records.size() - p.records.size();
    return p;
}

Prepared prepare(const std::filesystem::path& corpus, const CorpusConfig& config)
{
    std::ifstream in(corpus);
    if (!in)
        throw DataError("cannot open corpus " + corpus.string());
    return prepare(in, config);
}

SplitWithVocab split_and_vocab(const std::vector<ContractRecord>& records,
                               const CorpusConfig& config, std::uint64_t seed)
{
    auto split = stratified_split(records, config.ratios, seed, config.rounding);
    auto vocab = Vocab::build(split.train, config.min_freq);
    return {std::move(split), std::move(vocab)};
}

Datasets numericalize_split(const SplitDataset& split, const Vocab& vocab)
{
    Datasets d;
    d.train = make_examples(split.train, vocab);
    d.valid = make_examples(split.valid, vocab);
    d.test = make_examples(split.test, vocab);
    for (const auto& e : d.train)
        d.lm_train.push_back(e.ids);
    for (const auto& e : d.valid)
        d.lm_valid.push_back(e.ids);
    return d;
}

model::ModelConfig model_config(const RunConfig& config, const Vocab& vocab)
{
    auto m = config.model;
    m.vocab_size = vocab.size();
    m.n_classes = kNumClasses;
    m.validate();
    return m;
}

metrics::MetricsReport evaluate(train::Classifier& clf, const std::vector<Example>& examples,
                                const train::ClfTrainConfig& config)
{
    if (examples.empty())
        throw DataError("cannot evaluate on an empty split");
    const auto ev =
        train::evaluate_clf(clf, examples, config.batch_size, config.max_len, config.truncate);
    const auto n = clf.config().n_classes;
    return metrics::report(metrics::confusion(ev.predicted, ev.actual, n), ev.probabilities,
                           ev.actual);
}

void write_report(const metrics::MetricsReport& report, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    auto json = open_out(dir / "metrics.json");
    json << report.to_json().dump(2) << '\n';
    auto cm = open_out(dir / "confusion.csv");
    report.cm.write_csv(cm);
    auto roc = open_out(dir / "roc.csv");
    report.write_roc_csv(roc);
}

std::vector<Prediction> predict(train::Classifier& clf, const Vocab& vocab,
                                const std::vector<std::string>& bytecodes,
                                const CorpusConfig& corpus, const train::ClfTrainConfig& config)
{
    evm::DisasmOptions disasm;
    disasm.collapse_push = corpus.collapse_push;
    std::vector<Example> examples;
    for (const auto& hex : bytecodes)
        examples.push_back(
            {numericalize(evm::disassemble(hex, evm::load_opcode_table(), disasm).tokens, vocab),
             0});
    if (examples.empty())
        return {};
    const auto ev =
        train::evaluate_clf(clf, examples, config.batch_size, config.max_len, config.truncate);
    const auto k = clf.config().n_classes;
    if (k != kNumClasses)
        throw CheckpointError("classifier has " + std::to_string(k) + " classes, expected " +
                              std::to_string(kNumClasses));
    std::vector<Prediction> out(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i)
    {
        out[i].class_index = ev.predicted[i];
        for (std::size_t c = 0; c < k; ++c)
            out[i].probabilities[c] = ev.probabilities[i * k + c];
    }
    return out;
}

PredictionTable read_predictions(std::istream& in)
{
    PredictionTable t;
    std::string line;
    std::vector<std::string> fields;
    std::size_t line_no = 0;
    bool all_scored = true;
    while (std::getline(in, line))
    {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        split_fields(line, fields);
        if (line_no == 1 && fields[0] == "actual")
            continue;
        if (fields.size() != 2 && fields.size() != 2 + kNumClasses)
            throw DataError("predictions line " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected 2 or " +
                            std::to_string(2 + kNumClasses));
        t.actual.push_back(parse_type(fields[0], line_no));
        t.predicted.push_back(parse_type(fields[1], line_no));
        if (fields.size() == 2)
        {
            all_scored = false;
            continue;
        }
        for (std::size_t c = 0; c < kNumClasses; ++c)
        {
            try
            {
                t.scores.push_back(std::stod(fields[2 + c]));
            }
            catch (const std::exception&)
            {
                throw DataError("predictions line " + std::to_string(line_no) +
                                ": bad probability '" + fields[2 + c] + "'");
            }
        }
    }
    if (t.actual.empty())
        throw DataError("predictions file has no rows");
    if (!all_scored)
        t.scores.clear();
    return t;
}

metrics::MetricsReport report_from_predictions(const PredictionTable& table)
{
    return metrics::report(metrics::confusion(table.predicted, table.actual, kNumClasses),
                           table.scores, table.actual);
}

RunResult run(const RunConfig& config, const std::vector<ContractRecord>& records,
              const std::filesystem::path& out, bool pretrain)
{
    const auto [split, vocab] = split_and_vocab(records, config.corpus, config.seed);
    const auto data = numericalize_split(split, vocab);
    const auto mcfg = model_config(config, vocab);
    const bool write = !out.empty();
    if (write)
    {
        std::filesystem::create_directories(out);
        config.save(out / "config.json");
        auto manifest = open_out(out / "split.json");
        write_split_manifest(manifest, split);
        auto v = open_out(out / "vocab.tsv");
        vocab.save(v);
    }
    const nlohmann::json meta = {{"seed", config.seed}, {"preset", config.preset}};

    RunResult result;
    Rng init(config.seed);
    Rng head_init = init.fork();
    if (pretrain)
    {
        train::LanguageModel lm(mcfg, init);
        train::RunOutput lm_out{write ? out / "lm" : std::filesystem::path{}, &vocab, meta};
        result.lm = train::train_lm(lm, data.lm_train, data.lm_valid, config.lm_config(), lm_out);
    }
    train::Classifier clf = pretrain ? model::transfer_encoder(result.lm->best, mcfg, head_init)
                                     : train::Classifier(mcfg, head_init);
    const auto ccfg = config.clf_config();
    train::RunOutput clf_out{write ? out / "clf" : std::filesystem::path{}, &vocab, meta};
    result.clf = train::train_clf(clf, data.train, data.valid, ccfg, clf_out);
    result.train_report = evaluate(result.clf.best, data.train, ccfg);
    result.test_report = evaluate(result.clf.best, data.test, ccfg);
    if (write)
        write_report(result.test_report, out / "eval");
    return result;
}

}  // namespace opsc::pipeline
