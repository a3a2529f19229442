// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

// Command-line front end. Every subcommand takes --seed and --out; the
// output directory defaults to $OPSC_OUT_ROOT/<command> (or ./opsc-out).
// Exit codes: 0 ok, 2 usage, 3 data, 4 checkpoint, 5 numerical.

#include "opsc/checkpoint.hpp"
#include "opsc/config.hpp"
#include "opsc/error.hpp"
#include "opsc/evm_disasm.hpp"
#include "opsc/pipeline.hpp"
#include "opsc/synth.hpp"
#include "opsc/trainer.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace opsc;

namespace
{
enum Exit : int
{
    kOk = 0,
    kUsage = 2,
    kData = 3,
    kCheckpoint = 4,
    kNumerical = 5,
};

/// Options shared by every subcommand.
struct Common
{
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string config;
    std::string preset = "desk";
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--config", c.config, "Run config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--preset", c.preset, "Preset when no config is given")
        ->check(CLI::IsMember({"desk", "synth", "full", "paper"}));
}

fs::path out_dir(const Common& c, const std::string& command)
{
    if (!c.out.empty())
        return c.out;
    const char* root = std::getenv("OPSC_OUT_ROOT");
    return fs::path(root && *root ? root : "opsc-out") / command;
}

/// Config from --config, else from fallback (a prepared data dir's
/// config.json) when present, else the preset; --seed wins.
RunConfig effective_config(const Common& c, const fs::path& fallback = {})
{
    RunConfig rc;
    if (!c.config.empty())
        rc = RunConfig::load(c.config);
    else if (!fallback.empty() && fs::exists(fallback))
        rc = RunConfig::load(fallback);
    else
        rc = RunConfig::preset_config(c.preset);
    if (c.seed)
        rc.seed = *c.seed;
    return rc;
}

fs::path prepare_out(const fs::path& dir, const RunConfig& rc)
{
    fs::create_directories(dir);
    rc.save(dir / "config.json");
    return dir;
}

std::ofstream open_out(const fs::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw UsageError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const fs::path& path, const char* what)
{
    std::ifstream in(path);
    if (!in)
        throw DataError(std::string("cannot open ") + what + " " + path.string());
    return in;
}

Vocab load_vocab(const fs::path& path)
{
    auto in = open_in(path, "vocabulary");
    return Vocab::load(in);
}

/// A prepared data directory: corpus.jsonl, split.json, vocab.tsv.
struct DataDir
{
    SplitDataset split;
    Vocab vocab;
};

DataDir load_data(const fs::path& dir)
{
    auto corpus = open_in(dir / "corpus.jsonl", "prepared corpus");
    const auto records = ingest(corpus).records;
    auto manifest = open_in(dir / "split.json", "split manifest");
    return {apply_split_manifest(manifest, records), load_vocab(dir / "vocab.tsv")};
}

void write_split_files(const fs::path& dir, const pipeline::SplitWithVocab& sv)
{
    auto manifest = open_out(dir / "split.json");
    write_split_manifest(manifest, sv.split);
    auto vocab = open_out(dir / "vocab.tsv");
    sv.vocab.save(vocab);
}

std::vector<std::string> read_lines(const fs::path& path)
{
    auto in = open_in(path, "input");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
    {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!line.empty())
            lines.push_back(line);
    }
    return lines;
}

const std::vector<Example>& pick_split(const pipeline::Datasets& d, const std::string& name)
{
    if (name == "train")
        return d.train;
    if (name == "valid")
        return d.valid;
    return d.test;
}

// ---------------------------------------------------------------- commands

int cmd_disasm(const Common& c, const std::vector<std::string>& hex, const std::string& input,
               bool collapse_push, bool json)
{
    auto all = hex;
    if (!input.empty())
        for (auto& l : read_lines(input))
            all.push_back(std::move(l));
    if (all.empty())
        throw UsageError("disasm needs --hex or --input");
    evm::DisasmOptions opts;
    opts.collapse_push = collapse_push;
    auto rc = effective_config(c);
    rc.corpus.collapse_push = collapse_push;
    const auto dir = prepare_out(out_dir(c, "disasm"), rc);
    auto out = open_out(dir / "tokens.txt");
    for (const auto& h : all)
    {
        const auto seq = evm::disassemble(h, evm::load_opcode_table(), opts);
        std::string line;
        if (json)
            line = nlohmann::json{{"tokens", seq.tokens}, {"byte_len", seq.source_len_bytes}}.dump();
        else
            for (const auto& t : seq.tokens)
                line += (line.empty() ? "" : " ") + t;
        std::cout << line << '\n';
        out << line << '\n';
    }
    return kOk;
}

int cmd_synth(const Common& c, synth::SynthConfig sc)
{
    const auto rc = effective_config(c);
    sc.seed = rc.seed;
    const auto dir = prepare_out(out_dir(c, "synth"), rc);
    const auto records = synth::generate(sc);
    auto out = open_out(dir / "corpus.jsonl");
    synth::write_jsonl(out, records);
    std::cout << "wrote " << records.size() << " records to " << (dir / "corpus.jsonl").string()
              << '\n';
    return kOk;
}

int cmd_prep(const Common& c, const std::string& corpus)
{
    const auto rc = effective_config(c);
    const auto dir = prepare_out(out_dir(c, "prep"), rc);
    const auto prepared = pipeline::prepare(fs::path(corpus), rc.corpus);
    auto out = open_out(dir / "corpus.jsonl");
    write_corpus(out, prepared.records);
    const auto sv = pipeline::split_and_vocab(prepared.records, rc.corpus, rc.seed);
    write_split_files(dir, sv);
    auto summary = prepared.summary();
    summary["split"] = {{"train", sv.split.train.size()},
                        {"valid", sv.split.valid.size()},
                        {"test", sv.split.test.size()}};
    summary["vocab_size"] = sv.vocab.size();
    summary["vocab_hash"] = sv.vocab.content_hash();
    open_out(dir / "prep.json") << summary.dump(2) << '\n';
    std::cout << summary.dump(2) << '\n';
    return kOk;
}

int cmd_split(const Common& c, const std::string& data)
{
    const auto rc = effective_config(c, fs::path(data) / "config.json");
    const auto dir = prepare_out(out_dir(c, "split"), rc);
    auto in = open_in(fs::path(data) / "corpus.jsonl", "prepared corpus");
    const auto records = ingest(in).records;
    if (fs::path(data) != dir)
        fs::copy_file(fs::path(data) / "corpus.jsonl", dir / "corpus.jsonl",
                      fs::copy_options::overwrite_existing);
    const auto sv = pipeline::split_and_vocab(records, rc.corpus, rc.seed);
    write_split_files(dir, sv);
    std::cout << "train " << sv.split.train.size() << ", valid " << sv.split.valid.size()
              << ", test " << sv.split.test.size() << '\n';
    return kOk;
}

int cmd_lr_find(const Common& c, const std::string& data, const std::string& target,
                const std::string& lm_ckpt)
{
    const auto rc = effective_config(c, fs::path(data) / "config.json");
    const auto dir = prepare_out(out_dir(c, "lr-find"), rc);
    const auto d = load_data(data);
    const auto sets = pipeline::numericalize_split(d.split, d.vocab);
    const auto mcfg = pipeline::model_config(rc, d.vocab);
    Rng init(rc.seed);
    schedule::LrFinderResult res;
    if (target == "lm")
    {
        train::LanguageModel lm(mcfg, init);
        res = train::lr_find_lm(lm, sets.lm_train, rc.lm_config());
    }
    else
    {
        train::Classifier clf =
            lm_ckpt.empty()
                ? train::Classifier(mcfg, init)
                : model::transfer_encoder(
                      checkpoint::to_language_model(checkpoint::load(lm_ckpt), &d.vocab), mcfg,
                      init);
        res = train::lr_find_clf(clf, sets.train, rc.clf_config());
    }
    auto csv = open_out(dir / "lr_find.csv");
    csv << "lr,loss,smoothed_loss\n" << std::setprecision(10);
    for (const auto& p : res.points)
        csv << p.lr << ',' << p.loss << ',' << p.smoothed_loss << '\n';
    const nlohmann::json summary = {{"target", target},
                                    {"suggestion", res.suggestion},
                                    {"points", res.points.size()},
                                    {"diverged", res.diverged}};
    open_out(dir / "lr_find.json") << summary.dump(2) << '\n';
    std::cout << "suggested learning rate " << res.suggestion << '\n';
    return kOk;
}

int cmd_train_lm(const Common& c, const std::string& data)
{
    const auto rc = effective_config(c, fs::path(data) / "config.json");
    const auto dir = prepare_out(out_dir(c, "train-lm"), rc);
    const auto d = load_data(data);
    const auto sets = pipeline::numericalize_split(d.split, d.vocab);
    Rng init(rc.seed);
    train::LanguageModel lm(pipeline::model_config(rc, d.vocab), init);
    const auto res = train::train_lm(lm, sets.lm_train, sets.lm_valid, rc.lm_config(),
                                     {dir, &d.vocab, {{"seed", rc.seed}, {"preset", rc.preset}}});
    for (const auto& r : res.history)
        std::cout << r.to_json().dump() << '\n';
    return kOk;
}

int cmd_train_clf(const Common& c, const std::string& data, const std::string& lm_ckpt)
{
    const auto rc = effective_config(c, fs::path(data) / "config.json");
    const auto dir = prepare_out(out_dir(c, "train-clf"), rc);
    const auto d = load_data(data);
    const auto sets = pipeline::numericalize_split(d.split, d.vocab);
    const auto mcfg = pipeline::model_config(rc, d.vocab);
    Rng init(rc.seed);
    Rng head_init = init.fork();
    train::Classifier clf =
        lm_ckpt.empty()
            ? train::Classifier(mcfg, head_init)
            : model::transfer_encoder(
                  checkpoint::to_language_model(checkpoint::load(lm_ckpt), &d.vocab), mcfg,
                  head_init);
    const auto res = train::train_clf(clf, sets.train, sets.valid, rc.clf_config(),
                                      {dir, &d.vocab, {{"seed", rc.seed}, {"preset", rc.preset}}});
    for (const auto& r : res.history)
        std::cout << r.to_json().dump() << '\n';
    std::cout << "best validation F_beta " << res.best_fbeta << " at epoch " << res.best_epoch
              << '\n';
    return kOk;
}

int cmd_eval(const Common& c, const std::string& data, const std::string& ckpt,
             const std::string& split_name, const std::string& predictions)
{
    metrics::MetricsReport report;
    fs::path dir;
    if (!predictions.empty())
    {
        const auto rc = effective_config(c);
        dir = prepare_out(out_dir(c, "eval"), rc);
        auto in = open_in(predictions, "predictions");
        report = pipeline::report_from_predictions(pipeline::read_predictions(in));
    }
    else
    {
        if (data.empty() || ckpt.empty())
            throw UsageError("eval needs --data and --ckpt, or --predictions");
        const auto rc = effective_config(c, fs::path(data) / "config.json");
        dir = prepare_out(out_dir(c, "eval"), rc);
        const auto d = load_data(data);
        const auto sets = pipeline::numericalize_split(d.split, d.vocab);
        auto clf = checkpoint::to_classifier(checkpoint::load(ckpt), &d.vocab);
        report = pipeline::evaluate(clf, pick_split(sets, split_name), rc.clf_config());
    }
    pipeline::write_report(report, dir);
    std::cout << report.to_table();
    return kOk;
}

int cmd_predict(const Common& c, const std::string& ckpt_path, const std::string& vocab_path,
                const std::vector<std::string>& hex, const std::string& input)
{
    auto all = hex;
    if (!input.empty())
        for (auto& l : read_lines(input))
            all.push_back(std::move(l));
    if (all.empty())
        throw UsageError("predict needs --hex or --input");
    const auto rc = effective_config(c);
    const auto dir = prepare_out(out_dir(c, "predict"), rc);
    const auto ckpt = checkpoint::load(ckpt_path);
    std::optional<Vocab> expected;
    if (!vocab_path.empty())
        expected = load_vocab(vocab_path);
    auto clf = checkpoint::to_classifier(ckpt, expected ? &*expected : nullptr);
    const auto preds = pipeline::predict(clf, ckpt.vocab, all, rc.corpus, rc.clf_config());
    auto out = open_out(dir / "predictions.jsonl");
    for (const auto& p : preds)
    {
        const nlohmann::json j = {{"type", static_cast<int>(p.label())},
                                  {"name", std::string(label_name(p.label()))},
                                  {"probabilities", p.probabilities}};
        std::cout << j.dump() << '\n';
        out << j.dump() << '\n';
    }
    return kOk;
}

int cmd_run(const Common& c, const std::string& corpus, bool pretrain)
{
    const auto rc = effective_config(c);
    const auto dir = out_dir(c, "run");
    const auto prepared = pipeline::prepare(fs::path(corpus), rc.corpus);
    const auto res = pipeline::run(rc, prepared.records, dir, pretrain);
    std::cout << res.test_report.to_table();
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"opsc: opcode-sequence smart contract vulnerability classifier"};
    app.require_subcommand(1);

    Common common;
    std::vector<std::string> hex;
    std::string input, corpus, data, lm_ckpt, ckpt, vocab, predictions;
    std::string target = "clf", split_name = "test";
    bool collapse_push = false, json = false, no_pretrain = false;
    synth::SynthConfig sc;

    auto* disasm = app.add_subcommand("disasm", "Decode bytecode hex into opcode tokens");
    add_common(disasm, common);
    disasm->add_option("--hex", hex, "Bytecode hex strings");
    disasm->add_option("hexfile,--input", input, "File with one bytecode hex per line");
    disasm->add_flag("--collapse-push", collapse_push, "Map PUSH1..PUSH32 to PUSH");
    disasm->add_flag("--json", json, "Emit {\"tokens\": [...], \"byte_len\": N} per input");

    auto* synth_cmd = app.add_subcommand("synth", "Generate a labeled synthetic corpus");
    add_common(synth_cmd, common);
    synth_cmd->add_option("--per-class", sc.per_class, "Contracts per class");
    synth_cmd->add_option("--mean-len", sc.mean_len, "Mean opcode count");
    synth_cmd->add_option("--len-jitter", sc.len_jitter, "Length half-range");
    synth_cmd->add_option("--motif-copies", sc.motif_copies, "Motif occurrences per contract");
    synth_cmd->add_option("--duplicate-normals", sc.duplicate_normals,
                          "Extra Normal records duplicating earlier ones");

    auto* prep = app.add_subcommand("prep", "Ingest, deduplicate, split and build the vocabulary");
    add_common(prep, common);
    prep->add_option("--corpus", corpus, "Corpus JSONL")->required();

    auto* split = app.add_subcommand("split", "Re-split a prepared corpus");
    add_common(split, common);
    split->add_option("--data", data, "Prepared data directory")->required();

    auto* lr = app.add_subcommand("lr-find", "Learning-rate range test");
    add_common(lr, common);
    lr->add_option("--data", data, "Prepared data directory")->required();
    lr->add_option("--target", target, "lm or clf")->check(CLI::IsMember({"lm", "clf"}));
    lr->add_option("--lm", lm_ckpt, "Language-model checkpoint for the classifier encoder");

    auto* tlm = app.add_subcommand("train-lm", "Pretrain the language model");
    add_common(tlm, common);
    tlm->add_option("--data", data, "Prepared data directory")->required();

    auto* tclf = app.add_subcommand("train-clf", "Fine-tune the classifier");
    add_common(tclf, common);
    tclf->add_option("--data", data, "Prepared data directory")->required();
    tclf->add_option("--lm", lm_ckpt, "Language-model checkpoint (omit for a random encoder)");

    auto* eval = app.add_subcommand("eval", "Metrics report for a checkpoint or predictions file");
    add_common(eval, common);
    eval->add_option("--data", data, "Prepared data directory");
    eval->add_option("--ckpt", ckpt, "Classifier checkpoint");
    eval->add_option("--split", split_name, "train, valid or test")
        ->check(CLI::IsMember({"train", "valid", "test"}));
    eval->add_option("--predictions", predictions, "CSV of actual,predicted[,p1..p4]");

    auto* pred = app.add_subcommand("predict", "Classify raw bytecode");
    add_common(pred, common);
    pred->add_option("--ckpt", ckpt, "Classifier checkpoint")->required();
    pred->add_option("--vocab", vocab, "Vocabulary file to verify against the checkpoint");
    pred->add_option("--hex", hex, "Bytecode hex strings");
    pred->add_option("--input", input, "File with one bytecode hex per line");

    auto* run = app.add_subcommand("run", "Prepare, pretrain, fine-tune and evaluate in one go");
    add_common(run, common);
    run->add_option("--corpus", corpus, "Corpus JSONL")->required();
    run->add_flag("--no-pretrain", no_pretrain, "Start the classifier from a random encoder");

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e)
    {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try
    {
        if (*disasm)
            return cmd_disasm(common, hex, input, collapse_push, json);
        if (*synth_cmd)
            return cmd_synth(common, sc);
        if (*prep)
            return cmd_prep(common, corpus);
        if (*split)
            return cmd_split(common, data);
        if (*lr)
            return cmd_lr_find(common, data, target, lm_ckpt);
        if (*tlm)
            return cmd_train_lm(common, data);
        if (*tclf)
            return cmd_train_clf(common, data, lm_ckpt);
        if (*eval)
            return cmd_eval(common, data, ckpt, split_name, predictions);
        if (*pred)
            return cmd_predict(common, ckpt, vocab, hex, input);
        if (*run)
            return cmd_run(common, corpus, !no_pretrain);
    }
    catch (const UsageError& e)
    {
        std::cerr << "opsc: " << e.what() << '\n';
        return kUsage;
    }
    catch (const DataError& e)
    {
        std::cerr << "opsc: data error: " << e.what() << '\n';
        return kData;
    }
    catch (const CheckpointError& e)
    {
        std::cerr << "opsc: checkpoint error: " << e.what() << '\n';
        return kCheckpoint;
    }
    catch (const NumericalError& e)
    {
        std::cerr << "opsc: numerical error: " << e.what() << '\n';
        return kNumerical;
    }
    catch (const fs::filesystem_error& e)
    {
        std::cerr << "opsc: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
