// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

// Python bindings. Structured results cross the boundary as JSON text; the
// opsc package decodes them.

#include "opsc/checkpoint.hpp"
#include "opsc/config.hpp"
#include "opsc/error.hpp"
#include "opsc/evm_disasm.hpp"
#include "opsc/metrics.hpp"
#include "opsc/pipeline.hpp"
#include "opsc/schedule.hpp"
#include "opsc/synth.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

namespace py = pybind11;
using namespace opsc;

namespace
{
struct LoadedClassifier
{
    train::Classifier model;
    Vocab vocab;
    RunConfig config;
};

LoadedClassifier load_classifier(const std::string& path, const std::string& vocab_path)
{
    const auto ckpt = checkpoint::load(path);
    std::optional<Vocab> expected;
    if (!vocab_path.empty())
    {
        std::ifstream in(vocab_path);
        if (!in)
            throw DataError("cannot open vocabulary " + vocab_path);
        expected = Vocab::load(in);
    }
    return {checkpoint::to_classifier(ckpt, expected ? &*expected : nullptr), ckpt.vocab, {}};
}

std::string run_json(const std::string& corpus, const std::string& config_json,
                     const std::string& out, bool pretrain)
{
    const auto config = RunConfig::from_json(nlohmann::json::parse(config_json));
    const auto prepared = pipeline::prepare(std::filesystem::path(corpus), config.corpus);
    const auto res = pipeline::run(config, prepared.records, out, pretrain);
    nlohmann::json j = {{"train", res.train_report.to_json()},
                        {"test", res.test_report.to_json()},
                        {"best_epoch", res.clf.best_epoch},
                        {"best_fbeta", res.clf.best_fbeta},
                        {"epochs", res.clf.history.size()}};
    j["epochs_to_target"] = res.clf.epochs_to_target ? nlohmann::json(*res.clf.epochs_to_target)
                                                     : nlohmann::json(nullptr);
    return j.dump();
}

}  // namespace

PYBIND11_MODULE(_opsc, m)
{
    m.doc() = "opcode-sequence smart contract classifier";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<UsageError>(m, "UsageError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<CheckpointError>(m, "CheckpointError", base.ptr());
    py::register_exception<NumericalError>(m, "NumericalError", base.ptr());

    m.attr("NUM_CLASSES") = kNumClasses;

    m.def(
        "disassemble",
        [](const std::string& hex, bool collapse_push) {
            evm::DisasmOptions o;
            o.collapse_push = collapse_push;
            return evm::disassemble(hex, evm::load_opcode_table(), o).tokens;
        },
        py::arg("hex"), py::arg("collapse_push") = false);

    m.def(
        "confusion_report_json",
        [](const std::vector<std::vector<std::uint64_t>>& rows, double beta) {
            return metrics::report(metrics::ConfusionMatrix::from_rows(rows), {}, {}, beta)
                .to_json()
                .dump();
        },
        py::arg("rows"), py::arg("beta") = 1.0);

    m.def(
        "report_json",
        [](const std::vector<std::size_t>& actual, const std::vector<std::size_t>& predicted,
           const std::vector<double>& scores, double beta) {
            const auto cm = metrics::confusion(predicted, actual, kNumClasses);
            return metrics::report(cm, scores, scores.empty() ? std::span<const std::size_t>{}
                                                              : std::span(actual),
                                   beta)
                .to_json()
                .dump();
        },
        py::arg("actual"), py::arg("predicted"), py::arg("scores") = std::vector<double>{},
        py::arg("beta") = 1.0);

    m.def(
        "roc_auc",
        [](const std::vector<double>& scores, const std::vector<std::size_t>& labels,
           std::size_t k) { return metrics::roc_curve(scores, labels, k).auc; },
        py::arg("scores"), py::arg("labels"), py::arg("k"));

    m.def(
        "one_cycle_lr",
        [](std::size_t step, double max_lr, std::size_t total_steps) {
            return schedule::one_cycle_lr(step, {max_lr, total_steps});
        },
        py::arg("step"), py::arg("max_lr"), py::arg("total_steps"));

    m.def("discriminative_lrs", &schedule::discriminative_lrs, py::arg("n_groups"),
          py::arg("lr_lo") = 0.0044, py::arg("lr_hi") = 0.04);

    m.def(
        "synth_corpus",
        [](std::size_t per_class, std::size_t mean_len, std::size_t len_jitter,
           std::size_t duplicate_normals, std::uint64_t seed) {
            synth::SynthConfig c;
            c.per_class = per_class;
            c.mean_len = mean_len;
            c.len_jitter = len_jitter;
            c.duplicate_normals = duplicate_normals;
            c.seed = seed;
            std::ostringstream out;
            synth::write_jsonl(out, synth::generate(c));
            return out.str();
        },
        py::arg("per_class") = 50, py::arg("mean_len") = 120, py::arg("len_jitter") = 40,
        py::arg("duplicate_normals") = 0, py::arg("seed") = 0);

    m.def(
        "preset_json",
        [](const std::string& name) { return RunConfig::preset_config(name).to_json().dump(); },
        py::arg("name"));

    m.def("run_json", &run_json, py::arg("corpus"), py::arg("config_json") = "{}",
          py::arg("out") = "", py::arg("pretrain") = true,
          py::call_guard<py::gil_scoped_release>());

    py::class_<LoadedClassifier>(m, "Classifier")
        .def(py::init(&load_classifier), py::arg("checkpoint"), py::arg("vocab") = "")
        .def_property_readonly("vocab_size",
                               [](const LoadedClassifier& c) { return c.vocab.size(); })
        .def_property_readonly("vocab_hash",
                               [](const LoadedClassifier& c) { return c.vocab.content_hash(); })
        .def(
            "predict",
            [](LoadedClassifier& c, const std::vector<std::string>& bytecodes) {
                const auto preds =
                    pipeline::predict(c.model, c.vocab, bytecodes, c.config.corpus, c.config.clf);
                std::vector<std::pair<int, std::vector<double>>> out;
                for (const auto& p : preds)
                    out.emplace_back(static_cast<int>(p.label()),
                                     std::vector<double>(p.probabilities.begin(),
                                                         p.probabilities.end()));
                return out;
            },
            py::arg("bytecodes"));
}
