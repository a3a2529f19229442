// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/config.hpp"

#include "opsc/error.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace opsc
{
namespace
{
using Setter = std::function<void(const nlohmann::json&)>;

template <typename T>
Setter field(T& target)
{
    return [&target](const nlohmann::json& v) { target = v.get<T>(); };
}

/// Apply an object of overrides, rejecting keys without a setter.
void apply(const nlohmann::json& j, const std::string& section,
           const std::map<std::string, Setter>& setters)
{
    if (!j.is_object())
        throw UsageError("config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items())
    {
        const std::string path = section.empty() ? key : section + "." + key;
        auto it = setters.find(key);
        if (it == setters.end())
            throw UsageError("unknown config key '" + path + "'");
        try
        {
            it->second(value);
        }
        catch (const nlohmann::json::exception& e)
        {
            throw UsageError("bad value for config key '" + path + "': " + e.what());
        }
    }
}

Setter optimizer_field(train::OptimizerKind& target)
{
    return [&target](const nlohmann::json& v) {
        const auto s = v.get<std::string>();
        if (s == "adam")
            target = train::OptimizerKind::Adam;
        else if (s == "asgd")
            target = train::OptimizerKind::AveragedSgd;
        else
            throw UsageError("optimizer must be \"adam\" or \"asgd\", got \"" + s + "\"");
    };
}

Setter truncate_field(Truncate& target)
{
    return [&target](const nlohmann::json& v) {
        const auto s = v.get<std::string>();
        if (s == "head")
            target = Truncate::KeepHead;
        else if (s == "tail")
            target = Truncate::KeepTail;
        else
            throw UsageError("truncate must be \"head\" or \"tail\", got \"" + s + "\"");
    };
}

Setter rounding_field(SplitRounding& target)
{
    return [&target](const nlohmann::json& v) {
        const auto s = v.get<std::string>();
        if (s == "train_remainder")
            target = SplitRounding::TrainRemainder;
        else if (s == "test_remainder")
            target = SplitRounding::TestRemainder;
        else
            throw UsageError("split_rounding must be \"train_remainder\" or \"test_remainder\"");
    };
}

Setter ratios_field(SplitRatios& target)
{
    return [&target](const nlohmann::json& v) {
        const auto r = v.get<std::vector<double>>();
        if (r.size() != 3)
            throw UsageError("ratios must list train, valid and test fractions");
        target = {r[0], r[1], r[2]};
    };
}

void add_cycle(std::map<std::string, Setter>& s, train::CycleConfig& c)
{
    s["warmup_fraction"] = field(c.warmup_fraction);
    s["start_div"] = field(c.start_div);
    s["final_div"] = field(c.final_div);
}

nlohmann::json cycle_json(const train::CycleConfig& c)
{
    return {{"warmup_fraction", c.warmup_fraction},
            {"start_div", c.start_div},
            {"final_div", c.final_div}};
}

}  // namespace

RunConfig RunConfig::preset_config(const std::string& name)
{
    RunConfig c;
    c.preset = name;
    if (name == "desk")
        return c;
    if (name == "synth")
    {
        // Desk dims without regularization: the planted-motif corpus has
        // only 140 training contracts, too few for the desk dropout rates.
        c.model.p_emb = c.model.p_input = c.model.p_hidden = c.model.p_weight = 0.0;
        c.model.p_head = 0.0;
        c.lm.epochs = 30;
        c.clf.epochs = 50;
        return c;
    }
    if (name == "full" || name == "paper")
    {
        c.model.emb_size = 400;
        c.model.hidden_size = 1150;
        if (name == "paper")
            c.clf.epochs = 132;
        return c;
    }
    throw UsageError("unknown preset '" + name + "' (expected desk, synth, full or paper)");
}

RunConfig RunConfig::from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw UsageError("run config must be a JSON object");
    RunConfig c = preset_config(j.value("preset", std::string("desk")));

    std::map<std::string, Setter> top;
    top["preset"] = [](const nlohmann::json&) {};
    top["seed"] = field(c.seed);
    top["corpus"] = [&c](const nlohmann::json& v) {
        apply(v, "corpus",
              {{"min_freq", field(c.corpus.min_freq)},
               {"collapse_push", field(c.corpus.collapse_push)},
               {"ratios", ratios_field(c.corpus.ratios)},
               {"split_rounding", rounding_field(c.corpus.rounding)}});
    };
    top["model"] = [&c](const nlohmann::json& v) {
        auto& m = c.model;
        apply(v, "model",
              {{"emb_size", field(m.emb_size)},
               {"hidden_size", field(m.hidden_size)},
               {"n_layers", field(m.n_layers)},
               {"tie_weights", field(m.tie_weights)},
               {"p_emb", field(m.p_emb)},
               {"p_input", field(m.p_input)},
               {"p_hidden", field(m.p_hidden)},
               {"p_weight", field(m.p_weight)},
               {"head_hidden", field(m.head_hidden)},
               {"p_head", field(m.p_head)},
               {"ar_alpha", field(m.ar_alpha)},
               {"tar_beta", field(m.tar_beta)}});
    };
    top["lm"] = [&c](const nlohmann::json& v) {
        auto& l = c.lm;
        std::map<std::string, Setter> s = {{"epochs", field(l.epochs)},
                                           {"batch_size", field(l.batch_size)},
                                           {"bptt", field(l.bptt)},
                                           {"max_lr", field(l.max_lr)},
                                           {"weight_decay", field(l.weight_decay)},
                                           {"clip_norm", field(l.clip_norm)},
                                           {"optimizer", optimizer_field(l.optimizer)}};
        add_cycle(s, l.cycle);
        apply(v, "lm", s);
    };
    top["clf"] = [&c](const nlohmann::json& v) {
        auto& k = c.clf;
        std::map<std::string, Setter> s = {{"epochs", field(k.epochs)},
                                           {"batch_size", field(k.batch_size)},
                                           {"max_len", field(k.max_len)},
                                           {"truncate", truncate_field(k.truncate)},
                                           {"lr_lo", field(k.lr_lo)},
                                           {"lr_hi", field(k.lr_hi)},
                                           {"weight_decay", field(k.weight_decay)},
                                           {"clip_norm", field(k.clip_norm)},
                                           {"gradual_unfreeze", field(k.gradual_unfreeze)},
                                           {"epochs_per_stage", field(k.epochs_per_stage)},
                                           {"target_fbeta", field(k.target_fbeta)},
                                           {"stop_at_target", field(k.stop_at_target)}};
        add_cycle(s, k.cycle);
        apply(v, "clf", s);
    };
    apply(j, "", top);
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw UsageError("cannot open config " + path.string());
    nlohmann::json j;
    try
    {
        j = nlohmann::json::parse(in);
    }
    catch (const nlohmann::json::exception& e)
    {
        throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const
{
    const auto& m = model;
    nlohmann::json lm_j = {{"epochs", lm.epochs},
                           {"batch_size", lm.batch_size},
                           {"bptt", lm.bptt},
                           {"max_lr", lm.max_lr},
                           {"weight_decay", lm.weight_decay},
                           {"clip_norm", lm.clip_norm},
                           {"optimizer",
                            lm.optimizer == train::OptimizerKind::Adam ? "adam" : "asgd"}};
    lm_j.update(cycle_json(lm.cycle));
    nlohmann::json clf_j = {{"epochs", clf.epochs},
                            {"batch_size", clf.batch_size},
                            {"max_len", clf.max_len},
                            {"truncate", clf.truncate == Truncate::KeepHead ? "head" : "tail"},
                            {"lr_lo", clf.lr_lo},
                            {"lr_hi", clf.lr_hi},
                            {"weight_decay", clf.weight_decay},
                            {"clip_norm", clf.clip_norm},
                            {"gradual_unfreeze", clf.gradual_unfreeze},
                            {"epochs_per_stage", clf.epochs_per_stage},
                            {"target_fbeta", clf.target_fbeta},
                            {"stop_at_target", clf.stop_at_target}};
    clf_j.update(cycle_json(clf.cycle));
    return {{"preset", preset},
            {"seed", seed},
            {"corpus",
             {{"min_freq", corpus.min_freq},
              {"collapse_push", corpus.collapse_push},
              {"ratios", {corpus.ratios.train, corpus.ratios.valid, corpus.ratios.test}},
              {"split_rounding", corpus.rounding == SplitRounding::TrainRemainder
                                     ? "train_remainder"
                                     : "test_remainder"}}},
            {"model",
             {{"emb_size", m.emb_size},
              {"hidden_size", m.hidden_size},
              {"n_layers", m.n_layers},
              {"tie_weights", m.tie_weights},
              {"p_emb", m.p_emb},
              {"p_input", m.p_input},
              {"p_hidden", m.p_hidden},
              {"p_weight", m.p_weight},
              {"head_hidden", m.head_hidden},
              {"p_head", m.p_head},
              {"ar_alpha", m.ar_alpha},
              {"tar_beta", m.tar_beta}}},
            {"lm", lm_j},
            {"clf", clf_j}};
}

void RunConfig::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw UsageError("cannot write config " + path.string());
    out << to_json().dump(2) << '\n';
}

train::LmTrainConfig RunConfig::lm_config() const
{
    auto c = lm;
    c.seed = seed;
    return c;
}

train::ClfTrainConfig RunConfig::clf_config() const
{
    auto c = clf;
    c.seed = seed + 1;
    return c;
}

}  // namespace opsc
