// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/trainer.hpp"

#include "opsc/checkpoint.hpp"
#include "opsc/error.hpp"
#include "opsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace opsc::train
{
namespace
{
using ParamList = std::vector<ad::Parameter<float>*>;

void zero_grads(const ParamList& params)
{
    for (auto* p : params)
    {
        if (p->grad.same_shape(p->value))
            p->grad.fill(0.0f);
        else
            p->zero_grad();
    }
}

std::vector<ad::Tensor<float>> snapshot(const ParamList& params)
{
    std::vector<ad::Tensor<float>> out;
    for (auto* p : params)
        out.push_back(p->value);
    return out;
}

void restore(const ParamList& params, const std::vector<ad::Tensor<float>>& values)
{
    for (std::size_t i = 0; i < params.size(); ++i)
    {
        params[i]->value = values[i];
        params[i]->zero_grad();
    }
}

void check_finite_loss(double loss, const std::string& where)
{
    if (!std::isfinite(loss))
        throw NumericalError("non-finite training loss " + where +
                             "; the last good checkpoint is kept");
}

schedule::OneCycleSchedule cycle(const CycleConfig& c, double max_lr, std::size_t total)
{
    schedule::OneCycleSchedule s;
    s.max_lr = max_lr;
    s.total_steps = total;
    s.warmup_fraction = c.warmup_fraction;
    s.start_div = c.start_div;
    s.final_div = c.final_div;
    return s;
}

std::vector<double> scheduled_lrs(const std::vector<double>& group_max, const CycleConfig& c,
                                  std::size_t step, std::size_t total)
{
    std::vector<double> lrs;
    lrs.reserve(group_max.size());
    for (double m : group_max)
        lrs.push_back(schedule::one_cycle_lr(step, cycle(c, m, total)));
    return lrs;
}

/// Writes history lines and best checkpoints when an output dir is set.
class Recorder
{
public:
    Recorder(const RunOutput& out, const char* checkpoint_name, bool fbeta_csv) : out_(out)
    {
        if (out_.dir.empty())
            return;
        std::filesystem::create_directories(out_.dir);
        history_.open(out_.dir / "history.jsonl", std::ios::trunc);
        if (fbeta_csv)
        {
            fbeta_.open(out_.dir / "fbeta.csv", std::ios::trunc);
            fbeta_ << "epoch,fbeta\n";
        }
        checkpoint_ = out_.dir / checkpoint_name;
    }

    void epoch(const EpochRecord& r)
    {
        if (history_.is_open())
            history_ << r.to_json().dump() << '\n' << std::flush;
        if (fbeta_.is_open() && r.valid_fbeta)
            fbeta_ << r.epoch << ',' << *r.valid_fbeta << '\n' << std::flush;
    }

    template <typename Model>
    void best(const Model& m, nlohmann::json extra)
    {
        if (checkpoint_.empty() || !out_.vocab)
            return;
        auto meta = out_.metadata;
        meta.update(extra);
        checkpoint::save(checkpoint_, checkpoint::from_model(m, *out_.vocab, meta));
    }

private:
    const RunOutput& out_;
    std::ofstream history_;
    std::ofstream fbeta_;
    std::filesystem::path checkpoint_;
};

template <typename Fn>
void for_each_shuffled_stream(const std::vector<std::vector<TokenId>>& seqs, Rng& rng,
                              std::size_t batch_size, std::size_t bptt, Fn&& fn)
{
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::vector<TokenId>> shuffled;
    shuffled.reserve(seqs.size());
    for (auto i : order)
        shuffled.push_back(seqs[i]);
    LmBatchStream stream(shuffled, batch_size, bptt);
    fn(stream);
}

std::size_t total_tokens(const std::vector<std::vector<TokenId>>& seqs)
{
    std::size_t n = 0;
    for (const auto& s : seqs)
        n += s.size();
    return n;
}

}  // namespace

nlohmann::json EpochRecord::to_json() const
{
    const auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"epoch", epoch},
            {"stage", stage},
            {"train_loss", train_loss},
            {"valid_loss", opt(valid_loss)},
            {"valid_fbeta", opt(valid_fbeta)},
            {"valid_accuracy", opt(valid_accuracy)}};
}

void gradual_unfreeze(const ParamList& params, std::size_t n_groups, std::size_t stage)
{
    if (n_groups == 0 || stage >= n_groups)
        throw UsageError("unfreeze stage " + std::to_string(stage) + " outside 0.." +
                         std::to_string(n_groups == 0 ? 0 : n_groups - 1));
    const std::size_t first_trainable = n_groups - 1 - stage;
    for (auto* p : params)
    {
        const bool trainable = p->layer_group >= first_trainable;
        if (p->frozen && trainable)
            p->zero_grad();
        p->frozen = !trainable;
    }
}

void gradual_unfreeze(Classifier& clf, std::size_t stage)
{
    gradual_unfreeze(clf.parameters(), clf.config().n_layer_groups(), stage);
}

std::size_t max_unfreeze_stage(const model::ModelConfig& config)
{
    return config.n_layer_groups() - 1;
}

double clip_grad_norm(const ParamList& params, double max_norm)
{
    double sq = 0.0;
    for (auto* p : params)
        if (!p->frozen)
            for (std::size_t i = 0; i < p->grad.size(); ++i)
                sq += static_cast<double>(p->grad[i]) * p->grad[i];
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm)
    {
        const auto f = static_cast<float>(max_norm / norm);
        for (auto* p : params)
            if (!p->frozen)
                for (std::size_t i = 0; i < p->grad.size(); ++i)
                    p->grad[i] *= f;
    }
    return norm;
}

std::optional<double> evaluate_lm(LanguageModel& lm, const std::vector<std::vector<TokenId>>& seqs,
                                  std::size_t batch_size, std::size_t bptt)
{
    const std::size_t n = total_tokens(seqs);
    if (n < 2)
        return std::nullopt;
    std::size_t b = std::max<std::size_t>(batch_size, 1);
    while (b > 1 && n < b * (bptt + 1))
        b /= 2;
    if (n < b * (bptt + 1))
        bptt = n - 1;
    LmBatchStream stream(seqs, b, bptt);
    model::RecurrentState<float> state;
    LmBatch batch;
    double sum = 0.0;
    std::size_t steps = 0;
    while (stream.next(batch))
    {
        ad::Tape<float> tape;
        auto out = lm.forward(tape, batch, &state, model::Mode::eval());
        sum += out.nll.value().item();
        state = std::move(out.state);
        ++steps;
    }
    return sum / static_cast<double>(steps);
}

ClfEvaluation evaluate_clf(Classifier& clf, const std::vector<Example>& examples,
                           std::size_t batch_size, std::size_t max_len, Truncate truncate)
{
    const std::size_t k = clf.config().n_classes;
    ClfEvaluation ev;
    ev.predicted.resize(examples.size());
    ev.actual.resize(examples.size());
    ev.probabilities.resize(examples.size() * k);
    double loss_sum = 0.0;
    for (const auto& batch : clf_batches(examples, batch_size, max_len, nullptr, truncate))
    {
        ad::Tape<float> tape;
        auto out = clf.forward(tape, batch, model::Mode::eval());
        loss_sum += static_cast<double>(out.loss.value().item()) * batch.batch_size;
        const auto probs = ad::softmax_rows(out.logits.value());
        for (std::size_t r = 0; r < batch.batch_size; ++r)
        {
            const auto idx = batch.indices[r];
            std::size_t arg = 0;
            for (std::size_t c = 0; c < k; ++c)
            {
                ev.probabilities[idx * k + c] = probs.at(r, c);
                if (probs.at(r, c) > probs.at(r, arg))
                    arg = c;
            }
            ev.predicted[idx] = arg;
            ev.actual[idx] = batch.labels[r];
        }
    }
    if (!examples.empty())
        ev.loss = loss_sum / static_cast<double>(examples.size());
    return ev;
}

double weighted_fbeta(const ClfEvaluation& eval, std::size_t n_classes)
{
    const auto cm = metrics::confusion(eval.predicted, eval.actual, n_classes);
    return metrics::report(cm).weighted_fbeta;
}

LmTrainResult train_lm(LanguageModel& lm, const std::vector<std::vector<TokenId>>& train,
                       const std::vector<std::vector<TokenId>>& valid, const LmTrainConfig& cfg,
                       const RunOutput& output)
{
    if (cfg.batch_size == 0 || cfg.bptt == 0)
        throw UsageError("language-model batch_size and bptt must be positive");
    Recorder rec(output, "lm_best.ckpt", false);
    LmTrainResult result{lm, {}, std::nullopt};
    if (cfg.epochs == 0)
    {
        rec.best(lm, {{"epoch", 0}});
        return result;
    }

    Rng rng(cfg.seed);
    Rng shuffle_rng = rng.fork();
    Rng dropout_rng = rng.fork();
    const auto params = lm.parameters();
    const std::vector<double> group_max(lm.config().n_layer_groups(), cfg.max_lr);
    const std::size_t steps_per_epoch = LmBatchStream(train, cfg.batch_size, cfg.bptt).num_steps();
    const std::size_t total = cfg.epochs * steps_per_epoch;

    optim::Adam<float> adam(optim::AdamConfig{0.9, 0.99, 1e-7, cfg.weight_decay});
    optim::AveragedSgd<float> asgd(cfg.weight_decay);
    const bool use_adam = cfg.optimizer == OptimizerKind::Adam;

    double best_metric = INFINITY;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch)
    {
        double loss_sum = 0.0;
        std::size_t n = 0;
        for_each_shuffled_stream(train, shuffle_rng, cfg.batch_size, cfg.bptt, [&](LmBatchStream& s) {
            model::RecurrentState<float> state;
            LmBatch batch;
            while (s.next(batch))
            {
                const auto lrs = scheduled_lrs(group_max, cfg.cycle, step, total);
                zero_grads(params);
                ad::Tape<float> tape;
                auto out = lm.forward(tape, batch, &state, model::Mode::train(dropout_rng));
                const double loss = out.loss.value().item();
                check_finite_loss(loss, "at epoch " + std::to_string(epoch) + " step " +
                                            std::to_string(step));
                tape.backward(out.loss);
                if (cfg.clip_norm > 0)
                    clip_grad_norm(params, cfg.clip_norm);
                if (use_adam)
                {
                    adam.set_beta1(schedule::one_cycle_momentum(
                        step, cycle(cfg.cycle, cfg.max_lr, total)));
                    adam.step(params, lrs);
                }
                else
                {
                    asgd.step(params, lrs);
                }
                state = std::move(out.state);
                loss_sum += out.nll.value().item();
                ++n;
                ++step;
            }
        });

        EpochRecord r;
        r.epoch = epoch;
        r.train_loss = n ? loss_sum / static_cast<double>(n) : 0.0;
        // Averaged iterates are evaluated and kept; training resumes from the raw ones.
        const bool swapped = !use_adam && asgd.averaging();
        if (swapped)
            asgd.swap_in_average(params);
        r.valid_loss = evaluate_lm(lm, valid, cfg.batch_size, cfg.bptt);
        const double metric = r.valid_loss ? *r.valid_loss : r.train_loss;
        if (metric < best_metric)
        {
            best_metric = metric;
            result.best = lm;
            result.best_valid_loss = r.valid_loss;
            rec.best(lm, {{"epoch", epoch}});
        }
        else if (!use_adam && !asgd.averaging())
        {
            asgd.start_averaging();
        }
        if (swapped)
            asgd.swap_in_average(params);
        rec.epoch(r);
        result.history.push_back(r);
    }
    return result;
}

ClfTrainResult train_clf(Classifier& clf, const std::vector<Example>& train,
                         const std::vector<Example>& valid, const ClfTrainConfig& cfg,
                         const RunOutput& output)
{
    if (cfg.batch_size == 0 || cfg.max_len == 0 || cfg.epochs_per_stage == 0)
        throw UsageError("classifier batch_size, max_len and epochs_per_stage must be positive");
    if (train.empty())
        throw DataError("classifier training split is empty");
    Recorder rec(output, "clf_best.ckpt", true);
    ClfTrainResult result{clf, {}, -1.0, 0, std::nullopt};

    const auto& mcfg = clf.config();
    const std::size_t n_groups = mcfg.n_layer_groups();
    const std::size_t last_stage = max_unfreeze_stage(mcfg);
    const auto group_max = schedule::discriminative_lrs(n_groups, cfg.lr_lo, cfg.lr_hi);

    // (stage, epochs) segments, each with its own one-cycle.
    std::vector<std::pair<std::size_t, std::size_t>> plan;
    if (cfg.gradual_unfreeze)
    {
        std::size_t left = cfg.epochs;
        for (std::size_t s = 0; s < last_stage && left > 0; ++s)
        {
            const auto e = std::min(cfg.epochs_per_stage, left);
            plan.emplace_back(s, e);
            left -= e;
        }
        if (left > 0)
            plan.emplace_back(last_stage, left);
    }
    else if (cfg.epochs > 0)
    {
        plan.emplace_back(last_stage, cfg.epochs);
    }
    if (plan.empty())
    {
        rec.best(clf, {{"epoch", 0}});
        return result;
    }

    Rng rng(cfg.seed);
    Rng batch_rng = rng.fork();
    Rng dropout_rng = rng.fork();
    const auto params = clf.parameters();
    optim::Adam<float> adam(optim::AdamConfig{0.9, 0.99, 1e-7, cfg.weight_decay});
    const std::size_t per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;

    // Validation F_beta when there is a validation split, else -train_loss.
    double best_score = -INFINITY;
    std::size_t epoch = 0;
    for (const auto& [stage, n_epochs] : plan)
    {
        gradual_unfreeze(clf, stage);
        const std::size_t total = n_epochs * per_epoch;
        const auto momentum = cycle(cfg.cycle, cfg.lr_hi, total);
        std::size_t step = 0;
        for (std::size_t e = 0; e < n_epochs; ++e)
        {
            ++epoch;
            double loss_sum = 0.0;
            std::size_t seen = 0;
            for (const auto& batch :
                 clf_batches(train, cfg.batch_size, cfg.max_len, &batch_rng, cfg.truncate))
            {
                const auto lrs = scheduled_lrs(group_max, cfg.cycle, step, total);
                zero_grads(params);
                ad::Tape<float> tape;
                auto out = clf.forward(tape, batch, model::Mode::train(dropout_rng));
                const double loss = out.loss.value().item();
                check_finite_loss(loss, "at epoch " + std::to_string(epoch));
                tape.backward(out.loss);
                if (cfg.clip_norm > 0)
                    clip_grad_norm(params, cfg.clip_norm);
                adam.set_beta1(schedule::one_cycle_momentum(step, momentum));
                adam.step(params, lrs);
                loss_sum += loss * static_cast<double>(batch.batch_size);
                seen += batch.batch_size;
                ++step;
            }

            EpochRecord r;
            r.epoch = epoch;
            r.stage = stage;
            r.train_loss = loss_sum / static_cast<double>(seen);
            double score = -r.train_loss;
            if (!valid.empty())
            {
                const auto ev = evaluate_clf(clf, valid, cfg.batch_size, cfg.max_len, cfg.truncate);
                const auto cm = metrics::confusion(ev.predicted, ev.actual, mcfg.n_classes);
                r.valid_loss = ev.loss;
                r.valid_fbeta = metrics::report(cm).weighted_fbeta;
                r.valid_accuracy = metrics::accuracy(cm);
                score = *r.valid_fbeta;
            }
            rec.epoch(r);
            result.history.push_back(r);
            if (score > best_score)
            {
                best_score = score;
                if (r.valid_fbeta)
                    result.best_fbeta = *r.valid_fbeta;
                result.best_epoch = epoch;
                result.best = clf;
                rec.best(clf, {{"epoch", epoch}});
            }
            if (cfg.target_fbeta > 0 && r.valid_fbeta && *r.valid_fbeta >= cfg.target_fbeta &&
                !result.epochs_to_target)
            {
                result.epochs_to_target = epoch;
                if (cfg.stop_at_target)
                    return result;
            }
        }
    }
    return result;
}

schedule::LrFinderResult lr_find_lm(LanguageModel& lm,
                                    const std::vector<std::vector<TokenId>>& train,
                                    const LmTrainConfig& cfg,
                                    const schedule::LrFinderOptions& options)
{
    const auto params = lm.parameters();
    const auto saved = snapshot(params);
    Rng rng(cfg.seed);
    Rng dropout_rng = rng.fork();
    LmBatchStream stream(train, cfg.batch_size, cfg.bptt);
    optim::Adam<float> adam(optim::AdamConfig{0.9, 0.99, 1e-7, cfg.weight_decay});
    model::RecurrentState<float> state;
    const std::size_t n_groups = lm.config().n_layer_groups();

    const auto step = [&](double lr) {
        LmBatch batch;
        if (!stream.next(batch))
        {
            stream.reset();
            state = {};
            stream.next(batch);
        }
        zero_grads(params);
        ad::Tape<float> tape;
        auto out = lm.forward(tape, batch, &state, model::Mode::train(dropout_rng));
        const double loss = out.loss.value().item();
        if (!std::isfinite(loss))
            return loss;
        tape.backward(out.loss);
        try
        {
            const std::vector<double> lrs(n_groups, lr);
            adam.step(params, lrs);
        }
        catch (const NumericalError&)
        {
            return static_cast<double>(NAN);
        }
        state = std::move(out.state);
        return loss;
    };

    try
    {
        auto result = schedule::lr_find(step, options);
        restore(params, saved);
        return result;
    }
    catch (...)
    {
        restore(params, saved);
        throw;
    }
}

schedule::LrFinderResult lr_find_clf(Classifier& clf, const std::vector<Example>& train,
                                     const ClfTrainConfig& cfg,
                                     const schedule::LrFinderOptions& options)
{
    const auto params = clf.parameters();
    const auto saved = snapshot(params);
    std::vector<ad::Tensor<float>> saved_buffers;
    for (const auto& b : clf.buffers())
        saved_buffers.push_back(*b.second);
    std::vector<bool> frozen;
    for (auto* p : params)
        frozen.push_back(p->frozen);
    gradual_unfreeze(clf, max_unfreeze_stage(clf.config()));

    Rng rng(cfg.seed);
    Rng batch_rng = rng.fork();
    Rng dropout_rng = rng.fork();
    optim::Adam<float> adam(optim::AdamConfig{0.9, 0.99, 1e-7, cfg.weight_decay});
    std::vector<ClfBatch> batches;
    std::size_t next = 0;
    const std::size_t n_groups = clf.config().n_layer_groups();

    const auto step = [&](double lr) {
        if (next == batches.size())
        {
            batches = clf_batches(train, cfg.batch_size, cfg.max_len, &batch_rng, cfg.truncate);
            next = 0;
        }
        zero_grads(params);
        ad::Tape<float> tape;
        auto out = clf.forward(tape, batches[next++], model::Mode::train(dropout_rng));
        const double loss = out.loss.value().item();
        if (!std::isfinite(loss))
            return loss;
        tape.backward(out.loss);
        try
        {
            const std::vector<double> lrs(n_groups, lr);
            adam.step(params, lrs);
        }
        catch (const NumericalError&)
        {
            return static_cast<double>(NAN);
        }
        return loss;
    };

    const auto put_back = [&] {
        restore(params, saved);
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i]->frozen = frozen[i];
        const auto buffers = clf.buffers();
        for (std::size_t i = 0; i < buffers.size(); ++i)
            *buffers[i].second = saved_buffers[i];
    };
    try
    {
        auto result = schedule::lr_find(step, options);
        put_back();
        return result;
    }
    catch (...)
    {
        put_back();
        throw;
    }
}

}  // namespace opsc::train
