// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/error.hpp"
#include "opsc/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <map>

using namespace opsc;
using namespace opsc::train;
using model::ModelConfig;

namespace
{
ModelConfig tiny(std::size_t vocab = 12)
{
    ModelConfig c;
    c.vocab_size = vocab;
    c.emb_size = 8;
    c.hidden_size = 12;
    c.n_layers = 2;
    c.head_hidden = 10;
    c.p_emb = c.p_input = c.p_hidden = c.p_weight = c.p_head = 0.0;
    return c;
}

/// Sequences built from four fixed motifs chosen at random.
std::vector<std::vector<TokenId>> motif_streams(std::size_t n, std::size_t motifs_per_seq,
                                                std::uint64_t seed)
{
    const std::vector<std::vector<TokenId>> motifs = {
        {3, 4, 5, 6}, {7, 8, 3, 9}, {10, 4, 11, 5}, {6, 9, 8, 10}};
    Rng rng(seed);
    std::vector<std::vector<TokenId>> out(n);
    for (auto& s : out)
        for (std::size_t k = 0; k < motifs_per_seq; ++k)
        {
            const auto& m = motifs[rng.below(motifs.size())];
            s.insert(s.end(), m.begin(), m.end());
        }
    return out;
}

/// Class c carries token 3 + c somewhere in noise drawn from 7..11.
std::vector<Example> labeled_examples(std::size_t per_class, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Example> out;
    for (std::size_t c = 0; c < kNumClasses; ++c)
        for (std::size_t i = 0; i < per_class; ++i)
        {
            Example e;
            e.ids.push_back(Vocab::kBos);
            const auto len = 4 + rng.below(5);
            const auto at = rng.below(len);
            for (std::size_t k = 0; k < len; ++k)
                e.ids.push_back(k == at ? static_cast<TokenId>(3 + c)
                                        : static_cast<TokenId>(7 + rng.below(5)));
            e.label = c;
            out.push_back(std::move(e));
        }
    return out;
}

std::vector<ad::Tensor<float>> values(const std::vector<ad::Parameter<float>*>& ps)
{
    std::vector<ad::Tensor<float>> out;
    for (auto* p : ps)
        out.push_back(p->value);
    return out;
}

}  // namespace

TEST_CASE("unfreeze stages")
{
    Rng init(1);
    Classifier clf(tiny(), init);
    const auto params = clf.parameters();
    const auto n_groups = clf.config().n_layer_groups();
    CHECK(max_unfreeze_stage(clf.config()) == n_groups - 1);

    gradual_unfreeze(clf, 0);
    for (auto* p : clf.encoder_parameters())
        CHECK(p->frozen);
    for (auto* p : clf.head_parameters())
        CHECK_FALSE(p->frozen);

    std::size_t trainable_before = 0;
    for (std::size_t stage = 0; stage < n_groups; ++stage)
    {
        std::vector<bool> was_trainable;
        for (auto* p : params)
            was_trainable.push_back(!p->frozen);
        gradual_unfreeze(clf, stage);
        std::size_t trainable = 0;
        for (std::size_t i = 0; i < params.size(); ++i)
        {
            trainable += !params[i]->frozen;
            if (stage > 0 && was_trainable[i])
                CHECK_FALSE(params[i]->frozen);
            CHECK(params[i]->frozen == (params[i]->layer_group < n_groups - 1 - stage));
        }
        CHECK(trainable >= trainable_before);
        trainable_before = trainable;
    }
    for (auto* p : params)
        CHECK_FALSE(p->frozen);
    CHECK_THROWS_AS(gradual_unfreeze(clf, n_groups), UsageError);
}

TEST_CASE("stage 1 step changes only the head and the top LSTM layer")
{
    Rng init(2);
    Classifier clf(tiny(), init);
    gradual_unfreeze(clf, 1);
    const auto params = clf.parameters();
    const auto before = values(params);

    const auto examples = labeled_examples(3, 5);
    const auto batch = clf_batches(examples, examples.size(), 100).front();
    for (auto* p : params)
        p->zero_grad();
    ad::Tape<float> tape;
    Rng drop(3);
    auto out = clf.forward(tape, batch, model::Mode::train(drop));
    tape.backward(out.loss);
    optim::Adam<float> adam;
    const auto lrs = schedule::discriminative_lrs(clf.config().n_layer_groups());
    adam.step(params, lrs);

    for (std::size_t i = 0; i < params.size(); ++i)
    {
        CAPTURE(params[i]->name);
        const bool top_or_head = params[i]->layer_group >= clf.config().n_layers;
        CHECK((params[i]->value != before[i]) == top_or_head);
    }
}

TEST_CASE("gradient clipping")
{
    ad::Parameter<float> a("a", ad::Tensor<float>({2}, {0, 0}));
    ad::Parameter<float> f("f", ad::Tensor<float>({1}, {0}));
    a.grad = ad::Tensor<float>({2}, {3, 4});
    f.grad = ad::Tensor<float>({1}, {100});
    f.frozen = true;
    CHECK(clip_grad_norm({&a, &f}, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad[0] == doctest::Approx(0.6));
    CHECK(a.grad[1] == doctest::Approx(0.8));
    CHECK(f.grad[0] == 100);
    CHECK(clip_grad_norm({&a}, 10.0) == doctest::Approx(1.0));
    CHECK(a.grad[1] == doctest::Approx(0.8));
}

TEST_CASE("language model learns a motif grammar")
{
    const auto train = motif_streams(24, 12, 1), valid = motif_streams(6, 12, 2);
    // Unigram entropy of the validation targets, in nats.
    std::map<TokenId, double> counts;
    double total = 0;
    for (const auto& s : valid)
        for (std::size_t i = 1; i < s.size(); ++i, ++total)
            counts[s[i]] += 1;
    double unigram = 0;
    for (const auto& [_, c] : counts)
        unigram -= c / total * std::log(c / total);

    auto cfg = tiny();
    cfg.hidden_size = 24;
    Rng init(3);
    LanguageModel lm(cfg, init);
    LmTrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 4;
    tc.bptt = 12;
    tc.max_lr = 0.02;
    const auto r = train_lm(lm, train, valid, tc);
    REQUIRE(r.history.size() == 5);
    REQUIRE(r.best_valid_loss);
    INFO("unigram " << unigram << " valid " << *r.best_valid_loss);
    CHECK(*r.best_valid_loss < unigram);
}

TEST_CASE("training is reproducible and epochs = 0 is a no-op")
{
    const auto train = motif_streams(8, 8, 4), valid = motif_streams(2, 8, 5);
    LmTrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    tc.bptt = 8;
    auto run = [&] {
        Rng init(6);
        auto cfg = tiny();
        cfg.p_weight = 0.3;
        cfg.p_hidden = 0.2;
        LanguageModel lm(cfg, init);
        return train_lm(lm, train, valid, tc);
    };
    auto a = run(), b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].to_json() == b.history[i].to_json());
    CHECK(values(a.best.parameters()) == values(b.best.parameters()));

    Rng init(7);
    LanguageModel lm(tiny(), init);
    const auto start = values(lm.parameters());
    tc.epochs = 0;
    auto none = train_lm(lm, train, valid, tc);
    CHECK(none.history.empty());
    CHECK(values(none.best.parameters()) == start);
    CHECK(values(lm.parameters()) == start);
}

TEST_CASE("a frozen classifier epoch leaves the encoder untouched")
{
    Rng a(8), b(9);
    LanguageModel lm(tiny(), a);
    auto clf = model::transfer_encoder(lm, tiny(), b);
    const auto encoder_before = values(clf.encoder_parameters());
    const auto head_before = values(clf.head_parameters());
    ClfTrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    const auto train = labeled_examples(4, 10), valid = labeled_examples(2, 11);
    const auto r = train_clf(clf, train, valid, tc);
    REQUIRE(r.history.size() == 1);
    CHECK(r.history[0].stage == 0);
    CHECK(values(clf.encoder_parameters()) == encoder_before);
    CHECK(values(clf.head_parameters()) != head_before);
}

TEST_CASE("classifier schedule and selection")
{
    const auto train = labeled_examples(6, 12), valid = labeled_examples(3, 13);
    Rng init(14);
    Classifier clf(tiny(), init);
    ClfTrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 8;
    const auto r = train_clf(clf, train, valid, tc);
    REQUIRE(r.history.size() == 6);
    // One epoch per stage, then the rest fully unfrozen.
    const std::size_t stages[] = {0, 1, 2, 3, 3, 3};
    for (std::size_t i = 0; i < 6; ++i)
    {
        CHECK(r.history[i].epoch == i + 1);
        CHECK(r.history[i].stage == stages[i]);
        REQUIRE(r.history[i].valid_fbeta);
        CHECK(*r.history[i].valid_fbeta <= r.best_fbeta);
    }
    CHECK(*r.history[r.best_epoch - 1].valid_fbeta == r.best_fbeta);

    Rng init2(15);
    Classifier no_valid(tiny(), init2);
    tc.epochs = 2;
    const auto nv = train_clf(no_valid, train, {}, tc);
    CHECK(nv.best_epoch >= 1);
    CHECK(nv.best_fbeta == -1.0);
    CHECK_FALSE(nv.history[0].valid_fbeta);

    tc.epochs = 0;
    Rng init3(16);
    Classifier idle(tiny(), init3);
    const auto before = values(idle.parameters());
    CHECK(train_clf(idle, train, valid, tc).history.empty());
    CHECK(values(idle.parameters()) == before);

    CHECK_THROWS_AS(train_clf(idle, {}, valid, tc), DataError);
}

TEST_CASE("learning-rate sweeps restore the weights bitwise")
{
    Rng init(17);
    LanguageModel lm(tiny(), init);
    const auto lm_before = values(lm.parameters());
    LmTrainConfig lc;
    lc.batch_size = 2;
    lc.bptt = 6;
    schedule::LrFinderOptions o;
    o.steps = 30;
    const auto r = lr_find_lm(lm, motif_streams(6, 10, 18), lc, o);
    CHECK(r.points.size() >= 10);
    CHECK(values(lm.parameters()) == lm_before);

    Rng init2(19);
    Classifier clf(tiny(), init2);
    gradual_unfreeze(clf, 0);
    const auto clf_before = values(clf.parameters());
    std::vector<ad::Tensor<float>> buffers_before;
    for (const auto& [name, t] : clf.buffers())
        buffers_before.push_back(*t);
    ClfTrainConfig cc;
    cc.batch_size = 4;
    const auto rc = lr_find_clf(clf, labeled_examples(10, 20), cc, o);
    CHECK(rc.points.size() >= 10);
    CHECK(values(clf.parameters()) == clf_before);
    std::size_t i = 0;
    for (const auto& [name, t] : clf.buffers())
        CHECK(*t == buffers_before[i++]);
    for (auto* p : clf.encoder_parameters())
        CHECK(p->frozen);
}

TEST_CASE("evaluation helpers")
{
    Rng init(21);
    LanguageModel lm(tiny(), init);
    CHECK_FALSE(evaluate_lm(lm, {{3}}, 4, 10));
    const auto loss = evaluate_lm(lm, {{3, 4, 5}}, 4, 10);
    REQUIRE(loss);
    CHECK(std::isfinite(*loss));

    Rng init2(22);
    Classifier clf(tiny(), init2);
    const auto examples = labeled_examples(3, 23);
    const auto ev = evaluate_clf(clf, examples, 5, 100);
    REQUIRE(ev.predicted.size() == examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i)
    {
        CHECK(ev.actual[i] == examples[i].label);
        double s = 0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < kNumClasses; ++k)
        {
            const double p = ev.probabilities[i * kNumClasses + k];
            s += p;
            if (p > ev.probabilities[i * kNumClasses + arg])
                arg = k;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(ev.predicted[i] == arg);
    }

    ClfEvaluation perfect{{0, 1, 2, 3}, {0, 1, 2, 3}, {}, 0.0};
    CHECK(weighted_fbeta(perfect, kNumClasses) == doctest::Approx(1.0));
    ClfEvaluation wrong{{1, 0}, {0, 1}, {}, 0.0};
    CHECK(weighted_fbeta(wrong, kNumClasses) == doctest::Approx(0.0));
}
