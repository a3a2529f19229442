// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

// Acceptance checks. Each criterion prints one line:
//
//   criterion N: PASS|FAIL <details> [seconds]
//
// and the process exits 0 only when every selected criterion passes.

#include "../opcode_reference.hpp"

#include "opsc/autodiff.hpp"
#include "opsc/checkpoint.hpp"
#include "opsc/corpus.hpp"
#include "opsc/error.hpp"
#include "opsc/evm_disasm.hpp"
#include "opsc/metrics.hpp"
#include "opsc/model.hpp"
#include "opsc/pipeline.hpp"
#include "opsc/schedule.hpp"
#include "opsc/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace opsc;
using TD = ad::Tensor<double>;
using VD = ad::Var<double>;
using PD = ad::Parameter<double>;

namespace
{
struct Outcome
{
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4)
{
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

std::string join(const std::vector<std::size_t>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

TD uniform(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    TD t(std::move(shape));
    for (auto& v : t.storage())
        v = rng.uniform(lo, hi);
    return t;
}

/// Entries of magnitude 0.2..1 with random sign, clear of the ReLU kink.
TD away_from_zero(ad::Shape shape, Rng& rng)
{
    TD t(std::move(shape));
    for (auto& v : t.storage())
        v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.2, 1.0);
    return t;
}

/// Sum with fixed positive weights so every output coordinate carries its own gradient.
VD weighted_sum(VD y)
{
    Rng rng(99);
    auto w = uniform(y.shape(), rng, 0.5, 1.5);
    return ad::sum(ad::mul(y, y.tape().constant(std::move(w))));
}

// ---------------------------------------------------------------------------
// 1: published confusion matrix through the metrics module

Outcome criterion_1(const fs::path& fixture)
{
    std::ifstream in(fixture);
    if (!in)
        return {false, "cannot open " + fixture.string()};
    const auto report = pipeline::report_from_predictions(pipeline::read_predictions(in));

    const std::uint64_t fig4[4][4] = {
        {648, 4, 3, 215}, {59, 42, 0, 119}, {1, 0, 135, 45}, {78, 18, 5, 4759}};
    for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t p = 0; p < 4; ++p)
            if (report.cm.at(a, p) != fig4[a][p])
                return {false, "fixture does not reproduce the published matrix"};

    struct Expect
    {
        std::string name;
        double got;
        double want;
    };
    std::vector<Expect> rows = {{"accuracy", report.accuracy, 91.0}};
    const double recalls[] = {74, 19, 75, 98}, precisions[] = {82, 66, 94, 93},
                 fbetas[] = {78, 30, 83, 95};
    for (std::size_t k = 0; k < 4; ++k)
    {
        const auto t = "type" + std::to_string(k + 1);
        rows.push_back({"recall." + t, report.per_class[k].recall.value, recalls[k]});
        rows.push_back({"precision." + t, report.per_class[k].precision.value, precisions[k]});
        rows.push_back({"fbeta." + t, report.per_class[k].fbeta, fbetas[k]});
    }
    rows.push_back({"weighted.recall", report.weighted_recall, 91.0});
    rows.push_back({"weighted.precision", report.weighted_precision, 90.0});
    rows.push_back({"weighted.fbeta", report.weighted_fbeta, 90.0});

    double worst = 0;
    std::string worst_name;
    for (const auto& r : rows)
    {
        const double diff = std::abs(100.0 * r.got - r.want);
        if (diff > worst)
        {
            worst = diff;
            worst_name = r.name;
        }
    }
    return {worst <= 0.6, std::to_string(rows.size()) + " values, worst " + worst_name +
                              " off by " + fmt(worst, 3) + " pp (tol 0.6)"};
}

// ---------------------------------------------------------------------------
// 2: weighted recall equals accuracy

Outcome criterion_2()
{
    Rng rng(2);
    double worst = 0;
    std::size_t bit_equal = 0;
    const std::size_t trials = 1000;
    for (std::size_t t = 0; t < trials; ++t)
    {
        metrics::ConfusionMatrix cm(4);
        const std::uint64_t range = t % 3 == 0 ? 5 : t % 3 == 1 ? 200 : 100000;
        for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t p = 0; p < 4; ++p)
                cm.at(a, p) = rng.below(range + 1);
        if (cm.total() == 0)
            cm.at(0, 0) = 1;
        const auto r = metrics::report(cm);
        const double diff = std::abs(r.weighted_recall - r.accuracy);
        worst = std::max(worst, diff);
        bit_equal += std::memcmp(&r.weighted_recall, &r.accuracy, sizeof(double)) == 0;
    }
    return {worst <= 1e-12, std::to_string(trials) + " matrices, " + std::to_string(bit_equal) +
                                " bit-identical, max diff " + fmt(worst, 3) + " (tol 1e-12)"};
}

// ---------------------------------------------------------------------------
// 3: gradient checks

double primitive_worst(std::string& which)
{
    Rng rng(3);
    PD a("a", uniform({3, 4}, rng)), b("b", uniform({4, 2}, rng)), c("c", uniform({3, 4}, rng)),
        d("d", uniform({2, 4}, rng)), bias("bias", uniform({4}, rng)),
        r("r", away_from_zero({3, 4}, rng));
    PD s0("s0", uniform({3, 2}, rng)), s1("s1", uniform({3, 2}, rng)),
        s2("s2", uniform({3, 2}, rng));
    PD logits("logits", uniform({4, 5}, rng, -2, 2));
    PD x("x", uniform({5, 3}, rng, -2, 2)), g("g", uniform({3}, rng, 0.5, 1.5)),
        beta("beta", uniform({3}, rng));
    ad::BatchNormStats<double> stats{TD({3}, 0.0), TD({3}, 1.0)};
    const std::vector<std::int32_t> ids = {2, 0, 2, 1}, targets = {0, 3, 4, 3};
    const std::vector<std::size_t> lengths = {1, 3, 2};
    TD mask({3, 4});
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = static_cast<double>(i % 3 != 0);
    auto steps = [&](ad::Tape<double>& t) {
        return std::vector<VD>{t.parameter(s0), t.parameter(s1), t.parameter(s2)};
    };
    const std::span<const std::size_t> len(lengths);
    using Fn = std::function<VD(ad::Tape<double>&)>;

    const std::vector<std::tuple<std::string, Fn, std::vector<PD*>>> cases = {
        {"matmul", [&](auto& t) { return weighted_sum(ad::matmul(t.parameter(a), t.parameter(b))); },
         {&a, &b}},
        {"matmul_nt",
         [&](auto& t) { return weighted_sum(ad::matmul_nt(t.parameter(a), t.parameter(d))); },
         {&a, &d}},
        {"add", [&](auto& t) { return weighted_sum(ad::add(t.parameter(a), t.parameter(c))); },
         {&a, &c}},
        {"sub", [&](auto& t) { return weighted_sum(ad::sub(t.parameter(a), t.parameter(c))); },
         {&a, &c}},
        {"mul", [&](auto& t) { return weighted_sum(ad::mul(t.parameter(a), t.parameter(c))); },
         {&a, &c}},
        {"scale", [&](auto& t) { return weighted_sum(ad::scale(t.parameter(a), -1.7)); }, {&a}},
        {"add_bias",
         [&](auto& t) { return weighted_sum(ad::add_bias(t.parameter(a), t.parameter(bias))); },
         {&a, &bias}},
        {"sigmoid", [&](auto& t) { return weighted_sum(ad::sigmoid(t.parameter(a))); }, {&a}},
        {"tanh", [&](auto& t) { return weighted_sum(ad::tanh(t.parameter(a))); }, {&a}},
        {"relu", [&](auto& t) { return weighted_sum(ad::relu(t.parameter(r))); }, {&r}},
        {"log_softmax.rows",
         [&](auto& t) { return weighted_sum(ad::log_softmax(t.parameter(a), 1)); }, {&a}},
        {"log_softmax.cols",
         [&](auto& t) { return weighted_sum(ad::log_softmax(t.parameter(a), 0)); }, {&a}},
        {"embedding_lookup",
         [&](auto& t) {
             return weighted_sum(
                 ad::embedding_lookup(t.parameter(a), std::span<const std::int32_t>(ids)));
         },
         {&a}},
        {"concat",
         [&](auto& t) {
             const std::vector<VD> parts = {t.parameter(a), t.parameter(c)};
             return weighted_sum(ad::concat(std::span<const VD>(parts), 1));
         },
         {&a, &c}},
        {"slice_rows", [&](auto& t) { return weighted_sum(ad::slice_rows(t.parameter(a), 1, 2)); },
         {&a}},
        {"slice_cols", [&](auto& t) { return weighted_sum(ad::slice_cols(t.parameter(a), 1, 2)); },
         {&a}},
        {"apply_mask",
         [&](auto& t) { return weighted_sum(ad::apply_mask(t.parameter(a), mask, 1.5)); }, {&a}},
        {"sum", [&](auto& t) { return ad::sum(ad::mul(t.parameter(a), t.parameter(a))); }, {&a}},
        {"mean", [&](auto& t) { return ad::mean(ad::mul(t.parameter(a), t.parameter(a))); }, {&a}},
        {"masked_mean_over_time",
         [&](auto& t) {
             auto s = steps(t);
             return weighted_sum(ad::masked_mean_over_time(std::span<const VD>(s), len));
         },
         {&s0, &s1, &s2}},
        {"masked_max_over_time",
         [&](auto& t) {
             auto s = steps(t);
             return weighted_sum(ad::masked_max_over_time(std::span<const VD>(s), len));
         },
         {&s0, &s1, &s2}},
        {"last_over_time",
         [&](auto& t) {
             auto s = steps(t);
             return weighted_sum(ad::last_over_time(std::span<const VD>(s), len));
         },
         {&s0, &s1, &s2}},
        {"cross_entropy",
         [&](auto& t) {
             return ad::cross_entropy(t.parameter(logits), std::span<const std::int32_t>(targets));
         },
         {&logits}},
        {"batch_norm.train",
         [&](auto& t) {
             return weighted_sum(
                 ad::batch_norm(t.parameter(x), t.parameter(g), t.parameter(beta), stats, true));
         },
         {&x, &g, &beta}},
        {"batch_norm.eval",
         [&](auto& t) {
             return weighted_sum(
                 ad::batch_norm(t.parameter(x), t.parameter(g), t.parameter(beta), stats, false));
         },
         {&x, &g, &beta}},
    };
    double worst = 0;
    for (const auto& [name, fn, params] : cases)
    {
        const auto res = ad::grad_check(fn, params);
        if (res.max_rel_error >= worst)
        {
            worst = res.max_rel_error;
            which = name;
        }
    }
    return worst;
}

model::ModelConfig small_model()
{
    model::ModelConfig c;
    c.vocab_size = 12;
    c.emb_size = 4;
    c.hidden_size = 5;
    c.n_layers = 2;
    c.head_hidden = 6;
    // Every dropout active.
    c.p_emb = 0.1;
    c.p_input = 0.2;
    c.p_hidden = 0.2;
    c.p_weight = 0.3;
    c.p_head = 0.2;
    return c;
}

double lstm_two_step_error()
{
    auto cfg = small_model();
    cfg.tie_weights = false;
    Rng init(12);
    model::LanguageModel<double> lm(cfg, init);
    // Unit-scale weights keep every gradient coordinate above the
    // finite-difference noise floor.
    Rng scale_rng(13);
    for (auto* p : lm.parameters())
        p->value = uniform(p->value.shape(), scale_rng);
    model::RecurrentState<double> carried;
    Rng state_rng(14);
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
    {
        carried.h.push_back(uniform({2, cfg.layer_output_dim(l)}, state_rng, -0.5, 0.5));
        carried.c.push_back(uniform({2, cfg.layer_output_dim(l)}, state_rng, -0.5, 0.5));
    }
    const LmBatch batch{2, 2, {3, 4, 5, 6}, {4, 5, 6, 7}};
    auto fn = [&](ad::Tape<double>& t) {
        Rng masks(43);
        return lm.forward(t, batch, &carried, model::Mode::train(masks)).loss;
    };
    return ad::grad_check(fn, lm.parameters()).max_rel_error;
}

double classifier_error()
{
    const auto cfg = small_model();
    Rng init(10);
    model::Classifier<double> clf(cfg, init);
    Rng scale_rng(11);
    for (auto* p : clf.encoder_parameters())
        p->value = uniform(p->value.shape(), scale_rng);

    const std::vector<std::vector<TokenId>> rows = {{2, 5, 7}, {2, 4}, {2, 9, 3, 8}};
    ClfBatch batch;
    batch.batch_size = rows.size();
    batch.width = 4;
    batch.ids.assign(batch.batch_size * batch.width, Vocab::kPad);
    for (std::size_t i = 0; i < rows.size(); ++i)
    {
        std::copy(rows[i].begin(), rows[i].end(),
                  batch.ids.begin() + static_cast<long>(i * batch.width));
        batch.lengths.push_back(rows[i].size());
        batch.indices.push_back(i);
    }
    batch.labels = {0, 2, 3};
    auto fn = [&](ad::Tape<double>& t) {
        Rng masks(42);
        return clf.forward(t, batch, model::Mode::train(masks)).loss;
    };
    return ad::grad_check(fn, clf.parameters()).max_rel_error;
}

Outcome criterion_3()
{
    std::string which;
    const double prim = primitive_worst(which);
    const double lstm = lstm_two_step_error();
    const double clf = classifier_error();
    const bool pass = prim <= 1e-6 && lstm <= 1e-4 && clf <= 1e-4;
    return {pass, "primitives " + fmt(prim, 3) + " (worst " + which + ", tol 1e-6), 2-step LSTM " +
                      fmt(lstm, 3) + ", classifier " + fmt(clf, 3) + " (tol 1e-4)"};
}

// ---------------------------------------------------------------------------
// 4: LSTM cell against a scalar implementation

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One row of the cell straight from the gate equations, gate order i, f, o, g.
void scalar_cell(const TD& W, const TD& U, const TD& b, const double* x, std::size_t D,
                 const double* h, const double* c, std::size_t H, double* h_out, double* c_out)
{
    for (std::size_t j = 0; j < H; ++j)
    {
        double z[4];
        for (std::size_t gate = 0; gate < 4; ++gate)
        {
            const std::size_t col = gate * H + j;
            double s = b[col];
            for (std::size_t k = 0; k < D; ++k)
                s += x[k] * W[k * 4 * H + col];
            for (std::size_t k = 0; k < H; ++k)
                s += h[k] * U[k * 4 * H + col];
            z[gate] = s;
        }
        const double i = sigmoid(z[0]), f = sigmoid(z[1]), o = sigmoid(z[2]),
                     gg = std::tanh(z[3]);
        c_out[j] = f * c[j] + i * gg;
        h_out[j] = o * std::tanh(c_out[j]);
    }
}

Outcome criterion_4()
{
    Rng rng(4);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial)
    {
        const std::size_t D = 1 + rng.below(6), H = 1 + rng.below(6), B = 1 + rng.below(4);
        const double scale = rng.uniform(0.1, 3.0);
        const auto W = uniform({D, 4 * H}, rng, -scale, scale),
                   U = uniform({H, 4 * H}, rng, -scale, scale), b = uniform({4 * H}, rng, -scale, scale);
        const auto x = uniform({B, D}, rng, -2, 2), h = uniform({B, H}, rng),
                   c = uniform({B, H}, rng, -2, 2);
        ad::Tape<double> t;
        const auto out = model::lstm_cell_step(t.constant(x), t.constant(h), t.constant(c),
                                               t.constant(W), t.constant(U), t.constant(b));
        std::vector<double> h_ref(H), c_ref(H);
        for (std::size_t r = 0; r < B; ++r)
        {
            scalar_cell(W, U, b, x.data() + r * D, D, h.data() + r * H, c.data() + r * H, H,
                        h_ref.data(), c_ref.data());
            for (std::size_t j = 0; j < H; ++j)
            {
                worst = std::max(worst, std::abs(out.h.value().at(r, j) - h_ref[j]));
                worst = std::max(worst, std::abs(out.c.value().at(r, j) - c_ref[j]) /
                                            std::max(1.0, std::abs(c_ref[j])));
            }
        }
    }

    // Zero weights and zero cell: every gate sits at 0.5 and g at 0, so h' = 0.
    const std::size_t D = 3, H = 4, B = 2;
    ad::Tape<double> t;
    const auto zero = model::lstm_cell_step(
        t.constant(uniform({B, D}, rng)), t.constant(uniform({B, H}, rng)), t.constant(TD({B, H})),
        t.constant(TD({D, 4 * H})), t.constant(TD({H, 4 * H})), t.constant(TD({4 * H})));
    bool zero_exact = true;
    for (double v : zero.h.value().storage())
        zero_exact = zero_exact && v == 0.0;

    return {worst <= 1e-12 && zero_exact, "100 instances, max diff " + fmt(worst, 3) +
                                              " (tol 1e-12), zero-weight h' " +
                                              (zero_exact ? "exactly 0" : "nonzero")};
}

// ---------------------------------------------------------------------------
// Synthetic pipeline runs shared by 5, 6 and 11

std::vector<ContractRecord> synth_records(std::uint64_t seed)
{
    synth::SynthConfig sc;
    sc.per_class = 50;
    sc.mean_len = 120;
    sc.len_jitter = 40;
    sc.seed = seed;
    std::stringstream jsonl;
    synth::write_jsonl(jsonl, synth::generate(sc));
    return pipeline::prepare(jsonl, {}).records;
}

RunConfig synth_config(std::uint64_t seed)
{
    auto c = RunConfig::preset_config("synth");
    c.seed = seed;
    return c;
}

Outcome criterion_5()
{
    const auto records = synth_records(0);
    const auto res = pipeline::run(synth_config(0), records);
    const double train_acc = res.train_report.accuracy, test_acc = res.test_report.accuracy;
    const bool pass = train_acc >= 0.95 && test_acc >= 0.90 && res.clf.history.size() <= 50;
    return {pass, "train accuracy " + fmt(train_acc) + " (>= 0.95), held-out accuracy " +
                      fmt(test_acc) + " (>= 0.90) after " + std::to_string(res.clf.history.size()) +
                      " classifier epochs"};
}

double median(std::vector<std::size_t> v)
{
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? static_cast<double>(v[n / 2])
                 : 0.5 * static_cast<double>(v[n / 2 - 1] + v[n / 2]);
}

Outcome criterion_6(std::size_t n_seeds)
{
    constexpr std::size_t kCap = 50;
    std::vector<std::size_t> pre, rnd;
    for (std::uint64_t seed = 0; seed < n_seeds; ++seed)
    {
        const auto records = synth_records(seed);
        auto cfg = synth_config(seed);
        cfg.clf.epochs = kCap;
        cfg.clf.target_fbeta = 0.95;
        cfg.clf.stop_at_target = true;
        for (const bool pretrain : {true, false})
        {
            const auto res = pipeline::run(cfg, records, {}, pretrain);
            // A run that never reaches the target counts as one past the cap.
            const auto e = res.clf.epochs_to_target.value_or(kCap + 1);
            (pretrain ? pre : rnd).push_back(e);
            std::cerr << "seed " << seed << (pretrain ? " pretrained " : " random ") << e
                      << " epochs\n";
        }
    }
    const double mp = median(pre), mr = median(rnd), ratio = mp / mr;
    return {ratio <= 0.5, "epochs to 0.95 valid F_beta, pretrained [" + join(pre) + "] median " +
                              fmt(mp) + ", random [" + join(rnd) + "] median " + fmt(mr) +
                              ", ratio " + fmt(ratio, 3) + " (<= 0.5)"};
}

std::string file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_11()
{
    const auto root = fs::temp_directory_path() / "opsc_acceptance_11";
    fs::remove_all(root);
    const auto records = synth_records(0);
    const auto a = pipeline::run(synth_config(0), records, root / "a");
    const auto b = pipeline::run(synth_config(0), records, root / "b");
    const auto ma = file_bytes(root / "a" / "eval" / "metrics.json");
    const bool same_metrics = !ma.empty() && ma == file_bytes(root / "b" / "eval" / "metrics.json") &&
                              a.test_report.to_json() == b.test_report.to_json();

    bool round_trip = true;
    std::size_t checked = 0;
    for (const char* rel : {"lm/lm_best.ckpt", "clf/clf_best.ckpt"})
    {
        const auto original = file_bytes(root / "a" / rel);
        std::ostringstream again;
        checkpoint::write(again, checkpoint::load(root / "a" / rel));
        round_trip = round_trip && !original.empty() && again.str() == original;
        // Rebuilding the model and saving it again must also reproduce the bytes.
        const auto ck = checkpoint::load(root / "a" / rel);
        std::ostringstream rebuilt;
        if (ck.kind == checkpoint::Kind::Classifier)
            checkpoint::write(rebuilt, checkpoint::from_model(checkpoint::to_classifier(ck),
                                                              ck.vocab, ck.metadata));
        else
            checkpoint::write(rebuilt, checkpoint::from_model(checkpoint::to_language_model(ck),
                                                              ck.vocab, ck.metadata));
        round_trip = round_trip && rebuilt.str() == original;
        ++checked;
    }
    fs::remove_all(root);
    return {same_metrics && round_trip,
            std::string("metrics JSON ") + (same_metrics ? "identical" : "differs") +
                " across two runs, " + std::to_string(checked) + " checkpoints save-load-save " +
                (round_trip ? "byte-identical" : "differ")};
}

// ---------------------------------------------------------------------------
// 7: schedule identities

Outcome criterion_7()
{
    double worst = 0;
    for (const std::size_t total : {10u, 100u, 1234u})
        for (const double max_lr : {0.01, 0.03, 0.4})
        {
            const schedule::OneCycleSchedule s{max_lr, total};
            const auto rel = [](double got, double want) { return std::abs(got - want) / want; };
            worst = std::max(worst, rel(schedule::one_cycle_lr(0, s), max_lr / 25));
            worst = std::max(worst, rel(schedule::one_cycle_lr(schedule::warmup_end_step(s), s), max_lr));
            worst = std::max(worst, rel(schedule::one_cycle_lr(total - 1, s), max_lr / 1e4));
        }
    const auto lrs = schedule::discriminative_lrs(3);
    const double want[] = {0.0044, 0.013266, 0.04};
    bool sig4 = lrs.size() == 3;
    for (std::size_t i = 0; sig4 && i < 3; ++i)
        sig4 = std::abs(lrs[i] - want[i]) / want[i] < 5e-5;
    return {worst <= 1e-12 && sig4, "one-cycle endpoints max rel diff " + fmt(worst, 3) +
                                        " (tol 1e-12), discriminative [" + fmt(lrs[0], 5) + ", " +
                                        fmt(lrs[1], 5) + ", " + fmt(lrs[2], 5) + "]"};
}

// ---------------------------------------------------------------------------
// 8: AUC

double pair_counting_auc(const std::vector<double>& s, const std::vector<std::size_t>& l,
                         std::size_t k)
{
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] == k && l[j] != k)
            {
                pairs += 1;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    return wins / pairs;
}

Outcome criterion_8()
{
    Rng rng(8);
    double worst = 0;
    std::size_t instances = 0;
    for (int trial = 0; trial < 500; ++trial)
    {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> s(n);
        std::vector<std::size_t> l(n);
        for (std::size_t i = 0; i < n; ++i)
        {
            l[i] = rng.below(4);
            // Alternate coarse and fine score grids so ties are common.
            s[i] = static_cast<double>(rng.below(trial % 2 ? 5 : 1000)) / 10.0;
        }
        for (std::size_t k = 0; k < 4; ++k)
        {
            const auto pos = std::count(l.begin(), l.end(), k);
            if (pos == 0 || pos == static_cast<long>(n))
                continue;
            worst = std::max(worst, std::abs(metrics::roc_curve(s, l, k).auc -
                                             pair_counting_auc(s, l, k)));
            ++instances;
        }
    }

    const std::vector<double> sep = {0.9, 0.8, 0.7, 0.2, 0.1};
    const std::vector<std::size_t> sep_l = {1, 1, 1, 0, 3};
    const double perfect = metrics::roc_curve(sep, sep_l, 1).auc;

    const std::size_t n = 10000;
    std::vector<double> s(n);
    std::vector<std::size_t> l(n);
    for (std::size_t i = 0; i < n; ++i)
    {
        s[i] = rng.uniform();
        l[i] = rng.below(4);
    }
    const double chance = metrics::roc_curve(s, l, 0).auc;

    const bool pass = worst <= 1e-12 && perfect == 1.0 && std::abs(chance - 0.5) <= 0.05;
    return {pass, std::to_string(instances) + " curves vs pair counting, max diff " + fmt(worst, 3) +
                      "; separated " + fmt(perfect) + "; random " + fmt(chance) + " (0.5 +- 0.05)"};
}

// ---------------------------------------------------------------------------
// 9: disassembler

Outcome criterion_9()
{
    static const char* digits = "0123456789abcdef";
    const auto ref = testref::reference_opcodes();
    std::size_t agree = 0;
    for (unsigned b = 0; b < 256; ++b)
    {
        const auto it = ref.find(static_cast<std::uint8_t>(b));
        const std::string want = it == ref.end() ? "INVALID" : it->second.first;
        const std::string hex = {digits[b >> 4], digits[b & 15]};
        const auto got = evm::disassemble(hex).tokens;
        agree += got.size() == 1 && got[0] == want;
    }
    const bool spot = evm::disassemble("0x01").tokens[0] == "ADD" &&
                      evm::disassemble("0x05").tokens[0] == "SDIV" &&
                      evm::disassemble("0x16").tokens[0] == "AND";

    // 60 80 | 60 40 | 52 | 7f + 32 immediates that look like opcodes | 01 | ef | 63 aa bb cc
    const std::string fixture = "0x6080604052"
                                "7f0102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f20"
                                "01ef63aabbcc";
    const std::vector<std::string> decoded = {"PUSH1",  "PUSH1", "MSTORE", "PUSH32",
                                              "ADD",    "INVALID", "PUSH4"};
    const auto seq = evm::disassemble(fixture);
    const bool push = seq.tokens == decoded && seq.source_len_bytes == 44;

    return {agree == 256 && spot && push,
            std::to_string(agree) + "/256 single bytes agree, spot checks " +
                (spot ? "ok" : "wrong") + ", PUSH fixture " + (push ? "ok" : "wrong")};
}

// ---------------------------------------------------------------------------
// 10: dedup and split

Outcome criterion_10()
{
    Rng rng(10);
    std::vector<ContractRecord> records;
    std::size_t planted = 0, vulnerable = 0;
    std::map<std::vector<std::string>, bool> seen_normal;
    const std::vector<std::string> alphabet = {"ADD", "MSTORE", "PUSH1", "CALLER", "JUMP", "SLOAD"};
    for (std::size_t i = 0; i < 400; ++i)
    {
        ContractRecord r;
        r.address = "0x" + std::to_string(i);
        r.label = label_from_index(rng.below(4));
        if (!records.empty() && rng.bernoulli(0.3))
        {
            // Copy an earlier record's code, possibly across labels.
            r.tokens = records[rng.below(records.size())].tokens;
        }
        else
        {
            const auto len = 1 + rng.below(4);
            for (std::size_t k = 0; k < len; ++k)
                r.tokens.push_back(alphabet[rng.below(alphabet.size())]);
        }
        if (r.label == Label::Normal)
            planted += !seen_normal.emplace(r.tokens, true).second;
        else
            ++vulnerable;
        records.push_back(std::move(r));
    }
    const auto kept = dedup_normals(records);
    const auto kept_vulnerable = static_cast<std::size_t>(std::count_if(
        kept.begin(), kept.end(), [](const ContractRecord& r) { return r.label != Label::Normal; }));
    const bool dedup_ok = records.size() - kept.size() == planted && kept_vulnerable == vulnerable;

    // Per-class split sizes against floor arithmetic.
    const SplitRatios ratios;
    const auto split = stratified_split(kept, ratios, 10);
    bool floors = true;
    for (std::size_t k = 0; k < kNumClasses; ++k)
    {
        const auto lab = label_from_index(k);
        auto count = [&](const std::vector<ContractRecord>& v) {
            return static_cast<std::size_t>(std::count_if(
                v.begin(), v.end(), [&](const ContractRecord& r) { return r.label == lab; }));
        };
        const auto n = count(kept);
        const auto fl = [&](double p) {
            return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(p * static_cast<double>(n))));
        };
        floors = floors && count(split.valid) == fl(ratios.valid) &&
                 count(split.test) == fl(ratios.test) &&
                 count(split.train) == n - fl(ratios.valid) - fl(ratios.test);
    }

    const std::size_t sizes[] = {5801, 1461, 1207, 32408}, paper_test[] = {870, 220, 181, 4860};
    std::vector<std::size_t> tests;
    bool paper = true;
    for (std::size_t i = 0; i < 4; ++i)
    {
        const auto s = split_sizes(sizes[i], ratios);
        tests.push_back(s.test);
        paper = paper && std::abs(static_cast<long>(s.test) - static_cast<long>(paper_test[i])) <= 1;
    }
    return {dedup_ok && floors && paper,
            "removed " + std::to_string(records.size() - kept.size()) + " of " +
                std::to_string(planted) + " planted normal duplicates, kept " +
                std::to_string(kept_vulnerable) + "/" + std::to_string(vulnerable) +
                " vulnerable; floor sizes " + (floors ? "match" : "differ") +
                "; paper test sizes [" + join(tests) + "] vs [870,220,181,4860] (+-1)"};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"opsc acceptance checks"};
    std::vector<int> selected;
    std::string fixture = std::string(OPSC_SOURCE_DIR) + "/data/fixtures/fig4_predictions.csv";
    std::size_t seeds = 5;
    app.add_option("--criterion", selected, "Criteria to run (default: all)")
        ->check(CLI::Range(1, 11));
    app.add_option("--fixture", fixture, "Published-matrix predictions CSV");
    app.add_option("--seeds", seeds, "Seeds for the transfer comparison")->check(CLI::Range(1, 50));
    CLI11_PARSE(app, argc, argv);
    if (selected.empty())
        for (int i = 1; i <= 11; ++i)
            selected.push_back(i);

    // Runtime budgets in seconds.
    const std::map<int, std::pair<double, std::function<Outcome()>>> criteria = {
        {1, {1, [&] { return criterion_1(fixture); }}},
        {2, {1, criterion_2}},
        {3, {30, criterion_3}},
        {4, {5, criterion_4}},
        {5, {600, criterion_5}},
        {6, {1800, [&] { return criterion_6(seeds); }}},
        {7, {1, criterion_7}},
        {8, {10, criterion_8}},
        {9, {1, criterion_9}},
        {10, {5, criterion_10}},
        {11, {900, criterion_11}},
    };

    bool all = true;
    for (const int id : selected)
    {
        const auto& [budget, fn] = criteria.at(id);
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try
        {
            o = fn();
        }
        catch (const std::exception& e)
        {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (secs > budget)
        {
            o.pass = false;
            o.detail += "; over the " + fmt(budget) + " s budget";
        }
        all = all && o.pass;
        std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
                  << "  [" << fmt(secs, 3) << " s]" << std::endl;
    }
    return all ? 0 : 1;
}
