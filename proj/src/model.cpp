// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#include "opsc/model.hpp"

#include "opsc/error.hpp"

#include <cmath>

namespace opsc::model
{
namespace
{
template <typename T>
Tensor<T> uniform_tensor(ad::Shape shape, double bound, Rng& rng)
{
    Tensor<T> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

void check_rate(const char* what, double p)
{
    if (!(p >= 0.0 && p < 1.0))
        throw UsageError(std::string(what) + " dropout rate must be in [0, 1), got " +
                         std::to_string(p));
}

template <typename T>
Var<T> linear(Tape<T>& tape, Var<T> x, Parameter<T>& W, Parameter<T>& b)
{
    return ad::add_bias(ad::matmul(x, tape.parameter(W)), tape.parameter(b));
}

}  // namespace

// ---------------------------------------------------------------- config

std::size_t ModelConfig::layer_output_dim(std::size_t layer) const
{
    return (layer + 1 == n_layers && tie_weights) ? emb_size : hidden_size;
}

std::size_t ModelConfig::layer_input_dim(std::size_t layer) const
{
    return layer == 0 ? emb_size : hidden_size;
}

void ModelConfig::validate() const
{
    if (vocab_size <= Vocab::kNumReserved)
        throw UsageError("model vocab_size must exceed the reserved ids");
    if (emb_size == 0 || hidden_size == 0 || n_layers == 0 || head_hidden == 0 || n_classes < 2)
        throw UsageError("model dimensions must be positive");
    check_rate("p_emb", p_emb);
    check_rate("p_input", p_input);
    check_rate("p_hidden", p_hidden);
    check_rate("p_weight", p_weight);
    check_rate("p_head", p_head);
    if (ar_alpha < 0 || tar_beta < 0)
        throw UsageError("ar_alpha and tar_beta must be non-negative");
}

nlohmann::json ModelConfig::to_json() const
{
    return {{"vocab_size", vocab_size}, {"emb_size", emb_size},   {"hidden_size", hidden_size},
            {"n_layers", n_layers},     {"tie_weights", tie_weights}, {"p_emb", p_emb},
            {"p_input", p_input},       {"p_hidden", p_hidden},   {"p_weight", p_weight},
            {"head_hidden", head_hidden}, {"p_head", p_head},     {"n_classes", n_classes},
            {"ar_alpha", ar_alpha},     {"tar_beta", tar_beta}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j)
{
    ModelConfig c;
    try
    {
        c.vocab_size = j.at("vocab_size").get<std::size_t>();
        c.emb_size = j.at("emb_size").get<std::size_t>();
        c.hidden_size = j.at("hidden_size").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.tie_weights = j.at("tie_weights").get<bool>();
        c.p_emb = j.at("p_emb").get<double>();
        c.p_input = j.at("p_input").get<double>();
        c.p_hidden = j.at("p_hidden").get<double>();
        c.p_weight = j.at("p_weight").get<double>();
        c.head_hidden = j.at("head_hidden").get<std::size_t>();
        c.p_head = j.at("p_head").get<double>();
        c.n_classes = j.at("n_classes").get<std::size_t>();
        c.ar_alpha = j.at("ar_alpha").get<double>();
        c.tar_beta = j.at("tar_beta").get<double>();
    }
    catch (const nlohmann::json::exception& e)
    {
        throw UsageError(std::string("bad model config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------- LSTM cell

template <typename T>
Tensor<T> LstmLayer<T>::gate_block(const Parameter<T>& packed, Gate gate) const
{
    const auto& v = packed.value;
    const std::size_t h = hidden_dim;
    const std::size_t rows = v.rank() == 1 ? 1 : v.rows();
    const std::size_t cols = v.cols();
    const std::size_t begin = static_cast<std::size_t>(gate) * h;
    Tensor<T> out = v.rank() == 1 ? Tensor<T>(ad::Shape{h}) : Tensor<T>::matrix(rows, h);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < h; ++j)
            out[i * h + j] = v[i * cols + begin + j];
    return out;
}

template <typename T>
CellOutput<T> lstm_step_projected(Var<T> x_proj, Var<T> h, Var<T> c, Var<T> U)
{
    const std::size_t hidden = h.value().cols();
    if (U.value().rows() != hidden || U.value().cols() != 4 * hidden)
        throw ShapeError("lstm_step: recurrent weights " + ad::shape_str(U.shape()) +
                         " do not match hidden state " + ad::shape_str(h.shape()));
    if (!c.value().same_shape(h.value()))
        throw ShapeError("lstm_step: cell state " + ad::shape_str(c.shape()) +
                         " does not match hidden state " + ad::shape_str(h.shape()));
    auto z = ad::add(x_proj, ad::matmul(h, U));
    auto i = ad::sigmoid(ad::slice_cols(z, 0, hidden));
    auto f = ad::sigmoid(ad::slice_cols(z, hidden, hidden));
    auto o = ad::sigmoid(ad::slice_cols(z, 2 * hidden, hidden));
    auto g = ad::tanh(ad::slice_cols(z, 3 * hidden, hidden));
    auto c_next = ad::add(ad::mul(f, c), ad::mul(i, g));
    auto h_next = ad::mul(o, ad::tanh(c_next));
    return {h_next, c_next};
}

template <typename T>
CellOutput<T> lstm_cell_step(Var<T> x, Var<T> h, Var<T> c, Var<T> W, Var<T> U, Var<T> b)
{
    if (x.value().cols() != W.value().rows())
        throw ShapeError("lstm_cell_step: input " + ad::shape_str(x.shape()) +
                         " does not match input weights " + ad::shape_str(W.shape()));
    return lstm_step_projected(ad::add_bias(ad::matmul(x, W), b), h, c, U);
}

// ---------------------------------------------------------------- dropout

template <typename T>
Tensor<T> keep_mask(const ad::Shape& shape, double p, Rng& rng)
{
    Tensor<T> mask(shape);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.bernoulli(p) ? T(0) : T(1);
    return mask;
}

template <typename T>
Var<T> weight_drop(Var<T> weights, double p, Rng& rng)
{
    check_rate("p_weight", p);
    if (p == 0.0)
        return weights;
    return ad::apply_mask(weights, keep_mask<T>(weights.shape(), p, rng),
                          static_cast<T>(1.0 / (1.0 - p)));
}

template <typename T>
Var<T> embedding_dropout(Var<T> embedding, double p, Rng& rng)
{
    check_rate("p_emb", p);
    if (p == 0.0)
        return embedding;
    const auto& v = embedding.value();
    const std::size_t rows = v.rows(), cols = v.cols();
    Tensor<T> mask(v.shape());
    for (std::size_t r = 0; r < rows; ++r)
    {
        const T keep = rng.bernoulli(p) ? T(0) : T(1);
        for (std::size_t j = 0; j < cols; ++j)
            mask[r * cols + j] = keep;
    }
    return ad::apply_mask(embedding, mask, static_cast<T>(1.0 / (1.0 - p)));
}

template <typename T>
std::vector<Var<T>> variational_dropout(std::span<const Var<T>> steps, double p, Rng& rng)
{
    check_rate("p_hidden", p);
    std::vector<Var<T>> out(steps.begin(), steps.end());
    if (p == 0.0 || steps.empty())
        return out;
    const auto mask = keep_mask<T>(steps[0].shape(), p, rng);
    const auto factor = static_cast<T>(1.0 / (1.0 - p));
    for (auto& s : out)
        s = ad::apply_mask(s, mask, factor);
    return out;
}

template <typename T>
Var<T> variational_dropout_stacked(Var<T> stacked, std::size_t batch, double p, Rng& rng)
{
    check_rate("p_hidden", p);
    if (p == 0.0)
        return stacked;
    const auto& v = stacked.value();
    const std::size_t d = v.cols();
    if (batch == 0 || v.rows() % batch != 0)
        throw ShapeError("variational_dropout: " + std::to_string(v.rows()) +
                         " rows is not a multiple of batch " + std::to_string(batch));
    const auto base = keep_mask<T>(ad::Shape{batch, d}, p, rng);
    Tensor<T> mask(v.shape());
    for (std::size_t r = 0; r < v.rows(); ++r)
        std::copy_n(base.data() + (r % batch) * d, d, mask.data() + r * d);
    return ad::apply_mask(stacked, mask, static_cast<T>(1.0 / (1.0 - p)));
}

// ---------------------------------------------------------------- encoder

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, Rng& init) : config_(config)
{
    config_.validate();
    embedding_ = Parameter<T>(
        "encoder.embedding",
        uniform_tensor<T>({config_.vocab_size, config_.emb_size}, 0.1, init), 0);
    for (std::size_t l = 0; l < config_.n_layers; ++l)
    {
        LstmLayer<T> layer;
        layer.input_dim = config_.layer_input_dim(l);
        layer.hidden_dim = config_.layer_output_dim(l);
        const std::size_t h = layer.hidden_dim;
        const double bound = 1.0 / std::sqrt(static_cast<double>(h));
        const std::string prefix = "encoder.lstm" + std::to_string(l) + ".";
        layer.W = Parameter<T>(prefix + "W", uniform_tensor<T>({layer.input_dim, 4 * h}, bound, init),
                               l + 1);
        layer.U = Parameter<T>(prefix + "U", uniform_tensor<T>({h, 4 * h}, bound, init), l + 1);
        Tensor<T> bias(ad::Shape{4 * h});
        for (std::size_t j = 0; j < h; ++j)
            bias[static_cast<std::size_t>(Gate::Forget) * h + j] = T(1);
        layer.b = Parameter<T>(prefix + "b", std::move(bias), l + 1);
        layers_.push_back(std::move(layer));
    }
}

template <typename T>
std::vector<Parameter<T>*> Encoder<T>::parameters()
{
    std::vector<Parameter<T>*> out{&embedding_};
    for (auto& l : layers_)
    {
        out.push_back(&l.W);
        out.push_back(&l.U);
        out.push_back(&l.b);
    }
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Encoder<T>::parameters() const
{
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<Encoder*>(this)->parameters())
        out.push_back(p);
    return out;
}

template <typename T>
EncoderOutput<T> Encoder<T>::forward(Tape<T>& tape, std::span<const TokenId> ids,
                                     std::size_t batch, std::size_t steps,
                                     const RecurrentState<T>* initial, Mode mode)
{
    if (batch == 0 || steps == 0 || ids.size() != batch * steps)
        throw ShapeError("encoder: expected " + std::to_string(batch) + "x" +
                         std::to_string(steps) + " ids, got " + std::to_string(ids.size()));
    if (mode.training && !mode.rng)
        throw UsageError("encoder: training mode needs a random source");
    const bool has_state = initial && !initial->empty();
    if (has_state && (initial->h.size() != layers_.size() || initial->c.size() != layers_.size()))
        throw ShapeError("encoder: carried state has " + std::to_string(initial->h.size()) +
                         " layers, model has " + std::to_string(layers_.size()));

    std::vector<TokenId> time_major(ids.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < steps; ++t)
            time_major[t * batch + b] = ids[b * steps + t];

    Var<T> emb = tape.parameter(embedding_);
    if (mode.training && config_.p_emb > 0)
        emb = embedding_dropout(emb, config_.p_emb, *mode.rng);
    Var<T> x = ad::embedding_lookup(emb, std::span<const TokenId>(time_major));
    if (mode.training && config_.p_input > 0)
        x = variational_dropout_stacked(x, batch, config_.p_input, *mode.rng);

    EncoderOutput<T> out;
    for (std::size_t l = 0; l < layers_.size(); ++l)
    {
        auto& layer = layers_[l];
        const std::size_t h_dim = layer.hidden_dim;
        Var<T> proj = linear(tape, x, layer.W, layer.b);
        Var<T> U = tape.parameter(layer.U);
        if (mode.training && config_.p_weight > 0)
            U = weight_drop(U, config_.p_weight, *mode.rng);

        Var<T> h, c;
        if (has_state)
        {
            const ad::Shape expected{batch, h_dim};
            if (initial->h[l].shape() != expected || initial->c[l].shape() != expected)
                throw ShapeError("encoder: carried state for layer " + std::to_string(l) +
                                 " has shape " + ad::shape_str(initial->h[l].shape()) +
                                 ", expected " + ad::shape_str(expected));
            h = tape.constant(initial->h[l]);
            c = tape.constant(initial->c[l]);
        }
        else
        {
            h = tape.constant(Tensor<T>::matrix(batch, h_dim));
            c = tape.constant(Tensor<T>::matrix(batch, h_dim));
        }

        std::vector<Var<T>> outputs;
        outputs.reserve(steps);
        for (std::size_t t = 0; t < steps; ++t)
        {
            auto cell = lstm_step_projected(ad::slice_rows(proj, t * batch, batch), h, c, U);
            h = cell.h;
            c = cell.c;
            outputs.push_back(h);
        }
        out.state.h.push_back(h.value());
        out.state.c.push_back(c.value());

        if (l + 1 < layers_.size())
        {
            x = ad::concat(std::span<const Var<T>>(outputs), 0);
            if (mode.training && config_.p_hidden > 0)
                x = variational_dropout_stacked(x, batch, config_.p_hidden, *mode.rng);
        }
        else
        {
            out.outputs = std::move(outputs);
        }
    }
    return out;
}

// ---------------------------------------------------------------- language model

template <typename T>
LanguageModel<T>::LanguageModel(const ModelConfig& config, Rng& init) : encoder_(config, init)
{
    const auto& cfg = encoder_.config();
    const std::size_t group = cfg.n_layers + 1;
    if (!cfg.tie_weights)
        decoder_weight_ = Parameter<T>(
            "decoder.weight",
            uniform_tensor<T>({cfg.vocab_size, encoder_.output_dim()}, 0.1, init), group);
    decoder_bias_ = Parameter<T>("decoder.bias", Tensor<T>(ad::Shape{cfg.vocab_size}), group);
}

template <typename T>
std::vector<Parameter<T>*> LanguageModel<T>::parameters()
{
    auto out = encoder_.parameters();
    if (decoder_weight_)
        out.push_back(&*decoder_weight_);
    out.push_back(&decoder_bias_);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> LanguageModel<T>::parameters() const
{
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<LanguageModel*>(this)->parameters())
        out.push_back(p);
    return out;
}

template <typename T>
LmOutput<T> LanguageModel<T>::forward(Tape<T>& tape, const LmBatch& batch,
                                      const RecurrentState<T>* carried, Mode mode)
{
    const std::size_t B = batch.batch_size, steps = batch.bptt;
    auto enc = encoder_.forward(tape, batch.inputs, B, steps, carried, mode);
    Var<T> hidden = ad::concat(std::span<const Var<T>>(enc.outputs), 0);

    Var<T> proj = decoder_weight_ ? tape.parameter(*decoder_weight_)
                                  : tape.parameter(encoder_.embedding());
    Var<T> logits = ad::add_bias(ad::matmul_nt(hidden, proj), tape.parameter(decoder_bias_));

    std::vector<TokenId> targets(batch.targets.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < steps; ++t)
            targets[t * B + b] = batch.targets[b * steps + t];

    LmOutput<T> out;
    out.logits = logits;
    out.nll = ad::cross_entropy(logits, std::span<const TokenId>(targets), Vocab::kPad);
    out.loss = out.nll;
    const auto& cfg = encoder_.config();
    if (mode.training && cfg.ar_alpha > 0)
        out.loss = ad::add(out.loss, ad::scale(ad::mean(ad::mul(hidden, hidden)),
                                               static_cast<T>(cfg.ar_alpha)));
    if (mode.training && cfg.tar_beta > 0 && steps > 1)
    {
        const std::size_t n = (steps - 1) * B;
        auto diff = ad::sub(ad::slice_rows(hidden, B, n), ad::slice_rows(hidden, 0, n));
        out.loss = ad::add(out.loss, ad::scale(ad::mean(ad::mul(diff, diff)),
                                               static_cast<T>(cfg.tar_beta)));
    }
    out.state = std::move(enc.state);
    return out;
}

// ---------------------------------------------------------------- classifier

template <typename T>
Classifier<T>::Classifier(const ModelConfig& config, Rng& init) : encoder_(config, init)
{
    const auto& cfg = encoder_.config();
    const std::size_t group = cfg.n_layers + 1;
    const std::size_t rep = 3 * encoder_.output_dim();
    const double b1 = 1.0 / std::sqrt(static_cast<double>(rep));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(cfg.head_hidden));
    head_.fc1_W = Parameter<T>("head.fc1.W", uniform_tensor<T>({rep, cfg.head_hidden}, b1, init),
                               group);
    head_.fc1_b = Parameter<T>("head.fc1.b", Tensor<T>(ad::Shape{cfg.head_hidden}), group);
    head_.fc2_W = Parameter<T>(
        "head.fc2.W", uniform_tensor<T>({cfg.head_hidden, cfg.n_classes}, b2, init), group);
    head_.fc2_b = Parameter<T>("head.fc2.b", Tensor<T>(ad::Shape{cfg.n_classes}), group);

    const auto norm = [&](const std::string& name, std::size_t d, Parameter<T>& gamma,
                          Parameter<T>& beta, ad::BatchNormStats<T>& stats) {
        gamma = Parameter<T>(name + ".gamma", Tensor<T>(ad::Shape{d}, T(1)), group);
        beta = Parameter<T>(name + ".beta", Tensor<T>(ad::Shape{d}), group);
        stats.mean = Tensor<T>(ad::Shape{d});
        stats.var = Tensor<T>(ad::Shape{d}, T(1));
    };
    norm("head.bn1", rep, head_.bn1_gamma, head_.bn1_beta, head_.bn1);
    norm("head.bn2", cfg.head_hidden, head_.bn2_gamma, head_.bn2_beta, head_.bn2);
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::head_parameters()
{
    return {&head_.bn1_gamma, &head_.bn1_beta, &head_.fc1_W, &head_.fc1_b,
            &head_.bn2_gamma, &head_.bn2_beta, &head_.fc2_W, &head_.fc2_b};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Classifier<T>::buffers()
{
    return {{"head.bn1.mean", &head_.bn1.mean},
            {"head.bn1.var", &head_.bn1.var},
            {"head.bn2.mean", &head_.bn2.mean},
            {"head.bn2.var", &head_.bn2.var}};
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Classifier<T>::buffers() const
{
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (const auto& [name, t] : const_cast<Classifier*>(this)->buffers())
        out.emplace_back(name, t);
    return out;
}

template <typename T>
std::vector<Parameter<T>*> Classifier<T>::parameters()
{
    auto out = encoder_.parameters();
    for (auto* p : head_parameters())
        out.push_back(p);
    return out;
}

template <typename T>
std::vector<const Parameter<T>*> Classifier<T>::parameters() const
{
    std::vector<const Parameter<T>*> out;
    for (auto* p : const_cast<Classifier*>(this)->parameters())
        out.push_back(p);
    return out;
}

template <typename T>
ClfOutput<T> Classifier<T>::forward(Tape<T>& tape, const ClfBatch& batch, Mode mode)
{
    for (std::size_t b = 0; b < batch.batch_size; ++b)
        if (batch.lengths[b] == 0)
            throw DataError("classifier batch row " + std::to_string(b) + " is all padding");

    auto enc = encoder_.forward(tape, batch.ids, batch.batch_size, batch.width, nullptr, mode);
    const std::span<const Var<T>> steps(enc.outputs);
    const std::span<const std::size_t> lengths(batch.lengths);
    const Var<T> parts[] = {ad::last_over_time(steps, lengths),
                            ad::masked_max_over_time(steps, lengths),
                            ad::masked_mean_over_time(steps, lengths)};
    Var<T> rep = ad::concat(std::span<const Var<T>>(parts), 1);

    const auto& cfg = encoder_.config();
    const bool batch_stats = mode.training && batch.batch_size > 1;
    rep = ad::batch_norm(rep, tape.parameter(head_.bn1_gamma), tape.parameter(head_.bn1_beta),
                         head_.bn1, batch_stats);
    Var<T> z = ad::relu(linear(tape, rep, head_.fc1_W, head_.fc1_b));
    z = ad::batch_norm(z, tape.parameter(head_.bn2_gamma), tape.parameter(head_.bn2_beta),
                       head_.bn2, batch_stats);
    if (mode.training && cfg.p_head > 0)
        z = ad::apply_mask(z, keep_mask<T>(z.shape(), cfg.p_head, *mode.rng),
                           static_cast<T>(1.0 / (1.0 - cfg.p_head)));
    Var<T> logits = linear(tape, z, head_.fc2_W, head_.fc2_b);

    std::vector<TokenId> labels(batch.labels.begin(), batch.labels.end());
    return {logits, ad::cross_entropy(logits, std::span<const TokenId>(labels))};
}

template <typename T>
Classifier<T> transfer_encoder(const LanguageModel<T>& lm, const ModelConfig& clf_config,
                               Rng& init)
{
    const auto& src = lm.config();
    if (src.vocab_size != clf_config.vocab_size || src.emb_size != clf_config.emb_size ||
        src.hidden_size != clf_config.hidden_size || src.n_layers != clf_config.n_layers ||
        src.tie_weights != clf_config.tie_weights)
        throw UsageError("transfer_encoder: classifier architecture does not match the "
                         "language model encoder");
    Classifier<T> clf(clf_config, init);
    auto dst = clf.encoder_parameters();
    const auto from = lm.encoder().parameters();
    for (std::size_t i = 0; i < dst.size(); ++i)
    {
        dst[i]->value = from[i]->value;
        dst[i]->zero_grad();
        dst[i]->frozen = true;
    }
    return clf;
}

#define OPSC_INSTANTIATE(T)                                                                      \
    template struct LstmLayer<T>;                                                                \
    template CellOutput<T> lstm_step_projected(Var<T>, Var<T>, Var<T>, Var<T>);                  \
    template CellOutput<T> lstm_cell_step(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, Var<T>);       \
    template Tensor<T> keep_mask<T>(const ad::Shape&, double, Rng&);                             \
    template Var<T> weight_drop(Var<T>, double, Rng&);                                           \
    template Var<T> embedding_dropout(Var<T>, double, Rng&);                                     \
    template std::vector<Var<T>> variational_dropout(std::span<const Var<T>>, double, Rng&);     \
    template Var<T> variational_dropout_stacked(Var<T>, std::size_t, double, Rng&);              \
    template class Encoder<T>;                                                                   \
    template class LanguageModel<T>;                                                             \
    template class Classifier<T>;                                                                \
    template Classifier<T> transfer_encoder(const LanguageModel<T>&, const ModelConfig&, Rng&);

OPSC_INSTANTIATE(float)
OPSC_INSTANTIATE(double)

#undef OPSC_INSTANTIATE

}  // namespace opsc::model
