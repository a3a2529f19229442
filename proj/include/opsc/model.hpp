// opsc: opcode-sequence smart contract classifier
// Copyright 2026 The opsc Authors.
// Licensed under the Apache License, Version 2.0.

#pragma once

// AWD-LSTM encoder with a next-opcode decoder (language model) and a pooled
// classification head. Regularization follows the weight-dropped LSTM
// recipe: embedding (row) dropout, variational dropout with one mask per
// sequence, and DropConnect on the hidden-to-hidden weights.

#include "opsc/autodiff.hpp"
#include "opsc/corpus.hpp"
#include "opsc/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace opsc::model
{
using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

struct ModelConfig
{
    std::size_t vocab_size = 0;
    std::size_t emb_size = 64;
    std::size_t hidden_size = 64;
    std::size_t n_layers = 3;
    bool tie_weights = true;

    double p_emb = 0.05;     ///< embedding row dropout
    double p_input = 0.3;    ///< variational dropout on the embedded input
    double p_hidden = 0.3;   ///< variational dropout between LSTM layers
    double p_weight = 0.5;   ///< DropConnect on recurrent weights

    std::size_t head_hidden = 50;
    double p_head = 0.1;
    std::size_t n_classes = kNumClasses;

    /// Activation / temporal activation regularization (off by default).
    double ar_alpha = 0.0;
    double tar_beta = 0.0;

    std::size_t layer_output_dim(std::size_t layer) const;
    std::size_t layer_input_dim(std::size_t layer) const;
    /// Embedding, one per LSTM layer, then decoder or head.
    std::size_t n_layer_groups() const { return n_layers + 2; }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class Gate : std::size_t
{
    Input = 0,
    Forget = 1,
    Output = 2,
    Cell = 3,
};

/// Gates are packed column-wise in the order input, forget, output, cell:
/// W = [W_i W_f W_o W_g] (input_dim x 4h), U likewise (h x 4h), b (4h).
template <typename T>
struct LstmLayer
{
    Parameter<T> W;
    Parameter<T> U;
    Parameter<T> b;
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 0;

    /// Copy of one gate's block, input_dim x h (or h x h for U, h for b).
    Tensor<T> gate_block(const Parameter<T>& packed, Gate gate) const;
};

template <typename T>
struct CellOutput
{
    Var<T> h;
    Var<T> c;
};

/// One LSTM step given the input projection x*W + b (rows x 4h):
/// i,f,o = sigmoid, g = tanh, c' = f*c + i*g, h' = o*tanh(c').
template <typename T>
CellOutput<T> lstm_step_projected(Var<T> x_proj, Var<T> h, Var<T> c, Var<T> U);

template <typename T>
CellOutput<T> lstm_cell_step(Var<T> x, Var<T> h, Var<T> c, Var<T> W, Var<T> U, Var<T> b);

/// Entries are 1 with probability 1-p and 0 otherwise.
template <typename T>
Tensor<T> keep_mask(const ad::Shape& shape, double p, Rng& rng);

/// DropConnect: one element-wise mask for the whole forward pass, scaled by
/// 1/(1-p). Throws UsageError unless 0 <= p < 1.
template <typename T>
Var<T> weight_drop(Var<T> weights, double p, Rng& rng);

/// Zero whole embedding rows with probability p and scale survivors by 1/(1-p).
template <typename T>
Var<T> embedding_dropout(Var<T> embedding, double p, Rng& rng);

/// One rows x d mask shared by every step of the sequence.
template <typename T>
std::vector<Var<T>> variational_dropout(std::span<const Var<T>> steps, double p, Rng& rng);

/// Variational dropout on a time-major stack of steps, (steps*batch) x d.
template <typename T>
Var<T> variational_dropout_stacked(Var<T> stacked, std::size_t batch, double p, Rng& rng);

/// Per-layer hidden and cell values, detached from any tape.
template <typename T>
struct RecurrentState
{
    std::vector<Tensor<T>> h;
    std::vector<Tensor<T>> c;

    bool empty() const { return h.empty(); }
};

/// Dropout switch for a forward pass. rng must be set when training.
struct Mode
{
    bool training = false;
    Rng* rng = nullptr;

    static Mode eval() { return {}; }
    static Mode train(Rng& r) { return {true, &r}; }
};

template <typename T>
struct EncoderOutput
{
    std::vector<Var<T>> outputs;  ///< last layer, one batch x d Var per step
    RecurrentState<T> state;
};

template <typename T>
class Encoder
{
public:
    Encoder() = default;
    Encoder(const ModelConfig& config, Rng& init);

    /// ids is row-major batch x steps. A null or empty initial state starts
    /// from zeros.
    EncoderOutput<T> forward(Tape<T>& tape, std::span<const TokenId> ids, std::size_t batch,
                             std::size_t steps, const RecurrentState<T>* initial, Mode mode);

    Parameter<T>& embedding() { return embedding_; }
    const Parameter<T>& embedding() const { return embedding_; }
    std::vector<LstmLayer<T>>& layers() { return layers_; }
    const std::vector<LstmLayer<T>>& layers() const { return layers_; }
    const ModelConfig& config() const { return config_; }
    std::size_t output_dim() const { return config_.layer_output_dim(config_.n_layers - 1); }

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;

private:
    ModelConfig config_;
    Parameter<T> embedding_;
    std::vector<LstmLayer<T>> layers_;
};

template <typename T>
struct LmOutput
{
    Var<T> logits;  ///< (steps*batch) x vocab, time-major rows
    Var<T> nll;     ///< cross-entropy against the shifted targets
    Var<T> loss;    ///< nll plus any activation regularization
    RecurrentState<T> state;
};

/// Encoder plus a projection back to the vocabulary. When tied the
/// projection is the embedding matrix itself.
template <typename T>
class LanguageModel
{
public:
    LanguageModel() = default;
    LanguageModel(const ModelConfig& config, Rng& init);

    LmOutput<T> forward(Tape<T>& tape, const LmBatch& batch, const RecurrentState<T>* carried,
                        Mode mode);

    Encoder<T>& encoder() { return encoder_; }
    const Encoder<T>& encoder() const { return encoder_; }
    const ModelConfig& config() const { return encoder_.config(); }
    bool tied() const { return !decoder_weight_.has_value(); }
    Parameter<T>& decoder_bias() { return decoder_bias_; }

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;

private:
    Encoder<T> encoder_;
    std::optional<Parameter<T>> decoder_weight_;  // vocab x d when untied
    Parameter<T> decoder_bias_;
};

template <typename T>
struct ClassifierHead
{
    Parameter<T> bn1_gamma;  ///< 3d
    Parameter<T> bn1_beta;
    Parameter<T> fc1_W;  ///< 3d x head_hidden
    Parameter<T> fc1_b;
    Parameter<T> bn2_gamma;  ///< head_hidden
    Parameter<T> bn2_beta;
    Parameter<T> fc2_W;  ///< head_hidden x n_classes
    Parameter<T> fc2_b;
    ad::BatchNormStats<T> bn1;
    ad::BatchNormStats<T> bn2;
};

template <typename T>
struct ClfOutput
{
    Var<T> logits;  ///< batch x n_classes
    Var<T> loss;
};

/// Encoder plus pooled head: concat(last state, masked max, masked mean)
/// -> batch norm -> ReLU layer -> batch norm -> dropout -> class logits.
/// A training batch of one row normalizes with the running statistics.
template <typename T>
class Classifier
{
public:
    Classifier() = default;
    Classifier(const ModelConfig& config, Rng& init);

    ClfOutput<T> forward(Tape<T>& tape, const ClfBatch& batch, Mode mode);

    Encoder<T>& encoder() { return encoder_; }
    const Encoder<T>& encoder() const { return encoder_; }
    ClassifierHead<T>& head() { return head_; }
    const ModelConfig& config() const { return encoder_.config(); }

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    std::vector<Parameter<T>*> encoder_parameters() { return encoder_.parameters(); }
    std::vector<Parameter<T>*> head_parameters();
    /// Batch-norm running statistics by name; not trained, but checkpointed.
    std::vector<std::pair<std::string, Tensor<T>*>> buffers();
    std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

private:
    Encoder<T> encoder_;
    ClassifierHead<T> head_;
};

/// Classifier whose encoder is a value copy of the language model's. The
/// head is freshly initialized and the encoder starts frozen. Classifier
/// dropout and head settings come from clf_config; architecture must match.
template <typename T>
Classifier<T> transfer_encoder(const LanguageModel<T>& lm, const ModelConfig& clf_config,
                               Rng& init);

}  // namespace opsc::model
