#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrem/tensor.hpp"

namespace advrem {

inline constexpr double kInitRange = 0.08;

struct EmbeddingTable {
  Tensor matrix;  // [vocab_size x dim]

  std::size_t vocab_size() const { return matrix.rows(); }
  std::size_t dim() const { return matrix.cols(); }
};

/// Single-layer LSTM. The four gates are stored side by side as column
/// blocks in the order input, forget, output, candidate:
///   input_weights [input_dim x 4H], recurrent_weights [H x 4H], bias [4H].
struct LstmParams {
  Tensor input_weights;
  Tensor recurrent_weights;
  Tensor bias;

  std::size_t input_dim() const { return input_weights.rows(); }
  std::size_t hidden_dim() const { return recurrent_weights.rows(); }
};

/// Perceptron with tanh hidden layers and a linear output layer.
struct MlpParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t input_dim() const { return weights.front().rows(); }
  std::size_t output_dim() const { return weights.back().cols(); }
  std::size_t hidden_layers() const { return weights.size() - 1; }
  std::vector<Tensor> parameters() const;
  MlpParams clone() const;
};

struct Encoder {
  EmbeddingTable embedding;
  LstmParams lstm;

  std::size_t hidden_dim() const { return lstm.hidden_dim(); }
  std::vector<Tensor> parameters() const;
  Encoder clone() const;
};

struct DropoutConfig {
  double p = 0.0;
  bool training = false;
};

EmbeddingTable init_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng);
LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                     double forget_bias = 0.0);
/// hidden_dims may hold several entries for deeper heads; it must not be empty.
MlpParams init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden_dims,
                   std::size_t output_dim, Rng& rng);
/// Re-draws every weight of an existing head in place (biases back to zero).
void reinit_mlp(MlpParams& mlp, Rng& rng);

/// Encodes a batch of variable-length sequences given their embedded rows packed
/// back to back (rows [offset_b, offset_b + lengths[b]) belong to sequence b).
/// Every sequence runs its own recurrence from zero state; the result holds the
/// final hidden state of each sequence, one row per sequence: [B x H].
Tensor lstm_encode_packed(Tape* tape, const LstmParams& params, const Tensor& embedded,
                          std::span<const std::size_t> lengths);

/// Single-sequence form: embedded is [m x input_dim], result [1 x H].
Tensor lstm_encode(Tape* tape, const LstmParams& params, const Tensor& embedded);

/// Embedding lookup followed by the LSTM, one output row per sequence.
Tensor encode_batch(Tape* tape, const Encoder& encoder,
                    const std::vector<std::span<const int>>& sequences);

Tensor mlp_forward(Tape* tape, const MlpParams& params, const Tensor& input,
                   const DropoutConfig& dropout, Rng& rng);

// --- checkpoints -----------------------------------------------------------

/// Binary checkpoint layout (little-endian):
///   8 bytes   magic "ADVRCKPT"
///   u32       format version (1)
///   u64       header length N
///   N bytes   UTF-8 JSON: {"config": {...}, "tensors": [{"name", "shape"}...]}
///   then for each tensor in header order: prod(shape) IEEE-754 float64 values.
struct Checkpoint {
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void add_encoder(Checkpoint& ck, const std::string& prefix, const Encoder& encoder);
void add_mlp(Checkpoint& ck, const std::string& prefix, const MlpParams& mlp);
Encoder read_encoder(const Checkpoint& ck, const std::string& prefix);
MlpParams read_mlp(const Checkpoint& ck, const std::string& prefix);

}  // namespace advrem
