#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <span>
#include <string_view>
#include <vector>

#include "advrem/data.hpp"
#include "advrem/layers.hpp"

namespace advrem {

enum class Target { y, z };
std::string to_string(Target target);
int label_of(const Example& ex, Target target);

/// Hyper-parameters of one training run. Text form is "key = value" per line,
/// '#' starts a comment; see TrainingConfig::parse for the recognised keys.
struct TrainingConfig {
  double lambda = 1.0;
  std::size_t k_adversaries = 0;
  std::size_t embed_dim = 300;
  std::size_t encoder_hidden = 300;
  std::size_t classifier_hidden = 300;
  std::size_t adv_hidden_dim = 300;
  std::size_t adv_layers = 1;
  double lr = 0.01;
  double momentum = 0.9;
  double dropout = 0.2;
  bool dropout_on_encoded = true;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::optional<std::size_t> reinit_period;
  std::optional<std::size_t> delay_epochs;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;
  double forget_bias = 0.0;
  std::size_t min_count = 1;
  std::size_t instability_patience = 10;
  double instability_lambda = 5.0;
  std::size_t eval_batch_size = 512;
  std::vector<std::size_t> checkpoint_epochs;

  void validate() const;
  std::string to_text() const;
  static TrainingConfig parse(std::string_view text);
  /// Applies a single "key=value" override; throws on an unknown key.
  void set(const std::string& key, const std::string& value);
  nlohmann::json to_json() const;
};

/// Encoder plus heads, tied to the vocabulary the embedding rows index.
struct Model {
  Vocabulary vocab;
  Encoder encoder;
  MlpParams classifier;
  std::vector<MlpParams> adversaries;

  Model clone() const;
  std::vector<Tensor> parameters() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double dev_loss = 0.0;
  double dev_acc = 0.0;
  std::vector<double> adversary_train_loss;
  std::vector<double> adversary_dev_acc;
  /// Dev accuracy of freshly re-initialised adversaries, when a reset happened this epoch.
  std::vector<double> adversary_dev_acc_after_reinit;
  double seconds = 0.0;

  /// Stats JSON record; wall time is emitted only when with_timing is set.
  nlohmann::json to_json(bool with_timing = true) const;
};

struct TrainStats {
  std::vector<EpochRecord> epochs;
  bool unstable = false;
  std::string warning;
  bool has_nan = false;

  /// One JSON record per epoch.
  std::string to_jsonl(bool with_timing = true) const;
};

struct ExperimentArtifacts {
  TrainingConfig config;
  Target target = Target::y;
  Model final_model;
  Model best_model;
  std::size_t best_epoch = 0;
  TrainStats stats;
  std::map<std::size_t, Model> checkpoints;

  /// Final-epoch dev accuracy of every adversary.
  std::vector<double> final_adversary_dev_acc() const;
  double final_dev_acc() const;
};

/// Builds a vocabulary from the training split and draws a fresh model.
Model init_model(const Dataset& train, const TrainingConfig& config);

/// Encoder + classifier on one target, no adversary.
ExperimentArtifacts train_single_task(const Dataset& train, const Dataset& dev, Target target,
                                      TrainingConfig config);

/// Encoder + classifier on y with config.k_adversaries reversed adversaries on z.
/// With k_adversaries == 0 this is exactly train_single_task on y.
ExperimentArtifacts train_adversarial(const Dataset& train, const Dataset& dev,
                                      TrainingConfig config);

struct ObjectiveTerms {
  Tensor main_loss;
  std::vector<Tensor> adversary_losses;
  Tensor total;
  Tensor encoded;  // encoder output before dropout
  Tensor main_logits;
  std::vector<Tensor> adversary_logits;
};

/// Dropout and adversary-routing state for one objective evaluation.
struct ObjectiveContext {
  DropoutConfig dropout;
  bool dropout_on_encoded = true;
  double lambda = 1.0;
  /// Adversary branches read a detached copy of the encoding (no gradient to the encoder).
  bool detach_adversaries = false;
  Rng* encoded_rng = nullptr;
  Rng* classifier_rng = nullptr;
  std::vector<Rng>* adversary_rngs = nullptr;
};

/// L_y(c(h), y) + sum_j L_z(adv_j(grl_lambda(h)), z) on one minibatch.
ObjectiveTerms assemble_objective(Tape* tape, const Model& model,
                                  const std::vector<std::span<const int>>& sequences,
                                  std::span<const int> y, std::span<const int> z,
                                  ObjectiveContext& context);

/// Eval-mode encoder output, one row per sequence.
Tensor encode_sequences(const Encoder& encoder, const std::vector<std::vector<int>>& ids,
                        std::size_t batch_size = 512);
std::vector<int> predict(const MlpParams& head, const Tensor& encoded);
double accuracy(std::span<const int> predicted, std::span<const int> gold);
std::vector<int> labels(const Dataset& dataset, Target target);

/// Argmax accuracy of encoder + head on a split, no dropout.
double evaluate(const Encoder& encoder, const MlpParams& head, const Vocabulary& vocab,
                const Dataset& split, Target target);

void save_model(const std::filesystem::path& path, const Model& model,
                const nlohmann::json& extra = nlohmann::json::object());
Model load_model(const std::filesystem::path& path);

}  // namespace advrem
