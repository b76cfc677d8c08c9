#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "advrem/training.hpp"

namespace advrem {

// --- frozen-encoder probes -------------------------------------------------------

/// Eval-mode encodings of every example, in order, with gold y and z attached.
/// Throws when the vocabulary does not match the embedding rows.
VectorDump encode_dataset(const Encoder& encoder, const Vocabulary& vocab, const Dataset& dataset);
VectorDump encode_dataset(const Model& model, const Dataset& dataset);

struct AttackerConfig {
  std::size_t hidden = 300;
  std::size_t epochs = 20;
  double lr = 0.01;
  double momentum = 0.9;
  double dropout = 0.2;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
};

struct AttackerResult {
  MlpParams params;  // weights from the best dev epoch
  double best_dev_acc = 0.0;
  std::size_t best_epoch = 0;
  std::vector<double> dev_acc_per_epoch;
  std::vector<int> dev_predictions;  // from the best epoch
};

/// MLP probe on fixed vectors for an arbitrary binary label; best dev epoch wins
/// (earliest on ties). Throws when the training labels hold a single class.
AttackerResult train_probe(const VectorDump& train, std::span<const int> train_labels,
                           const VectorDump& dev, std::span<const int> dev_labels,
                           const AttackerConfig& config);
/// train_probe on the z labels of the dumps.
AttackerResult train_attacker(const VectorDump& train, const VectorDump& dev, const AttackerConfig& config);

std::vector<int> probe_predict(const MlpParams& params, const VectorDump& vectors);

// --- reports -----------------------------------------------------------------

struct LeakageReport {
  double main_task_acc = 0.0;
  std::vector<double> adversary_dev_acc;
  double attacker_acc = 0.0;
  double leakage = 0.0;      // attacker - 0.5
  double abs_leakage = 0.0;  // |attacker - 0.5|
  std::optional<double> mean_adversary_acc;
  std::optional<double> delta;  // attacker - mean adversary accuracy
  std::string split;
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
};

LeakageReport leakage_report(double main_task_acc, const std::vector<double>& adversary_dev_acc,
                             double attacker_acc, std::string split = "dev",
                             nlohmann::json config = nlohmann::json::object());

struct PredictionRecord {
  std::size_t id = 0;
  int y = 0;
  int z = 0;
  int y_hat = 0;
  std::optional<int> z_hat;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PredictionRecord from_json(const nlohmann::json& j);
};

/// Gaps of the main classifier's predictions across z; std::nullopt marks a gap
/// whose conditioning cell is empty.
struct FairnessReport {
  std::optional<double> demographic_parity_gap;
  std::optional<double> equalized_odds_gap_y0;
  std::optional<double> equalized_odds_gap_y1;
  std::optional<double> equality_of_opportunity_gap;

  /// True when every gap is defined and at most tolerance.
  bool consistent_with_guardedness(double tolerance) const;
  nlohmann::json to_json(double tolerance = 0.0) const;
};

FairnessReport fairness_report(std::span<const PredictionRecord> predictions);

// --- analyses --------------------------------------------------------------------

enum class Part { leaky, guarded };
std::string to_string(Part part);

struct FusedEncoder {
  Part embedding_source = Part::leaky;
  Part rnn_source = Part::leaky;
  Encoder encoder;
  Vocabulary vocab;
};

/// Embedding table of one model joined with the recurrent module of another.
FusedEncoder fuse_encoders(const Model& leaky, const Model& guarded, Part embedding_from, Part rnn_from);

struct ConsistencyResult {
  std::size_t n_seeds = 0;
  std::size_t threshold = 0;
  std::vector<std::size_t> correct_consistent;  // >= threshold seeds predict the gold z
  std::vector<std::size_t> consistent;          // >= threshold seeds agree on some label
  std::vector<std::size_t> random_group;        // seeds split as evenly as possible

  nlohmann::json to_json() const;
};

/// predictions[s][i]: attacker of seed s on example i.
ConsistencyResult consistency_analysis(const std::vector<std::vector<int>>& predictions,
                                       std::span<const int> gold_z, std::size_t threshold);

/// P(X >= k) for X ~ Binomial(n, p).
double binomial_upper_tail(std::size_t n, std::size_t k, double p);

enum class Alternative { less, greater, two_sided };

struct MannWhitneyResult {
  double u_a = 0.0;
  double u_b = 0.0;
  double p_value = 1.0;
  bool exact = false;
  double z_score = 0.0;  // normal approximation only
};

/// Rank-sum test of sample_a against sample_b with midranks for ties.
/// Alternative::less tests whether a tends to be smaller than b. Exact
/// enumeration of rank-sum arrangements when n_a + n_b < 20, otherwise the
/// tie-corrected normal approximation with continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> sample_a, std::span<const double> sample_b,
                                 Alternative alternative);

struct FrequencyStudy {
  std::vector<std::string> consistent_words;
  std::vector<std::string> random_words;
  std::vector<double> consistent_frequencies;
  std::vector<double> random_frequencies;
  MannWhitneyResult test;

  nlohmann::json to_json() const;
};

/// Words of the consistent group against words of the random group, after
/// discarding every word seen in both; each word is weighted by its training
/// frequency and the test asks whether consistent-group words are rarer.
FrequencyStudy frequency_study(const Dataset& examined, const std::vector<std::size_t>& consistent_ids,
                               const std::vector<std::size_t>& random_ids,
                               const std::unordered_map<std::string, std::size_t>& train_frequencies);

/// Attacker trained on 90% of the encoded training split, scored on the other 10%
/// (a tenth of each (y, z) cell, drawn with config.seed).
AttackerResult overfit_check(const Encoder& encoder, const Vocabulary& vocab, const Dataset& train,
                             const AttackerConfig& config);

struct UnseenResult {
  double accuracy = 0.0;
  std::size_t examples = 0;
};

/// Scores an already trained attacker on examples none of which occur in train or dev.
UnseenResult unseen_data_check(const Encoder& encoder, const Vocabulary& vocab, const MlpParams& attacker,
                               const Dataset& fresh, const Dataset& train, const Dataset& dev);

// --- tables -------------------------------------------------------------------------

struct TableRow {
  std::string method;
  std::string parameter;
  double task_acc = 0.0;
  double abs_leakage = 0.0;
  std::optional<double> delta;
  bool unstable = false;
  bool failed = false;
  std::string error;
};

/// Markdown table: Method | Parameter | Task Acc | |leakage|*100 | Delta*100. The row
/// with the lowest leakage per method is set in bold.
std::string render_table(const std::vector<TableRow>& rows);

}  // namespace advrem
