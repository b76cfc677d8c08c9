#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "advrem/audit.hpp"

namespace advrem {

inline constexpr const char* kToolVersion = "0.1.0";

/// 16 hex digits of FNV-1a over the bytes.
std::string digest(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

// --- manifest ------------------------------------------------------------------------

struct StageRecord {
  std::string hash;
  std::string status;  // "done" or "failed"
  std::vector<std::string> artifacts;
  std::string error;
};

/// <dir>/manifest.json: one record per stage. A stage is fresh when it finished
/// with the same input hash and every artifact it listed is still on disk.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path dir);

  bool fresh(const std::string& stage, const std::string& hash) const;
  void record(const std::string& stage, StageRecord record);
  const std::map<std::string, StageRecord>& stages() const { return stages_; }
  std::string spec_hash;

 private:
  void save() const;
  std::filesystem::path dir_;
  std::map<std::string, StageRecord> stages_;
};

struct StageOutcome {
  bool skipped = false;
  nlohmann::json summary;
};

// --- data stages ---------------------------------------------------------------------

DeriveSummary derive_file(const std::filesystem::path& input, const std::filesystem::path& output,
                          DeriveTask task, const SentimentLexicon& lexicon,
                          std::optional<int> default_z = std::nullopt, bool lowercase = false);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

/// Writes the generated pool as a corpus TSV; returns the example count.
std::size_t generate_file(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& output);

struct SplitRequest {
  SplitSizes sizes;
  std::optional<double> unbalanced_q;  // balanced when empty
  std::uint64_t seed = 1;
};

/// train.tsv, dev.tsv and rest.tsv (pool examples in neither split) under out_dir.
nlohmann::json split_file(const std::filesystem::path& corpus, const std::filesystem::path& out_dir,
                          const SplitRequest& request);

// --- training and audit stages ----------------------------------------------------------

/// Files: config.txt, model.ckpt, stats.jsonl, timing.jsonl, summary.json.
StageOutcome train_stage(const std::filesystem::path& train, const std::filesystem::path& dev,
                         const TrainingConfig& config, const std::filesystem::path& run_dir);

AttackerConfig attacker_config_from_json(const nlohmann::json& j, AttackerConfig base = {});

/// Reads <run_dir>/model.ckpt. Files: train_vectors.tsv, dev_vectors.tsv,
/// attacker.ckpt, attacker.json, predictions.jsonl, leakage.json, fairness.json.
StageOutcome audit_stage(const std::filesystem::path& run_dir, const std::filesystem::path& train,
                         const std::filesystem::path& dev, const AttackerConfig& attacker);

/// Attacker on externally produced vector dumps; no main-task numbers.
StageOutcome audit_vectors_stage(const std::filesystem::path& train_vectors,
                                 const std::filesystem::path& dev_vectors, const AttackerConfig& attacker,
                                 const std::filesystem::path& out_dir);

// --- analyses ----------------------------------------------------------------------------------

/// All four embedding/RNN combinations: attacker accuracy on z and a fresh probe on y.
nlohmann::json fusion_analysis(const std::filesystem::path& leaky_run, const std::filesystem::path& guarded_run,
                               const std::filesystem::path& train, const std::filesystem::path& dev,
                               const AttackerConfig& attacker, const std::filesystem::path& out_dir);

/// Reads predictions.jsonl of every audited run; writes consistency.json and
/// consistent_examples.tsv.
nlohmann::json consistency_stage(const std::vector<std::filesystem::path>& run_dirs,
                                 const std::filesystem::path& dev, std::size_t threshold,
                                 const std::filesystem::path& out_dir);

/// Consumes consistency.json from consistency_dir.
nlohmann::json frequency_stage(const std::filesystem::path& consistency_dir, const std::filesystem::path& dev,
                               const std::filesystem::path& train, const std::filesystem::path& out_dir);

nlohmann::json overfit_stage(const std::filesystem::path& run_dir, const std::filesystem::path& train,
                             const AttackerConfig& attacker, const std::filesystem::path& out_dir);

/// Needs an audited run (attacker.ckpt).
nlohmann::json unseen_stage(const std::filesystem::path& run_dir, const std::filesystem::path& fresh,
                            const std::filesystem::path& train, const std::filesystem::path& dev,
                            const std::filesystem::path& out_dir);

// --- sweeps ---------------------------------------------------------------------------------------

struct SweepSpec {
  TrainingConfig base;
  /// Ordered grid: key -> values; cells are the cartesian product.
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;
  AttackerConfig attacker;
  std::filesystem::path train;
  std::filesystem::path dev;
  std::filesystem::path out_dir;
  std::size_t jobs = 1;
  bool include_baseline = false;

  static SweepSpec from_json(const nlohmann::json& j);
};

struct SweepCell {
  std::string name;
  std::vector<std::pair<std::string, std::string>> settings;
};

std::vector<SweepCell> sweep_cells(const SweepSpec& spec);

/// One train + audit per cell (worker pool of spec.jobs); writes table.jsonl and table.md.
std::vector<TableRow> run_sweep(const SweepSpec& spec);

/// Runs fn(i) for i in [0, n) on up to jobs threads; exceptions are rethrown after all finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// --- reports ---------------------------------------------------------------------------------------

/// Markdown report over run directories (any mix of training, audit and analysis
/// outputs) followed by the labelled full-scale reference numbers.
std::string render_report(const std::vector<std::filesystem::path>& dirs);
/// Static reference numbers, never mixed with measured values.
const nlohmann::json& reference_numbers();

// --- experiment specs --------------------------------------------------------------------------------

/// One JSON file describing a full pipeline: data source, split, named runs,
/// audit options and analyses. See config/experiment.json.
struct ExperimentSpec {
  nlohmann::json raw;
  std::filesystem::path base_dir;  // relative paths resolve against the spec file
  std::filesystem::path output;
  std::uint64_t seed = 1;
  std::vector<std::string> stages;
  std::size_t jobs = 1;

  static ExperimentSpec load(const std::filesystem::path& path);
  /// Throws when a referenced input path is missing.
  void validate() const;
};

/// Runs every stage; returns the report path. Data and split failures stop the
/// run. A failed training run or analysis is recorded in the manifest, the
/// partial report is still written, and one error naming every failure is thrown.
std::filesystem::path run_experiment(const ExperimentSpec& spec);

}  // namespace advrem
