#include "advrem/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace advrem {

namespace fs = std::filesystem;
using nlohmann::json;

// --- hashing -------------------------------------------------------------------------------

std::string digest(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string file_digest(const fs::path& path) { return digest(read_text_file(path)); }

namespace {

std::string combine(std::initializer_list<std::string> parts) {
  std::string all;
  for (const auto& p : parts) {
    all += p;
    all += '\x1f';
  }
  return digest(all);
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }
json read_json(const fs::path& path) { return json::parse(read_text_file(path)); }

std::string pct(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(1) << v * 100.0;
  return o.str();
}

std::string fixed3(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(3) << v;
  return o.str();
}

Dataset read_split(const fs::path& path, SplitTag tag) {
  Dataset d;
  d.examples = read_corpus_tsv(path);
  d.tag = tag;
  return d;
}

}  // namespace

// --- manifest ------------------------------------------------------------------------------------

Manifest::Manifest(fs::path dir) : dir_(std::move(dir)) {
  const fs::path file = dir_ / "manifest.json";
  if (!fs::exists(file)) return;
  const json j = read_json(file);
  spec_hash = j.value("spec_hash", "");
  for (const auto& [name, rec] : j.at("stages").items()) {
    StageRecord r;
    r.hash = rec.value("hash", "");
    r.status = rec.value("status", "");
    r.artifacts = rec.value("artifacts", std::vector<std::string>{});
    r.error = rec.value("error", "");
    stages_[name] = r;
  }
}

bool Manifest::fresh(const std::string& stage, const std::string& hash) const {
  const auto it = stages_.find(stage);
  if (it == stages_.end() || it->second.status != "done" || it->second.hash != hash) return false;
  return std::all_of(it->second.artifacts.begin(), it->second.artifacts.end(),
                     [&](const std::string& a) { return fs::exists(dir_ / a); });
}

void Manifest::record(const std::string& stage, StageRecord record) {
  stages_[stage] = std::move(record);
  save();
}

void Manifest::save() const {
  fs::create_directories(dir_);
  json j;
  j["tool_version"] = kToolVersion;
  j["spec_hash"] = spec_hash;
  j["stages"] = json::object();
  for (const auto& [name, r] : stages_) {
    json rec{{"hash", r.hash}, {"status", r.status}, {"artifacts", r.artifacts}};
    if (!r.error.empty()) rec["error"] = r.error;
    j["stages"][name] = rec;
  }
  write_json(dir_ / "manifest.json", j);
}

// --- data stages -----------------------------------------------------------------------------------

DeriveSummary derive_file(const fs::path& input, const fs::path& output, DeriveTask task,
                          const SentimentLexicon& lexicon, std::optional<int> default_z, bool lowercase) {
  DeriveSummary summary;
  const auto examples = derive_corpus(read_text_file(input), task, lexicon, summary, default_z, lowercase);
  write_corpus_tsv(output, examples);
  return summary;
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "per_cell") s.per_cell = v.get<std::size_t>();
    else if (key == "shared_vocab") s.shared_vocab = v.get<std::size_t>();
    else if (key == "zipf_exponent") s.zipf_exponent = v.get<double>();
    else if (key == "y_pool") s.y_pool = v.get<std::size_t>();
    else if (key == "z_pool") s.z_pool = v.get<std::size_t>();
    else if (key == "z_rare_pool") s.z_rare_pool = v.get<std::size_t>();
    else if (key == "z_rare_rate") s.z_rare_rate = v.get<double>();
    else if (key == "min_len") s.min_len = v.get<std::size_t>();
    else if (key == "max_len") s.max_len = v.get<std::size_t>();
    else if (key == "s_y") s.s_y = v.get<double>();
    else if (key == "s_z") s.s_z = v.get<double>();
    else if (key == "y_rate_gap") s.y_rate_gap = v.get<double>();
    else throw std::invalid_argument("synthetic spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  return {{"per_cell", s.per_cell},       {"shared_vocab", s.shared_vocab}, {"zipf_exponent", s.zipf_exponent},
          {"y_pool", s.y_pool},           {"z_pool", s.z_pool},             {"z_rare_pool", s.z_rare_pool},
          {"z_rare_rate", s.z_rare_rate}, {"min_len", s.min_len},           {"max_len", s.max_len},
          {"s_y", s.s_y},                 {"s_z", s.s_z},                   {"y_rate_gap", s.y_rate_gap}};
}

std::size_t generate_file(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& output) {
  const auto pool = generate_synthetic_corpus(spec, seed);
  write_corpus_tsv(output, pool);
  return pool.size();
}

json split_file(const fs::path& corpus, const fs::path& out_dir, const SplitRequest& request) {
  const auto pool = read_corpus_tsv(corpus);
  const Proportions p = request.unbalanced_q ? unbalanced_proportions(*request.unbalanced_q) : balanced_proportions();
  auto [train, dev] = make_split(pool, request.sizes, p, request.seed);
  std::set<std::uint64_t> used;
  for (const auto* d : {&train, &dev})
    for (const auto& ex : d->examples) used.insert(sequence_hash(ex.tokens));
  std::vector<Example> rest;
  for (const auto& ex : pool) {
    if (!used.count(sequence_hash(ex.tokens))) rest.push_back(ex);
  }
  fs::create_directories(out_dir);
  write_corpus_tsv(out_dir / "train.tsv", train.examples);
  write_corpus_tsv(out_dir / "dev.tsv", dev.examples);
  write_corpus_tsv(out_dir / "rest.tsv", rest);
  auto cells = [](const Dataset& d) {
    const auto c = d.cell_counts();
    return json{{"y0z0", c[0][0]}, {"y0z1", c[0][1]}, {"y1z0", c[1][0]}, {"y1z1", c[1][1]}};
  };
  return {{"train", train.size()}, {"dev", dev.size()},  {"rest", rest.size()},
          {"train_cells", cells(train)}, {"dev_cells", cells(dev)}};
}

// --- training and audit ------------------------------------------------------------------------------

StageOutcome train_stage(const fs::path& train, const fs::path& dev, const TrainingConfig& config,
                         const fs::path& run_dir) {
  config.validate();
  Manifest manifest(run_dir);
  const std::string hash = combine({kToolVersion, file_digest(train), file_digest(dev), config.to_text()});
  if (manifest.fresh("train", hash)) return {true, read_json(run_dir / "summary.json")};

  fs::create_directories(run_dir);
  const Dataset tr = read_split(train, SplitTag::train);
  const Dataset dv = read_split(dev, SplitTag::dev);
  const auto art = train_adversarial(tr, dv, config);

  write_text_file(run_dir / "config.txt", config.to_text());
  save_model(run_dir / "model.ckpt", art.final_model, json{{"training", config.to_json()}});
  write_text_file(run_dir / "stats.jsonl", art.stats.to_jsonl(false));
  std::string timing;
  for (const auto& e : art.stats.epochs) timing += json{{"epoch", e.epoch}, {"seconds", e.seconds}}.dump() + "\n";
  write_text_file(run_dir / "timing.jsonl", timing);

  json summary;
  summary["run"] = run_dir.filename().string();
  summary["k_adversaries"] = config.k_adversaries;
  summary["lambda"] = config.lambda;
  summary["seed"] = config.seed;
  summary["epochs"] = config.epochs;
  summary["final_dev_acc"] = art.final_dev_acc();
  summary["best_epoch"] = art.best_epoch;
  summary["best_dev_acc"] = art.stats.epochs.at(art.best_epoch - 1).dev_acc;
  summary["adversary_dev_acc"] = art.final_adversary_dev_acc();
  summary["unstable"] = art.stats.unstable;
  summary["warning"] = art.stats.warning;
  summary["has_nan"] = art.stats.has_nan;
  write_json(run_dir / "summary.json", summary);
  manifest.record("train", {hash, "done", {"config.txt", "model.ckpt", "stats.jsonl", "summary.json"}, ""});
  return {false, summary};
}

AttackerConfig attacker_config_from_json(const json& j, AttackerConfig a) {
  for (const auto& [key, v] : j.items()) {
    if (key == "hidden") a.hidden = v.get<std::size_t>();
    else if (key == "epochs") a.epochs = v.get<std::size_t>();
    else if (key == "lr") a.lr = v.get<double>();
    else if (key == "momentum") a.momentum = v.get<double>();
    else if (key == "dropout") a.dropout = v.get<double>();
    else if (key == "batch_size") a.batch_size = v.get<std::size_t>();
    else if (key == "seed") a.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("attacker config: unknown key '" + key + "'");
  }
  return a;
}

namespace {

void save_probe(const fs::path& path, const MlpParams& params, const json& info) {
  Checkpoint ck;
  ck.config = info;
  add_mlp(ck, "attacker", params);
  save_checkpoint(path, ck);
}

json attacker_json(const AttackerResult& r, const AttackerConfig& cfg) {
  return {{"best_dev_acc", r.best_dev_acc},
          {"best_epoch", r.best_epoch},
          {"dev_acc_per_epoch", r.dev_acc_per_epoch},
          {"config", cfg.to_json()}};
}

}  // namespace

StageOutcome audit_stage(const fs::path& run_dir, const fs::path& train, const fs::path& dev,
                         const AttackerConfig& attacker) {
  Manifest manifest(run_dir);
  const fs::path model_path = run_dir / "model.ckpt";
  if (!fs::exists(model_path)) throw std::runtime_error("audit: no model.ckpt in " + run_dir.string());
  const std::string hash = combine({kToolVersion, file_digest(model_path), file_digest(train), file_digest(dev),
                                    attacker.to_json().dump()});
  if (manifest.fresh("audit", hash)) return {true, read_json(run_dir / "leakage.json")};

  const Model model = load_model(model_path);
  const Dataset tr = read_split(train, SplitTag::train);
  const Dataset dv = read_split(dev, SplitTag::dev);
  const VectorDump tv = encode_dataset(model, tr);
  const VectorDump dvv = encode_dataset(model, dv);
  write_vector_dump(run_dir / "train_vectors.tsv", tv);
  write_vector_dump(run_dir / "dev_vectors.tsv", dvv);

  const AttackerResult att = train_attacker(tv, dvv, attacker);
  save_probe(run_dir / "attacker.ckpt", att.params, attacker.to_json());
  write_json(run_dir / "attacker.json", attacker_json(att, attacker));

  // main-task predictions and per-adversary accuracies on the same dev split
  const Tensor dev_h = encode_sequences(model.encoder, [&] {
    std::vector<std::vector<int>> ids;
    for (const auto& ex : dv.examples) ids.push_back(model.vocab.encode(ex.tokens));
    return ids;
  }());
  const auto y_hat = predict(model.classifier, dev_h);
  const auto gold_y = labels(dv, Target::y);
  const auto gold_z = labels(dv, Target::z);
  std::vector<double> adv_acc;
  for (const auto& adv : model.adversaries) adv_acc.push_back(accuracy(predict(adv, dev_h), gold_z));

  std::vector<PredictionRecord> records;
  std::string lines;
  for (std::size_t i = 0; i < dv.size(); ++i) {
    PredictionRecord r{i, gold_y[i], gold_z[i], y_hat[i], att.dev_predictions[i], attacker.seed};
    lines += r.to_json().dump() + "\n";
    records.push_back(r);
  }
  write_text_file(run_dir / "predictions.jsonl", lines);

  const double task_acc = accuracy(y_hat, gold_y);
  json cfg{{"attacker", attacker.to_json()}};
  if (fs::exists(run_dir / "config.txt")) cfg["training"] = TrainingConfig::parse(read_text_file(run_dir / "config.txt")).to_json();
  const LeakageReport report = leakage_report(task_acc, adv_acc, att.best_dev_acc, "dev", cfg);
  json leak = report.to_json();
  leak["run"] = run_dir.filename().string();
  write_json(run_dir / "leakage.json", leak);
  write_json(run_dir / "fairness.json", fairness_report(records).to_json(0.0));
  manifest.record("audit", {hash,
                            "done",
                            {"train_vectors.tsv", "dev_vectors.tsv", "attacker.ckpt", "attacker.json",
                             "predictions.jsonl", "leakage.json", "fairness.json"},
                            ""});
  return {false, leak};
}

StageOutcome audit_vectors_stage(const fs::path& train_vectors, const fs::path& dev_vectors,
                                 const AttackerConfig& attacker, const fs::path& out_dir) {
  Manifest manifest(out_dir);
  const std::string hash =
      combine({kToolVersion, file_digest(train_vectors), file_digest(dev_vectors), attacker.to_json().dump()});
  if (manifest.fresh("audit", hash)) return {true, read_json(out_dir / "leakage.json")};
  const VectorDump tv = load_vector_dump(train_vectors);
  const VectorDump dv = load_vector_dump(dev_vectors);
  const AttackerResult att = train_attacker(tv, dv, attacker);
  fs::create_directories(out_dir);
  save_probe(out_dir / "attacker.ckpt", att.params, attacker.to_json());
  write_json(out_dir / "attacker.json", attacker_json(att, attacker));
  json leak{{"run", out_dir.filename().string()},
            {"attacker_acc", att.best_dev_acc},
            {"leakage", att.best_dev_acc - 0.5},
            {"abs_leakage", std::abs(att.best_dev_acc - 0.5)},
            {"split", "dev"},
            {"external_vectors", true},
            {"config", {{"attacker", attacker.to_json()}}}};
  write_json(out_dir / "leakage.json", leak);
  manifest.record("audit", {hash, "done", {"attacker.ckpt", "attacker.json", "leakage.json"}, ""});
  return {false, leak};
}

// --- analyses ---------------------------------------------------------------------------------------------

json fusion_analysis(const fs::path& leaky_run, const fs::path& guarded_run, const fs::path& train,
                     const fs::path& dev, const AttackerConfig& attacker, const fs::path& out_dir) {
  const Model leaky = load_model(leaky_run / "model.ckpt");
  const Model guarded = load_model(guarded_run / "model.ckpt");
  const Dataset tr = read_split(train, SplitTag::train);
  const Dataset dv = read_split(dev, SplitTag::dev);
  json out;
  out["leaky"] = leaky_run.filename().string();
  out["guarded"] = guarded_run.filename().string();
  out["cells"] = json::array();
  for (Part rnn : {Part::leaky, Part::guarded}) {
    for (Part emb : {Part::leaky, Part::guarded}) {
      const FusedEncoder f = fuse_encoders(leaky, guarded, emb, rnn);
      const VectorDump tv = encode_dataset(f.encoder, f.vocab, tr);
      const VectorDump dvv = encode_dataset(f.encoder, f.vocab, dv);
      const double z_acc = train_attacker(tv, dvv, attacker).best_dev_acc;
      // validity: a fresh head on the fused outputs still solves the main task
      const double y_acc = train_probe(tv, labels(tr, Target::y), dvv, labels(dv, Target::y), attacker).best_dev_acc;
      out["cells"].push_back({{"rnn", to_string(rnn)}, {"embedding", to_string(emb)},
                              {"attacker_acc", z_acc}, {"main_task_acc", y_acc}});
    }
  }
  fs::create_directories(out_dir);
  write_json(out_dir / "fusion.json", out);
  return out;
}

namespace {

std::vector<PredictionRecord> read_predictions(const fs::path& file) {
  std::vector<PredictionRecord> out;
  std::istringstream in(read_text_file(file));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(PredictionRecord::from_json(json::parse(line)));
  }
  return out;
}

std::vector<std::size_t> read_ids(const json& j) { return j.get<std::vector<std::size_t>>(); }

}  // namespace

json consistency_stage(const std::vector<fs::path>& run_dirs, const fs::path& dev, std::size_t threshold,
                       const fs::path& out_dir) {
  if (run_dirs.empty()) throw std::invalid_argument("consistency: no runs");
  const Dataset dv = read_split(dev, SplitTag::dev);
  std::vector<std::vector<int>> predictions;
  for (const auto& dir : run_dirs) {
    const auto recs = read_predictions(dir / "predictions.jsonl");
    if (recs.size() != dv.size()) throw DimensionError("consistency: " + dir.string() + " covers a different dev split");
    std::vector<int> z_hat;
    for (const auto& r : recs) {
      if (!r.z_hat) throw std::invalid_argument("consistency: run without attacker predictions");
      z_hat.push_back(*r.z_hat);
    }
    predictions.push_back(std::move(z_hat));
  }
  const auto gold = labels(dv, Target::z);
  const ConsistencyResult r = consistency_analysis(predictions, gold, threshold);
  json out = r.to_json();
  out["consistent_ids"] = r.consistent;
  out["random_ids"] = r.random_group;
  out["expected_correct_by_chance"] =
      binomial_upper_tail(r.n_seeds, threshold, 0.5) * static_cast<double>(dv.size());
  std::vector<Example> shown;
  for (std::size_t id : r.correct_consistent) shown.push_back(dv.examples[id]);
  fs::create_directories(out_dir);
  write_corpus_tsv(out_dir / "consistent_examples.tsv", shown);
  write_json(out_dir / "consistency.json", out);
  return out;
}

json frequency_stage(const fs::path& consistency_dir, const fs::path& dev, const fs::path& train,
                     const fs::path& out_dir) {
  const json c = read_json(consistency_dir / "consistency.json");
  const Dataset dv = read_split(dev, SplitTag::dev);
  const auto freq = token_frequencies(read_corpus_tsv(train));
  const FrequencyStudy s = frequency_study(dv, read_ids(c.at("consistent_ids")), read_ids(c.at("random_ids")), freq);
  json out = s.to_json();
  fs::create_directories(out_dir);
  write_json(out_dir / "frequency.json", out);
  return out;
}

json overfit_stage(const fs::path& run_dir, const fs::path& train, const AttackerConfig& attacker,
                   const fs::path& out_dir) {
  const Model m = load_model(run_dir / "model.ckpt");
  const AttackerResult r = overfit_check(m.encoder, m.vocab, read_split(train, SplitTag::train), attacker);
  json out{{"run", run_dir.filename().string()}, {"heldout_attacker_acc", r.best_dev_acc}, {"best_epoch", r.best_epoch}};
  if (fs::exists(run_dir / "summary.json")) {
    const json s = read_json(run_dir / "summary.json");
    const auto adv = s.at("adversary_dev_acc").get<std::vector<double>>();
    if (!adv.empty()) {
      double mean = 0.0;
      for (double a : adv) mean += a;
      mean /= static_cast<double>(adv.size());
      out["delta"] = r.best_dev_acc - mean;
    }
  }
  fs::create_directories(out_dir);
  write_json(out_dir / "overfit.json", out);
  return out;
}

json unseen_stage(const fs::path& run_dir, const fs::path& fresh, const fs::path& train, const fs::path& dev,
                  const fs::path& out_dir) {
  const Model m = load_model(run_dir / "model.ckpt");
  const Checkpoint ck = load_checkpoint(run_dir / "attacker.ckpt");
  const MlpParams attacker = read_mlp(ck, "attacker");
  const UnseenResult r = unseen_data_check(m.encoder, m.vocab, attacker, read_split(fresh, SplitTag::heldout),
                                           read_split(train, SplitTag::train), read_split(dev, SplitTag::dev));
  json out{{"run", run_dir.filename().string()}, {"unseen_attacker_acc", r.accuracy}, {"examples", r.examples}};
  if (fs::exists(run_dir / "leakage.json")) out["dev_attacker_acc"] = read_json(run_dir / "leakage.json").at("attacker_acc");
  fs::create_directories(out_dir);
  write_json(out_dir / "unseen.json", out);
  return out;
}

// --- worker pool and sweeps --------------------------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

SweepSpec SweepSpec::from_json(const json& j) {
  SweepSpec s;
  if (j.contains("training")) {
    for (const auto& [k, v] : j.at("training").items()) s.base.set(k, v.is_string() ? v.get<std::string>() : v.dump());
  }
  for (const auto& cell : j.at("grid")) {
    std::vector<std::string> values;
    for (const auto& v : cell.at("values")) values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    s.grid.emplace_back(cell.at("key").get<std::string>(), values);
  }
  if (j.contains("attacker")) s.attacker = attacker_config_from_json(j.at("attacker"));
  s.train = j.at("train").get<std::string>();
  s.dev = j.at("dev").get<std::string>();
  s.out_dir = j.at("output").get<std::string>();
  s.jobs = j.value("jobs", std::size_t{1});
  s.include_baseline = j.value("include_baseline", false);
  return s;
}

std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  std::vector<SweepCell> cells;
  if (spec.include_baseline) cells.push_back({"baseline", {{"k_adversaries", "0"}}});
  std::vector<SweepCell> product{{"", {}}};
  for (const auto& [key, values] : spec.grid) {
    if (values.empty()) throw std::invalid_argument("sweep: empty value list for " + key);
    std::vector<SweepCell> next;
    for (const auto& c : product) {
      for (const auto& v : values) {
        SweepCell n = c;
        n.name += (n.name.empty() ? "" : ",") + key + "=" + v;
        n.settings.emplace_back(key, v);
        next.push_back(n);
      }
    }
    product = std::move(next);
  }
  if (!spec.grid.empty()) cells.insert(cells.end(), product.begin(), product.end());
  return cells;
}

namespace {

std::string method_label(const std::string& key) {
  if (key == "adv_hidden_dim") return "Adv-Capacity";
  if (key == "k_adversaries" || key == "k") return "Ensemble";
  if (key == "lambda") return "lambda";
  if (key == "reinit_period") return "Reinit";
  if (key == "delay_epochs") return "Delay";
  if (key == "adv_layers") return "Adv-Depth";
  return key;
}

TableRow row_for(const SweepCell& cell, const json& summary, const json& leak) {
  TableRow row;
  if (cell.name == "baseline") {
    row.method = "No Adversary Baseline";
    row.parameter = "-";
  } else {
    for (std::size_t i = 0; i < cell.settings.size(); ++i) {
      row.method += (i ? " x " : "") + method_label(cell.settings[i].first);
      row.parameter += (i ? "/" : "") + cell.settings[i].second;
    }
  }
  row.task_acc = leak.at("main_task_acc").get<double>();
  row.abs_leakage = leak.at("abs_leakage").get<double>();
  if (!leak.at("delta").is_null()) row.delta = leak.at("delta").get<double>();
  row.unstable = summary.value("unstable", false);
  return row;
}

json row_json(const TableRow& r, const std::string& cell) {
  json j{{"cell", cell},          {"method", r.method},           {"parameter", r.parameter},
         {"task_acc", r.task_acc}, {"abs_leakage", r.abs_leakage}, {"unstable", r.unstable},
         {"failed", r.failed}};
  j["delta"] = r.delta ? json(*r.delta) : json(nullptr);
  if (r.failed) j["error"] = r.error;
  return j;
}

}  // namespace

std::vector<TableRow> run_sweep(const SweepSpec& spec) {
  const auto cells = sweep_cells(spec);
  if (cells.empty()) throw std::invalid_argument("sweep: empty grid");
  std::vector<TableRow> rows(cells.size());
  parallel_for(cells.size(), spec.jobs, [&](std::size_t i) {
    const SweepCell& cell = cells[i];
    const fs::path dir = spec.out_dir / "cells" / cell.name;
    try {
      TrainingConfig cfg = spec.base;
      for (const auto& [k, v] : cell.settings) cfg.set(k, v);
      const StageOutcome trained = train_stage(spec.train, spec.dev, cfg, dir);
      const StageOutcome audited = audit_stage(dir, spec.train, spec.dev, spec.attacker);
      rows[i] = row_for(cell, trained.summary, audited.summary);
    } catch (const std::exception& e) {
      TableRow failed;
      failed.method = cell.name;
      failed.parameter = "-";
      failed.failed = true;
      failed.error = e.what();
      rows[i] = failed;
    }
  });
  std::string jsonl;
  for (std::size_t i = 0; i < rows.size(); ++i) jsonl += row_json(rows[i], cells[i].name).dump() + "\n";
  fs::create_directories(spec.out_dir);
  write_text_file(spec.out_dir / "table.jsonl", jsonl);
  write_text_file(spec.out_dir / "table.md", render_table(rows));
  return rows;
}

// --- reports ------------------------------------------------------------------------------------------------

const json& reference_numbers() {
  static const json refs = json::parse(R"({
  "direct": [
    {"data": "DIAL", "task": "Sentiment", "acc": 67.4},
    {"data": "DIAL", "task": "Mention", "acc": 81.2},
    {"data": "DIAL", "task": "Race", "acc": 83.9},
    {"data": "PAN16", "task": "Mention", "acc": 77.5},
    {"data": "PAN16", "task": "Gender", "acc": 67.7},
    {"data": "PAN16", "task": "Age", "acc": 64.8}
  ],
  "leakage": [
    {"data": "DIAL", "task": "Sentiment", "attribute": "Race", "balanced": [67.4, 64.5], "unbalanced": [79.5, 73.5]},
    {"data": "DIAL", "task": "Mention", "attribute": "Race", "balanced": [81.2, 71.5], "unbalanced": [86.0, 73.8]},
    {"data": "PAN16", "task": "Mention", "attribute": "Gender", "balanced": [77.5, 60.1], "unbalanced": [76.8, 64.0]},
    {"data": "PAN16", "task": "Mention", "attribute": "Age", "balanced": [74.7, 59.4], "unbalanced": [77.5, 59.7]}
  ],
  "adversarial": [
    {"data": "DIAL", "task": "Sentiment", "attribute": "Race", "task_acc": 64.7, "leakage": 56.0, "delta": 5.0},
    {"data": "DIAL", "task": "Mention", "attribute": "Race", "task_acc": 81.5, "leakage": 63.1, "delta": 9.2},
    {"data": "PAN16", "task": "Mention", "attribute": "Gender", "task_acc": 75.6, "leakage": 58.5, "delta": 8.0},
    {"data": "PAN16", "task": "Mention", "attribute": "Age", "task_acc": 72.5, "leakage": 57.3, "delta": 6.9}
  ],
  "configurations_dial": [
    {"method": "No Adversary Baseline", "parameter": "-", "task_acc": 67.4, "abs_leakage": 14.5, "delta": null},
    {"method": "Standard Adversary", "parameter": "300/1.0/1", "task_acc": 64.7, "abs_leakage": 6.0, "delta": 5.0},
    {"method": "Adv-Capacity", "parameter": "500", "task_acc": 64.1, "abs_leakage": 6.7, "delta": 5.2},
    {"method": "Adv-Capacity", "parameter": "1000", "task_acc": 63.4, "abs_leakage": 7.1, "delta": 4.9},
    {"method": "Adv-Capacity", "parameter": "2000", "task_acc": 65.2, "abs_leakage": 8.1, "delta": 6.9},
    {"method": "Adv-Capacity", "parameter": "5000", "task_acc": 63.9, "abs_leakage": 6.2, "delta": 3.7},
    {"method": "Adv-Capacity", "parameter": "8000", "task_acc": 65.0, "abs_leakage": 7.1, "delta": 4.8},
    {"method": "lambda", "parameter": "0.5", "task_acc": 63.9, "abs_leakage": 6.8, "delta": 6.2},
    {"method": "lambda", "parameter": "1.5", "task_acc": 64.9, "abs_leakage": 7.4, "delta": 5.4},
    {"method": "lambda", "parameter": "2.0", "task_acc": 64.2, "abs_leakage": 7.3, "delta": 5.9},
    {"method": "lambda", "parameter": "3.0", "task_acc": 65.8, "abs_leakage": 10.2, "delta": 10.1},
    {"method": "lambda", "parameter": "5.0", "task_acc": 50.0, "abs_leakage": null, "delta": null},
    {"method": "Ensemble", "parameter": "2", "task_acc": 62.4, "abs_leakage": 7.4, "delta": 5.4},
    {"method": "Ensemble", "parameter": "3", "task_acc": 66.5, "abs_leakage": 6.5, "delta": 5.0},
    {"method": "Ensemble", "parameter": "5", "task_acc": 63.8, "abs_leakage": 4.8, "delta": 2.6}
  ],
  "fusion": {"leaky_rnn_leaky_embedding": 64.5, "leaky_rnn_guarded_embedding": 67.8,
             "guarded_rnn_leaky_embedding": 59.3, "guarded_rnn_guarded_embedding": 54.8},
  "heldout_training_delta": [
    {"data": "DIAL", "task": "Sentiment", "attribute": "Race", "delta": 12.2},
    {"data": "DIAL", "task": "Mention", "attribute": "Race", "delta": 14.3},
    {"data": "PAN16", "task": "Mention", "attribute": "Gender", "delta": 8.1},
    {"data": "PAN16", "task": "Mention", "attribute": "Age", "delta": 9.7}
  ],
  "unseen_attacker_acc": 59.7,
  "consistency": {"correct": 776, "consistent": 946}
})");
  return refs;
}

namespace {


std::string ref_cell(const json& v) {
  if (v.is_null()) return "-";
  std::ostringstream o;
  o << std::fixed << std::setprecision(1) << v.get<double>();
  return o.str();
}

std::string render_references() {
  const json& r = reference_numbers();
  std::ostringstream out;
  out << "## Full-scale reference numbers (published, NOT reproduced here)\n\n"
      << "Measured values above come from desk-scale synthetic corpora and are not comparable in magnitude.\n\n";
  out << "Direct training accuracy\n\n| Data | Task | Acc |\n|---|---|---|\n";
  for (const auto& d : r["direct"]) out << "| " << d["data"].get<std::string>() << " | " << d["task"].get<std::string>() << " | " << ref_cell(d["acc"]) << " |\n";
  out << "\nLeakage without adversary\n\n| Data | Task | Attribute | Balanced Task | Balanced Leakage | Unbalanced Task | Unbalanced Leakage |\n|---|---|---|---|---|---|---|\n";
  for (const auto& d : r["leakage"]) {
    out << "| " << d["data"].get<std::string>() << " | " << d["task"].get<std::string>() << " | "
        << d["attribute"].get<std::string>() << " | " << ref_cell(d["balanced"][0]) << " | " << ref_cell(d["balanced"][1])
        << " | " << ref_cell(d["unbalanced"][0]) << " | " << ref_cell(d["unbalanced"][1]) << " |\n";
  }
  out << "\nAdversarial training\n\n| Data | Task | Attribute | Task Acc | Leakage | Delta |\n|---|---|---|---|---|---|\n";
  for (const auto& d : r["adversarial"]) {
    out << "| " << d["data"].get<std::string>() << " | " << d["task"].get<std::string>() << " | "
        << d["attribute"].get<std::string>() << " | " << ref_cell(d["task_acc"]) << " | " << ref_cell(d["leakage"])
        << " | " << ref_cell(d["delta"]) << " |\n";
  }
  out << "\nAdversarial configurations, sentiment/race\n\n| Method | Parameter | Task Acc | |leakage|*100 | Delta*100 |\n|---|---|---|---|---|\n";
  for (const auto& d : r["configurations_dial"]) {
    out << "| " << d["method"].get<std::string>() << " | " << d["parameter"].get<std::string>() << " | "
        << ref_cell(d["task_acc"]) << " | " << ref_cell(d["abs_leakage"]) << " | " << ref_cell(d["delta"]) << " |\n";
  }
  const auto& f = r["fusion"];
  out << "\nEncoder fusion, attacker accuracy\n\n| RNN \\ Embedding | Leaky | Guarded |\n|---|---|---|\n"
      << "| Leaky | " << ref_cell(f["leaky_rnn_leaky_embedding"]) << " | " << ref_cell(f["leaky_rnn_guarded_embedding"]) << " |\n"
      << "| Guarded | " << ref_cell(f["guarded_rnn_leaky_embedding"]) << " | " << ref_cell(f["guarded_rnn_guarded_embedding"]) << " |\n";
  out << "\nHeld-out training data\n\n| Data | Task | Attribute | Delta |\n|---|---|---|---|\n";
  for (const auto& d : r["heldout_training_delta"]) {
    out << "| " << d["data"].get<std::string>() << " | " << d["task"].get<std::string>() << " | "
        << d["attribute"].get<std::string>() << " | " << ref_cell(d["delta"]) << " |\n";
  }
  out << "\nUnseen data attacker accuracy: " << ref_cell(r["unseen_attacker_acc"])
      << ". Consistency over 10 seeds: " << r["consistency"]["correct"].get<int>() << " correct, "
      << r["consistency"]["consistent"].get<int>() << " consistent.\n";
  return out.str();
}

}  // namespace

std::string render_report(const std::vector<fs::path>& dirs) {
  std::ostringstream out;
  out << "# Leakage report\n\n";
  struct Run {
    std::string name;
    json summary, leak, fairness;
  };
  std::vector<Run> runs;
  std::vector<std::pair<std::string, json>> fusion, consistency, frequency, overfit, unseen;
  std::vector<std::pair<std::string, std::string>> sweeps;
  std::vector<std::string> missing;
  for (const auto& dir : dirs) {
    const std::string name = dir.filename().string();
    bool found = false;
    auto take = [&](const char* file, auto& into) {
      if (fs::exists(dir / file)) {
        into.emplace_back(name, read_json(dir / file));
        found = true;
      }
    };
    if (fs::exists(dir / "summary.json") || fs::exists(dir / "leakage.json")) {
      Run r{name, nullptr, nullptr, nullptr};
      if (fs::exists(dir / "summary.json")) r.summary = read_json(dir / "summary.json");
      if (fs::exists(dir / "leakage.json")) r.leak = read_json(dir / "leakage.json");
      if (fs::exists(dir / "fairness.json")) r.fairness = read_json(dir / "fairness.json");
      runs.push_back(r);
      found = true;
    }
    take("fusion.json", fusion);
    take("consistency.json", consistency);
    take("frequency.json", frequency);
    take("overfit.json", overfit);
    take("unseen.json", unseen);
    if (fs::exists(dir / "table.md")) {
      sweeps.emplace_back(name, read_text_file(dir / "table.md"));
      found = true;
    }
    if (!found) missing.push_back(name);
  }
  const bool empty = runs.empty() && fusion.empty() && consistency.empty() && frequency.empty() &&
                     overfit.empty() && unseen.empty() && sweeps.empty();
  if (empty) out << "no runs found\n\n";

  std::vector<const Run*> trained, plain, adversarial;
  for (const auto& r : runs) {
    if (!r.summary.is_null()) trained.push_back(&r);
    const bool adv = !r.summary.is_null() && r.summary.value("k_adversaries", 0) > 0;
    if (!r.leak.is_null()) (adv ? adversarial : plain).push_back(&r);
  }
  if (!trained.empty()) {
    out << "## Main-task training\n\n| Run | k | lambda | Dev Acc | Best Epoch | Unstable |\n|---|---|---|---|---|---|\n";
    for (const auto* r : trained) {
      const bool adv = r->summary["k_adversaries"].get<int>() > 0;
      out << "| " << r->name << " | " << r->summary["k_adversaries"] << " | " << (adv ? r->summary["lambda"].dump() : "-") << " | "
          << pct(r->summary["final_dev_acc"].get<double>()) << " | " << r->summary["best_epoch"] << " | "
          << (r->summary.value("unstable", false) ? "yes" : "no") << " |\n";
    }
    out << "\n";
  }
  if (!plain.empty()) {
    out << "## Leakage without adversary\n\n| Run | Task Acc | Attacker | Leakage |\n|---|---|---|---|\n";
    for (const auto* r : plain) {
      out << "| " << r->name << " | "
          << (r->leak.contains("main_task_acc") ? pct(r->leak["main_task_acc"].get<double>()) : std::string("-")) << " | "
          << pct(r->leak["attacker_acc"].get<double>()) << " | " << pct(r->leak["leakage"].get<double>()) << " |\n";
    }
    out << "\n";
  }
  if (!adversarial.empty()) {
    out << "## Adversarial training\n\n| Run | Task Acc | Adversary | Attacker | Delta |\n|---|---|---|---|---|\n";
    for (const auto* r : adversarial) {
      std::string advs;
      for (const auto& a : r->leak["adversary_dev_acc"]) advs += (advs.empty() ? "" : " ") + pct(a.get<double>());
      out << "| " << r->name << " | " << pct(r->leak["main_task_acc"].get<double>()) << " | " << advs << " | "
          << pct(r->leak["attacker_acc"].get<double>()) << " | "
          << (r->leak["delta"].is_null() ? std::string("-") : pct(r->leak["delta"].get<double>())) << " |\n";
    }
    out << "\n";
  }
  bool fair_header = false;
  for (const auto& r : runs) {
    if (r.fairness.is_null()) continue;
    if (!fair_header) {
      out << "## Fairness gaps of the main classifier\n\n| Run | Demographic Parity | Equalized Odds y=0 | Equalized Odds y=1 | Equal Opportunity |\n|---|---|---|---|---|\n";
      fair_header = true;
    }
    auto g = [&](const char* k) {
      const json& v = r.fairness[k];
      return v.is_string() ? v.get<std::string>() : fixed3(v.get<double>());
    };
    out << "| " << r.name << " | " << g("demographic_parity_gap") << " | " << g("equalized_odds_gap_y0") << " | "
        << g("equalized_odds_gap_y1") << " | " << g("equality_of_opportunity_gap") << " |\n";
  }
  if (fair_header) out << "\n";
  for (const auto& [name, f] : fusion) {
    out << "## Encoder fusion (" << name << ": leaky " << f["leaky"].get<std::string>() << ", guarded "
        << f["guarded"].get<std::string>() << ")\n\n| RNN | Embedding | Attacker | Main Task |\n|---|---|---|---|\n";
    for (const auto& c : f["cells"]) {
      out << "| " << c["rnn"].get<std::string>() << " | " << c["embedding"].get<std::string>() << " | "
          << pct(c["attacker_acc"].get<double>()) << " | " << pct(c["main_task_acc"].get<double>()) << " |\n";
    }
    out << "\n";
  }
  for (const auto& [name, c] : consistency) {
    out << "## Consistency (" << name << ")\n\n" << c["correct_consistent"] << " examples correct for at least "
        << c["threshold"] << " of " << c["n_seeds"] << " attackers, " << c["consistent"] << " consistent, "
        << c["random_group"] << " split evenly; " << fixed3(c["expected_correct_by_chance"].get<double>())
        << " expected correct by chance.\n\n";
  }
  for (const auto& [name, f] : frequency) {
    out << "## Word frequency (" << name << ")\n\n" << f["consistent_words"] << " consistent-group words, "
        << f["random_words"] << " random-group words, U = " << f["u_a"] << ", one-tailed p = " << f["p_value"]
        << (f["exact"].get<bool>() ? " (exact)" : " (normal approximation)") << ".\n\n";
  }
  if (!overfit.empty()) {
    out << "## Held-out training data\n\n| Run | Attacker | Delta |\n|---|---|---|\n";
    for (const auto& [name, o] : overfit) {
      out << "| " << o["run"].get<std::string>() << " | " << pct(o["heldout_attacker_acc"].get<double>()) << " | "
          << (o.contains("delta") ? pct(o["delta"].get<double>()) : std::string("-")) << " |\n";
    }
    out << "\n";
  }
  if (!unseen.empty()) {
    out << "## Unseen data\n\n| Run | Unseen Attacker | Dev Attacker | Examples |\n|---|---|---|---|\n";
    for (const auto& [name, u] : unseen) {
      out << "| " << u["run"].get<std::string>() << " | " << pct(u["unseen_attacker_acc"].get<double>()) << " | "
          << (u.contains("dev_attacker_acc") ? pct(u["dev_attacker_acc"].get<double>()) : std::string("-")) << " | "
          << u["examples"] << " |\n";
    }
    out << "\n";
  }
  for (const auto& [name, table] : sweeps) out << "## Sweep (" << name << ")\n\n" << table << "\n";
  if (!missing.empty()) {
    out << "## Missing artifacts\n\n";
    for (const auto& m : missing) out << "- " << m << "\n";
    out << "\n";
  }
  out << render_references();
  return out.str();
}

// --- experiment specs --------------------------------------------------------------------------------------

ExperimentSpec ExperimentSpec::load(const fs::path& path) {
  ExperimentSpec s;
  s.raw = json::parse(read_text_file(path));
  s.base_dir = path.parent_path();
  s.output = s.raw.at("output").get<std::string>();
  if (s.output.is_relative()) s.output = s.base_dir / s.output;
  s.seed = s.raw.value("seed", std::uint64_t{1});
  s.jobs = s.raw.value("jobs", std::size_t{1});
  s.stages = s.raw.value("stages", std::vector<std::string>{"data", "split", "train", "audit", "analyze", "report"});
  return s;
}

namespace {

fs::path resolve(const ExperimentSpec& s, const std::string& p) {
  const fs::path path(p);
  return path.is_relative() ? s.base_dir / path : path;
}

bool has_stage(const ExperimentSpec& s, const std::string& name) {
  return std::find(s.stages.begin(), s.stages.end(), name) != s.stages.end();
}

TrainingConfig run_config(const ExperimentSpec& s, const json& run) {
  TrainingConfig cfg;
  cfg.seed = s.seed;
  auto apply = [&](const json& j) {
    for (const auto& [k, v] : j.items()) {
      if (k == "name") continue;
      cfg.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
  };
  if (s.raw.contains("training")) apply(s.raw.at("training"));
  apply(run);
  return cfg;
}

}  // namespace

void ExperimentSpec::validate() const {
  static const std::set<std::string> known{"data", "split", "train", "audit", "analyze", "report"};
  for (const auto& st : stages) {
    if (!known.count(st)) throw std::invalid_argument("experiment: unknown stage '" + st + "'");
  }
  const json& data = raw.at("data");
  const std::string source = data.at("source").get<std::string>();
  auto need = [&](const std::string& p) {
    if (!fs::exists(resolve(*this, p))) throw std::invalid_argument("experiment: missing input " + p);
  };
  if (source == "tsv" || source == "raw") {
    need(data.at("path").get<std::string>());
    if (data.contains("lexicon")) need(data.at("lexicon").get<std::string>());
  } else if (source == "vector-dump") {
    need(data.at("train").get<std::string>());
    need(data.at("dev").get<std::string>());
  } else if (source == "split") {
    need(data.at("train").get<std::string>());
    need(data.at("dev").get<std::string>());
  } else if (source != "synthetic") {
    throw std::invalid_argument("experiment: unknown data source '" + source + "'");
  }
  std::set<std::string> names;
  for (const auto& run : raw.value("runs", json::array())) {
    const std::string name = run.at("name").get<std::string>();
    if (!names.insert(name).second) throw std::invalid_argument("experiment: duplicate run name " + name);
    run_config(*this, run).validate();
  }
}

fs::path run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const fs::path out = spec.output;
  fs::create_directories(out);
  const std::string spec_text = spec.raw.dump(2) + "\n";
  write_text_file(out / "spec.json", spec_text);
  Manifest manifest(out);
  manifest.spec_hash = digest(spec_text);

  std::vector<std::string> failures;
  std::mutex failures_mutex;
  auto fail = [&](const std::string& name, const std::string& what) {
    std::lock_guard lock(failures_mutex);
    failures.push_back(name + ": " + what);
  };
  // hash is computed lazily: inputs of a later stage may not exist when an earlier one failed
  auto stage = [&](const std::string& name, const std::function<std::string()>& hash,
                   const std::vector<std::string>& artifacts, const std::function<void()>& body, bool fatal = false) {
    std::string h;
    try {
      h = hash();
      if (manifest.fresh(name, h)) return;
      body();
      manifest.record(name, {h, "done", artifacts, ""});
    } catch (const std::exception& e) {
      manifest.record(name, {h, "failed", {}, e.what()});
      if (fatal) throw;
      fail(name, e.what());
    }
  };

  const json& data = spec.raw.at("data");
  const std::string source = data.at("source").get<std::string>();
  const fs::path data_dir = out / "data";
  fs::path train = data_dir / "train.tsv", dev = data_dir / "dev.tsv", rest = data_dir / "rest.tsv";
  std::vector<fs::path> report_dirs;

  if (source == "vector-dump") {
    const AttackerConfig att = attacker_config_from_json(spec.raw.value("attacker", json::object()),
                                                         AttackerConfig{.seed = spec.seed});
    const fs::path dir = out / "runs" / "vectors";
    if (has_stage(spec, "audit")) {
      audit_vectors_stage(resolve(spec, data.at("train").get<std::string>()),
                          resolve(spec, data.at("dev").get<std::string>()), att, dir);
    }
    report_dirs.push_back(dir);
  } else {
    const fs::path corpus = data_dir / "corpus.tsv";
    if (source == "split") {
      train = resolve(spec, data.at("train").get<std::string>());
      dev = resolve(spec, data.at("dev").get<std::string>());
      rest = data.contains("fresh") ? resolve(spec, data.at("fresh").get<std::string>()) : fs::path{};
    } else {
      if (has_stage(spec, "data")) {
        fs::create_directories(data_dir);
        if (source == "synthetic") {
          const SyntheticSpec syn = synthetic_spec_from_json(data.value("synthetic", json::object()));
          const std::uint64_t seed = data.value("seed", spec.seed);
          stage("data", [&] { return combine({kToolVersion, to_json(syn).dump(), std::to_string(seed)}); }, {"data/corpus.tsv"},
                [&] { generate_file(syn, seed, corpus); }, true);
        } else if (source == "tsv") {
          const fs::path in = resolve(spec, data.at("path").get<std::string>());
          stage("data", [&] { return combine({kToolVersion, file_digest(in)}); }, {"data/corpus.tsv"},
                [&] { write_corpus_tsv(corpus, read_corpus_tsv(in)); }, true);
        } else {
          const fs::path in = resolve(spec, data.at("path").get<std::string>());
          const std::string task = data.value("task", "sentiment");
          const SentimentLexicon lex = data.contains("lexicon")
                                           ? SentimentLexicon::load(resolve(spec, data.at("lexicon").get<std::string>()))
                                           : SentimentLexicon::defaults();
          std::optional<int> default_z;
          if (data.contains("default_z")) default_z = data.at("default_z").get<int>();
          stage("data", [&] { return combine({kToolVersion, file_digest(in), task, lex.serialize()}); }, {"data/corpus.tsv"}, [&] {
            const DeriveSummary s = derive_file(in, corpus, task == "mention" ? DeriveTask::mention : DeriveTask::sentiment,
                                                lex, default_z);
            write_json(data_dir / "derive.json", {{"read", s.read}, {"kept", s.kept}, {"mixed", s.mixed},
                                                  {"no_marker", s.no_marker}, {"too_short", s.too_short},
                                                  {"duplicate", s.duplicate}});
          }, true);
        }
      }
      if (has_stage(spec, "split")) {
        const json& sp = spec.raw.at("split");
        SplitRequest req;
        req.sizes = {sp.at("train").get<std::size_t>(), sp.at("dev").get<std::size_t>()};
        if (sp.contains("unbalanced_q") && !sp.at("unbalanced_q").is_null()) req.unbalanced_q = sp.at("unbalanced_q").get<double>();
        req.seed = sp.value("seed", spec.seed);
        stage("split", [&] { return combine({kToolVersion, file_digest(corpus), sp.dump(), std::to_string(req.seed)}); },
              {"data/train.tsv", "data/dev.tsv", "data/rest.tsv"},
              [&] { write_json(data_dir / "split.json", split_file(corpus, data_dir, req)); }, true);
      }
    }

    const json runs = spec.raw.value("runs", json::array());
    const AttackerConfig att = attacker_config_from_json(spec.raw.value("attacker", json::object()),
                                                         AttackerConfig{.seed = spec.seed});
    auto run_dir = [&](const std::string& name) { return out / "runs" / name; };
    if (has_stage(spec, "train") || has_stage(spec, "audit")) {
      parallel_for(runs.size(), spec.jobs, [&](std::size_t i) {
        const std::string name = runs[i].at("name").get<std::string>();
        try {
          const TrainingConfig cfg = run_config(spec, runs[i]);
          if (has_stage(spec, "train")) train_stage(train, dev, cfg, run_dir(name));
          if (has_stage(spec, "audit")) {
            AttackerConfig a = att;
            a.seed = cfg.seed;
            audit_stage(run_dir(name), train, dev, a);
          }
        } catch (const std::exception& e) {
          fail("runs/" + name, e.what());
        }
      });
    }
    for (const auto& r : runs) report_dirs.push_back(run_dir(r.at("name").get<std::string>()));

    if (has_stage(spec, "analyze") && spec.raw.contains("analyses")) {
      const json& an = spec.raw.at("analyses");
      const fs::path adir = out / "analysis";
      auto digest_of = [&](const std::vector<std::string>& names, const char* file) {
        std::string all;
        for (const auto& n : names) all += file_digest(run_dir(n) / file);
        return all;
      };
      if (an.contains("fusion")) {
        const auto leaky = an["fusion"].at("leaky").get<std::string>();
        const auto guarded = an["fusion"].at("guarded").get<std::string>();
        stage("analysis/fusion", [&] { return combine({kToolVersion, digest_of({leaky, guarded}, "model.ckpt"), att.to_json().dump()}); },
              {"analysis/fusion/fusion.json"},
              [&] { fusion_analysis(run_dir(leaky), run_dir(guarded), train, dev, att, adir / "fusion"); });
        report_dirs.push_back(adir / "fusion");
      }
      if (an.contains("overfit")) {
        for (const auto& n : an["overfit"]) {
          const std::string name = n.get<std::string>();
          const fs::path d = adir / ("overfit-" + name);
          stage("analysis/overfit-" + name, [&] { return combine({kToolVersion, digest_of({name}, "model.ckpt"), att.to_json().dump()}); },
                {"analysis/overfit-" + name + "/overfit.json"}, [&] { overfit_stage(run_dir(name), train, att, d); });
          report_dirs.push_back(d);
        }
      }
      if (an.contains("unseen") && !rest.empty()) {
        for (const auto& n : an["unseen"]) {
          const std::string name = n.get<std::string>();
          const fs::path d = adir / ("unseen-" + name);
          stage("analysis/unseen-" + name, [&] { return combine({kToolVersion, digest_of({name}, "attacker.ckpt"), file_digest(rest)}); },
                {"analysis/unseen-" + name + "/unseen.json"}, [&] { unseen_stage(run_dir(name), rest, train, dev, d); });
          report_dirs.push_back(d);
        }
      }
      if (an.contains("consistency")) {
        const auto names = an["consistency"].at("runs").get<std::vector<std::string>>();
        const std::size_t threshold = an["consistency"].value("threshold", names.size() > 1 ? names.size() - 1 : 1);
        std::vector<fs::path> dirs;
        for (const auto& n : names) dirs.push_back(run_dir(n));
        stage("analysis/consistency", [&] { return combine({kToolVersion, digest_of(names, "predictions.jsonl"), std::to_string(threshold)}); },
              {"analysis/consistency/consistency.json"},
              [&] { consistency_stage(dirs, dev, threshold, adir / "consistency"); });
        report_dirs.push_back(adir / "consistency");
        if (an["consistency"].value("frequency", true)) {
          stage("analysis/frequency",
                [&] { return combine({kToolVersion, file_digest(adir / "consistency" / "consistency.json"), file_digest(train)}); },
                {"analysis/frequency/frequency.json"},
                [&] { frequency_stage(adir / "consistency", dev, train, adir / "frequency"); });
          report_dirs.push_back(adir / "frequency");
        }
      }
    }
  }

  const fs::path report = out / "report.md";
  if (has_stage(spec, "report")) write_text_file(report, render_report(report_dirs));
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::string all = std::to_string(failures.size()) + " stage(s) failed";
    for (const auto& f : failures) all += "\n  " + f;
    throw std::runtime_error(all);
  }
  return report;
}

}  // namespace advrem
