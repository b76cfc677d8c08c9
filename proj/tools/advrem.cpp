// advrem: command-line driver for the data, training, audit and report stages.

#include <CLI11.hpp>

#include <iostream>

#include "advrem/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace advrem;

namespace {

const std::vector<std::string> kTrainingKeys{
    "lambda",  "k_adversaries", "embed_dim",   "encoder_hidden", "classifier_hidden", "adv_hidden_dim",
    "adv_layers", "lr",         "momentum",    "dropout",        "dropout_on_encoded", "epochs",
    "batch_size", "reinit_period", "delay_epochs", "clip_norm",  "forget_bias",       "min_count",
    "instability_patience", "instability_lambda", "eval_batch_size", "checkpoint_epochs"};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// --config file, then one flag per config field, then --set overrides, in that order.
struct TrainingFlags {
  std::string config_file;
  std::map<std::string, std::string> fields;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "training config file (key = value lines)")->check(CLI::ExistingFile);
    for (const auto& key : kTrainingKeys) app->add_option(flag_name(key), fields[key], key);
    app->add_option("--set", overrides, "key=value override, repeatable");
  }

  TrainingConfig build(std::optional<std::uint64_t> seed) const {
    TrainingConfig cfg = config_file.empty() ? TrainingConfig{} : TrainingConfig::parse(read_text_file(config_file));
    if (seed) cfg.seed = *seed;
    for (const auto& [key, value] : fields) {
      if (!value.empty()) cfg.set(key, value);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

struct AttackerFlags {
  AttackerConfig cfg;
  void attach(CLI::App* app) {
    app->add_option("--att-hidden", cfg.hidden, "attacker hidden width");
    app->add_option("--att-epochs", cfg.epochs, "attacker epochs");
    app->add_option("--att-lr", cfg.lr, "attacker learning rate");
    app->add_option("--att-momentum", cfg.momentum, "attacker momentum");
    app->add_option("--att-dropout", cfg.dropout, "attacker dropout");
    app->add_option("--att-batch-size", cfg.batch_size, "attacker batch size");
  }
  AttackerConfig build(std::optional<std::uint64_t> seed) const {
    AttackerConfig a = cfg;
    if (seed) a.seed = *seed;
    return a;
  }
};

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial removal of demographic attributes: data, training, audits and reports"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  app.add_option("--seed", seed, "global seed for generation, splits, training and attackers");
  app.add_option("--jobs", jobs, "worker threads for sweeps and experiment runs");

  // derive
  auto* derive = app.add_subcommand("derive", "derive a labelled corpus from raw tweets");
  std::string d_in, d_out, d_task = "sentiment", d_lexicon;
  std::optional<int> d_default_z;
  bool d_lower = false;
  derive->add_option("input", d_in, "text<TAB>z lines")->required()->check(CLI::ExistingFile);
  derive->add_option("-o,--output", d_out, "corpus TSV")->required();
  derive->add_option("--task", d_task, "sentiment or mention")->check(CLI::IsMember({"sentiment", "mention"}));
  derive->add_option("--lexicon", d_lexicon, "sentiment marker file")->check(CLI::ExistingFile);
  derive->add_option("--default-z", d_default_z, "z for lines without a tab");
  derive->add_flag("--lowercase", d_lower, "fold ASCII case");

  // generate
  auto* generate = app.add_subcommand("generate", "generate a synthetic corpus");
  std::string g_out, g_spec;
  std::map<std::string, std::string> g_fields;
  generate->add_option("-o,--output", g_out, "corpus TSV")->required();
  generate->add_option("--spec", g_spec, "JSON file with generator settings")->check(CLI::ExistingFile);
  for (const char* key : {"per_cell", "shared_vocab", "zipf_exponent", "y_pool", "z_pool", "z_rare_pool",
                          "z_rare_rate", "min_len", "max_len", "s_y", "s_z", "y_rate_gap"}) {
    generate->add_option(flag_name(key), g_fields[key], key);
  }

  // split
  auto* split = app.add_subcommand("split", "draw train/dev splits with exact cell proportions");
  std::string s_corpus, s_out;
  std::size_t s_train = 0, s_dev = 0;
  std::optional<double> s_q;
  split->add_option("corpus", s_corpus, "corpus TSV")->required()->check(CLI::ExistingFile);
  split->add_option("-o,--out-dir", s_out, "directory for train.tsv, dev.tsv, rest.tsv")->required();
  split->add_option("--train-size", s_train)->required();
  split->add_option("--dev-size", s_dev)->required();
  split->add_option("--unbalanced-q", s_q, "share of z=1 within y=1 (balanced when omitted)");

  // train
  auto* train = app.add_subcommand("train", "train an encoder, classifier and optional adversaries");
  std::string t_train, t_dev, t_out;
  TrainingFlags t_flags;
  train->add_option("--train", t_train)->required()->check(CLI::ExistingFile);
  train->add_option("--dev", t_dev)->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", t_out, "run directory")->required();
  t_flags.attach(train);

  // audit
  auto* audit = app.add_subcommand("audit", "train an attacker on frozen encodings");
  std::string a_run, a_train, a_dev, a_train_vec, a_dev_vec, a_out;
  AttackerFlags a_flags;
  audit->add_option("--run", a_run, "trained run directory");
  audit->add_option("--train", a_train)->check(CLI::ExistingFile);
  audit->add_option("--dev", a_dev)->check(CLI::ExistingFile);
  audit->add_option("--train-vectors", a_train_vec, "external vector dump")->check(CLI::ExistingFile);
  audit->add_option("--dev-vectors", a_dev_vec, "external vector dump")->check(CLI::ExistingFile);
  audit->add_option("-o,--out", a_out, "output directory for vector-dump audits");
  a_flags.attach(audit);

  // analyze
  auto* analyze = app.add_subcommand("analyze", "post-hoc analyses of trained runs");
  analyze->require_subcommand(1);
  std::string x_train, x_dev, x_out;
  AttackerFlags x_flags;
  auto common = [&](CLI::App* sub, bool needs_train, bool needs_dev) {
    auto* t = sub->add_option("--train", x_train)->check(CLI::ExistingFile);
    auto* d = sub->add_option("--dev", x_dev)->check(CLI::ExistingFile);
    if (needs_train) t->required();
    if (needs_dev) d->required();
    sub->add_option("-o,--out", x_out, "output directory")->required();
  };
  auto* fusion = analyze->add_subcommand("fusion", "swap embeddings and recurrent modules between two runs");
  std::string f_leaky, f_guarded;
  fusion->add_option("--leaky", f_leaky, "run trained without adversary")->required();
  fusion->add_option("--guarded", f_guarded, "adversarially trained run")->required();
  common(fusion, true, true);
  x_flags.attach(fusion);
  auto* consistency = analyze->add_subcommand("consistency", "agreement of attackers from several seeds");
  std::vector<std::string> c_runs;
  std::optional<std::size_t> c_threshold;
  consistency->add_option("--runs", c_runs, "audited run directories")->required();
  consistency->add_option("--threshold", c_threshold, "seeds that must agree (default: all but one)");
  common(consistency, false, true);
  auto* frequency = analyze->add_subcommand("frequency", "training frequency of words in consistent vs random groups");
  std::string q_consistency;
  frequency->add_option("--consistency", q_consistency, "consistency output directory")->required();
  common(frequency, true, true);
  auto* overfit = analyze->add_subcommand("overfit", "attacker on a held-out tenth of the training split");
  std::string o_run;
  overfit->add_option("--run", o_run)->required();
  common(overfit, true, false);
  x_flags.attach(overfit);
  auto* unseen = analyze->add_subcommand("unseen", "score a trained attacker on examples outside train and dev");
  std::string u_run, u_fresh;
  unseen->add_option("--run", u_run, "audited run directory")->required();
  unseen->add_option("--fresh", u_fresh, "corpus TSV of unseen examples")->required()->check(CLI::ExistingFile);
  common(unseen, true, true);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "train and audit every cell of a parameter grid");
  std::string w_spec;
  sweep->add_option("spec", w_spec, "sweep JSON")->required()->check(CLI::ExistingFile);

  // report
  auto* report = app.add_subcommand("report", "markdown report over run and analysis directories");
  std::vector<std::string> r_dirs;
  std::string r_out;
  report->add_option("dirs", r_dirs, "run, analysis or sweep directories");
  report->add_option("-o,--output", r_out, "write here instead of stdout");

  // run
  auto* run = app.add_subcommand("run", "run a whole experiment spec");
  std::string e_spec;
  run->add_option("spec", e_spec, "experiment JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*derive) {
      const SentimentLexicon lex = d_lexicon.empty() ? SentimentLexicon::defaults() : SentimentLexicon::load(d_lexicon);
      const DeriveSummary s = derive_file(d_in, d_out, d_task == "mention" ? DeriveTask::mention : DeriveTask::sentiment,
                                          lex, d_default_z, d_lower);
      std::cout << "read " << s.read << ", kept " << s.kept << ", discarded " << s.discarded() << " (mixed " << s.mixed
                << ", no marker " << s.no_marker << ", too short " << s.too_short << ", duplicate " << s.duplicate
                << ")\n";
    } else if (*generate) {
      json j = g_spec.empty() ? json::object() : json::parse(read_text_file(g_spec));
      for (const auto& [key, value] : g_fields) {
        if (!value.empty()) j[key] = json::parse(value);
      }
      const std::size_t n = generate_file(synthetic_spec_from_json(j), seed.value_or(1), g_out);
      std::cout << "wrote " << n << " examples to " << g_out << "\n";
    } else if (*split) {
      SplitRequest req{{s_train, s_dev}, s_q, seed.value_or(1)};
      print(split_file(s_corpus, s_out, req));
    } else if (*train) {
      const StageOutcome o = train_stage(t_train, t_dev, t_flags.build(seed), t_out);
      if (o.skipped) std::cout << "up to date, training skipped\n";
      print(o.summary);
    } else if (*audit) {
      const AttackerConfig att = a_flags.build(seed);
      StageOutcome o;
      if (!a_train_vec.empty() || !a_dev_vec.empty()) {
        if (a_train_vec.empty() || a_dev_vec.empty() || a_out.empty())
          throw std::invalid_argument("vector audits need --train-vectors, --dev-vectors and --out");
        o = audit_vectors_stage(a_train_vec, a_dev_vec, att, a_out);
      } else {
        if (a_run.empty() || a_train.empty() || a_dev.empty())
          throw std::invalid_argument("run audits need --run, --train and --dev");
        o = audit_stage(a_run, a_train, a_dev, att);
      }
      if (o.skipped) std::cout << "up to date, audit skipped\n";
      print(o.summary);
    } else if (*analyze) {
      const AttackerConfig att = x_flags.build(seed);
      if (*fusion) {
        print(fusion_analysis(f_leaky, f_guarded, x_train, x_dev, att, x_out));
      } else if (*consistency) {
        std::vector<fs::path> dirs(c_runs.begin(), c_runs.end());
        const std::size_t threshold = c_threshold.value_or(dirs.size() > 1 ? dirs.size() - 1 : 1);
        json j = consistency_stage(dirs, x_dev, threshold, x_out);
        j.erase("consistent_ids");
        j.erase("random_ids");
        j.erase("correct_consistent_ids");
        print(j);
      } else if (*frequency) {
        print(frequency_stage(q_consistency, x_dev, x_train, x_out));
      } else if (*overfit) {
        print(overfit_stage(o_run, x_train, att, x_out));
      } else if (*unseen) {
        print(unseen_stage(u_run, u_fresh, x_train, x_dev, x_out));
      }
    } else if (*sweep) {
      json j = json::parse(read_text_file(w_spec));
      const fs::path base = fs::path(w_spec).parent_path();
      for (const char* key : {"train", "dev", "output"}) {
        const fs::path p = j.at(key).get<std::string>();
        if (p.is_relative()) j[key] = (base / p).string();
      }
      SweepSpec spec = SweepSpec::from_json(j);
      if (seed) {
        spec.base.seed = *seed;
        spec.attacker.seed = *seed;
      }
      if (app.count("--jobs")) spec.jobs = jobs;
      const auto rows = run_sweep(spec);
      std::cout << render_table(rows);
      const bool failed = std::any_of(rows.begin(), rows.end(), [](const TableRow& r) { return r.failed; });
      if (failed) {
        for (const auto& r : rows) {
          if (r.failed) std::cerr << "cell " << r.method << " failed: " << r.error << "\n";
        }
        return 1;
      }
    } else if (*report) {
      std::vector<fs::path> dirs(r_dirs.begin(), r_dirs.end());
      const std::string text = render_report(dirs);
      if (r_out.empty()) std::cout << text;
      else write_text_file(r_out, text);
    } else if (*run) {
      ExperimentSpec spec = ExperimentSpec::load(e_spec);
      if (seed) spec.seed = *seed;
      if (app.count("--jobs")) spec.jobs = jobs;
      std::cout << run_experiment(spec).string() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
