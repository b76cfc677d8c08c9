#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "advrem/pipeline.hpp"

namespace py = pybind11;
using namespace advrem;
using nlohmann::json;

namespace {

std::vector<Example> to_examples(const std::vector<std::tuple<std::vector<std::string>, int, int>>& rows) {
  std::vector<Example> out;
  out.reserve(rows.size());
  for (const auto& [tokens, y, z] : rows) out.push_back({tokens, y, z});
  return out;
}

std::vector<std::tuple<std::vector<std::string>, int, int>> from_examples(const std::vector<Example>& examples) {
  std::vector<std::tuple<std::vector<std::string>, int, int>> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.emplace_back(ex.tokens, ex.y, ex.z);
  return out;
}

VectorDump to_dump(py::array_t<double, py::array::c_style | py::array::forcecast> vectors, const std::vector<int>& z) {
  if (vectors.ndim() != 2) throw std::invalid_argument("vectors must be a 2-d array");
  if (static_cast<std::size_t>(vectors.shape(0)) != z.size()) throw std::invalid_argument("one z label per row");
  VectorDump d;
  d.dim = vectors.shape(1);
  d.values.assign(vectors.data(), vectors.data() + vectors.size());
  d.z = z;
  d.y.assign(z.size(), std::nullopt);
  return d;
}

Alternative parse_alternative(const std::string& s) {
  if (s == "less") return Alternative::less;
  if (s == "greater") return Alternative::greater;
  if (s == "two-sided" || s == "two_sided") return Alternative::two_sided;
  throw std::invalid_argument("alternative must be less, greater or two-sided");
}

}  // namespace

PYBIND11_MODULE(_advrem, m) {
  m.doc() = "adversarial removal pipeline: data, training, audits";
  m.attr("__version__") = kToolVersion;

  m.def("tokenize", &tokenize, py::arg("text"), py::arg("lowercase") = false);

  m.def(
      "derive",
      [](const std::string& text, const std::string& task, const std::string& lexicon, std::optional<int> default_z) {
        DeriveSummary summary;
        const SentimentLexicon lex = lexicon.empty() ? SentimentLexicon::defaults() : SentimentLexicon::parse(lexicon);
        const auto ex = derive_corpus(text, task == "mention" ? DeriveTask::mention : DeriveTask::sentiment, lex,
                                      summary, default_z);
        const json counts{{"read", summary.read},           {"kept", summary.kept},
                          {"mixed", summary.mixed},         {"no_marker", summary.no_marker},
                          {"too_short", summary.too_short}, {"duplicate", summary.duplicate}};
        return py::make_tuple(from_examples(ex), counts.dump());
      },
      py::arg("text"), py::arg("task") = "sentiment", py::arg("lexicon") = "", py::arg("default_z") = py::none());

  m.def(
      "generate",
      [](const std::string& spec_json, std::uint64_t seed) {
        return from_examples(generate_synthetic_corpus(synthetic_spec_from_json(json::parse(spec_json)), seed));
      },
      py::arg("spec_json") = "{}", py::arg("seed") = 1);

  m.def(
      "split",
      [](const std::vector<std::tuple<std::vector<std::string>, int, int>>& pool, std::size_t train, std::size_t dev,
         std::optional<double> q, std::uint64_t seed) {
        const auto [tr, dv] = make_split(to_examples(pool), {train, dev},
                                         q ? unbalanced_proportions(*q) : balanced_proportions(), seed);
        return py::make_tuple(from_examples(tr.examples), from_examples(dv.examples));
      },
      py::arg("pool"), py::arg("train"), py::arg("dev"), py::arg("unbalanced_q") = py::none(), py::arg("seed") = 1);

  m.def(
      "write_corpus",
      [](const std::filesystem::path& path, const std::vector<std::tuple<std::vector<std::string>, int, int>>& rows) {
        write_corpus_tsv(path, to_examples(rows));
      },
      py::arg("path"), py::arg("rows"));
  m.def(
      "read_corpus", [](const std::filesystem::path& path) { return from_examples(read_corpus_tsv(path)); },
      py::arg("path"));

  m.def(
      "training_config",
      [](const std::map<std::string, std::string>& overrides) {
        TrainingConfig cfg;
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        cfg.validate();
        return cfg.to_json().dump();
      },
      py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "train",
      [](const std::filesystem::path& train, const std::filesystem::path& dev,
         const std::map<std::string, std::string>& overrides, const std::filesystem::path& run_dir) {
        TrainingConfig cfg;
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        StageOutcome o;
        {
          py::gil_scoped_release release;
          o = train_stage(train, dev, cfg, run_dir);
        }
        json j = o.summary;
        j["skipped"] = o.skipped;
        return j.dump();
      },
      py::arg("train"), py::arg("dev"), py::arg("config"), py::arg("run_dir"));

  m.def(
      "audit",
      [](const std::filesystem::path& run_dir, const std::filesystem::path& train, const std::filesystem::path& dev,
         const std::string& attacker_json) {
        const AttackerConfig att = attacker_config_from_json(json::parse(attacker_json));
        py::gil_scoped_release release;
        return audit_stage(run_dir, train, dev, att).summary.dump();
      },
      py::arg("run_dir"), py::arg("train"), py::arg("dev"), py::arg("attacker_json") = "{}");

  m.def(
      "encode",
      [](const std::filesystem::path& run_dir, const std::vector<std::vector<std::string>>& sequences) {
        const Model model = load_model(run_dir / "model.ckpt");
        std::vector<std::vector<int>> ids;
        for (const auto& s : sequences) ids.push_back(model.vocab.encode(s));
        const Tensor h = encode_sequences(model.encoder, ids);
        const std::size_t rows = h.rows(), cols = h.cols();
        py::array_t<double> out({rows, cols});
        auto view = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < cols; ++j) view(i, j) = h[i * cols + j];
        return out;
      },
      py::arg("run_dir"), py::arg("sequences"));

  m.def(
      "attacker_accuracy",
      [](py::array_t<double> train_vectors, const std::vector<int>& train_z, py::array_t<double> dev_vectors,
         const std::vector<int>& dev_z, const std::string& attacker_json) {
        const AttackerConfig att = attacker_config_from_json(json::parse(attacker_json));
        const AttackerResult r = train_attacker(to_dump(train_vectors, train_z), to_dump(dev_vectors, dev_z), att);
        return py::make_tuple(r.best_dev_acc, r.best_epoch, r.dev_predictions);
      },
      py::arg("train_vectors"), py::arg("train_z"), py::arg("dev_vectors"), py::arg("dev_z"),
      py::arg("attacker_json") = "{}");

  m.def(
      "fairness",
      [](const std::vector<int>& y, const std::vector<int>& z, const std::vector<int>& y_hat) {
        if (y.size() != z.size() || y.size() != y_hat.size()) throw std::invalid_argument("length mismatch");
        std::vector<PredictionRecord> recs;
        for (std::size_t i = 0; i < y.size(); ++i) recs.push_back({i, y[i], z[i], y_hat[i], std::nullopt, 0});
        return fairness_report(recs).to_json().dump();
      },
      py::arg("y"), py::arg("z"), py::arg("y_hat"));

  m.def(
      "mann_whitney_u",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::string& alternative) {
        const MannWhitneyResult r = mann_whitney_u(a, b, parse_alternative(alternative));
        return json{{"u_a", r.u_a}, {"u_b", r.u_b}, {"p_value", r.p_value}, {"exact", r.exact}, {"z_score", r.z_score}}
            .dump();
      },
      py::arg("a"), py::arg("b"), py::arg("alternative") = "less");

  m.def("binomial_upper_tail", &binomial_upper_tail, py::arg("n"), py::arg("k"), py::arg("p") = 0.5);

  m.def(
      "render_report",
      [](const std::vector<std::filesystem::path>& dirs) { return render_report(dirs); }, py::arg("dirs"));

  m.def(
      "run_experiment",
      [](const std::filesystem::path& spec) {
        const ExperimentSpec s = ExperimentSpec::load(spec);
        py::gil_scoped_release release;
        return run_experiment(s);
      },
      py::arg("spec"));
}
