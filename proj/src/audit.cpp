#include "advrem/audit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace advrem {

// --- probes -----------------------------------------------------------------------

VectorDump encode_dataset(const Encoder& encoder, const Vocabulary& vocab, const Dataset& dataset) {
  if (encoder.embedding.vocab_size() != vocab.size()) {
    throw std::invalid_argument("encode_dataset: vocabulary has " + std::to_string(vocab.size()) +
                                " entries but the embedding has " +
                                std::to_string(encoder.embedding.vocab_size()) + " rows");
  }
  if (dataset.empty()) throw std::invalid_argument("encode_dataset: empty dataset");
  std::vector<std::vector<int>> ids;
  ids.reserve(dataset.size());
  for (const auto& ex : dataset.examples) ids.push_back(vocab.encode(ex.tokens));
  const Tensor encoded = encode_sequences(encoder, ids);
  VectorDump dump;
  dump.dim = encoder.hidden_dim();
  dump.values.assign(encoded.values().begin(), encoded.values().end());
  for (const auto& ex : dataset.examples) {
    dump.z.push_back(ex.z);
    dump.y.emplace_back(ex.y);
  }
  return dump;
}

VectorDump encode_dataset(const Model& model, const Dataset& dataset) {
  return encode_dataset(model.encoder, model.vocab, dataset);
}

nlohmann::json AttackerConfig::to_json() const {
  return {{"hidden", hidden}, {"epochs", epochs}, {"lr", lr},       {"momentum", momentum},
          {"dropout", dropout}, {"batch_size", batch_size}, {"seed", seed}};
}

namespace {

Tensor as_matrix(const VectorDump& d) { return Tensor({d.rows(), d.dim}, d.values); }

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t dim = m.cols();
  Tensor out({rows.size(), dim});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(m.values().data() + rows[r] * dim, dim, out.values().data() + r * dim);
  }
  return out;
}

}  // namespace

std::vector<int> probe_predict(const MlpParams& params, const VectorDump& vectors) {
  return predict(params, as_matrix(vectors));
}

AttackerResult train_probe(const VectorDump& train, std::span<const int> train_labels,
                           const VectorDump& dev, std::span<const int> dev_labels,
                           const AttackerConfig& config) {
  if (train.rows() == 0 || dev.rows() == 0) throw std::invalid_argument("attacker: empty vector set");
  if (train.dim != dev.dim) throw DimensionError("attacker: train and dev dimensions differ");
  if (train_labels.size() != train.rows() || dev_labels.size() != dev.rows()) {
    throw DimensionError("attacker: label count does not match vector count");
  }
  const bool has0 = std::find(train_labels.begin(), train_labels.end(), 0) != train_labels.end();
  const bool has1 = std::find(train_labels.begin(), train_labels.end(), 1) != train_labels.end();
  if (!has0 || !has1) throw std::invalid_argument("attacker: training labels hold a single class");
  if (config.batch_size == 0 || config.epochs == 0) throw std::invalid_argument("attacker: empty schedule");

  Rng init(config.seed, 0xA77AC);
  AttackerResult result;
  MlpParams params = init_mlp(train.dim, {config.hidden}, 2, init);
  result.params = params.clone();
  SgdMomentum optimizer(config.lr, config.momentum);
  Rng shuffle(config.seed, 0xA77AC + 1);
  Rng drop(config.seed, 0xA77AC + 2);
  const Tensor X = as_matrix(train);
  const Tensor Xdev = as_matrix(dev);
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Tensor> plist = params.parameters();
  double best = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(train_labels[r]);
      Tape tape;
      Tensor logits = mlp_forward(&tape, params, gather_rows(X, rows), DropoutConfig{config.dropout, true}, drop);
      Tensor loss = ops::softmax_nll(&tape, logits, labels);
      tape.backward(loss);
      optimizer.step(plist);
    }
    const auto pred = predict(params, Xdev);
    const double acc = accuracy(pred, dev_labels);
    result.dev_acc_per_epoch.push_back(acc);
    if (acc > best) {
      best = acc;
      result.best_dev_acc = acc;
      result.best_epoch = epoch;
      result.params = params.clone();
      result.dev_predictions = pred;
    }
  }
  return result;
}

AttackerResult train_attacker(const VectorDump& train, const VectorDump& dev, const AttackerConfig& config) {
  return train_probe(train, train.z, dev, dev.z, config);
}

// --- reports ------------------------------------------------------------------------

LeakageReport leakage_report(double main_task_acc, const std::vector<double>& adversary_dev_acc,
                             double attacker_acc, std::string split, nlohmann::json config) {
  LeakageReport r;
  r.main_task_acc = main_task_acc;
  r.adversary_dev_acc = adversary_dev_acc;
  r.attacker_acc = attacker_acc;
  r.leakage = attacker_acc - 0.5;
  r.abs_leakage = std::abs(r.leakage);
  if (!adversary_dev_acc.empty()) {
    const double mean = std::accumulate(adversary_dev_acc.begin(), adversary_dev_acc.end(), 0.0) /
                        static_cast<double>(adversary_dev_acc.size());
    r.mean_adversary_acc = mean;
    r.delta = attacker_acc - mean;
  }
  r.split = std::move(split);
  r.config = std::move(config);
  return r;
}

nlohmann::json LeakageReport::to_json() const {
  nlohmann::json j;
  j["main_task_acc"] = main_task_acc;
  j["adversary_dev_acc"] = adversary_dev_acc;
  j["attacker_acc"] = attacker_acc;
  j["leakage"] = leakage;
  j["abs_leakage"] = abs_leakage;
  j["mean_adversary_acc"] = mean_adversary_acc ? nlohmann::json(*mean_adversary_acc) : nlohmann::json(nullptr);
  j["delta"] = delta ? nlohmann::json(*delta) : nlohmann::json(nullptr);
  j["split"] = split;
  j["config"] = config;
  return j;
}

nlohmann::json PredictionRecord::to_json() const {
  nlohmann::json j{{"id", id}, {"y", y}, {"z", z}, {"y_hat", y_hat}, {"seed", seed}};
  j["z_hat"] = z_hat ? nlohmann::json(*z_hat) : nlohmann::json(nullptr);
  return j;
}

PredictionRecord PredictionRecord::from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.id = j.at("id").get<std::size_t>();
  r.y = j.at("y").get<int>();
  r.z = j.at("z").get<int>();
  r.y_hat = j.at("y_hat").get<int>();
  if (j.contains("z_hat") && !j.at("z_hat").is_null()) r.z_hat = j.at("z_hat").get<int>();
  r.seed = j.value("seed", std::uint64_t{0});
  return r;
}

FairnessReport fairness_report(std::span<const PredictionRecord> predictions) {
  // counts[y][z] of records and of positive predictions
  std::size_t total[2][2] = {{0, 0}, {0, 0}}, positive[2][2] = {{0, 0}, {0, 0}};
  for (const auto& r : predictions) {
    if ((r.y != 0 && r.y != 1) || (r.z != 0 && r.z != 1)) {
      throw std::invalid_argument("fairness: labels must be binary");
    }
    ++total[r.y][r.z];
    positive[r.y][r.z] += r.y_hat == 1;
  }
  auto rate = [](std::size_t pos, std::size_t n) -> std::optional<double> {
    if (n == 0) return std::nullopt;
    return static_cast<double>(pos) / static_cast<double>(n);
  };
  auto gap = [](std::optional<double> a, std::optional<double> b) -> std::optional<double> {
    if (!a || !b) return std::nullopt;
    return std::abs(*a - *b);
  };
  FairnessReport f;
  f.demographic_parity_gap = gap(rate(positive[0][0] + positive[1][0], total[0][0] + total[1][0]),
                                 rate(positive[0][1] + positive[1][1], total[0][1] + total[1][1]));
  f.equalized_odds_gap_y0 = gap(rate(positive[0][0], total[0][0]), rate(positive[0][1], total[0][1]));
  f.equalized_odds_gap_y1 = gap(rate(positive[1][0], total[1][0]), rate(positive[1][1], total[1][1]));
  f.equality_of_opportunity_gap = f.equalized_odds_gap_y1;
  return f;
}

bool FairnessReport::consistent_with_guardedness(double tolerance) const {
  for (const auto& g : {demographic_parity_gap, equalized_odds_gap_y0, equalized_odds_gap_y1,
                        equality_of_opportunity_gap}) {
    if (!g || *g > tolerance) return false;
  }
  return true;
}

nlohmann::json FairnessReport::to_json(double tolerance) const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("undefined"); };
  return {{"demographic_parity_gap", opt(demographic_parity_gap)},
          {"equalized_odds_gap_y0", opt(equalized_odds_gap_y0)},
          {"equalized_odds_gap_y1", opt(equalized_odds_gap_y1)},
          {"equality_of_opportunity_gap", opt(equality_of_opportunity_gap)},
          {"tolerance", tolerance},
          {"consistent_with_guardedness", consistent_with_guardedness(tolerance)}};
}

// --- fusion -------------------------------------------------------------------------------

std::string to_string(Part part) { return part == Part::leaky ? "leaky" : "guarded"; }

FusedEncoder fuse_encoders(const Model& leaky, const Model& guarded, Part embedding_from, Part rnn_from) {
  if (!(leaky.vocab == guarded.vocab)) throw std::invalid_argument("fusion: encoders use different vocabularies");
  const Model& emb = embedding_from == Part::leaky ? leaky : guarded;
  const Model& rnn = rnn_from == Part::leaky ? leaky : guarded;
  if (emb.encoder.embedding.dim() != rnn.encoder.lstm.input_dim()) {
    throw DimensionError("fusion: embedding dim " + std::to_string(emb.encoder.embedding.dim()) +
                         " does not match recurrent input dim " + std::to_string(rnn.encoder.lstm.input_dim()));
  }
  FusedEncoder f;
  f.embedding_source = embedding_from;
  f.rnn_source = rnn_from;
  f.encoder = Encoder{EmbeddingTable{emb.encoder.embedding.matrix.clone()},
                      LstmParams{rnn.encoder.lstm.input_weights.clone(), rnn.encoder.lstm.recurrent_weights.clone(),
                                 rnn.encoder.lstm.bias.clone()}};
  f.vocab = emb.vocab;
  return f;
}

// --- consistency --------------------------------------------------------------------------

nlohmann::json ConsistencyResult::to_json() const {
  return {{"n_seeds", n_seeds},
          {"threshold", threshold},
          {"correct_consistent", correct_consistent.size()},
          {"consistent", consistent.size()},
          {"random_group", random_group.size()},
          {"correct_consistent_ids", correct_consistent}};
}

ConsistencyResult consistency_analysis(const std::vector<std::vector<int>>& predictions,
                                       std::span<const int> gold_z, std::size_t threshold) {
  const std::size_t n = predictions.size();
  if (n == 0) throw std::invalid_argument("consistency: no seeds");
  if (threshold > n) {
    throw std::invalid_argument("consistency: threshold " + std::to_string(threshold) + " exceeds " +
                                std::to_string(n) + " seeds");
  }
  for (const auto& p : predictions) {
    if (p.size() != gold_z.size()) throw DimensionError("consistency: prediction length mismatch");
  }
  ConsistencyResult r;
  r.n_seeds = n;
  r.threshold = threshold;
  for (std::size_t i = 0; i < gold_z.size(); ++i) {
    std::size_t ones = 0, correct = 0;
    for (const auto& p : predictions) {
      ones += p[i] == 1;
      correct += p[i] == gold_z[i];
    }
    if (correct >= threshold) r.correct_consistent.push_back(i);
    if (std::max(ones, n - ones) >= threshold) r.consistent.push_back(i);
    if (ones == n / 2 || ones == (n + 1) / 2) r.random_group.push_back(i);
  }
  return r;
}

double binomial_upper_tail(std::size_t n, std::size_t k, double p) {
  if (k > n) return 0.0;
  double tail = 0.0;
  for (std::size_t j = k; j <= n; ++j) {
    const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(j) + 1) -
                         std::lgamma(static_cast<double>(n - j) + 1);
    tail += std::exp(log_c + static_cast<double>(j) * std::log(p) + static_cast<double>(n - j) * std::log1p(-p));
  }
  return std::min(1.0, tail);
}

// --- Mann-Whitney ---------------------------------------------------------------------------

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.empty() || b.empty()) throw std::invalid_argument("mann_whitney_u: both samples must be non-empty");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(n);
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  // doubled midranks stay integral
  std::vector<long long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const long long r2 = static_cast<long long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[k] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long long ra2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (pooled[k].second == 0) ra2 += rank2[k];
  }
  MannWhitneyResult r;
  const double base = static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;
  r.u_a = static_cast<double>(ra2) / 2.0 - base;
  r.u_b = static_cast<double>(na) * static_cast<double>(nb) - r.u_a;

  if (n < 20) {
    r.exact = true;
    // ways[k][s]: subsets of size k with doubled rank sum s
    long long max_sum = 0;
    for (auto v : rank2) max_sum += v;
    std::vector<std::vector<double>> ways(na + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t item = 0; item < n; ++item) {
      const auto w = static_cast<std::size_t>(rank2[item]);
      for (std::size_t k = std::min(na, item + 1); k >= 1; --k) {
        for (std::size_t s = static_cast<std::size_t>(max_sum); s >= w; --s) {
          ways[k][s] += ways[k - 1][s - w];
          if (s == w) break;
        }
      }
    }
    double total = 0.0, le = 0.0, ge = 0.0;
    for (std::size_t s = 0; s < ways[na].size(); ++s) {
      const double c = ways[na][s];
      total += c;
      if (static_cast<long long>(s) <= ra2) le += c;
      if (static_cast<long long>(s) >= ra2) ge += c;
    }
    switch (alternative) {
      case Alternative::less: r.p_value = le / total; break;
      case Alternative::greater: r.p_value = ge / total; break;
      case Alternative::two_sided: r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / total); break;
    }
    return r;
  }

  const double nad = static_cast<double>(na), nbd = static_cast<double>(nb), nd = static_cast<double>(n);
  const double mu = nad * nbd / 2.0;
  const double var = nad * nbd / 12.0 * ((nd + 1.0) - tie_term / (nd * (nd - 1.0)));
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double sd = std::sqrt(var);
  auto lower = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
  switch (alternative) {
    case Alternative::less:
      r.z_score = (r.u_a - mu + 0.5) / sd;
      r.p_value = lower(r.z_score);
      break;
    case Alternative::greater:
      r.z_score = (r.u_a - mu - 0.5) / sd;
      r.p_value = lower(-r.z_score);
      break;
    case Alternative::two_sided: {
      const double dist = std::max(0.0, std::abs(r.u_a - mu) - 0.5);
      r.z_score = (r.u_a >= mu ? dist : -dist) / sd;
      r.p_value = std::min(1.0, 2.0 * lower(-dist / sd));
      break;
    }
  }
  return r;
}

// --- frequency study ------------------------------------------------------------------------

nlohmann::json FrequencyStudy::to_json() const {
  return {{"consistent_words", consistent_words.size()},
          {"random_words", random_words.size()},
          {"u_a", test.u_a},
          {"u_b", test.u_b},
          {"p_value", test.p_value},
          {"exact", test.exact},
          {"z_score", test.z_score}};
}

FrequencyStudy frequency_study(const Dataset& examined, const std::vector<std::size_t>& consistent_ids,
                               const std::vector<std::size_t>& random_ids,
                               const std::unordered_map<std::string, std::size_t>& train_frequencies) {
  auto words_of = [&](const std::vector<std::size_t>& ids) {
    std::set<std::string> words;
    for (std::size_t id : ids) {
      if (id >= examined.size()) throw std::out_of_range("frequency study: example id out of range");
      for (const auto& t : examined.examples[id].tokens) words.insert(t);
    }
    return words;
  };
  const auto cons = words_of(consistent_ids);
  const auto rand = words_of(random_ids);
  FrequencyStudy s;
  auto freq = [&](const std::string& w) {
    const auto it = train_frequencies.find(w);
    return it == train_frequencies.end() ? 0.0 : static_cast<double>(it->second);
  };
  for (const auto& w : cons) {
    if (!rand.count(w)) {
      s.consistent_words.push_back(w);
      s.consistent_frequencies.push_back(freq(w));
    }
  }
  for (const auto& w : rand) {
    if (!cons.count(w)) {
      s.random_words.push_back(w);
      s.random_frequencies.push_back(freq(w));
    }
  }
  if (s.consistent_words.empty() || s.random_words.empty()) {
    throw std::invalid_argument("frequency study: a group has no words outside the other group");
  }
  s.test = mann_whitney_u(s.consistent_frequencies, s.random_frequencies, Alternative::less);
  return s;
}

// --- overfitting and unseen data --------------------------------------------------------------

AttackerResult overfit_check(const Encoder& encoder, const Vocabulary& vocab, const Dataset& train,
                             const AttackerConfig& config) {
  if (train.size() < 10) throw std::invalid_argument("overfit check: training split too small");
  const VectorDump all = encode_dataset(encoder, vocab, train);
  // a tenth of every (y, z) cell is held out, so a balanced split stays balanced
  std::vector<std::size_t> fit_rows, held_rows;
  Rng rng(config.seed, 0x90);
  for (int y = 0; y < 2; ++y) {
    for (int z = 0; z < 2; ++z) {
      std::vector<std::size_t> cell;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.examples[i].y == y && train.examples[i].z == z) cell.push_back(i);
      }
      rng.shuffle(cell);
      const std::size_t held = cell.size() / 10;
      held_rows.insert(held_rows.end(), cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(held));
      fit_rows.insert(fit_rows.end(), cell.begin() + static_cast<std::ptrdiff_t>(held), cell.end());
    }
  }
  std::sort(fit_rows.begin(), fit_rows.end());
  std::sort(held_rows.begin(), held_rows.end());
  return train_attacker(all.select(fit_rows), all.select(held_rows), config);
}

UnseenResult unseen_data_check(const Encoder& encoder, const Vocabulary& vocab, const MlpParams& attacker,
                               const Dataset& fresh, const Dataset& train, const Dataset& dev) {
  std::set<std::uint64_t> seen;
  for (const auto* d : {&train, &dev}) {
    for (const auto& ex : d->examples) seen.insert(sequence_hash(ex.tokens));
  }
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    if (seen.count(sequence_hash(fresh.examples[i].tokens))) {
      throw std::invalid_argument("unseen check: fresh example " + std::to_string(i) +
                                  " also occurs in the training or dev data");
    }
  }
  const VectorDump dump = encode_dataset(encoder, vocab, fresh);
  UnseenResult r;
  r.examples = dump.rows();
  r.accuracy = accuracy(probe_predict(attacker, dump), dump.z);
  return r;
}

// --- tables ---------------------------------------------------------------------------------

std::string render_table(const std::vector<TableRow>& rows) {
  std::map<std::string, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed) continue;
    auto it = best.find(rows[i].method);
    if (it == best.end() || rows[i].abs_leakage < rows[it->second].abs_leakage) best[rows[i].method] = i;
  }
  auto pct = [](double v) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(1) << v * 100.0;
    return o.str();
  };
  std::ostringstream out;
  out << "| Method | Parameter | Task Acc | |leakage|*100 | Delta*100 |\n";
  out << "|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.failed) {
      out << "| " << r.method << " | " << r.parameter << " | failed: " << r.error << " | | |\n";
      continue;
    }
    const bool bold = best.count(r.method) && best.at(r.method) == i;
    auto cell = [&](const std::string& s) { return bold ? "**" + s + "**" : s; };
    out << "| " << r.method << " | " << r.parameter << (r.unstable ? " (unstable)" : "") << " | "
        << cell(pct(r.task_acc)) << " | " << cell(pct(r.abs_leakage)) << " | "
        << (r.delta ? cell(pct(*r.delta)) : std::string("-")) << " |\n";
  }
  return out.str();
}

}  // namespace advrem
