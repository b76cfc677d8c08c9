#include "advrem/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <cctype>
#include <sstream>

namespace advrem {

namespace {

// RNG stream ids; baseline and adversarial runs share the encoder/classifier
// streams so that adding a zero-weight adversary leaves their trajectory unchanged.
constexpr std::uint64_t kStreamEncoderInit = 1;
constexpr std::uint64_t kStreamClassifierInit = 2;
constexpr std::uint64_t kStreamEncodedDropout = 10;
constexpr std::uint64_t kStreamClassifierDropout = 11;
constexpr std::uint64_t kStreamShuffle = 20;
constexpr std::uint64_t kStreamAdversaryInit = 100;
constexpr std::uint64_t kStreamAdversaryDropout = 200;
constexpr std::uint64_t kStreamAdversaryReinit = 300;

std::string trim_copy(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return std::string(s);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  if (pos != v.size() || n < 0) {
    throw std::invalid_argument("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
  if (pos != v.size()) throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

std::vector<std::vector<int>> encode_ids(const Vocabulary& vocab, const Dataset& data) {
  std::vector<std::vector<int>> ids;
  ids.reserve(data.size());
  for (const auto& ex : data.examples) ids.push_back(vocab.encode(ex.tokens));
  return ids;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::string to_string(Target target) { return target == Target::y ? "y" : "z"; }

int label_of(const Example& ex, Target target) { return target == Target::y ? ex.y : ex.z; }

// --- config ------------------------------------------------------------------------

void TrainingConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("config: lambda must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be at least 1");
  if (embed_dim == 0 || encoder_hidden == 0 || classifier_hidden == 0 || adv_hidden_dim == 0) {
    throw std::invalid_argument("config: layer sizes must be positive");
  }
  if (adv_layers == 0) throw std::invalid_argument("config: adversaries need at least one hidden layer");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("config: dropout must lie in [0, 1)");
  if (lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("config: momentum must lie in [0, 1)");
  if (reinit_period && *reinit_period == 0) throw std::invalid_argument("config: reinit_period must be positive");
  if (eval_batch_size == 0) throw std::invalid_argument("config: eval_batch_size must be positive");
}

void TrainingConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim_copy(value);
  if (key == "lambda") lambda = to_double(key, v);
  else if (key == "k_adversaries" || key == "k") k_adversaries = to_size(key, v);
  else if (key == "embed_dim") embed_dim = to_size(key, v);
  else if (key == "encoder_hidden") encoder_hidden = to_size(key, v);
  else if (key == "classifier_hidden") classifier_hidden = to_size(key, v);
  else if (key == "adv_hidden_dim") adv_hidden_dim = to_size(key, v);
  else if (key == "adv_layers") adv_layers = to_size(key, v);
  else if (key == "lr") lr = to_double(key, v);
  else if (key == "momentum") momentum = to_double(key, v);
  else if (key == "dropout") dropout = to_double(key, v);
  else if (key == "dropout_on_encoded") dropout_on_encoded = to_bool(key, v);
  else if (key == "epochs") epochs = to_size(key, v);
  else if (key == "batch_size") batch_size = to_size(key, v);
  else if (key == "reinit_period") reinit_period = v == "none" ? std::nullopt : std::optional(to_size(key, v));
  else if (key == "delay_epochs") delay_epochs = v == "none" ? std::nullopt : std::optional(to_size(key, v));
  else if (key == "seed") seed = to_size(key, v);
  else if (key == "clip_norm") clip_norm = to_double(key, v);
  else if (key == "forget_bias") forget_bias = to_double(key, v);
  else if (key == "min_count") min_count = to_size(key, v);
  else if (key == "instability_patience") instability_patience = to_size(key, v);
  else if (key == "instability_lambda") instability_lambda = to_double(key, v);
  else if (key == "eval_batch_size") eval_batch_size = to_size(key, v);
  else if (key == "checkpoint_epochs") {
    checkpoint_epochs.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto t = trim_copy(item);
      if (!t.empty()) checkpoint_epochs.push_back(to_size(key, t));
    }
  } else {
    throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

TrainingConfig TrainingConfig::parse(std::string_view text) {
  TrainingConfig cfg;
  std::size_t line_no = 0;
  std::stringstream ss{std::string(text)};
  std::string line;
  while (std::getline(ss, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim_copy(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
    try {
      cfg.set(trim_copy(std::string_view(body).substr(0, eq)), body.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string TrainingConfig::to_text() const {
  std::ostringstream out;
  out << "lambda = " << fmt_double(lambda) << '\n'
      << "k_adversaries = " << k_adversaries << '\n'
      << "embed_dim = " << embed_dim << '\n'
      << "encoder_hidden = " << encoder_hidden << '\n'
      << "classifier_hidden = " << classifier_hidden << '\n'
      << "adv_hidden_dim = " << adv_hidden_dim << '\n'
      << "adv_layers = " << adv_layers << '\n'
      << "lr = " << fmt_double(lr) << '\n'
      << "momentum = " << fmt_double(momentum) << '\n'
      << "dropout = " << fmt_double(dropout) << '\n'
      << "dropout_on_encoded = " << (dropout_on_encoded ? "true" : "false") << '\n'
      << "epochs = " << epochs << '\n'
      << "batch_size = " << batch_size << '\n'
      << "reinit_period = " << (reinit_period ? std::to_string(*reinit_period) : "none") << '\n'
      << "delay_epochs = " << (delay_epochs ? std::to_string(*delay_epochs) : "none") << '\n'
      << "seed = " << seed << '\n'
      << "clip_norm = " << fmt_double(clip_norm) << '\n'
      << "forget_bias = " << fmt_double(forget_bias) << '\n'
      << "min_count = " << min_count << '\n'
      << "instability_patience = " << instability_patience << '\n'
      << "instability_lambda = " << fmt_double(instability_lambda) << '\n'
      << "eval_batch_size = " << eval_batch_size << '\n';
  out << "checkpoint_epochs = ";
  for (std::size_t i = 0; i < checkpoint_epochs.size(); ++i) out << (i ? "," : "") << checkpoint_epochs[i];
  out << '\n';
  return out.str();
}

nlohmann::json TrainingConfig::to_json() const {
  nlohmann::json j;
  j["lambda"] = lambda;
  j["k_adversaries"] = k_adversaries;
  j["embed_dim"] = embed_dim;
  j["encoder_hidden"] = encoder_hidden;
  j["classifier_hidden"] = classifier_hidden;
  j["adv_hidden_dim"] = adv_hidden_dim;
  j["adv_layers"] = adv_layers;
  j["lr"] = lr;
  j["momentum"] = momentum;
  j["dropout"] = dropout;
  j["dropout_on_encoded"] = dropout_on_encoded;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["reinit_period"] = reinit_period ? nlohmann::json(*reinit_period) : nlohmann::json(nullptr);
  j["delay_epochs"] = delay_epochs ? nlohmann::json(*delay_epochs) : nlohmann::json(nullptr);
  j["seed"] = seed;
  j["clip_norm"] = clip_norm;
  return j;
}

// --- model ---------------------------------------------------------------------------

Model Model::clone() const {
  Model m{vocab, encoder.clone(), classifier.clone(), {}};
  for (const auto& adv : adversaries) m.adversaries.push_back(adv.clone());
  return m;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> params = encoder.parameters();
  for (const auto& p : classifier.parameters()) params.push_back(p);
  for (const auto& adv : adversaries) {
    for (const auto& p : adv.parameters()) params.push_back(p);
  }
  return params;
}

Model init_model(const Dataset& train, const TrainingConfig& config) {
  config.validate();
  Model model;
  model.vocab = build_vocab(train.examples, config.min_count);
  Rng enc_rng(config.seed, kStreamEncoderInit);
  model.encoder.embedding = init_embedding(model.vocab.size(), config.embed_dim, enc_rng);
  model.encoder.lstm = init_lstm(config.embed_dim, config.encoder_hidden, enc_rng, config.forget_bias);
  Rng cls_rng(config.seed, kStreamClassifierInit);
  model.classifier = init_mlp(config.encoder_hidden, {config.classifier_hidden}, 2, cls_rng);
  const std::vector<std::size_t> adv_dims(config.adv_layers, config.adv_hidden_dim);
  for (std::size_t j = 0; j < config.k_adversaries; ++j) {
    Rng adv_rng(config.seed, kStreamAdversaryInit + j);
    model.adversaries.push_back(init_mlp(config.encoder_hidden, adv_dims, 2, adv_rng));
  }
  return model;
}

// --- objective ---------------------------------------------------------------------------

ObjectiveTerms assemble_objective(Tape* tape, const Model& model,
                                  const std::vector<std::span<const int>>& sequences,
                                  std::span<const int> y, std::span<const int> z,
                                  ObjectiveContext& ctx) {
  if (!ctx.encoded_rng || !ctx.classifier_rng) throw std::invalid_argument("objective: missing rng");
  if (!model.adversaries.empty() &&
      (!ctx.adversary_rngs || ctx.adversary_rngs->size() < model.adversaries.size())) {
    throw std::invalid_argument("objective: one rng per adversary required");
  }
  ObjectiveTerms terms;
  terms.encoded = encode_batch(tape, model.encoder, sequences);
  const Tensor h = ctx.dropout_on_encoded
                       ? ops::dropout(tape, terms.encoded, ctx.dropout.p, *ctx.encoded_rng, ctx.dropout.training)
                       : terms.encoded;
  terms.main_logits = mlp_forward(tape, model.classifier, h, ctx.dropout, *ctx.classifier_rng);
  terms.main_loss = ops::softmax_nll(tape, terms.main_logits, y);
  terms.total = terms.main_loss;
  for (std::size_t j = 0; j < model.adversaries.size(); ++j) {
    const Tensor routed = ctx.detach_adversaries ? ops::detach(h) : ops::grl(tape, h, ctx.lambda);
    Tensor logits = mlp_forward(tape, model.adversaries[j], routed, ctx.dropout, (*ctx.adversary_rngs)[j]);
    Tensor loss = ops::softmax_nll(tape, logits, z);
    terms.total = ops::add(tape, terms.total, loss);
    terms.adversary_logits.push_back(std::move(logits));
    terms.adversary_losses.push_back(std::move(loss));
  }
  return terms;
}

// --- evaluation ----------------------------------------------------------------------------

Tensor encode_sequences(const Encoder& encoder, const std::vector<std::vector<int>>& ids,
                        std::size_t batch_size) {
  if (ids.empty()) throw std::invalid_argument("encode: no sequences");
  const std::size_t H = encoder.hidden_dim();
  Tensor out({ids.size(), H});
  for (std::size_t start = 0; start < ids.size(); start += batch_size) {
    const std::size_t end = std::min(ids.size(), start + batch_size);
    std::vector<std::span<const int>> batch;
    for (std::size_t i = start; i < end; ++i) batch.emplace_back(ids[i]);
    const Tensor h = encode_batch(nullptr, encoder, batch);
    std::copy(h.values().begin(), h.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * H));
  }
  return out;
}

std::vector<int> predict(const MlpParams& head, const Tensor& encoded) {
  Rng unused(0);
  return argmax_rows(mlp_forward(nullptr, head, encoded, DropoutConfig{}, unused));
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw DimensionError("accuracy: length mismatch");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::vector<int> labels(const Dataset& dataset, Target target) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& ex : dataset.examples) out.push_back(label_of(ex, target));
  return out;
}

double evaluate(const Encoder& encoder, const MlpParams& head, const Vocabulary& vocab,
                const Dataset& split, Target target) {
  if (split.empty()) return 0.0;
  const Tensor encoded = encode_sequences(encoder, encode_ids(vocab, split));
  return accuracy(predict(head, encoded), labels(split, target));
}

// --- training loop ---------------------------------------------------------------------------

nlohmann::json EpochRecord::to_json(bool with_timing) const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["train_acc"] = train_acc;
  j["dev_loss"] = dev_loss;
  j["dev_acc"] = dev_acc;
  j["adversary_train_loss"] = adversary_train_loss;
  j["adversary_dev_acc"] = adversary_dev_acc;
  if (!adversary_dev_acc_after_reinit.empty()) j["adversary_dev_acc_after_reinit"] = adversary_dev_acc_after_reinit;
  if (with_timing) j["seconds"] = seconds;
  return j;
}

std::string TrainStats::to_jsonl(bool with_timing) const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json(with_timing).dump() + "\n";
  return out;
}

std::vector<double> ExperimentArtifacts::final_adversary_dev_acc() const {
  return stats.epochs.empty() ? std::vector<double>{} : stats.epochs.back().adversary_dev_acc;
}

double ExperimentArtifacts::final_dev_acc() const {
  return stats.epochs.empty() ? 0.0 : stats.epochs.back().dev_acc;
}

namespace {

struct DevEval {
  double loss = 0.0;
  double acc = 0.0;
  std::vector<double> adversary_acc;
};

DevEval evaluate_dev(const Model& model, const std::vector<std::vector<int>>& ids,
                     std::span<const int> y, std::span<const int> z, std::size_t batch) {
  DevEval out;
  if (ids.empty()) return out;
  const Tensor encoded = encode_sequences(model.encoder, ids, batch);
  Rng unused(0);
  const Tensor logits = mlp_forward(nullptr, model.classifier, encoded, DropoutConfig{}, unused);
  out.loss = ops::softmax_nll(nullptr, logits, y).item();
  out.acc = accuracy(argmax_rows(logits), y);
  for (const auto& adv : model.adversaries) out.adversary_acc.push_back(accuracy(predict(adv, encoded), z));
  return out;
}

ExperimentArtifacts run_training(const Dataset& train, const Dataset& dev, Target target,
                                 TrainingConfig config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("training: empty training set");
  ExperimentArtifacts art;
  art.config = config;
  art.target = target;
  Model model = init_model(train, config);

  const auto train_ids = encode_ids(model.vocab, train);
  const auto dev_ids = encode_ids(model.vocab, dev);
  const auto train_main = labels(train, target);
  const auto train_z = labels(train, Target::z);
  const auto dev_main = labels(dev, target);
  const auto dev_z = labels(dev, Target::z);

  SgdMomentum optimizer(config.lr, config.momentum, config.clip_norm);
  Rng shuffle_rng(config.seed, kStreamShuffle);
  Rng encoded_rng(config.seed, kStreamEncodedDropout);
  Rng classifier_rng(config.seed, kStreamClassifierDropout);
  std::vector<Rng> adversary_rngs;
  for (std::size_t j = 0; j < model.adversaries.size(); ++j) {
    adversary_rngs.emplace_back(config.seed, kStreamAdversaryDropout + j);
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best_dev = -1.0;
  std::size_t flat_epochs = 0;
  std::size_t reinit_events = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    EpochRecord record;
    record.epoch = epoch;

    if (config.reinit_period && epoch > 1 && (epoch - 1) % *config.reinit_period == 0 &&
        !model.adversaries.empty()) {
      ++reinit_events;
      for (std::size_t j = 0; j < model.adversaries.size(); ++j) {
        Rng rng = Rng(config.seed, kStreamAdversaryReinit + j).fork(reinit_events);
        reinit_mlp(model.adversaries[j], rng);
        for (const auto& p : model.adversaries[j].parameters()) optimizer.reset(p);
      }
      record.adversary_dev_acc_after_reinit =
          evaluate_dev(model, dev_ids, dev_main, dev_z, config.eval_batch_size).adversary_acc;
    }

    ObjectiveContext ctx;
    ctx.dropout = DropoutConfig{config.dropout, true};
    ctx.dropout_on_encoded = config.dropout_on_encoded;
    ctx.lambda = config.lambda;
    ctx.detach_adversaries = config.delay_epochs && epoch <= *config.delay_epochs;
    ctx.encoded_rng = &encoded_rng;
    ctx.classifier_rng = &classifier_rng;
    ctx.adversary_rngs = &adversary_rngs;

    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::vector<double> adv_loss_sum(model.adversaries.size(), 0.0);
    std::size_t hits = 0;
    std::vector<Tensor> params = model.parameters();
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::span<const int>> seqs;
      std::vector<int> ys, zs;
      for (std::size_t k = start; k < end; ++k) {
        seqs.emplace_back(train_ids[order[k]]);
        ys.push_back(train_main[order[k]]);
        zs.push_back(train_z[order[k]]);
      }
      Tape tape;
      ObjectiveTerms terms = assemble_objective(&tape, model, seqs, ys, zs, ctx);
      const double n = static_cast<double>(end - start);
      loss_sum += terms.main_loss.item() * n;
      for (std::size_t j = 0; j < terms.adversary_losses.size(); ++j) {
        adv_loss_sum[j] += terms.adversary_losses[j].item() * n;
      }
      const auto pred = argmax_rows(terms.main_logits);
      for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == ys[i];
      tape.backward(terms.total);
      optimizer.step(params);
    }
    const double n_train = static_cast<double>(train.size());
    record.train_loss = loss_sum / n_train;
    record.train_acc = static_cast<double>(hits) / n_train;
    for (double s : adv_loss_sum) record.adversary_train_loss.push_back(s / n_train);

    const DevEval dev_eval = evaluate_dev(model, dev_ids, dev_main, dev_z, config.eval_batch_size);
    record.dev_loss = dev_eval.loss;
    record.dev_acc = dev_eval.acc;
    record.adversary_dev_acc = dev_eval.adversary_acc;
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const bool ok = finite(record.train_loss) && (dev.empty() || finite(record.dev_loss));
    if (!ok) art.stats.has_nan = true;
    if (ok && !dev.empty() && record.dev_acc > best_dev) {
      best_dev = record.dev_acc;
      art.best_epoch = epoch;
      art.best_model = model.clone();
    }
    if (std::find(config.checkpoint_epochs.begin(), config.checkpoint_epochs.end(), epoch) !=
        config.checkpoint_epochs.end()) {
      art.checkpoints.emplace(epoch, model.clone());
    }

    if (!model.adversaries.empty() && config.lambda >= config.instability_lambda &&
        std::abs(record.train_acc - 0.5) <= 0.02) {
      if (++flat_epochs >= config.instability_patience && !art.stats.unstable) {
        art.stats.unstable = true;
        art.stats.warning = "main-task training accuracy stayed within 50+-2% for " +
                            std::to_string(flat_epochs) + " epochs at lambda " + fmt_double(config.lambda);
      }
    } else {
      flat_epochs = 0;
    }
    art.stats.epochs.push_back(std::move(record));
  }
  art.final_model = std::move(model);
  if (art.best_epoch == 0) {
    art.best_epoch = config.epochs;
    art.best_model = art.final_model.clone();
  }
  return art;
}

}  // namespace

ExperimentArtifacts train_single_task(const Dataset& train, const Dataset& dev, Target target,
                                      TrainingConfig config) {
  config.k_adversaries = 0;
  return run_training(train, dev, target, std::move(config));
}

ExperimentArtifacts train_adversarial(const Dataset& train, const Dataset& dev, TrainingConfig config) {
  return run_training(train, dev, Target::y, std::move(config));
}

// --- persistence -------------------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
  Checkpoint ck;
  ck.config = extra;
  ck.config["vocab"] = model.vocab.tokens();
  ck.config["k_adversaries"] = model.adversaries.size();
  add_encoder(ck, "encoder", model.encoder);
  add_mlp(ck, "classifier", model.classifier);
  for (std::size_t j = 0; j < model.adversaries.size(); ++j) {
    add_mlp(ck, "adversary" + std::to_string(j), model.adversaries[j]);
  }
  save_checkpoint(path, ck);
}

Model load_model(const std::filesystem::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  Model model;
  model.vocab = Vocabulary(ck.config.at("vocab").get<std::vector<std::string>>());
  model.encoder = read_encoder(ck, "encoder");
  model.classifier = read_mlp(ck, "classifier");
  const auto k = ck.config.at("k_adversaries").get<std::size_t>();
  for (std::size_t j = 0; j < k; ++j) model.adversaries.push_back(read_mlp(ck, "adversary" + std::to_string(j)));
  if (model.encoder.embedding.vocab_size() != model.vocab.size()) {
    throw std::runtime_error("checkpoint: embedding rows do not match vocabulary size");
  }
  return model;
}

}  // namespace advrem
