#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "advrem/training.hpp"
#include "gradcheck.hpp"

using namespace advrem;

namespace {

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.embed_dim = 8;
  c.encoder_hidden = 8;
  c.classifier_hidden = 8;
  c.adv_hidden_dim = 8;
  c.epochs = 3;
  c.batch_size = 16;
  c.lr = 0.05;
  c.forget_bias = 1.0;
  c.eval_batch_size = 64;
  return c;
}

struct TinyData {
  Dataset train, dev;
};

TinyData tiny_data(double s_y = 0.7, std::size_t train_size = 240, std::uint64_t seed = 5) {
  SyntheticSpec spec;
  spec.per_cell = std::max<std::size_t>(120, train_size / 4 + 40);
  spec.shared_vocab = 200;
  spec.s_y = s_y;
  if (s_y == 0.0) spec.y_rate_gap = 0.0;
  const auto pool = generate_synthetic_corpus(spec, seed);
  auto [train, dev] = make_split(pool, {train_size, 80}, balanced_proportions(), seed);
  return {train, dev};
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

bool same_bits(const Encoder& a, const Encoder& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!same_bits(pa[i], pb[i])) return false;
  }
  return true;
}

bool same_bits(const MlpParams& a, const MlpParams& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!same_bits(pa[i], pb[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config text round trip and overrides") {
  TrainingConfig c = tiny_config();
  c.reinit_period = 4;
  c.checkpoint_epochs = {1, 3};
  const TrainingConfig back = TrainingConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.reinit_period == 4u);
  CHECK_FALSE(back.delay_epochs.has_value());

  TrainingConfig d;
  d.set("k", "3");
  d.set("lambda", "0.5");
  d.set("reinit_period", "none");
  CHECK(d.k_adversaries == 3);
  CHECK(d.lambda == 0.5);
  CHECK_THROWS(d.set("learning_rate", "1"));
  CHECK_THROWS(TrainingConfig::parse("lr = 0.1\nbogus = 2\n"));
  CHECK(TrainingConfig::parse("# comment\nlr = 0.25\n").lr == 0.25);

  TrainingConfig bad;
  bad.dropout = 1.0;
  CHECK_THROWS(bad.validate());
  bad = TrainingConfig{};
  bad.batch_size = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("objective: total is main loss plus every adversary loss") {
  const auto data = tiny_data();
  for (std::size_t k : {1u, 2u, 3u, 5u}) {
    TrainingConfig c = tiny_config();
    c.k_adversaries = k;
    const Model model = init_model(data.train, c);
    REQUIRE(model.adversaries.size() == k);
    std::vector<std::vector<int>> ids;
    std::vector<int> y, z;
    for (std::size_t i = 0; i < 24; ++i) {
      ids.push_back(model.vocab.encode(data.train.examples[i].tokens));
      y.push_back(data.train.examples[i].y);
      z.push_back(data.train.examples[i].z);
    }
    std::vector<std::span<const int>> seqs(ids.begin(), ids.end());
    Rng r1(3, 1), r2(3, 2);
    std::vector<Rng> adv;
    for (std::size_t j = 0; j < k; ++j) adv.emplace_back(3, 10 + j);
    ObjectiveContext ctx{DropoutConfig{0.2, true}, true, 1.0, false, &r1, &r2, &adv};
    Tape tape;
    const ObjectiveTerms t = assemble_objective(&tape, model, seqs, y, z, ctx);
    double sum = t.main_loss.item();
    for (const auto& l : t.adversary_losses) sum += l.item();
    CHECK(std::abs(t.total.item() - sum) <= 1e-12);
    CHECK(t.adversary_losses.size() == k);
  }
}

TEST_CASE("objective: encoder gradient through one adversary scales with -lambda") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  c.k_adversaries = 1;
  const Model model = init_model(data.train, c);
  std::vector<std::vector<int>> ids;
  std::vector<int> y, z;
  for (std::size_t i = 0; i < 12; ++i) {
    ids.push_back(model.vocab.encode(data.train.examples[i].tokens));
    y.push_back(data.train.examples[i].y);
    z.push_back(data.train.examples[i].z);
  }
  std::vector<std::span<const int>> seqs(ids.begin(), ids.end());
  // gradient reaching the encoder from the adversary alone: total minus main-only
  auto encoder_grad = [&](double lambda, bool with_adversary) {
    Model m = model.clone();
    if (!with_adversary) m.adversaries.clear();
    Rng r1(3, 1), r2(3, 2);
    std::vector<Rng> adv{Rng(3, 10)};
    ObjectiveContext ctx{DropoutConfig{0.0, false}, true, lambda, false, &r1, &r2, &adv};
    Tape tape;
    ObjectiveTerms t = assemble_objective(&tape, m, seqs, y, z, ctx);
    tape.backward(t.total);
    const Tensor w = m.encoder.lstm.recurrent_weights;
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto main_only = encoder_grad(0.0, false);
  const auto unit = encoder_grad(1.0, true);
  for (double lambda : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    const auto g = encoder_grad(lambda, true);
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double reversed = unit[i] - main_only[i];  // -1 x the pass-through gradient
      worst = std::max(worst, std::abs((g[i] - main_only[i]) - lambda * reversed));
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("training: seeded runs are reproducible") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  c.k_adversaries = 2;
  const auto a = train_adversarial(data.train, data.dev, c);
  const auto b = train_adversarial(data.train, data.dev, c);
  CHECK(a.stats.to_jsonl(false) == b.stats.to_jsonl(false));
  CHECK(same_bits(a.final_model.encoder, b.final_model.encoder));
  c.seed = 2;
  const auto d = train_adversarial(data.train, data.dev, c);
  CHECK_FALSE(same_bits(a.final_model.encoder, d.final_model.encoder));
}

TEST_CASE("training: lambda 0 matches a detached adversary and the plain model") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  c.k_adversaries = 1;
  c.lambda = 0.0;
  const auto zero = train_adversarial(data.train, data.dev, c);

  TrainingConfig detached = c;
  detached.lambda = 1.0;
  detached.delay_epochs = c.epochs;
  const auto det = train_adversarial(data.train, data.dev, detached);

  TrainingConfig base = c;
  base.k_adversaries = 0;
  const auto plain = train_adversarial(data.train, data.dev, base);

  CHECK(same_bits(zero.final_model.encoder, det.final_model.encoder));
  CHECK(same_bits(zero.final_model.classifier, det.final_model.classifier));
  CHECK(same_bits(zero.final_model.adversaries[0], det.final_model.adversaries[0]));
  CHECK(same_bits(zero.final_model.encoder, plain.final_model.encoder));
  CHECK(same_bits(zero.final_model.classifier, plain.final_model.classifier));
  for (std::size_t e = 0; e < c.epochs; ++e) {
    CHECK(zero.stats.epochs[e].dev_acc == plain.stats.epochs[e].dev_acc);
  }
}

TEST_CASE("training: no adversaries is single-task training on y") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  const auto a = train_adversarial(data.train, data.dev, c);
  const auto b = train_single_task(data.train, data.dev, Target::y, c);
  CHECK(a.stats.to_jsonl(false) == b.stats.to_jsonl(false));
  CHECK(same_bits(a.final_model.encoder, b.final_model.encoder));
  CHECK(a.final_model.adversaries.empty());
}

TEST_CASE("training: learns a fully planted main task and nothing from noise") {
  TrainingConfig c = tiny_config();
  // small models sit on a long plateau at the default step size
  c.embed_dim = c.encoder_hidden = c.classifier_hidden = 64;
  c.lr = 0.1;
  c.epochs = 20;
  SyntheticSpec spec;
  spec.per_cell = 500;
  spec.shared_vocab = 300;
  spec.y_rate_gap = 0.0;
  spec.s_y = 1.0;
  auto pool = generate_synthetic_corpus(spec, 9);
  auto [train, dev] = make_split(pool, {1600, 400}, balanced_proportions(), 9);
  const auto strong = train_single_task(train, dev, Target::y, c);
  MESSAGE("dev accuracy with s_y=1: " << strong.final_dev_acc());
  CHECK(strong.final_dev_acc() > 0.95);

  spec.s_y = 0.0;
  pool = generate_synthetic_corpus(spec, 9);
  auto [ntrain, ndev] = make_split(pool, {1600, 400}, balanced_proportions(), 9);
  c.epochs = 5;
  const auto none = train_single_task(ntrain, ndev, Target::y, c);
  CHECK(std::abs(none.final_dev_acc() - 0.5) <= 0.05);
}

TEST_CASE("training: re-initialised adversaries start near chance") {
  SyntheticSpec spec;
  spec.per_cell = 400;
  spec.shared_vocab = 300;
  const auto pool = generate_synthetic_corpus(spec, 5);
  auto [train, dev] = make_split(pool, {800, 800}, balanced_proportions(), 5);
  TrainingConfig c = tiny_config();
  c.embed_dim = c.encoder_hidden = c.classifier_hidden = c.adv_hidden_dim = 32;
  c.k_adversaries = 3;
  c.epochs = 5;
  c.reinit_period = 2;
  const auto a = train_adversarial(train, dev, c);
  std::size_t resets = 0;
  for (const auto& e : a.stats.epochs) {
    if (e.adversary_dev_acc_after_reinit.empty()) continue;
    ++resets;
    CHECK(e.adversary_dev_acc_after_reinit.size() == 3);
    for (double acc : e.adversary_dev_acc_after_reinit) CHECK(std::abs(acc - 0.5) <= 0.05);
  }
  CHECK(resets == 2);  // epochs 3 and 5
}

TEST_CASE("training: instability warning on a collapsed main task") {
  const auto data = tiny_data(0.0, 2000);
  TrainingConfig c = tiny_config();
  c.k_adversaries = 1;
  c.lambda = 5.0;
  c.epochs = 3;
  c.instability_patience = 2;
  const auto a = train_adversarial(data.train, data.dev, c);
  CHECK(a.stats.unstable);
  CHECK_FALSE(a.stats.warning.empty());
  c.lambda = 1.0;
  CHECK_FALSE(train_adversarial(data.train, data.dev, c).stats.unstable);
}

TEST_CASE("evaluation: hand-built heads") {
  // identity head: logits = tanh(h), so prediction is the larger coordinate
  MlpParams head;
  head.weights = {Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}),
                  Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1})};
  head.biases = {Tensor(Shape{2}), Tensor(Shape{2})};
  const Tensor h(Shape{4, 2}, std::vector<double>{1, 0, 0, 1, 1, 0, 0.5, 0.2});
  const auto pred = predict(head, h);
  CHECK(pred == std::vector<int>{0, 1, 0, 0});
  const std::vector<int> gold{0, 1, 1, 0};
  CHECK(accuracy(pred, gold) == 0.75);
  CHECK_THROWS(accuracy(pred, std::vector<int>{0, 1}));

  // zero head: both logits tie, argmax picks class 0, balanced split scores 0.5
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  Model m = init_model(data.train, c);
  for (auto& p : m.classifier.parameters()) std::fill(p.values().begin(), p.values().end(), 0.0);
  CHECK(evaluate(m.encoder, m.classifier, m.vocab, data.dev, Target::y) == 0.5);
  CHECK(evaluate(m.encoder, m.classifier, m.vocab, data.dev, Target::z) == 0.5);
}

TEST_CASE("model files reproduce dev metrics") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  c.k_adversaries = 1;
  c.epochs = 2;
  const auto a = train_adversarial(data.train, data.dev, c);
  const auto path = std::filesystem::temp_directory_path() / "advrem_model_test.json";
  save_model(path, a.final_model);
  const Model back = load_model(path);
  std::filesystem::remove(path);
  CHECK(back.vocab == a.final_model.vocab);
  CHECK(same_bits(back.encoder, a.final_model.encoder));
  REQUIRE(back.adversaries.size() == 1);
  CHECK(evaluate(back.encoder, back.classifier, back.vocab, data.dev, Target::y) ==
        a.stats.epochs.back().dev_acc);
  CHECK(evaluate(back.encoder, back.adversaries[0], back.vocab, data.dev, Target::z) ==
        a.stats.epochs.back().adversary_dev_acc[0]);
}

TEST_CASE("checkpoints are taken at the requested epochs") {
  const auto data = tiny_data();
  TrainingConfig c = tiny_config();
  c.checkpoint_epochs = {1, 3};
  const auto a = train_adversarial(data.train, data.dev, c);
  CHECK(a.checkpoints.size() == 2);
  REQUIRE(a.checkpoints.count(3) == 1);
  CHECK(same_bits(a.checkpoints.at(3).encoder, a.final_model.encoder));
  CHECK(evaluate(a.checkpoints.at(1).encoder, a.checkpoints.at(1).classifier, a.checkpoints.at(1).vocab,
                 data.dev, Target::y) == a.stats.epochs[0].dev_acc);
}
