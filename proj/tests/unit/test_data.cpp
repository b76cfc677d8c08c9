#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "advrem/data.hpp"
#include "advrem/tensor.hpp"

using namespace advrem;

namespace {

std::size_t count_cell(const Dataset& d, int y, int z) {
  std::size_t n = 0;
  for (const auto& ex : d.examples) n += ex.y == y && ex.z == z;
  return n;
}

// Bag-of-words logistic regression on token counts, trained by plain SGD.
double logistic_oracle_accuracy(const std::vector<Example>& train, const std::vector<Example>& test,
                                bool predict_z) {
  std::map<std::string, std::size_t> index;
  for (const auto& ex : train) {
    for (const auto& t : ex.tokens) index.emplace(t, index.size());
  }
  std::vector<double> w(index.size(), 0.0);
  double bias = 0.0;
  auto score = [&](const Example& ex) {
    double s = bias;
    for (const auto& t : ex.tokens) {
      const auto it = index.find(t);
      if (it != index.end()) s += w[it->second];
    }
    return s;
  };
  for (int epoch = 0; epoch < 10; ++epoch) {
    for (const auto& ex : train) {
      const double target = predict_z ? ex.z : ex.y;
      const double p = 1.0 / (1.0 + std::exp(-score(ex)));
      const double g = p - target;
      bias -= 0.1 * g;
      for (const auto& t : ex.tokens) w[index.at(t)] -= 0.1 * g;
    }
  }
  std::size_t hits = 0;
  for (const auto& ex : test) {
    const int pred = score(ex) > 0.0 ? 1 : 0;
    hits += pred == (predict_z ? ex.z : ex.y);
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("tokenizer rules") {
  CHECK(tokenize("hi there") == Tokens{"hi", "there"});
  CHECK(tokenize("@user hi :)") == Tokens{"@user", "hi", ":)"});
  CHECK(tokenize("so happy \xF0\x9F\x98\x80") == Tokens{"so", "happy", "\xF0\x9F\x98\x80"});
  CHECK(tokenize("") == Tokens{});
  CHECK(tokenize("   ") == Tokens{});
  CHECK(tokenize("wow!!! great.") == Tokens{"wow", "!!!", "great", "."});
  CHECK(tokenize("see http://t.co/abc now") == Tokens{"see", "http://t.co/abc", "now"});
  CHECK(tokenize("#blessed day") == Tokens{"#blessed", "day"});
  CHECK(tokenize("don't stop") == Tokens{"don't", "stop"});
  CHECK(tokenize("ok : ) fine") == Tokens{"ok", ": )", "fine"});
  CHECK(tokenize("ok :-( =) :D") == Tokens{"ok", ":-(", "=)", ":D"});
  CHECK(tokenize("time: 5") == Tokens{"time", ":", "5"});
  CHECK(tokenize("hey!@bob") == Tokens{"hey", "!", "@bob"});
  // skin tone and ZWJ sequences stay whole; adjacent emoji split
  CHECK(tokenize("\xF0\x9F\x91\x8D\xF0\x9F\x8F\xBD\xF0\x9F\x98\x80") ==
        Tokens{"\xF0\x9F\x91\x8D\xF0\x9F\x8F\xBD", "\xF0\x9F\x98\x80"});
  CHECK(tokenize("Naw HI") == Tokens{"Naw", "HI"});
  CHECK(tokenize("Naw HI @Bob", true) == Tokens{"naw", "hi", "@bob"});
}

TEST_CASE("sentiment derivation") {
  const auto lex = SentimentLexicon::defaults();
  for (const char* m : {":)", ":-)", ": )", ":D", "=)"}) CHECK(lex.positive.count(m));
  for (const char* m : {":(", ":-(", ": (", "=("}) CHECK(lex.negative.count(m));

  auto pos = derive_sentiment({"good", "day", ":)"}, lex);
  REQUIRE(pos);
  CHECK(pos->first == Tokens{"good", "day"});
  CHECK(pos->second == kPositive);
  auto neg = derive_sentiment({"bad", ":(", "day", ":("}, lex);
  REQUIRE(neg);
  CHECK(neg->first == Tokens{"bad", "day"});
  CHECK(neg->second == kNegative);
  CHECK_FALSE(derive_sentiment({":)", ":("}, lex));
  CHECK_FALSE(derive_sentiment({"plain", "text", "here"}, lex));
}

TEST_CASE("lexicon config") {
  const auto lex = SentimentLexicon::parse("# comment\n[positive]\n:)\nyay\n\n[negative]\n:(\n");
  CHECK(lex.positive == std::set<std::string>{":)", "yay"});
  CHECK(lex.negative == std::set<std::string>{":("});
  CHECK(SentimentLexicon::parse(lex.serialize()).positive == lex.positive);
  CHECK_THROWS(SentimentLexicon::parse("[positive]\n:)\n[negative]\n:)\n"));
  CHECK(SentimentLexicon::parse("[positive]\n#happy\n").positive.count("#happy"));
  CHECK_THROWS_AS(SentimentLexicon::parse(":)\n"), ParseError);
}

TEST_CASE("mention derivation") {
  auto [a, ya] = derive_mention({"@bob", "hi", "there"});
  CHECK(a == Tokens{"hi", "there"});
  CHECK(ya == 1);
  auto [b, yb] = derive_mention({"hi", "there", "friend"});
  CHECK(b == Tokens{"hi", "there", "friend"});
  CHECK(yb == 0);
  auto [c, yc] = derive_mention({"@a", "@b", "ok", "then", "now"});
  CHECK(c == Tokens{"ok", "then", "now"});
  CHECK(yc == 1);
  auto [d, yd] = derive_mention({"@", "x", "y"});
  CHECK(d == Tokens{"@", "x", "y"});
  CHECK(yd == 0);
}

TEST_CASE("corpus derivation applies the discard rules") {
  const auto lex = SentimentLexicon::defaults();
  DeriveSummary summary;
  const auto out = derive_corpus("great game today :)\t1\nugh :( :) what\t0\nrainy day again :(\t0\n",
                                 DeriveTask::sentiment, lex, summary);
  CHECK(out.size() == 2);
  CHECK(summary.read == 3);
  CHECK(summary.kept == 2);
  CHECK(summary.mixed == 1);
  CHECK(summary.discarded() == 1);
  CHECK(out[0].tokens == Tokens{"great", "game", "today"});
  CHECK(out[0].y == kPositive);
  CHECK(out[0].z == 1);

  DeriveSummary s2;
  const auto short_dup = derive_corpus("hi :)\t0\na b c :)\t0\na b c :)\t1\nno marker here\t1\n",
                                       DeriveTask::sentiment, lex, s2);
  CHECK(short_dup.size() == 1);
  CHECK(s2.too_short == 1);
  CHECK(s2.duplicate == 1);
  CHECK(s2.no_marker == 1);

  DeriveSummary s3;
  const auto mentions = derive_corpus("@x hey you there\t1\nhey you there now\t0\n", DeriveTask::mention, lex, s3);
  REQUIRE(mentions.size() == 2);
  for (const auto& ex : mentions) {
    for (const auto& t : ex.tokens) CHECK_FALSE(is_mention(t));
  }
  CHECK(mentions[0].y == 1);
  CHECK(mentions[1].y == 0);

  DeriveSummary s4;
  try {
    derive_corpus("fine text :)\t1\nbad line without tab :)\n", DeriveTask::sentiment, lex, s4);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  DeriveSummary s5;
  CHECK_THROWS_AS(derive_corpus("text :)\tx\n", DeriveTask::sentiment, lex, s5), ParseError);
}

TEST_CASE("corpus tsv round trip") {
  std::vector<Example> ex = {{{"a", "b", "c"}, 1, 0}, {{"@u", "x", ":)"}, 0, 1}};
  const auto text = format_corpus_tsv(ex);
  CHECK(parse_corpus_tsv(text) == ex);
  CHECK_THROWS_AS(parse_corpus_tsv("a b c\t1\n"), ParseError);
  CHECK_THROWS_AS(parse_corpus_tsv("a b c\t1\t2\n"), ParseError);
}

TEST_CASE("vocabulary") {
  const std::vector<Example> corpus = {{{"a", "a", "b"}, 0, 0}};
  const auto v = build_vocab(corpus, 1);
  CHECK(v.id("<pad>") == Vocabulary::kPad);
  CHECK(v.id("<unk>") == Vocabulary::kUnk);
  CHECK(v.id("a") == 2);
  CHECK(v.id("b") == 3);
  CHECK(v.id("dev-only") == Vocabulary::kUnk);
  const auto v2 = build_vocab(corpus, 2);
  CHECK(v2.id("a") == 2);
  CHECK(v2.id("b") == Vocabulary::kUnk);
  CHECK(v2.size() == 3);
  // ties broken lexicographically
  const auto v3 = build_vocab({{{"q", "p", "r"}, 0, 0}});
  CHECK(v3.id("p") == 2);
  CHECK(v3.id("q") == 3);
  CHECK(v3.id("r") == 4);
  CHECK_THROWS(build_vocab({}));
  CHECK(Vocabulary(v.tokens()) == v);
}

TEST_CASE("split exactness") {
  SyntheticSpec spec;
  spec.per_cell = 700;
  const auto pool = generate_synthetic_corpus(spec, 5);
  auto [train, dev] = make_split(pool, {1000, 200}, balanced_proportions(), 9);
  for (int y : {0, 1}) {
    for (int z : {0, 1}) {
      CHECK(count_cell(train, y, z) == 250);
      CHECK(count_cell(dev, y, z) == 50);
    }
  }
  std::set<Tokens> seen;
  for (const auto& ex : train.examples) seen.insert(ex.tokens);
  for (const auto& ex : dev.examples) CHECK_FALSE(seen.count(ex.tokens));

  auto [ut, ud] = make_split(pool, {1000, 100}, unbalanced_proportions(0.8), 9);
  CHECK(count_cell(ut, 1, 1) == 400);
  CHECK(count_cell(ut, 1, 0) == 100);
  CHECK(count_cell(ut, 0, 1) == 100);
  CHECK(count_cell(ut, 0, 0) == 400);

  // 166000 scaled down by 100
  const auto counts = cell_counts_for(1660, unbalanced_proportions(0.8));
  CHECK(counts[1][1] == 664);
  CHECK(counts[1][0] == 166);
  CHECK(counts[0][1] == 166);
  CHECK(counts[0][0] == 664);
  // odd sizes still sum exactly
  for (std::size_t n : {1u, 3u, 7u, 1001u}) {
    const auto c = cell_counts_for(n, unbalanced_proportions(0.8));
    CHECK(c[0][0] + c[0][1] + c[1][0] + c[1][1] == n);
  }

  // same seed, same split; other seed, other split
  auto [again, again_dev] = make_split(pool, {1000, 200}, balanced_proportions(), 9);
  CHECK(again.examples == train.examples);
  auto [other, other_dev] = make_split(pool, {1000, 200}, balanced_proportions(), 10);
  CHECK_FALSE(other.examples == train.examples);

  try {
    make_split(pool, {3000, 200}, balanced_proportions(), 1);
    FAIL("expected a shortage error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("(y=") != std::string::npos);
  }

  auto balanced = balance(ut, 3);
  for (int y : {0, 1}) {
    for (int z : {0, 1}) CHECK(count_cell(balanced, y, z) == 100);
  }
}

TEST_CASE("synthetic corpus invariants") {
  SyntheticSpec spec;
  spec.per_cell = 300;
  const auto pool = generate_synthetic_corpus(spec, 1);
  CHECK(pool.size() == 1200);
  std::set<Tokens> seen;
  for (const auto& ex : pool) {
    CHECK(ex.tokens.size() >= kMinTokens);
    CHECK(seen.insert(ex.tokens).second);
  }
  CHECK(generate_synthetic_corpus(spec, 1) == pool);
  CHECK_FALSE(generate_synthetic_corpus(spec, 2) == pool);

  SyntheticSpec bad = spec;
  bad.s_z = 1.5;
  CHECK_THROWS(generate_synthetic_corpus(bad, 1));
  bad = spec;
  bad.min_len = 2;
  CHECK_THROWS(generate_synthetic_corpus(bad, 1));
}

TEST_CASE("synthetic corpus: planted z signal strength") {
  SyntheticSpec spec;
  spec.per_cell = 1500;
  auto oracle = [&](double s_z, double gap) {
    SyntheticSpec s = spec;
    s.s_z = s_z;
    s.y_rate_gap = gap;
    const auto pool = generate_synthetic_corpus(s, 17);
    auto [train, test] = make_split(pool, {4000, 2000}, balanced_proportions(), 3);
    return logistic_oracle_accuracy(train.examples, test.examples, true);
  };
  const double none = oracle(0.0, 0.0);
  const double mid = oracle(0.6, 0.0);
  MESSAGE("bag-of-words z accuracy at s_z=0.6: " << mid);
  CHECK(std::abs(none - 0.5) <= 0.03);
  CHECK(mid > 0.55);
  CHECK(mid < 0.95);

  // full signal: the class of the protected marker decides z
  SyntheticSpec full = spec;
  full.s_z = 1.0;
  const auto pool = generate_synthetic_corpus(full, 17);
  std::size_t hits = 0;
  for (const auto& ex : pool) {
    int rule = -1;
    for (const auto& t : ex.tokens) {
      if (t.rfind("z0_", 0) == 0 || t.rfind("zr0_", 0) == 0) rule = 0;
      if (t.rfind("z1_", 0) == 0 || t.rfind("zr1_", 0) == 0) rule = 1;
    }
    hits += rule == ex.z;
  }
  CHECK(hits == pool.size());

  // main-task signal: s_y = 1 is separable for the same oracle
  SyntheticSpec ys = spec;
  ys.s_y = 1.0;
  ys.y_rate_gap = 0.0;
  const auto ypool = generate_synthetic_corpus(ys, 4);
  auto [ytrain, ytest] = make_split(ypool, {4000, 2000}, balanced_proportions(), 3);
  CHECK(logistic_oracle_accuracy(ytrain.examples, ytest.examples, false) > 0.97);

  // marker rates per z group
  SyntheticSpec gap = spec;
  gap.per_cell = 4000;
  std::size_t marked[2] = {0, 0}, seen[2] = {0, 0};
  for (const auto& e : generate_synthetic_corpus(gap, 6)) {
    ++seen[e.z];
    for (const auto& t : e.tokens) marked[e.z] += t.rfind("y", 0) == 0;
  }
  CHECK(std::abs(static_cast<double>(marked[0]) / seen[0] - 0.9) <= 0.02);
  CHECK(std::abs(static_cast<double>(marked[1]) / seen[1] - 0.5) <= 0.02);
  gap.y_rate_gap = 0.8;
  CHECK_THROWS(generate_synthetic_corpus(gap, 1));
}

TEST_CASE("vector dumps") {
  const auto d = parse_vector_dump("1,2,3,4\t0\n5,6,7,8\t1\t1\n");
  CHECK(d.dim == 4);
  CHECK(d.rows() == 2);
  CHECK(d.z == std::vector<int>{0, 1});
  CHECK_FALSE(d.y[0].has_value());
  CHECK(d.y[1] == 1);

  const auto j = parse_vector_dump("{\"v\":[0.5,1],\"z\":0,\"y\":1}\n{\"v\":[2,3],\"z\":1}\n");
  CHECK(j.dim == 2);
  CHECK(j.values == std::vector<double>{0.5, 1, 2, 3});

  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_vector_dump(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("1,2\t0\n1,2,3\t1\n") == 2);
  CHECK(line_of("1,2\t0\n1,x\t1\n") == 2);
  CHECK(line_of("1,2\t0\n1,2\n") == 2);
  CHECK_THROWS(parse_vector_dump("1,2\t0\n3,4\t0\n"));

  VectorDump r;
  r.dim = 3;
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const double v[3] = {rng.uniform(-1, 1), rng.uniform(-1e-300, 1e-300), 0.1 * i};
    r.push_back(v, i % 2, i % 3 == 0 ? std::optional<int>(1) : std::nullopt);
  }
  for (auto fmt : {DumpFormat::tsv, DumpFormat::jsonl}) {
    const auto back = parse_vector_dump(format_vector_dump(r, fmt));
    CHECK(back.values == r.values);
    CHECK(back.z == r.z);
    CHECK(back.y == r.y);
  }
  const auto path = std::filesystem::temp_directory_path() / "advrem_dump_test.tsv";
  write_vector_dump(path, r);
  CHECK(load_vector_dump(path).values == r.values);
  std::filesystem::remove(path);
}
