#include "advrem/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "advrem/tensor.hpp"

namespace advrem {

namespace {

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int parse_label(std::string_view field, std::size_t line, const char* name) {
  field = trim(field);
  if (field == "0") return 0;
  if (field == "1") return 1;
  throw ParseError(line, std::string(name) + " label must be 0 or 1, got '" + std::string(field) + "'");
}

double parse_double(std::string_view field, std::size_t line) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line, "non-numeric vector component '" + std::string(field) + "'");
  }
  if (!std::isfinite(value)) throw ParseError(line, "non-finite vector component");
  return value;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::dev: return "dev";
    case SplitTag::heldout: return "heldout";
  }
  return "unknown";
}

Proportions balanced_proportions() { return {{{0.25, 0.25}, {0.25, 0.25}}}; }

Proportions unbalanced_proportions(double q) {
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("unbalanced q must lie in [0, 1]");
  return {{{q / 2.0, (1.0 - q) / 2.0}, {(1.0 - q) / 2.0, q / 2.0}}};
}

CellCounts cell_counts_for(std::size_t size, const Proportions& p) {
  double total_p = 0.0;
  for (const auto& row : p) {
    for (double v : row) {
      if (v < 0.0) throw std::invalid_argument("negative cell proportion");
      total_p += v;
    }
  }
  if (std::abs(total_p - 1.0) > 1e-9) throw std::invalid_argument("cell proportions must sum to 1");
  CellCounts counts{};
  std::array<std::pair<double, int>, 4> remainders;
  std::size_t assigned = 0;
  for (int cell = 0; cell < 4; ++cell) {
    const double quota = static_cast<double>(size) * p[cell / 2][cell % 2];
    const auto whole = static_cast<std::size_t>(std::floor(quota));
    counts[cell / 2][cell % 2] = whole;
    assigned += whole;
    remainders[cell] = {quota - static_cast<double>(whole), cell};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < size; ++k, ++assigned) {
    const int cell = remainders[k % 4].second;
    ++counts[cell / 2][cell % 2];
  }
  return counts;
}

CellCounts Dataset::cell_counts() const {
  CellCounts counts{};
  for (const auto& ex : examples) ++counts[ex.y][ex.z];
  return counts;
}

// --- lexicon ---------------------------------------------------------------------

SentimentLexicon SentimentLexicon::defaults() {
  SentimentLexicon lex;
  lex.positive = {":)", ":-)", ": )", ":D", "=)", "😀", "😃", "😄", "😁", "😊", "😍", "😂", "❤", "❤️", "👍", "😘"};
  lex.negative = {":(", ":-(", ": (", "=(", "😢", "😭", "😞", "😠", "😡", "💔", "😔", "😩", "👎"};
  return lex;
}

SentimentLexicon SentimentLexicon::parse(std::string_view text) {
  SentimentLexicon lex;
  std::set<std::string>* section = nullptr;
  std::size_t line_no = 0;
  for (auto raw : split_lines(text)) {
    ++line_no;
    // markers may contain inner spaces (": )"), so only trailing whitespace goes
    std::string_view line = raw;
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
    if (line.empty()) continue;
    if (line == "#" || line.starts_with("# ")) continue;  // "#tag" stays a marker
    if (line == "[positive]") {
      section = &lex.positive;
    } else if (line == "[negative]") {
      section = &lex.negative;
    } else if (section == nullptr) {
      throw ParseError(line_no, "marker outside of a [positive]/[negative] section");
    } else {
      section->insert(std::string(line));
    }
  }
  for (const auto& m : lex.positive) {
    if (lex.negative.count(m)) throw std::invalid_argument("lexicon marker '" + m + "' is both positive and negative");
  }
  return lex;
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path) {
  return parse(read_text_file(path));
}

std::string SentimentLexicon::serialize() const {
  std::string out = "[positive]\n";
  for (const auto& m : positive) out += m + "\n";
  out += "[negative]\n";
  for (const auto& m : negative) out += m + "\n";
  return out;
}

std::optional<std::pair<Tokens, int>> derive_sentiment(const Tokens& tokens,
                                                       const SentimentLexicon& lexicon) {
  bool pos = false, neg = false;
  Tokens rest;
  for (const auto& t : tokens) {
    if (lexicon.positive.count(t)) {
      pos = true;
    } else if (lexicon.negative.count(t)) {
      neg = true;
    } else {
      rest.push_back(t);
    }
  }
  if (pos == neg) return std::nullopt;
  return std::make_pair(std::move(rest), pos ? kPositive : kNegative);
}

bool is_mention(std::string_view token) { return token.size() > 1 && token.front() == '@'; }

std::pair<Tokens, int> derive_mention(const Tokens& tokens) {
  Tokens rest;
  int y = 0;
  for (const auto& t : tokens) {
    if (is_mention(t)) {
      y = 1;
    } else {
      rest.push_back(t);
    }
  }
  return {std::move(rest), y};
}

std::uint64_t sequence_hash(const Tokens& tokens) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (const auto& t : tokens) {
    for (unsigned char ch : t) {
      h ^= ch;
      h *= 0x100000001B3ULL;
    }
    h ^= 0x1F;  // unit separator between tokens
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<Example> dedupe_and_filter(std::vector<Example> examples) {
  std::vector<Example> out;
  std::set<Tokens> seen;
  for (auto& ex : examples) {
    if (ex.tokens.size() < kMinTokens) continue;
    if (!seen.insert(ex.tokens).second) continue;
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> derive_corpus(std::string_view input, DeriveTask task,
                                   const SentimentLexicon& lexicon, DeriveSummary& summary,
                                   std::optional<int> default_z, bool lowercase) {
  std::vector<Example> out;
  std::set<Tokens> seen;
  std::size_t line_no = 0;
  for (auto line : split_lines(input)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++summary.read;
    const auto fields = split_on(line, '\t');
    int z = 0;
    if (fields.size() == 1) {
      if (!default_z) throw ParseError(line_no, "expected 'text<TAB>z', found no tab");
      z = *default_z;
    } else if (fields.size() == 2) {
      z = parse_label(fields[1], line_no, "z");
    } else if (fields.size() == 3) {
      z = parse_label(fields[2], line_no, "z");
    } else {
      throw ParseError(line_no, "too many tab-separated fields (" + std::to_string(fields.size()) + ")");
    }
    const Tokens tokens = tokenize(fields[0], lowercase);
    Example ex;
    ex.z = z;
    if (task == DeriveTask::sentiment) {
      const bool has_pos = std::any_of(tokens.begin(), tokens.end(),
                                       [&](const auto& t) { return lexicon.positive.count(t) > 0; });
      const bool has_neg = std::any_of(tokens.begin(), tokens.end(),
                                       [&](const auto& t) { return lexicon.negative.count(t) > 0; });
      auto derived = derive_sentiment(tokens, lexicon);
      if (!derived) {
        ++(has_pos && has_neg ? summary.mixed : summary.no_marker);
        continue;
      }
      ex.tokens = std::move(derived->first);
      ex.y = derived->second;
    } else {
      auto [rest, y] = derive_mention(tokens);
      ex.tokens = std::move(rest);
      ex.y = y;
    }
    if (ex.tokens.size() < kMinTokens) {
      ++summary.too_short;
      continue;
    }
    if (!seen.insert(ex.tokens).second) {
      ++summary.duplicate;
      continue;
    }
    ++summary.kept;
    out.push_back(std::move(ex));
  }
  return out;
}

// --- corpus files ------------------------------------------------------------------

std::vector<Example> parse_corpus_tsv(std::string_view content, bool lowercase) {
  std::vector<Example> out;
  std::size_t line_no = 0;
  for (auto line : split_lines(content)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 3) {
      throw ParseError(line_no, "expected 3 tab-separated fields (text, y, z), found " +
                                    std::to_string(fields.size()));
    }
    Example ex;
    ex.tokens = tokenize(fields[0], lowercase);
    ex.y = parse_label(fields[1], line_no, "y");
    ex.z = parse_label(fields[2], line_no, "z");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> read_corpus_tsv(const std::filesystem::path& path, bool lowercase) {
  return parse_corpus_tsv(read_text_file(path), lowercase);
}

std::string format_corpus_tsv(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += join_tokens(ex.tokens);
    out += '\t';
    out += std::to_string(ex.y);
    out += '\t';
    out += std::to_string(ex.z);
    out += '\n';
  }
  return out;
}

void write_corpus_tsv(const std::filesystem::path& path, const std::vector<Example>& examples) {
  write_text_file(path, format_corpus_tsv(examples));
}

// --- vocabulary --------------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> id_to_token) {
  tokens_ = {std::string(kPadToken), std::string(kUnkToken)};
  std::size_t start = 0;
  if (id_to_token.size() >= 2 && id_to_token[0] == kPadToken && id_to_token[1] == kUnkToken) start = 2;
  for (std::size_t i = start; i < id_to_token.size(); ++i) tokens_.push_back(std::move(id_to_token[i]));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::unordered_map<std::string, std::size_t> token_frequencies(const std::vector<Example>& examples) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& ex : examples) {
    for (const auto& t : ex.tokens) ++counts[t];
  }
  return counts;
}

Vocabulary build_vocab(const std::vector<Example>& train, std::size_t min_count) {
  const auto counts = token_frequencies(train);
  if (counts.empty()) throw std::invalid_argument("build_vocab: empty training corpus");
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [token, count] : counts) {
    if (count >= min_count && token != Vocabulary::kPadToken && token != Vocabulary::kUnkToken) {
      entries.emplace_back(token, count);
    }
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocabulary(std::move(tokens));
}

// --- splitting ---------------------------------------------------------------------

std::pair<Dataset, Dataset> make_split(const std::vector<Example>& pool, SplitSizes sizes,
                                       const Proportions& proportions, std::uint64_t seed) {
  const CellCounts train_counts = cell_counts_for(sizes.train, proportions);
  const CellCounts dev_counts = cell_counts_for(sizes.dev, proportions);
  std::array<std::array<std::vector<std::size_t>, 2>, 2> by_cell;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& ex = pool[i];
    if ((ex.y != 0 && ex.y != 1) || (ex.z != 0 && ex.z != 1)) {
      throw std::invalid_argument("make_split: labels must be binary");
    }
    by_cell[ex.y][ex.z].push_back(i);
  }
  Dataset train, dev;
  train.tag = SplitTag::train;
  dev.tag = SplitTag::dev;
  train.proportions = dev.proportions = proportions;
  const Rng base(seed, 0x5B117);
  for (int y = 0; y < 2; ++y) {
    for (int z = 0; z < 2; ++z) {
      auto& indices = by_cell[y][z];
      const std::size_t need = train_counts[y][z] + dev_counts[y][z];
      if (indices.size() < need) {
        throw std::invalid_argument("make_split: cell (y=" + std::to_string(y) + ", z=" +
                                    std::to_string(z) + ") needs " + std::to_string(need) +
                                    " examples but the pool has " + std::to_string(indices.size()));
      }
      Rng rng = base.fork(static_cast<std::uint64_t>(2 * y + z));
      rng.shuffle(indices);
      for (std::size_t k = 0; k < train_counts[y][z]; ++k) train.examples.push_back(pool[indices[k]]);
      for (std::size_t k = 0; k < dev_counts[y][z]; ++k) {
        dev.examples.push_back(pool[indices[train_counts[y][z] + k]]);
      }
    }
  }
  Rng order = base.fork(99);
  order.shuffle(train.examples);
  order.shuffle(dev.examples);
  return {std::move(train), std::move(dev)};
}

Dataset balance(const Dataset& dataset, std::uint64_t seed) {
  std::array<std::array<std::vector<std::size_t>, 2>, 2> by_cell;
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    by_cell[dataset.examples[i].y][dataset.examples[i].z].push_back(i);
  }
  std::size_t per_cell = SIZE_MAX;
  for (const auto& row : by_cell) {
    for (const auto& cell : row) per_cell = std::min(per_cell, cell.size());
  }
  Dataset out;
  out.tag = dataset.tag;
  out.proportions = balanced_proportions();
  const Rng base(seed, 0xBA1A);
  for (int y = 0; y < 2; ++y) {
    for (int z = 0; z < 2; ++z) {
      auto indices = by_cell[y][z];
      Rng rng = base.fork(static_cast<std::uint64_t>(2 * y + z));
      rng.shuffle(indices);
      indices.resize(per_cell);
      std::sort(indices.begin(), indices.end());
      for (auto i : indices) out.examples.push_back(dataset.examples[i]);
    }
  }
  Rng order = base.fork(99);
  order.shuffle(out.examples);
  return out;
}

// --- synthetic corpora -------------------------------------------------------------

void SyntheticSpec::validate() const {
  auto prob = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument(std::string("synthetic spec: ") + name + " must lie in [0, 1]");
    }
  };
  prob(s_y, "s_y");
  prob(s_z, "s_z");
  prob(s_y + y_rate_gap / 2.0, "s_y + y_rate_gap / 2");
  prob(s_y - y_rate_gap / 2.0, "s_y - y_rate_gap / 2");
  prob(z_rare_rate, "z_rare_rate");
  if (min_len < kMinTokens) throw std::invalid_argument("synthetic spec: min_len must be at least 3");
  if (max_len < min_len) throw std::invalid_argument("synthetic spec: max_len < min_len");
  if (shared_vocab == 0 || y_pool == 0 || z_pool == 0) {
    throw std::invalid_argument("synthetic spec: token pools must be non-empty");
  }
  if (z_rare_rate > 0.0 && z_rare_pool == 0) {
    throw std::invalid_argument("synthetic spec: z_rare_rate > 0 needs a rare pool");
  }
  if (zipf_exponent < 0.0) throw std::invalid_argument("synthetic spec: negative zipf exponent");
}

std::vector<Example> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<double> cdf(spec.shared_vocab);
  double acc = 0.0;
  for (std::size_t k = 0; k < spec.shared_vocab; ++k) {
    acc += 1.0 / std::pow(static_cast<double>(k + 1), spec.zipf_exponent);
    cdf[k] = acc;
  }
  for (double& v : cdf) v /= acc;

  auto filler = [&](Rng& rng) {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), spec.shared_vocab - 1);
    return "w" + std::to_string(k);
  };

  std::vector<Example> out;
  out.reserve(4 * spec.per_cell);
  std::set<Tokens> seen;
  for (int y = 0; y < 2; ++y) {
    for (int z = 0; z < 2; ++z) {
      const auto cell = static_cast<std::uint64_t>(2 * y + z);
      for (std::size_t i = 0; i < spec.per_cell; ++i) {
        for (std::uint64_t attempt = 0;; ++attempt) {
          if (attempt > 1000) {
            throw std::runtime_error("synthetic corpus: could not draw a unique example; enlarge the vocabulary");
          }
          Rng rng(seed, mix64((cell << 48) ^ (static_cast<std::uint64_t>(i) << 8) ^ attempt));
          const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
          Example ex;
          ex.y = y;
          ex.z = z;
          ex.tokens.reserve(len);
          for (std::size_t t = 0; t < len; ++t) ex.tokens.push_back(filler(rng));
          const std::size_t y_pos = rng.below(len);
          std::size_t z_pos = rng.below(len - 1);
          if (z_pos >= y_pos) ++z_pos;
          const double y_rate = spec.s_y + (z == 0 ? 0.5 : -0.5) * spec.y_rate_gap;
          if (rng.bernoulli(y_rate)) {
            ex.tokens[y_pos] = "y" + std::to_string(y) + "_" + std::to_string(rng.below(spec.y_pool));
          }
          if (rng.bernoulli(spec.s_z)) {
            if (rng.bernoulli(spec.z_rare_rate)) {
              ex.tokens[z_pos] = "zr" + std::to_string(z) + "_" + std::to_string(rng.below(spec.z_rare_pool));
            } else {
              ex.tokens[z_pos] = "z" + std::to_string(z) + "_" + std::to_string(rng.below(spec.z_pool));
            }
          }
          if (seen.insert(ex.tokens).second) {
            out.push_back(std::move(ex));
            break;
          }
        }
      }
    }
  }
  return out;
}

// --- vector dumps ------------------------------------------------------------------

void VectorDump::push_back(std::span<const double> vector, int z_label, std::optional<int> y_label) {
  if (rows() == 0 && dim == 0) dim = vector.size();
  if (vector.size() != dim) throw DimensionError("vector dump: ragged row");
  values.insert(values.end(), vector.begin(), vector.end());
  z.push_back(z_label);
  y.push_back(y_label);
}

VectorDump VectorDump::select(std::span<const std::size_t> indices) const {
  VectorDump out;
  out.dim = dim;
  for (auto i : indices) out.push_back(row(i), z[i], y[i]);
  return out;
}

VectorDump parse_vector_dump(std::string_view content) {
  VectorDump dump;
  std::size_t line_no = 0;
  std::vector<double> vec;
  for (auto raw : split_lines(content)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    vec.clear();
    int z = 0;
    std::optional<int> y;
    if (line.front() == '{') {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(line_no, std::string("malformed JSON: ") + e.what());
      }
      if (!j.contains("v") || !j["v"].is_array()) throw ParseError(line_no, "missing vector field 'v'");
      if (!j.contains("z")) throw ParseError(line_no, "missing protected label 'z'");
      for (const auto& v : j["v"]) {
        if (!v.is_number()) throw ParseError(line_no, "non-numeric vector component");
        vec.push_back(v.get<double>());
      }
      if (!j["z"].is_number_integer()) throw ParseError(line_no, "z must be an integer label");
      z = parse_label(std::to_string(j["z"].get<long long>()), line_no, "z");
      if (j.contains("y") && !j["y"].is_null()) {
        if (!j["y"].is_number_integer()) throw ParseError(line_no, "y must be an integer label");
        y = parse_label(std::to_string(j["y"].get<long long>()), line_no, "y");
      }
    } else {
      const auto fields = split_on(line, '\t');
      if (fields.size() < 2) throw ParseError(line_no, "missing protected label z");
      if (fields.size() > 3) throw ParseError(line_no, "too many tab-separated fields");
      for (auto comp : split_on(fields[0], ',')) vec.push_back(parse_double(comp, line_no));
      z = parse_label(fields[1], line_no, "z");
      if (fields.size() == 3) y = parse_label(fields[2], line_no, "y");
    }
    if (vec.empty()) throw ParseError(line_no, "empty vector");
    if (dump.rows() > 0 && vec.size() != dump.dim) {
      throw ParseError(line_no, "ragged row: dimension " + std::to_string(vec.size()) +
                                    " but earlier rows have " + std::to_string(dump.dim));
    }
    dump.push_back(vec, z, y);
  }
  if (dump.rows() == 0) throw ParseError(line_no, "vector dump has no rows");
  for (int label : {0, 1}) {
    if (std::find(dump.z.begin(), dump.z.end(), label) == dump.z.end()) {
      throw ParseError(line_no, "vector dump has no row with z=" + std::to_string(label));
    }
  }
  return dump;
}

VectorDump load_vector_dump(const std::filesystem::path& path) {
  return parse_vector_dump(read_text_file(path));
}

std::string format_vector_dump(const VectorDump& dump, DumpFormat format) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < dump.rows(); ++i) {
    const auto row = dump.row(i);
    if (format == DumpFormat::jsonl) out += "{\"v\":[";
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof(buf), row[k]);
      out.append(buf, res.ptr);
    }
    if (format == DumpFormat::jsonl) {
      out += "],\"z\":" + std::to_string(dump.z[i]);
      if (dump.y[i]) out += ",\"y\":" + std::to_string(*dump.y[i]);
      out += "}\n";
    } else {
      out += '\t' + std::to_string(dump.z[i]);
      if (dump.y[i]) out += '\t' + std::to_string(*dump.y[i]);
      out += '\n';
    }
  }
  return out;
}

void write_vector_dump(const std::filesystem::path& path, const VectorDump& dump, DumpFormat format) {
  write_text_file(path, format_vector_dump(dump, format));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace advrem
