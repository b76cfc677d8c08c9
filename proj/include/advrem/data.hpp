#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace advrem {

using Tokens = std::vector<std::string>;

/// Minimum sequence length kept in any corpus.
inline constexpr std::size_t kMinTokens = 3;

/// Input-format error carrying the 1-based line number it was found on.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Example {
  Tokens tokens;
  int y = 0;
  int z = 0;

  bool operator==(const Example&) const = default;
};

enum class SplitTag { train, dev, heldout };
std::string to_string(SplitTag tag);

/// p[y][z]: fraction of a split that falls into each label cell.
using Proportions = std::array<std::array<double, 2>, 2>;
using CellCounts = std::array<std::array<std::size_t, 2>, 2>;

Proportions balanced_proportions();
/// Both y marginals 0.5; within y=1 the share of z=1 is q, within y=0 it is 1-q.
Proportions unbalanced_proportions(double q);
/// Integer cell counts for a split of `size` examples (largest-remainder rounding,
/// ties to the lower cell index in (y, z) order).
CellCounts cell_counts_for(std::size_t size, const Proportions& p);

struct Dataset {
  std::vector<Example> examples;
  SplitTag tag = SplitTag::train;
  Proportions proportions = balanced_proportions();

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  CellCounts cell_counts() const;
};

// --- tokenization and task derivation ----------------------------------------

/// Rule-based tweet tokenizer. Scanning left to right, skipping whitespace, the
/// first matching rule produces the next token:
///   1. URL: "http://", "https://" or "www." up to the next whitespace.
///   2. Emoticon: eyes [:;=], optional nose [-^'], optional single space (":" and
///      "=" eyes only), then a run of one mouth character from ")(][DPpOo/\|*3";
///      must not be followed by a letter or digit. "<3" is also an emoticon.
///   3. Mention: "@" followed by [A-Za-z0-9_]+.
///   4. Hashtag: "#" followed by word characters.
///   5. Emoji: a pictographic codepoint plus any variation selectors, skin-tone
///      modifiers, keycap marks and ZWJ-joined continuations; regional-indicator
///      pairs form one flag token.
///   6. Word: word characters (ASCII letters, digits, "_", non-ASCII non-emoji,
///      non-punctuation codepoints) with internal apostrophes (' or U+2019).
///   7. Punctuation: a run of ASCII/general punctuation that stops where rule 2-4
///      would match.
/// With lowercase set, ASCII letters of words, mentions and hashtags are folded.
Tokens tokenize(std::string_view text, bool lowercase = false);

struct SentimentLexicon {
  std::set<std::string> positive;
  std::set<std::string> negative;

  /// The emoticon markers plus a starter emoji set; extend through a config file.
  static SentimentLexicon defaults();
  /// Plain text with "[positive]" / "[negative]" section lines, one marker per line.
  /// A line that is "#" or starts with "# " is a comment.
  static SentimentLexicon parse(std::string_view text);
  static SentimentLexicon load(const std::filesystem::path& path);
  std::string serialize() const;
};

inline constexpr int kPositive = 1;
inline constexpr int kNegative = 0;

/// Strips every sentiment marker and labels by polarity; nullopt for mixed or no markers.
std::optional<std::pair<Tokens, int>> derive_sentiment(const Tokens& tokens,
                                                       const SentimentLexicon& lexicon);
/// Removes every "@name" token; y = 1 iff at least one was present.
std::pair<Tokens, int> derive_mention(const Tokens& tokens);
bool is_mention(std::string_view token);

enum class DeriveTask { sentiment, mention };

struct DeriveSummary {
  std::size_t read = 0;
  std::size_t kept = 0;
  std::size_t mixed = 0;
  std::size_t no_marker = 0;
  std::size_t too_short = 0;
  std::size_t duplicate = 0;

  std::size_t discarded() const { return mixed + no_marker + too_short + duplicate; }
};

/// Derives a labelled corpus from "text<TAB>z" lines (a three-column
/// "text<TAB>y<TAB>z" line has its y ignored and re-derived). Lines without a
/// tab take default_z when given, otherwise raise ParseError.
std::vector<Example> derive_corpus(std::string_view input, DeriveTask task,
                                   const SentimentLexicon& lexicon, DeriveSummary& summary,
                                   std::optional<int> default_z = std::nullopt,
                                   bool lowercase = false);

/// Drops sequences shorter than kMinTokens and repeated token sequences (first kept).
std::vector<Example> dedupe_and_filter(std::vector<Example> examples);

std::uint64_t sequence_hash(const Tokens& tokens);

// --- corpus files --------------------------------------------------------------

/// "text<TAB>y<TAB>z" per line; text is re-tokenized on read.
std::vector<Example> parse_corpus_tsv(std::string_view content, bool lowercase = false);
std::vector<Example> read_corpus_tsv(const std::filesystem::path& path, bool lowercase = false);
std::string format_corpus_tsv(const std::vector<Example>& examples);
void write_corpus_tsv(const std::filesystem::path& path, const std::vector<Example>& examples);

// --- vocabulary ----------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> id_to_token);

  int id(const std::string& token) const;
  std::vector<int> encode(const Tokens& tokens) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Ids by descending training frequency, ties lexicographic, after PAD=0 and UNK=1.
/// Tokens seen fewer than min_count times are left out (they encode to UNK).
Vocabulary build_vocab(const std::vector<Example>& train, std::size_t min_count = 1);

/// Token occurrence counts over a set of examples.
std::unordered_map<std::string, std::size_t> token_frequencies(const std::vector<Example>& examples);

// --- splitting -----------------------------------------------------------------

struct SplitSizes {
  std::size_t train = 0;
  std::size_t dev = 0;
};

/// Exact-proportion train/dev split drawn without replacement from the pool.
/// Throws when any (y, z) cell of the pool is too small, naming the cell.
std::pair<Dataset, Dataset> make_split(const std::vector<Example>& pool, SplitSizes sizes,
                                       const Proportions& proportions, std::uint64_t seed);

/// Largest subset of the dataset with equal (y, z) cells, sampled with the seed.
Dataset balance(const Dataset& dataset, std::uint64_t seed);

// --- synthetic corpora ---------------------------------------------------------

/// Desk-scale stand-in for tweet corpora. Every example is a run of filler tokens
/// ("w<k>", Zipf-distributed over shared_vocab) with up to two injected markers:
///  - a main-task marker "y<y>_<k>", with probability s_y + y_rate_gap/2 when z = 0
///    and s_y - y_rate_gap/2 when z = 1 (one group states its sentiment explicitly
///    more often, so how sure the main task can be depends on z).
///  - with probability s_z a protected marker for z, drawn from the rare pool
///    "zr<z>_<k>" with probability z_rare_rate and from the common pool "z<z>_<k>"
///    otherwise.
struct SyntheticSpec {
  std::size_t per_cell = 1000;
  std::size_t shared_vocab = 2000;
  double zipf_exponent = 1.0;
  std::size_t y_pool = 20;
  std::size_t z_pool = 30;
  std::size_t z_rare_pool = 400;
  double z_rare_rate = 0.3;
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  double s_y = 0.7;
  double s_z = 0.6;
  double y_rate_gap = 0.4;

  void validate() const;
};

/// per_cell examples for each (y, z) cell, deduplicated, deterministic per seed.
std::vector<Example> generate_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

// --- vector dumps --------------------------------------------------------------

struct VectorDump {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major [rows x dim]
  std::vector<int> z;
  std::vector<std::optional<int>> y;

  std::size_t rows() const { return z.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }
  void push_back(std::span<const double> vector, int z_label, std::optional<int> y_label);
  /// Subset of rows, in the given order.
  VectorDump select(std::span<const std::size_t> indices) const;
};

enum class DumpFormat { tsv, jsonl };

/// TSV "v1,...,vd<TAB>z[<TAB>y]" or JSONL {"v":[...],"z":0,"y":1}; the format is
/// detected per line. Values are written in shortest round-trip form.
VectorDump parse_vector_dump(std::string_view content);
VectorDump load_vector_dump(const std::filesystem::path& path);
std::string format_vector_dump(const VectorDump& dump, DumpFormat format = DumpFormat::tsv);
void write_vector_dump(const std::filesystem::path& path, const VectorDump& dump,
                       DumpFormat format = DumpFormat::tsv);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace advrem
