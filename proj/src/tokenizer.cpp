#include <cctype>

#include "advrem/data.hpp"

namespace advrem {

namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;
};

Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) return {static_cast<char32_t>(((b0 & 0x1F) << 6) | c1), 2};
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) return {static_cast<char32_t>(((b0 & 0x0F) << 12) | (c1 << 6) | c2), 3};
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      return {static_cast<char32_t>(((b0 & 0x07) << 18) | (c1 << 12) | (c2 << 6) | c3), 4};
    }
  }
  return {U'�', 1};  // invalid byte: consumed alone
}

bool is_pictographic(char32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x27BF) ||
         (cp >= 0x2300 && cp <= 0x23FF) || (cp >= 0x2B00 && cp <= 0x2BFF) || cp == 0x00A9 ||
         cp == 0x00AE || cp == 0x203C || cp == 0x2049 || cp == 0x2122 || cp == 0x3030 ||
         cp == 0x303D || cp == 0x3297 || cp == 0x3299;
}

bool is_regional_indicator(char32_t cp) { return cp >= 0x1F1E6 && cp <= 0x1F1FF; }

bool is_emoji_modifier(char32_t cp) {
  return cp == 0xFE0F || cp == 0xFE0E || cp == 0x20E3 || (cp >= 0x1F3FB && cp <= 0x1F3FF) ||
         (cp >= 0xE0020 && cp <= 0xE007F);
}

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' || cp == '\v' ||
         cp == 0x00A0 || cp == 0x3000 || (cp >= 0x2000 && cp <= 0x200B) || cp == 0x202F ||
         cp == 0x205F;
}

bool is_unicode_punct(char32_t cp) {
  return (cp >= 0x2010 && cp <= 0x2027) || (cp >= 0x2030 && cp <= 0x205E) ||
         (cp >= 0x00A1 && cp <= 0x00BF && cp != 0x00AA && cp != 0x00B5 && cp != 0x00BA) ||
         (cp >= 0x3001 && cp <= 0x3003) || (cp >= 0xFF01 && cp <= 0xFF0F);
}

bool is_word_cp(char32_t cp) {
  if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) || cp == '_';
  return !is_space(cp) && !is_pictographic(cp) && !is_regional_indicator(cp) &&
         !is_emoji_modifier(cp) && !is_unicode_punct(cp) && cp != 0x200D;
}

bool is_apostrophe(char32_t cp) { return cp == '\'' || cp == 0x2019; }

bool starts_with_ci(std::string_view s, std::size_t i, std::string_view prefix) {
  if (s.size() - i < prefix.size()) return false;
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(s[i + k])) != prefix[k]) return false;
  }
  return true;
}

bool ascii_alnum_at(std::string_view s, std::size_t i) {
  return i < s.size() && std::isalnum(static_cast<unsigned char>(s[i]));
}

std::size_t match_url(std::string_view s, std::size_t i) {
  if (!(starts_with_ci(s, i, "http://") || starts_with_ci(s, i, "https://") ||
        starts_with_ci(s, i, "www."))) {
    return 0;
  }
  std::size_t j = i;
  while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
  return j - i;
}

std::size_t match_emoticon(std::string_view s, std::size_t i) {
  if (s.compare(i, 2, "<3") == 0 && !ascii_alnum_at(s, i + 2)) return 2;
  const char eyes = s[i];
  if (eyes != ':' && eyes != ';' && eyes != '=') return 0;
  std::size_t j = i + 1;
  if (j < s.size() && (s[j] == '-' || s[j] == '^' || s[j] == '\'')) ++j;
  if (j < s.size() && s[j] == ' ' && eyes != ';') {
    // the spaced form only counts when a lone mouth character follows
    if (j + 1 < s.size() && (s[j + 1] == ')' || s[j + 1] == '(') &&
        (j + 2 == s.size() || std::isspace(static_cast<unsigned char>(s[j + 2])))) {
      return j + 2 - i;
    }
    return 0;
  }
  static constexpr std::string_view kMouths = ")(][DPpOo/\\|*3";
  if (j >= s.size() || kMouths.find(s[j]) == std::string_view::npos) return 0;
  const char mouth = s[j];
  while (j < s.size() && s[j] == mouth) ++j;
  if (ascii_alnum_at(s, j)) return 0;
  // "://" belongs to a URL-like string, not a face
  if (mouth == '/' && j < s.size() && s[j] == '/') return 0;
  return j - i;
}

std::size_t match_mention(std::string_view s, std::size_t i) {
  if (s[i] != '@') return 0;
  std::size_t j = i + 1;
  while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
  return j > i + 1 ? j - i : 0;
}

std::size_t match_word_run(std::string_view s, std::size_t i) {
  std::size_t j = i;
  while (j < s.size()) {
    const auto d = decode(s, j);
    if (is_word_cp(d.cp)) {
      j += d.len;
      continue;
    }
    if (is_apostrophe(d.cp) && j > i && j + d.len < s.size()) {
      const auto next = decode(s, j + d.len);
      if (is_word_cp(next.cp)) {
        j += d.len;
        continue;
      }
    }
    break;
  }
  return j - i;
}

std::size_t match_hashtag(std::string_view s, std::size_t i) {
  if (s[i] != '#' || i + 1 >= s.size()) return 0;
  const std::size_t run = match_word_run(s, i + 1);
  return run ? run + 1 : 0;
}

std::size_t match_emoji(std::string_view s, std::size_t i) {
  const auto first = decode(s, i);
  std::size_t j = i + first.len;
  if (is_regional_indicator(first.cp)) {
    if (j < s.size()) {
      const auto second = decode(s, j);
      if (is_regional_indicator(second.cp)) j += second.len;
    }
    return j - i;
  }
  // keycap sequences such as "1️⃣"
  if (first.cp < 0x80 && (std::isdigit(static_cast<int>(first.cp)) || first.cp == '#' ||
                          first.cp == '*')) {
    std::size_t k = j;
    if (k < s.size() && decode(s, k).cp == 0xFE0F) k += 3;
    if (k < s.size() && decode(s, k).cp == 0x20E3) return k + 3 - i;
    return 0;
  }
  if (!is_pictographic(first.cp)) return 0;
  while (j < s.size()) {
    const auto d = decode(s, j);
    if (is_emoji_modifier(d.cp)) {
      j += d.len;
    } else if (d.cp == 0x200D && j + d.len < s.size() &&
               is_pictographic(decode(s, j + d.len).cp)) {
      j += d.len;
      j += decode(s, j).len;
    } else {
      break;
    }
  }
  return j - i;
}

std::string fold_ascii(std::string token) {
  for (char& ch : token) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return token;
}

}  // namespace

Tokens tokenize(std::string_view text, bool lowercase) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto d = decode(text, i);
    if (is_space(d.cp)) {
      i += d.len;
      continue;
    }
    std::size_t len = 0;
    bool foldable = false;
    if ((len = match_url(text, i))) {
    } else if ((len = match_emoticon(text, i))) {
    } else if ((len = match_mention(text, i))) {
      foldable = true;
    } else if ((len = match_hashtag(text, i))) {
      foldable = true;
    } else if ((len = match_emoji(text, i))) {
    } else if ((len = match_word_run(text, i))) {
      foldable = true;
    } else {
      std::size_t j = i;
      while (j < text.size()) {
        const auto p = decode(text, j);
        const bool punct = (p.cp < 0x80 && std::ispunct(static_cast<int>(p.cp))) ||
                           is_unicode_punct(p.cp) || p.cp == 0xFFFD;
        if (!punct) break;
        if (j > i && (match_emoticon(text, j) || match_mention(text, j) ||
                      match_hashtag(text, j) || match_url(text, j))) {
          break;
        }
        j += p.len;
      }
      // stray modifier or joiner codepoints form their own token
      len = j > i ? j - i : d.len;
    }
    std::string token(text.substr(i, len));
    out.push_back(lowercase && foldable ? fold_ascii(std::move(token)) : std::move(token));
    i += len;
  }
  return out;
}

}  // namespace advrem
