#include "bmi/corpus/corpus.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "bmi/error.hpp"

namespace bmi::corpus {

Vocabulary::Vocabulary() {
  add(kUnknownToken);
  add(kEosToken);
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnknownId : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw InputError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

void Vocabulary::save(std::ostream& out) const {
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(std::istream& in) {
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (v.contains(line)) throw InputError("duplicate vocabulary entry '" + line + "'");
    v.add(line);
  }
  return v;
}

std::size_t Corpus::num_sentences() const {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.size();
  return n;
}

std::size_t Corpus::num_tokens() const {
  std::size_t n = 0;
  for (const auto& d : documents)
    for (const auto& s : d) n += s.size();
  return n;
}

void Corpus::validate() const {
  for (const auto& d : documents)
    for (const auto& s : d) {
      if (s.empty()) throw InputError("corpus contains an empty sentence");
      for (auto t : s)
        if (t >= vocab.size()) throw InputError("token id out of vocabulary range");
    }
}

std::uint64_t Corpus::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i)
    for (unsigned char c : vocab.token(static_cast<TokenId>(i))) mix(c);
  for (const auto& d : documents) {
    mix(0xD0C);
    for (const auto& s : d) {
      mix(0x5E7);
      for (auto t : s) mix(t);
    }
  }
  return h;
}

namespace {

// Strict UTF-8 validation (no overlongs, no surrogates, max U+10FFFF).
bool valid_utf8(const std::string& s) {
  std::size_t i = 0;
  const auto n = s.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000))
      return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

}  // namespace

Corpus ingest(std::istream& text, const VocabPolicy& policy) {
  Corpus c;
  const bool build = std::holds_alternative<BuildVocabulary>(policy);
  if (!build) c.vocab = std::get<Vocabulary>(policy);

  Document current;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(text, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!valid_utf8(line))
      throw DecodeError("malformed UTF-8 on line " + std::to_string(lineno));
    Sentence s;
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto b = line.find_first_not_of(" \t", pos);
      if (b == std::string::npos) break;
      auto e = line.find_first_of(" \t", b);
      if (e == std::string::npos) e = line.size();
      const std::string tok = line.substr(b, e - b);
      s.push_back(build ? c.vocab.add(tok) : c.vocab.id(tok));
      pos = e;
    }
    if (s.empty()) {
      if (!current.empty()) c.documents.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(std::move(s));
    }
  }
  if (!current.empty()) c.documents.push_back(std::move(current));
  if (c.documents.empty()) throw EmptyCorpusError("corpus input contains no sentences");
  return c;
}

Corpus ingest_file(const std::string& path, const VocabPolicy& policy) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file " + path);
  return ingest(in, policy);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    if (d) out << '\n';
    for (const auto& s : corpus.documents[d]) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out << ' ';
        out << corpus.vocab.token(s[i]);
      }
      out << '\n';
    }
  }
}

}  // namespace bmi::corpus
