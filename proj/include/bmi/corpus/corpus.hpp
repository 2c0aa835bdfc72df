#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace bmi::corpus {

using TokenId = std::uint32_t;
using Sentence = std::vector<TokenId>;
using Document = std::vector<Sentence>;

inline constexpr TokenId kUnknownId = 0;
inline constexpr TokenId kEosId = 1;
inline constexpr const char* kUnknownToken = "<unk>";
inline constexpr const char* kEosToken = "</s>";

// Token string <-> id bijection with ids 0 (unknown) and 1 (end of sentence)
// reserved.
class Vocabulary {
 public:
  Vocabulary();

  TokenId add(const std::string& token);
  // Unknown tokens map to kUnknownId.
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  // One token per line; line n holds id n + 2.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

struct Corpus {
  Vocabulary vocab;
  std::vector<Document> documents;

  std::size_t num_sentences() const;
  std::size_t num_tokens() const;  // excluding end-of-sentence markers
  // Throws InputError if a sentence is empty or an id is out of range.
  void validate() const;
  // Order-sensitive 64-bit digest of vocabulary and token content.
  std::uint64_t fingerprint() const;
};

struct BuildVocabulary {};
using VocabPolicy = std::variant<BuildVocabulary, Vocabulary>;

// One sentence per non-blank line, tokens separated by spaces, a blank line
// closes the current document.
Corpus ingest(std::istream& text, const VocabPolicy& policy = BuildVocabulary{});
Corpus ingest_file(const std::string& path, const VocabPolicy& policy = BuildVocabulary{});
void write_corpus(std::ostream& out, const Corpus& corpus);

}  // namespace bmi::corpus
