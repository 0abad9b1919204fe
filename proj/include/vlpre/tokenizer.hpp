#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vlpre {

// Subword vocabulary: one token per line, line number = id. The five special
// tokens must be present exactly once and [PAD] must sit at id 0.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr const char* kPadToken = "[PAD]";
  static constexpr const char* kUnkToken = "[UNK]";
  static constexpr const char* kClsToken = "[CLS]";
  static constexpr const char* kSepToken = "[SEP]";
  static constexpr const char* kMaskToken = "[MASK]";

  static Vocab from_tokens(const std::vector<std::string>& tokens);
  static Vocab from_file(const std::string& path);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(std::string_view token) const;
  // -1 when the token is absent.
  int id(std::string_view token) const;
  const std::string& token(int id) const;  // throws std::out_of_range

  int unk_id() const { return unk_id_; }
  int cls_id() const { return cls_id_; }
  int sep_id() const { return sep_id_; }
  int mask_id() const { return mask_id_; }
  bool is_special(int id) const;

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int unk_id_ = -1, cls_id_ = -1, sep_id_ = -1, mask_id_ = -1;
};

// One encoded caption. All four vectors share the same length (max_len when
// padding was requested): [CLS] body... [SEP] [PAD]*. Positions ascend 0..len-1
// and attention_mask marks the non-pad prefix.
struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<int> positions;
  std::vector<char> attention_mask;

  int length() const { return static_cast<int>(token_ids.size()); }
  int real_length() const;  // non-pad prefix length
};

struct TokenizerConfig {
  bool lowercase = true;
  int max_word_chars = 100;  // longer words collapse to [UNK]
};

// Splits on whitespace and punctuation (each punctuation char becomes its own
// word), optionally lowercasing.
std::vector<std::string> basic_tokenize(std::string_view text,
                                        const TokenizerConfig& cfg = {});

// Greedy longest-match-first WordPiece of a single word. Appends ids;
// falls back to a single [UNK] when no full decomposition exists.
void wordpiece(const std::string& word, const Vocab& vocab,
               const TokenizerConfig& cfg, std::vector<int>& out);

// Full pipeline: basic split, WordPiece, wrap in [CLS]/[SEP], truncate to
// max_len preserving both specials, pad with [PAD] to exactly max_len.
// max_len must be >= 3.
TokenSequence tokenize(std::string_view text, const Vocab& vocab, int max_len,
                       const TokenizerConfig& cfg = {});

// Inverse for debugging: joins subwords (stripping the "##" continuation
// marker), skipping special tokens. Unknown ids throw std::out_of_range.
std::string detokenize(const TokenSequence& seq, const Vocab& vocab);

}  // namespace vlpre
