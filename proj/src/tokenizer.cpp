#include "vlpre/tokenizer.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

#include "vlpre/util.hpp"

namespace vlpre {

namespace {

bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

}  // namespace

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("vocab: empty token list");
  Vocab v;
  v.id_to_token_ = tokens;
  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    auto [it, inserted] = v.token_to_id_.emplace(tokens[i], i);
    if (!inserted) throw std::invalid_argument("vocab: duplicate token '" + tokens[i] + "'");
  }
  auto require = [&](const char* tok) {
    auto it = v.token_to_id_.find(tok);
    if (it == v.token_to_id_.end())
      throw std::invalid_argument(std::string("vocab: missing special token ") + tok);
    return it->second;
  };
  if (require(kPadToken) != kPad)
    throw std::invalid_argument("vocab: [PAD] must have id 0");
  v.unk_id_ = require(kUnkToken);
  v.cls_id_ = require(kClsToken);
  v.sep_id_ = require(kSepToken);
  v.mask_id_ = require(kMaskToken);
  return v;
}

Vocab Vocab::from_file(const std::string& path) {
  std::vector<std::string> tokens;
  for (auto& line : split_lines(read_file(path))) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return from_tokens(tokens);
}

bool Vocab::contains(std::string_view token) const { return id(token) >= 0; }

int Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(size()) + ")");
  return id_to_token_[id];
}

bool Vocab::is_special(int id) const {
  return id == kPad || id == unk_id_ || id == cls_id_ || id == sep_id_ || id == mask_id_;
}

int TokenSequence::real_length() const {
  int n = 0;
  for (char m : attention_mask) n += (m != 0);
  return n;
}

std::vector<std::string> basic_tokenize(std::string_view text, const TokenizerConfig& cfg) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      cur.push_back(cfg.lowercase ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
  }
  flush();
  return words;
}

void wordpiece(const std::string& word, const Vocab& vocab, const TokenizerConfig& cfg,
               std::vector<int>& out) {
  if (static_cast<int>(word.size()) > cfg.max_word_chars) {
    out.push_back(vocab.unk_id());
    return;
  }
  std::vector<int> pieces;
  size_t start = 0;
  while (start < word.size()) {
    size_t end = word.size();
    int match = -1;
    while (end > start) {
      std::string piece = word.substr(start, end - start);
      if (start > 0) piece = "##" + piece;
      match = vocab.id(piece);
      if (match >= 0) break;
      --end;
    }
    if (match < 0) {
      out.push_back(vocab.unk_id());
      return;
    }
    pieces.push_back(match);
    start = end;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

TokenSequence tokenize(std::string_view text, const Vocab& vocab, int max_len,
                       const TokenizerConfig& cfg) {
  if (max_len < 3)
    throw std::invalid_argument("tokenize: max_len must be >= 3, got " +
                                std::to_string(max_len));
  std::vector<int> body;
  for (const auto& word : basic_tokenize(text, cfg)) wordpiece(word, vocab, cfg, body);
  int keep = std::min<int>(static_cast<int>(body.size()), max_len - 2);

  TokenSequence seq;
  seq.token_ids.reserve(max_len);
  seq.token_ids.push_back(vocab.cls_id());
  seq.token_ids.insert(seq.token_ids.end(), body.begin(), body.begin() + keep);
  seq.token_ids.push_back(vocab.sep_id());
  int real = static_cast<int>(seq.token_ids.size());
  seq.token_ids.resize(max_len, Vocab::kPad);

  seq.segment_ids.assign(max_len, 0);
  seq.positions.resize(max_len);
  for (int i = 0; i < max_len; ++i) seq.positions[i] = i;
  seq.attention_mask.assign(max_len, 0);
  for (int i = 0; i < real; ++i) seq.attention_mask[i] = 1;
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < seq.token_ids.size(); ++i) {
    int id = seq.token_ids[i];
    const std::string& tok = vocab.token(id);
    if (vocab.is_special(id)) continue;
    if (tok.rfind("##", 0) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
    }
  }
  return out;
}

}  // namespace vlpre
