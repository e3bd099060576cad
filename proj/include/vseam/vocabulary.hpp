#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vseam {

/// Word-level vocabulary with a reserved block of image-code ids at the top.
///
/// Text is lowercased and split on whitespace; `? , . : ;` are separate
/// tokens. Unknown words map to `<unk>` (id 0).
class Vocabulary {
 public:
  Vocabulary(std::vector<std::string> words, int image_code_count);

  /// The bundled toy vocabulary: a fixed VQA word list padded to
  /// `vocab_size - image_code_count` text entries.
  static Vocabulary toy(int vocab_size, int image_code_count);

  int size() const { return static_cast<int>(words_.size()); }
  int text_size() const { return size() - image_code_count_; }
  int image_code_begin() const { return text_size(); }
  int image_code_count() const { return image_code_count_; }
  int unk_id() const { return 0; }

  std::optional<int> find(std::string_view word) const;
  const std::string& text(int id) const;
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(std::string_view text) const;
  /// Id of `word` if it is exactly one known token, else nullopt.
  std::optional<int> single_token(std::string_view word) const;

 private:
  std::vector<std::string> words_;
  int image_code_count_;
  std::unordered_map<std::string, int> index_;
};

/// Lowercased word/punctuation split shared by the tokenizer and the
/// counterfactual validator.
std::vector<std::string> split_words(std::string_view text);

}  // namespace vseam
