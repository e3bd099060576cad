#include "vseam/vocabulary.hpp"

#include <cctype>

#include "vseam/error.hpp"

namespace vseam {

namespace {

const std::vector<std::string>& toy_words() {
  static const std::vector<std::string> words = {
      "<unk>", "yes",    "no",      "is",     "the",     "a",      "there",  "in",
      "this",  "picture", "of",     "made",   "to",      "on",     "under",  "above",
      "left",  "right",   "next",   "holding", "riding", "red",    "blue",   "green",
      "black", "white",   "wood",   "metal",  "shirt",   "chair",  "car",    "dog",
      "cat",   "bus",     "bicycle", "person", "horse",  "table",  "sofa",   "cup",
      "book",  "ball",    "top",    "?",      "answer",  ":",      ".",      "yellow",
  };
  return words;
}

bool is_split_punct(char c) { return c == '?' || c == ',' || c == '.' || c == ':' || c == ';'; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> words, int image_code_count)
    : words_(std::move(words)), image_code_count_(image_code_count) {
  if (image_code_count_ < 0 || image_code_count_ >= static_cast<int>(words_.size()))
    throw InvalidDimensionError("image code block must leave room for text tokens");
  for (int i = 0; i < text_size(); ++i) index_.emplace(words_[i], i);
}

Vocabulary Vocabulary::toy(int vocab_size, int image_code_count) {
  const int text = vocab_size - image_code_count;
  if (text < 4) throw InvalidDimensionError("vocabulary too small for the toy word list");
  std::vector<std::string> words;
  const auto& base = toy_words();
  for (int i = 0; i < text; ++i)
    words.push_back(i < static_cast<int>(base.size()) ? base[i] : "<w" + std::to_string(i) + ">");
  for (int i = 0; i < image_code_count; ++i) words.push_back("<img" + std::to_string(i) + ">");
  return Vocabulary(std::move(words), image_code_count);
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::text(int id) const {
  if (id < 0 || id >= size()) throw OutOfRangeError("token id " + std::to_string(id) + " outside vocabulary");
  return words_[id];
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(find(w).value_or(unk_id()));
  return ids;
}

std::optional<int> Vocabulary::single_token(std::string_view word) const {
  const auto parts = split_words(word);
  if (parts.size() != 1) return std::nullopt;
  return find(parts.front());
}

}  // namespace vseam
