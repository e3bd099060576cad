#include "vseam/clients.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "toml.hpp"
#include "vseam/error.hpp"
#include "vseam/vocabulary.hpp"

namespace vseam {

using nlohmann::json;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw ValidationError("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw ValidationError("invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

// --- stubs -----------------------------------------------------------------

Mask BoxSegmenter::segment(const Image& image, const Box& box) const {
  const Box clipped{std::max(box.x0, 0), std::max(box.y0, 0), std::min(box.x1, image.width()),
                    std::min(box.y1, image.height())};
  if (clipped.empty()) return Mask(image.width(), image.height());
  return Mask::from_box(image.width(), image.height(), clipped);
}

json FillInpainter::params() const {
  if (!fixed_) return {{"color", "from-prompt"}};
  return {{"color", {color_[0], color_[1], color_[2]}}};
}

Rgb FillInpainter::color_for_prompt(const std::string& prompt) {
  static const std::map<std::string, Rgb> named = {
      {"red", {220, 30, 30}},     {"green", {30, 200, 40}}, {"blue", {30, 40, 220}},   {"black", {10, 10, 10}},
      {"white", {245, 245, 245}}, {"yellow", {240, 220, 30}}, {"wood", {150, 100, 50}}, {"metal", {170, 175, 185}}};
  for (const auto& w : split_words(prompt))
    if (auto it = named.find(w); it != named.end()) return it->second;
  std::uint32_t h = 2166136261u;
  for (unsigned char c : prompt) h = (h ^ c) * 16777619u;
  return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
}

Image FillInpainter::inpaint(const Image& image, const Mask& mask, const std::string& prompt) const {
  if (mask.width() != image.width() || mask.height() != image.height())
    throw ShapeMismatchError("mask size differs from image size");
  const Rgb c = fixed_ ? color_ : color_for_prompt(prompt);
  Image out = image;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      if (mask.at(x, y)) out.set(x, y, c);
  return out;
}

namespace {

struct Substitution {
  std::vector<std::string> from;
  std::vector<std::string> to;
};

std::vector<Substitution> table(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<Substitution> out;
  for (const auto& [a, b] : pairs) out.push_back({split_words(a), split_words(b)});
  std::stable_sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.from.size() > r.from.size(); });
  return out;
}

const std::vector<Substitution>& attribute_table() {
  static const auto t = table({{"red", "green"}, {"green", "blue"}, {"blue", "red"}, {"black", "white"},
                               {"white", "black"}, {"yellow", "blue"}, {"wood", "metal"}, {"metal", "wood"}});
  return t;
}

const std::vector<Substitution>& object_table() {
  static const auto t = table({{"dog", "cat"}, {"cat", "dog"}, {"car", "bus"}, {"bus", "bicycle"},
                               {"bicycle", "car"}, {"chair", "table"}, {"table", "sofa"}, {"sofa", "chair"},
                               {"cup", "book"}, {"book", "cup"}, {"horse", "dog"}, {"lamp", "chair"}});
  return t;
}

const std::vector<Substitution>& relation_table() {
  static const auto t = table({{"left", "right"}, {"right", "left"}, {"under", "above"}, {"above", "under"},
                               {"on top of", "under"}, {"next to", "under"}, {"on", "under"},
                               {"riding", "holding"}, {"holding", "riding"}});
  return t;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    const bool punct = w.size() == 1 && std::string_view("?,.:;").find(w[0]) != std::string_view::npos;
    if (!out.empty() && !punct) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::string TemplateLanguageModel::complete(const std::string& prompt) const {
  const std::string key = "Original Question:";
  const auto at = prompt.rfind(key);
  if (at == std::string::npos) throw ClientError(name(), "prompt has no 'Original Question:' slot");
  const auto end = prompt.find(" Answer:", at);
  std::string question = prompt.substr(at + key.size(), end == std::string::npos ? std::string::npos : end - at - key.size());
  question.erase(0, question.find_first_not_of(' '));

  const std::vector<Substitution>* subs = &attribute_table();
  if (prompt.find("presence of an object") != std::string::npos)
    subs = &object_table();
  else if (prompt.find("relationship between objects") != std::string::npos)
    subs = &relation_table();

  auto words = split_words(question);
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (const auto& s : *subs) {
      if (i + s.from.size() > words.size() || !std::equal(s.from.begin(), s.from.end(), words.begin() + i)) continue;
      words.erase(words.begin() + i, words.begin() + i + s.from.size());
      words.insert(words.begin() + i, s.to.begin(), s.to.end());
      auto out = join(words);
      if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
      return out;
    }
  }
  return question;
}

MeanPoolEncoder::MeanPoolEncoder(int grid) : grid_(grid) {
  if (grid < 1) throw InvalidDimensionError("encoder grid must be positive");
}

std::vector<double> MeanPoolEncoder::encode(const Image& image) const {
  if (image.width() < grid_ || image.height() < grid_) throw InvalidDimensionError("image smaller than encoder grid");
  std::vector<double> f(static_cast<std::size_t>(grid_) * grid_ * 3, 0.0);
  for (int gy = 0; gy < grid_; ++gy) {
    for (int gx = 0; gx < grid_; ++gx) {
      const int x0 = gx * image.width() / grid_, x1 = (gx + 1) * image.width() / grid_;
      const int y0 = gy * image.height() / grid_, y1 = (gy + 1) * image.height() / grid_;
      double s[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const auto p = image.at(x, y);
          for (int c = 0; c < 3; ++c) s[c] += p[c];
        }
      const double n = static_cast<double>(x1 - x0) * (y1 - y0) * 255.0;
      for (int c = 0; c < 3; ++c) f[(static_cast<std::size_t>(gy) * grid_ + gx) * 3 + c] = s[c] / n;
    }
  }
  return f;
}

// --- HTTP ------------------------------------------------------------------

HttpTransport::HttpTransport(std::string client_name, std::string base_url, RetryPolicy policy)
    : name_(std::move(client_name)), base_url_(std::move(base_url)), policy_(policy) {
  if (policy_.max_attempts < 1) throw ValidationError(name_ + ": max_attempts must be >= 1");
}

json HttpTransport::post(const std::string& path, const json& body) const {
  httplib::Client cli(base_url_);
  if (!cli.is_valid()) throw ClientError(name_, "invalid url '" + base_url_ + "'");
  cli.set_connection_timeout(policy_.timeout);
  cli.set_read_timeout(policy_.timeout);
  cli.set_write_timeout(policy_.timeout);
  const auto payload = body.dump();
  auto backoff = std::chrono::duration<double, std::milli>(policy_.initial_backoff);
  std::string last;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    auto res = cli.Post(path, payload, "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw ClientError(name_, "malformed response from " + path + ": " + e.what());
      }
    }
    if (res && res->status < 500)
      throw ClientError(name_, path + " returned HTTP " + std::to_string(res->status));
    last = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < policy_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= policy_.multiplier;
    }
  }
  throw ClientError(name_, path + " failed after " + std::to_string(policy_.max_attempts) + " attempts: " + last);
}

namespace {

template <class T>
T field(const json& j, const char* key, const std::string& client) {
  if (!j.contains(key)) throw ClientError(client, std::string("response lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ClientError(client, std::string("bad '") + key + "': " + e.what());
  }
}

Image decode_image_field(const json& j, const char* key, const std::string& client) {
  try {
    return decode_png(base64_decode(field<std::string>(j, key, client)));
  } catch (const ClientError&) {
    throw;
  } catch (const Error& e) {
    throw ClientError(client, e.what());
  }
}

}  // namespace

Mask HttpSegmenter::segment(const Image& image, const Box& box) const {
  const auto r = http_.post("/segment", {{"image", base64_encode(encode_png(image))},
                                         {"box", {box.x0, box.y0, box.x1, box.y1}}});
  const auto m = decode_image_field(r, "mask", name());
  if (m.width() != image.width() || m.height() != image.height())
    throw ClientError(name(), "mask size differs from image size");
  return mask_from_png(m);
}

Image HttpInpainter::inpaint(const Image& image, const Mask& mask, const std::string& prompt) const {
  const auto r = http_.post("/inpaint", {{"image", base64_encode(encode_png(image))},
                                         {"mask", base64_encode(encode_png(mask_to_image(mask)))},
                                         {"prompt", prompt}});
  auto out = decode_image_field(r, "image", name());
  if (out.width() != image.width() || out.height() != image.height())
    throw ClientError(name(), "inpainted image size differs from input");
  return out;
}

std::string HttpLanguageModel::complete(const std::string& prompt) const {
  return field<std::string>(http_.post("/complete", {{"prompt", prompt}}), "text", name());
}

std::vector<double> HttpEncoder::encode(const Image& image) const {
  return field<std::vector<double>>(http_.post("/encode", {{"image", base64_encode(encode_png(image))}}), "features",
                                    name());
}

// --- configuration ---------------------------------------------------------

ClientSet ClientSet::stubs() {
  return {std::make_shared<BoxSegmenter>(), std::make_shared<FillInpainter>(),
          std::make_shared<TemplateLanguageModel>(), std::make_shared<MeanPoolEncoder>()};
}

namespace {

struct ClientSpec {
  bool http = false;
  std::string url;
  RetryPolicy policy;
  const toml::table* table = nullptr;
};

ClientSpec read_spec(const toml::table& root, const char* key) {
  ClientSpec spec;
  const auto* t = root[key].as_table();
  if (!t) return spec;
  spec.table = t;
  const std::string kind = (*t)["kind"].value_or(std::string("stub"));
  if (kind == "http") {
    spec.http = true;
    auto url = (*t)["url"].value<std::string>();
    if (!url) throw ValidationError(std::string(key) + ".url is required for http clients");
    spec.url = *url;
    spec.policy.timeout = std::chrono::seconds((*t)["timeout_s"].value_or(30));
    spec.policy.max_attempts = static_cast<int>((*t)["max_attempts"].value_or(3));
    spec.policy.initial_backoff = std::chrono::milliseconds((*t)["backoff_ms"].value_or(200));
  } else if (kind != "stub") {
    throw ValidationError(std::string(key) + ".kind must be \"stub\" or \"http\"");
  }
  return spec;
}

}  // namespace

ClientSet load_clients(const std::filesystem::path& path) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw ValidationError(path.string() + ": " + std::string(e.description()));
  }
  auto set = ClientSet::stubs();
  if (auto s = read_spec(root, "segmenter"); s.http) set.segmenter = std::make_shared<HttpSegmenter>(s.url, s.policy);
  if (auto s = read_spec(root, "inpainter"); s.http) {
    set.inpainter = std::make_shared<HttpInpainter>(s.url, s.policy);
  } else if (s.table) {
    if (const auto* c = (*s.table)["color"].as_array(); c && c->size() == 3) {
      Rgb rgb{};
      for (int i = 0; i < 3; ++i) rgb[i] = static_cast<std::uint8_t>((*c)[i].value_or(0));
      set.inpainter = std::make_shared<FillInpainter>(rgb);
    }
  }
  if (auto s = read_spec(root, "language"); s.http) set.language = std::make_shared<HttpLanguageModel>(s.url, s.policy);
  if (auto s = read_spec(root, "encoder"); s.http) {
    set.encoder = std::make_shared<HttpEncoder>(s.url, s.policy);
  } else if (s.table) {
    set.encoder = std::make_shared<MeanPoolEncoder>(static_cast<int>((*s.table)["grid"].value_or(4)));
  }
  return set;
}

}  // namespace vseam
