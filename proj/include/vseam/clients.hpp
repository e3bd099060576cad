#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "vseam/image.hpp"

namespace vseam {

/// Refines a box into a pixel mask.
class SegmenterClient {
 public:
  virtual ~SegmenterClient() = default;
  virtual std::string name() const = 0;
  virtual nlohmann::json params() const { return nlohmann::json::object(); }
  virtual Mask segment(const Image& image, const Box& box) const = 0;
};

/// Regenerates the masked pixels of an image from a text prompt.
class InpainterClient {
 public:
  virtual ~InpainterClient() = default;
  virtual std::string name() const = 0;
  virtual nlohmann::json params() const { return nlohmann::json::object(); }
  virtual Image inpaint(const Image& image, const Mask& mask, const std::string& prompt) const = 0;
};

/// Text completion.
class LanguageClient {
 public:
  virtual ~LanguageClient() = default;
  virtual std::string name() const = 0;
  virtual nlohmann::json params() const { return nlohmann::json::object(); }
  virtual std::string complete(const std::string& prompt) const = 0;
};

/// Global image features.
class EncoderClient {
 public:
  virtual ~EncoderClient() = default;
  virtual std::string name() const = 0;
  virtual nlohmann::json params() const { return nlohmann::json::object(); }
  virtual std::vector<double> encode(const Image& image) const = 0;
};

/// Mask equal to the box clipped to the image.
class BoxSegmenter final : public SegmenterClient {
 public:
  std::string name() const override { return "stub-box-segmenter"; }
  Mask segment(const Image& image, const Box& box) const override;
};

/// Paints every masked pixel one colour. Without a fixed colour, the colour
/// is taken from the first colour word in the prompt, falling back to a hash
/// of the prompt.
class FillInpainter final : public InpainterClient {
 public:
  FillInpainter() = default;
  explicit FillInpainter(Rgb color) : color_(color), fixed_(true) {}

  std::string name() const override { return "stub-fill-inpainter"; }
  nlohmann::json params() const override;
  Image inpaint(const Image& image, const Mask& mask, const std::string& prompt) const override;

  static Rgb color_for_prompt(const std::string& prompt);

 private:
  Rgb color_{255, 0, 255};
  bool fixed_ = false;
};

/// Answers counterfactual prompts by swapping the first known attribute,
/// object or relation phrase of the final question for a fixed partner.
class TemplateLanguageModel final : public LanguageClient {
 public:
  std::string name() const override { return "stub-template-llm"; }
  std::string complete(const std::string& prompt) const override;
};

/// Mean RGB of each cell of a grid x grid partition, scaled to [0, 1].
class MeanPoolEncoder final : public EncoderClient {
 public:
  explicit MeanPoolEncoder(int grid = 4);
  std::string name() const override { return "stub-mean-pool-encoder"; }
  nlohmann::json params() const override { return {{"grid", grid_}}; }
  std::vector<double> encode(const Image& image) const override;

 private:
  int grid_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  double multiplier = 2.0;
  std::chrono::seconds timeout{30};
};

/// JSON-over-HTTP transport shared by the remote clients. Images travel
/// as base64 PNG. Network errors and 5xx responses are retried with
/// exponential backoff; anything else fails immediately with ClientError.
class HttpTransport {
 public:
  HttpTransport(std::string client_name, std::string base_url, RetryPolicy policy = {});

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  const std::string& base_url() const { return base_url_; }
  const RetryPolicy& policy() const { return policy_; }
  const std::string& client_name() const { return name_; }

 private:
  std::string name_;
  std::string base_url_;
  RetryPolicy policy_;
};

/// POST /segment {image, box} -> {mask}
class HttpSegmenter final : public SegmenterClient {
 public:
  HttpSegmenter(std::string url, RetryPolicy policy = {}) : http_("segmenter", std::move(url), policy) {}
  std::string name() const override { return "http-segmenter"; }
  nlohmann::json params() const override { return {{"url", http_.base_url()}}; }
  Mask segment(const Image& image, const Box& box) const override;

 private:
  HttpTransport http_;
};

/// POST /inpaint {image, mask, prompt} -> {image}
class HttpInpainter final : public InpainterClient {
 public:
  HttpInpainter(std::string url, RetryPolicy policy = {}) : http_("inpainter", std::move(url), policy) {}
  std::string name() const override { return "http-inpainter"; }
  nlohmann::json params() const override { return {{"url", http_.base_url()}}; }
  Image inpaint(const Image& image, const Mask& mask, const std::string& prompt) const override;

 private:
  HttpTransport http_;
};

/// POST /complete {prompt} -> {text}
class HttpLanguageModel final : public LanguageClient {
 public:
  HttpLanguageModel(std::string url, RetryPolicy policy = {}) : http_("language", std::move(url), policy) {}
  std::string name() const override { return "http-language"; }
  nlohmann::json params() const override { return {{"url", http_.base_url()}}; }
  std::string complete(const std::string& prompt) const override;

 private:
  HttpTransport http_;
};

/// POST /encode {image} -> {features}
class HttpEncoder final : public EncoderClient {
 public:
  HttpEncoder(std::string url, RetryPolicy policy = {}) : http_("encoder", std::move(url), policy) {}
  std::string name() const override { return "http-encoder"; }
  nlohmann::json params() const override { return {{"url", http_.base_url()}}; }
  std::vector<double> encode(const Image& image) const override;

 private:
  HttpTransport http_;
};

struct ClientSet {
  std::shared_ptr<const SegmenterClient> segmenter;
  std::shared_ptr<const InpainterClient> inpainter;
  std::shared_ptr<const LanguageClient> language;
  std::shared_ptr<const EncoderClient> encoder;

  /// Every client stubbed.
  static ClientSet stubs();
};

/// Reads a TOML file with optional [segmenter], [inpainter], [language]
/// and [encoder] tables. Each has `kind = "stub" | "http"`; http clients
/// take `url`, `timeout_s`, `max_attempts`, `backoff_ms`. Missing tables
/// default to stubs.
ClientSet load_clients(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace vseam
