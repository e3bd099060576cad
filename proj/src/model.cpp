#include "vseam/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <tuple>

#include "vseam/error.hpp"

namespace vseam {

std::string_view to_string(Module m) { return m == Module::att ? "att" : "mlp"; }

Module module_from_string(std::string_view s) {
  if (s == "att" || s == "attn" || s == "attention") return Module::att;
  if (s == "mlp") return Module::mlp;
  throw ValidationError("unknown module '" + std::string(s) + "' (expected att|mlp)");
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw InvalidDimensionError(std::string(name) + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(num_heads, "num_heads");
  positive(hidden_dim, "hidden_dim");
  positive(head_dim, "head_dim");
  positive(vocab_size, "vocab_size");
  positive(max_context, "max_context");
  positive(mlp_dim, "mlp_dim");
  if (num_heads * head_dim != hidden_dim)
    throw InvalidDimensionError("num_heads * head_dim (" + std::to_string(num_heads * head_dim) +
                                ") != hidden_dim (" + std::to_string(hidden_dim) + ")");
  if (image_token_count < 0) throw InvalidDimensionError("image_token_count must be >= 0");
  if (image_grid_rows * image_grid_cols != image_token_count)
    throw InvalidDimensionError("image grid rows * cols must equal image_token_count");
  if (image_code_count < 0 || image_code_count >= vocab_size)
    throw InvalidDimensionError("image_code_count must leave room for text tokens");
  if (image_token_count > 0 && image_code_count == 0)
    throw InvalidDimensionError("image tokens need at least one image code");
  if (image_token_count >= max_context)
    throw InvalidDimensionError("image block does not fit in max_context");
}

// --- TokenSequence ---------------------------------------------------------

TokenSequence::TokenSequence(std::vector<int> ids, std::vector<Modality> tags)
    : ids_(std::move(ids)), tags_(std::move(tags)) {
  if (ids_.empty()) throw InvalidDimensionError("token sequence must be non-empty");
  if (ids_.size() != tags_.size()) throw ShapeMismatchError("modality tags must align with token ids");
  int first = -1, last = -1;
  for (int i = 0; i < size(); ++i) {
    if (tags_[i] != Modality::image) continue;
    if (first < 0) first = i;
    if (last >= 0 && last != i - 1) throw ValidationError("image positions must be contiguous");
    last = i;
  }
  image_begin_ = first < 0 ? 0 : first;
  image_count_ = first < 0 ? 0 : last - first + 1;
}

TokenSequence TokenSequence::image_then_text(std::span<const int> image_ids,
                                             std::span<const int> text_ids) {
  std::vector<int> ids(image_ids.begin(), image_ids.end());
  ids.insert(ids.end(), text_ids.begin(), text_ids.end());
  std::vector<Modality> tags(image_ids.size(), Modality::image);
  tags.resize(ids.size(), Modality::text);
  return TokenSequence(std::move(ids), std::move(tags));
}

std::vector<int> TokenSequence::image_positions() const {
  std::vector<int> out(image_count_);
  for (int i = 0; i < image_count_; ++i) out[i] = image_begin_ + i;
  return out;
}

std::vector<int> TokenSequence::text_positions() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (tags_[i] == Modality::text) out.push_back(i);
  return out;
}

// --- ActivationCache -------------------------------------------------------

const LayerActivations& ActivationCache::layer(int l) const {
  if (l < 0 || l >= num_layers())
    throw OutOfRangeError("layer " + std::to_string(l) + " out of range");
  return layers_[l];
}

const Matrix& ActivationCache::hidden(int l, Module m) const {
  return m == Module::att ? layer(l).hidden_att : layer(l).hidden_mlp;
}

const Matrix& ActivationCache::output(int l, Module m) const {
  return m == Module::att ? layer(l).attn_output : layer(l).mlp_output;
}

const std::vector<Matrix>& ActivationCache::heads(int l) const { return layer(l).heads; }

const Matrix& ActivationCache::head(int l, int h) const {
  const auto& hs = layer(l).heads;
  if (h < 0 || h >= static_cast<int>(hs.size()))
    throw OutOfRangeError("head " + std::to_string(h) + " out of range");
  return hs[h];
}

bool ActivationCache::has_attention() const {
  return !layers_.empty() && !layers_.front().attention.empty();
}

const Matrix& ActivationCache::attention(int l, int h) const {
  const auto& a = layer(l).attention;
  if (a.empty()) throw ValidationError("attention weights were not captured");
  if (h < 0 || h >= static_cast<int>(a.size()))
    throw OutOfRangeError("head " + std::to_string(h) + " out of range");
  return a[h];
}

// --- InterventionPlan ------------------------------------------------------

namespace {

struct TargetKey {
  int kind;  // 0 module, 1 head
  int layer;
  int index;
  auto operator<=>(const TargetKey&) const = default;
};

TargetKey target_of(const Action& a) {
  return std::visit(
      [](const auto& act) -> TargetKey {
        using T = std::decay_t<decltype(act)>;
        if constexpr (std::is_same_v<T, PatchAction>)
          return {0, act.layer, static_cast<int>(act.module)};
        else
          return {1, act.layer, act.head};
      },
      a);
}

}  // namespace

InterventionPlan& InterventionPlan::add(Action action) {
  if (const auto* r = std::get_if<HeadRescaleAction>(&action); r && !(r->scale >= 0.0))
    throw InvalidPlanError("rescale factor must be >= 0");
  if (const auto* p = std::get_if<PatchAction>(&action); p && !p->donor)
    throw InvalidPlanError("patch action needs a donor cache");
  const auto key = target_of(action);
  for (const auto& existing : actions_)
    if (target_of(existing) == key)
      throw InvalidPlanError("duplicate intervention target at layer " + std::to_string(key.layer));
  actions_.push_back(std::move(action));
  return *this;
}

void InterventionPlan::validate(const ModelConfig& config, int seq_len) const {
  auto check_layer = [&](int l) {
    if (l < 0 || l >= config.num_layers)
      throw OutOfRangeError("layer " + std::to_string(l) + " out of range [0, " +
                            std::to_string(config.num_layers) + ")");
  };
  auto check_head = [&](int h) {
    if (h < 0 || h >= config.num_heads)
      throw OutOfRangeError("head " + std::to_string(h) + " out of range [0, " +
                            std::to_string(config.num_heads) + ")");
  };
  for (const auto& action : actions_) {
    std::visit(
        [&](const auto& act) {
          using T = std::decay_t<decltype(act)>;
          check_layer(act.layer);
          if constexpr (std::is_same_v<T, PatchAction>) {
            for (int p : act.positions)
              if (p < 0 || p >= seq_len)
                throw OutOfRangeError("patch position " + std::to_string(p) + " out of range [0, " +
                                      std::to_string(seq_len) + ")");
            if (act.donor->num_layers() != config.num_layers || act.donor->seq_len() != seq_len ||
                act.donor->embeddings().cols() != config.hidden_dim)
              throw ShapeMismatchError("donor cache shape does not match the input");
          } else {
            check_head(act.head);
            if constexpr (std::is_same_v<T, HeadMaskAction>)
              if (config.num_heads < 2) throw InvalidDimensionError("head masking needs >= 2 heads");
          }
        },
        action);
  }
}

// --- HookSet ---------------------------------------------------------------

void HookSet::on_module_output(int layer, Module m, ActivationHook hook) {
  output_hooks_[{layer, static_cast<int>(m)}].push_back(std::move(hook));
}

void HookSet::on_hidden(int layer, Module m, ActivationHook hook) {
  hidden_hooks_[{layer, static_cast<int>(m)}].push_back(std::move(hook));
}

void HookSet::on_head(int layer, int head, HeadHook hook, int priority) {
  auto& v = head_hooks_[layer];
  v.push_back({priority, head, std::move(hook)});
  std::stable_sort(v.begin(), v.end(), [](const HeadEntry& a, const HeadEntry& b) {
    return std::tie(a.priority, a.head) < std::tie(b.priority, b.head);
  });
}

void HookSet::apply_module_output(int layer, Module m, Matrix& x) const {
  if (auto it = output_hooks_.find({layer, static_cast<int>(m)}); it != output_hooks_.end())
    for (const auto& h : it->second) h(x);
}

void HookSet::apply_hidden(int layer, Module m, Matrix& x) const {
  if (auto it = hidden_hooks_.find({layer, static_cast<int>(m)}); it != hidden_hooks_.end())
    for (const auto& h : it->second) h(x);
}

bool HookSet::has_head_hooks(int layer) const { return head_hooks_.count(layer) != 0; }

void HookSet::apply_heads(int layer, std::vector<Matrix>& heads) const {
  auto it = head_hooks_.find(layer);
  if (it == head_hooks_.end()) return;
  const std::vector<Matrix> original = heads;
  for (const auto& entry : it->second) {
    if (entry.head < 0 || entry.head >= static_cast<int>(heads.size()))
      throw OutOfRangeError("head hook index out of range");
    entry.hook(original, heads[entry.head]);
  }
}

// --- ModelHandle / forward -------------------------------------------------

ModelHandle::ModelHandle(std::shared_ptr<const Backend> backend) : backend_(std::move(backend)) {
  if (!backend_) throw Error("null backend");
}

Matrix mean_of_other_heads(std::span<const Matrix> heads, int head) {
  const int n = static_cast<int>(heads.size());
  if (n < 2) throw InvalidDimensionError("mean of remaining heads is undefined for H = 1");
  if (head < 0 || head >= n) throw OutOfRangeError("head " + std::to_string(head) + " out of range");
  Matrix sum = Matrix::Zero(heads[0].rows(), heads[0].cols());
  for (int h = 0; h < n; ++h)
    if (h != head) sum += heads[h];
  return sum / static_cast<double>(n - 1);
}

namespace {

void copy_rows(Matrix& dst, const Matrix& src, const std::vector<int>& rows) {
  for (int r : rows) dst.row(r) = src.row(r);
}

constexpr int kMaskPriority = 0;
constexpr int kRescalePriority = 1;

}  // namespace

ForwardResult forward(const ModelHandle& model, const TokenSequence& input,
                      const InterventionPlan& plan, const CaptureOptions& capture) {
  const auto& cfg = model.config();
  if (input.size() > cfg.max_context)
    throw OutOfRangeError("input length " + std::to_string(input.size()) + " exceeds max context " +
                          std::to_string(cfg.max_context));
  for (int id : input.ids())
    if (id < 0 || id >= cfg.vocab_size) throw OutOfRangeError("token id " + std::to_string(id) + " outside vocabulary");
  plan.validate(cfg, input.size());

  HookSet hooks;
  for (const auto& action : plan.actions()) {
    std::visit(
        [&](const auto& act) {
          using T = std::decay_t<decltype(act)>;
          if constexpr (std::is_same_v<T, PatchAction>) {
            const auto donor = act.donor;
            const auto rows = act.positions;
            const int layer = act.layer;
            const Module m = act.module;
            if (act.site == PatchSite::hidden)
              hooks.on_hidden(layer, m, [=](Matrix& x) { copy_rows(x, donor->hidden(layer, m), rows); });
            else
              hooks.on_module_output(layer, m, [=](Matrix& x) { copy_rows(x, donor->output(layer, m), rows); });
          } else if constexpr (std::is_same_v<T, HeadMaskAction>) {
            const int head = act.head;
            hooks.on_head(
                act.layer, head,
                [head](std::span<const Matrix> original, Matrix& out) { out = mean_of_other_heads(original, head); },
                kMaskPriority);
          } else {
            const double scale = act.scale;
            hooks.on_head(
                act.layer, act.head, [scale](std::span<const Matrix>, Matrix& out) { out *= scale; },
                kRescalePriority);
          }
        },
        action);
  }

  auto cache = std::make_shared<ActivationCache>(model.backend().run(input, hooks, capture));
  ForwardResult result;
  result.logits = cache->logits();
  result.cache = std::move(cache);
  return result;
}

RowVector softmax(const RowVector& logits) {
  const double mx = logits.maxCoeff();
  RowVector e = (logits.array() - mx).exp().matrix();
  return e / e.sum();
}

Readout readout(const RowVector& logits, int token) {
  if (token < 0 || token >= logits.size())
    throw OutOfRangeError("answer token " + std::to_string(token) + " outside vocabulary");
  const double mx = logits.maxCoeff();
  const double denom = (logits.array() - mx).exp().sum();
  return {logits[token], std::exp(logits[token] - mx) / denom};
}

}  // namespace vseam
