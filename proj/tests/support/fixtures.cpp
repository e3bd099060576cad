#include "fixtures.hpp"

#include <array>
#include <cmath>

namespace vseam::testing {

namespace {

constexpr int kMirror = 16;
constexpr double kPad = 4.0;
constexpr double kFiller = 0.16;
constexpr double kNuisance = 2.5;

void put(RowVector& row, int dim, double v) {
  row[dim] = v;
  row[dim + kMirror] = -v;
}

void route(ToyLayerWeights& layer, int head, int head_dim, int read_dim, double weight) {
  layer.wv[head](read_dim, head) = 1.0;
  layer.wo(head * head_dim + head, 3) = weight;
  layer.wo(head * head_dim + head, 3 + kMirror) = -weight;
}

}  // namespace

AttributionFixture make_attribution_fixture(int n) {
  ModelConfig cfg;
  AttributionFixture f{build_toy_vlm(cfg, 0), {}};
  auto w = ToyWeights::zeros(cfg);
  const auto vocab = Vocabulary::toy(cfg.vocab_size, cfg.image_code_count);
  const int cue = *vocab.find("answer");
  const int fillers = cfg.num_layers * cfg.num_heads - 2;

  for (int id = 0; id < cfg.vocab_size; ++id) {
    RowVector row = RowVector::Zero(cfg.hidden_dim);
    for (int dim = 4; dim < kMirror; ++dim) put(row, dim, kPad);
    const int code = id - vocab.image_code_begin();
    if (code >= 0) {
      put(row, 0, code < 8 ? 1.0 : -1.0);
      put(row, 1, code < 8 ? 0.0 : 1.0);
    }
    if (id == cue) put(row, 3, -kFiller * fillers);
    w.token_embedding.row(id) = row;
  }

  // Uniform attention over the 22-token prompt: image signal reaches the
  // final position scaled by (16 / 22) / sigma, padding by ~pad / sigma.
  const double sigma = kPad * std::sqrt(24.0 / 32.0);
  const double image_gain = (16.0 / 22.0) / sigma;
  const double pad_gain = kPad / sigma;
  for (int l = 0; l < cfg.num_layers; ++l)
    for (int h = 0; h < cfg.num_heads; ++h) {
      auto& layer = w.layers[l];
      if (l == f.positive_layer && h == f.positive_head)
        route(layer, h, cfg.head_dim, 0, 1.0 / image_gain);
      else if (l == f.noise_layer && h == f.noise_head)
        route(layer, h, cfg.head_dim, 1, kNuisance / image_gain);
      else
        route(layer, h, cfg.head_dim, 4, kFiller / pad_gain);
    }

  const int yes = *vocab.find("yes"), no = *vocab.find("no");
  w.unembedding(3, yes) = 4.0;
  w.unembedding(3 + kMirror, yes) = -4.0;
  w.unembedding(3, no) = -4.0;
  w.unembedding(3 + kMirror, no) = 4.0;

  f.model = make_toy_vlm(cfg, w);
  for (int i = 0; i < n; ++i) {
    const bool is_yes = i % 5 != 4;
    VQATriple t;
    t.id = "fx" + std::to_string(i);
    t.question = "is the shirt red ?";
    t.answer = is_yes ? "yes" : "no";
    t.category = i % 2 ? Category::color : Category::material;
    t.level = level_of(t.category);
    const int code = (is_yes ? 0 : 8) + i % 8;
    const std::vector<int> img(static_cast<std::size_t>(cfg.image_token_count), vocab.image_code_begin() + code);
    f.triples.push_back(encode_with_images(f.model, t, img, std::nullopt));
  }
  return f;
}

ModelHandle make_lens_fixture(int token, std::uint64_t seed) {
  const auto base = build_toy_vlm({}, seed);
  auto w = as_toy(base)->weights();
  auto& l0 = w.layers[0];
  l0.w1.setZero();
  l0.b1.setZero();
  l0.b2 = 10.0 * w.unembedding.col(token).transpose();
  return make_toy_vlm(base.config(), w);
}

}  // namespace vseam::testing
