#include "vseam/toy_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "vseam/error.hpp"

namespace vseam {

Box patch_footprint(const ModelConfig& config, int image_width, int image_height, int index) {
  if (index < 0 || index >= config.image_token_count)
    throw OutOfRangeError("patch index " + std::to_string(index) + " out of range");
  const int row = index / config.image_grid_cols;
  const int col = index % config.image_grid_cols;
  return {col * image_width / config.image_grid_cols, row * image_height / config.image_grid_rows,
          (col + 1) * image_width / config.image_grid_cols,
          (row + 1) * image_height / config.image_grid_rows};
}

Matrix layer_norm(const Matrix& x, const RowVector& gamma, const RowVector& beta, double eps) {
  Matrix out(x.rows(), x.cols());
  const double n = static_cast<double>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const RowVector centered = x.row(r).array() - mean;
    const double var = centered.squaredNorm() / n;
    out.row(r) = (centered / std::sqrt(var + eps)).cwiseProduct(gamma) + beta;
  }
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

ToyWeights ToyWeights::zeros(const ModelConfig& c) {
  c.validate();
  const int d = c.hidden_dim;
  ToyWeights w;
  w.token_embedding = Matrix::Zero(c.vocab_size, d);
  w.position_embedding = Matrix::Zero(c.max_context, d);
  w.modality_embedding = Matrix::Zero(2, d);
  w.layers.resize(c.num_layers);
  for (auto& l : w.layers) {
    l.ln1_gamma = RowVector::Ones(d);
    l.ln1_beta = RowVector::Zero(d);
    l.ln2_gamma = RowVector::Ones(d);
    l.ln2_beta = RowVector::Zero(d);
    l.wq.assign(c.num_heads, Matrix::Zero(d, c.head_dim));
    l.wk.assign(c.num_heads, Matrix::Zero(d, c.head_dim));
    l.wv.assign(c.num_heads, Matrix::Zero(d, c.head_dim));
    l.wo = Matrix::Zero(d, d);
    l.w1 = Matrix::Zero(d, c.mlp_dim);
    l.b1 = RowVector::Zero(c.mlp_dim);
    l.w2 = Matrix::Zero(c.mlp_dim, d);
    l.b2 = RowVector::Zero(d);
  }
  w.lnf_gamma = RowVector::Ones(d);
  w.lnf_beta = RowVector::Zero(d);
  w.unembedding = Matrix::Zero(d, c.vocab_size);
  return w;
}

ToyVlm::ToyVlm(ModelConfig config, ToyWeights weights)
    : ToyVlm(config, std::move(weights), Vocabulary::toy(config.vocab_size, config.image_code_count)) {}

ToyVlm::ToyVlm(ModelConfig config, ToyWeights weights, Vocabulary vocabulary)
    : config_(config), weights_(std::move(weights)), vocabulary_(std::move(vocabulary)) {
  config_.validate();
  if (vocabulary_.size() != config_.vocab_size || vocabulary_.image_code_count() != config_.image_code_count)
    throw InvalidDimensionError("vocabulary does not match the model configuration");
  check_shapes();
}

void ToyVlm::check_shapes() const {
  const auto& c = config_;
  const int d = c.hidden_dim;
  auto expect = [](const Matrix& m, Eigen::Index r, Eigen::Index k, const char* name) {
    if (m.rows() != r || m.cols() != k) throw ShapeMismatchError(std::string("weight '") + name + "' has wrong shape");
  };
  auto expect_row = [](const RowVector& v, Eigen::Index n, const char* name) {
    if (v.size() != n) throw ShapeMismatchError(std::string("weight '") + name + "' has wrong shape");
  };
  expect(weights_.token_embedding, c.vocab_size, d, "token_embedding");
  expect(weights_.position_embedding, c.max_context, d, "position_embedding");
  expect(weights_.modality_embedding, 2, d, "modality_embedding");
  if (static_cast<int>(weights_.layers.size()) != c.num_layers) throw ShapeMismatchError("layer count mismatch");
  for (const auto& l : weights_.layers) {
    expect_row(l.ln1_gamma, d, "ln1_gamma");
    expect_row(l.ln1_beta, d, "ln1_beta");
    expect_row(l.ln2_gamma, d, "ln2_gamma");
    expect_row(l.ln2_beta, d, "ln2_beta");
    if (static_cast<int>(l.wq.size()) != c.num_heads || static_cast<int>(l.wk.size()) != c.num_heads ||
        static_cast<int>(l.wv.size()) != c.num_heads)
      throw ShapeMismatchError("per-head projection count mismatch");
    for (int h = 0; h < c.num_heads; ++h) {
      expect(l.wq[h], d, c.head_dim, "wq");
      expect(l.wk[h], d, c.head_dim, "wk");
      expect(l.wv[h], d, c.head_dim, "wv");
    }
    expect(l.wo, d, d, "wo");
    expect(l.w1, d, c.mlp_dim, "w1");
    expect_row(l.b1, c.mlp_dim, "b1");
    expect(l.w2, c.mlp_dim, d, "w2");
    expect_row(l.b2, d, "b2");
  }
  expect_row(weights_.lnf_gamma, d, "lnf_gamma");
  expect_row(weights_.lnf_beta, d, "lnf_beta");
  expect(weights_.unembedding, d, c.vocab_size, "unembedding");
}

ActivationCache ToyVlm::run(const TokenSequence& input, const HookSet& hooks,
                            const CaptureOptions& capture) const {
  const auto& c = config_;
  const int T = input.size();
  const int d = c.hidden_dim;
  if (T > c.max_context) throw OutOfRangeError("input exceeds max context");

  ActivationCache cache;
  Matrix h(T, d);
  for (int t = 0; t < T; ++t) {
    const int id = input.ids()[t];
    if (id < 0 || id >= c.vocab_size) throw OutOfRangeError("token id outside vocabulary");
    const int modality = input.tags()[t] == Modality::image ? 0 : 1;
    h.row(t) = weights_.token_embedding.row(id) + weights_.position_embedding.row(t) +
               weights_.modality_embedding.row(modality);
  }
  cache.mutable_embeddings() = h;

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  auto& layers = cache.mutable_layers();
  layers.resize(c.num_layers);

  for (int l = 0; l < c.num_layers; ++l) {
    const auto& w = weights_.layers[l];
    auto& act = layers[l];

    const Matrix a = layer_norm(h, w.ln1_gamma, w.ln1_beta, c.norm_eps);
    std::vector<Matrix> heads(c.num_heads);
    if (capture.attention) act.attention.resize(c.num_heads);
    for (int hd = 0; hd < c.num_heads; ++hd) {
      const Matrix q = a * w.wq[hd];
      const Matrix k = a * w.wk[hd];
      const Matrix v = a * w.wv[hd];
      Matrix scores = (q * k.transpose()) * inv_sqrt_dh;
      Matrix probs = Matrix::Zero(T, T);
      for (int t = 0; t < T; ++t) {
        const double mx = scores.row(t).head(t + 1).maxCoeff();
        double denom = 0.0;
        for (int j = 0; j <= t; ++j) {
          probs(t, j) = std::exp(scores(t, j) - mx);
          denom += probs(t, j);
        }
        probs.row(t).head(t + 1) /= denom;
      }
      heads[hd] = probs * v;
      if (capture.attention) act.attention[hd] = std::move(probs);
    }
    hooks.apply_heads(l, heads);

    Matrix concat(T, d);
    for (int hd = 0; hd < c.num_heads; ++hd) concat.middleCols(hd * c.head_dim, c.head_dim) = heads[hd];
    act.attn_output = concat * w.wo;
    hooks.apply_module_output(l, Module::att, act.attn_output);
    h += act.attn_output;
    hooks.apply_hidden(l, Module::att, h);
    act.hidden_att = h;
    act.heads = std::move(heads);

    const Matrix m = layer_norm(h, w.ln2_gamma, w.ln2_beta, c.norm_eps);
    Matrix pre = m * w.w1;
    pre.rowwise() += w.b1;
    pre = pre.unaryExpr([](double x) { return gelu(x); });
    act.mlp_output = pre * w.w2;
    act.mlp_output.rowwise() += w.b2;
    hooks.apply_module_output(l, Module::mlp, act.mlp_output);
    h += act.mlp_output;
    hooks.apply_hidden(l, Module::mlp, h);
    act.hidden_mlp = h;
  }

  cache.mutable_logits() =
      layer_norm(h, weights_.lnf_gamma, weights_.lnf_beta, c.norm_eps) * weights_.unembedding;
  return cache;
}

RowVector ToyVlm::unembed(const RowVector& state) const {
  if (state.size() != config_.hidden_dim) throw ShapeMismatchError("state width != hidden_dim");
  Matrix x = state;
  return (layer_norm(x, weights_.lnf_gamma, weights_.lnf_beta, config_.norm_eps) * weights_.unembedding).row(0);
}

std::vector<int> ToyVlm::encode_image(const Image& image) const {
  const auto& c = config_;
  if (image.width() < c.image_grid_cols || image.height() < c.image_grid_rows)
    throw InvalidDimensionError("image smaller than the patch grid");
  std::vector<int> ids(c.image_token_count);
  for (int p = 0; p < c.image_token_count; ++p) {
    const Box fp = patch_footprint(c, image.width(), image.height(), p);
    double sum[3] = {0, 0, 0};
    for (int y = fp.y0; y < fp.y1; ++y)
      for (int x = fp.x0; x < fp.x1; ++x) {
        const auto px = image.at(x, y);
        for (int ch = 0; ch < 3; ++ch) sum[ch] += px[ch];
      }
    const double n = static_cast<double>(fp.width()) * fp.height();
    const double r = sum[0] / n, g = sum[1] / n, b = sum[2] / n;
    const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
    // One bit per channel plus a brightness bit.
    const int code = ((r >= 128) << 3) | ((g >= 128) << 2) | ((b >= 128) << 1) | (luma >= 160 ? 1 : 0);
    ids[p] = vocabulary_.image_code_begin() + code % c.image_code_count;
  }
  return ids;
}

// --- construction ----------------------------------------------------------

ModelHandle build_toy_vlm(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Matrix& m, double sd) {
    std::normal_distribution<double> dist(0.0, sd);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  auto fill_row = [&rng](RowVector& v, double mean, double sd) {
    std::normal_distribution<double> dist(mean, sd);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  };

  const int d = config.hidden_dim;
  const double proj_sd = 1.0 / std::sqrt(static_cast<double>(d));
  ToyWeights w = ToyWeights::zeros(config);
  fill(w.token_embedding, 1.0);
  fill(w.position_embedding, 0.2);
  fill(w.modality_embedding, 0.5);
  for (auto& l : w.layers) {
    fill_row(l.ln1_gamma, 1.0, 0.05);
    fill_row(l.ln1_beta, 0.0, 0.05);
    for (int h = 0; h < config.num_heads; ++h) {
      if (config.tie_heads && h > 0) {
        l.wq[h] = l.wq[0];
        l.wk[h] = l.wk[0];
        l.wv[h] = l.wv[0];
        continue;
      }
      fill(l.wq[h], proj_sd);
      fill(l.wk[h], proj_sd);
      fill(l.wv[h], proj_sd);
    }
    fill(l.wo, proj_sd);
    fill_row(l.ln2_gamma, 1.0, 0.05);
    fill_row(l.ln2_beta, 0.0, 0.05);
    fill(l.w1, proj_sd);
    fill_row(l.b1, 0.0, 0.02);
    fill(l.w2, 1.0 / std::sqrt(static_cast<double>(config.mlp_dim)));
    fill_row(l.b2, 0.0, 0.02);
  }
  fill_row(w.lnf_gamma, 1.0, 0.05);
  fill_row(w.lnf_beta, 0.0, 0.05);
  fill(w.unembedding, proj_sd);
  return ModelHandle(std::make_shared<ToyVlm>(config, std::move(w)));
}

ModelHandle make_toy_vlm(ModelConfig config, ToyWeights weights) {
  return ModelHandle(std::make_shared<ToyVlm>(config, std::move(weights)));
}

const ToyVlm* as_toy(const ModelHandle& model) { return dynamic_cast<const ToyVlm*>(&model.backend()); }

TokenSequence probe_sequence(const ModelHandle& model) {
  const auto& vocab = model.vocabulary();
  std::vector<int> image(model.image_token_count());
  for (int i = 0; i < static_cast<int>(image.size()); ++i)
    image[i] = vocab.image_code_begin() + (i * 5 + 3) % vocab.image_code_count();
  const auto text = vocab.encode("is the shirt red ? answer");
  return TokenSequence::image_then_text(image, text);
}

// --- serialisation ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'S', 'E', 'A', 'M', 'T', 'O', 'Y'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 8);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <typename M>
  void tensor(const M& m) {
    u32(static_cast<std::uint32_t>(m.rows()));
    u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  void bytes(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw IoError("truncated toy model file");
  }
  std::uint32_t u32() {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }
  std::string str() {
    const auto n = u32();
    if (n > (1u << 20)) throw IoError("corrupt string length in toy model file");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  template <typename M>
  void tensor(M& m) {
    const auto rows = u32();
    const auto cols = u32();
    if (rows != static_cast<std::uint32_t>(m.rows()) || cols != static_cast<std::uint32_t>(m.cols()))
      throw IoError("tensor shape in toy model file does not match its configuration");
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  }

 private:
  std::istream& in_;
};

template <typename Visitor>
void visit_tensors(ToyWeights& w, Visitor&& v) {
  v(w.token_embedding);
  v(w.position_embedding);
  v(w.modality_embedding);
  for (auto& l : w.layers) {
    v(l.ln1_gamma);
    v(l.ln1_beta);
    for (auto& m : l.wq) v(m);
    for (auto& m : l.wk) v(m);
    for (auto& m : l.wv) v(m);
    v(l.wo);
    v(l.ln2_gamma);
    v(l.ln2_beta);
    v(l.w1);
    v(l.b1);
    v(l.w2);
    v(l.b2);
  }
  v(w.lnf_gamma);
  v(w.lnf_beta);
  v(w.unembedding);
}

}  // namespace

void save_toy_vlm(const std::filesystem::path& path, const ToyVlm& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  Writer w(out);
  w.u32(kToyFormatVersion);
  const auto& c = model.config();
  for (int v : {c.num_layers, c.num_heads, c.hidden_dim, c.head_dim, c.vocab_size, c.image_token_count,
                c.image_grid_rows, c.image_grid_cols, c.image_code_count, c.max_context, c.mlp_dim,
                c.tie_heads ? 1 : 0})
    w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.norm_eps);
  const auto& words = model.vocabulary().words();
  w.u32(static_cast<std::uint32_t>(words.size()));
  for (const auto& s : words) w.str(s);
  auto weights = model.weights();
  visit_tensors(weights, [&](auto& m) { w.tensor(m); });
  if (!out) throw IoError("write failed for " + path.string());
}

ModelHandle load_toy_vlm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  Reader r(in);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw IoError(path.string() + ": bad magic header");
  const auto version = r.u32();
  if (version != kToyFormatVersion)
    throw IoError(path.string() + ": unsupported toy format version " + std::to_string(version));
  ModelConfig c;
  int* fields[] = {&c.num_layers, &c.num_heads, &c.hidden_dim, &c.head_dim, &c.vocab_size,
                   &c.image_token_count, &c.image_grid_rows, &c.image_grid_cols, &c.image_code_count,
                   &c.max_context, &c.mlp_dim};
  for (int* f : fields) *f = static_cast<int>(r.u32());
  c.tie_heads = r.u32() != 0;
  c.norm_eps = r.f64();
  c.validate();
  const auto n_words = r.u32();
  if (n_words != static_cast<std::uint32_t>(c.vocab_size)) throw IoError("vocabulary size mismatch");
  std::vector<std::string> words;
  for (std::uint32_t i = 0; i < n_words; ++i) words.push_back(r.str());
  ToyWeights w = ToyWeights::zeros(c);
  visit_tensors(w, [&](auto& m) { r.tensor(m); });
  return ModelHandle(std::make_shared<ToyVlm>(c, std::move(w), Vocabulary(std::move(words), c.image_code_count)));
}

}  // namespace vseam
