#include "vseam/heads.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "vseam/error.hpp"
#include "vseam/parallel.hpp"
#include "vseam/patching.hpp"

namespace vseam {

using nlohmann::json;

Matrix mask_head_output(const ActivationCache& cache, int layer, int head) {
  return mean_of_other_heads(cache.heads(layer), head);
}

double head_prob_delta(const ModelHandle& model, const TokenSequence& input, int answer_token, int layer, int head) {
  const double base = readout(forward(model, input).final_logits(), answer_token).prob;
  InterventionPlan plan;
  plan.add(HeadMaskAction{layer, head});
  return readout(forward(model, input, plan).final_logits(), answer_token).prob - base;
}

Matrix head_prob_deltas(const ModelHandle& model, const TokenSequence& input, int answer_token) {
  const double base = readout(forward(model, input).final_logits(), answer_token).prob;
  Matrix out(model.num_layers(), model.num_heads());
  for (int l = 0; l < model.num_layers(); ++l)
    for (int h = 0; h < model.num_heads(); ++h) {
      InterventionPlan plan;
      plan.add(HeadMaskAction{l, h});
      out(l, h) = readout(forward(model, input, plan).final_logits(), answer_token).prob - base;
    }
  return out;
}

HeadScoreTable head_causal_scores(const ModelHandle& model, const DatasetSplit& split) {
  if (split.triples.empty()) throw EmptyInputError("head scoring needs a non-empty split");
  if (model.num_heads() < 2) throw InvalidDimensionError("head masking needs >= 2 heads");
  const int L = model.num_layers(), H = model.num_heads();
  const auto deltas = parallel_map(split.triples.size(), [&](std::size_t i) {
    const auto& t = split.triples[i];
    return head_prob_deltas(model, t.clean, t.answer_token);
  });
  Matrix sum_c = Matrix::Zero(L, H), sum_i = Matrix::Zero(L, H);
  int n_c = 0, n_i = 0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (split.membership.at(split.triples[i].triple.id) == Membership::correct) {
      sum_c += deltas[i];
      ++n_c;
    } else {
      sum_i += deltas[i];
      ++n_i;
    }
  }
  HeadScoreTable table;
  if (n_c == 0) table.warnings.push_back("correct bucket is empty; c_correct absent");
  if (n_i == 0) table.warnings.push_back("incorrect bucket is empty; c_incorrect absent");
  for (int l = 0; l < L; ++l)
    for (int h = 0; h < H; ++h) {
      HeadScore s{l, h, std::nullopt, std::nullopt, n_c, n_i};
      if (n_c) s.c_correct = sum_c(l, h) / n_c;
      if (n_i) s.c_incorrect = sum_i(l, h) / n_i;
      table.scores.push_back(s);
    }
  return table;
}

HeadSetSelection select_key_heads(const std::vector<HeadScore>& scores, int k) {
  if (k < 1) throw ValidationError("K must be >= 1");
  HeadSetSelection sel;
  sel.k = k;
  auto rank = [&](auto key) {
    std::vector<SelectedHead> v;
    for (const auto& s : scores)
      if (auto c = key(s)) v.push_back({s.layer, s.head, *c});
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::pair(a.layer, a.head) < std::pair(b.layer, b.head);
    });
    if (static_cast<int>(v.size()) > k) v.resize(static_cast<std::size_t>(k));
    return v;
  };
  auto pos = rank([](const HeadScore& s) -> std::optional<double> {
    if (!s.c_correct) return std::nullopt;
    return -*s.c_correct;
  });
  auto neg = rank([](const HeadScore& s) { return s.c_incorrect; });
  std::set<std::pair<int, int>> in_neg;
  for (const auto& n : neg) in_neg.insert({n.layer, n.head});
  std::set<std::pair<int, int>> both;
  for (const auto& p : pos)
    if (in_neg.count({p.layer, p.head})) {
      both.insert({p.layer, p.head});
      sel.dropped_overlap.push_back({p.layer, p.head, -p.score});
    }
  for (auto& p : pos)
    if (!both.count({p.layer, p.head})) sel.positive.push_back({p.layer, p.head, -p.score});
  for (auto& n : neg)
    if (!both.count({n.layer, n.head})) sel.negative.push_back(n);
  return sel;
}

std::string head_label(int layer, int head) {
  return "L" + std::to_string(layer) + ".H" + std::to_string(head);
}

std::pair<int, int> parse_head_label(std::string_view label) {
  const auto dot = label.find(".H");
  if (label.size() < 5 || label[0] != 'L' || dot == std::string_view::npos)
    throw ValidationError("bad head label '" + std::string(label) + "'");
  int l = 0, h = 0;
  const auto a = std::from_chars(label.data() + 1, label.data() + dot, l);
  const auto b = std::from_chars(label.data() + dot + 2, label.data() + label.size(), h);
  if (a.ec != std::errc() || a.ptr != label.data() + dot || b.ec != std::errc() || b.ptr != label.data() + label.size())
    throw ValidationError("bad head label '" + std::string(label) + "'");
  return {l, h};
}

double bbox_attention_overlap(const Matrix& attention, const TokenSequence& input, const Box& box,
                              const ModelConfig& config, int image_width, int image_height) {
  if (attention.rows() != input.size() || attention.cols() != input.size())
    throw ShapeMismatchError("attention matrix does not match the input length");
  if (box.empty()) throw ValidationError("empty box");
  const auto in_box = patch_positions_for_box(config, input, image_width, image_height, box);
  const Eigen::Index q = attention.rows() - 1;
  double inside = 0.0, total = 0.0;
  for (int p : input.image_positions()) total += attention(q, p);
  for (int p : in_box) inside += attention(q, p);
  if (total <= 0.0) throw ValidationError("zero attention mass on image tokens");
  return std::clamp(inside / total, 0.0, 1.0);
}

std::vector<double> mean_bbox_overlap(const ModelHandle& model, const std::vector<EncodedTriple>& triples,
                                      const std::vector<SelectedHead>& heads) {
  std::vector<double> sum(heads.size(), 0.0);
  int n = 0;
  for (const auto& t : triples) {
    if (t.triple.boxes.empty() || !t.triple.image_size) continue;
    const auto words = split_words(t.triple.question);
    const LabeledBox* target = &t.triple.boxes.front();
    for (const auto& b : t.triple.boxes)
      if (std::find(words.begin(), words.end(), b.label) != words.end()) {
        target = &b;
        break;
      }
    const auto run = forward(model, t.clean, {}, {true});
    const auto size = *t.triple.image_size;
    for (std::size_t i = 0; i < heads.size(); ++i)
      sum[i] += bbox_attention_overlap(run.cache->attention(heads[i].layer, heads[i].head), t.clean, target->box,
                                       model.config(), size[0], size[1]);
    ++n;
  }
  if (n == 0) throw EmptyInputError("no triple has a box and a known image size");
  for (auto& s : sum) s /= n;
  return sum;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(17) << *v;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_head_scores_csv(const std::filesystem::path& path, const std::vector<HeadScore>& scores) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "layer,head,c_correct,c_incorrect,n_correct,n_incorrect\n";
  for (const auto& s : scores)
    os << s.layer << ',' << s.head << ',' << fmt(s.c_correct) << ',' << fmt(s.c_incorrect) << ',' << s.n_correct << ','
       << s.n_incorrect << '\n';
}

std::vector<HeadScore> read_head_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "layer,head,c_correct,c_incorrect,n_correct,n_incorrect")
    throw ValidationError(path.string() + ": unexpected header");
  std::vector<HeadScore> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 6) throw ValidationError(path.string() + ": line " + std::to_string(row) + " needs 6 columns");
    try {
      HeadScore s;
      s.layer = std::stoi(c[0]);
      s.head = std::stoi(c[1]);
      if (!c[2].empty()) s.c_correct = std::stod(c[2]);
      if (!c[3].empty()) s.c_incorrect = std::stod(c[3]);
      s.n_correct = std::stoi(c[4]);
      s.n_incorrect = std::stoi(c[5]);
      out.push_back(s);
    } catch (const std::logic_error&) {
      throw ValidationError(path.string() + ": line " + std::to_string(row) + " is not numeric");
    }
  }
  return out;
}

namespace {

json heads_json(const std::vector<SelectedHead>& v) {
  json out = json::array();
  for (const auto& h : v) out.push_back({{"head", head_label(h.layer, h.head)}, {"score", h.score}});
  return out;
}

std::vector<SelectedHead> heads_from(const json& j) {
  std::vector<SelectedHead> out;
  for (const auto& e : j) {
    const auto [l, h] = parse_head_label(e.at("head").get<std::string>());
    out.push_back({l, h, e.at("score").get<double>()});
  }
  return out;
}

}  // namespace

json to_json(const HeadSetSelection& s) {
  return {{"k", s.k},
          {"positive", heads_json(s.positive)},
          {"negative", heads_json(s.negative)},
          {"dropped_overlap", heads_json(s.dropped_overlap)}};
}

HeadSetSelection selection_from_json(const json& j) {
  HeadSetSelection s;
  s.k = j.at("k").get<int>();
  s.positive = heads_from(j.at("positive"));
  s.negative = heads_from(j.at("negative"));
  s.dropped_overlap = heads_from(j.value("dropped_overlap", json::array()));
  return s;
}

}  // namespace vseam
