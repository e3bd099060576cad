#include "vseam/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "vseam/error.hpp"

namespace vseam {

// --- bootstrap -------------------------------------------------------------

Outcomes Outcomes::from(const StrategyResult& r) { return {std::string(to_string(r.strategy)), r.ids, r.correct}; }

SignificanceReport bootstrap_compare(const Outcomes& a, const Outcomes& b, const BootstrapOptions& options) {
  if (a.ids.size() != a.correct.size() || b.ids.size() != b.correct.size())
    throw ValidationError("outcome ids and correctness differ in length");
  if (a.ids.empty()) throw ValidationError("bootstrap needs at least one example");
  if (options.folds < 2) throw ValidationError("bootstrap needs at least two folds");
  if (options.fold_size < 1) throw ValidationError("fold size must be positive");

  // Align B onto A's order; the id sets must match exactly.
  std::map<std::string, bool> b_by_id;
  for (std::size_t i = 0; i < b.ids.size(); ++i)
    if (!b_by_id.emplace(b.ids[i], b.correct[i]).second)
      throw ValidationError("duplicate id '" + b.ids[i] + "' in " + b.name);
  if (b_by_id.size() != a.ids.size()) throw ValidationError("id sets of " + a.name + " and " + b.name + " differ");
  std::vector<int> diff(a.ids.size());
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    const auto it = b_by_id.find(a.ids[i]);
    if (it == b_by_id.end()) throw ValidationError("id '" + a.ids[i] + "' missing from " + b.name);
    diff[i] = static_cast<int>(a.correct[i]) - static_cast<int>(it->second);
  }
  const auto n = static_cast<int>(diff.size());
  if (options.fold_size > n)
    throw ValidationError("fold size " + std::to_string(options.fold_size) + " exceeds population " +
                          std::to_string(n));

  SignificanceReport r;
  r.candidate = a.name;
  r.baseline = b.name;
  r.folds = options.folds;
  r.fold_size = options.fold_size;
  r.seed = options.seed;
  r.with_replacement = options.with_replacement;
  r.fold_deltas.reserve(static_cast<std::size_t>(options.folds));

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int f = 0; f < options.folds; ++f) {
    long sum = 0;
    if (options.with_replacement) {
      for (int i = 0; i < options.fold_size; ++i) sum += diff[static_cast<std::size_t>(pick(rng))];
    } else {
      std::iota(pool.begin(), pool.end(), 0);
      for (int i = 0; i < options.fold_size; ++i) {
        std::uniform_int_distribution<int> rest(i, n - 1);
        std::swap(pool[i], pool[rest(rng)]);
        sum += diff[static_cast<std::size_t>(pool[i])];
      }
    }
    r.fold_deltas.push_back(100.0 * static_cast<double>(sum) / options.fold_size);
  }

  const double m = std::accumulate(r.fold_deltas.begin(), r.fold_deltas.end(), 0.0) / options.folds;
  double ss = 0.0;
  for (double d : r.fold_deltas) ss += (d - m) * (d - m);
  r.mean_dpp = m;
  r.sd = std::sqrt(ss / (options.folds - 1));

  if (r.sd == 0.0) {
    if (m == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.p = kPValueFloor;
      r.p_is_bound = true;
    }
    return r;
  }
  const double t = m / (r.sd / std::sqrt(static_cast<double>(options.folds)));
  r.t = t;
  boost::math::students_t dist(options.folds - 1);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  r.p = std::clamp(p, 0.0, 1.0);
  if (r.p < kPValueFloor) {
    r.p = kPValueFloor;
    r.p_is_bound = true;
  }
  return r;
}

nlohmann::json to_json(const SignificanceReport& r, bool include_folds) {
  nlohmann::json j = {{"candidate", r.candidate},
                      {"baseline", r.baseline},
                      {"mean_dpp", r.mean_dpp},
                      {"sd", r.sd},
                      {"t", r.t ? nlohmann::json(*r.t) : nlohmann::json(nullptr)},
                      {"p", r.p},
                      {"p_is_bound", r.p_is_bound},
                      {"folds", r.folds},
                      {"fold_size", r.fold_size},
                      {"seed", r.seed},
                      {"sampling", r.with_replacement ? "with-replacement" : "without-replacement"},
                      {"test", r.two_sided ? "two-sided" : "one-sided"}};
  if (include_folds) j["fold_deltas"] = r.fold_deltas;
  return j;
}

// --- heatmaps --------------------------------------------------------------

namespace {

constexpr int kGlyphScale = 2;
constexpr int kAdvance = 4 * kGlyphScale;
constexpr int kLeft = 48;
constexpr int kTop = 40;

// 3x5 bitmap glyphs, one 3-bit row per entry, top to bottom.
const std::map<char, std::array<std::uint8_t, 5>>& glyphs() {
  static const std::map<char, std::array<std::uint8_t, 5>> g = {
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 2, 2}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'-', {0, 0, 7, 0, 0}}, {'.', {0, 0, 0, 0, 2}},
      {'+', {0, 2, 7, 2, 0}}, {'a', {2, 5, 7, 5, 5}}, {'b', {6, 5, 6, 5, 6}}, {'c', {3, 4, 4, 4, 3}},
      {'d', {6, 5, 5, 5, 6}}, {'e', {7, 4, 6, 4, 7}}, {'f', {7, 4, 6, 4, 4}}, {'g', {3, 4, 5, 5, 3}},
      {'h', {5, 5, 7, 5, 5}}, {'i', {7, 2, 2, 2, 7}}, {'j', {1, 1, 1, 5, 2}}, {'k', {5, 5, 6, 5, 5}},
      {'l', {4, 4, 4, 4, 7}}, {'m', {5, 7, 7, 5, 5}}, {'n', {6, 5, 5, 5, 5}}, {'o', {2, 5, 5, 5, 2}},
      {'p', {6, 5, 6, 4, 4}}, {'q', {2, 5, 5, 6, 3}}, {'r', {6, 5, 6, 5, 5}}, {'s', {3, 4, 2, 1, 6}},
      {'t', {7, 2, 2, 2, 2}}, {'u', {5, 5, 5, 5, 7}}, {'v', {5, 5, 5, 5, 2}}, {'w', {5, 5, 7, 7, 5}},
      {'x', {5, 5, 2, 5, 5}}, {'y', {5, 5, 2, 2, 2}}, {'z', {7, 1, 2, 4, 7}}, {'?', {7, 1, 2, 0, 2}},
      {'_', {0, 0, 0, 0, 7}}, {'<', {1, 2, 4, 2, 1}}, {'>', {4, 2, 1, 2, 4}}, {'/', {1, 1, 2, 4, 4}},
      {':', {0, 2, 0, 2, 0}}, {' ', {0, 0, 0, 0, 0}}};
  return g;
}

void draw_text(Image& img, int x, int y, const std::string& text, Rgb color, int max_chars) {
  const auto& g = glyphs();
  int drawn = 0;
  for (char raw : text) {
    if (drawn == max_chars) break;
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    const auto it = g.count(c) ? g.find(c) : g.find('?');
    for (int row = 0; row < 5; ++row)
      for (int col = 0; col < 3; ++col) {
        if (!((it->second[row] >> (2 - col)) & 1)) continue;
        for (int dy = 0; dy < kGlyphScale; ++dy)
          for (int dx = 0; dx < kGlyphScale; ++dx) {
            const int px = x + drawn * kAdvance + col * kGlyphScale + dx, py = y + row * kGlyphScale + dy;
            if (px >= 0 && py >= 0 && px < img.width() && py < img.height()) img.set(px, py, color);
          }
      }
    ++drawn;
  }
}

std::string format_value(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double color_range(const std::vector<std::vector<double>>& values, const HeatmapStyle& style) {
  if (style.vmax > 0) return style.vmax;
  double m = 0.0;
  for (const auto& row : values)
    for (double v : row) m = std::max(m, std::fabs(v));
  return m;
}

Rgb text_color(double t) { return std::fabs(t) > 0.6 ? Rgb{255, 255, 255} : Rgb{0, 0, 0}; }

struct Table {
  std::vector<std::vector<double>> values;
  std::vector<std::string> rows, cols;
  std::vector<std::vector<std::string>> cells;
};

void write_svg(const Table& t, const std::filesystem::path& out, const HeatmapStyle& style) {
  const int R = static_cast<int>(t.values.size()), C = static_cast<int>(t.values.front().size());
  const int W = kLeft + C * style.cell_width + 8, H = kTop + R * style.cell_height + 8;
  const double range = color_range(t.values, style);
  std::ofstream f(out, std::ios::binary);
  if (!f) throw IoError("cannot write " + out.string());
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"monospace\" font-size=\"11\">\n";
  f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"#ffffff\"/>\n";
  if (!style.title.empty()) f << "<text x=\"4\" y=\"14\">" << xml_escape(style.title) << "</text>\n";
  for (int c = 0; c < C; ++c)
    f << "<text x=\"" << kLeft + c * style.cell_width + style.cell_width / 2 << "\" y=\"" << kTop - 6
      << "\" text-anchor=\"middle\">" << xml_escape(t.cols[c]) << "</text>\n";
  for (int r = 0; r < R; ++r) {
    const int y = kTop + r * style.cell_height;
    f << "<text x=\"4\" y=\"" << y + style.cell_height / 2 + 4 << "\">" << xml_escape(t.rows[r]) << "</text>\n";
    for (int c = 0; c < C; ++c) {
      const int x = kLeft + c * style.cell_width;
      const double tv = range > 0 ? t.values[r][c] / range : 0.0;
      f << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << style.cell_width << "\" height=\""
        << style.cell_height << "\" fill=\"" << hex(diverging_color(tv)) << "\"/>\n";
      if (style.annotate)
        f << "<text x=\"" << x + style.cell_width / 2 << "\" y=\"" << y + style.cell_height / 2 + 4
          << "\" text-anchor=\"middle\" fill=\"" << hex(text_color(tv)) << "\">" << xml_escape(t.cells[r][c])
          << "</text>\n";
    }
  }
  f << "</svg>\n";
  if (!f) throw IoError("failed writing " + out.string());
}

void render(const Table& t, const std::filesystem::path& out, const HeatmapStyle& style) {
  if (t.values.empty() || t.values.front().empty()) throw ValidationError("cannot render an empty grid");
  auto ext = out.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".svg") return write_svg(t, out, style);
  if (ext == ".png") {
    try {
      return write_png(out, heatmap_image(t.values, t.rows, t.cols, t.cells, style));
    } catch (const IoError&) {
      throw;
    } catch (const std::exception& e) {
      throw IoError("cannot write " + out.string() + ": " + e.what());
    }
  }
  throw ValidationError("heatmap output must end in .svg or .png, got " + out.string());
}

}  // namespace

Rgb diverging_color(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - std::fabs(t))));
  return t >= 0 ? Rgb{255, fade, fade} : Rgb{fade, fade, 255};
}

std::array<int, 2> heatmap_cell_origin(int row, int col, const HeatmapStyle& style) {
  return {kLeft + col * style.cell_width, kTop + row * style.cell_height};
}

Image heatmap_image(const std::vector<std::vector<double>>& values, const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::vector<std::vector<std::string>>& cells,
                    const HeatmapStyle& style) {
  if (values.empty() || values.front().empty()) throw ValidationError("cannot render an empty grid");
  const int R = static_cast<int>(values.size()), C = static_cast<int>(values.front().size());
  Image img(kLeft + C * style.cell_width + 8, kTop + R * style.cell_height + 8, {255, 255, 255});
  const double range = color_range(values, style);
  const int cell_chars = std::max(1, (style.cell_width - 4) / kAdvance);
  const Rgb black{0, 0, 0};
  if (!style.title.empty()) draw_text(img, 4, 4, style.title, black, (img.width() - 8) / kAdvance);
  for (int c = 0; c < C; ++c) {
    const auto& label = col_labels[c];
    const int len = std::min<int>(cell_chars, static_cast<int>(label.size()));
    draw_text(img, kLeft + c * style.cell_width + (style.cell_width - len * kAdvance) / 2, kTop - 14, label, black,
              cell_chars);
  }
  for (int r = 0; r < R; ++r) {
    const int y = kTop + r * style.cell_height;
    draw_text(img, 4, y + (style.cell_height - 10) / 2, row_labels[r], black, (kLeft - 8) / kAdvance);
    for (int c = 0; c < C; ++c) {
      const int x = kLeft + c * style.cell_width;
      const double tv = range > 0 ? values[r][c] / range : 0.0;
      img.fill({x, y, x + style.cell_width, y + style.cell_height}, diverging_color(tv));
      if (style.annotate) {
        const auto& text = cells[r][c];
        const int len = std::min<int>(cell_chars, static_cast<int>(text.size()));
        draw_text(img, x + (style.cell_width - len * kAdvance) / 2, y + (style.cell_height - 10) / 2, text,
                  text_color(tv), cell_chars);
      }
    }
  }
  return img;
}

void render_heatmap(const CausalGrid& grid, const std::filesystem::path& out, const HeatmapStyle& style) {
  Table t;
  const auto L = grid.values.rows(), G = grid.values.cols();
  for (Eigen::Index l = 0; l < L; ++l) {
    t.rows.push_back("L" + std::to_string(l));
    auto& vals = t.values.emplace_back();
    auto& cells = t.cells.emplace_back();
    for (Eigen::Index g = 0; g < G; ++g) {
      vals.push_back(grid.values(l, g));
      cells.push_back(format_value(grid.values(l, g), style.precision));
    }
  }
  t.cols = grid.groups;
  HeatmapStyle s = style;
  if (s.title.empty()) s.title = std::string(to_string(grid.tau)) + " " + std::string(to_string(grid.strategy));
  render(t, out, s);
}

void render_heatmap(const LensGrid& grid, const std::filesystem::path& out, const HeatmapStyle& style) {
  Table t;
  std::size_t width = 0;
  for (const auto& row : grid.layers) width = std::max(width, row.size());
  for (std::size_t l = 0; l < grid.layers.size(); ++l) {
    t.rows.push_back("L" + std::to_string(l));
    auto& vals = t.values.emplace_back(width, 0.0);
    auto& cells = t.cells.emplace_back(width);
    for (std::size_t i = 0; i < grid.layers[l].size(); ++i) {
      vals[i] = grid.layers[l][i].logit;
      cells[i] = grid.layers[l][i].text;
    }
  }
  for (std::size_t i = 0; i < width; ++i) t.cols.push_back("top" + std::to_string(i + 1));
  HeatmapStyle s = style;
  if (s.title.empty())
    s.title = "lens " + std::string(to_string(grid.tau)) + " pos " + std::to_string(grid.position) + " " +
              std::string(to_string(grid.mode));
  render(t, out, s);
}

}  // namespace vseam
