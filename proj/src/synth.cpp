#include <cmath>
#include <fstream>
#include <random>

#include "vseam/error.hpp"
#include "vseam/pipeline.hpp"

namespace vseam {

namespace fs = std::filesystem;

namespace {

struct Template {
  Category category;
  const char* question;
  const char* target;
  const char* other = nullptr;
  const char* predicate = nullptr;
};

const Template kTemplates[] = {
    {Category::color, "is the shirt red ?", "shirt"},
    {Category::material, "is the chair made of wood ?", "chair"},
    {Category::animal, "is there a dog in this picture ?", "dog"},
    {Category::vehicle, "is there a car in this picture ?", "car"},
    {Category::indoor, "is there a sofa in this picture ?", "sofa"},
    {Category::spatial, "is the cup on the table ?", "cup", "table", "on"},
    {Category::action, "is the person riding a horse ?", "person", "horse", "riding"},
};

const Rgb kPalette[] = {{230, 40, 40},  {40, 200, 60},   {40, 70, 220},  {240, 220, 50},
                        {30, 30, 30},   {235, 235, 235}, {150, 90, 40},  {200, 60, 200},
                        {60, 200, 210}, {120, 120, 120}, {250, 150, 30}, {20, 90, 60}};
constexpr int kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

struct Cells {
  int c0, r0, c1, r1;  // half-open patch rectangle
};

Box to_box(const Cells& c, int cell_w, int cell_h) { return {c.c0 * cell_w, c.r0 * cell_h, c.c1 * cell_w, c.r1 * cell_h}; }

Cells random_cells(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_int_distribution<int> span(1, 3);
  const int w = span(rng), h = span(rng);
  std::uniform_int_distribution<int> c(0, cols - w), r(0, rows - h);
  const int c0 = c(rng), r0 = r(rng);
  return {c0, r0, c0 + w, r0 + h};
}

void paint(Image& img, const Cells& cells, int cell_w, int cell_h, std::mt19937_64& rng, const Image* avoid) {
  std::uniform_int_distribution<int> pick(0, kPaletteSize - 1);
  for (int r = cells.r0; r < cells.r1; ++r)
    for (int c = cells.c0; c < cells.c1; ++c) {
      Rgb color = kPalette[pick(rng)];
      while (avoid && avoid->at(c * cell_w, r * cell_h) == color) color = kPalette[pick(rng)];
      img.fill({c * cell_w, r * cell_h, (c + 1) * cell_w, (r + 1) * cell_h}, color);
    }
}

std::string flip(const std::string& a) { return a == "yes" ? "no" : "yes"; }

}  // namespace

std::vector<VQATriple> synthesize_dataset(const ModelHandle& model, const fs::path& dir, const SynthOptions& o) {
  if (o.n < 1) throw ValidationError("synthetic dataset needs n >= 1");
  if (o.incorrect_share < 0 || o.incorrect_share >= 1) throw ValidationError("incorrect_share must lie in [0, 1)");
  const auto& cfg = model.config();
  if (o.image_size % cfg.image_grid_cols || o.image_size % cfg.image_grid_rows)
    throw ValidationError("image size must be a multiple of the patch grid");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "edited");

  const int cell_w = o.image_size / cfg.image_grid_cols, cell_h = o.image_size / cfg.image_grid_rows;
  const Cells whole{0, 0, cfg.image_grid_cols, cfg.image_grid_rows};
  std::mt19937_64 rng(o.seed);
  std::vector<VQATriple> out;
  for (int i = 0; i < o.n; ++i) {
    const auto& tpl = kTemplates[i % (sizeof(kTemplates) / sizeof(kTemplates[0]))];
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04d", i);

    const bool incorrect = std::floor((i + 1) * o.incorrect_share) > std::floor(i * o.incorrect_share);

    // Redraw the scene and target region until an edit moves the
    // prediction, keeping the last attempt when none does.
    Image clean, edited;
    Cells target{};
    std::string clean_pred;
    bool flipped = false;
    for (int scene = 0; scene < 24 && !flipped; ++scene) {
      clean = Image(o.image_size, o.image_size);
      paint(clean, whole, cell_w, cell_h, rng, nullptr);
      target = random_cells(rng, cfg.image_grid_rows, cfg.image_grid_cols);
      clean_pred = predict(model, build_prompt(model, model.backend().encode_image(clean), tpl.question).tokens);
      for (int attempt = 0; attempt < 16 && !flipped; ++attempt) {
        edited = clean;
        paint(edited, target, cell_w, cell_h, rng, &clean);
        const auto ids = model.backend().encode_image(edited);
        flipped = predict(model, build_prompt(model, ids, tpl.question).tokens) != clean_pred;
      }
    }

    VQATriple t;
    t.id = id;
    t.question = tpl.question;
    t.category = tpl.category;
    t.level = level_of(tpl.category);
    t.answer = incorrect ? flip(clean_pred) : clean_pred;
    t.image = dir / "images" / (std::string(id) + ".png");
    t.edited_image = dir / "edited" / (std::string(id) + ".png");
    t.image_size = std::array<int, 2>{o.image_size, o.image_size};
    t.boxes.push_back({tpl.target, to_box(target, cell_w, cell_h)});
    if (tpl.other) {
      const Cells other = random_cells(rng, cfg.image_grid_rows, cfg.image_grid_cols);
      t.boxes.push_back({tpl.other, to_box(other, cell_w, cell_h)});
      t.relations = std::vector<Relation>{{tpl.target, tpl.predicate, tpl.other}};
    }
    write_png(t.image, clean);
    write_png(*t.edited_image, edited);
    out.push_back(std::move(t));
  }
  write_triples(dir / "triples.jsonl", out);

  std::ofstream toml(dir / "run.toml");
  toml << "[run]\noutput = \"run\"\nseed = 0\n\n";
  toml << "[dataset]\npath = \"triples.jsonl\"\nname = \"synthetic\"\n\n";
  toml << "[model]\n";
  if (o.model_path)
    toml << "path = \"" << fs::absolute(*o.model_path).generic_string() << "\"\n\n";
  else
    toml << "seed = " << o.model_seed << "\n\n";
  toml << "[rescale]\nfractions = [0.5, 1.0]\nrepeats = 3\n\n";
  toml << "[significance]\nfolds = 1000\nfold_size = " << std::min(100, o.n) << "\n";
  if (!toml) throw IoError("cannot write " + (dir / "run.toml").string());
  return out;
}

}  // namespace vseam
