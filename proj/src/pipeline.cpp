#include "vseam/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "toml.hpp"
#include "vseam/clients.hpp"
#include "vseam/editing.hpp"
#include "vseam/error.hpp"
#include "vseam/heads.hpp"
#include "vseam/toy_model.hpp"

namespace vseam {

namespace fs = std::filesystem;
using json = nlohmann::json;

// --- hashing ---------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

// --- config ----------------------------------------------------------------

namespace {

template <class T>
std::optional<T> opt(const toml::table& root, std::string_view section, std::string_view key) {
  const auto node = root[section][key];
  if (!node) return std::nullopt;
  if (auto v = node.value<T>()) return v;
  throw ValidationError("config key " + std::string(section) + "." + std::string(key) + " has the wrong type");
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <class Fn>
auto parse_field(std::string_view name, Fn fn) {
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError("config key " + std::string(name) + ": " + e.what());
  }
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  toml::table root;
  try {
    root = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw ValidationError(path.string() + ": " + std::string(e.description()));
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  RunConfig c;

  const auto dataset = opt<std::string>(root, "dataset", "path");
  if (!dataset) throw ValidationError("config key dataset.path is required");
  c.dataset = resolve(base, *dataset);
  c.dataset_name = opt<std::string>(root, "dataset", "name").value_or(c.dataset.stem().string());
  if (auto e = opt<std::string>(root, "dataset", "eval_path")) c.eval_dataset = resolve(base, *e);
  c.eval_name = opt<std::string>(root, "dataset", "eval_name").value_or(c.eval_dataset ? c.eval_dataset->stem().string() : c.dataset_name);

  if (auto m = opt<std::string>(root, "model", "path")) c.model_path = resolve(base, *m);
  c.model_seed = static_cast<std::uint64_t>(opt<std::int64_t>(root, "model", "seed").value_or(7));

  c.edit = opt<bool>(root, "edit", "enabled").value_or(false);
  c.clients = resolve(base, opt<std::string>(root, "edit", "clients").value_or(path.filename().string()));
  c.qc_threshold = opt<double>(root, "edit", "qc_threshold").value_or(kDefaultQcThreshold);

  if (auto s = opt<std::string>(root, "patch", "corruption"))
    c.corruption = parse_field("patch.corruption", [&] { return parse_strategy(*s); });
  if (auto s = opt<std::string>(root, "patch", "grouping"))
    c.grouping = parse_field("patch.grouping", [&] { return parse_grouping(*s); });

  c.k = static_cast<int>(opt<std::int64_t>(root, "heads", "k").value_or(kDefaultTopK));

  if (const auto* arr = root["rescale"]["strategies"].as_array()) {
    c.strategies.clear();
    for (const auto& v : *arr) {
      const auto s = v.value<std::string>();
      if (!s) throw ValidationError("config key rescale.strategies must list strings");
      c.strategies.push_back(parse_field("rescale.strategies", [&] { return parse_eval_strategy(*s); }));
    }
  }
  c.random_count = static_cast<int>(opt<std::int64_t>(root, "rescale", "random_count").value_or(10));
  if (const auto* arr = root["rescale"]["fractions"].as_array()) {
    for (const auto& v : *arr) {
      const auto f = v.value<double>();
      if (!f) throw ValidationError("config key rescale.fractions must list numbers");
      c.fractions.push_back(*f);
    }
  }
  c.repeats = static_cast<int>(opt<std::int64_t>(root, "rescale", "repeats").value_or(3));

  c.folds = static_cast<int>(opt<std::int64_t>(root, "significance", "folds").value_or(1000));
  c.fold_size = static_cast<int>(opt<std::int64_t>(root, "significance", "fold_size").value_or(100));
  c.with_replacement = opt<bool>(root, "significance", "with_replacement").value_or(true);

  c.lens_position = opt<std::string>(root, "lens", "position").value_or("last");
  c.lens_k = static_cast<int>(opt<std::int64_t>(root, "lens", "k").value_or(kDefaultLensTopK));
  if (auto s = opt<std::string>(root, "lens", "mode"))
    c.lens_mode = parse_field("lens.mode", [&] { return parse_lens_mode(*s); });

  c.heatmap_format = opt<std::string>(root, "run", "heatmap_format").value_or("svg");
  c.output = resolve(base, opt<std::string>(root, "run", "output").value_or("run"));
  c.seed = static_cast<std::uint64_t>(opt<std::int64_t>(root, "run", "seed").value_or(0));
  return c;
}

void validate(const RunConfig& c) {
  auto must_exist = [](const fs::path& p, const char* key) {
    if (p.empty()) throw ValidationError(std::string("config key ") + key + " is required");
    if (!fs::exists(p)) throw ValidationError(std::string("config key ") + key + ": no such file " + p.string());
  };
  must_exist(c.dataset, "dataset.path");
  if (c.eval_dataset) must_exist(*c.eval_dataset, "dataset.eval_path");
  if (c.model_path) must_exist(*c.model_path, "model.path");
  if (c.edit && c.clients) must_exist(*c.clients, "edit.clients");
  if (c.output.empty()) throw ValidationError("config key run.output is required");
  if (c.k < 1) throw ValidationError("config key heads.k must be >= 1");
  if (c.strategies.empty()) throw ValidationError("config key rescale.strategies must not be empty");
  if (c.repeats < 1) throw ValidationError("config key rescale.repeats must be >= 1");
  for (double f : c.fractions)
    if (!(f > 0 && f <= 1)) throw ValidationError("config key rescale.fractions must lie in (0, 1]");
  if (c.folds < 2) throw ValidationError("config key significance.folds must be >= 2");
  if (c.fold_size < 1) throw ValidationError("config key significance.fold_size must be >= 1");
  if (c.lens_k < 1) throw ValidationError("config key lens.k must be >= 1");
  if (c.heatmap_format != "svg" && c.heatmap_format != "png")
    throw ValidationError("config key run.heatmap_format must be \"svg\" or \"png\"");
}

json to_json(const RunConfig& c) {
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(to_string(s));
  return {{"dataset_name", c.dataset_name},
          {"eval_name", c.eval_name},
          {"transfer", c.eval_dataset.has_value()},
          {"model", c.model_path ? json{{"kind", "file"}} : json{{"kind", "toy"}, {"seed", c.model_seed}}},
          {"edit", c.edit},
          {"qc_threshold", c.qc_threshold},
          {"corruption", to_string(c.corruption)},
          {"grouping", to_string(c.grouping)},
          {"k", c.k},
          {"strategies", strategies},
          {"random_count", c.random_count},
          {"fractions", c.fractions},
          {"repeats", c.repeats},
          {"folds", c.folds},
          {"fold_size", c.fold_size},
          {"sampling", c.with_replacement ? "with-replacement" : "without-replacement"},
          {"lens", {{"position", c.lens_position}, {"k", c.lens_k}, {"mode", to_string(c.lens_mode)}}},
          {"heatmap_format", c.heatmap_format},
          {"seed", c.seed}};
}

// --- runner ----------------------------------------------------------------

namespace {

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

fs::path temp_sibling(const fs::path& p) { return p.parent_path() / (p.stem().string() + ".partial" + p.extension().string()); }

void write_atomic(const fs::path& p, const std::string& bytes) {
  const auto tmp = temp_sibling(p);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << bytes;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

template <class Fn>
void write_atomic_with(const fs::path& p, Fn fn) {
  const auto tmp = temp_sibling(p);
  fn(tmp);
  fs::rename(tmp, p);
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw ValidationError(p.string() + ": " + e.what());
  }
}

using Inputs = std::vector<std::pair<std::string, fs::path>>;

struct Stage {
  std::string name;
  Inputs inputs;
  json params;
  /// Returns output paths relative to the run directory.
  std::function<std::vector<std::string>()> body;
};

class Runner {
 public:
  Runner(fs::path dir, RunSummary& summary) : dir_(std::move(dir)), summary_(summary) {}

  void run(const Stage& s) {
    const auto manifest = dir_ / "manifests" / (s.name + ".json");
    json inputs = json::object();
    for (const auto& [label, path] : s.inputs) inputs[label] = sha256_file(path);
    if (up_to_date(manifest, inputs, s.params)) {
      summary_.skipped.push_back(s.name);
      return;
    }
    json outputs = json::object();
    try {
      for (const auto& rel : s.body()) outputs[rel] = sha256_file(dir_ / rel);
    } catch (const std::exception& e) {
      throw StageError(s.name, manifest.string(), e.what());
    }
    write_atomic(manifest, pretty({{"stage", s.name}, {"params", s.params}, {"inputs", inputs}, {"outputs", outputs}}));
    summary_.executed.push_back(s.name);
  }

 private:
  bool up_to_date(const fs::path& manifest, const json& inputs, const json& params) const {
    if (!fs::exists(manifest)) return false;
    json m;
    try {
      m = json::parse(read_file(manifest));
    } catch (const std::exception&) {
      return false;
    }
    if (m.value("inputs", json()) != inputs || m.value("params", json()) != params) return false;
    const json outputs = m.value("outputs", json::object());
    for (const auto& [rel, hash] : outputs.items()) {
      const auto p = dir_ / rel;
      if (!fs::exists(p) || sha256_file(p) != hash.get<std::string>()) return false;
    }
    return true;
  }

  fs::path dir_;
  RunSummary& summary_;
};

Inputs image_inputs(const std::vector<VQATriple>& triples, const fs::path& base, const std::string& prefix) {
  Inputs in;
  std::set<fs::path> seen;
  auto add = [&](const fs::path& p) {
    if (!seen.insert(p).second) return;
    in.emplace_back(prefix + p.lexically_relative(base).generic_string(), p);
  };
  for (const auto& t : triples) {
    add(t.image);
    if (t.edited_image) add(*t.edited_image);
  }
  return in;
}

json stats_json(const std::vector<VQATriple>& triples) {
  json cats = json::array();
  for (const auto& s : category_stats(triples))
    cats.push_back({{"level", to_string(s.level)},
                    {"category", to_string(s.category)},
                    {"yes", s.yes},
                    {"no", s.no},
                    {"total", s.total()}});
  return {{"n", triples.size()}, {"categories", cats}};
}

json outcomes_json(const EvalReport& rep) {
  json j = json::object();
  for (const auto& r : rep.results) {
    json correct = json::array();
    for (bool b : r.correct) correct.push_back(b);
    j[std::string(to_string(r.strategy))] = {{"ids", r.ids}, {"correct", correct}};
  }
  return j;
}

Outcomes outcomes_from_json(const json& j, const std::string& name) {
  Outcomes o;
  o.name = name;
  o.ids = j.at(name).at("ids").get<std::vector<std::string>>();
  for (const auto& b : j.at(name).at("correct")) o.correct.push_back(b.get<bool>());
  return o;
}

std::string markdown_report(const json& r) {
  std::ostringstream md;
  md << "# Run report: " << r["dataset"].get<std::string>() << "\n\n";
  md << "Model: " << r["model"].dump() << ". Triples: " << r["n_triples"] << ", causal pairs retained: "
     << r["n_retained"] << ".\n\n";
  md << "## Strategies\n\n| strategy | average | overall |\n|---|---|---|\n";
  for (const auto& s : r["strategies"]) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "| %s | %.4f | %.4f |\n", s["strategy"].get<std::string>().c_str(),
                  s["average"].get<double>(), s["overall"].get<double>());
    md << buf;
  }
  md << "\n## Key heads\n\npositive: ";
  for (const auto& h : r["positive_heads"]) md << h.get<std::string>() << ' ';
  md << "\nnegative: ";
  for (const auto& h : r["negative_heads"]) md << h.get<std::string>() << ' ';
  md << "\n\n## Significance (" << r["significance_test"].get<std::string>() << ")\n\n";
  md << "| candidate | baseline | mean dpp | sd | t | p |\n|---|---|---|---|---|---|\n";
  for (const auto& s : r["significance"]) {
    char buf[256];
    const std::string t = s["t"].is_null() ? "inf" : std::to_string(s["t"].get<double>());
    std::snprintf(buf, sizeof buf, "| %s | %s | %.3f | %.3f | %s | %s%.3g |\n",
                  s["candidate"].get<std::string>().c_str(), s["baseline"].get<std::string>().c_str(),
                  s["mean_dpp"].get<double>(), s["sd"].get<double>(), t.c_str(),
                  s["p_is_bound"].get<bool>() ? "<" : "", s["p"].get<double>());
    md << buf;
  }
  md << "\nLens mode: " << r["lens_mode"].get<std::string>() << ".\n";
  return md.str();
}

}  // namespace

std::vector<std::string> pipeline_stages(const RunConfig& config) {
  std::vector<std::string> s = {"validate"};
  if (config.edit) s.push_back("edit");
  for (const char* n : {"filter", "patch", "heads", "plan", "evaluate", "significance", "lens", "report"})
    s.emplace_back(n);
  return s;
}

RunSummary run_pipeline(const RunConfig& cfg) {
  validate(cfg);
  const fs::path dir = cfg.output;
  fs::create_directories(dir / "manifests");
  RunSummary summary;
  summary.run_dir = dir;
  Runner runner(dir, summary);

  const ModelHandle model = cfg.model_path ? load_toy_vlm(*cfg.model_path) : build_toy_vlm({}, cfg.model_seed);
  const json model_params = cfg.model_path ? json{{"kind", "file"}, {"sha256", sha256_file(*cfg.model_path)}}
                                           : json{{"kind", "toy"}, {"seed", cfg.model_seed}};

  // One generator per run; each consumer draws its seed in a fixed order.
  std::mt19937_64 rng(cfg.seed);
  const std::uint64_t eval_seed = rng(), fraction_seed = rng(), bootstrap_seed = rng();

  const auto ext = "." + cfg.heatmap_format;
  const auto manifest = [&](const std::string& s) { return dir / "manifests" / (s + ".json"); };
  const auto load = [&](const std::string& rel) { return load_triples(dir / rel, &model.vocabulary()); };

  // validate
  {
    const auto source = load_triples(cfg.dataset, &model.vocabulary());
    Inputs in = {{"dataset", cfg.dataset}};
    for (auto& i : image_inputs(source, cfg.dataset.parent_path(), "image:")) in.push_back(i);
    runner.run({"validate", in, {{"model", model_params}}, [&] {
                  write_atomic_with(dir / "dataset.jsonl", [&](const fs::path& p) { write_triples(p, source); });
                  write_atomic(dir / "stats.json", pretty(stats_json(source)));
                  return std::vector<std::string>{"dataset.jsonl", "stats.json"};
                }});
  }

  std::string working = "dataset.jsonl";
  std::string upstream = "validate";
  if (cfg.edit) {
    Inputs in = {{"dataset.jsonl", dir / "dataset.jsonl"}, {"manifests/validate.json", manifest("validate")}};
    if (cfg.clients && fs::exists(*cfg.clients)) in.emplace_back("clients", *cfg.clients);
    runner.run({"edit", in, {{"qc_threshold", cfg.qc_threshold}}, [&] {
                  const auto triples = load("dataset.jsonl");
                  const auto clients = cfg.clients && fs::exists(*cfg.clients) ? load_clients(*cfg.clients)
                                                                               : ClientSet::stubs();
                  fs::create_directories(dir / "edits");
                  const auto log = dir / "edits" / "manifest.jsonl";
                  fs::remove(log);
                  EditJobOptions opts;
                  opts.qc_threshold = cfg.qc_threshold;
                  opts.output_dir = dir / "edits";
                  const auto batch = run_edits(triples, clients, opts, log);
                  std::map<std::string, VQATriple> accepted;
                  for (const auto& t : batch.triples) accepted.emplace(t.id, t);
                  std::vector<VQATriple> merged;
                  std::vector<std::string> outs = {"edited.jsonl", "edits/manifest.jsonl", "edit_summary.json"};
                  for (const auto& t : triples) {
                    const auto it = accepted.find(t.id);
                    merged.push_back(it == accepted.end() ? t : it->second);
                    if (it != accepted.end() && it->second.edited_image)
                      outs.push_back(it->second.edited_image->lexically_relative(dir).generic_string());
                  }
                  write_atomic_with(dir / "edited.jsonl", [&](const fs::path& p) { write_triples(p, merged); });
                  json counts = json::object();
                  for (const auto& r : batch.results) {
                    const std::string key(to_string(r.status));
                    counts[key] = counts.value(key, 0) + 1;
                  }
                  write_atomic(dir / "edit_summary.json", pretty({{"n", triples.size()}, {"status", counts}}));
                  return outs;
                }});
    working = "edited.jsonl";
    upstream = "edit";
  }

  runner.run({"filter",
              {{working, dir / working}, {"manifests/" + upstream + ".json", manifest(upstream)}},
              {{"model", model_params}},
              [&] {
                const auto triples = load(working);
                std::vector<VQATriple> candidates;
                for (const auto& t : triples)
                  if (t.edited_image) candidates.push_back(t);
                if (candidates.empty()) throw ValidationError("no triple carries an edited image");
                const auto result = filter_causal_pairs(model, encode_triples(model, candidates));
                std::vector<VQATriple> kept;
                for (const auto& e : result.retained) kept.push_back(e.triple);
                write_atomic_with(dir / "filtered.jsonl", [&](const fs::path& p) { write_triples(p, kept); });
                json decisions = json::array();
                for (const auto& d : result.decisions)
                  decisions.push_back({{"id", d.id},
                                       {"clean", d.clean_prediction},
                                       {"edited", d.edited_prediction},
                                       {"retained", d.retained}});
                write_atomic(dir / "filter.json", pretty({{"n", triples.size()},
                                                          {"candidates", candidates.size()},
                                                          {"retained", kept.size()},
                                                          {"decisions", decisions}}));
                return std::vector<std::string>{"filtered.jsonl", "filter.json"};
              }});

  runner.run({"patch",
              {{"filtered.jsonl", dir / "filtered.jsonl"}, {"manifests/filter.json", manifest("filter")}},
              {{"model", model_params}, {"corruption", to_string(cfg.corruption)}, {"grouping", to_string(cfg.grouping)},
               {"heatmap_format", cfg.heatmap_format}},
              [&] {
                const auto triples = encode_triples(model, load("filtered.jsonl"));
                std::vector<std::string> outs;
                for (auto tau : {Module::att, Module::mlp}) {
                  const auto grid = causal_score_grid(model, triples, tau, cfg.corruption, cfg.grouping);
                  const std::string stem = "patch_" + std::string(to_string(tau));
                  write_atomic(dir / (stem + ".json"), pretty(to_json(grid)));
                  write_atomic_with(dir / (stem + ext), [&](const fs::path& p) { render_heatmap(grid, p); });
                  outs.push_back(stem + ".json");
                  outs.push_back(stem + ext);
                }
                return outs;
              }});

  runner.run({"heads",
              {{working, dir / working}, {"manifests/" + upstream + ".json", manifest(upstream)}},
              {{"model", model_params}, {"k", cfg.k}},
              [&] {
                const auto split = partition_by_prediction(model, encode_triples(model, load(working)));
                const auto table = head_causal_scores(model, split);
                write_atomic_with(dir / "head_scores.csv",
                                  [&](const fs::path& p) { write_head_scores_csv(p, table.scores); });
                auto sel = to_json(select_key_heads(table.scores, cfg.k));
                sel["warnings"] = table.warnings;
                sel["n_correct"] = split.bucket(Membership::correct).size();
                sel["n_incorrect"] = split.bucket(Membership::incorrect).size();
                write_atomic(dir / "selection.json", pretty(sel));
                return std::vector<std::string>{"head_scores.csv", "selection.json"};
              }});

  runner.run({"plan",
              {{"head_scores.csv", dir / "head_scores.csv"}, {"selection.json", dir / "selection.json"}},
              {{"source", cfg.dataset_name}, {"seed", cfg.seed}},
              [&] {
                const auto scores = read_head_scores_csv(dir / "head_scores.csv");
                auto plan = build_rescale_plan(selection_from_json(read_json(dir / "selection.json")), scores);
                plan.source_dataset = cfg.dataset_name;
                plan.seed = cfg.seed;
                write_atomic(dir / "rescale_plan.json", pretty(to_json(plan)));
                return std::vector<std::string>{"rescale_plan.json"};
              }});

  {
    Inputs in = {{"rescale_plan.json", dir / "rescale_plan.json"}, {working, dir / working}};
    std::vector<VQATriple> transfer;
    if (cfg.eval_dataset) {
      transfer = load_triples(*cfg.eval_dataset, &model.vocabulary());
      in.emplace_back("eval_dataset", *cfg.eval_dataset);
      for (auto& i : image_inputs(transfer, cfg.eval_dataset->parent_path(), "eval_image:")) in.push_back(i);
    }
    json strategies = json::array();
    for (auto s : cfg.strategies) strategies.push_back(to_string(s));
    runner.run({"evaluate", in,
                {{"model", model_params}, {"strategies", strategies}, {"random_count", cfg.random_count},
                 {"fractions", cfg.fractions}, {"repeats", cfg.repeats}, {"k", cfg.k}, {"eval_seed", eval_seed},
                 {"fraction_seed", fraction_seed}, {"eval_name", cfg.eval_name}},
                [&] {
                  const auto plan = rescale_plan_from_json(read_json(dir / "rescale_plan.json"));
                  const auto source = encode_triples(model, load(working));
                  const auto eval = cfg.eval_dataset ? encode_triples(model, transfer) : source;
                  EvalOptions opts;
                  opts.strategy = {eval_seed, cfg.random_count};
                  opts.plan_source = cfg.dataset_name;
                  opts.eval_name = cfg.eval_name;
                  const auto rep = evaluate_strategies(model, eval, plan, cfg.strategies, opts);
                  write_atomic(dir / "eval.json", pretty(to_json(rep)));
                  write_atomic_with(dir / "eval.csv", [&](const fs::path& p) { write_eval_csv(p, rep); });
                  write_atomic(dir / "outcomes.json", pretty(outcomes_json(rep)));
                  json fractions = json::array();
                  for (double f : cfg.fractions) {
                    FractionOptions fo;
                    fo.fraction = f;
                    fo.repeats = cfg.repeats;
                    fo.k = cfg.k;
                    fo.seed = fraction_seed;
                    fo.strategy = {eval_seed, cfg.random_count};
                    fractions.push_back(to_json(evaluate_fraction(model, source, cfg.strategies, fo)));
                  }
                  write_atomic(dir / "fractions.json", pretty(fractions));
                  return std::vector<std::string>{"eval.json", "eval.csv", "outcomes.json", "fractions.json"};
                }});
  }

  runner.run({"significance",
              {{"outcomes.json", dir / "outcomes.json"}},
              {{"folds", cfg.folds}, {"fold_size", cfg.fold_size}, {"with_replacement", cfg.with_replacement},
               {"seed", bootstrap_seed}},
              [&] {
                const auto outcomes = read_json(dir / "outcomes.json");
                json rows = json::array();
                if (outcomes.contains("rescaling")) {
                  const auto cand = outcomes_from_json(outcomes, "rescaling");
                  for (auto s : cfg.strategies) {
                    if (s == Strategy::rescaling) continue;
                    const auto base = outcomes_from_json(outcomes, std::string(to_string(s)));
                    rows.push_back(to_json(bootstrap_compare(
                        cand, base, {cfg.folds, cfg.fold_size, bootstrap_seed, cfg.with_replacement})));
                  }
                }
                write_atomic(dir / "significance.json", pretty({{"test", "two-sided paired t over fold deltas"},
                                                                {"comparisons", rows}}));
                return std::vector<std::string>{"significance.json"};
              }});

  runner.run({"lens",
              {{"filtered.jsonl", dir / "filtered.jsonl"}, {working, dir / working},
               {"manifests/filter.json", manifest("filter")}},
              {{"model", model_params}, {"position", cfg.lens_position}, {"k", cfg.lens_k},
               {"mode", to_string(cfg.lens_mode)}, {"heatmap_format", cfg.heatmap_format}},
              [&] {
                auto triples = load("filtered.jsonl");
                if (triples.empty()) triples = load(working);
                if (triples.empty()) throw EmptyInputError("no triple to lens");
                const auto enc = encode_triple(model, triples.front());
                const int pos = resolve_position(cfg.lens_position, enc.clean.size());
                const auto cache = forward(model, enc.clean).cache;
                std::vector<std::string> outs;
                for (auto tau : {Module::att, Module::mlp}) {
                  const auto grid = lens_grid(model, *cache, tau, pos, cfg.lens_k, cfg.lens_mode);
                  auto j = to_json(grid);
                  j["id"] = enc.triple.id;
                  const std::string stem = "lens_" + std::string(to_string(tau));
                  write_atomic(dir / (stem + ".json"), pretty(j));
                  write_atomic_with(dir / (stem + ext), [&](const fs::path& p) { render_heatmap(grid, p); });
                  outs.push_back(stem + ".json");
                  outs.push_back(stem + ext);
                }
                return outs;
              }});

  {
    Inputs in;
    for (const char* f : {"stats.json", "filter.json", "selection.json", "rescale_plan.json", "eval.json",
                          "fractions.json", "significance.json", "lens_att.json", "lens_mlp.json"})
      in.emplace_back(f, dir / f);
    runner.run({"report", in, {{"config", to_json(cfg)}}, [&] {
                  const auto eval = read_json(dir / "eval.json");
                  const auto sel = read_json(dir / "selection.json");
                  const auto filter = read_json(dir / "filter.json");
                  json strategies = json::array();
                  for (const auto& r : eval["results"])
                    strategies.push_back({{"strategy", r["strategy"]}, {"average", r["average"]}, {"overall", r["overall"]}});
                  json pos = json::array(), neg = json::array();
                  for (const auto& h : sel["positive"]) pos.push_back(h["head"]);
                  for (const auto& h : sel["negative"]) neg.push_back(h["head"]);
                  const auto sig = read_json(dir / "significance.json");
                  const json report = {{"dataset", cfg.dataset_name},
                                       {"eval", cfg.eval_name},
                                       {"model", model_params},
                                       {"config", to_json(cfg)},
                                       {"n_triples", filter["n"]},
                                       {"n_retained", filter["retained"]},
                                       {"strategies", strategies},
                                       {"positive_heads", pos},
                                       {"negative_heads", neg},
                                       {"significance_test", "two-sided"},
                                       {"significance", sig["comparisons"]},
                                       {"fractions", read_json(dir / "fractions.json")},
                                       {"lens_mode", to_string(cfg.lens_mode)}};
                  write_atomic(dir / "report.json", pretty(report));
                  write_atomic(dir / "report.md", markdown_report(report));
                  return std::vector<std::string>{"report.json", "report.md"};
                }});
  }
  return summary;
}

}  // namespace vseam
