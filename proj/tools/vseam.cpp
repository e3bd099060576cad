// vseam command-line entry point.

#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "vseam/clients.hpp"
#include "vseam/dataset.hpp"
#include "vseam/editing.hpp"
#include "vseam/error.hpp"
#include "vseam/heads.hpp"
#include "vseam/lens.hpp"
#include "vseam/patching.hpp"
#include "vseam/pipeline.hpp"
#include "vseam/report.hpp"
#include "vseam/rescaling.hpp"
#include "vseam/toy_model.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace vseam;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

struct ModelArgs {
  std::string path;
  std::uint64_t seed = 7;

  void add(CLI::App* app) {
    app->add_option("--model", path, "Toy weights file (default: seeded toy model)");
    app->add_option("--model-seed", seed, "Seed for the built-in toy model");
  }
  ModelHandle load() const { return path.empty() ? build_toy_vlm({}, seed) : load_toy_vlm(path); }
};

void emit(const json& j, const std::string& out) {
  const auto text = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw IoError("cannot write " + out);
  f << text;
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

json stats_json(const std::vector<CategoryStats>& stats) {
  json out = json::array();
  for (const auto& s : stats)
    out.push_back({{"level", to_string(s.level)}, {"category", to_string(s.category)}, {"yes", s.yes},
                   {"no", s.no}, {"total", s.total()}});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal analysis toolkit for vision-language question answering"};
  app.require_subcommand(1);
  std::function<void()> action;

  // model init
  auto* model_cmd = app.add_subcommand("model", "Toy model utilities")->require_subcommand(1);
  std::string model_out;
  std::uint64_t model_seed = 7;
  auto* model_init = model_cmd->add_subcommand("init", "Write seeded toy weights");
  model_init->add_option("--out", model_out, "Output file")->required();
  model_init->add_option("--seed", model_seed, "Weight seed");
  model_init->callback([&] {
    action = [&] {
      const auto m = build_toy_vlm({}, model_seed);
      save_toy_vlm(model_out, *as_toy(m));
      std::cout << "wrote " << model_out << "\n";
    };
  });

  // synth
  ModelArgs synth_model;
  SynthOptions synth_opts;
  std::string synth_dir;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic toy dataset");
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--n", synth_opts.n, "Number of triples");
  synth->add_option("--seed", synth_opts.seed, "Generator seed");
  synth->add_option("--incorrect-share", synth_opts.incorrect_share, "Share of labels that disagree with the model");
  synth_model.add(synth);
  synth->callback([&] {
    action = [&] {
      if (!synth_model.path.empty()) synth_opts.model_path = synth_model.path;
      synth_opts.model_seed = synth_model.seed;
      const auto triples = synthesize_dataset(synth_model.load(), synth_dir, synth_opts);
      std::cout << "wrote " << triples.size() << " triples to " << synth_dir << "\n";
    };
  });

  // dataset
  auto* dataset = app.add_subcommand("dataset", "Dataset checks and preparation")->require_subcommand(1);
  std::string ds_in, ds_out;
  std::uint64_t ds_seed = 0;
  ModelArgs ds_model;
  auto* ds_validate = dataset->add_subcommand("validate", "Schema-check a JSONL file");
  ds_validate->add_option("input,--in", ds_in, "Dataset JSONL")->required();
  ds_validate->add_option("--out", ds_out, "Write stats JSON here");
  ds_validate->callback([&] {
    action = [&] {
      const auto m = ds_model.load();
      const auto triples = load_triples(ds_in, &m.vocabulary());
      emit({{"n", triples.size()}, {"categories", stats_json(category_stats(triples))}}, ds_out);
    };
  });
  ds_model.add(ds_validate);
  auto* ds_filter = dataset->add_subcommand("filter", "Keep causal pairs");
  ds_filter->add_option("input,--in", ds_in, "Dataset JSONL")->required();
  ds_filter->add_option("--out", ds_out, "Output JSONL")->required();
  ds_model.add(ds_filter);
  ds_filter->callback([&] {
    action = [&] {
      const auto m = ds_model.load();
      const auto result = filter_causal_pairs(m, encode_triples(m, load_triples(ds_in, &m.vocabulary())));
      std::vector<VQATriple> kept;
      for (const auto& e : result.retained) kept.push_back(e.triple);
      write_triples(ds_out, kept);
      std::cout << "retained " << kept.size() << " of " << result.decisions.size() << "\n";
    };
  });
  auto* ds_balance = dataset->add_subcommand("balance", "Balance yes/no per category");
  ds_balance->add_option("input,--in", ds_in, "Dataset JSONL")->required();
  ds_balance->add_option("--out", ds_out, "Output JSONL")->required();
  ds_balance->add_option("--seed", ds_seed, "Shuffle seed");
  ds_balance->callback([&] {
    action = [&] {
      const auto report = balance_and_stats(load_triples(ds_in), ds_seed);
      write_triples(ds_out, report.balanced);
      std::cout << json({{"total", report.total}, {"categories", stats_json(report.stats)}}).dump(2) << "\n";
    };
  });

  // edit
  std::string edit_in, edit_dir, edit_clients;
  double edit_qc = kDefaultQcThreshold;
  auto* edit = app.add_subcommand("edit", "Counterfactual editing with tool clients");
  edit->add_option("input,--dataset", edit_in, "Dataset JSONL")->required();
  edit->add_option("--out", edit_dir, "Output directory")->required();
  edit->add_option("--clients", edit_clients, "Client TOML (default: stubs)");
  edit->add_option("--qc-threshold,--qc", edit_qc, "Cosine acceptance threshold");
  edit->callback([&] {
    action = [&] {
      const auto clients = edit_clients.empty() ? ClientSet::stubs() : load_clients(edit_clients);
      fs::create_directories(edit_dir);
      EditJobOptions opts;
      opts.qc_threshold = edit_qc;
      opts.output_dir = edit_dir;
      const auto batch = run_edits(load_triples(edit_in), clients, opts, fs::path(edit_dir) / "manifest.jsonl");
      write_triples(fs::path(edit_dir) / "edited.jsonl", batch.triples);
      std::cout << "accepted " << batch.triples.size() << " of " << batch.results.size() << "\n";
    };
  });

  // patch
  std::string patch_in, patch_out, patch_heatmap, patch_tau = "att", patch_strategy = "all-image",
                                                  patch_grouping = "modality";
  bool patch_per_image = false;
  ModelArgs patch_model;
  auto* patch = app.add_subcommand("patch", "Layer-wise causal score grid");
  patch->add_option("input", patch_in)->required();
  patch->add_option("--tau", patch_tau, "att or mlp")->check(CLI::IsMember({"att", "mlp"}));
  patch->add_option("--strategy", patch_strategy, "all-image, bbox-patches, text-span or all-positions")
      ->check(CLI::IsMember({"all-image", "bbox-patches", "text-span", "all-positions"}));
  patch->add_option("--grouping", patch_grouping, "modality or question-tokens")
      ->check(CLI::IsMember({"modality", "question-tokens"}));
  patch->add_flag("--per-image-token", patch_per_image, "One group per corrupted image position");
  patch->add_option("--out", patch_out, "Grid JSON (default stdout)");
  patch->add_option("--heatmap", patch_heatmap, "SVG or PNG heatmap");
  patch_model.add(patch);
  patch->callback([&] {
    action = [&] {
      const auto m = patch_model.load();
      const auto triples = encode_triples(m, load_triples(patch_in, &m.vocabulary()));
      const auto grid = causal_score_grid(m, triples, module_from_string(patch_tau), parse_strategy(patch_strategy),
                                          parse_grouping(patch_grouping), {patch_per_image});
      emit(to_json(grid), patch_out);
      if (!patch_heatmap.empty()) render_heatmap(grid, patch_heatmap);
    };
  });

  // heads
  auto* heads = app.add_subcommand("heads", "Head attribution")->require_subcommand(1);
  std::string heads_in, heads_out;
  int heads_k = kDefaultTopK;
  ModelArgs heads_model;
  auto* heads_score = heads->add_subcommand("score", "Per-head causal scores as CSV");
  heads_score->add_option("input", heads_in)->required();
  heads_score->add_option("--out", heads_out, "CSV output")->required();
  heads_model.add(heads_score);
  heads_score->callback([&] {
    action = [&] {
      const auto m = heads_model.load();
      const auto table =
          head_causal_scores(m, partition_by_prediction(m, encode_triples(m, load_triples(heads_in, &m.vocabulary()))));
      for (const auto& w : table.warnings) std::cerr << "warning: " << w << "\n";
      write_head_scores_csv(heads_out, table.scores);
    };
  });
  auto* heads_select = heads->add_subcommand("select", "Top-K positive and negative heads");
  heads_select->add_option("scores", heads_in, "CSV from heads score")->required();
  heads_select->add_option("--k", heads_k, "Heads per list");
  heads_select->add_option("--out", heads_out, "Selection JSON (default stdout)");
  heads_select->callback([&] {
    action = [&] { emit(to_json(select_key_heads(read_head_scores_csv(heads_in), heads_k)), heads_out); };
  });

  // rescale
  auto* rescale = app.add_subcommand("rescale", "Head rescaling plans and evaluation")->require_subcommand(1);
  std::string rs_scores, rs_selection, rs_plan, rs_dataset, rs_out, rs_csv, rs_source = "dataset", rs_name;
  std::vector<std::string> rs_strategies;
  std::string rs_strategy = "rescaling";
  StrategyOptions rs_opts;
  std::optional<double> rs_fraction;
  int rs_repeats = 10, rs_k = kDefaultTopK;
  ModelArgs rs_model;
  auto* rs_build = rescale->add_subcommand("build", "Plan from scores and a selection");
  rs_build->add_option("--scores", rs_scores)->required();
  rs_build->add_option("--selection", rs_selection)->required();
  rs_build->add_option("--source", rs_source, "Name of the source dataset");
  rs_build->add_option("--out", rs_out, "Plan JSON (default stdout)");
  rs_build->callback([&] {
    action = [&] {
      auto plan = build_rescale_plan(selection_from_json(read_json_file(rs_selection)), read_head_scores_csv(rs_scores));
      plan.source_dataset = rs_source;
      emit(to_json(plan), rs_out);
    };
  });
  auto* rs_apply = rescale->add_subcommand("apply", "Predictions under one strategy");
  rs_apply->add_option("--plan", rs_plan)->required();
  rs_apply->add_option("--dataset", rs_dataset)->required();
  rs_apply->add_option("--strategy", rs_strategy, "Strategy name");
  rs_apply->add_option("--seed", rs_opts.seed, "random-remove seed");
  rs_apply->add_option("--out", rs_out, "Predictions JSON (default stdout)");
  rs_model.add(rs_apply);
  rs_apply->callback([&] {
    action = [&] {
      const auto m = rs_model.load();
      const auto plan = rescale_plan_from_json(read_json_file(rs_plan));
      const auto ip = plan_to_interventions(plan, parse_eval_strategy(rs_strategy), m.config(), rs_opts);
      json preds = json::array();
      for (const auto& t : encode_triples(m, load_triples(rs_dataset, &m.vocabulary())))
        preds.push_back({{"id", t.triple.id}, {"answer", t.triple.answer}, {"prediction", predict(m, t.clean, ip)}});
      emit({{"strategy", rs_strategy}, {"predictions", preds}}, rs_out);
    };
  });
  auto* rs_eval = rescale->add_subcommand("eval", "Accuracy of every strategy");
  rs_eval->add_option("--plan", rs_plan, "Plan JSON (not used with --fraction)");
  rs_eval->add_option("--dataset", rs_dataset)->required();
  rs_eval->add_option("--strategy,--strategies", rs_strategies, "Subset of strategies (default all)");
  rs_eval->add_option("--fraction", rs_fraction, "Identify heads on this stratified share, repeated");
  rs_eval->add_option("--repeats", rs_repeats, "Repeats for --fraction");
  rs_eval->add_option("--k", rs_k, "Heads per list for --fraction");
  rs_eval->add_option("--seed", rs_opts.seed, "random-remove seed");
  rs_eval->add_option("--random-count", rs_opts.random_count, "Heads masked by random-remove");
  rs_eval->add_option("--name", rs_name, "Evaluation dataset label");
  rs_eval->add_option("--out", rs_out, "Report JSON (default stdout)");
  rs_eval->add_option("--csv", rs_csv, "Also write CSV");
  rs_model.add(rs_eval);
  rs_eval->callback([&] {
    action = [&] {
      const auto m = rs_model.load();
      std::vector<Strategy> strategies;
      for (const auto& s : rs_strategies) strategies.push_back(parse_eval_strategy(s));
      if (strategies.empty()) strategies.assign(kAllStrategies.begin(), kAllStrategies.end());
      const auto triples = encode_triples(m, load_triples(rs_dataset, &m.vocabulary()));
      if (rs_fraction) {
        FractionOptions fo;
        fo.fraction = *rs_fraction;
        fo.repeats = rs_repeats;
        fo.k = rs_k;
        fo.seed = rs_opts.seed;
        fo.strategy = rs_opts;
        emit(to_json(evaluate_fraction(m, triples, strategies, fo)), rs_out);
        return;
      }
      if (rs_plan.empty()) throw ValidationError("rescale eval needs --plan or --fraction");
      const auto plan = rescale_plan_from_json(read_json_file(rs_plan));
      EvalOptions opts{rs_opts, plan.source_dataset, rs_name.empty() ? fs::path(rs_dataset).stem().string() : rs_name};
      const auto rep = evaluate_strategies(m, triples, plan, strategies, opts);
      emit(to_json(rep), rs_out);
      if (!rs_csv.empty()) write_eval_csv(rs_csv, rep);
    };
  });

  // lens
  std::string lens_in, lens_id, lens_tau = "att", lens_pos = "last", lens_mode = "residual", lens_out, lens_heatmap;
  int lens_k = kDefaultLensTopK;
  ModelArgs lens_model;
  auto* lens = app.add_subcommand("lens", "Per-layer top-k vocabulary projection");
  lens->add_option("input", lens_in, "Dataset JSONL")->required();
  lens->add_option("--id", lens_id, "Triple id (default: first)");
  lens->add_option("--tau", lens_tau, "att or mlp")->check(CLI::IsMember({"att", "mlp"}));
  lens->add_option("--position", lens_pos, "'last' or a token index");
  lens->add_option("--k", lens_k, "Tokens per layer");
  lens->add_option("--mode", lens_mode, "residual or raw")->check(CLI::IsMember({"residual", "raw"}));
  lens->add_option("--out", lens_out, "Grid JSON (default stdout)");
  lens->add_option("--heatmap", lens_heatmap, "SVG or PNG heatmap");
  lens_model.add(lens);
  lens->callback([&] {
    action = [&] {
      const auto m = lens_model.load();
      const auto triples = load_triples(lens_in, &m.vocabulary());
      if (triples.empty()) throw ValidationError("dataset is empty");
      auto it = triples.begin();
      if (!lens_id.empty()) {
        it = std::find_if(triples.begin(), triples.end(), [&](const VQATriple& t) { return t.id == lens_id; });
        if (it == triples.end()) throw ValidationError("no triple with id '" + lens_id + "'");
      }
      const auto enc = encode_triple(m, *it);
      const auto grid = lens_grid(m, enc.clean, module_from_string(lens_tau), resolve_position(lens_pos, enc.clean.size()),
                                  lens_k, parse_lens_mode(lens_mode));
      auto j = to_json(grid);
      j["id"] = enc.triple.id;
      emit(j, lens_out);
      if (!lens_heatmap.empty()) render_heatmap(grid, lens_heatmap);
    };
  });

  // report
  auto* report = app.add_subcommand("report", "Figures and significance")->require_subcommand(1);
  std::string rp_in, rp_out, rp_candidate = "rescaling", rp_baseline = "original";
  BootstrapOptions rp_boot;
  bool rp_without = false;
  auto* rp_heatmap = report->add_subcommand("heatmap", "Render a patch or lens grid");
  rp_heatmap->add_option("grid", rp_in, "Grid JSON")->required();
  rp_heatmap->add_option("--out", rp_out, "SVG or PNG path")->required();
  rp_heatmap->callback([&] {
    action = [&] {
      const auto j = read_json_file(rp_in);
      if (j.contains("values"))
        render_heatmap(grid_from_json(j), rp_out);
      else
        render_heatmap(lens_grid_from_json(j), rp_out);
    };
  });
  auto* rp_sig = report->add_subcommand("significance", "Bootstrap paired t-test between two strategies");
  rp_sig->add_option("outcomes", rp_in, "outcomes.json from a run")->required();
  rp_sig->add_option("--candidate", rp_candidate);
  rp_sig->add_option("--baseline", rp_baseline);
  rp_sig->add_option("--folds", rp_boot.folds);
  rp_sig->add_option("--fold-size", rp_boot.fold_size);
  rp_sig->add_option("--seed", rp_boot.seed);
  rp_sig->add_flag("--without-replacement", rp_without, "Sample each fold without replacement");
  rp_sig->add_option("--out", rp_out, "Report JSON (default stdout)");
  rp_sig->callback([&] {
    action = [&] {
      const auto j = read_json_file(rp_in);
      auto outcomes = [&](const std::string& name) {
        if (!j.contains(name)) throw ValidationError("no outcomes for '" + name + "'");
        Outcomes o{name, j[name].at("ids").get<std::vector<std::string>>(), {}};
        for (const auto& b : j[name].at("correct")) o.correct.push_back(b.get<bool>());
        return o;
      };
      rp_boot.with_replacement = !rp_without;
      emit(to_json(bootstrap_compare(outcomes(rp_candidate), outcomes(rp_baseline), rp_boot)), rp_out);
    };
  });

  // run
  std::string run_config;
  auto* run = app.add_subcommand("run", "End-to-end pipeline from a TOML config");
  run->add_option("config", run_config)->required();
  run->callback([&] {
    action = [&] {
      const auto summary = run_pipeline(load_run_config(run_config));
      for (const auto& s : summary.executed) std::cout << "ran     " << s << "\n";
      for (const auto& s : summary.skipped) std::cout << "skipped " << s << "\n";
      std::cout << "run directory: " << summary.run_dir.string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (action) action();
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
}
