#include "vseam/rescaling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include "vseam/error.hpp"
#include "vseam/parallel.hpp"

namespace vseam {

using nlohmann::json;

std::string_view to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

Polarity parse_polarity(std::string_view s) {
  if (s == "positive") return Polarity::positive;
  if (s == "negative") return Polarity::negative;
  throw ValidationError("unknown polarity '" + std::string(s) + "'");
}

std::vector<double> normalize_importance(const std::vector<double>& c) {
  if (c.empty()) return {};
  const auto [lo, hi] = std::minmax_element(c.begin(), c.end());
  std::vector<double> out(c.size(), 1.0);
  if (c.size() < 2 || *hi == *lo) return out;
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = std::clamp((c[i] - *lo) / (*hi - *lo), 0.0, 1.0);
  return out;
}

RescalePlan build_rescale_plan(const HeadSetSelection& selection, const std::vector<HeadScore>& scores) {
  if (selection.positive.empty() && selection.negative.empty()) throw ValidationError("empty head selection");
  auto lookup = [&](const SelectedHead& h) -> const HeadScore& {
    for (const auto& s : scores)
      if (s.layer == h.layer && s.head == h.head) return s;
    throw ValidationError("no score for head " + head_label(h.layer, h.head));
  };
  RescalePlan plan;
  auto group = [&](const std::vector<SelectedHead>& heads, Polarity pol, GroupRange& range) {
    std::vector<double> c;
    for (const auto& h : heads) {
      const auto& s = lookup(h);
      const auto& v = pol == Polarity::positive ? s.c_correct : s.c_incorrect;
      if (!v) throw ValidationError("head " + head_label(h.layer, h.head) + " lacks a score for its polarity");
      c.push_back(std::abs(*v));
    }
    const auto lambda = normalize_importance(c);
    for (std::size_t i = 0; i < heads.size(); ++i)
      plan.entries.push_back({heads[i].layer, heads[i].head, pol, c[i], lambda[i]});
    range.size = static_cast<int>(c.size());
    if (!c.empty()) {
      range.c_min = *std::min_element(c.begin(), c.end());
      range.c_max = *std::max_element(c.begin(), c.end());
    }
  };
  group(selection.positive, Polarity::positive, plan.positive);
  group(selection.negative, Polarity::negative, plan.negative);
  return plan;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::original: return "original";
    case Strategy::rescaling: return "rescaling";
    case Strategy::wo_negative: return "wo-negative";
    case Strategy::wo_positive: return "wo-positive";
    case Strategy::random_remove: return "random-remove";
  }
  return "?";
}

Strategy parse_eval_strategy(std::string_view s) {
  for (auto v : kAllStrategies)
    if (to_string(v) == s) return v;
  throw ValidationError("unknown strategy '" + std::string(s) + "'");
}

InterventionPlan plan_to_interventions(const RescalePlan& plan, Strategy strategy, const ModelConfig& config,
                                       const StrategyOptions& options) {
  InterventionPlan out;
  switch (strategy) {
    case Strategy::original:
      break;
    case Strategy::rescaling:
      for (const auto& e : plan.entries) out.add(HeadRescaleAction{e.layer, e.head, e.scale()});
      break;
    case Strategy::wo_negative:
    case Strategy::wo_positive: {
      const auto want = strategy == Strategy::wo_negative ? Polarity::negative : Polarity::positive;
      for (const auto& e : plan.entries)
        if (e.polarity == want) out.add(HeadMaskAction{e.layer, e.head});
      break;
    }
    case Strategy::random_remove: {
      const int total = config.num_layers * config.num_heads;
      if (options.random_count < 0 || options.random_count > total)
        throw ValidationError("random-remove sample of " + std::to_string(options.random_count) +
                              " exceeds the " + std::to_string(total) + " available heads");
      std::vector<int> idx(static_cast<std::size_t>(total));
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(options.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(options.random_count));
      std::sort(idx.begin(), idx.end());
      for (int i : idx) out.add(HeadMaskAction{i / config.num_heads, i % config.num_heads});
      break;
    }
  }
  out.validate(config, 1);
  return out;
}

const StrategyResult& EvalReport::result(Strategy s) const {
  for (const auto& r : results)
    if (r.strategy == s) return r;
  throw ValidationError("strategy " + std::string(to_string(s)) + " not in report");
}

EvalReport evaluate_strategies(const ModelHandle& model, const std::vector<EncodedTriple>& eval,
                               const RescalePlan& plan, const std::vector<Strategy>& strategies,
                               const EvalOptions& options) {
  if (strategies.empty()) throw ValidationError("strategy list is empty");
  if (eval.empty()) throw EmptyInputError("evaluation set is empty");
  EvalReport report;
  report.n = static_cast<int>(eval.size());
  report.plan_source = options.plan_source.empty() ? plan.source_dataset : options.plan_source;
  report.eval_name = options.eval_name;
  report.seed = options.strategy.seed;
  for (auto s : strategies) {
    const auto iplan = plan_to_interventions(plan, s, model.config(), options.strategy);
    const auto preds = parallel_map(eval.size(), [&](std::size_t i) { return predict(model, eval[i].clean, iplan); });
    StrategyResult r;
    r.strategy = s;
    int tp = 0, fp = 0, fn = 0, hit = 0;
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const auto& t = eval[i].triple;
      const bool ok = preds[i] == t.answer;
      r.ids.push_back(t.id);
      r.correct.push_back(ok);
      auto& cat = r.per_category[t.category];
      ++cat.total;
      cat.correct += ok;
      hit += ok;
      if (preds[i] == "yes" && t.answer == "yes") ++tp;
      if (preds[i] == "yes" && t.answer != "yes") ++fp;
      if (preds[i] != "yes" && t.answer == "yes") ++fn;
    }
    double sum = 0;
    for (const auto& [c, a] : r.per_category) sum += a.accuracy();
    r.average = sum / static_cast<double>(r.per_category.size());
    r.overall = static_cast<double>(hit) / static_cast<double>(eval.size());
    r.binary.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.binary.recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double pr = r.binary.precision + r.binary.recall;
    r.binary.f1 = pr > 0 ? 2 * r.binary.precision * r.binary.recall / pr : 0.0;
    report.results.push_back(std::move(r));
  }
  return report;
}

std::vector<EncodedTriple> stratified_subsample(const std::vector<EncodedTriple>& triples, double fraction,
                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("sample fraction must lie in (0, 1]");
  std::vector<bool> keep(triples.size(), false);
  for (std::size_t ci = 0; ci < kAllCategories.size(); ++ci) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < triples.size(); ++i)
      if (triples[i].triple.category == kAllCategories[ci]) idx.push_back(i);
    if (idx.empty()) continue;
    const auto take = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * idx.size() - 1e-9)));
    std::mt19937_64 rng(seed ^ (0xD1B54A32D192ED03ull * (ci + 1)));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < take; ++k) keep[idx[k]] = true;
  }
  std::vector<EncodedTriple> out;
  for (std::size_t i = 0; i < triples.size(); ++i)
    if (keep[i]) out.push_back(triples[i]);
  return out;
}

RescalePlan identify_and_plan(const ModelHandle& model, const std::vector<EncodedTriple>& triples, int k,
                              std::string source_name, std::uint64_t seed) {
  const auto split = partition_by_prediction(model, triples);
  const auto table = head_causal_scores(model, split);
  auto plan = build_rescale_plan(select_key_heads(table.scores, k), table.scores);
  plan.source_dataset = std::move(source_name);
  plan.seed = seed;
  return plan;
}

FractionReport evaluate_fraction(const ModelHandle& model, const std::vector<EncodedTriple>& triples,
                                 const std::vector<Strategy>& strategies, const FractionOptions& options) {
  if (options.repeats < 1) throw ValidationError("repeats must be >= 1");
  FractionReport rep;
  rep.fraction = options.fraction;
  rep.repeats = options.repeats;
  rep.seed = options.seed;
  for (int r = 0; r < options.repeats; ++r) {
    const std::uint64_t s = options.seed + static_cast<std::uint64_t>(r);
    const auto sub = stratified_subsample(triples, options.fraction, s);
    const auto plan = identify_and_plan(model, sub, options.k, "subsample", s);
    EvalOptions eo;
    eo.strategy = options.strategy;
    eo.strategy.seed = options.strategy.seed + static_cast<std::uint64_t>(r);
    const auto report = evaluate_strategies(model, triples, plan, strategies, eo);
    for (const auto& res : report.results) rep.average_per_repeat[res.strategy].push_back(res.average);
  }
  for (const auto& [s, v] : rep.average_per_repeat) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    rep.mean[s] = mean;
    rep.sd[s] = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  }
  return rep;
}

// --- serialisation ---------------------------------------------------------

namespace {

json range_json(const GroupRange& g) { return {{"c_min", g.c_min}, {"c_max", g.c_max}, {"size", g.size}}; }

GroupRange range_from(const json& j) {
  return {j.at("c_min").get<double>(), j.at("c_max").get<double>(), j.value("size", 0)};
}

}  // namespace

json to_json(const RescalePlan& plan) {
  json entries = json::array();
  for (const auto& e : plan.entries)
    entries.push_back({{"layer", e.layer},
                       {"head", e.head},
                       {"label", head_label(e.layer, e.head)},
                       {"polarity", to_string(e.polarity)},
                       {"c", e.c},
                       {"lambda", e.lambda}});
  return {{"entries", entries},
          {"meta",
           {{"positive", range_json(plan.positive)},
            {"negative", range_json(plan.negative)},
            {"source_dataset", plan.source_dataset},
            {"seed", plan.seed}}}};
}

RescalePlan rescale_plan_from_json(const json& j) {
  RescalePlan plan;
  for (const auto& e : j.at("entries")) {
    RescaleEntry r{e.at("layer").get<int>(), e.at("head").get<int>(), parse_polarity(e.at("polarity").get<std::string>()),
                   e.at("c").get<double>(), e.at("lambda").get<double>()};
    if (r.lambda < 0.0 || r.lambda > 1.0) throw ValidationError("lambda outside [0, 1] in plan file");
    plan.entries.push_back(r);
  }
  const auto& meta = j.at("meta");
  plan.positive = range_from(meta.at("positive"));
  plan.negative = range_from(meta.at("negative"));
  plan.source_dataset = meta.value("source_dataset", "");
  plan.seed = meta.value("seed", std::uint64_t{0});
  return plan;
}

json to_json(const EvalReport& report) {
  json results = json::array();
  for (const auto& r : report.results) {
    json cats = json::object();
    for (const auto& [c, a] : r.per_category)
      cats[std::string(to_string(c))] = {{"correct", a.correct}, {"total", a.total}, {"accuracy", a.accuracy()}};
    results.push_back({{"strategy", to_string(r.strategy)},
                       {"per_category", cats},
                       {"average", r.average},
                       {"overall", r.overall},
                       {"precision", r.binary.precision},
                       {"recall", r.binary.recall},
                       {"f1", r.binary.f1}});
  }
  return {{"n", report.n},
          {"plan_source", report.plan_source},
          {"eval_name", report.eval_name},
          {"seed", report.seed},
          {"results", results}};
}

json to_json(const FractionReport& report) {
  json strategies = json::object();
  for (const auto& [s, v] : report.average_per_repeat)
    strategies[std::string(to_string(s))] = {{"per_repeat", v}, {"mean", report.mean.at(s)}, {"sd", report.sd.at(s)}};
  return {{"fraction", report.fraction}, {"repeats", report.repeats}, {"seed", report.seed}, {"strategies", strategies}};
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17) << "strategy,category,correct,total,accuracy\n";
  for (const auto& r : report.results) {
    for (const auto& [c, a] : r.per_category)
      os << to_string(r.strategy) << ',' << to_string(c) << ',' << a.correct << ',' << a.total << ',' << a.accuracy()
         << '\n';
    os << to_string(r.strategy) << ",average,,," << r.average << '\n';
  }
}

}  // namespace vseam
