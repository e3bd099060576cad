#include "vseam/lens.hpp"

#include <algorithm>
#include <charconv>
#include <numeric>

#include "vseam/error.hpp"

namespace vseam {

std::string_view to_string(LensMode m) { return m == LensMode::residual ? "residual" : "raw"; }

LensMode parse_lens_mode(std::string_view s) {
  if (s == "residual") return LensMode::residual;
  if (s == "raw") return LensMode::raw;
  throw ValidationError("unknown lens mode '" + std::string(s) + "'");
}

LensGrid lens_grid(const ModelHandle& model, const TokenSequence& input, Module tau, int position, int k,
                   LensMode mode) {
  const auto cache = forward(model, input).cache;
  return lens_grid(model, *cache, tau, position, k, mode);
}

LensGrid lens_grid(const ModelHandle& model, const ActivationCache& cache, Module tau, int position, int k,
                   LensMode mode) {
  if (position < 0 || position >= cache.seq_len())
    throw OutOfRangeError("lens position " + std::to_string(position) + " outside [0, " +
                          std::to_string(cache.seq_len()) + ")");
  if (k < 1) throw ValidationError("lens k must be >= 1");

  const auto& vocab = model.vocabulary();
  LensGrid grid{tau, position, k, mode, {}};
  const int V = model.vocab_size();
  const int keep = std::min(k, V);
  std::vector<int> order(static_cast<std::size_t>(V));
  for (int l = 0; l < cache.num_layers(); ++l) {
    const Matrix& act = mode == LensMode::residual ? cache.hidden(l, tau) : cache.output(l, tau);
    const RowVector logits = model.backend().unembed(act.row(position));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
    auto& row = grid.layers.emplace_back();
    row.reserve(static_cast<std::size_t>(keep));
    for (int i = 0; i < keep; ++i) row.push_back({order[i], vocab.text(order[i]), logits[order[i]]});
  }
  return grid;
}

int resolve_position(std::string_view spec, int seq_len) {
  if (spec == "last") return seq_len - 1;
  int v = 0;
  const auto [ptr, ec] = std::from_chars(spec.data(), spec.data() + spec.size(), v);
  if (ec != std::errc{} || ptr != spec.data() + spec.size())
    throw ValidationError("position must be 'last' or an integer, got '" + std::string(spec) + "'");
  const int pos = v < 0 ? seq_len + v : v;
  if (pos < 0 || pos >= seq_len)
    throw OutOfRangeError("position " + std::string(spec) + " outside a sequence of " + std::to_string(seq_len));
  return pos;
}

nlohmann::json to_json(const LensGrid& grid) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& row : grid.layers) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto& e : row) r.push_back({{"token", e.token}, {"text", e.text}, {"logit", e.logit}});
    layers.push_back(std::move(r));
  }
  return {{"tau", std::string(to_string(grid.tau))},
          {"position", grid.position},
          {"k", grid.k},
          {"mode", std::string(to_string(grid.mode))},
          {"layers", std::move(layers)}};
}

LensGrid lens_grid_from_json(const nlohmann::json& j) {
  try {
    LensGrid g;
    g.tau = module_from_string(j.at("tau").get<std::string>());
    g.position = j.at("position").get<int>();
    g.k = j.at("k").get<int>();
    g.mode = parse_lens_mode(j.value("mode", std::string("residual")));
    for (const auto& r : j.at("layers")) {
      auto& row = g.layers.emplace_back();
      for (const auto& e : r)
        row.push_back({e.at("token").get<int>(), e.at("text").get<std::string>(), e.at("logit").get<double>()});
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("lens grid JSON: ") + e.what());
  }
}

}  // namespace vseam
