// icmc: generate episodes, train, evaluate strategies, report theory constants, plot.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "icmc/io.hpp"
#include "icmc/svg.hpp"

namespace fs = std::filesystem;
using namespace icmc;

namespace {

constexpr int kOk = 0, kConfigError = 2, kNumericError = 3;

struct Common {
  std::string config, out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool dry_run = false;
};

json build_info() {
  return {{"tool", "icmc"}, {"version", "0.1.0"}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
}

json load_config(const Common& c) { return c.config.empty() ? json::object() : read_json_file(c.config); }

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  return f;
}

void write_text(const fs::path& p, const std::string& s) {
  auto f = open_out(p);
  f << s;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- generate

int cmd_generate(const Common& c) {
  json j = load_config(c);
  detail::allow_keys(j, {"prior", "k", "t", "n", "count", "seed", "description"}, "generate config");
  TrainingConfig tc;
  MinimalConfig shape;
  shape.k = detail::get_or(j, "k", shape.k);
  shape.t = detail::get_or(j, "t", shape.t);
  tc.model = shape;
  if (j.contains("prior")) tc.prior = prior_from_json(j.at("prior"));
  tc.n = detail::get_or<std::size_t>(j, "n", 2);
  tc.t = model_t(tc.model);
  tc.seed = c.seed.value_or(detail::get_or<std::uint64_t>(j, "seed", 0));
  const auto count = detail::get_or<std::size_t>(j, "count", 1000);
  try {
    tc.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  const json echo{{"prior", prior_name(tc.prior)}, {"k", tc.k()}, {"t", tc.t}, {"n", tc.n},
                  {"count", count},                {"seed", tc.seed}};
  write_json(fs::path(c.out) / "generate_config.json", echo);
  if (c.dry_run) return kOk;
  std::vector<EpisodeRecord> eps;
  eps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng(tc.seed, i);
    eps.push_back({draw_training_episode(tc, tc.prior, rng), prior_name(tc.prior), tc.seed, i});
  }
  auto f = open_out(fs::path(c.out) / "episodes.jsonl");
  write_episodes(f, eps, {{"icmc_episodes", 1}, {"config", echo}});
  std::cerr << "wrote " << count << " episodes\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct PlotRequests {
  bool curves = true, profile = true;
  std::vector<std::size_t> heatmap_at;
};

PlotRequests plots_from(const json& j) {
  PlotRequests p;
  if (!j.contains("plots")) return p;
  const auto& q = j.at("plots");
  detail::allow_keys(q, {"curves", "profile", "heatmap_at"}, "plots");
  p.curves = detail::get_or(q, "curves", p.curves);
  p.profile = detail::get_or(q, "profile", p.profile);
  p.heatmap_at = detail::get_or(q, "heatmap_at", p.heatmap_at);
  return p;
}

void emit_model_views(const fs::path& dir, const std::string& tag, const ModelParams& params,
                      const TrainingConfig& cfg, bool heatmaps, bool profile) {
  if (const auto* tp = std::get_if<TransformerParams>(&params)) {
    const auto ep = make_eval_set(cfg, 0).front();
    if (heatmaps) {
      const auto maps = attention_maps(*tp, ep.tokens);
      for (std::size_t l = 0; l < maps.probs.size(); ++l)
        for (std::size_t h = 0; h < maps.probs[l].size(); ++h) {
          const std::string name = "attention_" + tag + "_L" + std::to_string(l + 1) + "_H" + std::to_string(h + 1);
          {
            auto f = open_out(dir / (name + ".csv"));
            write_matrix_csv(f, maps.probs[l][h], "attention probabilities, rows = query position");
          }
          write_text(dir / (name + ".svg"),
                     svg::heatmap(maps.probs[l][h], "layer " + std::to_string(l + 1) + " head " +
                                                        std::to_string(h + 1) + " @ " + tag));
        }
    }
    if (profile) {
      TrainingConfig small = cfg;
      small.eval_episodes = std::min<std::size_t>(cfg.eval_episodes, 64);
      const auto prof = mean_positional_profile(*tp, make_eval_set(small, 0), 0);
      Matrix row(1, prof.size());
      row.data = prof;
      {
        auto f = open_out(dir / ("profile_" + tag + ".csv"));
        write_matrix_csv(f, row, "layer 1 positional profile, column o-1 = offset o (1 = self)");
      }
      write_text(dir / ("profile_" + tag + ".svg"), svg::bars(prof, "layer 1 positional profile @ " + tag, "offset"));
    }
  } else if (profile) {
    const auto& mp = std::get<MinimalParams>(params);
    Matrix row(1, mp.v.size());
    row.data = mp.v;
    {
      auto f = open_out(dir / ("profile_" + tag + ".csv"));
      write_matrix_csv(f, row, "relative position vector v, column j-1 = v_j");
    }
    write_text(dir / ("profile_" + tag + ".svg"), svg::bars(mp.v, "v @ " + tag, "j"));
  }
}

int train_one(const json& recipe, const Common& c, const fs::path& dir) {
  TrainingConfig cfg = training_from_json(recipe);
  if (c.seed) cfg.seed = *c.seed;
  if (c.threads) cfg.threads = *c.threads;
  try {
    cfg.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  const auto plots = plots_from(recipe);
  for (auto at : plots.heatmap_at)
    if (at > cfg.total_examples) throw ConfigError("heatmap checkpoint beyond total_examples");
  json echo = to_json(cfg);
  echo["name"] = detail::get_or<std::string>(recipe, "name", "run");
  echo["plots"] = {{"curves", plots.curves}, {"profile", plots.profile}, {"heatmap_at", plots.heatmap_at}};
  write_json(dir / "config.json", echo);
  if (c.dry_run) {
    std::cerr << "config ok: " << dir.string() << "\n";
    return kOk;
  }
  std::vector<bool> done(plots.heatmap_at.size(), false);
  auto cb = [&](const MetricsRecord& r, const ModelParams& p) {
    std::cerr << r.examples_seen << " loss " << r.train_loss << " kl_truth " << r.per_prior[0].kl_truth << "\n";
    for (std::size_t i = 0; i < done.size(); ++i)
      if (!done[i] && r.examples_seen >= plots.heatmap_at[i]) {
        done[i] = true;
        const std::string tag = std::to_string(r.examples_seen);
        write_json(dir / ("checkpoint_" + tag + ".json"), checkpoint_json(p, cfg, r.examples_seen));
        emit_model_views(dir, tag, p, cfg, true, false);
      }
    return true;
  };
  const auto res = run_training(cfg, cb);
  json header{{"config", echo},
              {"kl_direction", kKlDirection},
              {"build", build_info()},
              {"baselines", json::array()}};
  for (const auto& b : res.baselines) {
    json e{{"eval_prior", b.eval_prior}, {"uniform", b.uniform}, {"unigram", b.unigram}, {"bigram", b.bigram}};
    if (b.ngram) e["ngram"] = *b.ngram;
    header["baselines"].push_back(e);
  }
  {
    auto f = open_out(dir / "metrics.csv");
    write_metrics_csv(f, res.log, header);
  }
  write_json(dir / "checkpoint_final.json", checkpoint_json(res.params, cfg, res.examples_seen));
  if (plots.curves)
    for (std::size_t i = 0; i < cfg.eval_priors.size(); ++i)
      write_text(dir / ("kl_" + std::to_string(i) + ".svg"),
                 svg::kl_curves(res.log, i, "KL to strategies, eval " + prior_name(cfg.eval_priors[i])));
  emit_model_views(dir, "final", res.params, cfg, false, plots.profile);
  if (res.log.size() >= 3) {
    const auto ph = detect_phases(res.log, 0, cfg.n > 2 ? StrategyId::NGram : StrategyId::Bigram);
    json s{{"crossover_examples", ph.crossover_examples ? json(*ph.crossover_examples) : json(nullptr)},
           {"unigram_window", ph.unigram_window},
           {"spans", json::array()}};
    for (const auto& sp : ph.spans)
      s["spans"].push_back({{"strategy", strategy_label(sp.strategy)},
                            {"from", res.log[sp.first].examples_seen},
                            {"to", res.log[sp.last].examples_seen}});
    write_json(dir / "phases.json", s);
  }
  if (res.status == TrainingStatus::NonFinite) {
    std::cerr << "training stopped: non-finite loss or gradient\n";
    return kNumericError;
  }
  return kOk;
}

int cmd_train(const Common& c) {
  json recipe = load_config(c);
  if (!recipe.contains("variants")) return train_one(recipe, c, c.out);
  json base = recipe;
  base.erase("variants");
  std::set<std::string> names;
  int rc = kOk;
  for (const auto& v : recipe.at("variants")) {
    json merged = base;
    merged.merge_patch(v);
    const auto name = detail::get_or<std::string>(v, "name", "");
    if (name.empty() || !names.insert(name).second) throw ConfigError("variants need unique names");
    rc = std::max(rc, train_one(merged, c, fs::path(c.out) / name));
  }
  return rc;
}

// ---------------------------------------------------------------- theory-report

int cmd_theory(const Common& c) {
  json j = load_config(c);
  TheoryConfig cfg = theory_from_json(j);
  if (c.seed) cfg.seed = *c.seed;
  const auto ct = detail::get_or<std::size_t>(j, "curriculum_t", 200);
  const auto cs = detail::get_or<std::size_t>(j, "curriculum_samples", 50000);
  json echo = to_json(cfg);
  echo["curriculum_t"] = ct;
  echo["curriculum_samples"] = cs;
  write_json(fs::path(c.out) / "theory_config.json", echo);
  if (c.dry_run) return kOk;
  json rep = theory_report(cfg, ct, cs);
  rep["build"] = build_info();
  write_json(fs::path(c.out) / "theory_report.json", rep);
  return kOk;
}

// ---------------------------------------------------------------- strategies-eval

int cmd_strategies(const Common& c) {
  json j = load_config(c);
  detail::allow_keys(j, {"prior", "k", "t", "n", "episodes", "oracle_subsample", "oracle_grid", "seed", "description"},
                     "strategies-eval config");
  StrategyEvalConfig s;
  if (j.contains("prior")) s.prior = prior_from_json(j.at("prior"));
  s.k = detail::get_or(j, "k", s.k);
  s.t = detail::get_or(j, "t", s.t);
  s.n = detail::get_or(j, "n", s.n);
  s.episodes = detail::get_or(j, "episodes", s.episodes);
  s.oracle_subsample = detail::get_or(j, "oracle_subsample", s.oracle_subsample);
  s.oracle_grid = detail::get_or(j, "oracle_grid", s.oracle_grid);
  s.seed = c.seed.value_or(detail::get_or<std::uint64_t>(j, "seed", 0));
  const json echo{{"prior", prior_name(s.prior)}, {"k", s.k}, {"t", s.t}, {"n", s.n}, {"episodes", s.episodes},
                  {"oracle_subsample", s.oracle_subsample}, {"oracle_grid", s.oracle_grid}, {"seed", s.seed}};
  if (c.dry_run) {
    write_json(fs::path(c.out) / "strategies_config.json", echo);
    return kOk;
  }
  StrategyEvalReport r;
  try {
    r = strategies_eval(s);
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  json out{{"config", echo},
           {"ce_uniform", r.ce_uniform},
           {"ce_unigram", r.ce_unigram},
           {"ce_bigram", r.ce_bigram},
           {"episodes", r.episodes}};
  if (r.ce_ngram) out["ce_ngram"] = *r.ce_ngram;
  if (r.tv_bigram_oracle) {
    out["tv_bigram_oracle"] = *r.tv_bigram_oracle;
    out["oracle_episodes"] = r.oracle_episodes;
  }
  write_json(fs::path(c.out) / "strategies.json", out);
  return kOk;
}

// ---------------------------------------------------------------- plot

struct PlotArgs {
  std::string input, kind = "curves", title;
  std::size_t prior_index = 0;
};

int cmd_plot(const Common& c, PlotArgs a) {
  if (!c.config.empty()) {
    json j = read_json_file(c.config);
    detail::allow_keys(j, {"input", "kind", "title", "prior_index"}, "plot config");
    a.input = detail::get_or(j, "input", a.input);
    a.kind = detail::get_or(j, "kind", a.kind);
    a.title = detail::get_or(j, "title", a.title);
    a.prior_index = detail::get_or(j, "prior_index", a.prior_index);
  }
  if (a.input.empty()) throw ConfigError("plot needs an input CSV");
  std::ifstream in(a.input);
  if (!in) throw ConfigError("cannot open " + a.input);
  const auto stem = fs::path(a.input).stem().string();
  std::string svg_text;
  if (a.kind == "curves") {
    const auto t = read_metrics_csv(in);
    svg_text = svg::kl_curves(t.log, a.prior_index, a.title.empty() ? "KL to strategies" : a.title);
  } else if (a.kind == "heatmap") {
    svg_text = svg::heatmap(read_matrix_csv(in), a.title.empty() ? stem : a.title);
  } else if (a.kind == "profile") {
    const auto m = read_matrix_csv(in);
    std::vector<double> row(m.data.begin(), m.data.begin() + static_cast<std::ptrdiff_t>(m.rows ? m.cols : 0));
    svg_text = svg::bars(row, a.title.empty() ? stem : a.title, "offset");
  } else {
    throw ConfigError("plot kind must be curves, heatmap or profile");
  }
  if (!c.dry_run) write_text(fs::path(c.out) / (stem + ".svg"), svg_text);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"In-context learning of Markov chains: data, training, theory and plots"};
  app.require_subcommand(1);
  Common common;
  PlotArgs plot_args;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", common.config, "JSON config or recipe");
    s->add_option("--seed", common.seed, "override the config seed");
    s->add_option("--out", common.out, "output directory");
    s->add_option("--threads", common.threads, "worker threads for evaluation");
    s->add_flag("--dry-run", common.dry_run, "validate and echo the config only");
  };
  auto* gen = app.add_subcommand("generate", "write a JSONL episode file");
  auto* train = app.add_subcommand("train", "run a training recipe");
  auto* theory = app.add_subcommand("theory-report", "compute the theory constants and two-step dynamics");
  auto* plot = app.add_subcommand("plot", "render a metrics or matrix CSV to SVG");
  auto* strat = app.add_subcommand("strategies-eval", "cross-entropy of the reference strategies");
  for (auto* s : {gen, train, theory, plot, strat}) add_common(s);
  plot->add_option("--input", plot_args.input, "CSV to render");
  plot->add_option("--kind", plot_args.kind, "curves | heatmap | profile");
  plot->add_option("--title", plot_args.title, "plot title");
  plot->add_option("--prior-index", plot_args.prior_index, "eval prior to plot");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }
  try {
    if (gen->parsed()) return cmd_generate(common);
    if (train->parsed()) return cmd_train(common);
    if (theory->parsed()) return cmd_theory(common);
    if (plot->parsed()) return cmd_plot(common, plot_args);
    if (strat->parsed()) return cmd_strategies(common);
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const DegenerateChain& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  return kConfigError;
}
