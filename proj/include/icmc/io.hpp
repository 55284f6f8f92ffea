#pragma once

// JSON configs and checkpoints, the metrics CSV, JSONL episode files and the
// theory report.

#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icmc/chain.hpp"
#include "icmc/theory.hpp"
#include "icmc/train.hpp"

namespace icmc {

using nlohmann::json;

struct ConfigError : Error {
  using Error::Error;
};

namespace detail {

inline void allow_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> ok(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

inline json matrix_json(const Matrix& m) { return {{"shape", {m.rows, m.cols}}, {"data", m.data}}; }

inline Matrix matrix_from(const json& j, const std::string& name) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2) throw ConfigError(name + ": shape must have two entries");
    Matrix m(shape[0], shape[1]);
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != shape[0] * shape[1]) throw ConfigError(name + ": data length does not match shape");
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(name + ": " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------- configs

inline json to_json(const ModelConfig& m) {
  if (const auto* t = std::get_if<TransformerConfig>(&m))
    return {{"kind", "transformer"}, {"layers", t->layers}, {"heads", t->heads}, {"d", t->d},
            {"k", t->k},             {"t", t->t},           {"init_scale", t->init_scale}};
  const auto& c = std::get<MinimalConfig>(m);
  return {{"kind", "minimal"}, {"k", c.k}, {"t", c.t}, {"w_init", c.w_init}, {"v_init", c.v_start()}};
}

inline ModelConfig model_from_json(const json& j) {
  const auto kind = detail::get_or<std::string>(j, "kind", "transformer");
  if (kind == "transformer") {
    detail::allow_keys(j, {"kind", "layers", "heads", "d", "k", "t", "init_scale"}, "model");
    TransformerConfig c;
    c.layers = detail::get_or(j, "layers", c.layers);
    c.heads = detail::get_or(j, "heads", c.heads);
    c.d = detail::get_or(j, "d", c.d);
    c.k = detail::get_or(j, "k", c.k);
    c.t = detail::get_or(j, "t", c.t);
    c.init_scale = detail::get_or(j, "init_scale", c.init_scale);
    return c;
  }
  if (kind == "minimal") {
    detail::allow_keys(j, {"kind", "k", "t", "w_init", "v_init"}, "model");
    MinimalConfig c;
    c.k = detail::get_or(j, "k", c.k);
    c.t = detail::get_or(j, "t", c.t);
    c.w_init = detail::get_or(j, "w_init", c.w_init);
    if (j.contains("v_init")) c.v_init = detail::get_or(j, "v_init", 0.0);
    return c;
  }
  throw ConfigError("model.kind must be 'transformer' or 'minimal'");
}

inline json to_json(const OptimizerConfig& o) {
  if (const auto* s = std::get_if<SGD>(&o)) return {{"kind", "sgd"}, {"lr", s->lr}, {"wd", s->wd}};
  const auto& a = std::get<AdamW>(o);
  return {{"kind", "adamw"}, {"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"wd", a.wd}};
}

inline OptimizerConfig optimizer_from_json(const json& j) {
  const auto kind = detail::get_or<std::string>(j, "kind", "adamw");
  if (kind == "sgd") {
    detail::allow_keys(j, {"kind", "lr", "wd"}, "optimizer");
    SGD s;
    s.lr = detail::get_or(j, "lr", s.lr);
    s.wd = detail::get_or(j, "wd", s.wd);
    return s;
  }
  if (kind == "adamw") {
    detail::allow_keys(j, {"kind", "lr", "beta1", "beta2", "eps", "wd"}, "optimizer");
    AdamW a;
    a.lr = detail::get_or(j, "lr", a.lr);
    a.beta1 = detail::get_or(j, "beta1", a.beta1);
    a.beta2 = detail::get_or(j, "beta2", a.beta2);
    a.eps = detail::get_or(j, "eps", a.eps);
    a.wd = detail::get_or(j, "wd", a.wd);
    return a;
  }
  throw ConfigError("optimizer.kind must be 'sgd' or 'adamw'");
}

inline json to_json(const LossKind& l) {
  if (const auto* m = std::get_if<Margin>(&l)) return {{"kind", "margin"}, {"delta", m->delta}};
  return {{"kind", "ce"}};
}

inline LossKind loss_from_json(const json& j) {
  if (j.is_string()) {
    if (j == "ce") return CrossEntropy{};
    if (j == "margin") return Margin{};
    throw ConfigError("loss must be 'ce' or 'margin'");
  }
  detail::allow_keys(j, {"kind", "delta"}, "loss");
  const auto kind = detail::get_or<std::string>(j, "kind", "ce");
  if (kind == "ce") return CrossEntropy{};
  if (kind == "margin") return Margin{detail::get_or(j, "delta", 1.0)};
  throw ConfigError("loss.kind must be 'ce' or 'margin'");
}

inline ChainPrior prior_from_json(const json& j) {
  if (!j.is_string()) throw ConfigError("priors are given as strings such as \"dirichlet\" or \"interpolated:0.5\"");
  try {
    return parse_prior(j.get<std::string>());
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  } catch (const std::logic_error&) {
    throw ConfigError("malformed prior parameter in '" + j.get<std::string>() + "'");
  }
}

inline json to_json(const TrainingConfig& c) {
  json pri = json::array();
  for (const auto& p : c.eval_priors) pri.push_back(prior_name(p));
  return {{"model", to_json(c.model)},
          {"prior", prior_name(c.prior)},
          {"eval_priors", pri},
          {"n", c.n},
          {"t", c.t},
          {"batch", c.batch},
          {"optimizer", to_json(c.optimizer)},
          {"loss", to_json(c.loss)},
          {"total_examples", c.total_examples},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"seed", c.seed},
          {"threads", c.threads}};
}

inline TrainingConfig training_from_json(const json& j) {
  detail::allow_keys(j,
                     {"name", "model", "prior", "eval_priors", "n", "t", "batch", "optimizer", "loss", "total_examples",
                      "eval_every", "eval_episodes", "seed", "threads", "plots", "variants", "description"},
                     "config");
  TrainingConfig c;
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("prior")) c.prior = prior_from_json(j.at("prior"));
  if (j.contains("eval_priors")) {
    c.eval_priors.clear();
    for (const auto& p : j.at("eval_priors")) c.eval_priors.push_back(prior_from_json(p));
  }
  c.n = detail::get_or(j, "n", c.n);
  c.t = detail::get_or(j, "t", model_t(c.model));
  c.batch = detail::get_or(j, "batch", c.batch);
  if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"));
  if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
  c.total_examples = detail::get_or(j, "total_examples", c.total_examples);
  c.eval_every = detail::get_or(j, "eval_every", c.eval_every);
  c.eval_episodes = detail::get_or(j, "eval_episodes", c.eval_episodes);
  c.seed = detail::get_or(j, "seed", c.seed);
  c.threads = detail::get_or(j, "threads", c.threads);
  try {
    c.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline json to_json(const Estimator& e) {
  if (const auto* m = std::get_if<estimator::MonteCarlo>(&e)) return {{"kind", "monte_carlo"}, {"samples", m->samples}};
  if (const auto* q = std::get_if<estimator::Quadrature>(&e)) return {{"kind", "midpoint"}, {"grid", q->grid}};
  const auto& g = std::get<estimator::GaussLegendre>(e);
  return {{"kind", "gauss_legendre"}, {"panels", g.panels}, {"order", g.order}};
}

inline Estimator estimator_from_json(const json& j) {
  detail::allow_keys(j, {"kind", "samples", "grid", "panels", "order"}, "estimator");
  const auto kind = detail::get_or<std::string>(j, "kind", "monte_carlo");
  if (kind == "monte_carlo") return estimator::MonteCarlo{detail::get_or<std::size_t>(j, "samples", 10000)};
  if (kind == "midpoint") return estimator::Quadrature{detail::get_or<std::size_t>(j, "grid", 400)};
  if (kind == "gauss_legendre")
    return estimator::GaussLegendre{detail::get_or<std::size_t>(j, "panels", 48),
                                    detail::get_or<std::size_t>(j, "order", 8)};
  throw ConfigError("estimator.kind must be monte_carlo, midpoint or gauss_legendre");
}

inline json to_json(const TheoryConfig& c) {
  json j{{"c", c.c},
         {"eta", c.eta},
         {"t", c.t},
         {"Delta", c.margin()},
         {"estimator", to_json(c.estimator)},
         {"c_prime", c.c_prime},
         {"rho", c.rho},
         {"eps", c.eps},
         {"eta1", c.step1_lr()},
         {"eta2", c.step2_lr()},
         {"lambda_wd", c.lambda_wd},
         {"w_init", c.w_init},
         {"v_init", c.v_init},
         {"seed", c.seed}};
  return j;
}

inline TheoryConfig theory_from_json(const json& j) {
  detail::allow_keys(j,
                     {"c", "eta", "t", "Delta", "estimator", "c_prime", "rho", "eps", "eta1", "eta2", "lambda_wd",
                      "w_init", "v_init", "seed", "curriculum_t", "curriculum_samples", "description"},
                     "theory config");
  TheoryConfig c;
  c.c = detail::get_or(j, "c", c.c);
  c.eta = detail::get_or(j, "eta", c.eta);
  c.t = detail::get_or(j, "t", c.t);
  if (j.contains("Delta")) c.Delta = detail::get_or(j, "Delta", 0.0);
  if (j.contains("estimator")) c.estimator = estimator_from_json(j.at("estimator"));
  c.c_prime = detail::get_or(j, "c_prime", c.c_prime);
  c.rho = detail::get_or(j, "rho", c.rho);
  c.eps = detail::get_or(j, "eps", c.eps);
  if (j.contains("eta1")) c.eta1 = detail::get_or(j, "eta1", 0.0);
  if (j.contains("eta2")) c.eta2 = detail::get_or(j, "eta2", 0.0);
  c.lambda_wd = detail::get_or(j, "lambda_wd", c.lambda_wd);
  c.w_init = detail::get_or(j, "w_init", c.w_init);
  c.v_init = detail::get_or(j, "v_init", c.v_init);
  c.seed = detail::get_or(j, "seed", c.seed);
  try {
    c.validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- checkpoints

inline json checkpoint_json(const ModelParams& p, const TrainingConfig& cfg, std::size_t examples_seen) {
  json arrays = json::object();
  if (const auto* t = std::get_if<TransformerParams>(&p)) {
    t->for_each([&](const std::string& name, const Matrix& m) { arrays[name] = detail::matrix_json(m); });
    return {{"kind", "transformer"}, {"config", to_json(cfg)}, {"model", to_json(ModelConfig{t->config})},
            {"seed", cfg.seed},      {"examples_seen", examples_seen}, {"arrays", arrays}};
  }
  const auto& m = std::get<MinimalParams>(p);
  arrays["W"] = detail::matrix_json(m.W);
  arrays["v"] = {{"shape", {m.v.size()}}, {"data", m.v}};
  return {{"kind", "minimal"}, {"config", to_json(cfg)}, {"seed", cfg.seed}, {"examples_seen", examples_seen},
          {"arrays", arrays}};
}

inline ModelParams params_from_checkpoint(const json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const auto& arrays = j.at("arrays");
    if (kind == "transformer") {
      const auto mc = model_from_json(j.at("model"));
      auto p = TransformerParams::zeros(std::get<TransformerConfig>(mc));
      p.for_each([&](const std::string& name, Matrix& m) {
        Matrix loaded = detail::matrix_from(arrays.at(name), name);
        if (loaded.rows != m.rows || loaded.cols != m.cols) throw ConfigError(name + ": shape mismatch");
        m = std::move(loaded);
      });
      return p;
    }
    if (kind == "minimal") {
      MinimalParams p{detail::matrix_from(arrays.at("W"), "W"), arrays.at("v").at("data").get<std::vector<double>>()};
      if (p.W.rows != p.W.cols) throw ConfigError("W must be square");
      return p;
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
  throw ConfigError("checkpoint kind must be transformer or minimal");
}

// ---------------------------------------------------------------- metrics CSV

inline constexpr const char* kMetricsHeader =
    "examples_seen,train_loss,eval_prior,kl_truth,kl_uniform,kl_unigram,kl_bigram,kl_ngram";
inline constexpr const char* kKlDirection =
    "kl_truth = KL(true next-token row || model); kl_<strategy> = KL(model || strategy); last position only";

namespace detail {
inline std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}
}  // namespace detail

/// '#'-prefixed JSON header block, the column header, then one row per eval
/// prior per record. Missing kl_ngram values are left empty.
inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRecord>& log, const json& header) {
  std::istringstream lines(header.dump(2));
  for (std::string line; std::getline(lines, line);) out << "# " << line << '\n';
  out << kMetricsHeader << '\n';
  for (const auto& r : log)
    for (const auto& m : r.per_prior) {
      out << r.examples_seen << ',' << detail::fmt_double(r.train_loss) << ',' << m.eval_prior << ','
          << detail::fmt_double(m.kl_truth) << ',' << detail::fmt_double(m.kl_uniform) << ','
          << detail::fmt_double(m.kl_unigram) << ',' << detail::fmt_double(m.kl_bigram) << ',';
      if (m.kl_ngram) out << detail::fmt_double(*m.kl_ngram);
      out << '\n';
    }
}

struct MetricsTable {
  json header;
  std::vector<MetricsRecord> log;
};

/// Inverse of write_metrics_csv; errors carry the 1-based line number.
inline MetricsTable read_metrics_csv(std::istream& in) {
  MetricsTable t;
  std::string line, header_text;
  std::size_t lineno = 0;
  bool seen_columns = false;
  auto fail = [&](const std::string& what) {
    throw ConfigError("metrics CSV line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (seen_columns) fail("comment after the column header");
      header_text += line.substr(line.size() > 1 && line[1] == ' ' ? 2 : 1) + '\n';
      continue;
    }
    if (!seen_columns) {
      if (line != kMetricsHeader) fail("unexpected column header");
      seen_columns = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) fail("expected 8 fields, found " + std::to_string(f.size()));
    auto num = [&](const std::string& s, const char* col) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) fail(std::string("trailing characters in ") + col);
        return v;
      } catch (const std::logic_error&) {
        fail(std::string("cannot parse ") + col + " '" + s + "'");
      }
      return 0.0;
    };
    std::size_t seen = 0;
    try {
      std::size_t used = 0;
      seen = std::stoull(f[0], &used);
      if (used != f[0].size()) fail("trailing characters in examples_seen");
    } catch (const std::logic_error&) {
      fail("cannot parse examples_seen '" + f[0] + "'");
    }
    PriorMetrics m{f[2], num(f[3], "kl_truth"), num(f[4], "kl_uniform"), num(f[5], "kl_unigram"),
                   num(f[6], "kl_bigram"), std::nullopt};
    if (!f[7].empty()) m.kl_ngram = num(f[7], "kl_ngram");
    const double loss = num(f[1], "train_loss");
    if (t.log.empty() || t.log.back().examples_seen != seen) {
      if (!t.log.empty() && seen < t.log.back().examples_seen) fail("examples_seen decreased");
      t.log.push_back({seen, loss, {}});
    }
    t.log.back().per_prior.push_back(std::move(m));
  }
  if (!seen_columns) throw ConfigError("metrics CSV has no column header");
  if (!header_text.empty()) {
    try {
      t.header = json::parse(header_text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("metrics CSV header block: ") + e.what());
    }
  }
  return t;
}

/// Plain numeric grid: '#' comment lines, then comma-separated rows.
inline void write_matrix_csv(std::ostream& out, const Matrix& m, const std::string& comment = {}) {
  if (!comment.empty()) out << "# " << comment << '\n';
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) out << (j ? "," : "") << detail::fmt_double(m(i, j));
    out << '\n';
  }
}

inline Matrix read_matrix_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> r;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        std::size_t used = 0;
        r.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw ConfigError("matrix CSV line " + std::to_string(lineno) + ": cannot parse '" + cell + "'");
      }
    }
    if (!rows.empty() && r.size() != rows[0].size())
      throw ConfigError("matrix CSV line " + std::to_string(lineno) + ": ragged row");
    rows.push_back(std::move(r));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = rows[i][j];
  return m;
}

// ---------------------------------------------------------------- episodes JSONL

struct EpisodeRecord {
  Episode episode;
  std::string prior;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

inline json episode_json(const EpisodeRecord& r) {
  json j{{"tokens", r.episode.tokens}, {"prior", r.prior}, {"seed", r.seed}, {"stream", r.stream}};
  if (const auto* T = std::get_if<TransitionMatrix>(&r.episode.source)) {
    json rows = json::array();
    for (std::size_t i = 0; i < T->k(); ++i) rows.push_back(std::vector<double>(T->row(i).begin(), T->row(i).end()));
    j["matrix"] = rows;
  } else {
    const auto& g = std::get<NGramTable>(r.episode.source);
    json rows = json::array();
    for (std::size_t i = 0; i < g.contexts(); ++i) rows.push_back(std::vector<double>(g.row(i).begin(), g.row(i).end()));
    j["matrix"] = rows;
    j["order"] = g.n;
  }
  return j;
}

/// One '#' header line followed by one JSON object per line. Values are
/// printed with round-trip precision.
inline void write_episodes(std::ostream& out, const std::vector<EpisodeRecord>& eps, const json& header) {
  out << "# " << header.dump() << '\n';
  for (const auto& r : eps) out << episode_json(r).dump() << '\n';
}

inline std::vector<EpisodeRecord> read_episodes(std::istream& in) {
  std::vector<EpisodeRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto j = json::parse(line);
      const auto rows = j.at("matrix").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw ConfigError("empty matrix");
      Matrix m(rows.size(), rows[0].size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != m.cols) throw ConfigError("ragged matrix");
        for (std::size_t c = 0; c < m.cols; ++c) m(i, c) = rows[i][c];
      }
      EpisodeRecord r;
      r.episode.tokens = j.at("tokens").get<std::vector<int>>();
      if (j.contains("order")) {
        r.episode.source = NGramTable{j.at("order").get<std::size_t>(), m.cols, std::move(m)};
      } else {
        r.episode.source = TransitionMatrix(std::move(m));
      }
      r.prior = j.at("prior").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.stream = j.at("stream").get<std::uint64_t>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError("episode file line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("episode file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- theory report

inline json constant_json(const ConstantValue& v, const std::string& estimator) {
  json j{{"name", v.name}, {"computed", v.value}, {"error_estimate", v.error_estimate}, {"estimator", estimator}};
  if (v.printed) {
    j["closed_form_value"] = *v.printed;
    j["paper_formula"] = v.printed_formula;
    j["abs_deviation"] = std::abs(v.value - *v.printed);
  } else {
    j["closed_form_value"] = nullptr;
  }
  return j;
}

inline json minimal_params_json(const MinimalParams& p) {
  return {{"W", detail::matrix_json(p.W)}, {"v", p.v}};
}

/// Every constant and theory op in one document.
inline json theory_report(const TheoryConfig& cfg, std::size_t curriculum_t = 200,
                          std::size_t curriculum_samples = 50000) {
  cfg.validate();
  json rep;
  rep["config"] = to_json(cfg);
  const Estimator gl = estimator::GaussLegendre{};
  json consts = json::array();
  for (auto k : {ConstantKind::DiagonalLeading, ConstantKind::OffDiagonalLeading, ConstantKind::VLeading,
                 ConstantKind::Step2First, ConstantKind::Step2SecondLambda, ConstantKind::Step2SecondAsym,
                 ConstantKind::Step2SecondTotal})
    consts.push_back(constant_json(prior_expectation({k}, gl), "gauss_legendre"));
  consts.push_back(constant_json(prior_expectation({ConstantKind::CurriculumDiagonal, 1, cfg.eps}, gl), "gauss_legendre"));
  for (double d : {1e-2, 1e-3, 1e-4})
    consts.push_back(constant_json(prior_expectation({ConstantKind::CorollaryDiagonal, 1, d}, gl), "gauss_legendre"));
  rep["constants"] = consts;

  json moments = json::array();
  for (int j = 1; j <= 8; ++j) {
    const auto v = prior_expectation({ConstantKind::Moment, j}, gl);
    moments.push_back({{"j", j}, {"value", v.value}, {"sign", v.value > 0 ? "+" : (v.value < 0 ? "-" : "0")}});
  }
  rep["moments"] = moments;

  const auto s2_1 = prior_expectation({ConstantKind::Step2First}, gl);
  const auto s2_2 = prior_expectation({ConstantKind::Step2SecondTotal}, gl);
  rep["step2_comparison"] = {{"j1_value", s2_1.value},
                             {"j2_computed", s2_2.value},
                             {"j2_closed_form_value", *s2_2.printed},
                             {"j2_exceeds_j1_computed", s2_2.value > s2_1.value},
                             {"j2_closed_form_exceeds_j1", *s2_2.printed > s2_1.value},
                             {"flagged", (*s2_2.printed > s2_1.value) != (s2_2.value > s2_1.value)}};

  const auto lead = step1_leading(gl);
  rep["step1_leading"] = {{"diagonal", lead.diagonal}, {"off_diagonal", lead.off_diagonal}, {"ratio", lead.ratio}};
  const auto s1 = step1_closed_form(cfg);
  rep["step1"] = {{"after", minimal_params_json(s1.after)}, {"increment", minimal_params_json(s1.increment)},
                  {"increment_se", minimal_params_json(s1.increment_se)}, {"evaluations", s1.evaluations}};
  TheoryConfig c2 = cfg;
  if (!(c2.rho >= c2.c_prime)) c2.rho = c2.c_prime + 0.08;
  const auto s2 = step2_closed_form(c2);
  rep["step2"] = {{"v_after", s2.v_after}, {"argmax", s2.argmax}, {"diag_term", s2.diag_term}};
  const auto cor = corollary_ab(cfg);
  json pts = json::array();
  for (const auto& p : cor.points)
    pts.push_back({{"cutoff", p.cutoff}, {"after", minimal_params_json(p.after)}, {"printed_diagonal", p.printed_diagonal}});
  rep["corollary"] = {{"points", pts}, {"printed_v", cor.printed_v}};

  TheoryConfig cc = cfg;
  cc.t = curriculum_t;
  cc.estimator = estimator::MonteCarlo{curriculum_samples};
  const auto cur = two_step_curriculum(cc);
  rep["curriculum"] = {{"t", cc.t},
                       {"eps", cc.eps},
                       {"argmax_v", cur.argmax_v},
                       {"off_on_ratio", cur.off_on_ratio},
                       {"cosine", cur.cosine},
                       {"passed", cur.passed()},
                       {"after", minimal_params_json(cur.after_step2)}};
  return rep;
}

}  // namespace icmc
