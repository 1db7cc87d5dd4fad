#include "ordprior/study.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#ifndef ORDPRIOR_VERSION
#define ORDPRIOR_VERSION "unknown"
#endif

namespace ordprior {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags keep the derived seeds of different purposes apart.
constexpr std::uint64_t kDataStream = 0x64617461;     // "data"
constexpr std::uint64_t kSamplerStream = 0x6e757473;  // "nuts"
constexpr std::uint64_t kBootStream = 0x626f6f74;     // "boot"

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

long long parse_integer(std::string_view text, std::string_view what) {
  const std::string t = trim(text);
  long long value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument(std::string(what) + ": '" + t + "' is not an integer");
  }
  return value;
}

double parse_real(std::string_view text, std::string_view what) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(t, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (t.empty() || used != t.size()) {
    throw std::invalid_argument(std::string(what) + ": '" + t + "' is not a number");
  }
  return value;
}

// JSON numbers that may be NaN are stored as null.
json num(double x) { return std::isnan(x) ? json(nullptr) : json(x); }
double num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!obj.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (const auto& item : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw std::invalid_argument("unknown config key '" + std::string(where) +
                                  (where.empty() ? "" : ".") + item.key() + "'");
    }
  }
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

double nan_max(double a, double b) {
  if (std::isnan(a)) return b;
  if (std::isnan(b)) return a;
  return std::max(a, b);
}

double nan_min(double a, double b) {
  if (std::isnan(a)) return b;
  if (std::isnan(b)) return a;
  return std::min(a, b);
}

bool same_or(double log_or, double odds_ratio) { return std::abs(std::exp(log_or) - odds_ratio) < 1e-9; }

}  // namespace

// ---------------------------------------------------------------------------
// Filter and prior grid

bool ScenarioFilter::matches(const Scenario& scn) const {
  auto accepts = [](const auto& levels, auto pred) {
    return levels.empty() || std::any_of(levels.begin(), levels.end(), pred);
  };
  return accepts(categories, [&](int J) { return J == scn.categories; }) &&
         accepts(shapes, [&](ShapeKind s) { return s == scn.shape.kind; }) &&
         accepts(designs, [&](DesignKind d) { return d == scn.design; }) &&
         accepts(odds_ratios, [&](double o) { return same_or(scn.true_log_or, o); }) &&
         accepts(sample_sizes, [&](int n) { return n == scn.n_obs; });
}

bool ScenarioFilter::empty() const {
  return categories.empty() && shapes.empty() && designs.empty() && odds_ratios.empty() &&
         sample_sizes.empty();
}

std::string ScenarioFilter::describe() const {
  std::vector<std::string> parts;
  auto add = [&](const char* key, const auto& levels, auto fmt) {
    if (levels.empty()) return;
    std::string s = std::string(key) + "=";
    for (std::size_t i = 0; i < levels.size(); ++i) s += (i ? "," : "") + fmt(levels[i]);
    parts.push_back(s);
  };
  add("J", categories, [](int v) { return std::to_string(v); });
  add("shape", shapes, [](ShapeKind v) { return to_string(v); });
  add("design", designs, [](DesignKind v) { return to_string(v); });
  add("or", odds_ratios, [](double v) { return format_number(v); });
  add("n", sample_sizes, [](int v) { return std::to_string(v); });
  if (parts.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? ";" : "") + parts[i];
  return out;
}

void ScenarioFilter::parse(std::string_view text) {
  for (const std::string& clause : split(text, ';')) {
    const std::string c = trim(clause);
    if (c.empty()) continue;
    const auto eq = c.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("filter clause '" + c + "' has no '='");
    const std::string key = trim(c.substr(0, eq));
    const std::vector<std::string> values = split(c.substr(eq + 1), ',');
    if (key == "J") {
      categories.clear();
      for (const auto& v : values) categories.push_back(static_cast<int>(parse_integer(v, "filter J")));
    } else if (key == "shape") {
      shapes.clear();
      for (const auto& v : values) shapes.push_back(parse_shape(trim(v)));
    } else if (key == "design") {
      designs.clear();
      for (const auto& v : values) designs.push_back(parse_design(trim(v)));
    } else if (key == "or") {
      odds_ratios.clear();
      for (const auto& v : values) odds_ratios.push_back(parse_real(v, "filter or"));
    } else if (key == "n") {
      sample_sizes.clear();
      for (const auto& v : values) sample_sizes.push_back(static_cast<int>(parse_integer(v, "filter n")));
    } else {
      throw std::invalid_argument("unknown filter field '" + key + "' (expected J, shape, design, or, n)");
    }
  }
}

std::vector<PriorPair> PriorGrid::pairs() const {
  std::vector<std::pair<std::string, std::string>> names;
  if (full_cross) {
    for (const auto& b : beta) {
      for (const auto& c : cut) names.emplace_back(b, c);
    }
  } else {
    for (const auto& sweep : sweeps) {
      if (sweep == "A") {
        for (const auto& b : beta) names.emplace_back(b, sweep_a_cut);
      } else if (sweep == "B") {
        for (const auto& c : cut) names.emplace_back(sweep_b_beta, c);
      } else {
        throw std::invalid_argument("unknown prior sweep '" + sweep + "' (expected A or B)");
      }
    }
  }
  std::vector<PriorPair> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [b, c] : names) {
    if (!seen.insert({b, c}).second) continue;
    PriorPair p{beta_prior_by_name(b), cutpoint_prior_by_name(c)};
    p.cut.anchor = anchor;
    out.push_back(std::move(p));
  }
  if (out.empty()) throw std::invalid_argument("prior grid is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Config

void StudyConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  sampler.validate();
  design.validate();
  if (replicate_schedule.empty()) throw std::invalid_argument("replicate_schedule is empty");
  for (std::size_t i = 0; i < replicate_schedule.size(); ++i) {
    if (replicate_schedule[i] < 2 || (i > 0 && replicate_schedule[i] <= replicate_schedule[i - 1])) {
      throw std::invalid_argument("replicate_schedule must be increasing with every entry >= 2");
    }
  }
  if (!(target_mcse > 0.0)) throw std::invalid_argument("target_mcse must be > 0");
  if (n_boot < 200) throw std::invalid_argument("n_boot must be >= 200");
  if (grid.odds_ratios.empty() || grid.sample_sizes.empty() || grid.categories.empty()) {
    throw std::invalid_argument("grid levels must not be empty");
  }
  for (double o : grid.odds_ratios) {
    if (!(o > 0.0)) throw std::invalid_argument("grid odds ratios must be > 0");
  }
  for (int n : grid.sample_sizes) {
    if (n < 2) throw std::invalid_argument("grid sample sizes must be >= 2");
  }
  for (int J : grid.categories) {
    if (J < 2) throw std::invalid_argument("grid category counts must be >= 2");
  }
  priors.pairs();
}

void apply_desk_preset(StudyConfig& config) {
  config.replicate_schedule = {200};
  config.sampler.chains = 2;
  config.sampler.warmup_iters = 1000;
  config.sampler.sampling_iters = 1000;
  if (config.filter.categories.empty()) config.filter.categories = {4, 10};
}

StudyConfig config_from_json(const json& input) {
  const json& j = input.contains("config") && input.contains("config_hash") ? input.at("config") : input;
  check_keys(j,
             {"master_seed", "output_dir", "workers", "replicate_schedule", "target_mcse", "exclude_divergent",
              "relative_bias", "n_boot", "priors", "grid", "filter", "sampler", "design"},
             "");
  StudyConfig c;
  read_if(j, "master_seed", c.master_seed);
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  read_if(j, "workers", c.workers);
  read_if(j, "replicate_schedule", c.replicate_schedule);
  read_if(j, "target_mcse", c.target_mcse);
  read_if(j, "exclude_divergent", c.exclude_divergent);
  if (j.contains("relative_bias")) c.relative_bias = parse_relative_bias(j.at("relative_bias").get<std::string>());
  read_if(j, "n_boot", c.n_boot);

  if (j.contains("priors")) {
    const json& p = j.at("priors");
    check_keys(p, {"sweeps", "full_cross", "beta", "cut", "sweep_a_cut", "sweep_b_beta", "cut_anchor"}, "priors");
    read_if(p, "sweeps", c.priors.sweeps);
    read_if(p, "full_cross", c.priors.full_cross);
    read_if(p, "beta", c.priors.beta);
    read_if(p, "cut", c.priors.cut);
    read_if(p, "sweep_a_cut", c.priors.sweep_a_cut);
    read_if(p, "sweep_b_beta", c.priors.sweep_b_beta);
    if (p.contains("cut_anchor")) c.priors.anchor = parse_anchor(p.at("cut_anchor").get<std::string>());
  }
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, {"odds_ratios", "sample_sizes", "categories", "skewed", "u_shaped"}, "grid");
    read_if(g, "odds_ratios", c.grid.odds_ratios);
    read_if(g, "sample_sizes", c.grid.sample_sizes);
    read_if(g, "categories", c.grid.categories);
    auto shape = [&](const char* key, ControlShape& out) {
      if (!g.contains(key)) return;
      const auto ab = g.at(key).get<std::vector<double>>();
      if (ab.size() != 2 || !(ab[0] > 0.0) || !(ab[1] > 0.0)) {
        throw std::invalid_argument(std::string("grid.") + key + " must be two positive Beta parameters");
      }
      out.beta_a = ab[0];
      out.beta_b = ab[1];
    };
    shape("skewed", c.grid.skewed);
    shape("u_shaped", c.grid.u_shaped);
  }
  if (j.contains("filter")) {
    const json& f = j.at("filter");
    check_keys(f, {"J", "shape", "design", "or", "n"}, "filter");
    read_if(f, "J", c.filter.categories);
    read_if(f, "or", c.filter.odds_ratios);
    read_if(f, "n", c.filter.sample_sizes);
    if (f.contains("shape")) {
      for (const auto& s : f.at("shape")) c.filter.shapes.push_back(parse_shape(s.get<std::string>()));
    }
    if (f.contains("design")) {
      for (const auto& s : f.at("design")) c.filter.designs.push_back(parse_design(s.get<std::string>()));
    }
  }
  if (j.contains("sampler")) {
    const json& s = j.at("sampler");
    check_keys(s,
               {"chains", "warmup_iters", "sampling_iters", "target_accept", "max_tree_depth",
                "divergence_energy_threshold", "parallel_chains"},
               "sampler");
    read_if(s, "chains", c.sampler.chains);
    read_if(s, "warmup_iters", c.sampler.warmup_iters);
    read_if(s, "sampling_iters", c.sampler.sampling_iters);
    read_if(s, "target_accept", c.sampler.target_accept);
    read_if(s, "max_tree_depth", c.sampler.max_tree_depth);
    read_if(s, "divergence_energy_threshold", c.sampler.divergence_energy_threshold);
    read_if(s, "parallel_chains", c.sampler.parallel_chains);
  }
  if (j.contains("design")) {
    const json& d = j.at("design");
    check_keys(d, {"interim_fraction", "interim_superiority_threshold", "final_superiority_threshold"}, "design");
    read_if(d, "interim_fraction", c.design.interim_fraction);
    read_if(d, "interim_superiority_threshold", c.design.interim_superiority_threshold);
    read_if(d, "final_superiority_threshold", c.design.final_superiority_threshold);
  }
  return c;
}

json config_to_json(const StudyConfig& c) {
  json filter = json::object();
  filter["J"] = c.filter.categories;
  filter["or"] = c.filter.odds_ratios;
  filter["n"] = c.filter.sample_sizes;
  filter["shape"] = json::array();
  for (ShapeKind s : c.filter.shapes) filter["shape"].push_back(to_string(s));
  filter["design"] = json::array();
  for (DesignKind d : c.filter.designs) filter["design"].push_back(to_string(d));

  return json{
      {"master_seed", c.master_seed},
      {"output_dir", c.output_dir.string()},
      {"workers", c.workers},
      {"replicate_schedule", c.replicate_schedule},
      {"target_mcse", c.target_mcse},
      {"exclude_divergent", c.exclude_divergent},
      {"relative_bias", to_string(c.relative_bias)},
      {"n_boot", c.n_boot},
      {"priors",
       {{"sweeps", c.priors.sweeps},
        {"full_cross", c.priors.full_cross},
        {"beta", c.priors.beta},
        {"cut", c.priors.cut},
        {"sweep_a_cut", c.priors.sweep_a_cut},
        {"sweep_b_beta", c.priors.sweep_b_beta},
        {"cut_anchor", to_string(c.priors.anchor)}}},
      {"grid",
       {{"odds_ratios", c.grid.odds_ratios},
        {"sample_sizes", c.grid.sample_sizes},
        {"categories", c.grid.categories},
        {"skewed", {c.grid.skewed.beta_a, c.grid.skewed.beta_b}},
        {"u_shaped", {c.grid.u_shaped.beta_a, c.grid.u_shaped.beta_b}}}},
      {"filter", filter},
      {"sampler",
       {{"chains", c.sampler.chains},
        {"warmup_iters", c.sampler.warmup_iters},
        {"sampling_iters", c.sampler.sampling_iters},
        {"target_accept", c.sampler.target_accept},
        {"max_tree_depth", c.sampler.max_tree_depth},
        {"divergence_energy_threshold", c.sampler.divergence_energy_threshold},
        {"parallel_chains", c.sampler.parallel_chains}}},
      {"design",
       {{"interim_fraction", c.design.interim_fraction},
        {"interim_superiority_threshold", c.design.interim_superiority_threshold},
        {"final_superiority_threshold", c.design.final_superiority_threshold}}},
  };
}

StudyConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config file " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const StudyConfig& config) {
  json j = config_to_json(config);
  j.erase("workers");
  j.erase("output_dir");
  j["sampler"].erase("parallel_chains");
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Cells and seeds

std::vector<Cell> build_cells(const StudyConfig& config) {
  const std::vector<PriorPair> priors = config.priors.pairs();
  std::vector<Cell> cells;
  for (const Scenario& scn : scenario_grid(config.grid)) {
    if (!config.filter.matches(scn)) continue;
    for (const PriorPair& prior : priors) {
      cells.push_back(Cell{static_cast<int>(cells.size()) + 1, scn, prior});
    }
  }
  if (cells.empty()) {
    throw std::invalid_argument("scenario filter matched no scenarios: " + config.filter.describe());
  }
  return cells;
}

std::uint64_t prior_key(const PriorPair& prior) {
  return fnv1a(prior.beta.name + "|" + prior.cut.name + "|" + to_string(prior.cut.anchor));
}

std::uint64_t data_seed(std::uint64_t master, const Scenario& scn, int replicate) {
  return derive_seed({master, kDataStream, static_cast<std::uint64_t>(scn.id), static_cast<std::uint64_t>(replicate)});
}

std::uint64_t sampler_seed(std::uint64_t master, const Scenario& scn, const PriorPair& prior, int replicate) {
  return derive_seed({master, kSamplerStream, static_cast<std::uint64_t>(scn.id), prior_key(prior),
                      static_cast<std::uint64_t>(replicate)});
}

// ---------------------------------------------------------------------------
// Running cells

namespace {

ReplicateRecord run_one(const StudyConfig& config, const Cell& cell, int replicate) {
  Rng rng(data_seed(config.master_seed, cell.scenario, replicate));
  SamplerConfig sampler = config.sampler;
  sampler.seed = sampler_seed(config.master_seed, cell.scenario, cell.prior, replicate);
  ReplicateRecord rec;
  try {
    rec.result = run_replicate(cell.scenario, cell.prior.beta, cell.prior.cut, sampler, config.design, rng);
  } catch (const std::exception& e) {
    throw std::runtime_error("cell " + std::to_string(cell.cell_id) + " (" + cell.prior.beta.name + ", " +
                             cell.prior.cut.name + "), replicate " + std::to_string(replicate) + ": " + e.what());
  }
  const Diagnostics& d = rec.result.diagnostics;
  rec.divergences = d.divergences_total;
  rec.max_rhat = d.max_rhat();
  rec.min_ess_bulk = d.min_ess_bulk();
  rec.min_ess_tail = d.min_ess_tail();
  return rec;
}

// Runs replicates [begin, end) on `workers` threads; output is in index order.
std::vector<ReplicateRecord> run_range(const StudyConfig& config, const Cell& cell, int begin, int end) {
  const auto count = static_cast<std::size_t>(end - begin);
  std::vector<ReplicateRecord> out(count);
  const int threads = std::min<int>(config.workers, static_cast<int>(count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) out[i] = run_one(config, cell, begin + static_cast<int>(i));
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            out[i] = run_one(config, cell, begin + static_cast<int>(i));
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            next = count;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

CellResult run_cell(const StudyConfig& config, const Cell& cell) {
  CellResult out;
  out.cell = cell;
  std::vector<ReplicateRecord> records;
  const ReplicateBatch batch = [&](int begin, int end) {
    std::vector<ReplicateRecord> more = run_range(config, cell, begin, end);
    records.insert(records.end(), more.begin(), more.end());
    std::vector<ReplicateResult> results;
    for (const auto& r : more) results.push_back(r.result);
    return results;
  };
  SummaryOptions options;
  options.exclude_divergent = config.exclude_divergent;
  options.relative_bias = config.relative_bias;
  options.n_boot = config.n_boot;
  options.seed = derive_seed({config.master_seed, kBootStream, static_cast<std::uint64_t>(cell.scenario.id),
                              prior_key(cell.prior)});
  const EscalationResult esc =
      escalate_replicates(batch, cell.scenario.true_log_or, config.replicate_schedule, config.target_mcse, options);
  out.summary = esc.summary;
  out.target_met = esc.target_met;
  out.missed = esc.missed;
  out.replicates = std::move(records);
  out.max_rhat = kNaN;
  out.min_ess_bulk = kNaN;
  out.min_ess_tail = kNaN;
  for (const ReplicateRecord& r : out.replicates) {
    if (config.exclude_divergent && r.result.divergent_final) continue;
    out.max_rhat = nan_max(out.max_rhat, r.max_rhat);
    out.min_ess_bulk = nan_min(out.min_ess_bulk, r.min_ess_bulk);
    out.min_ess_tail = nan_min(out.min_ess_tail, r.min_ess_tail);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Journal records

namespace {

json summary_to_json(const ScenarioSummary& s) {
  auto arr = [](const std::array<double, 7>& a) {
    json out = json::array();
    for (double x : a) out.push_back(num(x));
    return out;
  };
  return json{{"bias", num(s.bias)},
              {"relative_bias_or", num(s.relative_bias_or)},
              {"coverage", num(s.coverage)},
              {"mse", num(s.mse)},
              {"mean_p_superior", num(s.mean_p_superior)},
              {"prop_superior", num(s.prop_superior)},
              {"prop_stopped_early", num(s.prop_stopped_early)},
              {"mcse", arr(s.mcse)},
              {"mcse_closed", arr(s.mcse_closed)},
              {"mcse_jab", arr(s.mcse_jab)},
              {"n_sim_used", s.n_sim_used},
              {"n_divergent_final", s.n_divergent_final}};
}

ScenarioSummary summary_from_json(const json& j) {
  ScenarioSummary s;
  s.bias = num(j.at("bias"));
  s.relative_bias_or = num(j.at("relative_bias_or"));
  s.coverage = num(j.at("coverage"));
  s.mse = num(j.at("mse"));
  s.mean_p_superior = num(j.at("mean_p_superior"));
  s.prop_superior = num(j.at("prop_superior"));
  s.prop_stopped_early = num(j.at("prop_stopped_early"));
  for (std::size_t k = 0; k < 7; ++k) {
    s.mcse[k] = num(j.at("mcse").at(k));
    s.mcse_closed[k] = num(j.at("mcse_closed").at(k));
    s.mcse_jab[k] = num(j.at("mcse_jab").at(k));
  }
  s.n_sim_used = j.at("n_sim_used").get<int>();
  s.n_divergent_final = j.at("n_divergent_final").get<int>();
  return s;
}

// Compact positional layout; see replicate_columns for the order.
json replicate_to_json(const ReplicateRecord& r) {
  const ReplicateResult& x = r.result;
  return json::array({x.stopped_early, x.declared_superior, x.analysis_n, num(x.beta_median), num(x.ci_low),
                      num(x.ci_high), num(x.p_superior), x.divergent_final, x.escalations, r.divergences,
                      num(r.max_rhat), num(r.min_ess_bulk), num(r.min_ess_tail)});
}

ReplicateRecord replicate_from_json(const json& j) {
  ReplicateRecord r;
  ReplicateResult& x = r.result;
  x.stopped_early = j.at(0).get<bool>();
  x.declared_superior = j.at(1).get<bool>();
  x.analysis_n = j.at(2).get<int>();
  x.beta_median = num(j.at(3));
  x.ci_low = num(j.at(4));
  x.ci_high = num(j.at(5));
  x.p_superior = num(j.at(6));
  x.divergent_final = j.at(7).get<bool>();
  x.escalations = j.at(8).get<int>();
  r.divergences = j.at(9).get<int>();
  r.max_rhat = num(j.at(10));
  r.min_ess_bulk = num(j.at(11));
  r.min_ess_tail = num(j.at(12));
  return r;
}

const std::vector<std::string>& replicate_columns() {
  static const std::vector<std::string> cols{
      "cell_id",      "scenario_id",  "beta_prior",     "cut_prior",   "replicate",    "stopped_early",
      "declared_superior", "analysis_n", "beta_median", "ci_low",     "ci_high",      "p_superior",
      "divergent_final", "escalations", "divergences",  "max_rhat",    "min_ess_bulk", "min_ess_tail"};
  return cols;
}

json cell_to_json(const CellResult& r) {
  json missed = json::array();
  for (Measure m : r.missed) missed.push_back(to_string(m));
  json reps = json::array();
  for (const auto& rep : r.replicates) reps.push_back(replicate_to_json(rep));
  return json{{"cell_id", r.cell.cell_id},
              {"scenario_id", r.cell.scenario.id},
              {"beta_prior", r.cell.prior.beta.name},
              {"cut_prior", r.cell.prior.cut.name},
              {"summary", summary_to_json(r.summary)},
              {"target_met", r.target_met},
              {"missed", missed},
              {"max_rhat", num(r.max_rhat)},
              {"min_ess_bulk", num(r.min_ess_bulk)},
              {"min_ess_tail", num(r.min_ess_tail)},
              {"replicates", reps}};
}

CellResult cell_from_json(const json& j, const Cell& cell) {
  CellResult r;
  r.cell = cell;
  r.summary = summary_from_json(j.at("summary"));
  r.target_met = j.at("target_met").get<bool>();
  for (const auto& m : j.at("missed")) {
    for (Measure candidate : kAllMeasures) {
      if (to_string(candidate) == m.get<std::string>()) r.missed.push_back(candidate);
    }
  }
  r.max_rhat = num(j.at("max_rhat"));
  r.min_ess_bulk = num(j.at("min_ess_bulk"));
  r.min_ess_tail = num(j.at("min_ess_tail"));
  for (const auto& rep : j.at("replicates")) r.replicates.push_back(replicate_from_json(rep));
  return r;
}

// Complete journal records keyed by cell id. A partial last line (an
// interrupted write) is dropped.
std::map<int, json> read_journal(const fs::path& path) {
  std::map<int, json> records;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      const int id = j.at("cell_id").get<int>();
      records[id] = std::move(j);
    } catch (const std::exception&) {
      break;
    }
  }
  return records;
}

void write_text_atomically(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> results_row(const CellResult& r) {
  const Scenario& s = r.cell.scenario;
  const ScenarioSummary& m = r.summary;
  const bool has_beta = s.shape.kind != ShapeKind::Uniform;
  auto f = format_number;
  auto mc = [&](Measure x) { return f(m.mcse_of(x)); };
  return {std::to_string(s.id),
          to_string(s.design),
          std::to_string(s.categories),
          to_string(s.shape.kind),
          has_beta ? f(s.shape.beta_a) : "NA",
          has_beta ? f(s.shape.beta_b) : "NA",
          f(std::exp(s.true_log_or)),
          std::to_string(s.n_obs),
          r.cell.prior.beta.name,
          r.cell.prior.cut.name,
          std::to_string(m.n_sim_used),
          f(m.bias),
          mc(Measure::Bias),
          f(m.relative_bias_or),
          mc(Measure::RelativeBias),
          f(m.coverage),
          mc(Measure::Coverage),
          f(m.mse),
          mc(Measure::Mse),
          f(m.mean_p_superior),
          f(m.prop_superior),
          mc(Measure::PropSuperior),
          f(m.prop_stopped_early),
          std::to_string(m.n_divergent_final),
          f(r.max_rhat),
          f(r.min_ess_bulk),
          f(r.min_ess_tail)};
}

json manifest_json(const StudyConfig& config, const std::vector<Cell>& cells) {
  json scenarios = json::array();
  int last = -1;
  for (const Cell& c : cells) {
    const Scenario& s = c.scenario;
    if (s.id == last) continue;
    last = s.id;
    scenarios.push_back({{"scenario_id", s.id},
                         {"design", to_string(s.design)},
                         {"J", s.categories},
                         {"shape", to_string(s.shape.kind)},
                         {"beta_a", s.shape.beta_a},
                         {"beta_b", s.shape.beta_b},
                         {"true_log_or", s.true_log_or},
                         {"n_obs", s.n_obs},
                         {"control_probs", s.control_probs.values()},
                         {"treatment_probs", s.treatment_probs.values()}});
  }
  json priors = json::array();
  for (const PriorPair& p : config.priors.pairs()) {
    priors.push_back({{"beta_prior", p.beta.name},
                      {"cut_prior", p.cut.name},
                      {"cut_anchor", to_string(resolve_anchor(p.cut, p.beta))},
                      {"prior_key", hex64(prior_key(p))}});
  }
  return json{{"software", "ordprior"},
              {"version", ORDPRIOR_VERSION},
              {"config_hash", config_hash(config)},
              {"config", config_to_json(config)},
              {"cells", cells.size()},
              {"prior_pairs", priors},
              {"scenarios", scenarios},
              {"seeding",
               {{"data", "derive_seed(master_seed, 'data', scenario_id, replicate)"},
                {"sampler", "derive_seed(master_seed, 'nuts', scenario_id, prior_key, replicate)"},
                {"bootstrap", "derive_seed(master_seed, 'boot', scenario_id, prior_key)"}}},
              {"conventions",
               {{"cutpoints", "logit P(Y >= j) = alpha_j + beta * x, alpha decreasing"},
                {"r2_x_variance", "centered: p (1 - p) of the treatment indicator"},
                {"credible_interval", "equal-tailed 2.5% / 97.5%"},
                {"point_estimate", "posterior median"}}},
              {"measure_units",
               {{"bias", "log-OR"}, {"mse", "log-OR squared"}, {"rel_bias_pct", "percent of true OR"}}}};
}

}  // namespace

const std::vector<std::string>& results_columns() {
  static const std::vector<std::string> cols{
      "scenario_id", "design",           "J",                "shape",          "beta_a",
      "beta_b",      "true_or",          "n_obs",            "beta_prior",     "cut_prior",
      "n_sim_used",  "bias",             "bias_mcse",        "rel_bias_pct",   "rel_bias_mcse",
      "coverage",    "coverage_mcse",    "mse",              "mse_mcse",       "mean_p_superior",
      "prop_superior", "prop_superior_mcse", "prop_stopped_early", "n_divergent_final", "max_rhat",
      "min_ess_bulk", "min_ess_tail"};
  return cols;
}

int run_study(const StudyConfig& config, const StudyOptions& options) {
  config.validate();
  const std::vector<Cell> cells = build_cells(config);
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  const fs::path manifest_path = dir / "manifest.json";
  const fs::path journal_path = dir / "journal.jsonl";
  const std::string hash = config_hash(config);

  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    json existing;
    try {
      existing = json::parse(in);
    } catch (const std::exception&) {
      throw std::runtime_error("existing manifest " + manifest_path.string() + " is unreadable; refusing to overwrite");
    }
    const std::string old_hash = existing.value("config_hash", std::string());
    if (old_hash != hash) {
      throw std::runtime_error("manifest " + manifest_path.string() + " has config hash " + old_hash +
                               " but this run's is " + hash + "; refusing to overwrite");
    }
  }

  std::map<int, json> done;
  if (options.resume) done = read_journal(journal_path);
  {
    // rewrite the journal without any partial trailing record
    std::string text;
    for (const auto& [id, rec] : done) text += rec.dump() + "\n";
    write_text_atomically(journal_path, text);
  }
  write_text_atomically(manifest_path, manifest_json(config, cells).dump(2) + "\n");

  int computed = 0;
  {
    std::ofstream journal(journal_path, std::ios::app | std::ios::binary);
    if (!journal) throw std::runtime_error("cannot open " + journal_path.string());
    for (const Cell& cell : cells) {
      if (done.count(cell.cell_id)) continue;
      const CellResult result = run_cell(config, cell);
      json rec = cell_to_json(result);
      const std::string line = rec.dump() + "\n";
      journal.write(line.data(), static_cast<std::streamsize>(line.size()));
      journal.flush();
      done[cell.cell_id] = std::move(rec);
      ++computed;
      if (options.log) {
        *options.log << "cell " << cell.cell_id << "/" << cells.size() << " scenario " << cell.scenario.id << " "
                     << cell.prior.beta.name << " + " << cell.prior.cut.name << ": n_sim "
                     << result.summary.n_sim_used;
        if (!result.target_met) {
          *options.log << ", MCSE target missed for";
          for (Measure m : result.missed) *options.log << " " << to_string(m);
        }
        *options.log << "\n";
      }
    }
  }

  CsvTable results{results_columns(), {}};
  CsvTable reps{replicate_columns(), {}};
  for (const Cell& cell : cells) {
    const CellResult r = cell_from_json(done.at(cell.cell_id), cell);
    results.rows.push_back(results_row(r));
    for (std::size_t i = 0; i < r.replicates.size(); ++i) {
      const ReplicateRecord& x = r.replicates[i];
      const ReplicateResult& y = x.result;
      reps.rows.push_back({std::to_string(cell.cell_id), std::to_string(cell.scenario.id), cell.prior.beta.name,
                           cell.prior.cut.name, std::to_string(i), std::to_string(y.stopped_early ? 1 : 0),
                           std::to_string(y.declared_superior ? 1 : 0), std::to_string(y.analysis_n),
                           format_number(y.beta_median), format_number(y.ci_low), format_number(y.ci_high),
                           format_number(y.p_superior), std::to_string(y.divergent_final ? 1 : 0),
                           std::to_string(y.escalations), std::to_string(x.divergences),
                           format_number(x.max_rhat), format_number(x.min_ess_bulk),
                           format_number(x.min_ess_tail)});
    }
  }
  std::ostringstream a;
  write_csv(a, results);
  write_text_atomically(dir / "results.csv", a.str());
  std::ostringstream b;
  write_csv(b, reps);
  write_text_atomically(dir / "replicates.csv", b.str());
  return computed;
}

// ---------------------------------------------------------------------------
// CSV and plot data

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::invalid_argument("missing column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - header.begin());
}

CsvTable read_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields = split(line, ',');
    if (first) {
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw std::invalid_argument("CSV line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                  " fields, expected " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  if (first) throw std::invalid_argument("CSV input has no header");
  return t;
}

CsvTable read_csv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_csv(in);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  auto line = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << fields[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& row : table.rows) line(row);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

namespace {

struct MeasureColumns {
  const char* value;
  const char* mcse;  // nullptr when the results table has no MCSE column
};

const std::vector<MeasureColumns>& measure_columns() {
  static const std::vector<MeasureColumns> cols{
      {"bias", "bias_mcse"},      {"rel_bias_pct", "rel_bias_mcse"},          {"coverage", "coverage_mcse"},
      {"mse", "mse_mcse"},        {"mean_p_superior", nullptr},               {"prop_superior", "prop_superior_mcse"},
      {"prop_stopped_early", nullptr}};
  return cols;
}

bool is_measure_column(const std::string& name) {
  for (const auto& m : measure_columns()) {
    if (name == m.value || (m.mcse && name == m.mcse)) return true;
  }
  return false;
}

}  // namespace

CsvTable plot_data(const CsvTable& results) {
  for (const std::string& c : results_columns()) results.column(c);
  std::vector<std::size_t> keys;
  CsvTable out;
  for (std::size_t i = 0; i < results.header.size(); ++i) {
    if (is_measure_column(results.header[i])) continue;
    keys.push_back(i);
    out.header.push_back(results.header[i]);
  }
  out.header.insert(out.header.end(), {"measure", "value", "mcse"});
  for (const auto& row : results.rows) {
    for (const auto& m : measure_columns()) {
      std::vector<std::string> r;
      for (std::size_t k : keys) r.push_back(row[k]);
      r.push_back(m.value);
      r.push_back(row[results.column(m.value)]);
      r.push_back(m.mcse ? row[results.column(m.mcse)] : "");
      out.rows.push_back(std::move(r));
    }
  }
  return out;
}

CsvTable pivot_plot_data(const CsvTable& long_table) {
  const std::size_t measure_col = long_table.column("measure");
  const std::size_t value_col = long_table.column("value");
  const std::size_t mcse_col = long_table.column("mcse");
  std::vector<std::size_t> keys;
  for (std::size_t i = 0; i < long_table.header.size(); ++i) {
    if (i != measure_col && i != value_col && i != mcse_col) keys.push_back(i);
  }
  std::vector<std::vector<std::string>> key_order;
  std::map<std::vector<std::string>, std::map<std::string, std::string>> cells;
  for (const auto& row : long_table.rows) {
    std::vector<std::string> key;
    for (std::size_t k : keys) key.push_back(row[k]);
    auto [it, inserted] = cells.try_emplace(key);
    if (inserted) key_order.push_back(key);
    const std::string& measure = row[measure_col];
    const auto spec = std::find_if(measure_columns().begin(), measure_columns().end(),
                                   [&](const MeasureColumns& m) { return measure == m.value; });
    if (spec == measure_columns().end()) throw std::invalid_argument("unknown measure '" + measure + "'");
    it->second[spec->value] = row[value_col];
    if (spec->mcse) it->second[spec->mcse] = row[mcse_col];
  }
  CsvTable out;
  out.header = results_columns();
  for (const auto& key : key_order) {
    const auto& measures = cells.at(key);
    std::vector<std::string> row;
    for (const std::string& col : out.header) {
      const auto pos = std::find_if(keys.begin(), keys.end(), [&](std::size_t k) { return long_table.header[k] == col; });
      if (pos != keys.end()) {
        row.push_back(key[static_cast<std::size_t>(pos - keys.begin())]);
        continue;
      }
      const auto m = measures.find(col);
      if (m == measures.end()) throw std::invalid_argument("long table lacks values for column '" + col + "'");
      row.push_back(m->second);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-dataset fitting

TrialData read_fit_data(std::istream& in, std::optional<int> categories) {
  const CsvTable t = read_csv(in);
  const std::size_t arm_col = t.column("arm");
  const std::size_t cat_col = t.column("category");
  std::vector<std::pair<int, int>> rows;
  int max_category = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string where = "row " + std::to_string(i + 1);
    const long long arm = parse_integer(t.rows[i][arm_col], where + " arm");
    const long long cat = parse_integer(t.rows[i][cat_col], where + " category");
    if (arm != 0 && arm != 1) throw std::invalid_argument(where + ": arm must be 0 or 1");
    if (cat < 1) throw std::invalid_argument(where + ": category must be >= 1");
    if (categories && cat > *categories) {
      throw std::invalid_argument(where + ": category " + std::to_string(cat) + " exceeds J = " +
                                  std::to_string(*categories));
    }
    max_category = std::max(max_category, static_cast<int>(cat));
    rows.emplace_back(static_cast<int>(arm), static_cast<int>(cat));
  }
  const int J = categories.value_or(max_category);
  if (J < 2) throw std::invalid_argument("fit data needs at least 2 categories");
  TrialData data(J);
  for (const auto& [arm, cat] : rows) data.add(cat - 1, arm == 1 ? Arm::Intervention : Arm::Control);
  if (data.arm_total(Arm::Control) == 0 || data.arm_total(Arm::Intervention) == 0) {
    throw std::invalid_argument("fit data has an empty arm");
  }
  int occupied = 0;
  for (int j = 0; j < J; ++j) {
    if (data.count(j, Arm::Control) + data.count(j, Arm::Intervention) > 0) ++occupied;
  }
  if (occupied < 2) throw std::invalid_argument("fit data has a single occupied category");
  return data;
}

std::vector<PriorPair> parse_prior_list(std::string_view text) {
  const auto& betas = beta_prior_names();
  const auto& cuts = cutpoint_prior_names();
  auto is_beta = [&](const std::string& s) { return std::find(betas.begin(), betas.end(), s) != betas.end(); };
  auto is_cut = [&](const std::string& s) { return std::find(cuts.begin(), cuts.end(), s) != cuts.end(); };
  std::vector<PriorPair> out;
  for (const std::string& raw : split(text, ',')) {
    const std::string token = trim(raw);
    if (token.empty()) continue;
    const auto colon = token.find(':');
    if (colon != std::string::npos) {
      out.push_back({beta_prior_by_name(trim(token.substr(0, colon))),
                     cutpoint_prior_by_name(trim(token.substr(colon + 1)))});
    } else if (is_beta(token)) {
      out.push_back({beta_prior_by_name(token), cutpoint_prior_by_name("dir_1")});
    } else if (is_cut(token)) {
      out.push_back({beta_prior_by_name("normal_100"), cutpoint_prior_by_name(token)});
    } else {
      throw std::invalid_argument("unknown prior '" + token + "'");
    }
  }
  if (out.empty()) throw std::invalid_argument("empty prior list");
  return out;
}

std::vector<FitRow> fit_priors(const TrialData& data, const std::vector<PriorPair>& priors,
                               const SamplerConfig& sampler) {
  std::vector<FitRow> rows;
  for (const PriorPair& p : priors) {
    SamplerConfig cfg = sampler;
    cfg.seed = derive_seed({sampler.seed, prior_key(p)});
    rows.push_back({p, fit_posterior(data, p.beta, p.cut, cfg)});
  }
  return rows;
}

CsvTable fit_table(const std::vector<FitRow>& rows) {
  CsvTable t;
  t.header = {"beta_prior", "cut_prior",    "beta_median",  "ci_low",      "ci_high",     "p_superior",
              "max_rhat",   "min_ess_bulk", "min_ess_tail", "divergences", "escalations", "divergent_final"};
  for (const FitRow& r : rows) {
    const FitSummary& f = r.fit;
    t.rows.push_back({r.prior.beta.name, r.prior.cut.name, format_number(f.beta_median), format_number(f.ci_low),
                      format_number(f.ci_high), format_number(f.p_superior), format_number(f.diagnostics.max_rhat()),
                      format_number(f.diagnostics.min_ess_bulk()), format_number(f.diagnostics.min_ess_tail()),
                      std::to_string(f.diagnostics.divergences_total), std::to_string(f.escalations),
                      f.divergent_final ? "1" : "0"});
  }
  return t;
}

}  // namespace ordprior
