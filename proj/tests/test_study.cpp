#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "ordprior/study.hpp"

using namespace ordprior;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ordprior-test-" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

StudyConfig tiny_config(const fs::path& dir) {
  StudyConfig c;
  c.master_seed = 99;
  c.output_dir = dir;
  c.filter.parse("J=4;shape=uniform,skewed;design=fixed;or=1,1.5;n=100");
  c.priors.sweeps = {"A"};
  c.priors.beta = {"normal_100", "r2_0.5"};
  c.replicate_schedule = {12};
  c.sampler.chains = 2;
  c.sampler.warmup_iters = 150;
  c.sampler.sampling_iters = 150;
  c.n_boot = 200;
  return c;
}

CsvTable synthetic_results(int rows) {
  CsvTable t{results_columns(), {}};
  for (int i = 0; i < rows; ++i) {
    std::vector<std::string> r;
    for (std::size_t k = 0; k < t.header.size(); ++k) r.push_back(std::to_string(i) + "." + std::to_string(k));
    t.rows.push_back(r);
  }
  return t;
}

}  // namespace

TEST_SUITE("study") {
  TEST_CASE("scenario filter") {
    ScenarioFilter f;
    CHECK(f.empty());
    CHECK(f.describe() == "(none)");
    f.parse("J=4,10; shape=skewed ;design=adaptive;or=1.1;n=500");
    CHECK(f.categories == std::vector<int>{4, 10});
    CHECK(f.describe() == "J=4,10;shape=skewed;design=adaptive;or=1.1;n=500");
    const Scenario yes = make_scenario(1, 10, ControlShape::skewed(), std::log(1.1), 500, DesignKind::Adaptive);
    const Scenario no = make_scenario(2, 30, ControlShape::skewed(), std::log(1.1), 500, DesignKind::Adaptive);
    CHECK(f.matches(yes));
    CHECK_FALSE(f.matches(no));
    f.parse("J=30");
    CHECK(f.matches(no));
    CHECK(f.shapes.size() == 1);

    ScenarioFilter round;
    round.parse(f.describe());
    CHECK(round.describe() == f.describe());
    CHECK_THROWS(f.parse("K=4"));
    CHECK_THROWS(f.parse("J"));
    CHECK_THROWS(f.parse("shape=flat"));
    CHECK_THROWS(f.parse("n=ten"));
  }

  TEST_CASE("prior grid") {
    PriorGrid g;
    const std::vector<PriorPair> pairs = g.pairs();
    CHECK(pairs.size() == 10);  // 6 + 5 with the shared normal_100 + dir_1 once
    CHECK(pairs[0].beta.name == "normal_100");
    CHECK(pairs[0].cut.name == "dir_1");
    g.full_cross = true;
    CHECK(g.pairs().size() == 30);
    g.full_cross = false;
    g.sweeps = {"C"};
    CHECK_THROWS(g.pairs());
    g.sweeps = {"B"};
    g.anchor = CutpointAnchor::Reference;
    for (const PriorPair& p : g.pairs()) CHECK(p.cut.anchor == CutpointAnchor::Reference);
  }

  TEST_CASE("cells") {
    StudyConfig c;
    c.filter.parse("design=fixed");
    c.priors.sweeps = {"A"};
    const std::vector<Cell> cells = build_cells(c);
    CHECK(cells.size() == 324);
    CHECK(cells.front().cell_id == 1);
    CHECK(cells.back().cell_id == 324);
    CHECK(cells[0].scenario.id == cells[5].scenario.id);
    CHECK(cells[6].scenario.id != cells[5].scenario.id);

    c.filter.parse("J=7");
    try {
      build_cells(c);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("J=7") != std::string::npos);
    }
  }

  TEST_CASE("desk preset") {
    StudyConfig c;
    apply_desk_preset(c);
    CHECK(c.replicate_schedule == std::vector<int>{200});
    CHECK(c.sampler.chains == 2);
    CHECK(c.sampler.warmup_iters == 1000);
    CHECK(c.sampler.sampling_iters == 1000);
    CHECK(c.filter.categories == std::vector<int>{4, 10});
    StudyConfig d;
    d.filter.parse("J=30");
    apply_desk_preset(d);
    CHECK(d.filter.categories == std::vector<int>{30});
  }

  TEST_CASE("config files") {
    StudyConfig c = tiny_config("out");
    c.grid.skewed = ControlShape::skewed(2.0, 5.0);
    c.design.interim_superiority_threshold = 0.995;
    c.relative_bias = RelativeBiasKind::OrOfMean;
    const StudyConfig back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));

    StudyConfig other = c;
    other.workers = 7;
    other.output_dir = "elsewhere";
    other.sampler.parallel_chains = true;
    CHECK(config_hash(other) == config_hash(c));
    other.master_seed = 100;
    CHECK(config_hash(other) != config_hash(c));

    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"seed", 1}}), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json(nlohmann::json{{"sampler", {{"chain", 2}}}}), std::invalid_argument);
    CHECK_THROWS(config_from_json(nlohmann::json{{"grid", {{"skewed", {1.0}}}}}));
    const StudyConfig partial = config_from_json(nlohmann::json{{"master_seed", 5}});
    CHECK(partial.master_seed == 5);
    CHECK(partial.replicate_schedule == std::vector<int>{250, 500, 1000});

    StudyConfig bad = c;
    bad.workers = 0;
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.replicate_schedule = {100, 50};
    CHECK_THROWS(bad.validate());
    bad = c;
    bad.priors.beta = {"normal_3"};
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("seed streams") {
    const Scenario s1 = make_scenario(1, 4, ControlShape::uniform(), 0.0, 100, DesignKind::Fixed);
    const Scenario s2 = make_scenario(2, 4, ControlShape::uniform(), 0.0, 100, DesignKind::Fixed);
    const PriorPair a{beta_prior_by_name("normal_100"), cutpoint_prior_by_name("dir_1")};
    const PriorPair b{beta_prior_by_name("cauchy"), cutpoint_prior_by_name("dir_1")};
    CHECK(prior_key(a) != prior_key(b));
    CHECK(data_seed(1, s1, 0) != data_seed(1, s1, 1));
    CHECK(data_seed(1, s1, 0) != data_seed(1, s2, 0));
    CHECK(data_seed(1, s1, 0) != data_seed(2, s1, 0));
    CHECK(sampler_seed(1, s1, a, 0) != sampler_seed(1, s1, b, 0));
    CHECK(sampler_seed(1, s1, a, 0) == sampler_seed(1, s1, a, 0));
  }

  TEST_CASE("CSV helpers") {
    std::istringstream in("a,b\n1,x\n\n2,y\n");
    const CsvTable t = read_csv(in);
    CHECK(t.header == std::vector<std::string>{"a", "b"});
    CHECK(t.rows.size() == 2);
    CHECK(t.column("b") == 1);
    try {
      t.column("zz");
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("zz") != std::string::npos);
    }
    std::ostringstream out;
    write_csv(out, t);
    CHECK(out.str() == "a,b\n1,x\n2,y\n");
    std::istringstream ragged("a,b\n1\n");
    CHECK_THROWS(read_csv(ragged));
    CHECK(format_number(0.1) == "0.1");
    CHECK(format_number(NAN) == "NA");
    CHECK(format_number(-INFINITY) == "-Inf");
  }

  TEST_CASE("results column order") {
    const std::vector<std::string> expect{
        "scenario_id", "design",        "J",           "shape",         "beta_a",          "beta_b",
        "true_or",     "n_obs",         "beta_prior",  "cut_prior",     "n_sim_used",      "bias",
        "bias_mcse",   "rel_bias_pct",  "rel_bias_mcse", "coverage",    "coverage_mcse",   "mse",
        "mse_mcse",    "mean_p_superior", "prop_superior", "prop_superior_mcse", "prop_stopped_early",
        "n_divergent_final", "max_rhat", "min_ess_bulk", "min_ess_tail"};
    CHECK(results_columns() == expect);
  }

  TEST_CASE("plot data reshaping") {
    const CsvTable results = synthetic_results(324);
    const CsvTable long_table = plot_data(results);
    CHECK(long_table.rows.size() == 2268);
    CHECK(long_table.header.back() == "mcse");
    const CsvTable back = pivot_plot_data(long_table);
    CHECK(back.header == results.header);
    CHECK(back.rows == results.rows);

    const CsvTable empty = plot_data(CsvTable{results_columns(), {}});
    CHECK(empty.rows.empty());
    CHECK_FALSE(empty.header.empty());

    CsvTable missing = results;
    missing.header[13] = "relbias";
    try {
      plot_data(missing);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("rel_bias_pct") != std::string::npos);
    }
  }

  TEST_CASE("fit input parsing") {
    std::istringstream good("arm,category\n0,1\n0,2\n1,3\n1,3\n");
    const TrialData d = read_fit_data(good);
    CHECK(d.categories() == 3);
    CHECK(d.count(2, Arm::Intervention) == 2);
    std::istringstream declared("arm,category\n0,1\n1,2\n");
    CHECK(read_fit_data(declared, 5).categories() == 5);

    std::istringstream one_arm("arm,category\n0,1\n0,2\n");
    CHECK_THROWS(read_fit_data(one_arm));
    std::istringstream one_cat("arm,category\n0,2\n1,2\n");
    CHECK_THROWS(read_fit_data(one_cat));
    std::istringstream bad_arm("arm,category\n2,1\n1,2\n");
    CHECK_THROWS(read_fit_data(bad_arm));
    std::istringstream too_big("arm,category\n0,1\n1,6\n");
    CHECK_THROWS(read_fit_data(too_big, 5));
    std::istringstream no_header("group,category\n0,1\n");
    CHECK_THROWS(read_fit_data(no_header));
  }

  TEST_CASE("prior lists") {
    const auto p = parse_prior_list("normal_100:dir_1, r2_0.5,dir_0.5");
    REQUIRE(p.size() == 3);
    CHECK(p[1].beta.name == "r2_0.5");
    CHECK(p[1].cut.name == "dir_1");
    CHECK(p[2].beta.name == "normal_100");
    CHECK(p[2].cut.name == "dir_0.5");
    CHECK_THROWS(parse_prior_list("dirichlet"));
    CHECK_THROWS(parse_prior_list(""));
  }

  TEST_CASE("balanced null dataset gives a central superiority probability") {
    TrialData d(3);
    for (Arm a : {Arm::Control, Arm::Intervention}) {
      d.add(0, a, 12);
      d.add(1, a, 9);
      d.add(2, a, 14);
    }
    PriorGrid grid;
    SamplerConfig sampler;
    sampler.seed = 3;
    const std::vector<FitRow> rows = fit_priors(d, grid.pairs(), sampler);
    for (const FitRow& r : rows) {
      INFO(r.prior.beta.name << "/" << r.prior.cut.name);
      CHECK(r.fit.p_superior >= 0.35);
      CHECK(r.fit.p_superior <= 0.65);
    }
  }

  TEST_CASE("binary outcome matches the two-by-two log odds ratio") {
    TrialData d(2);
    d.add(0, Arm::Control, 300);
    d.add(1, Arm::Control, 200);
    d.add(0, Arm::Intervention, 220);
    d.add(1, Arm::Intervention, 260);
    SamplerConfig sampler;
    sampler.chains = 2;
    sampler.warmup_iters = 500;
    sampler.sampling_iters = 1000;
    const auto rows = fit_priors(d, parse_prior_list("normal_100:dir_1,cauchy"), sampler);
    const double classical = oracle::two_by_two_log_or(300, 200, 220, 260);
    for (const FitRow& r : rows) CHECK(std::abs(r.fit.beta_median - classical) < 0.15);

    const auto again = fit_priors(d, parse_prior_list("normal_100:dir_1,cauchy"), sampler);
    std::ostringstream a;
    std::ostringstream b;
    write_csv(a, fit_table(rows));
    write_csv(b, fit_table(again));
    CHECK(a.str() == b.str());
    CHECK(fit_table(rows).header[0] == "beta_prior");
  }

  TEST_CASE("study runs are reproducible, resumable and worker independent") {
    const fs::path dir = fresh_dir("study");
    StudyConfig c = tiny_config(dir);
    CHECK(run_study(c) == 8);
    const std::string results = slurp(dir / "results.csv");
    const std::string reps = slurp(dir / "replicates.csv");
    CHECK(std::count(results.begin(), results.end(), '\n') == 9);
    CHECK(std::count(reps.begin(), reps.end(), '\n') == 1 + 8 * 12);

    const nlohmann::json manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("config_hash") == config_hash(c));
    CHECK(manifest.at("scenarios").size() == 4);
    CHECK(manifest.at("prior_pairs")[1].at("cut_anchor") == "covariate_mean");
    CHECK(manifest.at("config").at("grid").at("skewed")[1] == 4.0);
    CHECK(manifest.contains("version"));

    // rerunning from the manifest alone reproduces the tables
    const fs::path replay = fresh_dir("study-replay");
    StudyConfig from_manifest = load_config(dir / "manifest.json");
    from_manifest.output_dir = replay;
    from_manifest.workers = 3;
    CHECK(run_study(from_manifest) == 8);
    CHECK(slurp(replay / "results.csv") == results);
    CHECK(slurp(replay / "replicates.csv") == reps);

    // interrupted run: keep three complete records and half of the fourth
    const std::string journal = slurp(dir / "journal.jsonl");
    std::size_t cut = 0;
    for (int k = 0; k < 3; ++k) cut = journal.find('\n', cut) + 1;
    const std::size_t next = journal.find('\n', cut);
    {
      std::ofstream out(dir / "journal.jsonl", std::ios::binary | std::ios::trunc);
      out << journal.substr(0, cut + (next - cut) / 2);
    }
    fs::remove(dir / "results.csv");
    StudyOptions resume;
    resume.resume = true;
    CHECK(run_study(c, resume) == 5);
    CHECK(slurp(dir / "results.csv") == results);
    CHECK(slurp(dir / "replicates.csv") == reps);

    // nothing left to do
    CHECK(run_study(c, resume) == 0);
    CHECK(slurp(dir / "results.csv") == results);

    StudyConfig changed = c;
    changed.master_seed = 1234;
    try {
      run_study(changed);
      FAIL("expected an exception");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("refusing to overwrite") != std::string::npos);
    }
    fs::remove_all(dir);
    fs::remove_all(replay);
  }
}
