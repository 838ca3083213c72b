#include <filesystem>
#include <fstream>

#include "helpers.hpp"

using namespace pft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("priorforest_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

McmcSettings short_run() {
  McmcSettings s;
  s.iter = 300;
  s.warmup = 100;
  s.seed = 9;
  return s;
}

}  // namespace

TEST_SUITE("bundle") {
  TEST_CASE("inline JSON round trip keeps summary and draws") {
    for (const auto& name : example_names()) {
      CAPTURE(name);
      const ProjectBundle b = example_bundle(name);
      const ProjectBundle c = bundle_from_json(bundle_to_json(b, true));
      CHECK(bundle_to_json(c, true) == bundle_to_json(b, true));
      CHECK(summary_text(assemble_bundle(c)) == summary_text(assemble_bundle(b)));
    }
    const ProjectBundle b = example_bundle("model1");
    const ProjectBundle c = bundle_from_json(bundle_to_json(b, true));
    CHECK(run_mcmc(assemble_bundle(b), short_run()).logvar == run_mcmc(assemble_bundle(c), short_run()).logvar);
  }

  TEST_CASE("bundle directory with file references") {
    const fs::path dir = scratch("neonatal");
    const ProjectBundle b = example_bundle("neonatal");
    write_bundle_dir(b, dir.string());
    CHECK(fs::exists(dir / "data.csv"));
    CHECK(fs::exists(dir / "bundle.json"));
    const ProjectBundle c = load_bundle((dir / "bundle.json").string());
    CHECK(c.data_ref == "data.csv");
    CHECK(c.inputs.trials_column == "Ntrials");
    CHECK(c.inputs.graphs.size() == 1);
    CHECK(prior_block_text(assemble_bundle(c)) == prior_block_text(assemble_bundle(b)));
    CHECK(c.inputs.data.rows == b.inputs.data.rows);
    save_bundle(c, (dir / "again.json").string());
    const ProjectBundle d = load_bundle((dir / "again.json").string());
    CHECK(bundle_to_json(d, true) == bundle_to_json(c, true));
  }

  TEST_CASE("choices survive serialization") {
    ProjectBundle b = example_bundle("model1");
    b.choices.V["a"] = {VarianceVariant::invgam, 2, 0.5};
    b.choices.tree = "(a); s1 = (b, eps)";
    b.choices.w = {{"s1", {WeightVariant::pcM, 0.3, 0.7}}};
    b.choices.V["s1"] = {VarianceVariant::halfcauchy, 2, 0};
    const ProjectBundle c = bundle_from_json(bundle_to_json(b));
    CHECK(c.choices.V.at("a") == b.choices.V.at("a"));
    CHECK(c.choices.V.at("s1") == b.choices.V.at("s1"));
    CHECK(c.choices.w.at("s1") == b.choices.w.at("s1"));
    CHECK(c.covariates.at("x") == GaussianPrior{0, 100});
  }

  TEST_CASE("errors carry their location") {
    const fs::path dir = scratch("errors");
    const fs::path bad = dir / "bad.json";
    std::ofstream(bad) << "{\n  \"formula\": \"y ~ mc(a)\",\n  \"tree\": oops\n}\n";
    try {
      load_bundle(bad.string());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::parse_error);
      CHECK(std::string(e.what()).find("bad.json:3") != std::string::npos);
    }
    const fs::path missing = dir / "missing.json";
    std::ofstream(missing) << R"j({"formula": "y ~ mc(a)", "data": "nowhere.csv"})j";
    try {
      load_bundle(missing.string());
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("nowhere.csv") != std::string::npos);
    }
    CHECK(code_of([] { load_bundle("/nonexistent/bundle.json"); }) == "io_error");
    CHECK(code_of([] { bundle_from_json(json{{"formula", "y ~ mc(a)"}, {"priors", {{"w", {{"s1", {{"prior", "pc7"}}}}}}}}); }) ==
          "invalid_prior");
  }

  TEST_CASE("grid CSV marks unbounded density") {
    DensityGrid g;
    g.parameter = "w[a/a_eps]";
    g.scale = Scale::tree;
    g.x = {0, 0.5};
    g.density = {std::numeric_limits<double>::infinity(), 1.2};
    const std::string csv = grid_to_csv(g);
    CHECK(csv.find("x,density") != std::string::npos);
    CHECK(csv.find("Inf") != std::string::npos);
    CHECK(grid_to_json(g)["density"][0].is_null());
  }

  TEST_CASE("prior parameters per node") {
    const HDJointPrior p = assemble_bundle(example_bundle("latin"));
    const auto params = prior_parameters(p);
    CHECK(std::find(params.begin(), params.end(), "V[eps_row_col_iid_rw2]") != params.end());
    CHECK(std::find(params.begin(), params.end(), "w[iid/iid_rw2]") != params.end());
    CHECK(std::find(params.begin(), params.end(), "w[col/row_col_iid_rw2]") != params.end());
    CHECK(std::find(params.begin(), params.end(), "sigma^2[rw2]") != params.end());
    const DataTable t = prior_sample_table(p, sample_prior(p, 200, 1));
    CHECK(code_of([&] { default_grid(p, "V[eps_row_col_iid_rw2]", Scale::variance, 11, t); }) == "improper_prior");
    CHECK(default_grid(p, "w[iid/iid_rw2]", Scale::tree, 11, t).back() == 1.0);
  }
}
