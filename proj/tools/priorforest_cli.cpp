#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "priorforest/bundle.hpp"
#include "priorforest/elicitation.hpp"
#include "priorforest/error.hpp"
#include "priorforest/service.hpp"
#include "priorforest/simulate.hpp"

using namespace priorforest;
namespace fs = std::filesystem;

namespace {

std::string file_stem_for(const std::string& param) {
  std::string s;
  for (char c : param) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      s += c;
    } else if (c == '/' || c == '[') {
      s += '_';
    }
  }
  return s;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + p.string());
  out << text;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& m : w) std::cerr << "warning: " << m << "\n";
}

std::string draws_csv(const InferenceResult& r) {
  DataTable t;
  for (size_t j = 0; j < r.tree_names.size(); ++j) {
    const auto c = r.tree.col(static_cast<Eigen::Index>(j));
    t.add(r.tree_names[j], std::vector<double>(c.data(), c.data() + c.size()));
  }
  for (size_t j = 0; j < r.effects.size(); ++j) {
    const Eigen::VectorXd c = r.logvar.col(static_cast<Eigen::Index>(j)).array().exp();
    t.add("sigma^2[" + r.effects[j] + "]", std::vector<double>(c.data(), c.data() + c.size()));
  }
  for (size_t j = 0; j < r.fixed_names.size(); ++j) {
    const auto c = r.fixed.col(static_cast<Eigen::Index>(j));
    t.add(r.fixed_names[j], std::vector<double>(c.data(), c.data() + c.size()));
  }
  std::vector<double> chain(r.chain_of.begin(), r.chain_of.end());
  t.add("chain", chain);
  return to_csv(t);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-based hierarchical variance priors: build, inspect, sample and fit."};
  app.require_subcommand(1);

  std::string bundle_path;

  auto* validate = app.add_subcommand("validate", "Parse and assemble a bundle, print the prior summary");
  validate->add_option("bundle", bundle_path, "bundle JSON")->required();

  std::vector<std::string> exports;
  int n_samples = 100000;
  uint64_t seed = 1;
  std::string out_dir = ".";
  std::string scale_name = "variance";
  int points = 501;
  auto* prior = app.add_subcommand("prior", "Export prior density grids and/or prior draws");
  prior->add_option("bundle", bundle_path, "bundle JSON")->required();
  prior->add_option("--export", exports, "grids, samples or both")
      ->check(CLI::IsMember({"grids", "samples"}))
      ->default_str("grids");
  prior->add_option("--n", n_samples, "number of prior draws")->check(CLI::PositiveNumber);
  prior->add_option("--seed", seed, "random seed");
  prior->add_option("--out", out_dir, "output directory");
  prior->add_option("--scale", scale_name, "variance, stdev or precision for V and sigma grids");
  prior->add_option("--points", points, "grid points")->check(CLI::Range(2, 1000000));

  McmcSettings ms;
  bool prior_only = false;
  auto* infer = app.add_subcommand("infer", "Run the sampler; writes summaries, draws and posterior grids");
  infer->add_option("bundle", bundle_path, "bundle JSON")->required();
  infer->add_option("--iter", ms.iter, "iterations per chain, warmup included");
  infer->add_option("--warmup", ms.warmup, "warmup iterations");
  infer->add_option("--chains", ms.chains, "number of chains");
  infer->add_option("--seed", ms.seed, "random seed");
  infer->add_option("--thin", ms.thin, "keep every thin-th draw");
  infer->add_option("--step-scale", ms.step_scale, "multiplier on the proposal scale");
  infer->add_option("--threads", ms.threads, "threads for parallel chains");
  infer->add_flag("--prior-only", prior_only, "ignore the likelihood");
  infer->add_option("--out", out_dir, "output directory");
  infer->add_option("--points", points, "posterior grid points")->check(CLI::Range(2, 1000000));

  std::string session_dir, static_dir, host = "127.0.0.1";
  int port = 8080, workers = 1;
  auto* serve_cmd = app.add_subcommand("serve", "Local HTTP API for interactive prior building");
  serve_cmd->add_option("--port", port, "port")->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", host, "interface to bind");
  serve_cmd->add_option("--session-dir", session_dir, "where sessions are stored (else PRIORFOREST_SESSION_DIR)");
  serve_cmd->add_option("--static-dir", static_dir, "directory of UI assets served at /");
  serve_cmd->add_option("--workers", workers, "inference worker threads")->check(CLI::Range(1, 64));

  std::string example;
  auto* simulate = app.add_subcommand("simulate", "Write a bundle with regenerated example data");
  simulate->add_option("example", example, "example name")->required()->check(CLI::IsMember(example_names()));
  simulate->add_option("--seed", seed, "random seed");
  simulate->add_option("--out", out_dir, "output directory")->required();

  double lower = 0.1, upper = 10, prob = 0.9;
  int pc_n = 200000;
  auto* find_pc = app.add_subcommand("find-pc-param", "U of a PC0(U, 0.05) prior matching an interval for exp(eta)");
  find_pc->add_option("--lower", lower, "lower end of the interval")->required();
  find_pc->add_option("--upper", upper, "upper end of the interval")->required();
  find_pc->add_option("--prob", prob, "probability of the interval")->required();
  find_pc->add_option("--n", pc_n, "Monte Carlo draws")->check(CLI::PositiveNumber);
  find_pc->add_option("--seed", seed, "random seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) {
      const ProjectBundle b = load_bundle(bundle_path);
      const HDJointPrior p = assemble_bundle(b);
      print_warnings(p.warnings);
      std::cout << summary_text(p);
      return 0;
    }

    if (*prior) {
      if (exports.empty()) exports.push_back("grids");
      const ProjectBundle b = load_bundle(bundle_path);
      const HDJointPrior p = assemble_bundle(b);
      print_warnings(p.warnings);
      const Scale scale = parse_scale(scale_name);
      fs::create_directories(out_dir);
      const PriorSamples ps = sample_prior(p, n_samples, seed);
      const DataTable samples = prior_sample_table(p, ps);
      for (const auto& e : exports) {
        if (e == "samples") {
          const fs::path f = fs::path(out_dir) / "prior_samples.csv";
          write_file(f, to_csv(samples));
          if (ps.jeffreys_pinned) std::cerr << "note: Jeffreys' top nodes are pinned at V = 1 in the draws\n";
          std::cout << f.string() << "\n";
          continue;
        }
        for (const auto& param : prior_parameters(p)) {
          try {
            const auto grid = default_grid(p, param, scale, points, samples);
            const DensityGrid g = export_density_grid(p, param, scale, grid, n_samples, seed);
            const fs::path f = fs::path(out_dir) / ("prior_" + file_stem_for(param) + ".csv");
            write_file(f, grid_to_csv(g));
            std::cout << f.string() << "\n";
          } catch (const Error& err) {
            if (err.code() != ErrorCode::improper_prior) throw;
            std::cerr << "skipping " << param << ": " << err.what() << "\n";
          }
        }
      }
      return 0;
    }

    if (*infer) {
      ProjectBundle b = load_bundle(bundle_path);
      McmcSettings s = b.sampler;
      // Flags given on the command line override the bundle's sampler block.
      for (const auto* o : infer->get_options()) {
        if (o->count() == 0) continue;
        const std::string nm = o->get_name();
        if (nm == "--iter") s.iter = ms.iter;
        if (nm == "--warmup") s.warmup = ms.warmup;
        if (nm == "--chains") s.chains = ms.chains;
        if (nm == "--seed") s.seed = ms.seed;
        if (nm == "--thin") s.thin = ms.thin;
        if (nm == "--step-scale") s.step_scale = ms.step_scale;
        if (nm == "--threads") s.threads = ms.threads;
      }
      if (infer->get_option("--warmup")->count() == 0 && s.warmup >= s.iter) s.warmup = s.iter / 3;
      s.prior_only = prior_only;
      if (!b.has_data) throw Error(ErrorCode::invalid_data, bundle_path + ": bundle has no data");
      const HDJointPrior p = assemble_bundle(b);
      print_warnings(p.warnings);
      const auto t0 = std::chrono::steady_clock::now();
      const InferenceResult r = run_mcmc(p, s);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      print_warnings(r.warnings);
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      const std::string table = format_summary_table(posterior_summaries(r, Scale::variance));
      write_file(dir / "summary.txt", table);
      write_file(dir / "summary_tree.txt", format_summary_table(posterior_summaries(r, Scale::tree)));
      write_file(dir / "summary.json", summaries_to_json(r).dump(2) + "\n");
      write_file(dir / "draws.csv", draws_csv(r));
      for (const auto& name : r.tree_names) {
        const Eigen::VectorXd v = parameter_draws(r, name, Scale::tree);
        std::vector<double> grid(static_cast<size_t>(points));
        const bool weight = name.rfind("w[", 0) == 0;
        const double hi = weight ? 1.0 : 1.5 * v.maxCoeff();
        for (int i = 0; i < points; ++i) grid[static_cast<size_t>(i)] = hi * i / (points - 1);
        write_file(dir / ("posterior_" + file_stem_for(name) + ".csv"),
                   grid_to_csv(export_density_grid(r, name, Scale::tree, grid)));
      }
      std::cout << table;
      std::cout << "draws: " << r.draws() << ", acceptance:";
      for (double a : r.acceptance) std::cout << " " << format_number(a);
      std::cout << ", time: " << format_number(secs) << " s\n";
      return 0;
    }

    if (*serve_cmd) {
      ServiceConfig cfg;
      cfg.session_dir = resolve_session_dir(session_dir);
      cfg.static_dir = static_dir;
      cfg.workers = workers;
      return serve(cfg, host, port);
    }

    if (*simulate) {
      write_bundle_dir(example_bundle(example, seed), out_dir);
      std::cout << (fs::path(out_dir) / "bundle.json").string() << "\n";
      return 0;
    }

    if (*find_pc) {
      const PcParamResult r = find_pc_prior_param(lower, upper, prob, pc_n, seed);
      std::cout << "U = " << format_number(r.U) << "\n"
                << "coverage = " << format_number(r.coverage) << "\n"
                << "quantiles of exp(eta): " << format_number(r.q_lower) << ", " << format_number(r.q_upper) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
