#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "kfplab/expression.hpp"
#include "kfplab/io.hpp"
#include "kfplab/kernel.hpp"
#include "kfplab/moduli.hpp"
#include "kfplab/parallel.hpp"
#include "kfplab/representation.hpp"
#include "kfplab/verify.hpp"

using namespace kfp;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "kfplab_out";
  int threads = 0;
  double tolerance = -1.0;
};

std::vector<double> numbers(const std::string& text, const std::string& field) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(field, "not a number: '" + item + "'");
    }
  }
  if (v.empty()) throw ConfigError(field, "empty list");
  return v;
}

Vec as_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

ModelStructure structure_from_text(const std::string& m) {
  Json j;
  j["m"] = Json::array();
  for (double v : numbers(m, "m")) {
    if (v != std::floor(v)) throw ConfigError("m", "block sizes must be integers");
    j["m"].push_back(static_cast<int>(v));
  }
  return structure_from_json(j);
}

// Model from --config when given, else identity A0 on --m.
struct ModelSetup {
  ModelStructure s;
  CoefficientModel model;
  std::vector<SourceSpec> sources;
  Scenario sc;
};

ModelSetup model_setup(const Globals& g, const std::string& m) {
  ModelSetup out;
  if (!g.config.empty()) {
    out.sc = load_scenario(g.config);
    out.s = out.sc.structure;
    out.model = out.sc.coefficients;
    out.sources = out.sc.sources;
  } else {
    out.s = structure_from_text(m);
    const int q = out.s.diffusion_rank();
    out.model = CoefficientModel::constant(out.s, Mat::Identity(q, q));
  }
  return out;
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(double_to_json(v(i)));
  return a;
}

Json mat_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(vec_json(m.row(i).transpose()));
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kfplab: Kolmogorov-Fokker-Planck estimate harness"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "scenario JSON");
  auto* seed_opt = app.add_option("--seed", g.seed, "RNG seed (overrides the config)");
  app.add_option("--out", g.out, "report directory");
  app.add_option("--threads", g.threads, "worker threads (0 = hardware)");
  app.add_option("--tolerance", g.tolerance, "stability tolerance (overrides the config)");
  app.fallthrough();

  std::string m = "1,1";
  auto* structure = app.add_subcommand("structure", "print the model structure for block sizes m");
  structure->add_option("--m", m, "block sizes, e.g. 1,1");

  auto* moduli = app.add_subcommand("moduli", "evaluate omega, M, N, U, V of a modulus");
  std::string family = "power", terms_json;
  double malpha = 0.5, mscale = 1.0, mu = 0.25;
  std::string radii = "0.001,0.01,0.1,1";
  moduli->add_option("--family", family, "power | zero | or a JSON modulus object with --json");
  moduli->add_option("--alpha", malpha, "power exponent");
  moduli->add_option("--scale", mscale, "power scale");
  moduli->add_option("--json", terms_json, "modulus as JSON text");
  moduli->add_option("--mu", mu, "Gaussian weight for U and V");
  moduli->add_option("--r", radii, "comma-separated radii");
  moduli->add_option("--m", m, "block sizes");

  auto* kernel = app.add_subcommand("kernel", "evaluate Gamma(x,t;y,s) and the covariance");
  std::string kx = "0,0", ky = "0,0";
  double kt = 1.0, ks = 0.0;
  kernel->add_option("--m", m, "block sizes");
  kernel->add_option("--x", kx);
  kernel->add_option("--y", ky);
  kernel->add_option("--t", kt);
  kernel->add_option("--s", ks);

  auto* cauchy = app.add_subcommand("cauchy", "solve the Cauchy problem for an initial datum at one point");
  std::string datum = "gauss(x1)";
  cauchy->add_option("--m", m, "block sizes");
  cauchy->add_option("--datum", datum, "initial datum f(x) as an expression");
  cauchy->add_option("--x", kx);
  cauchy->add_option("--t", kt);
  cauchy->add_option("--s", ks);

  auto* hessian = app.add_subcommand("hessian", "evaluate T_ij of a source at one point");
  std::string source_name, at = "0,0,1", ij = "0,0", sources_file;
  double budget = 1e-6;
  hessian->add_option("--m", m, "block sizes");
  hessian->add_option("--source", source_name, "source name")->required();
  hessian->add_option("--sources", sources_file, "source bank JSON (when no --config)");
  hessian->add_option("--at", at, "x1,...,xN,t");
  hessian->add_option("--ij", ij, "i,j (zero-based, < q)");
  hessian->add_option("--budget", budget, "relative error budget");

  auto* verify = app.add_subcommand("verify", "run a scenario and write reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  g.seed_set = seed_opt->count() > 0;
  if (g.threads > 0) set_default_threads(g.threads);

  try {
    if (*structure) {
      print(structure_to_json(structure_from_text(m)));
      return 0;
    }
    if (*moduli) {
      ModelStructure s = structure_from_text(m);
      Modulus w;
      if (!terms_json.empty())
        w = modulus_from_json(Json::parse(terms_json), "json");
      else if (family == "power")
        w = Modulus::power(malpha, mscale);
      else if (family == "zero")
        w = Modulus::zero();
      else
        throw ConfigError("family", "use --json for families other than power and zero");
      Json j;
      j["dini"] = double_to_json(w.dini().value);
      j["log_dini"] = double_to_json(w.log_dini().value);
      j["log_dini_class"] = to_string(w.log_dini().status);
      Json rows = Json::array();
      for (double r : numbers(radii, "r")) {
        Json row;
        row["r"] = r;
        row["omega"] = w(r);
        if (w.dini().finite()) {
          row["M"] = double_to_json(m_transform(w, r));
          row["N"] = double_to_json(n_transform(w, r));
          row["U"] = double_to_json(u_mu_transform(w, mu, r, s));
          row["V"] = double_to_json(v_mu_transform(w, mu, r, s));
        }
        rows.push_back(row);
      }
      j["values"] = rows;
      print(j);
      return 0;
    }
    if (*kernel) {
      ModelSetup ms = model_setup(g, m);
      const int n = ms.s.dim();
      Vec x = as_vec(numbers(kx, "x")), y = as_vec(numbers(ky, "y"));
      if (x.size() != n || y.size() != n) throw ConfigError("x", "expected " + std::to_string(n) + " coordinates");
      if (!(kt > ks)) throw ConfigError("t", "t must exceed s");
      KernelWorkspace ws = covariance(ms.model, kt, ks);
      Json j;
      j["gamma"] = ws.gamma(x, y);
      j["C"] = mat_json(ws.C());
      j["E"] = mat_json(ws.E_ts());
      j["mean"] = vec_json(ws.E_ts() * y);
      print(j);
      return 0;
    }
    if (*cauchy) {
      ModelSetup ms = model_setup(g, m);
      const int n = ms.s.dim();
      Vec x = as_vec(numbers(kx, "x"));
      if (x.size() != n) throw ConfigError("x", "expected " + std::to_string(n) + " coordinates");
      if (!(kt > ks)) throw ConfigError("t", "t must exceed s");
      Expression f = Expression::parse(datum, n, "datum");
      WhitenedResult r = cauchy_solve(ms.model.without_perturbation(), [&](const Vec& y) { return f(y, ks); }, ks, x, kt);
      Json j;
      j["u"] = r.value;
      j["error"] = r.error;
      j["order"] = r.order;
      print(j);
      return 0;
    }
    if (*hessian) {
      ModelSetup ms = model_setup(g, m);
      const int n = ms.s.dim();
      if (ms.sources.empty()) {
        std::string file = sources_file.empty() ? std::string(KFPLAB_SOURCE_DIR) + "/data/sources.json" : sources_file;
        ms.sources = sources_from_json(read_json_file(file), ms.s, ".");
      }
      const SourceSpec* src = nullptr;
      for (const auto& s : ms.sources)
        if (s.name == source_name) src = &s;
      if (!src) throw ConfigError("source", "no source named '" + source_name + "'");
      std::vector<double> p = numbers(at, "at");
      if (static_cast<int>(p.size()) != n + 1) throw ConfigError("at", "expected N coordinates then t");
      std::vector<double> idx = numbers(ij, "ij");
      if (idx.size() != 2) throw ConfigError("ij", "expected i,j");
      Vec x = as_vec(std::vector<double>(p.begin(), p.end() - 1));
      TijOptions opt;
      opt.budget = budget;
      TijResult r = t_ij(ms.model.without_perturbation(), *src, static_cast<int>(idx[0]), static_cast<int>(idx[1]), x,
                         p.back(), opt);
      Json j;
      j["t_ij"] = r.value;
      j["error"] = r.error;
      j["slices"] = r.slices;
      j["converged"] = r.converged;
      print(j);
      return 0;
    }
    if (*verify) {
      if (g.config.empty()) throw ConfigError("config", "verify needs --config");
      Scenario sc = load_scenario(g.config);
      if (g.seed_set) sc.seed = g.seed;
      if (g.threads > 0) sc.threads = g.threads;
      if (g.tolerance >= 0.0) sc.tolerance = g.tolerance;
      ReportBundle b = run_scenario(sc);
      report_write(b, g.out);
      for (const auto& r : b.reports)
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.inequality_id << " c_star=" << r.c_star
                  << " stability=" << r.stability << "\n";
      return b.all_pass() ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
