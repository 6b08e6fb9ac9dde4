#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kfplab/parallel.hpp"
#include "kfplab/verify.hpp"

namespace kfp {

namespace {

namespace fs = std::filesystem;

std::pair<int, int> level_pair(const Json& j, const std::string& key, std::pair<int, int> def) {
  if (!j.contains(key)) return def;
  const Json& v = j[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    throw ConfigError("grid." + key, "expected [coarse, fine] integers");
  return {v[0].get<int>(), v[1].get<int>()};
}

template <typename T>
T get_or(const Json& j, const std::string& key, T def, const std::string& path) {
  if (!j.contains(key)) return def;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + "." + key, "wrong type");
  }
}

std::vector<std::vector<int>> index_pairs(const Json& j, const std::string& path) {
  // [[alpha1], [alpha2]]
  std::vector<std::vector<int>> out;
  if (!j.is_array() || j.size() != 2) throw ConfigError(path, "expected [[alpha1...], [alpha2...]]");
  for (const auto& a : j) out.push_back(a.get<std::vector<int>>());
  return out;
}

const Json& options_for(const Scenario& sc, const std::string& check) {
  static const Json empty = Json::object();
  if (sc.check_options.contains(check)) return sc.check_options[check];
  return empty;
}

struct ModulusEntry {
  std::string name;
  Modulus w;
};

std::vector<ModulusEntry> modulus_bank(const Scenario& sc, const Json& opt) {
  std::vector<ModulusEntry> bank;
  std::string file = opt.value("bank", std::string("data/modulus_bank.json"));
  fs::path p(file);
  if (p.is_relative()) p = fs::path(sc.check_options.value("base_dir", std::string(".")) ) / p;
  Json j = read_json_file(p.string());
  if (!j.is_array()) throw ConfigError("bank", "modulus bank must be a list");
  for (std::size_t i = 0; i < j.size(); ++i) {
    std::string path = "bank[" + std::to_string(i) + "]";
    std::string name = j[i].value("name", "modulus" + std::to_string(i));
    bank.push_back({name, modulus_from_json(j[i], path)});
  }
  return bank;
}

void tag(EstimateReport& r, const std::string& suffix) { r.inequality_id += suffix; }

// -------------------------------------------------------------- checks

using CheckFn = std::function<void(const Scenario&, const Json&, ReportBundle&)>;

void check_structure(const Scenario& sc, const Json& opt, ReportBundle& out) {
  std::size_t n = get_or<std::size_t>(opt, "samples", 20000, "structure_constants");
  StructuralConstants a = estimate_structural_constants(sc.structure, n, sc.seed, sc.domain);
  StructuralConstants b = estimate_structural_constants(sc.structure, 2 * n, sc.seed, sc.domain);
  EstimateReport r;
  r.inequality_id = "structure_constants";
  r.rhs_form = "quasi-triangle constant kappa";
  r.c_star = b.kappa;
  r.lhs_max = b.kappa;
  r.stability = relative_change(b.kappa, a.kappa);
  r.tolerance = sc.tolerance;
  r.samples = 2 * n;
  r.seed = sc.seed;
  r.details["kappa"] = b.kappa;
  r.details["vartheta"] = b.vartheta;
  r.details["c_E"] = b.c_E;
  r.details["Q"] = sc.structure.homogeneous_dimension();
  r.finalize();
  out.reports.push_back(r);
}

void check_normalization(const Scenario& sc, const Json&, ReportBundle& out) {
  const int n = sc.structure.dim();
  const double tau = sc.domain.t.first, T = sc.domain.t.second;
  double worst = 0.0;
  std::size_t count = 0;
  for (double a : linspace(-1.0, 1.0, 5))
    for (double t : linspace(tau + 0.2 * (T - tau), T, 5)) {
      Vec x(n);
      for (int i = 0; i < n; ++i) x(i) = a * (1.0 - 0.3 * i);
      EstimateReport r = gamma_normalization_check(sc.coefficients, x, t, tau);
      worst = std::max(worst, r.c_star);
      ++count;
    }
  EstimateReport r;
  r.inequality_id = "gamma_normalization";
  r.rhs_form = "max |int Gamma dy - 1| over a 5x5 (x,t) grid";
  r.c_star = r.stability = r.lhs_max = worst;
  r.tolerance = 1e-8;
  r.samples = count;
  r.finalize();
  out.reports.push_back(r);
}

void check_ck(const Scenario& sc, const Json& opt, ReportBundle& out) {
  const int n = sc.structure.dim();
  Vec x = opt.contains("x") ? vec_from_json(opt["x"], "chapman_kolmogorov.x", n) : Vec::Constant(n, 0.3);
  Vec y = opt.contains("y") ? vec_from_json(opt["y"], "chapman_kolmogorov.y", n) : Vec::Constant(n, -0.1);
  const double s = get_or<double>(opt, "s", sc.domain.t.first, "chapman_kolmogorov");
  const double r = get_or<double>(opt, "r", 0.5 * (sc.domain.t.first + sc.domain.t.second), "chapman_kolmogorov");
  const double t = get_or<double>(opt, "t", sc.domain.t.second, "chapman_kolmogorov");
  out.reports.push_back(chapman_kolmogorov_check(sc.coefficients, x, t, r, y, s));
}

void check_residual(const Scenario& sc, const Json& opt, ReportBundle& out) {
  ResidualGridSpec grid;
  grid.x_box = sc.domain.x;
  grid.x_points = get_or<int>(opt, "x_points", grid.x_points, "lgamma_residual");
  grid.t_points = get_or<int>(opt, "t_points", grid.t_points, "lgamma_residual");
  Vec y = Vec::Zero(sc.structure.dim());
  out.reports.push_back(lgamma_residual_check(sc.coefficients, y, sc.domain.t.first, grid));
}

void check_gaussian_bound(const Scenario& sc, const Json& opt, ReportBundle& out) {
  const int n = sc.structure.dim();
  SampleSpec spec;
  spec.count = get_or<std::size_t>(opt, "samples", 2000, "gaussian_bound");
  spec.seed = sc.seed;
  spec.x_box = sc.domain.x;
  spec.t_range = sc.domain.t;
  spec.threads = sc.threads;
  std::vector<std::vector<std::vector<int>>> orders;
  if (opt.contains("orders")) {
    for (std::size_t i = 0; i < opt["orders"].size(); ++i)
      orders.push_back(index_pairs(opt["orders"][i], "gaussian_bound.orders[" + std::to_string(i) + "]"));
  } else {
    std::vector<int> z(n, 0), e1(n, 0), e11(n, 0);
    e1[0] = 1;
    e11[0] = 2;
    orders = {{z, z}, {e1, z}, {e11, z}, {z, e1}};
  }
  for (const auto& o : orders) out.reports.push_back(gaussian_bound_check(sc.coefficients, o[0], o[1], spec));
}

void check_mean_value(const Scenario& sc, const Json& opt, ReportBundle& out) {
  const int n = sc.structure.dim();
  SampleSpec spec;
  spec.count = get_or<std::size_t>(opt, "samples", 2000, "mean_value");
  spec.seed = sc.seed;
  spec.x_box = sc.domain.x;
  spec.t_range = sc.domain.t;
  spec.threads = sc.threads;
  std::vector<int> a(n, 0);
  out.reports.push_back(mean_value_check(sc.coefficients, a, spec));
  a[0] = 1;
  EstimateReport r = mean_value_check(sc.coefficients, a, spec);
  tag(r, "_d1");
  out.reports.push_back(r);
}

void check_sde(const Scenario& sc, const Json& opt, ReportBundle& out) {
  const int n = sc.structure.dim();
  SdeOptions so;
  so.n_paths = get_or<std::size_t>(opt, "n_paths", 100000, "sde_density");
  so.n_steps = get_or<int>(opt, "n_steps", 64, "sde_density");
  so.seed = sc.seed;
  so.threads = sc.threads;
  Vec y = opt.contains("y") ? vec_from_json(opt["y"], "sde_density.y", n) : Vec::Unit(n, 0);
  out.reports.push_back(sde_density_oracle(sc.coefficients, y, sc.domain.t.first, sc.domain.t.second, so));
}

void check_u_mu(const Scenario& sc, const Json& opt, ReportBundle& out) {
  for (const auto& e : modulus_bank(sc, opt)) {
    if (!e.w.dini().finite()) continue;  // U is infinite; nothing to bound
    EstimateReport r = u_mu_bounds_check(e.w, sc.mu, sc.structure);
    tag(r, "[" + e.name + "]");
    out.reports.push_back(r);
  }
}

void check_dyadic(const Scenario& sc, const Json& opt, ReportBundle& out) {
  DyadicOptions d;
  d.samples_per_shell = get_or<std::size_t>(opt, "samples_per_shell", 50000, "dyadic_bounds");
  d.seed = sc.seed;
  GroupPoint xi{Vec::Zero(sc.structure.dim()), 0.0};
  for (const auto& e : modulus_bank(sc, opt)) {
    if (!e.w.dini().finite()) continue;
    EstimateReport r = dyadic_bounds_check(e.w, sc.structure, xi, 0.5, 2.0, d);
    tag(r, "[" + e.name + "]");
    out.reports.push_back(r);
  }
}

void modulus_curves(const Scenario& sc, const Json& opt, ReportBundle& out) {
  for (const auto& e : modulus_bank(sc, opt)) {
    CurveTable tab;
    tab.columns = {"r", "omega", "M", "N", "U", "V"};
    const bool dini = e.w.dini().finite();
    for (double r : logspace(1e-4, 10.0, 21)) {
      double inf = std::numeric_limits<double>::infinity();
      double M = dini ? m_transform(e.w, r) : inf;
      double N = dini ? n_transform(e.w, r) : inf;
      double U = dini ? u_mu_transform(e.w, sc.mu, r, sc.structure) : inf;
      double V = dini && std::isfinite(N) ? v_mu_transform(e.w, sc.mu, r, sc.structure) : inf;
      tab.rows.push_back({r, e.w(r), M, N, U, V});
    }
    out.curves["modulus_" + e.name] = tab;
  }
}

void check_space(const Scenario& sc, const Json&, ReportBundle& out) { out.reports.push_back(schauder_space_check(sc)); }
void check_time(const Scenario& sc, const Json&, ReportBundle& out) { out.reports.push_back(schauder_time_check(sc)); }
void check_model(const Scenario& sc, const Json&, ReportBundle& out) {
  for (auto& r : model_operator_checks(sc)) out.reports.push_back(r);
}
void check_interp(const Scenario& sc, const Json&, ReportBundle& out) {
  out.reports.push_back(interpolation_check(sc, sc.epsilons));
}

void check_sources(const Scenario& sc, const Json& opt, ReportBundle& out) {
  std::size_t n = get_or<std::size_t>(opt, "samples", 20000, "source_modulus");
  for (const auto& src : sc.sources) {
    EstimateReport r;
    r.inequality_id = "source_modulus[" + src.name + "]";
    r.rhs_form = "|g(x,t) - g(y,t)| <= declared modulus(||x - y||)";
    r.c_star = source_modulus_check(src, sc.structure, sc.domain, n, sc.seed);
    r.lhs_max = r.c_star;
    r.stability = 0.0;
    r.samples = n;
    r.seed = sc.seed;
    r.tolerance = sc.tolerance;
    r.details["log_dini"] = src.modulus.log_dini().finite() ? 1.0 : 0.0;
    r.finalize();
    out.reports.push_back(r);
  }
}

const std::vector<std::pair<std::string, CheckFn>>& registry() {
  static const std::vector<std::pair<std::string, CheckFn>> r{
      {"structure_constants", check_structure},
      {"gamma_normalization", check_normalization},
      {"chapman_kolmogorov", check_ck},
      {"lgamma_residual", check_residual},
      {"gaussian_bound", check_gaussian_bound},
      {"mean_value", check_mean_value},
      {"sde_density", check_sde},
      {"u_mu_bounds", check_u_mu},
      {"dyadic_bounds", check_dyadic},
      {"modulus_curves", modulus_curves},
      {"source_modulus", check_sources},
      {"schauder_space", check_space},
      {"schauder_time", check_time},
      {"model_operator", check_model},
      {"interpolation", check_interp},
  };
  return r;
}

std::string sanitize(const std::string& s) {
  std::string o;
  for (char c : s) o += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
  while (!o.empty() && o.back() == '_') o.pop_back();
  return o;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::vector<std::string> known_checks() {
  std::vector<std::string> v;
  for (const auto& [name, fn] : registry()) v.push_back(name);
  return v;
}

bool ReportBundle::all_pass() const {
  return std::all_of(reports.begin(), reports.end(), [](const EstimateReport& r) { return r.pass; });
}

Scenario scenario_from_json(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("config", "top level must be an object");
  Scenario sc;
  sc.name = get_or<std::string>(j, "name", "scenario", "config");
  sc.seed = get_or<std::uint64_t>(j, "seed", 1, "config");
  if (!j.contains("structure")) throw ConfigError("structure", "missing required field");
  sc.structure = structure_from_json(j["structure"]);
  const int n = sc.structure.dim(), q = sc.structure.diffusion_rank();
  if (j.contains("coefficients"))
    sc.coefficients = coefficients_from_json(j["coefficients"], sc.structure);
  else
    sc.coefficients = CoefficientModel::constant(sc.structure, Mat::Identity(q, q));
  sc.domain.x.assign(n, {-1.0, 1.0});
  sc.domain.t = {0.0, 1.0};
  if (j.contains("domain")) {
    const Json& d = j["domain"];
    if (d.contains("x_box")) {
      const Json& b = d["x_box"];
      if (!b.is_array() || static_cast<int>(b.size()) != n) throw ConfigError("domain.x_box", "expected N intervals");
      for (int i = 0; i < n; ++i) {
        Vec iv = vec_from_json(b[i], "domain.x_box[" + std::to_string(i) + "]", 2);
        if (!(iv(1) > iv(0))) throw ConfigError("domain.x_box", "empty interval");
        sc.domain.x[i] = {iv(0), iv(1)};
      }
    }
    sc.domain.t.first = get_or<double>(d, "tau", 0.0, "domain");
    sc.domain.t.second = get_or<double>(d, "T", 1.0, "domain");
    if (!(sc.domain.t.second > sc.domain.t.first)) throw ConfigError("domain.T", "T must exceed tau");
  }
  if (j.contains("grid")) {
    const Json& g = j["grid"];
    std::tie(sc.grid.x_coarse, sc.grid.x_fine) = level_pair(g, "x_points", {sc.grid.x_coarse, sc.grid.x_fine});
    std::tie(sc.grid.t_coarse, sc.grid.t_fine) = level_pair(g, "t_points", {sc.grid.t_coarse, sc.grid.t_fine});
    std::tie(sc.grid.tij_x_coarse, sc.grid.tij_x_fine) =
        level_pair(g, "tij_x_points", {sc.grid.tij_x_coarse, sc.grid.tij_x_fine});
    std::tie(sc.grid.tij_t_coarse, sc.grid.tij_t_fine) =
        level_pair(g, "tij_t_points", {sc.grid.tij_t_coarse, sc.grid.tij_t_fine});
    sc.grid.radii = get_or<int>(g, "radii", sc.grid.radii, "grid");
    if (sc.grid.radii < 2) throw ConfigError("grid.radii", "need at least two radii");
  }
  if (j.contains("sources")) sc.sources = sources_from_json(j["sources"], sc.structure, base_dir);
  if (j.contains("manufactured")) {
    const Json& m = j["manufactured"];
    if (!m.is_array()) throw ConfigError("manufactured", "expected a list");
    for (std::size_t i = 0; i < m.size(); ++i)
      sc.manufactured.push_back(manufactured_from_json(m[i], sc.structure, "manufactured[" + std::to_string(i) + "]"));
  }
  sc.mu = get_or<double>(j, "mu", sc.mu, "config");
  sc.alpha = get_or<double>(j, "alpha", sc.alpha, "config");
  if (!(sc.alpha > 0.0 && sc.alpha < 1.0)) throw ConfigError("alpha", "must lie in (0,1)");
  if (!(sc.mu > 0.0)) throw ConfigError("mu", "must be positive");
  sc.tolerance = get_or<double>(j, "tolerance", sc.tolerance, "config");
  sc.samples = get_or<std::size_t>(j, "samples", sc.samples, "config");
  // sweep defaults for the singular integral: fixed rules, looser budget
  sc.tij.adaptive = false;
  sc.tij.inner_order = 16;
  sc.tij.slice_order = 6;
  sc.tij.max_slices = 40;
  sc.tij.budget = 1e-4;
  if (j.contains("tij")) {
    const Json& t = j["tij"];
    sc.tij.inner_order = get_or<int>(t, "inner_order", sc.tij.inner_order, "tij");
    sc.tij.slice_order = get_or<int>(t, "slice_order", sc.tij.slice_order, "tij");
    sc.tij.max_slices = get_or<int>(t, "max_slices", sc.tij.max_slices, "tij");
    sc.tij.budget = get_or<double>(t, "budget", sc.tij.budget, "tij");
    sc.tij.adaptive = get_or<bool>(t, "adaptive", sc.tij.adaptive, "tij");
  }
  if (j.contains("epsilons")) sc.epsilons = j["epsilons"].get<std::vector<double>>();
  if (j.contains("options")) {
    if (!j["options"].is_object()) throw ConfigError("options", "expected an object");
    sc.check_options = j["options"];
  }
  sc.check_options["base_dir"] = base_dir;
  if (j.contains("checks")) {
    const Json& c = j["checks"];
    if (!c.is_array()) throw ConfigError("checks", "expected a list of names");
    auto known = known_checks();
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!c[i].is_string()) throw ConfigError("checks[" + std::to_string(i) + "]", "expected a name");
      std::string name = c[i].get<std::string>();
      if (std::find(known.begin(), known.end(), name) == known.end())
        throw ConfigError("checks[" + std::to_string(i) + "]", "unknown check '" + name + "'");
      sc.checks.push_back(name);
    }
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  Json j = read_json_file(path);
  // relative data paths resolve against the repository root when the config
  // sits in scenarios/, otherwise against the config's directory
  fs::path dir = fs::path(path).parent_path();
  if (dir.filename() == "scenarios") dir = dir.parent_path();
  if (dir.empty()) dir = ".";
  return scenario_from_json(j, dir.string());
}

ReportBundle run_scenario(const Scenario& sc) {
  if (sc.threads > 0) set_default_threads(sc.threads);
  ReportBundle out;
  out.scenario = sc.name;
  out.seed = sc.seed;
  for (const std::string& name : sc.checks) {
    for (const auto& [id, fn] : registry())
      if (id == name) fn(sc, options_for(sc, name), out);
  }
  return out;
}

ReportBundle run_scenario(const std::string& config_path) { return run_scenario(load_scenario(config_path)); }

void report_write(const ReportBundle& bundle, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "summary.csv");
  summary << "inequality_id,c_star,stability,pass\n";
  Json index = Json::array();
  for (std::size_t i = 0; i < bundle.reports.size(); ++i) {
    const EstimateReport& r = bundle.reports[i];
    std::ostringstream name;
    name << std::setw(2) << std::setfill('0') << i << "_" << sanitize(r.inequality_id) << ".json";
    Json j = report_to_json(r);
    j["scenario"] = bundle.scenario;
    std::ofstream(fs::path(out_dir) / name.str()) << j.dump(2) << "\n";
    summary << r.inequality_id << "," << csv_number(r.c_star) << "," << csv_number(r.stability) << ","
            << (r.pass ? "true" : "false") << "\n";
    index.push_back(name.str());
  }
  if (!bundle.curves.empty()) fs::create_directories(fs::path(out_dir) / "curves");
  for (const auto& [name, tab] : bundle.curves) {
    std::ofstream csv(fs::path(out_dir) / "curves" / (sanitize(name) + ".csv"));
    for (std::size_t c = 0; c < tab.columns.size(); ++c) csv << (c ? "," : "") << tab.columns[c];
    csv << "\n";
    for (const auto& row : tab.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << csv_number(row[c]);
      csv << "\n";
    }
  }
  Json manifest;
  manifest["scenario"] = bundle.scenario;
  manifest["seed"] = bundle.seed;
  manifest["reports"] = index;
  manifest["all_pass"] = bundle.all_pass();
  std::ofstream(fs::path(out_dir) / "manifest.json") << manifest.dump(2) << "\n";
  // the only file allowed to differ between runs
  Json build;
  build["compiler"] = __VERSION__;
  build["cplusplus"] = static_cast<long>(__cplusplus);
  build["threads"] = default_threads();
#ifdef NDEBUG
  build["assertions"] = false;
#else
  build["assertions"] = true;
#endif
  std::ofstream(fs::path(out_dir) / "build_info.json") << build.dump(2) << "\n";
}

}  // namespace kfp
