#include "kfplab/io.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kfplab/expression.hpp"

namespace kfp {

namespace {

const Json& need(const Json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "." + key, "missing required field");
  return *it;
}

double num(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

double num_or(const Json& j, const std::string& key, double def, const std::string& path) {
  if (!j.contains(key)) return def;
  return num(j[key], path + "." + key);
}

std::string str(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

std::vector<double> num_list(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, "expected an array");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(num(j[i], path + "[" + std::to_string(i) + "]"));
  return v;
}

}  // namespace

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON in ") + path + ": " + e.what());
  }
}

Vec vec_from_json(const Json& j, const std::string& path, int expected) {
  std::vector<double> v = num_list(j, path);
  if (expected >= 0 && static_cast<int>(v.size()) != expected)
    throw ConfigError(path, "expected " + std::to_string(expected) + " entries, got " + std::to_string(v.size()));
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Mat mat_from_json(const Json& j, const std::string& path, int rows, int cols) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of rows");
  const int r = static_cast<int>(j.size());
  if (rows >= 0 && r != rows) throw ConfigError(path, "expected " + std::to_string(rows) + " rows");
  Mat m;
  for (int i = 0; i < r; ++i) {
    std::vector<double> row = num_list(j[i], path + "[" + std::to_string(i) + "]");
    if (i == 0) {
      int c = static_cast<int>(row.size());
      if (cols >= 0 && c != cols) throw ConfigError(path, "expected " + std::to_string(cols) + " columns");
      m.resize(r, c);
    }
    if (static_cast<int>(row.size()) != m.cols()) throw ConfigError(path, "ragged matrix rows");
    for (int k = 0; k < m.cols(); ++k) m(i, k) = row[k];
  }
  return m;
}

ModelStructure structure_from_json(const Json& j, const std::string& path) {
  const Json& mj = need(j, "m", path);
  if (!mj.is_array()) throw ConfigError("m", "expected an array of block sizes");
  std::vector<int> m;
  for (std::size_t i = 0; i < mj.size(); ++i) {
    if (!mj[i].is_number_integer()) throw ConfigError("m", "block sizes must be integers");
    m.push_back(mj[i].get<int>());
  }
  std::vector<Mat> blocks;
  if (j.contains("blocks")) {
    const Json& bj = j["blocks"];
    if (!bj.is_array()) throw ConfigError("blocks", "expected an array of matrices");
    for (std::size_t i = 0; i < bj.size(); ++i)
      blocks.push_back(mat_from_json(bj[i], "blocks[" + std::to_string(i) + "]"));
  }
  return ModelStructure::build(m, blocks);
}

Json structure_to_json(const ModelStructure& s) {
  Json j;
  j["m"] = s.block_sizes();
  j["N"] = s.dim();
  j["Q"] = s.homogeneous_dimension();
  j["exponents"] = s.exponents();
  Json B = Json::array();
  const Mat& b = s.drift_matrix();
  for (int i = 0; i < b.rows(); ++i) {
    Json row = Json::array();
    for (int k = 0; k < b.cols(); ++k) row.push_back(b(i, k));
    B.push_back(row);
  }
  j["B"] = B;
  return j;
}

Modulus modulus_from_json(const Json& j, const std::string& path) {
  std::string family = str(need(j, "family", path), path + ".family");
  try {
    if (family == "zero") return Modulus::zero();
    if (family == "power")
      return Modulus::power(num(need(j, "alpha", path), path + ".alpha"), num_or(j, "scale", 1.0, path));
    if (family == "composite") {
      const Json& tj = need(j, "terms", path);
      if (!tj.is_array()) throw ConfigError(path + ".terms", "expected an array");
      std::vector<ModulusTerm> terms;
      for (std::size_t i = 0; i < tj.size(); ++i) {
        std::string p = path + ".terms[" + std::to_string(i) + "]";
        std::string kind = str(need(tj[i], "kind", p), p + ".kind");
        ModulusTerm t;
        if (kind == "log") t.kind = ModulusTerm::Kind::logarithmic;
        else if (kind == "power") t.kind = ModulusTerm::Kind::power;
        else throw ConfigError(p + ".kind", "expected \"log\" or \"power\"");
        t.scale = num(need(tj[i], "scale", p), p + ".scale");
        t.exponent = num(need(tj[i], "exponent", p), p + ".exponent");
        terms.push_back(t);
      }
      std::string name = j.contains("name") ? str(j["name"], path + ".name") : "composite";
      return composite_modulus(name, terms, num(need(j, "cap", path), path + ".cap"));
    }
    if (family == "tabulated") {
      const Json& gj = need(j, "grid", path);
      if (!gj.is_array()) throw ConfigError(path + ".grid", "expected [[r, w], ...]");
      std::vector<std::pair<double, double>> grid;
      for (std::size_t i = 0; i < gj.size(); ++i) {
        std::vector<double> p = num_list(gj[i], path + ".grid[" + std::to_string(i) + "]");
        if (p.size() != 2) throw ConfigError(path + ".grid", "each entry must be [r, w]");
        grid.emplace_back(p[0], p[1]);
      }
      return Modulus::tabulated("tabulated", grid, num_or(j, "alpha", 0.5, path), num_or(j, "omega0", 0.0, path));
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".family", "unknown modulus family '" + family + "'");
}

CoefficientModel coefficients_from_json(const Json& j, const ModelStructure& s, const std::string& path) {
  const int q = s.diffusion_rank();
  std::string type = str(need(j, "type", path), path + ".type");
  double nu = num_or(j, "nu", 0.0, path);
  CoefficientModel model;
  if (type == "constant") {
    model = CoefficientModel::constant(s, mat_from_json(need(j, "a0", path), path + ".a0", q, q), nu);
  } else if (type == "piecewise") {
    std::vector<double> sw = num_list(need(j, "switch_times", path), path + ".switch_times");
    const Json& aj = need(j, "a0", path);
    if (!aj.is_array()) throw ConfigError(path + ".a0", "expected a list of matrices");
    std::vector<Mat> mats;
    for (std::size_t i = 0; i < aj.size(); ++i)
      mats.push_back(mat_from_json(aj[i], path + ".a0[" + std::to_string(i) + "]", q, q));
    model = CoefficientModel::piecewise(s, sw, mats, nu);
  } else {
    throw ConfigError(path + ".type", "expected \"constant\" or \"piecewise\"");
  }
  if (j.contains("perturbation")) {
    const std::string pp = path + ".perturbation";
    const Json& pj = j["perturbation"];
    const Json& ej = need(pj, "entries", pp);
    if (!ej.is_array() || static_cast<int>(ej.size()) != q) throw ConfigError(pp + ".entries", "expected q rows");
    std::vector<Expression> entries;
    for (int a = 0; a < q; ++a) {
      if (!ej[a].is_array() || static_cast<int>(ej[a].size()) != q)
        throw ConfigError(pp + ".entries", "expected q columns");
      for (int b = 0; b < q; ++b) {
        std::string p = pp + ".entries[" + std::to_string(a) + "][" + std::to_string(b) + "]";
        entries.push_back(Expression::parse(str(ej[a][b], p), s.dim(), p));
      }
    }
    bool ti = pj.value("time_independent", false);
    Modulus w = modulus_from_json(need(pj, "modulus", pp), pp + ".modulus");
    auto fn = [entries, q](const Vec& x, double t) {
      Mat p(q, q);
      for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) p(a, b) = entries[a * q + b](x, t);
      return p;
    };
    model = model.with_perturbation(fn, ti, w);
  }
  return model;
}

SourceSpec source_from_json(const Json& j, const ModelStructure& s, const std::string& path) {
  SourceSpec src;
  src.name = j.contains("name") ? str(j["name"], path + ".name") : "source";
  std::string text = str(need(j, "expression", path), path + ".expression");
  Expression e = Expression::parse(text, s.dim(), path + ".expression");
  src.g = [e](const Vec& x, double t) { return e(x, t); };
  src.constant_in_x = e.constant_in_x();
  src.modulus = modulus_from_json(need(j, "modulus", path), path + ".modulus");
  src.tau = num_or(j, "tau", 0.0, path);
  src.T = num_or(j, "T", 1.0, path);
  if (!(src.T > src.tau)) throw ConfigError(path + ".T", "T must exceed tau");
  if (j.contains("breakpoints")) src.breakpoints = num_list(j["breakpoints"], path + ".breakpoints");
  return src;
}

std::vector<SourceSpec> sources_from_json(const Json& j, const ModelStructure& s, const std::string& base_dir,
                                          const std::string& path) {
  if (j.is_object() && j.contains("file")) {
    std::filesystem::path p(str(j["file"], path + ".file"));
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    return sources_from_json(read_json_file(p.string()), s, base_dir, path);
  }
  if (!j.is_array()) throw ConfigError(path, "expected a list of sources or {\"file\": ...}");
  std::vector<SourceSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(source_from_json(j[i], s, path + "[" + std::to_string(i) + "]"));
  return out;
}

ManufacturedSolution manufactured_from_json(const Json& j, const ModelStructure& s, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  ManufacturedSolution u = ManufacturedSolution::bump(s, num_or(j, "tau", 0.0, path));
  const int n = s.dim();
  if (j.contains("center")) u.center = vec_from_json(j["center"], path + ".center", n);
  if (j.contains("W")) {
    u.W = mat_from_json(j["W"], path + ".W", n, n);
    Eigen::SelfAdjointEigenSolver<Mat> es(u.W);
    if (!u.W.isApprox(u.W.transpose(), 1e-12) || es.eigenvalues().minCoeff() <= 0.0)
      throw ConfigError(path + ".W", "must be symmetric positive definite");
  }
  u.lambda = num_or(j, "lambda", u.lambda, path);
  u.amplitude = num_or(j, "amplitude", u.amplitude, path);
  if (!(u.lambda > 0.0)) throw ConfigError(path + ".lambda", "must be positive");
  return u;
}

Json double_to_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

Json report_to_json(const EstimateReport& r) {
  Json j;
  j["inequality_id"] = r.inequality_id;
  j["rhs_form"] = r.rhs_form;
  j["c_star"] = double_to_json(r.c_star);
  j["stability"] = double_to_json(r.stability);
  j["tolerance"] = r.tolerance;
  j["pass"] = r.pass;
  j["degenerate"] = r.degenerate;
  j["lhs_max"] = double_to_json(r.lhs_max);
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  Json d = Json::object();
  for (const auto& [k, v] : r.details) d[k] = double_to_json(v);
  j["details"] = d;
  Json p = Json::object();
  for (const auto& [k, v] : r.provenance) p[k] = v;
  j["provenance"] = p;
  Json l = Json::array(), rr = Json::array();
  for (double v : r.lhs_samples) l.push_back(double_to_json(v));
  for (double v : r.rhs_samples) rr.push_back(double_to_json(v));
  j["lhs_samples"] = l;
  j["rhs_samples"] = rr;
  j["note"] = "c_star is a reproducibility anchor of this run, not a sharp constant";
  return j;
}

}  // namespace kfp
