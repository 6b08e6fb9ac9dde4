#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "kfplab/kernel.hpp"
#include "kfplab/representation.hpp"

namespace kfp {

using Json = nlohmann::ordered_json;

// All parsers throw ConfigError naming the JSON path of the offending field.
Json read_json_file(const std::string& path);

ModelStructure structure_from_json(const Json& j, const std::string& path = "structure");
Json structure_to_json(const ModelStructure& s);

// {"family": "power", "alpha", "scale"}
// {"family": "composite", "cap", "terms": [{"kind": "log"|"power", "scale", "exponent"}]}
// {"family": "tabulated", "grid": [[r, w], ...], "alpha", "omega0"}
// {"family": "zero"}
Modulus modulus_from_json(const Json& j, const std::string& path = "modulus");

// {"type": "constant", "a0": [[...]]}
// {"type": "piecewise", "switch_times": [...], "a0": [[[...]], ...]}
// optional "nu", and "perturbation": {"entries": [["expr", ...], ...], "time_independent", "modulus"}
CoefficientModel coefficients_from_json(const Json& j, const ModelStructure& s,
                                        const std::string& path = "coefficients");

// {"name", "expression", "modulus", "tau", "T", "breakpoints"}
SourceSpec source_from_json(const Json& j, const ModelStructure& s, const std::string& path = "source");
// A list, or {"file": "relative/path.json"} holding a list.
std::vector<SourceSpec> sources_from_json(const Json& j, const ModelStructure& s, const std::string& base_dir,
                                          const std::string& path = "sources");

// {"center", "W", "lambda", "amplitude", "tau"}; missing fields take the bump defaults.
ManufacturedSolution manufactured_from_json(const Json& j, const ModelStructure& s,
                                            const std::string& path = "manufactured");

Vec vec_from_json(const Json& j, const std::string& path, int expected = -1);
Mat mat_from_json(const Json& j, const std::string& path, int rows = -1, int cols = -1);

Json report_to_json(const EstimateReport& r);
Json double_to_json(double v);  // non-finite values become strings

}  // namespace kfp
