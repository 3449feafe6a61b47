#pragma once

#include "vblab/reconstruct.hpp"
#include "vblab/scenario.hpp"

#include <json.hpp>

#include <string>

namespace vblab {

using Json = nlohmann::json;

/// Doubles are rounded to 12 significant digits before storing so artifact
/// bytes are stable across runs.
double fixed_precision(double v);
Json matrix_to_json(const Mat& m);
Mat matrix_from_json(const Json& j);
Json rational_to_json(const Rational& r);
Rational rational_from_json(const Json& j);

Json config_to_json(const ScenarioConfig& cfg);
/// Strict parse: unknown keys raise ConfigInvalid naming the key path.
ScenarioConfig config_from_json(const Json& j);

Json recovered_to_json(const RecoveredModel& rm);
RecoveredModel recovered_from_json(const Json& j);

Json gram_to_json(const AtomDictionary& dict, const CrossGram& gram);

/// FNV-1a hash of the canonical dump, used for stage resumability.
std::string content_hash(const Json& j);

void write_json(const std::string& path, const Json& j);
Json read_json(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace vblab
