#pragma once

#include <string>

#include <json.hpp>

#include "eirm/analytics.hpp"
#include "eirm/errors.hpp"
#include "eirm/fit.hpp"
#include "eirm/manifest.hpp"
#include "eirm/sim.hpp"
#include "eirm/table.hpp"

namespace eirm {

// Keys keep construction order, so serialized bytes are stable run to run.
using Json = nlohmann::ordered_json;

Json to_json(const RunManifest& m);
Json to_json(const ModelSpec& spec);
Json to_json(const FitResult& fr);
Json to_json(const LrtResult& lrt);
Json to_json(const AnalysisReport& rep);
Json to_json(const TrueParams& truth);
Json to_json(const DescriptiveStats& stats);

// {"error": {"kind": ..., "message": ...}} for the command line surface.
Json error_json(const std::string& kind, const std::string& message);

// Two-space indented serialization with a trailing newline.
std::string json_text(const Json& j);

}  // namespace eirm
