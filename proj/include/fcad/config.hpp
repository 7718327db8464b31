#pragma once

#include <string>
#include <vector>

#include "fcad/engine.hpp"

namespace fcad {

/// Parses a run configuration from key-value text with [run], [dataset] and
/// [hard_mining] sections (a TOML subset: sections, scalars, float triples,
/// '#' comments). Missing keys keep their defaults; unknown sections or keys
/// are rejected with ConfigError.
RunConfig parse_run_config(const std::string& text);

/// Reads the file (empty path → all defaults), then applies overrides of the
/// form "key=value" or "section.key=value". Bare keys are routed to the
/// unique section that defines them. Unknown keys are rejected.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

/// Serializes every field; parse_run_config(run_config_to_toml(c)) == c.
std::string run_config_to_toml(const RunConfig& config);

/// Writes the serialized config, creating parent directories.
void write_resolved_config(const RunConfig& config, const std::string& path);

}  // namespace fcad
