#pragma once

#include <iosfwd>
#include <string>

#include "flowgrad/inverse.hpp"

namespace flowgrad::config {

/// INI text with sections [experiment], [model], [optimizer], [observations],
/// [physics], [newton], [transport], [output]. Unknown sections or keys and
/// malformed values throw ContractError. The result is validated.
inverse::ExperimentConfig parse_config(std::istream& is);
inverse::ExperimentConfig load_config(const std::string& path);

}  // namespace flowgrad::config
