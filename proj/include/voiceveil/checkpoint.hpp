#pragma once

#include <Eigen/Core>

#include <map>
#include <string>

#include "json.hpp"

namespace veil::checkpoint {

using Mat = Eigen::MatrixXd;

inline constexpr uint32_t kSchemaVersion = 1;

/// Versioned container of named parameter arrays plus an architecture config
/// record. The component tag distinguishes encoder, generator, and training
/// state files sharing the format.
struct Checkpoint {
  uint32_t version = kSchemaVersion;
  std::string component;
  nlohmann::json config;
  std::map<std::string, Mat> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

/// Validates magic and schema version before reading anything else.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace veil::checkpoint
