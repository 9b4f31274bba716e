#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "dirrec/trainer.hpp"

namespace dirrec {

/// A training run: hyperparameters plus where to read and write.
struct RunConfig {
  TrainConfig train;
  std::string catalog;
  std::string out = "out";
};

/// Parses `key = value` lines; `#` starts a comment and lists are
/// comma-separated. Every problem found is reported in one InputError.
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

std::string to_config_text(const RunConfig& config);

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace dirrec
