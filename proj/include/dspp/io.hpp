#pragma once

// Run configuration (versioned JSON) and the binary checkpoint container.

#include "dspp/data.hpp"
#include "dspp/models.hpp"
#include "dspp/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dspp {

inline constexpr int kConfigSchemaVersion = 1;

struct DataConfig {
  std::string path;                  // CSV file; empty with `synthetic` set
  std::vector<std::string> targets;  // target column names
  std::string synthetic;             // "sin", "two_blob" or "linear"; used when path is empty
  int synthetic_n = 2000;
  int synthetic_d = 2;
  int synthetic_dy = 2;
  std::uint64_t split_seed = 0;
  int split_index = 0;
  std::string name;                  // dataset label for results
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const DataConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Parses a config document. Missing keys keep their defaults; unknown keys and a missing or
/// unsupported schema_version raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value" to a config document; the value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// ---- checkpoints -------------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'D', 'S', 'P', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedParam> table;
};

/// FNV-1a 64 over the names and shapes of the table.
std::uint64_t schema_hash(const std::vector<NamedParam>& table);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Model parameters plus the standardizer ("data.*" entries); `meta` carries the config.
Checkpoint make_checkpoint(const Model& model, const Standardizer& standardizer, const nlohmann::json& meta);

struct LoadedModel {
  Model model;
  Standardizer standardizer;
  nlohmann::json meta;
};
LoadedModel restore_checkpoint(const Checkpoint& ckpt);

}  // namespace dspp
