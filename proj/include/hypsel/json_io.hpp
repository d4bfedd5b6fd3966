#pragma once

// JSON conversions for the configuration structs. Kept out of the core
// headers so only config-facing code pulls in nlohmann/json.
// Missing keys keep their defaults; unknown keys raise ConfigError.

#include "json.hpp"

#include "hypsel/corpus.hpp"
#include "hypsel/experiment.hpp"

namespace hypsel {

void to_json(nlohmann::json& j, const IntRange& r);
void from_json(const nlohmann::json& j, IntRange& r);
void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);
void to_json(nlohmann::json& j, const ArchConfig& c);
void from_json(const nlohmann::json& j, ArchConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const StageConfig& c);
void from_json(const nlohmann::json& j, StageConfig& c);
void to_json(nlohmann::json& j, const RlConfig& c);
void from_json(const nlohmann::json& j, RlConfig& c);
void to_json(nlohmann::json& j, const DecodeOptions& c);
void from_json(const nlohmann::json& j, DecodeOptions& c);
void to_json(nlohmann::json& j, const SelectorSpec& c);
void from_json(const nlohmann::json& j, SelectorSpec& c);
void to_json(nlohmann::json& j, const SweepSpec& c);
void from_json(const nlohmann::json& j, SweepSpec& c);
void to_json(nlohmann::json& j, const ArmSpec& c);
void from_json(const nlohmann::json& j, ArmSpec& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

}  // namespace hypsel
