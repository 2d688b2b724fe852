#pragma once

#include <string>

#include "json.hpp"
#include "voiceveil/attacks.hpp"
#include "voiceveil/checkpoint.hpp"
#include "voiceveil/encoder.hpp"
#include "voiceveil/generator.hpp"
#include "voiceveil/losses.hpp"
#include "voiceveil/signal.hpp"
#include "voiceveil/training.hpp"

// JSON round trips for every config record, plus the checkpoint bridges used
// by the CLI and the trainer. Missing fields keep their defaults, so partial
// config files act as overrides.

namespace veil::signal {
void to_json(nlohmann::json& j, const StftConfig& c);
void from_json(const nlohmann::json& j, StftConfig& c);
void to_json(nlohmann::json& j, const FbankConfig& c);
void from_json(const nlohmann::json& j, FbankConfig& c);
}  // namespace veil::signal

namespace veil::losses {
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
}  // namespace veil::losses

namespace veil::encoder {
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);
void to_json(nlohmann::json& j, const EncoderTrainConfig& c);
void from_json(const nlohmann::json& j, EncoderTrainConfig& c);
}  // namespace veil::encoder

namespace veil::generator {
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
}  // namespace veil::generator

namespace veil::training {
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
}  // namespace veil::training

namespace veil::attacks {
void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);
}  // namespace veil::attacks

namespace veil::config {

nlohmann::json load_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

// Checkpoint bridges. Loading validates the component tag.

checkpoint::Checkpoint to_checkpoint(const encoder::EncoderModel& m);
encoder::EncoderModel encoder_from_checkpoint(const checkpoint::Checkpoint& c);
encoder::EncoderModel load_encoder(const std::string& path);

checkpoint::Checkpoint to_checkpoint(const generator::PerturbationGenerator& g);
generator::PerturbationGenerator generator_from_checkpoint(const checkpoint::Checkpoint& c);
generator::PerturbationGenerator load_generator(const std::string& path);

/// Copies checkpoint arrays into a parameter store, requiring an exact
/// name/shape match.
void restore_params(nn::ParamStore& store, const std::map<std::string, ad::Mat>& arrays,
                    const std::string& what);

}  // namespace veil::config
