#pragma once

// JSON mapping for every configuration struct. merge() only touches keys
// that are present and rejects unknown ones, so it serves both for loading
// snapshots and for applying user overrides.

#include <json.hpp>

#include "tscodec/trainer.hpp"

namespace tscodec::config {

using Json = nlohmann::json;

Json to_json(const model::ModelConfig& c);
Json to_json(const rvq::QuantizerConfig& c);
Json to_json(const disc::DiscriminatorSetConfig& c);
Json to_json(const data::NoiseMixSpec& c);
Json to_json(const losses::SpectralLossConfig& c);
Json to_json(const losses::LossWeights& c);
Json to_json(const train::StageOneConfig& c);
Json to_json(const train::StageTwoConfig& c);

void merge(model::ModelConfig& c, const Json& j);
void merge(rvq::QuantizerConfig& c, const Json& j);
void merge(disc::DiscriminatorSetConfig& c, const Json& j);
void merge(data::NoiseMixSpec& c, const Json& j);
void merge(losses::SpectralLossConfig& c, const Json& j);
void merge(losses::LossWeights& c, const Json& j);
void merge(train::StageOneConfig& c, const Json& j);
void merge(train::StageTwoConfig& c, const Json& j);

// Parses text, throwing InvalidArgument with the parser message on failure.
Json parse(const std::string& text);

}  // namespace tscodec::config
