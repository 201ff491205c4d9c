#include "config_json.hpp"

#include <set>

#include "tscodec/error.hpp"

namespace tscodec::config {

namespace {

class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InvalidArgument(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument(where_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void nested(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it != j_.end()) merge(out, *it);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw InvalidArgument(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const model::ModelConfig& c) {
  return {{"strides", c.strides},
          {"latent_dim", c.latent_dim},
          {"base_channels", c.base_channels},
          {"residual_units_per_block", c.residual_units_per_block},
          {"sample_rate", c.sample_rate}};
}

void merge(model::ModelConfig& c, const Json& j) {
  Reader r(j, "model");
  r.get("strides", c.strides);
  r.get("latent_dim", c.latent_dim);
  r.get("base_channels", c.base_channels);
  r.get("residual_units_per_block", c.residual_units_per_block);
  r.get("sample_rate", c.sample_rate);
  r.finish();
}

Json to_json(const rvq::QuantizerConfig& c) {
  return {{"num_quantizers", c.num_quantizers},
          {"codebook_size", c.codebook_size},
          {"ema_decay", c.ema_decay},
          {"dropout_enabled", c.dropout_enabled},
          {"dead_code_threshold", c.dead_code_threshold},
          {"commitment_weight", c.commitment_weight}};
}

void merge(rvq::QuantizerConfig& c, const Json& j) {
  Reader r(j, "quantizer");
  r.get("num_quantizers", c.num_quantizers);
  r.get("codebook_size", c.codebook_size);
  r.get("ema_decay", c.ema_decay);
  r.get("dropout_enabled", c.dropout_enabled);
  r.get("dead_code_threshold", c.dead_code_threshold);
  r.get("commitment_weight", c.commitment_weight);
  r.finish();
}

Json to_json(const disc::DiscriminatorSetConfig& c) {
  return {{"waveform_scales", c.waveform_scales}, {"layers", c.layers},
          {"channels", c.channels},               {"waveform_kernel", c.waveform_kernel},
          {"waveform_stride", c.waveform_stride}, {"groups", c.groups},
          {"stft_window", c.stft_window},         {"stft_hop", c.stft_hop},
          {"stft_channels", c.stft_channels}};
}

void merge(disc::DiscriminatorSetConfig& c, const Json& j) {
  Reader r(j, "discriminators");
  r.get("waveform_scales", c.waveform_scales);
  r.get("layers", c.layers);
  r.get("channels", c.channels);
  r.get("waveform_kernel", c.waveform_kernel);
  r.get("waveform_stride", c.waveform_stride);
  r.get("groups", c.groups);
  r.get("stft_window", c.stft_window);
  r.get("stft_hop", c.stft_hop);
  r.get("stft_channels", c.stft_channels);
  r.finish();
}

Json to_json(const data::NoiseMixSpec& c) {
  return {{"snr_lo_db", c.snr_lo_db}, {"snr_hi_db", c.snr_hi_db},
          {"insertion_period_s", c.insertion_period_s}, {"peak_target", c.peak_target},
          {"gain_lo", c.gain_lo},     {"gain_hi", c.gain_hi},
          {"crop_s", c.crop_s}};
}

void merge(data::NoiseMixSpec& c, const Json& j) {
  Reader r(j, "mix");
  r.get("snr_lo_db", c.snr_lo_db);
  r.get("snr_hi_db", c.snr_hi_db);
  r.get("insertion_period_s", c.insertion_period_s);
  r.get("peak_target", c.peak_target);
  r.get("gain_lo", c.gain_lo);
  r.get("gain_hi", c.gain_hi);
  r.get("crop_s", c.crop_s);
  r.finish();
}

Json to_json(const losses::SpectralLossConfig& c) {
  return {{"scales", c.scales},   {"epsilon", c.epsilon},         {"n_mels", c.n_mels},
          {"use_mel", c.use_mel}, {"sample_rate", c.sample_rate}};
}

void merge(losses::SpectralLossConfig& c, const Json& j) {
  Reader r(j, "spectral");
  r.get("scales", c.scales);
  r.get("epsilon", c.epsilon);
  r.get("n_mels", c.n_mels);
  r.get("use_mel", c.use_mel);
  r.get("sample_rate", c.sample_rate);
  r.finish();
}

Json to_json(const losses::LossWeights& c) {
  return {{"adv", c.adv}, {"feat", c.feat}, {"dis", c.dis}};
}

void merge(losses::LossWeights& c, const Json& j) {
  Reader r(j, "weights");
  r.get("adv", c.adv);
  r.get("feat", c.feat);
  r.get("dis", c.dis);
  r.finish();
}

Json to_json(const train::StageOneConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"seed", c.seed},
          {"quantizer_dropout", c.quantizer_dropout},
          {"init_factor", c.init_factor},
          {"eval_examples", c.eval_examples},
          {"mix", to_json(c.mix)},
          {"spectral", to_json(c.spectral)}};
}

void merge(train::StageOneConfig& c, const Json& j) {
  Reader r(j, "stage1");
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("seed", c.seed);
  r.get("quantizer_dropout", c.quantizer_dropout);
  r.get("init_factor", c.init_factor);
  r.get("eval_examples", c.eval_examples);
  r.nested("mix", c.mix);
  r.nested("spectral", c.spectral);
  r.finish();
}

Json to_json(const train::StageTwoConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"generator_learning_rate", c.generator_learning_rate},
          {"discriminator_learning_rate", c.discriminator_learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"seed", c.seed},
          {"quantizer_dropout", c.quantizer_dropout},
          {"warm_start", c.warm_start},
          {"weights", to_json(c.weights)},
          {"mix", to_json(c.mix)},
          {"spectral", to_json(c.spectral)}};
}

void merge(train::StageTwoConfig& c, const Json& j) {
  Reader r(j, "stage2");
  r.get("steps", c.steps);
  r.get("batch_size", c.batch_size);
  r.get("generator_learning_rate", c.generator_learning_rate);
  r.get("discriminator_learning_rate", c.discriminator_learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("seed", c.seed);
  r.get("quantizer_dropout", c.quantizer_dropout);
  r.get("warm_start", c.warm_start);
  r.nested("weights", c.weights);
  r.nested("mix", c.mix);
  r.nested("spectral", c.spectral);
  r.finish();
}

Json parse(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace tscodec::config
