#include "tscodec/tscodec.h"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <new>

#include "config_json.hpp"
#include "tscodec/bitstream.hpp"
#include "tscodec/error.hpp"
#include "tscodec/rdp_oracle.hpp"
#include "tscodec/trainer.hpp"

using namespace tscodec;

struct tsc_codec {
  train::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

tsc_status to_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::kInvalidArgument:
      return TSC_ERR_INVALID_ARGUMENT;
    case ErrorCode::kIo:
      return TSC_ERR_IO;
    case ErrorCode::kFormat:
      return TSC_ERR_FORMAT;
    case ErrorCode::kVerification:
      return TSC_ERR_VERIFICATION;
    case ErrorCode::kRuntime:
      return TSC_ERR_RUNTIME;
  }
  return TSC_ERR_INTERNAL;
}

template <typename F>
tsc_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return TSC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return TSC_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TSC_ERR_INTERNAL;
  }
}

void require(const void* p, const char* name) {
  if (p == nullptr) throw InvalidArgument(std::string(name) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

template <typename T>
T* dup_buffer(const std::vector<T>& v) {
  auto* out = static_cast<T*>(std::malloc(std::max<std::size_t>(1, v.size() * sizeof(T))));
  if (out == nullptr) throw std::bad_alloc();
  if (!v.empty()) std::memcpy(out, v.data(), v.size() * sizeof(T));
  return out;
}

void set_string(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

config::Json parse_optional(const char* text) {
  if (text == nullptr || *text == '\0') return config::Json::object();
  auto j = config::parse(text);
  if (!j.is_object()) throw InvalidArgument("configuration must be a JSON object");
  return j;
}

void reject_unknown(const config::Json& j, std::initializer_list<const char*> allowed, const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument(std::string("unknown ") + what + " key '" + key + "'");
  }
}

std::vector<std::uint8_t> read_bytes(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open ") + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const char* path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(std::string("cannot write ") + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(std::string("write failed for ") + path);
}

struct Encoded {
  std::vector<std::uint8_t> bytes;
  bitstream::Header header;
};

Encoded encode_waveform(const train::Checkpoint& ck, const signal::Waveform& w, int nq) {
  if (w.sample_rate != ck.model.sample_rate) {
    throw InvalidArgument("input sample rate " + std::to_string(w.sample_rate) + " Hz does not match the codec's " +
                          std::to_string(ck.model.sample_rate) + " Hz");
  }
  if (nq < 1 || nq > ck.quantizer.num_quantizers) {
    throw InvalidArgument("nq must be in [1, " + std::to_string(ck.quantizer.num_quantizers) + "]");
  }
  signal::validate(w);
  const model::Encoder<float> enc(ck.model);
  const auto z = model::encode(w, enc, ck.encoder);
  const auto q = rvq::quantize(z, ck.codebook, nq);
  Encoded out;
  out.header.sample_rate = static_cast<std::uint32_t>(ck.model.sample_rate);
  out.header.hop = static_cast<std::uint16_t>(ck.model.total_stride());
  out.header.bits_per_index = static_cast<std::uint8_t>(ck.quantizer.bits_per_index());
  out.bytes = bitstream::pack(q.codes, out.header);
  out.header.nq = static_cast<std::uint8_t>(nq);
  out.header.frames = static_cast<std::uint32_t>(q.codes.frames());
  return out;
}

signal::Waveform decode_bytes(const train::Checkpoint& ck, std::span<const std::uint8_t> bytes, bool perceptual) {
  if (perceptual && !ck.has_perceptual_decoder()) {
    throw InvalidArgument("checkpoint has no perceptual decoder (stage-2 training has not been run)");
  }
  const auto b = bitstream::unpack(bytes);
  const auto& h = b.header;
  if (static_cast<int>(h.sample_rate) != ck.model.sample_rate || h.hop != ck.model.total_stride() ||
      h.bits_per_index != ck.quantizer.bits_per_index()) {
    throw FormatError("bitstream header (" + std::to_string(h.sample_rate) + " Hz, hop " + std::to_string(h.hop) +
                      ", " + std::to_string(h.bits_per_index) + " bits) does not match the checkpoint");
  }
  if (h.nq < 1 || h.nq > ck.quantizer.num_quantizers) throw FormatError("bitstream uses more stages than the codec");
  if (h.frames == 0) return signal::Waveform{{}, ck.model.sample_rate};
  const model::Decoder<float> dec(ck.model);
  const auto z = rvq::dequantize(b.codes, ck.codebook);
  return model::decode(z, dec, perceptual ? ck.decoder_p : ck.decoder_d);
}

config::Json step_json(const train::StepLog& l) {
  config::Json j{{"stage", l.stage},   {"step", l.step},   {"nq", l.nq},       {"l_dis", l.l_dis},
                 {"total", l.total},   {"encoder_digest", model::digest_hex(l.encoder_digest)},
                 {"codebook_digest", model::digest_hex(l.codebook_digest)}};
  if (l.stage == 2) {
    j["l_adv"] = l.l_adv;
    j["l_feat"] = l.l_feat;
    j["l_disc"] = l.l_disc;
  }
  return j;
}

train::ProgressFn progress_adapter(tsc_progress_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const train::StepLog& l) {
    if (fn(step_json(l).dump().c_str(), user) != 0) {
      throw RuntimeFailure("training cancelled at step " + std::to_string(l.step));
    }
  };
}

void check_spectral_rate(const losses::SpectralLossConfig& s, int sample_rate) {
  if (s.sample_rate != sample_rate) {
    throw InvalidArgument("spectral.sample_rate must equal the model sample rate");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

}  // namespace

extern "C" {

const char* tsc_last_error(void) { return g_last_error.c_str(); }

const char* tsc_status_name(tsc_status status) {
  switch (status) {
    case TSC_OK:
      return "ok";
    case TSC_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case TSC_ERR_IO:
      return "io error";
    case TSC_ERR_FORMAT:
      return "format error";
    case TSC_ERR_VERIFICATION:
      return "verification failure";
    case TSC_ERR_RUNTIME:
      return "runtime failure";
    case TSC_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

const char* tsc_version(void) { return "1.0.0"; }

void tsc_free(void* p) { std::free(p); }

tsc_status tsc_codec_load(const char* checkpoint_path, tsc_codec** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = nullptr;
    auto codec = std::make_unique<tsc_codec>();
    codec->ckpt = train::load_checkpoint(checkpoint_path);
    *out = codec.release();
  });
}

void tsc_codec_free(tsc_codec* codec) { delete codec; }

tsc_status tsc_codec_info(const tsc_codec* codec, char** json_out) {
  return guarded([&] {
    require(codec, "codec");
    require(json_out, "json_out");
    const auto& ck = codec->ckpt;
    config::Json j{{"stage", ck.stage},
                   {"step", ck.step},
                   {"sample_rate", ck.model.sample_rate},
                   {"hop", ck.model.total_stride()},
                   {"num_quantizers", ck.quantizer.num_quantizers},
                   {"codebook_size", ck.quantizer.codebook_size},
                   {"frame_rate", ck.model.frame_rate()},
                   {"has_perceptual_decoder", ck.has_perceptual_decoder()},
                   {"encoder_digest", model::digest_hex(ck.encoder_digest())},
                   {"codebook_digest", model::digest_hex(ck.codebook_digest())}};
    *json_out = dup_string(j.dump());
  });
}

tsc_status tsc_encode(const tsc_codec* codec, const float* samples, size_t count, int sample_rate, int nq,
                      uint8_t** bytes_out, size_t* size_out) {
  return guarded([&] {
    require(codec, "codec");
    require(samples, "samples");
    require(bytes_out, "bytes_out");
    require(size_out, "size_out");
    const signal::Waveform w{std::vector<float>(samples, samples + count), sample_rate};
    const auto e = encode_waveform(codec->ckpt, w, nq);
    *bytes_out = dup_buffer(e.bytes);
    *size_out = e.bytes.size();
  });
}

tsc_status tsc_decode(const tsc_codec* codec, const uint8_t* bytes, size_t size, int perceptual,
                      float** samples_out, size_t* count_out, int* sample_rate_out) {
  return guarded([&] {
    require(codec, "codec");
    require(bytes, "bytes");
    require(samples_out, "samples_out");
    require(count_out, "count_out");
    const auto w = decode_bytes(codec->ckpt, std::span<const std::uint8_t>(bytes, size), perceptual != 0);
    *samples_out = dup_buffer(w.samples);
    *count_out = w.samples.size();
    if (sample_rate_out != nullptr) *sample_rate_out = w.sample_rate;
  });
}

tsc_status tsc_encode_file(const tsc_codec* codec, const char* wav_path, int nq, const char* out_path,
                           char** report_out) {
  return guarded([&] {
    require(codec, "codec");
    require(wav_path, "wav_path");
    require(out_path, "out_path");
    const auto w = signal::load_wav(wav_path);
    const auto e = encode_waveform(codec->ckpt, w, nq);
    write_bytes(out_path, e.bytes);
    config::Json j{{"frames", e.header.frames},
                   {"nq", e.header.nq},
                   {"payload_bits", e.header.payload_bits()},
                   {"header_bits", bitstream::kHeaderBytes * 8},
                   {"bitrate_bps", bitstream::payload_bitrate(e.header)},
                   {"seconds", static_cast<double>(e.header.frames) * e.header.hop / e.header.sample_rate}};
    set_string(report_out, j.dump());
  });
}

tsc_status tsc_decode_file(const tsc_codec* codec, const char* bitstream_path, int perceptual, const char* wav_path) {
  return guarded([&] {
    require(codec, "codec");
    require(bitstream_path, "bitstream_path");
    require(wav_path, "wav_path");
    const auto bytes = read_bytes(bitstream_path);
    const auto w = decode_bytes(codec->ckpt, bytes, perceptual != 0);
    signal::save_wav(w, wav_path);
  });
}

tsc_status tsc_eval_files(const char* reference_wav, const char* test_wav, char** report_out) {
  return guarded([&] {
    require(reference_wav, "reference_wav");
    require(test_wav, "test_wav");
    require(report_out, "report_out");
    auto ref = signal::load_wav(reference_wav);
    auto test = signal::load_wav(test_wav);
    if (ref.sample_rate != test.sample_rate) throw InvalidArgument("sample rates differ");
    const std::size_t hop = static_cast<std::size_t>(model::ModelConfig{}.total_stride());
    const std::size_t a = ref.samples.size(), b = test.samples.size();
    if ((a > b ? a - b : b - a) > hop) {
      throw InvalidArgument("lengths differ by more than one hop (" + std::to_string(a) + " vs " +
                            std::to_string(b) + " samples)");
    }
    const std::size_t n = std::min(a, b);
    ref.samples.resize(n);
    test.samples.resize(n);
    losses::SpectralLossConfig spectral;
    spectral.sample_rate = ref.sample_rate;
    const double snr = losses::si_snr(ref.samples, test.samples);
    const double dist = losses::multiscale_spectral_loss(ref, test, spectral);
    char buf[256];
    std::snprintf(buf, sizeof buf, "si_snr_db=%.6f\nspectral_distance=%.9g\nsamples=%zu\nsample_rate=%d\n", snr,
                  dist, n, ref.sample_rate);
    *report_out = dup_string(buf);
  });
}

tsc_status tsc_synth_data(const char* dir, int clips, double seconds, int sample_rate, uint64_t seed,
                          double noisy_fraction, char** manifest_out) {
  return guarded([&] {
    require(dir, "dir");
    if (clips < 1) throw InvalidArgument("clips must be >= 1");
    if (!(seconds > 0.0)) throw InvalidArgument("seconds must be > 0");
    if (sample_rate < 1) throw InvalidArgument("sample_rate must be > 0");
    if (!(noisy_fraction >= 0.0 && noisy_fraction <= 1.0)) throw InvalidArgument("noisy_fraction must be in [0, 1]");
    const auto path = data::write_synth_corpus(dir, static_cast<std::size_t>(clips), seconds, sample_rate, seed,
                                               noisy_fraction);
    set_string(manifest_out, path.string());
  });
}

tsc_status tsc_train_stage1(const char* manifest_path, const char* config_json, uint64_t seed,
                            const char* checkpoint_out, tsc_progress_fn progress, void* user, char** summary_out) {
  return guarded([&] {
    require(manifest_path, "manifest_path");
    require(checkpoint_out, "checkpoint_out");
    const auto j = parse_optional(config_json);
    reject_unknown(j, {"model", "quantizer", "stage1"}, "stage-1 configuration");
    model::ModelConfig m;
    rvq::QuantizerConfig q;
    train::StageOneConfig s;
    if (j.contains("model")) config::merge(m, j["model"]);
    if (j.contains("quantizer")) config::merge(q, j["quantizer"]);
    if (j.contains("stage1")) config::merge(s, j["stage1"]);
    s.seed = seed;
    m.validate();
    check_spectral_rate(s.spectral, m.sample_rate);
    const auto corpus = data::load_manifest(manifest_path, s.mix, m.sample_rate);
    const auto start = std::chrono::steady_clock::now();
    const auto r = train::train_stage1(corpus, m, q, s, progress_adapter(progress, user));
    train::save_checkpoint(r.checkpoint, checkpoint_out);
    config::Json out{{"stage", 1},
                     {"steps", r.log.size()},
                     {"eval_initial", r.eval_initial},
                     {"eval_final", r.eval_final},
                     {"eval_ratio", r.eval_initial > 0.0 ? r.eval_final / r.eval_initial : 0.0},
                     {"first_step_l_dis", r.log.front().l_dis},
                     {"last_step_l_dis", r.log.back().l_dis},
                     {"encoder_digest", model::digest_hex(r.checkpoint.encoder_digest())},
                     {"codebook_digest", model::digest_hex(r.checkpoint.codebook_digest())},
                     {"seconds", seconds_since(start)}};
    set_string(summary_out, out.dump());
  });
}

tsc_status tsc_train_stage2(const char* stage1_checkpoint, const char* manifest_path, const char* config_json,
                            uint64_t seed, const char* checkpoint_out, tsc_progress_fn progress, void* user,
                            char** summary_out) {
  return guarded([&] {
    require(stage1_checkpoint, "stage1_checkpoint");
    require(manifest_path, "manifest_path");
    require(checkpoint_out, "checkpoint_out");
    const auto j = parse_optional(config_json);
    for (const char* fixed : {"model", "quantizer", "stage1"}) {
      if (j.contains(fixed)) {
        throw InvalidArgument(std::string("'") + fixed + "' is fixed by the stage-1 checkpoint and cannot be overridden");
      }
    }
    reject_unknown(j, {"discriminators", "stage2"}, "stage-2 configuration");
    const auto s1 = train::load_checkpoint(stage1_checkpoint);
    disc::DiscriminatorSetConfig d;
    train::StageTwoConfig s;
    s.mix = s1.stage1.mix;
    s.spectral = s1.stage1.spectral;
    if (j.contains("discriminators")) config::merge(d, j["discriminators"]);
    if (j.contains("stage2")) config::merge(s, j["stage2"]);
    s.seed = seed;
    check_spectral_rate(s.spectral, s1.model.sample_rate);
    const auto corpus = data::load_manifest(manifest_path, s.mix, s1.model.sample_rate);
    const auto start = std::chrono::steady_clock::now();
    const auto r = train::train_stage2(s1, corpus, d, s, progress_adapter(progress, user));
    train::save_checkpoint(r.checkpoint, checkpoint_out);

    // Held-out comparison of the two decoders on the same bitstreams.
    const int count = s1.stage1.eval_examples > 0 ? s1.stage1.eval_examples : 8;
    const auto held = train::heldout_examples(corpus, s.mix, seed, count);
    const int nq = s1.quantizer.num_quantizers;
    const double d_d = train::mean_distortion(r.checkpoint, held, nq, false, s.spectral);
    const double d_p = train::mean_distortion(r.checkpoint, held, nq, true, s.spectral);
    const auto& last = r.log.back();
    config::Json out{{"stage", 2},
                     {"steps", r.log.size()},
                     {"last_step", step_json(last)},
                     {"frozen_digests_verified", true},
                     {"encoder_digest", model::digest_hex(r.checkpoint.encoder_digest())},
                     {"codebook_digest", model::digest_hex(r.checkpoint.codebook_digest())},
                     {"heldout_examples", held.size()},
                     {"heldout_distortion_decoder", d_d},
                     {"heldout_distortion_perceptual", d_p},
                     {"seconds", seconds_since(start)}};
    set_string(summary_out, out.dump());
  });
}

tsc_status tsc_verify_theory(const char* options_json, char** report_out, int* passed_out) {
  return guarded([&] {
    require(report_out, "report_out");
    const auto j = parse_optional(options_json);
    reject_unknown(j, {"grid", "instance", "inject_fault"}, "verify-theory option");
    rdp::SweepOptions opt;
    if (j.contains("inject_fault")) opt.inject_fault = j["inject_fault"].get<bool>();
    std::vector<rdp::Instance> instances;
    if (j.contains("instance")) {
      if (j.contains("grid")) throw InvalidArgument("give either a grid or a single instance");
      instances.push_back(rdp::parse_instance_json(j["instance"].dump()));
    } else {
      rdp::GridSpec g;
      if (j.contains("grid")) {
        const auto& gj = j["grid"];
        if (!gj.is_object()) throw InvalidArgument("grid must be an object");
        reject_unknown(gj,
                       {"base_values", "noise_scales", "max_source_support", "max_noise_support", "max_codewords",
                        "pmf_denominator"},
                       "grid");
        try {
          if (gj.contains("base_values")) g.base_values = gj["base_values"].get<std::vector<double>>();
          if (gj.contains("noise_scales")) g.noise_scales = gj["noise_scales"].get<std::vector<double>>();
          if (gj.contains("max_source_support")) g.max_source_support = gj["max_source_support"].get<int>();
          if (gj.contains("max_noise_support")) g.max_noise_support = gj["max_noise_support"].get<int>();
          if (gj.contains("max_codewords")) g.max_codewords = gj["max_codewords"].get<int>();
          if (gj.contains("pmf_denominator")) g.pmf_denominator = gj["pmf_denominator"].get<int>();
        } catch (const nlohmann::json::exception& e) {
          throw InvalidArgument(std::string("grid: ") + e.what());
        }
      }
      instances = rdp::theory_grid(g);
    }
    const auto result = rdp::sweep(instances, opt);
    *report_out = dup_string(rdp::sweep_report_json(result));
    if (passed_out != nullptr) *passed_out = result.passed() ? 1 : 0;
  });
}

}  // extern "C"
