#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "tscodec/tscodec.h"

namespace {

using Json = nlohmann::json;

enum Exit { kOk = 0, kUsage = 1, kVerification = 2, kRuntime = 3 };

int exit_for(tsc_status s) {
  switch (s) {
    case TSC_OK:
      return kOk;
    case TSC_ERR_INVALID_ARGUMENT:
      return kUsage;
    case TSC_ERR_VERIFICATION:
      return kVerification;
    default:
      return kRuntime;
  }
}

int fail(tsc_status s) {
  std::cerr << "error (" << tsc_status_name(s) << "): " << tsc_last_error() << "\n";
  return exit_for(s);
}

struct Owned {
  char* p = nullptr;
  ~Owned() { tsc_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Codec {
  tsc_codec* c = nullptr;
  ~Codec() { tsc_codec_free(c); }
};

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw CLI::ValidationError("--config", e.what());
  }
}

template <typename T>
void set_if(Json& j, const char* section, const char* key, const std::optional<T>& v) {
  if (v) j[section][key] = *v;
}

int progress_printer(const char* step_json, void* user) {
  const int every = *static_cast<int*>(user);
  const auto j = Json::parse(step_json);
  if (every > 0 && j["step"].get<int>() % every == 0) std::cerr << step_json << "\n";
  return 0;
}

struct Common {
  std::uint64_t seed = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speech codec workbench: two-stage training, bitstream coding and theory checks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(tsc_version()));

  int status = kOk;

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic clean/noise corpus and manifest");
  std::string synth_dir;
  int clips = 64;
  double seconds = 1.0, noisy_fraction = 0.5;
  int sample_rate = 24000;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_dir, "Output directory")->required();
  synth->add_option("--clips", clips, "Number of clean clips")->capture_default_str();
  synth->add_option("--seconds", seconds, "Clip duration in seconds")->capture_default_str();
  synth->add_option("--sample-rate", sample_rate, "Sample rate in Hz")->capture_default_str();
  synth->add_option("--noisy-fraction", noisy_fraction, "Share of records paired with noise")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();
  synth->callback([&] {
    Owned manifest;
    const auto s = tsc_synth_data(synth_dir.c_str(), clips, seconds, sample_rate, synth_seed, noisy_fraction,
                                  &manifest.p);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    std::cout << "manifest=" << manifest.str() << "\n";
  });

  // train-stage1
  auto* t1 = app.add_subcommand("train-stage1", "Train encoder, quantizer and distortion decoder");
  std::string t1_manifest, t1_out, t1_config;
  std::uint64_t t1_seed = 0;
  int t1_log = 10;
  std::optional<int> t1_steps, t1_batch, t1_nq, t1_n, t1_latent, t1_base, t1_units, t1_eval, t1_rate;
  std::optional<double> t1_lr, t1_decay;
  std::optional<std::vector<int>> t1_strides;
  bool t1_no_dropout = false;
  t1->add_option("--manifest", t1_manifest, "Training manifest (TSV)")->required();
  t1->add_option("--out", t1_out, "Checkpoint to write")->required();
  t1->add_option("--config", t1_config, "JSON with model/quantizer/stage1 sections");
  t1->add_option("--steps", t1_steps, "Training steps");
  t1->add_option("--batch-size", t1_batch, "Examples per step");
  t1->add_option("--lr", t1_lr, "Adam learning rate");
  t1->add_option("--num-quantizers", t1_nq, "Quantizer stages Nq");
  t1->add_option("--codebook-size", t1_n, "Codewords per stage N");
  t1->add_option("--ema-decay", t1_decay, "Codebook EMA decay");
  t1->add_option("--latent-dim", t1_latent, "Latent dimension");
  t1->add_option("--base-channels", t1_base, "Channels after the input conv");
  t1->add_option("--residual-units", t1_units, "Residual units per block");
  t1->add_option("--strides", t1_strides, "Encoder strides")->delimiter(',');
  t1->add_option("--sample-rate", t1_rate, "Model sample rate");
  t1->add_option("--eval-examples", t1_eval, "Held-out examples scored before and after");
  t1->add_flag("--no-dropout", t1_no_dropout, "Always use all quantizer stages");
  t1->add_option("--log-every", t1_log, "Print every n-th step (0 = silent)")->capture_default_str();
  t1->add_option("--seed", t1_seed, "Random seed")->capture_default_str();
  t1->callback([&] {
    Json cfg = t1_config.empty() ? Json::object() : read_json_file(t1_config);
    set_if(cfg, "stage1", "steps", t1_steps);
    set_if(cfg, "stage1", "batch_size", t1_batch);
    set_if(cfg, "stage1", "learning_rate", t1_lr);
    set_if(cfg, "stage1", "eval_examples", t1_eval);
    if (t1_no_dropout) cfg["stage1"]["quantizer_dropout"] = false;
    set_if(cfg, "quantizer", "num_quantizers", t1_nq);
    set_if(cfg, "quantizer", "codebook_size", t1_n);
    set_if(cfg, "quantizer", "ema_decay", t1_decay);
    set_if(cfg, "model", "latent_dim", t1_latent);
    set_if(cfg, "model", "base_channels", t1_base);
    set_if(cfg, "model", "residual_units_per_block", t1_units);
    set_if(cfg, "model", "strides", t1_strides);
    if (t1_rate) {
      cfg["model"]["sample_rate"] = *t1_rate;
      cfg["stage1"]["spectral"]["sample_rate"] = *t1_rate;
    }
    Owned summary;
    const auto s = tsc_train_stage1(t1_manifest.c_str(), cfg.dump().c_str(), t1_seed, t1_out.c_str(),
                                    progress_printer, &t1_log, &summary.p);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    std::cout << summary.str() << "\n";
  });

  // train-stage2
  auto* t2 = app.add_subcommand("train-stage2", "Train the perceptual decoder with a frozen encoder and codebook");
  std::string t2_stage1, t2_manifest, t2_out, t2_config;
  std::uint64_t t2_seed = 0;
  int t2_log = 10;
  std::optional<int> t2_steps, t2_batch;
  std::optional<double> t2_lr_g, t2_lr_d, t2_adv, t2_feat, t2_dis;
  bool t2_warm = false, t2_no_dropout = false;
  t2->add_option("--stage1", t2_stage1, "Stage-1 checkpoint")->required();
  t2->add_option("--manifest", t2_manifest, "Training manifest (TSV)")->required();
  t2->add_option("--out", t2_out, "Checkpoint to write")->required();
  t2->add_option("--config", t2_config, "JSON with discriminators/stage2 sections");
  t2->add_option("--steps", t2_steps, "Training steps");
  t2->add_option("--batch-size", t2_batch, "Examples per step");
  t2->add_option("--lr-generator", t2_lr_g, "Generator learning rate");
  t2->add_option("--lr-discriminator", t2_lr_d, "Discriminator learning rate");
  t2->add_option("--adv-weight", t2_adv, "Adversarial loss weight");
  t2->add_option("--feat-weight", t2_feat, "Feature matching weight");
  t2->add_option("--dis-weight", t2_dis, "Spectral distortion weight");
  t2->add_flag("--warm-start", t2_warm, "Initialise the perceptual decoder from the distortion decoder");
  t2->add_flag("--no-dropout", t2_no_dropout, "Always use all quantizer stages");
  t2->add_option("--log-every", t2_log, "Print every n-th step (0 = silent)")->capture_default_str();
  t2->add_option("--seed", t2_seed, "Random seed")->capture_default_str();
  t2->callback([&] {
    Json cfg = t2_config.empty() ? Json::object() : read_json_file(t2_config);
    set_if(cfg, "stage2", "steps", t2_steps);
    set_if(cfg, "stage2", "batch_size", t2_batch);
    set_if(cfg, "stage2", "generator_learning_rate", t2_lr_g);
    set_if(cfg, "stage2", "discriminator_learning_rate", t2_lr_d);
    if (t2_adv) cfg["stage2"]["weights"]["adv"] = *t2_adv;
    if (t2_feat) cfg["stage2"]["weights"]["feat"] = *t2_feat;
    if (t2_dis) cfg["stage2"]["weights"]["dis"] = *t2_dis;
    if (t2_warm) cfg["stage2"]["warm_start"] = true;
    if (t2_no_dropout) cfg["stage2"]["quantizer_dropout"] = false;
    Owned summary;
    const auto s = tsc_train_stage2(t2_stage1.c_str(), t2_manifest.c_str(), cfg.dump().c_str(), t2_seed,
                                    t2_out.c_str(), progress_printer, &t2_log, &summary.p);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    std::cout << summary.str() << "\n";
  });

  // encode
  auto* enc = app.add_subcommand("encode", "Encode a WAV file into a bitstream");
  std::string enc_in, enc_ckpt, enc_out;
  int enc_nq = 0;
  std::uint64_t enc_seed = 0;
  enc->add_option("--in", enc_in, "Input WAV")->required();
  enc->add_option("--checkpoint", enc_ckpt, "Trained checkpoint")->required();
  enc->add_option("--out", enc_out, "Bitstream to write")->required();
  enc->add_option("--nq", enc_nq, "Quantizer stages to use (default: all)");
  enc->add_option("--seed", enc_seed, "Unused; encoding is deterministic")->capture_default_str();
  enc->callback([&] {
    Codec codec;
    auto s = tsc_codec_load(enc_ckpt.c_str(), &codec.c);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    int nq = enc_nq;
    if (nq == 0) {
      Owned info;
      tsc_codec_info(codec.c, &info.p);
      nq = Json::parse(info.str())["num_quantizers"].get<int>();
    }
    Owned report;
    s = tsc_encode_file(codec.c, enc_in.c_str(), nq, enc_out.c_str(), &report.p);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    const auto r = Json::parse(report.str());
    std::printf("frames=%d\nnq=%d\npayload_bits=%llu\nbitrate_bps=%.3f\n", r["frames"].get<int>(),
                r["nq"].get<int>(), static_cast<unsigned long long>(r["payload_bits"].get<std::uint64_t>()),
                r["bitrate_bps"].get<double>());
  });

  // decode
  auto* dec = app.add_subcommand("decode", "Decode a bitstream into a WAV file");
  std::string dec_in, dec_ckpt, dec_out, dec_which = "distortion";
  std::uint64_t dec_seed = 0;
  dec->add_option("--in", dec_in, "Bitstream")->required();
  dec->add_option("--checkpoint", dec_ckpt, "Trained checkpoint")->required();
  dec->add_option("--out", dec_out, "WAV to write")->required();
  dec->add_option("--decoder", dec_which, "distortion or perceptual")
      ->check(CLI::IsMember({"distortion", "perceptual"}))
      ->capture_default_str();
  dec->add_option("--seed", dec_seed, "Unused; decoding is deterministic")->capture_default_str();
  dec->callback([&] {
    Codec codec;
    auto s = tsc_codec_load(dec_ckpt.c_str(), &codec.c);
    if (s == TSC_OK) s = tsc_decode_file(codec.c, dec_in.c_str(), dec_which == "perceptual", dec_out.c_str());
    if (s != TSC_OK) status = fail(s);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Compare a test WAV against a reference WAV");
  std::string ev_ref, ev_test;
  std::uint64_t ev_seed = 0;
  ev->add_option("--ref", ev_ref, "Reference WAV")->required();
  ev->add_option("--test", ev_test, "Test WAV")->required();
  ev->add_option("--seed", ev_seed, "Unused; evaluation is deterministic")->capture_default_str();
  ev->callback([&] {
    Owned report;
    const auto s = tsc_eval_files(ev_ref.c_str(), ev_test.c_str(), &report.p);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    std::cout << report.str();
  });

  // verify-theory
  auto* vt = app.add_subcommand("verify-theory", "Exhaustive rate-distortion-perception checks on small sources");
  std::string vt_out, vt_instance;
  std::uint64_t vt_seed = 0;
  std::optional<int> vt_src, vt_noise, vt_m, vt_den;
  std::optional<std::vector<double>> vt_scales, vt_values;
  bool vt_fault = false;
  vt->add_option("--out", vt_out, "Write the JSON report here");
  vt->add_option("--instance", vt_instance, "Check a single instance from a JSON file instead of the grid");
  vt->add_option("--max-source-support", vt_src, "Largest source support");
  vt->add_option("--max-noise-support", vt_noise, "Largest noise support");
  vt->add_option("--max-codewords", vt_m, "Largest codeword budget");
  vt->add_option("--pmf-denominator", vt_den, "pmf grid step is 1/denominator");
  vt->add_option("--noise-scales", vt_scales, "Noise value scales")->delimiter(',');
  vt->add_option("--base-values", vt_values, "Support values before scaling")->delimiter(',');
  vt->add_flag("--inject-fault", vt_fault, "Corrupt the decomposition check (tests failure reporting)");
  vt->add_option("--seed", vt_seed, "Unused; the sweep is exhaustive")->capture_default_str();
  vt->callback([&] {
    Json opt = Json::object();
    if (!vt_instance.empty()) opt["instance"] = read_json_file(vt_instance);
    set_if(opt, "grid", "max_source_support", vt_src);
    set_if(opt, "grid", "max_noise_support", vt_noise);
    set_if(opt, "grid", "max_codewords", vt_m);
    set_if(opt, "grid", "pmf_denominator", vt_den);
    set_if(opt, "grid", "noise_scales", vt_scales);
    set_if(opt, "grid", "base_values", vt_values);
    if (vt_fault) opt["inject_fault"] = true;
    Owned report;
    int passed = 0;
    const auto s = tsc_verify_theory(opt.dump().c_str(), &report.p, &passed);
    if (s != TSC_OK) {
      status = fail(s);
      return;
    }
    if (!vt_out.empty()) {
      std::ofstream out(vt_out);
      out << report.str() << "\n";
      if (!out) {
        std::cerr << "error: cannot write " << vt_out << "\n";
        status = kRuntime;
        return;
      }
    }
    const auto r = Json::parse(report.str());
    std::printf("instances=%zu\ntransfer_failures=%zu\ndecomposition_failures=%zu\nendpoint_failures=%zu\n"
                "seconds=%.3f\npassed=%s\n",
                r["instances"].get<std::size_t>(), r["transfer_failures"].get<std::size_t>(),
                r["decomposition_failures"].get<std::size_t>(), r["endpoint_failures"].get<std::size_t>(),
                r["seconds"].get<double>(), passed ? "true" : "false");
    if (!passed) status = kVerification;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  return status;
}
