#ifndef TSCODEC_TSCODEC_H
#define TSCODEC_TSCODEC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define TSC_API __declspec(dllexport)
#else
#define TSC_API __attribute__((visibility("default")))
#endif

typedef enum tsc_status {
  TSC_OK = 0,
  TSC_ERR_INVALID_ARGUMENT = 1,
  TSC_ERR_IO = 2,
  TSC_ERR_FORMAT = 3,
  TSC_ERR_VERIFICATION = 4,
  TSC_ERR_RUNTIME = 5,
  TSC_ERR_INTERNAL = 6
} tsc_status;

/* Message for the last failing call on this thread ("" if none). */
TSC_API const char* tsc_last_error(void);
TSC_API const char* tsc_status_name(tsc_status status);
TSC_API const char* tsc_version(void);

/* Releases strings and buffers returned by this library. */
TSC_API void tsc_free(void* p);

/* A trained codec loaded from a checkpoint file. */
typedef struct tsc_codec tsc_codec;

TSC_API tsc_status tsc_codec_load(const char* checkpoint_path, tsc_codec** out);
TSC_API void tsc_codec_free(tsc_codec* codec);

/* JSON: stage, sample_rate, hop, num_quantizers, codebook_size, frame_rate,
   has_perceptual_decoder, encoder_digest, codebook_digest. */
TSC_API tsc_status tsc_codec_info(const tsc_codec* codec, char** json_out);

/* Samples -> bitstream bytes using the first nq quantizer stages. */
TSC_API tsc_status tsc_encode(const tsc_codec* codec, const float* samples, size_t count, int sample_rate,
                              int nq, uint8_t** bytes_out, size_t* size_out);

/* Bitstream bytes -> frames * hop samples. perceptual selects the stage-2 decoder. */
TSC_API tsc_status tsc_decode(const tsc_codec* codec, const uint8_t* bytes, size_t size, int perceptual,
                              float** samples_out, size_t* count_out, int* sample_rate_out);

/* File variants. report_out (optional) receives JSON with frames, nq,
   payload_bits, header_bits and bitrate_bps. */
TSC_API tsc_status tsc_encode_file(const tsc_codec* codec, const char* wav_path, int nq, const char* out_path,
                                   char** report_out);
TSC_API tsc_status tsc_decode_file(const tsc_codec* codec, const char* bitstream_path, int perceptual,
                                   const char* wav_path);

/* key=value lines: si_snr_db, spectral_distance, samples, sample_rate. */
TSC_API tsc_status tsc_eval_files(const char* reference_wav, const char* test_wav, char** report_out);

/* Writes a synthetic corpus and manifest.tsv; returns the manifest path. */
TSC_API tsc_status tsc_synth_data(const char* dir, int clips, double seconds, int sample_rate, uint64_t seed,
                                  double noisy_fraction, char** manifest_out);

/* Called after every training step with a JSON object describing it.
   Return nonzero to cancel training. */
typedef int (*tsc_progress_fn)(const char* step_json, void* user);

/* config_json (may be NULL): {"model": {...}, "quantizer": {...}, "stage1": {...}}.
   summary_out receives JSON with the initial/final held-out distortion. */
TSC_API tsc_status tsc_train_stage1(const char* manifest_path, const char* config_json, uint64_t seed,
                                    const char* checkpoint_out, tsc_progress_fn progress, void* user,
                                    char** summary_out);

/* config_json (may be NULL): {"discriminators": {...}, "stage2": {...}}. */
TSC_API tsc_status tsc_train_stage2(const char* stage1_checkpoint, const char* manifest_path,
                                    const char* config_json, uint64_t seed, const char* checkpoint_out,
                                    tsc_progress_fn progress, void* user, char** summary_out);

/* options_json (may be NULL): {"grid": {...}, "instance": {...}, "inject_fault": bool}.
   passed_out is set to 1 when every check holds. */
TSC_API tsc_status tsc_verify_theory(const char* options_json, char** report_out, int* passed_out);

#ifdef __cplusplus
}
#endif

#endif
