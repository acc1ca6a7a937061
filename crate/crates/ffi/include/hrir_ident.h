#ifndef HRIR_IDENT_H
#define HRIR_IDENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result of every fallible call.
 */
typedef enum HidStatus {
  HID_STATUS_OK = 0,
  HID_STATUS_INVALID_ARGUMENT = 2,
  HID_STATUS_NUMERICAL_FAILURE = 3,
  HID_STATUS_IO = 4,
  HID_STATUS_INTERNAL = 5,
  HID_STATUS_NULL_POINTER = 6,
  HID_STATUS_PANIC = 7,
} HidStatus;

/*
 Per-speaker excitation signals.
 */
typedef struct HidBank HidBank;

/*
 Parameters of the recurrent identifier.
 */
typedef struct HidParams HidParams;

/*
 Microphone signal plus its rotation and noise metadata.
 */
typedef struct HidRecording HidRecording;

/*
 Error trace and stored estimates of one identification run.
 */
typedef struct HidResult HidResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread; empty after a
 successful call. Valid until the next `hid_*` call on the same thread.
 */
const char *hid_last_error_message(void);

/*
 Builds a perfect-sweep excitation bank for `speakers` loudspeakers,
 `taps` identified taps per speaker and `length` samples.

 # Safety
 `out` must be a valid pointer to writable handle storage.
 */
enum HidStatus hid_bank_new(size_t speakers, size_t taps, size_t length, struct HidBank **out);

/*
 # Safety
 `bank` must come from `hid_bank_new` and not be used afterwards.
 */
void hid_bank_free(struct HidBank *bank);

/*
 Regressor width `S * K~`, or 0 for a null handle.

 # Safety
 `bank` must be null or a live handle.
 */
size_t hid_bank_width(const struct HidBank *bank);

/*
 Writes the stacked regressor at time `n` into `out` (`out_len` must equal the width).

 # Safety
 `out` must point to `out_len` writable doubles.
 */
enum HidStatus hid_bank_regressor(const struct HidBank *bank,
                                  size_t n,
                                  double *out,
                                  size_t out_len);

/*
 Wraps an existing microphone signal.

 # Safety
 `samples` must point to `len` readable doubles; `out` must be writable.
 */
enum HidStatus hid_recording_new(const double *samples,
                                 size_t len,
                                 double noise_variance,
                                 double theta0,
                                 double omega,
                                 double sample_rate,
                                 struct HidRecording **out);

/*
 Renders a synthetic scenario through `bank`. `scenario_json` is a
 tagged object such as `{"kind":"static","seed":1,"decay":4.0}`; `taps` is
 the true IR length. A NaN `snr_db` means `noise_variance` is used as is.

 # Safety
 `scenario_json` must be a NUL-terminated string; `out` must be writable.
 */
enum HidStatus hid_recording_synthesize(const struct HidBank *bank,
                                        const char *scenario_json,
                                        size_t taps,
                                        double theta0,
                                        double omega,
                                        double sample_rate,
                                        double snr_db,
                                        double noise_variance,
                                        uint64_t seed,
                                        struct HidRecording **out);

/*
 # Safety
 `recording` must be null or a live handle.
 */
size_t hid_recording_len(const struct HidRecording *recording);

/*
 Noise variance of the recording, NaN for a null handle.

 # Safety
 `recording` must be null or a live handle.
 */
double hid_recording_noise_variance(const struct HidRecording *recording);

/*
 # Safety
 `out` must point to `out_len` writable doubles.
 */
enum HidStatus hid_recording_samples(const struct HidRecording *recording,
                                     double *out,
                                     size_t out_len);

/*
 # Safety
 `recording` must come from this library and not be used afterwards.
 */
void hid_recording_free(struct HidRecording *recording);

/*
 Runs a classical identifier described by `config_json`, e.g.
 `{"algo":"nlms","mu":0.5}`, keeping every `stride`-th estimate.

 # Safety
 Handles must be live; `config_json` NUL-terminated; `out` writable.
 */
enum HidStatus hid_identify_baseline(const struct HidBank *bank,
                                     const struct HidRecording *recording,
                                     const char *config_json,
                                     size_t stride,
                                     struct HidResult **out);

/*
 Identity-initialized parameters for width `d`.

 # Safety
 `out` must be writable.
 */
enum HidStatus hid_params_identity(size_t d, struct HidParams **out);

/*
 Trains the recurrent identifier on the whole recording. A null
 `trainer_json` uses the default settings.

 # Safety
 Handles must be live; `trainer_json` null or NUL-terminated; `out` writable.
 */
enum HidStatus hid_params_train(const struct HidBank *bank,
                                const struct HidRecording *recording,
                                const char *trainer_json,
                                struct HidParams **out);

/*
 Number of scalars in the parameter set, 0 for a null handle.

 # Safety
 `params` must be null or a live handle.
 */
size_t hid_params_count(const struct HidParams *params);

/*
 Copies all parameters in checkpoint order.

 # Safety
 `out` must point to `out_len` writable doubles.
 */
enum HidStatus hid_params_values(const struct HidParams *params, double *out, size_t out_len);

/*
 # Safety
 `params` must come from this library and not be used afterwards.
 */
void hid_params_free(struct HidParams *params);

/*
 Runs the recurrent identifier with fixed parameters from `ĥ = 0`, `c = 0`.

 # Safety
 Handles must be live; `out` writable.
 */
enum HidStatus hid_identify_dnn(const struct HidParams *params,
                                const struct HidBank *bank,
                                const struct HidRecording *recording,
                                size_t stride,
                                struct HidResult **out);

/*
 # Safety
 `result` must be null or a live handle.
 */
size_t hid_result_snapshot_count(const struct HidResult *result);

/*
 Copies snapshot `index`: its frame, azimuth in degrees and the `S * K~` estimate.

 # Safety
 Scalar outputs may be null; `values` must point to `values_len` writable doubles.
 */
enum HidStatus hid_result_snapshot(const struct HidResult *result,
                                   size_t index,
                                   size_t *frame,
                                   double *azimuth,
                                   double *values,
                                   size_t values_len);

/*
 # Safety
 `result` must be null or a live handle.
 */
size_t hid_result_e_trace_len(const struct HidResult *result);

/*
 # Safety
 `out` must point to `out_len` writable doubles.
 */
enum HidStatus hid_result_e_trace(const struct HidResult *result, double *out, size_t out_len);

/*
 # Safety
 `result` must come from this library and not be used afterwards.
 */
void hid_result_free(struct HidResult *result);

/*
 Normalized misalignment in dB over `count` consecutive IR pairs of
 `taps` samples each.

 # Safety
 `truth` and `estimate` must each point to `count * taps` doubles; `out` must be writable.
 */
enum HidStatus hid_normalized_misalignment(const double *truth,
                                           const double *estimate,
                                           size_t taps,
                                           size_t count,
                                           double *out_db);

/*
 Interaural time difference in seconds, positive when the right ear lags.

 # Safety
 `left` and `right` must each point to `len` doubles; `out` must be writable.
 */
enum HidStatus hid_itd(const double *left,
                       const double *right,
                       size_t len,
                       size_t max_lag,
                       double sample_rate,
                       double *out_seconds);

/*
 Null-terminated library version string.
 */
const char *hid_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HRIR_IDENT_H */
