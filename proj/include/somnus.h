#ifndef SOMNUS_H
#define SOMNUS_H

/* Public C surface of the somnus library. All state lives behind opaque
 * handles; every call reports success through a status code and leaves a
 * human-readable message in somnus_last_error() on failure. */

#ifdef __cplusplus
extern "C" {
#endif

typedef enum somnus_status {
  SOMNUS_OK = 0,
  SOMNUS_INVALID_ARGUMENT = 1,
  SOMNUS_IO_ERROR = 2,
  SOMNUS_CORRUPT_DATA = 3,
  SOMNUS_MISSING_DEPENDENCY = 4,
  SOMNUS_CONTRACT_VIOLATION = 5,
  SOMNUS_INTERNAL = 6
} somnus_status;

typedef struct somnus_config somnus_config;

const char* somnus_version(void);

/* Message for the most recent failing call on this thread; empty after a
 * success. The pointer stays valid until the next API call on the thread. */
const char* somnus_last_error(void);

/* Creates a configuration holding the built-in defaults. */
somnus_status somnus_config_create(somnus_config** out_cfg);
void somnus_config_destroy(somnus_config* cfg);

/* Merges a JSON config file over the current values. Unknown keys and type
 * mismatches are rejected. */
somnus_status somnus_config_load_file(somnus_config* cfg, const char* path);

/* Sets one value by dotted key, e.g. "fusion.mask_ratio". The value string is
 * parsed as JSON where possible and treated as plain text otherwise. */
somnus_status somnus_config_set(somnus_config* cfg, const char* dotted_key,
                                const char* value);

/* Returns the resolved value at a dotted key as JSON text. The pointer is
 * owned by the configuration and stays valid until its next mutating call. */
somnus_status somnus_config_get(somnus_config* cfg, const char* dotted_key,
                                const char** out_json);

/* Runs one pipeline command against the configuration. Commands:
 *   gen-synth          synthesize a raw dataset
 *   preprocess         resample/normalize/filter and cut into labeled epochs
 *   pretrain-backbone  self-supervised pretraining, one model per modality
 *   pretrain-fusion    multimodal fusion pretraining over frozen backbones
 *   train              run the configured evaluation scenario (1, 2, or 3)
 *   evaluate           re-score stored predictions into the results ledger
 *   knn-probe          label-free probe over per-epoch fusion checkpoints
 *   hypnogram          render truth-vs-prediction stage plots
 *   plot-losses        render a pretraining loss curve from a training log
 * Outputs land under the configured out_dir. */
somnus_status somnus_run_command(somnus_config* cfg, const char* command);

#ifdef __cplusplus
}
#endif

#endif /* SOMNUS_H */
