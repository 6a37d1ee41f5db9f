#ifndef THAT_C_API_H
#define THAT_C_API_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define THAT_API __declspec(dllexport)
#else
#define THAT_API __attribute__((visibility("default")))
#endif

/* Return codes. 0 is success; the rest mirror the library's error kinds. */
enum {
  THAT_OK = 0,
  THAT_INVALID_ARGUMENT = 1,
  THAT_SHAPE_MISMATCH = 2,
  THAT_ZERO_NORM = 3,
  THAT_UNSUPPORTED_PRIMITIVE = 4,
  THAT_INVALID_LABEL = 5,
  THAT_EMPTY_NEGATIVES = 6,
  THAT_NOT_A_DISTRIBUTION = 7,
  THAT_ZERO_DIVERGENCE = 8,
  THAT_DIM_MISMATCH = 9,
  THAT_EMPTY_GALLERY = 10,
  THAT_INVALID_K = 11,
  THAT_BAD_MAGIC = 12,
  THAT_TRUNCATED_FILE = 13,
  THAT_COUNT_MISMATCH = 14,
  THAT_IO = 15,
  THAT_CONFIG = 16,
  THAT_INTERNAL = 17,
  THAT_FORMAT = 18
};

enum { THAT_SPLIT_TRAIN = 0, THAT_SPLIT_TEST = 1 };

typedef struct that_config that_config;
typedef struct that_dataset that_dataset;
typedef struct that_model that_model;
typedef struct that_gallery that_gallery;

/* Message of the last failing call on this thread ("" if none). */
THAT_API const char* that_last_error(void);
THAT_API const char* that_error_name(int code);

/* Strings returned through char** out-parameters are owned by the caller. */
THAT_API void that_string_free(char* s);

/* Configuration. */
THAT_API int that_config_new(that_config** out);
THAT_API int that_config_load(const char* path, that_config** out);
THAT_API int that_config_parse(const char* text, that_config** out);
/* "section.key=value" */
THAT_API int that_config_set(that_config* cfg, const char* assignment);
/* Current value of "section.key" as text. */
THAT_API int that_config_get(const that_config* cfg, const char* key, char** value);
/* THAT_<SECTION>_<KEY> environment overrides. */
THAT_API int that_config_apply_env(that_config* cfg);
THAT_API int that_config_validate(const that_config* cfg);
THAT_API int that_config_dump(const that_config* cfg, char** text);
THAT_API void that_config_free(that_config* cfg);

/* Datasets. */
THAT_API int that_dataset_load(const that_config* cfg, int split,
                               that_dataset** out);
THAT_API int that_dataset_read_idx(const char* images, const char* labels,
                                   size_t classes, that_dataset** out);
THAT_API int that_dataset_write_idx(const that_dataset* d, const char* images,
                                    const char* labels, int as_float);
THAT_API int that_dataset_info(const that_dataset* d, size_t* size, size_t* dim,
                               size_t* classes);
/* Copies row `index` into `out` (dim floats) and its label. */
THAT_API int that_dataset_row(const that_dataset* d, size_t index, float* out,
                              int* label);
THAT_API void that_dataset_free(that_dataset* d);

/* Models. A model carries both encoders and, after contrastive training,
 * the memory bank. */
THAT_API int that_model_load(const char* path, that_model** out);
THAT_API int that_model_save(const that_model* m, const char* path);
THAT_API void that_model_free(that_model* m);

/* Natural training of the clean encoder. */
THAT_API int that_train_clean(const that_config* cfg, that_model** out,
                              char** metrics_csv);
/* Trains the robust encoder in the configured mode. Contrastive modes need
 * `clean` (THAT_CONFIG otherwise); other modes ignore it. Epoch checkpoints
 * go to `checkpoint_dir` when it is non-NULL. */
THAT_API int that_train(const that_config* cfg, const that_model* clean,
                        const char* checkpoint_dir, that_model** out,
                        char** metrics_csv);

/* Adversarial versions of `d` under the [eval] attack settings. */
THAT_API int that_attack(const that_config* cfg, const that_model* m,
                         const that_dataset* d, that_dataset** out);

/* Evaluates the [eval] defense against the [eval] attack. Any of the text
 * outputs may be NULL. `gallery` is required for the knn defense. */
THAT_API int that_eval(const that_config* cfg, const that_model* m,
                       const that_dataset* test, const that_gallery* gallery,
                       double* top1, char** report_csv, char** per_class_csv,
                       char** per_sample_csv);

/* Loss surface around test sample `index` per the [surface] section. */
THAT_API int that_surface(const that_config* cfg, const that_model* m,
                          const that_dataset* test, size_t index,
                          double* center, char** grid_csv, char** axes_csv);

/* Galleries of clean-encoder training features. */
THAT_API int that_gallery_build(const that_config* cfg, const that_model* m,
                                const that_dataset* train, that_gallery** out);
THAT_API int that_gallery_save(const that_gallery* g, const char* path);
THAT_API int that_gallery_load(const char* path, that_gallery** out);
THAT_API int that_gallery_size(const that_gallery* g, size_t* size);
THAT_API void that_gallery_free(that_gallery* g);

/* Lower-case hex SHA-256 of a file; `out` must hold 65 bytes. */
THAT_API int that_file_sha256(const char* path, char* out);

#ifdef __cplusplus
}
#endif

#endif
