/* C interface of the mfg library. All functions return an mfg_status; on
 * failure mfg_last_error() describes the error of the calling thread. Strings
 * returned through handles stay valid until the handle is freed. */
#ifndef MFG_MFG_H
#define MFG_MFG_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MFG_API __declspec(dllexport)
#else
#define MFG_API __attribute__((visibility("default")))
#endif

typedef enum {
    MFG_OK = 0,
    MFG_ERR_PARSE = 1,
    MFG_ERR_CONFIG = 2,
    MFG_ERR_ARGUMENT = 3,
    MFG_ERR_NUMERICAL = 4,
    MFG_ERR_IO = 5,
    MFG_ERR_INTERNAL = 6
} mfg_status;

typedef struct mfg_scenario mfg_scenario;
typedef struct mfg_result mfg_result;

MFG_API const char* mfg_version(void);
MFG_API const char* mfg_last_error(void);
MFG_API const char* mfg_status_name(mfg_status status);

/* Scenarios */
MFG_API mfg_status mfg_scenario_load_file(const char* path, mfg_scenario** out);
MFG_API mfg_status mfg_scenario_load_text(const char* text, mfg_scenario** out);
MFG_API mfg_status mfg_scenario_clone(const mfg_scenario* s, mfg_scenario** out);
MFG_API void mfg_scenario_free(mfg_scenario* s);
/* "key=value" or "section.key=value"; recorded in reports. */
MFG_API mfg_status mfg_scenario_override(mfg_scenario* s, const char* assignment);
MFG_API mfg_status mfg_scenario_set_seed(mfg_scenario* s, uint64_t seed);
MFG_API uint64_t mfg_scenario_seed(const mfg_scenario* s);
/* Canonical config text and its digest; the pointers live as long as s. */
MFG_API const char* mfg_scenario_text(mfg_scenario* s);
MFG_API const char* mfg_scenario_digest(mfg_scenario* s);

/* Pointwise Hamiltonians. x and z hold n_minor + 1 entries (index 0 is the
 * major player); v_out receives n_minor entries. */
MFG_API double mfg_epsilon_n(int n_minor, double eps_coeff);
MFG_API mfg_status mfg_saddle_point_n(const mfg_scenario* s, int n_minor, const double* x, double y, const double* z,
                                      double* u_out, double* v_out);
MFG_API mfg_status mfg_hamiltonian_n(const mfg_scenario* s, int n_minor, const double* x, double y, const double* z,
                                     double u, const double* v, double* value_out);
MFG_API mfg_status mfg_ubar(const mfg_scenario* s, double time, double x0, double y, double z0, double* u_out);
MFG_API mfg_status mfg_vbar(const mfg_scenario* s, double x0, double x1, double y, double z0, double u, double* v_out);
MFG_API mfg_status mfg_hbar_reduced(const mfg_scenario* s, double time, double x0, double y, double z0,
                                    double* value_out);

/* Runs. Each produces a result holding a JSON document, a CSV table and a pass flag. */
MFG_API mfg_status mfg_run_validate(const mfg_scenario* s, int n_probe, mfg_result** out);
MFG_API mfg_status mfg_run_forward(const mfg_scenario* s, int n_minor, mfg_result** out);
MFG_API mfg_status mfg_run_bsde(const mfg_scenario* s, int n_minor, mfg_result** out);
MFG_API mfg_status mfg_run_saddle(const mfg_scenario* s, int n_minor, mfg_result** out);
MFG_API mfg_status mfg_run_limit(const mfg_scenario* s, mfg_result** out);
MFG_API mfg_status mfg_run_converge(const mfg_scenario* s, const char* study, const int* n_list, size_t n_count, int reps,
                                    mfg_result** out);
MFG_API mfg_status mfg_run_verify(const mfg_scenario* s, int n_minor, int n_perturb, double delta, mfg_result** out);
MFG_API mfg_status mfg_run_crosscheck(const mfg_scenario* s, mfg_result** out);

MFG_API const char* mfg_result_json(const mfg_result* r);
MFG_API const char* mfg_result_csv(const mfg_result* r);
MFG_API int mfg_result_pass(const mfg_result* r);
/* Primary scalar of the run (slope, Y_t, ...); NaN when there is none. */
MFG_API double mfg_result_value(const mfg_result* r);
MFG_API void mfg_result_free(mfg_result* r);

#ifdef __cplusplus
}
#endif

#endif
