#ifndef ADAPTIVE_MM_H
#define ADAPTIVE_MM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2–9 match the command-line exit codes.
 */
typedef enum {
  AMM_STATUS_OK = 0,
  AMM_STATUS_NULL_POINTER = 1,
  AMM_STATUS_CONFIG = 2,
  AMM_STATUS_IO = 3,
  AMM_STATUS_PARSE = 4,
  AMM_STATUS_MODEL = 5,
  AMM_STATUS_INTEGRITY = 6,
  AMM_STATUS_DATA = 7,
  AMM_STATUS_GRID = 8,
  AMM_STATUS_VERIFICATION = 9,
  AMM_STATUS_INVALID_UTF8 = 10,
  AMM_STATUS_PANIC = 11,
} AmmStatus;

/**
 * Opaque catalog handle.
 */
typedef struct AmmCatalog AmmCatalog;

/**
 * Market state for [`amm_quote`].
 */
typedef struct {
  size_t step;
  double reference_price;
  double mid_price;
  double tick;
  double inventory;
  /**
   * Expected price change over the next interval (ignored by martingale
   * catalogs).
   */
  double drift;
  /**
   * Market-order history, most recent pair first, e.g. `"10,01,00"`.
   */
  const char *history;
} AmmState;

typedef struct {
  double ask;
  double bid;
  double spread_ask;
  double spread_bid;
  bool ask_clamped;
  bool bid_clamped;
} AmmQuote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or an empty string. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *amm_last_error(void);

/**
 * Load a catalog file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
AmmStatus amm_catalog_load(const char *path, AmmCatalog **out);

/**
 * Write a catalog file.
 *
 * # Safety
 * `catalog` must come from this library and `path` be NUL-terminated.
 */
AmmStatus amm_catalog_save(const AmmCatalog *catalog, const char *path);

/**
 * Build a martingale catalog on the built-in reference model: reference
 * demand moments with activity-driven arrivals `π± = 0.15 + 0.25·activity`.
 * `scenario` is `"g1"`, `"g2"`, `"g3"` or `"constant"` (lag 1).
 *
 * # Safety
 * `scenario` must be NUL-terminated and `out` valid for writes.
 */
AmmStatus amm_catalog_build_reference(const char *scenario,
                                      size_t n_steps,
                                      double lambda,
                                      double phi,
                                      AmmCatalog **out);

/**
 * Build a catalog from a calibration file. `drift_mode` is 0 for
 * martingale and 1 for one-step drift.
 *
 * # Safety
 * `calibration_path` must be NUL-terminated and `out` valid for writes.
 */
AmmStatus amm_catalog_build_from_calibration(const char *calibration_path,
                                             size_t n_steps,
                                             double lambda,
                                             double phi,
                                             uint32_t drift_mode,
                                             AmmCatalog **out);

/**
 * Release a catalog. Null is ignored.
 *
 * # Safety
 * `catalog` must be null or come from this library and not be used again.
 */
void amm_catalog_free(AmmCatalog *catalog);

/**
 * Last quote step `N` (quotes at `0..=N`); 0 for null.
 *
 * # Safety
 * `catalog` must be null or come from this library.
 */
size_t amm_catalog_n_steps(const AmmCatalog *catalog);

/**
 * Number of scenarios; 0 for null.
 *
 * # Safety
 * `catalog` must be null or come from this library.
 */
size_t amm_catalog_scenario_count(const AmmCatalog *catalog);

/**
 * History length the catalog's scenario map expects; 0 for null.
 *
 * # Safety
 * `catalog` must be null or come from this library.
 */
size_t amm_catalog_lag(const AmmCatalog *catalog);

/**
 * Quote for one market state.
 *
 * # Safety
 * `catalog` must come from this library, `state` and `state.history` be
 * valid, and `out` valid for writes.
 */
AmmStatus amm_quote(const AmmCatalog *catalog,
                    const AmmState *state,
                    bool round_to_tick,
                    AmmQuote *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ADAPTIVE_MM_H */
