/* C interface to the UAV bandwidth-market simulator: scenario generation, stability floors, Stackelberg equilibria, and policy training. */

#ifndef SKYMARKET_H
#define SKYMARKET_H

/* Generated by cbindgen from the skymarket-ffi crate; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Length of a scenario digest, including the trailing NUL.
#define SKY_DIGEST_CAP 65

// Result code of every fallible call.
typedef enum SkyStatus {
  // The call succeeded and all out-parameters are valid.
  SkyStatus_Ok = 0,
  // An unexpected internal failure; see `sky_last_error_message`.
  SkyStatus_Internal = 1,
  // An argument violates its documented contract.
  SkyStatus_InvalidArgument = 2,
  // The scenario admits no stable bandwidth allocation.
  SkyStatus_Infeasible = 3,
  // Training diverged; stats hold the stable prefix of the run.
  SkyStatus_Diverged = 4,
  // A required pointer argument was null.
  SkyStatus_NullPointer = 5,
  // A panic was caught at the boundary.
  SkyStatus_Panic = 6,
} SkyStatus;

// Which constraint binds a UAV's posted equilibrium price.
typedef enum SkyPriceCase {
  // The unconstrained profit maximizer is feasible.
  SkyPriceCase_Interior = 0,
  // Capped from above so every user still affords its stability floor.
  SkyPriceCase_StabilityCapped = 1,
  // Floored from below so aggregate demand fits sellable capacity.
  SkyPriceCase_CapacityFloored = 2,
} SkyPriceCase;

// Opaque solved market equilibrium.
typedef struct SkyEquilibrium SkyEquilibrium;

// Opaque generated scenario: geometry, channel, loop model, market ranges.
typedef struct SkyScenario SkyScenario;

// Stability verdict of one user–UAV pair.
typedef struct SkyStabilityReport {
  // Required on-time delivery probability at the pair's initial state.
  double delivery_probability;
  // Time left for communication each period, seconds.
  double latency_budget_s;
  // Smallest bandwidth meeting the budget, Hz; 0 when infeasible.
  double min_bandwidth_hz;
  // Whether any bandwidth satisfies the budget.
  bool feasible;
} SkyStabilityReport;

// Equilibrium outcome of one UAV (bandwidth in MHz).
typedef struct SkyUavOutcome {
  // Posted price per MHz.
  double price;
  // Profit at the equilibrium allocation.
  double leader_utility;
  // Sellable capacity, MHz.
  double capacity_mhz;
  // Total bandwidth sold, MHz.
  double demand_mhz;
  // Number of served users.
  size_t served_users;
  // Binding constraint of the posted price.
  enum SkyPriceCase price_case;
} SkyUavOutcome;

// Equilibrium outcome of one user (bandwidth in MHz).
typedef struct SkyUserOutcome {
  // Index of the serving UAV.
  size_t serving_uav;
  // Purchased bandwidth, MHz.
  double demand_mhz;
  // Stability floor, MHz.
  double kappa_min_mhz;
  // Price paid per MHz.
  double price;
  // Utility at the purchased bandwidth.
  double follower_utility;
  // On-time delivery probability the floor was derived from.
  double delivery_probability;
} SkyUserOutcome;

// Knobs of a training run. Non-positive learning rates select the
// defaults (1e-3).
typedef struct SkyTrainParams {
  // Training epochs (one environment episode each); must be ≥ 1.
  size_t epochs;
  // Steps per episode; must be ≥ 1.
  size_t steps_per_epoch;
  // Seed for network initialization and exploration noise.
  uint64_t seed;
  // Train with the structured-pruning schedule instead of dense.
  bool prune;
  // Actor learning rate; ≤ 0 selects the default.
  double actor_lr;
  // Critic learning rate; ≤ 0 selects the default.
  double critic_lr;
} SkyTrainParams;

// Summary of a training run.
typedef struct SkyTrainStats {
  // Mean per-step reward over the final 20 epochs (or all, if fewer).
  double final_mean_reward;
  // `final_mean_reward` relative to the equilibrium reward ceiling.
  double fraction_of_optimum;
  // Mean hidden-neuron density of the trained networks.
  double final_density;
  // Epochs actually completed (shorter than requested on divergence).
  size_t epochs_run;
} SkyTrainStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static NUL-terminated string.
const char *sky_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `cap − 1` bytes) and returns the full message length in
// bytes, excluding the NUL. Returns 0 when the last call succeeded. `buf`
// may be null to query the length alone.
//
// # Safety
//
// When `buf` is non-null it must point to at least `cap` writable bytes.
size_t sky_last_error_message(char *buf, size_t cap);

// Generates a scenario with `n_uavs` UAVs and `n_users` users. All other
// parameters take their documented defaults, except the per-UAV sellable
// bandwidth, which is pinned to `bandwidth_hz` when positive (pass a
// non-positive value to keep the default range). On success `*out` owns
// the scenario; release it with [`sky_scenario_free`].
//
// # Safety
//
// `out` must be a valid pointer to a `*mut SkyScenario` slot.
enum SkyStatus sky_scenario_new(size_t n_uavs,
                                size_t n_users,
                                double bandwidth_hz,
                                uint64_t seed,
                                struct SkyScenario **out);

// Releases a scenario. Null is a no-op.
//
// # Safety
//
// `scenario` must be null or a pointer obtained from [`sky_scenario_new`]
// that has not been freed already.
void sky_scenario_free(struct SkyScenario *scenario);

// Writes the scenario's hex digest (64 characters plus NUL) into `buf`.
// Equal digests mean byte-identical downstream behavior.
//
// # Safety
//
// `scenario` must be a live scenario handle and `buf` must point to at
// least `cap` writable bytes.
enum SkyStatus sky_scenario_digest(const struct SkyScenario *scenario, char *buf, size_t cap);

// Number of UAVs in a scenario; 0 for a null handle.
//
// # Safety
//
// `scenario` must be null or a live scenario handle.
size_t sky_scenario_n_uavs(const struct SkyScenario *scenario);

// Number of users in a scenario; 0 for a null handle.
//
// # Safety
//
// `scenario` must be null or a live scenario handle.
size_t sky_scenario_n_users(const struct SkyScenario *scenario);

// Runs the stability pipeline for one user–UAV pair at the pair's initial
// tracking state: required delivery probability, latency budget, and the
// bandwidth floor. An infeasible pair is a valid verdict (`feasible`
// false, zero floor), not an error.
//
// # Safety
//
// `scenario` must be a live scenario handle and `out` a valid pointer.
enum SkyStatus sky_stability_floor(const struct SkyScenario *scenario,
                                   size_t user,
                                   size_t uav,
                                   struct SkyStabilityReport *out);

// Solves the Stackelberg equilibrium of a scenario. On success `*out`
// owns the result; release it with [`sky_equilibrium_free`].
//
// # Safety
//
// `scenario` must be a live scenario handle and `out` a valid pointer to
// a `*mut SkyEquilibrium` slot.
enum SkyStatus sky_equilibrium_solve(const struct SkyScenario *scenario,
                                     struct SkyEquilibrium **out);

// Releases an equilibrium. Null is a no-op.
//
// # Safety
//
// `eq` must be null or a pointer obtained from [`sky_equilibrium_solve`]
// that has not been freed already.
void sky_equilibrium_free(struct SkyEquilibrium *eq);

// Number of UAV outcomes in an equilibrium; 0 for a null handle.
//
// # Safety
//
// `eq` must be null or a live equilibrium handle.
size_t sky_equilibrium_n_uavs(const struct SkyEquilibrium *eq);

// Number of user outcomes in an equilibrium; 0 for a null handle.
//
// # Safety
//
// `eq` must be null or a live equilibrium handle.
size_t sky_equilibrium_n_users(const struct SkyEquilibrium *eq);

// Copies the outcome of UAV `idx` into `*out`.
//
// # Safety
//
// `eq` must be a live equilibrium handle and `out` a valid pointer.
enum SkyStatus sky_equilibrium_uav(const struct SkyEquilibrium *eq,
                                   size_t idx,
                                   struct SkyUavOutcome *out);

// Copies the outcome of user `idx` into `*out`.
//
// # Safety
//
// `eq` must be a live equilibrium handle and `out` a valid pointer.
enum SkyStatus sky_equilibrium_user(const struct SkyEquilibrium *eq,
                                    size_t idx,
                                    struct SkyUserOutcome *out);

// Trains the pricing agents on a scenario and summarizes the run. With
// `params.prune` set the default pruning schedule is applied; otherwise
// the networks stay dense. On [`SkyStatus::Diverged`] the stats cover the
// stable prefix of the run (zeros when no epoch completed) so callers can
// still report it.
//
// # Safety
//
// `scenario` must be a live scenario handle and `out` a valid pointer.
enum SkyStatus sky_train_run(const struct SkyScenario *scenario,
                             struct SkyTrainParams params,
                             struct SkyTrainStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKYMARKET_H */
