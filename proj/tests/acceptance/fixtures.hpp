#pragma once

// Frozen constants for the acceptance gate. Every number here was produced
// once by an independent derivation or a recorded pilot run and is pinned so
// later code changes cannot silently shift the goalposts. Each block says
// where its numbers came from and how to regenerate them.

namespace accept {

// ---------------------------------------------------------------------------
// 1. Scalar-accumulator series anchor.
// Under mu(s) = K s the accumulator's value function is V(s) = -c s^2 with
//   c = (1 + K^2) / (1 - gamma (1 + K)^2),
// so dV/ds(1) = -2c. At K = -0.5, gamma = 0.9: c = 1.25 / 0.775 = 50/31 and
// dV/ds(1) = -100/31.
inline constexpr double kSeriesK = -0.5;
inline constexpr double kSeriesGamma = 0.9;
inline constexpr double kSeriesExpected = -100.0 / 31.0;
inline constexpr double kSeriesRelTol = 1e-4;
inline constexpr int kSeriesFdHorizon = 400;
inline constexpr double kSeriesFdEps = 1e-6;
inline constexpr double kSeriesBudgetSec = 1.0;

// ---------------------------------------------------------------------------
// 2. Closed-form policy gradient vs finite differences.
// The catalogued orbit cases (verify_catalogue) each pin a 1e-4 relative
// gradient tolerance; the criterion needs at least this many cases.
inline constexpr int kClosedFormMinCases = 10;
inline constexpr double kClosedFormBudgetSec = 60.0;

// ---------------------------------------------------------------------------
// 3. k-step agreement under the true model and an exact critic.
// Policies are linear gains chosen so every sampled state keeps actions
// strictly inside the action box (clipping would zero the action path).
// The point-mass gains give closed-loop poles 0.95 and 0.79, stable well
// within the discounted radius requirement sqrt(gamma)^-1.
inline constexpr int kConsistencyStates = 100;
inline constexpr int kConsistencyMaxK = 5;
inline constexpr double kConsistencySpreadTol = 1e-4;
inline constexpr double kConsistencyGamma = 0.9;
inline constexpr double kIntegratorGain = -0.5;
inline constexpr double kIntegratorStateBox = 1.5;
inline constexpr double kLqrGain0 = -1.0;
inline constexpr double kLqrGain1 = -2.5;
inline constexpr double kLqrStateBox = 0.8;
inline constexpr int kLyapunovIterations = 500;
inline constexpr unsigned long long kConsistencySeed = 1234;
inline constexpr double kConsistencyBudgetSec = 60.0;

// ---------------------------------------------------------------------------
// 4. Estimator degeneracies over a real training run (1000 environment
// steps = 5 episodes x 200 on the accumulator).
inline constexpr int kDegenerateEpisodes = 5;
inline constexpr int kDegenerateStepsPerEpisode = 200;
inline constexpr int kDegenerateHidden = 16;
inline constexpr int kDegenerateBatch = 32;
inline constexpr int kDegenerateWarmup = 100;
inline constexpr unsigned long long kDegenerateSeed = 17;

// ---------------------------------------------------------------------------
// 5. Norm-condition sufficiency sweep.
// Random cycle products are rescaled so max(row-sum, column-sum norm) lands
// in [0.05, 0.95] or [1.05, 1.45] — straddling the condition boundary
// without parking on it. Whenever the condition holds, the truncated
// discounted series must agree with the linear solve to 1e-8.
inline constexpr int kLoopTrials = 1000;
inline constexpr double kLoopGamma = 0.9;
inline constexpr double kLoopGapTol = 1e-8;
inline constexpr double kLoopNormLoA = 0.05, kLoopNormHiA = 0.95;
inline constexpr double kLoopNormLoB = 1.05, kLoopNormHiB = 1.45;
inline constexpr unsigned long long kLoopSeed = 99;

// ---------------------------------------------------------------------------
// 6. Network gradients against finite differences.
inline constexpr int kNetTrials = 100;
inline constexpr double kNetRelTol = 1e-5;
inline constexpr double kNetFdEps = 1e-6;
inline constexpr unsigned long long kNetSeed = 7;
inline constexpr double kNetBudgetSec = 30.0;

// ---------------------------------------------------------------------------
// 7. Pendulum swing-up learning fixtures.
// Frozen from a recorded pilot (probe seed 12345, 1000 episodes):
//   - random-policy 90th-percentile return (uniform torque): -934.74
//   - best observed noise-free evaluation mean over trained checkpoints
//     (200 episodes, fixed evaluation stream): -149.58
// The success threshold sits 80% of the way from random to best:
//   -934.74 + 0.8 * (-149.58 + 934.74) = -306.61.
// A seed "reaches" the threshold at the first episode (with at least ten
// episodes recorded) whose trailing-10-episode mean training return exceeds
// the threshold; its cost is the cumulative real steps at that episode.
// Pilot reach steps (5 seeds): one-step {24000,21400,14200,14000,18400},
// ensemble {24200,15600,13400,21800,14800} — all ten reached.
inline constexpr double kPendulumThreshold = -306.61;
inline constexpr double kPendulumRandomP90 = -934.74;
inline constexpr double kPendulumBestKnown = -149.58;
inline constexpr int kPendulumSeeds = 5;
inline constexpr int kPendulumEpisodes = 150;  // x200 steps = 30k real steps
inline constexpr int kPendulumWindow = 10;
inline constexpr int kPendulumMinReachSeeds = 3;   // one-step learner
inline constexpr double kPendulumMedianRatio = 1.25;  // ensemble vs one-step
inline constexpr double kPendulumBudgetSec = 1800.0;

inline const char* kPendulumOneStepCfg =
    "env = pendulum\n"
    "estimator = ddpg\n"
    "gamma = 0.99\n"
    "tau = 0.001\n"
    "actor_lr = 1e-4\n"
    "critic_lr = 1e-3\n"
    "hidden = 64\n"
    "batch_size = 128\n"
    "buffer_capacity = 100000\n"
    "episodes = 150\n"
    "warmup_steps = 1000\n"
    "noise_theta = 0.15\n"
    "noise_sigma = 0.2\n";

inline const char* kPendulumEnsembleCfg =
    "env = pendulum\n"
    "estimator = dvpg\n"
    "rollout_steps = 2\n"
    "lambda = 0.1\n"
    "gamma = 0.99\n"
    "tau = 0.001\n"
    "actor_lr = 1e-4\n"
    "critic_lr = 1e-3\n"
    "reward_lr = 1e-3\n"
    "transition_lr = 1e-3\n"
    "hidden = 64\n"
    "batch_size = 128\n"
    "buffer_capacity = 100000\n"
    "episodes = 150\n"
    "warmup_steps = 1000\n"
    "noise_theta = 0.15\n"
    "noise_sigma = 0.2\n";

// ---------------------------------------------------------------------------
// 8. Myopia witness on the scalar accumulator (gamma = 0.9).
// Analytic anchors, derived once:
//   optimal gain      K* = (1 - sqrt(1 + 4 gamma^2)) / (2 gamma) = -0.588403
//   optimal value     c* = 1.588403,  V_opt = -c* * E[s0^2] = -c* * 4/3
//                     = -2.117871 (starts uniform on [-2, 2], E s^2 = 4/3)
//   horizon-2 stationary gain solves K + gamma (1+K)(1+K^2) = 0:
//                     K_F = -0.536920, value -2.128511 — only 0.50% worse.
// The criterion as drafted demands the horizon-truncated variant be at least
// 10% worse; on this environment that is mathematically impossible (the
// largest achievable stationarity gap is the 0.50% above), so the resolved
// check asserts the direction (strictly worse) and pins both training
// outcomes to pilot fixtures instead. Policies are evaluated noise-free on a
// deterministic 256-point midpoint grid of starts over [-2, 2], horizon 200.
inline constexpr double kMyopiaGamma = 0.9;
inline constexpr int kMyopiaEvalStarts = 256;
inline constexpr int kMyopiaEvalHorizon = 200;
inline constexpr double kMyopiaWithinOptimal = 0.05;  // full estimator clause
inline constexpr double kMyopiaWorseFactor = 1.10;    // truncated-worse margin
// Training recipe and pilot-frozen outcomes (filled by the recorded pilot):
inline constexpr int kMyopiaSeedCount = 3;
inline constexpr unsigned long long kMyopiaSeeds[] = {0, 1, 2};
inline const char* kMyopiaTrainCfg =
    "env = integrator\n"
    "estimator = dvg\n"
    "rollout_steps = 2\n"
    "gamma = 0.9\n"
    "tau = 0.01\n"
    "actor_lr = 3e-4\n"
    "critic_lr = 1e-3\n"
    "reward_lr = 1e-3\n"
    "transition_lr = 1e-3\n"
    "critic_l2 = 0\n"
    "hidden = 64\n"
    "batch_size = 128\n"
    "buffer_capacity = 100000\n"
    "episodes = 300\n"
    "warmup_steps = 500\n"
    "noise_theta = 0.15\n"
    "noise_sigma = 0.15\n";
// Medians over the three seeds, evaluated on the start grid (pilot-frozen).
inline constexpr double kMyopiaPilotFull = 0.0;    // placeholder until pilot
inline constexpr double kMyopiaPilotTrunc = 0.0;   // placeholder until pilot
inline constexpr double kMyopiaPilotBand = 0.20;   // +-20% regression band

// ---------------------------------------------------------------------------
// 9. Learned-model fitting quality.
inline constexpr int kModelTrainSamples = 4096;
inline constexpr int kModelHeldoutSamples = 1024;
inline constexpr int kModelFitSteps = 10000;
inline constexpr int kModelFitBatch = 128;
inline constexpr int kModelHidden = 64;
inline constexpr double kModelLr = 1e-3;
inline constexpr double kModelHeldoutMseTol = 1e-3;
inline constexpr int kModelFrozenSteps = 1500;
inline constexpr double kModelFrozenFactor = 10.0;
inline constexpr unsigned long long kModelSeed = 2024;

}  // namespace accept
