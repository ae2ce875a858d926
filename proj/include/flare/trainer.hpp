#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flare/dataio.hpp"
#include "flare/metrics.hpp"
#include "flare/model.hpp"
#include "flare/sampling.hpp"

namespace flare {

// A subtrajectory realized against its cohort: normalized window features
// plus the forecasting target.
struct TrainSample {
    std::vector<VisitInput> window;
    std::size_t T = 0;
    std::size_t tau = 0;
    int label = -1;
    bool has_missing = false;
};

// norm may be null (raw features). Windows are resolved by visit index within
// the sample's trajectory.
std::vector<TrainSample> materialize_samples(const Cohort& cohort,
                                             std::span<const Subtrajectory> subs,
                                             const Normalizer* norm);

// Samples the concat baseline can consume (no unobserved window positions).
std::vector<TrainSample> fully_observed(std::span<const TrainSample> samples);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double total_loss = 0.0;
    double cel = 0.0;
    double aux = 0.0;
    double wall_ms = 0.0;
};

struct TrainOutcome {
    std::vector<EpochLog> logs;
    double initial_loss = 0.0;  // summed over all samples before any update
    std::size_t best_epoch = 0;  // 1-based; 0 when epochs == 0
    double best_loss = 0.0;
    ParamSet best_params;  // snapshot at best_epoch (initialization when epochs == 0)
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Epoch loop: per batch, zero grads, accumulate sample losses and gradients,
// one Adam step. Epoch losses are sums over samples (every sample is visited
// once per epoch under both loader schemes).
TrainOutcome train_model(Forecaster& model, std::span<const TrainSample> samples,
                         std::size_t epochs, std::size_t batch_size, LoaderScheme scheme,
                         std::uint64_t loader_seed, const AdamConfig& opt,
                         const EpochCallback& on_epoch = {});

// Sum of per-sample losses at the current parameters; no gradient work.
double total_loss(const Forecaster& model, std::span<const TrainSample> samples);

int predict(const Forecaster& model, const TrainSample& sample);

// The baseline skips (and counts) windows with missing visits.
EvalReport evaluate_model(const Forecaster& model, std::span<const TrainSample> samples,
                          const SampleLimits& limits);

double train_accuracy(const Forecaster& model, std::span<const TrainSample> samples);

}  // namespace flare
