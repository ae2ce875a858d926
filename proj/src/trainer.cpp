#include "flare/trainer.hpp"

#include <algorithm>
#include <chrono>

#include "flare/errors.hpp"

namespace flare {

std::vector<TrainSample> materialize_samples(const Cohort& cohort,
                                             std::span<const Subtrajectory> subs,
                                             const Normalizer* norm) {
    std::vector<TrainSample> out;
    out.reserve(subs.size());
    for (const auto& sub : subs) {
        const Trajectory& traj = cohort.trajectories.at(sub.patient);
        TrainSample s;
        s.T = sub.T;
        s.tau = sub.tau;
        s.label = sub.target_label;
        s.has_missing = sub.has_missing();
        s.window.resize(sub.T);
        for (std::size_t k = 0; k < sub.T; ++k) {
            const int want = sub.window_start + static_cast<int>(k);
            auto it = std::lower_bound(traj.visits.begin(), traj.visits.end(), want,
                                       [](const Visit& v, int idx) { return v.index < idx; });
            if (it == traj.visits.end() || it->index != want)
                throw ContractViolation("materialize: window visit " + std::to_string(want) +
                                        " missing from patient " + traj.patient_id);
            if (!it->observed) continue;  // stays unobserved
            auto& v = s.window[k];
            v.observed = true;
            if (norm) {
                v.volumetric = norm->transform(it->volumetric, norm->mean_vol, norm->sd_vol);
                v.demographic = norm->transform(it->demographic, norm->mean_dem, norm->sd_dem);
                v.cognitive = norm->transform(it->cognitive, norm->mean_cog, norm->sd_cog);
            } else {
                v.volumetric = it->volumetric;
                v.demographic = it->demographic;
                v.cognitive = it->cognitive;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<TrainSample> fully_observed(std::span<const TrainSample> samples) {
    std::vector<TrainSample> out;
    for (const auto& s : samples)
        if (!s.has_missing) out.push_back(s);
    return out;
}

double total_loss(const Forecaster& model, std::span<const TrainSample> samples) {
    double total = 0.0;
    for (const auto& s : samples) {
        RolloutTrace trace = model.forward(s.window, s.tau);
        total += model.loss(trace, s.label).total;
    }
    return total;
}

TrainOutcome train_model(Forecaster& model, std::span<const TrainSample> samples,
                         std::size_t epochs, std::size_t batch_size, LoaderScheme scheme,
                         std::uint64_t loader_seed, const AdamConfig& opt,
                         const EpochCallback& on_epoch) {
    if (samples.empty()) throw DataError("train: no training samples");

    TrainOutcome outcome;
    outcome.initial_loss = total_loss(model, samples);
    outcome.best_params = model.params();
    outcome.best_loss = outcome.initial_loss;

    std::vector<std::size_t> lengths(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) lengths[i] = samples[i].T;
    BatchStream stream(lengths, batch_size, scheme, loader_seed);

    for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        stream.start_epoch(epoch);
        EpochLog log;
        log.epoch = epoch;
        Batch batch;
        while (stream.next(batch)) {
            model.params().zero_grads();
            for (std::size_t idx : batch.items) {
                const TrainSample& s = samples[idx];
                RolloutTrace trace = model.forward(s.window, s.tau);
                LossTrace lt;
                const LossBreakdown b = model.loss(trace, s.label, &lt);
                model.backward(trace, lt);
                log.total_loss += b.total;
                log.cel += b.cel;
                log.aux += b.aux;
            }
            model.params().adam_update(opt);
        }
        log.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
        if (outcome.best_epoch == 0 || log.total_loss < outcome.best_loss) {
            outcome.best_epoch = epoch;
            outcome.best_loss = log.total_loss;
            outcome.best_params = model.params();
        }
        outcome.logs.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return outcome;
}

int predict(const Forecaster& model, const TrainSample& sample) {
    const RolloutTrace trace = model.forward(sample.window, sample.tau);
    int best = 0;
    for (int k = 1; k < static_cast<int>(trace.logits.size()); ++k)
        if (trace.logits[static_cast<std::size_t>(k)] >
            trace.logits[static_cast<std::size_t>(best)])
            best = k;
    return best;
}

EvalReport evaluate_model(const Forecaster& model, std::span<const TrainSample> samples,
                          const SampleLimits& limits) {
    ReportBuilder builder(limits);
    for (const auto& s : samples) {
        if (model.kind() == ModelKind::concat && s.has_missing) {
            builder.add_skipped();
            continue;
        }
        builder.accumulate(s.label, predict(model, s), s.T, s.tau);
    }
    return builder.finalize();
}

double train_accuracy(const Forecaster& model, std::span<const TrainSample> samples) {
    std::size_t correct = 0, counted = 0;
    for (const auto& s : samples) {
        if (model.kind() == ModelKind::concat && s.has_missing) continue;
        ++counted;
        if (predict(model, s) == s.label) ++correct;
    }
    if (counted == 0) throw DataError("train_accuracy: no usable samples");
    return static_cast<double>(correct) / static_cast<double>(counted);
}

}  // namespace flare
