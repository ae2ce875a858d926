#include "flare/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include "flare/errors.hpp"

namespace flare {

void SampleLimits::validate() const {
    if (max_T < 2) throw ConfigError("sampling: max_T must be >= 2");
    if (max_sum_T_tau < max_T + 1)
        throw ConfigError("sampling: max_sum_T_tau must leave room for tau >= 1");
}

bool Subtrajectory::has_missing() const {
    return std::find(missing_mask.begin(), missing_mask.end(), true) != missing_mask.end();
}

std::vector<Subtrajectory> enumerate_subtrajectories(const Trajectory& traj,
                                                     const SampleLimits& limits,
                                                     std::size_t patient_pos) {
    limits.validate();
    // Visit index -> position, for contiguous-index window lookups.
    std::unordered_map<int, std::size_t> at;
    at.reserve(traj.visits.size());
    for (std::size_t i = 0; i < traj.visits.size(); ++i) at.emplace(traj.visits[i].index, i);

    std::vector<Subtrajectory> out;
    for (std::size_t i = 0; i < traj.visits.size(); ++i) {
        const Visit& first = traj.visits[i];
        if (!first.observed) continue;
        for (std::size_t T = 2; T <= limits.max_T; ++T) {
            // Window positions first.index .. first.index + T - 1 must all exist.
            bool window_ok = true;
            std::vector<bool> mask(T, false);
            for (std::size_t k = 0; k < T; ++k) {
                auto it = at.find(first.index + static_cast<int>(k));
                if (it == at.end()) {
                    window_ok = false;
                    break;
                }
                mask[k] = !traj.visits[it->second].observed;
            }
            if (!window_ok) continue;
            for (std::size_t tau = 1; T + tau <= limits.max_sum_T_tau; ++tau) {
                auto it = at.find(first.index + static_cast<int>(T - 1 + tau));
                if (it == at.end()) continue;
                const Visit& target = traj.visits[it->second];
                if (!target.label.has_value()) continue;
                Subtrajectory s;
                s.patient = patient_pos;
                s.patient_id = traj.patient_id;
                s.window_start = first.index;
                s.T = T;
                s.tau = tau;
                s.target_label = *target.label;
                s.missing_mask = mask;
                out.push_back(std::move(s));
            }
        }
    }
    return out;
}

std::vector<Subtrajectory> enumerate_cohort(const Cohort& cohort, const SampleLimits& limits,
                                            std::span<const std::size_t> patient_positions) {
    std::vector<Subtrajectory> out;
    for (std::size_t pos : patient_positions) {
        auto samples = enumerate_subtrajectories(cohort.trajectories.at(pos), limits, pos);
        out.insert(out.end(), std::make_move_iterator(samples.begin()),
                   std::make_move_iterator(samples.end()));
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_patients(
    const Cohort& cohort, const SplitSpec& spec) {
    if (cohort.trajectories.empty()) throw DataError("split_patients: empty cohort");
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
        throw ConfigError("split: train_fraction must be in (0, 1)");

    std::vector<std::size_t> order(cohort.trajectories.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(spec.seed, 0x73706c6974ULL));
    rng.shuffle(order);

    const std::size_t n_train = static_cast<std::size_t>(
        static_cast<double>(order.size()) * spec.train_fraction);
    std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> test(order.begin() + n_train, order.end());
    return {std::move(train), std::move(test)};
}

LoaderScheme loader_scheme_from_string(const std::string& s) {
    if (s == "uniform_random") return LoaderScheme::uniform_random;
    if (s == "per_length") return LoaderScheme::per_length;
    throw ConfigError("unknown loader_scheme: " + s + " (expected uniform_random|per_length)");
}

std::string loader_scheme_to_string(LoaderScheme s) {
    return s == LoaderScheme::uniform_random ? "uniform_random" : "per_length";
}

BatchStream::BatchStream(const std::vector<std::size_t>& lengths_per_sample,
                         std::size_t batch_size, LoaderScheme scheme, std::uint64_t seed)
    : batch_size_(batch_size), scheme_(scheme), seed_(seed) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::map<std::size_t, std::vector<std::size_t>> by_T;
    for (std::size_t i = 0; i < lengths_per_sample.size(); ++i)
        by_T[lengths_per_sample[i]].push_back(i);
    for (auto& [T, order] : by_T) {
        Bucket b;
        b.T = T;
        b.order = std::move(order);
        buckets_.push_back(std::move(b));
    }
    start_epoch(0);
}

BatchStream::BatchStream(std::span<const Subtrajectory> samples, std::size_t batch_size,
                         LoaderScheme scheme, std::uint64_t seed)
    : BatchStream(
          [&] {
              std::vector<std::size_t> lengths(samples.size());
              for (std::size_t i = 0; i < samples.size(); ++i) lengths[i] = samples[i].T;
              return lengths;
          }(),
          batch_size, scheme, seed) {}

void BatchStream::start_epoch(std::uint64_t epoch) {
    rng_ = Rng(derive_seed(seed_, epoch));
    for (auto& b : buckets_) {
        b.cursor = 0;
        rng_.shuffle(b.order);
    }
    pass_ = 0;
}

bool BatchStream::next(Batch& out) {
    if (scheme_ == LoaderScheme::per_length) {
        while (pass_ < buckets_.size() && buckets_[pass_].cursor >= buckets_[pass_].order.size())
            ++pass_;
        if (pass_ >= buckets_.size()) return false;
        Bucket& b = buckets_[pass_];
        const std::size_t take = std::min(batch_size_, b.order.size() - b.cursor);
        out.T = b.T;
        out.items.assign(b.order.begin() + b.cursor, b.order.begin() + b.cursor + take);
        b.cursor += take;
        return true;
    }

    // uniform_random: draw T uniformly among lengths with samples remaining.
    std::vector<std::size_t> available;
    for (std::size_t i = 0; i < buckets_.size(); ++i)
        if (buckets_[i].cursor < buckets_[i].order.size()) available.push_back(i);
    if (available.empty()) return false;
    Bucket& b = buckets_[available[rng_.below(available.size())]];
    const std::size_t take = std::min(batch_size_, b.order.size() - b.cursor);
    out.T = b.T;
    out.items.assign(b.order.begin() + b.cursor, b.order.begin() + b.cursor + take);
    b.cursor += take;
    return true;
}

std::size_t BatchStream::epoch_batches() const {
    std::size_t n = 0;
    for (const auto& b : buckets_)
        n += (b.order.size() + batch_size_ - 1) / batch_size_;
    return n;
}

std::map<std::pair<std::size_t, std::size_t>, std::size_t> bucket_counts(
    std::span<const Subtrajectory> samples) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
    for (const auto& s : samples) ++counts[{s.T, s.tau}];
    return counts;
}

}  // namespace flare
