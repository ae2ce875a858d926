#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "flare/rng.hpp"
#include "flare/trajectory.hpp"

namespace flare {

// Augmentation window caps: T in [2, max_T], tau >= 1, T + tau <= max_sum_T_tau.
struct SampleLimits {
    std::size_t max_T = 4;
    std::size_t max_sum_T_tau = 5;

    void validate() const;
    bool admits(std::size_t T, std::size_t tau) const {
        return T >= 2 && T <= max_T && tau >= 1 && T + tau <= max_sum_T_tau;
    }
};

// One augmented training sample: a T-visit window starting at window_start,
// forecasting the stage tau steps past the window's end.
struct Subtrajectory {
    std::size_t patient = 0;  // position within the cohort
    std::string patient_id;
    int window_start = 0;  // visit index of the first window position
    std::size_t T = 0;
    std::size_t tau = 0;
    int target_label = -1;
    std::vector<bool> missing_mask;  // true where the window position is unobserved

    bool has_missing() const;
};

// All admissible windows of one record, ordered by (window_start, T, tau).
// Windows use contiguous visit indices; the first position must be observed
// and the target visit must carry a label. Interior positions may be
// unobserved (they feed the imputation path).
std::vector<Subtrajectory> enumerate_subtrajectories(const Trajectory& traj,
                                                     const SampleLimits& limits,
                                                     std::size_t patient_pos = 0);

std::vector<Subtrajectory> enumerate_cohort(const Cohort& cohort, const SampleLimits& limits,
                                            std::span<const std::size_t> patient_positions);

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

// Patient-level split: seeded shuffle, then a prefix of floor(n * fraction)
// patients goes to train, the rest to test. Returns cohort positions.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_patients(
    const Cohort& cohort, const SplitSpec& spec);

enum class LoaderScheme { uniform_random, per_length };

LoaderScheme loader_scheme_from_string(const std::string& s);
std::string loader_scheme_to_string(LoaderScheme s);

struct Batch {
    std::size_t T = 0;
    std::vector<std::size_t> items;  // indices into the sample span
};

// Epoch-wise stream of T-homogeneous batches over a fixed sample list.
//   uniform_random: each batch draws T uniformly from the lengths that still
//   have samples this epoch; within a length, samples are visited without
//   replacement, reshuffled per epoch.
//   per_length: one pass per length, T ascending, each pass shuffled.
// Incomplete trailing batches are emitted. Deterministic in (seed, epoch).
class BatchStream {
public:
    BatchStream(std::span<const Subtrajectory> samples, std::size_t batch_size,
                LoaderScheme scheme, std::uint64_t seed);
    // lengths_per_sample[i] is sample i's T.
    BatchStream(const std::vector<std::size_t>& lengths_per_sample, std::size_t batch_size,
                LoaderScheme scheme, std::uint64_t seed);

    void start_epoch(std::uint64_t epoch);
    bool next(Batch& out);

    std::size_t epoch_batches() const;  // batch count of the current epoch

private:
    struct Bucket {
        std::size_t T = 0;
        std::vector<std::size_t> order;
        std::size_t cursor = 0;
    };

    std::size_t batch_size_ = 1;
    LoaderScheme scheme_ = LoaderScheme::uniform_random;
    std::uint64_t seed_ = 0;
    std::vector<Bucket> buckets_;  // T ascending
    Rng rng_{0};
    std::size_t pass_ = 0;  // per_length: current bucket
};

// (T, tau) -> sample count, for the augmentation report and bucket accounting.
std::map<std::pair<std::size_t, std::size_t>, std::size_t> bucket_counts(
    std::span<const Subtrajectory> samples);

}  // namespace flare
