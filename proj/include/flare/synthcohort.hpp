#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "flare/rng.hpp"
#include "flare/trajectory.hpp"

namespace flare {

// Generator settings for an ADNI-like cohort: Markov stage paths over
// 6-month steps plus smooth class-conditional features.
struct CohortSpec {
    std::size_t n_patients = 100;
    std::size_t min_visits = 2;
    std::size_t max_visits = 8;
    std::size_t dim_volumetric = 32;  // full-scale runs use 692
    std::size_t dim_demographic = 3;
    std::size_t dim_cognitive = 4;

    // Cohort-level stage mix at the first visit: 805/536/317 of 1658.
    std::array<double, 3> initial_stage_probs = {805.0 / 1658.0, 536.0 / 1658.0, 317.0 / 1658.0};

    // Per-step transitions, row-stochastic, severity never decreases.
    // Defaults put cohort-level transition frequencies near 66 CN->MCI,
    // 318 MCI->AD, 2 CN->AD per ~1658 patients at 4-8 visits.
    std::array<std::array<double, 3>, 3> step_transition = {{
        {1.0 - 0.03 - 0.001, 0.03, 0.001},
        {0.0, 1.0 - 0.08, 0.08},
        {0.0, 0.0, 1.0},
    }};

    double drift_magnitude = 0.35;  // max per-step pull toward the stage mean
    double noise_sd = 0.1;
    double missing_prob = 0.1;  // non-first visits only
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const CohortSpec& spec);
void from_json(const nlohmann::json& j, CohortSpec& spec);

std::uint64_t patient_seed(const CohortSpec& spec, std::size_t patient_index);

// Volumetric drift directions (+1/-1 per feature), fixed per cohort.
std::vector<double> volumetric_directions(const CohortSpec& spec);

// Visit count plus a monotone stage path sampled from the Markov chain.
std::vector<int> sample_stage_path(const CohortSpec& spec, std::uint64_t patient_seed);

// Features for a given path: demographics constant per patient; volumetric and
// cognitive features start at the stage mean and chase it with per-step drift
// capped at drift_magnitude plus Gaussian noise.
Trajectory emit_features(const std::vector<int>& stage_path, const CohortSpec& spec,
                         std::uint64_t patient_seed, const std::vector<double>& vol_dirs);

// Marks each non-first visit unobserved with probability missing_prob,
// clearing its features and keeping its label.
void apply_missingness(Trajectory& traj, double missing_prob, std::uint64_t patient_seed);

Trajectory generate_patient(const CohortSpec& spec, std::size_t patient_index,
                            const std::vector<double>& vol_dirs);

Cohort generate_cohort(const CohortSpec& spec);

}  // namespace flare
