#include "flare/synthcohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "flare/errors.hpp"

namespace flare {

namespace {

// Substreams of the per-patient seed.
constexpr std::uint64_t kPathStream = 1;
constexpr std::uint64_t kFeatureStream = 2;
constexpr std::uint64_t kMissingStream = 3;
// Cohort-level stream; far above any plausible patient index.
constexpr std::uint64_t kDirectionStream = 0xFFFFFFFF00000001ULL;

double severity(int stage) { return static_cast<double>(stage); }

int sample_categorical(const double* probs, std::size_t n, Rng& rng) {
    const double u = rng.next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        cum += probs[i];
        if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(n - 1);
}

}  // namespace

void CohortSpec::validate() const {
    if (n_patients == 0) throw ConfigError("cohort: n_patients must be positive");
    if (min_visits < 1 || min_visits > max_visits)
        throw ConfigError("cohort: need 1 <= min_visits <= max_visits");
    if (dim_volumetric == 0 || dim_demographic == 0 || dim_cognitive == 0)
        throw ConfigError("cohort: all feature dims must be positive");

    double p_sum = 0.0;
    for (double p : initial_stage_probs) {
        if (p < 0.0) throw ConfigError("cohort: initial_stage_probs must be non-negative");
        p_sum += p;
    }
    if (std::abs(p_sum - 1.0) > 1e-12)
        throw ConfigError("cohort: initial_stage_probs must sum to 1");

    for (std::size_t r = 0; r < 3; ++r) {
        double row_sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            if (step_transition[r][c] < 0.0)
                throw ConfigError("cohort: transition probabilities must be non-negative");
            row_sum += step_transition[r][c];
        }
        if (std::abs(row_sum - 1.0) > 1e-12)
            throw ConfigError("cohort: transition matrix rows must sum to 1");
        for (std::size_t c = 0; c < r; ++c)
            if (step_transition[r][c] != 0.0)
                throw ConfigError("cohort: backward stage transitions are not allowed");
    }

    if (drift_magnitude < 0.0) throw ConfigError("cohort: drift_magnitude must be >= 0");
    if (noise_sd < 0.0) throw ConfigError("cohort: noise_sd must be >= 0");
    if (missing_prob < 0.0 || missing_prob >= 1.0)
        throw ConfigError("cohort: missing_prob must be in [0, 1)");
}

void to_json(nlohmann::json& j, const CohortSpec& spec) {
    j = nlohmann::json{{"n_patients", spec.n_patients},
                       {"min_visits", spec.min_visits},
                       {"max_visits", spec.max_visits},
                       {"dim_volumetric", spec.dim_volumetric},
                       {"dim_demographic", spec.dim_demographic},
                       {"dim_cognitive", spec.dim_cognitive},
                       {"initial_stage_probs", spec.initial_stage_probs},
                       {"step_transition", spec.step_transition},
                       {"drift_magnitude", spec.drift_magnitude},
                       {"noise_sd", spec.noise_sd},
                       {"missing_prob", spec.missing_prob},
                       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, CohortSpec& spec) {
    CohortSpec d;
    spec.n_patients = j.value("n_patients", d.n_patients);
    spec.min_visits = j.value("min_visits", d.min_visits);
    spec.max_visits = j.value("max_visits", d.max_visits);
    spec.dim_volumetric = j.value("dim_volumetric", d.dim_volumetric);
    spec.dim_demographic = j.value("dim_demographic", d.dim_demographic);
    spec.dim_cognitive = j.value("dim_cognitive", d.dim_cognitive);
    spec.initial_stage_probs = j.value("initial_stage_probs", d.initial_stage_probs);
    spec.step_transition = j.value("step_transition", d.step_transition);
    spec.drift_magnitude = j.value("drift_magnitude", d.drift_magnitude);
    spec.noise_sd = j.value("noise_sd", d.noise_sd);
    spec.missing_prob = j.value("missing_prob", d.missing_prob);
    if (!j.contains("seed")) throw ConfigError("cohort spec: seed is required");
    spec.seed = j.at("seed").get<std::uint64_t>();
}

std::uint64_t patient_seed(const CohortSpec& spec, std::size_t patient_index) {
    return derive_seed(spec.seed, patient_index);
}

std::vector<double> volumetric_directions(const CohortSpec& spec) {
    Rng rng(derive_seed(spec.seed, kDirectionStream));
    std::vector<double> dirs(spec.dim_volumetric);
    for (auto& d : dirs) d = rng.bernoulli(0.5) ? 1.0 : -1.0;
    return dirs;
}

std::vector<int> sample_stage_path(const CohortSpec& spec, std::uint64_t patient_seed) {
    spec.validate();
    Rng rng(derive_seed(patient_seed, kPathStream));
    const std::size_t n_visits = spec.min_visits + rng.below(spec.max_visits - spec.min_visits + 1);
    std::vector<int> path;
    path.reserve(n_visits);
    int stage = sample_categorical(spec.initial_stage_probs.data(), 3, rng);
    path.push_back(stage);
    for (std::size_t t = 1; t < n_visits; ++t) {
        stage = sample_categorical(spec.step_transition[stage].data(), 3, rng);
        path.push_back(stage);
    }
    return path;
}

Trajectory emit_features(const std::vector<int>& stage_path, const CohortSpec& spec,
                         std::uint64_t patient_seed, const std::vector<double>& vol_dirs) {
    if (stage_path.empty()) throw ContractViolation("emit_features: empty stage path");
    if (vol_dirs.size() != spec.dim_volumetric)
        throw ShapeError("emit_features: direction vector dim mismatch");
    Rng rng(derive_seed(patient_seed, kFeatureStream));

    // Class means: volumetric at severity * direction, cognitive declining
    // with severity so higher stages score lower.
    auto vol_mean = [&](int stage, std::size_t j) { return severity(stage) * vol_dirs[j]; };
    auto cog_mean = [&](int stage) { return -severity(stage); };

    Trajectory traj;
    traj.visits.resize(stage_path.size());

    Vec demographic(spec.dim_demographic);
    for (auto& v : demographic) v = rng.gaussian(0.0, 1.0);

    Vec vol(spec.dim_volumetric), cog(spec.dim_cognitive);
    for (std::size_t j = 0; j < vol.size(); ++j)
        vol[j] = vol_mean(stage_path[0], j) + rng.gaussian(0.0, spec.noise_sd);
    for (std::size_t j = 0; j < cog.size(); ++j)
        cog[j] = cog_mean(stage_path[0]) + rng.gaussian(0.0, spec.noise_sd);

    auto chase = [&](double x, double mean) {
        const double delta =
            std::clamp(mean - x, -spec.drift_magnitude, spec.drift_magnitude);
        return x + delta + rng.gaussian(0.0, spec.noise_sd);
    };

    for (std::size_t t = 0; t < stage_path.size(); ++t) {
        if (t > 0) {
            for (std::size_t j = 0; j < vol.size(); ++j)
                vol[j] = chase(vol[j], vol_mean(stage_path[t], j));
            for (std::size_t j = 0; j < cog.size(); ++j)
                cog[j] = chase(cog[j], cog_mean(stage_path[t]));
        }
        auto& visit = traj.visits[t];
        visit.index = static_cast<int>(t);
        visit.observed = true;
        visit.label = stage_path[t];
        visit.volumetric = vol;
        visit.demographic = demographic;
        visit.cognitive = cog;
    }
    return traj;
}

void apply_missingness(Trajectory& traj, double missing_prob, std::uint64_t patient_seed) {
    if (missing_prob < 0.0 || missing_prob >= 1.0)
        throw ConfigError("apply_missingness: probability must be in [0, 1)");
    Rng rng(derive_seed(patient_seed, kMissingStream));
    for (std::size_t t = 1; t < traj.visits.size(); ++t) {
        if (!rng.bernoulli(missing_prob)) continue;
        auto& visit = traj.visits[t];
        visit.observed = false;
        visit.volumetric.clear();
        visit.demographic.clear();
        visit.cognitive.clear();
    }
}

Trajectory generate_patient(const CohortSpec& spec, std::size_t patient_index,
                            const std::vector<double>& vol_dirs) {
    const std::uint64_t seed = patient_seed(spec, patient_index);
    Trajectory traj = emit_features(sample_stage_path(spec, seed), spec, seed, vol_dirs);
    char id[16];
    std::snprintf(id, sizeof(id), "p%05zu", patient_index);
    traj.patient_id = id;
    apply_missingness(traj, spec.missing_prob, seed);
    return traj;
}

Cohort generate_cohort(const CohortSpec& spec) {
    spec.validate();
    const auto dirs = volumetric_directions(spec);
    Cohort cohort;
    cohort.dim_volumetric = spec.dim_volumetric;
    cohort.dim_demographic = spec.dim_demographic;
    cohort.dim_cognitive = spec.dim_cognitive;
    cohort.trajectories.reserve(spec.n_patients);
    for (std::size_t i = 0; i < spec.n_patients; ++i)
        cohort.trajectories.push_back(generate_patient(spec, i, dirs));
    return cohort;
}

}  // namespace flare
