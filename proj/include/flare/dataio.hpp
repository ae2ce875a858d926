#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/trajectory.hpp"

namespace flare {

// Sidecar path for a cohort CSV: same name with .manifest.json appended to the stem.
std::string manifest_path_for(const std::string& csv_path);

// Writes the cohort CSV (header id,visit,label,observed,v*,s*,c*; unobserved
// rows leave feature cells empty) plus a JSON manifest. extra_manifest fields
// are merged into the manifest document. Doubles are written loss-free.
void save_cohort(const std::string& csv_path, const Cohort& cohort,
                 const nlohmann::json& extra_manifest = nlohmann::json::object());

Cohort load_cohort(const std::string& csv_path, const std::string& manifest_path);
Cohort load_cohort(const std::string& csv_path);

// Per-feature z-scoring statistics, fitted exclusively on observed visits of
// the training split. Standard deviations are floored at 1e-8.
struct Normalizer {
    Vec mean_vol, sd_vol;
    Vec mean_dem, sd_dem;
    Vec mean_cog, sd_cog;
    std::string fitted_on;

    void apply(Visit& visit) const;
    void apply(Trajectory& traj) const;
    Vec transform(const Vec& x, const Vec& mean, const Vec& sd) const;
};

void to_json(nlohmann::json& j, const Normalizer& n);
void from_json(const nlohmann::json& j, Normalizer& n);

void save_normalizer(const std::string& path, const Normalizer& n);
Normalizer load_normalizer(const std::string& path);

// Fits on the observed visits of exactly the given trajectories.
Normalizer fit_normalizer(std::span<const Trajectory* const> train, std::string fitted_on);
Normalizer fit_normalizer(const Cohort& cohort, std::span<const std::size_t> train_positions,
                          std::string fitted_on);

}  // namespace flare
