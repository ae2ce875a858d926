#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flare/matrix.hpp"

namespace flare {

std::string stage_to_string(int stage);
int stage_from_string(const std::string& token);  // trims; DataError on unknown token

// One longitudinal visit. index is in 6-month units. Unobserved visits keep
// their label (labels drive targets, features drive inputs) but carry no
// feature vectors.
struct Visit {
    int index = 0;
    bool observed = true;
    std::optional<int> label;
    Vec volumetric;
    Vec demographic;
    Vec cognitive;
};

struct Trajectory {
    std::string patient_id;
    std::vector<Visit> visits;  // sorted by index, indices unique
};

struct Cohort {
    std::size_t dim_volumetric = 0;
    std::size_t dim_demographic = 0;
    std::size_t dim_cognitive = 0;
    std::vector<Trajectory> trajectories;

    std::size_t total_visits() const;
};

}  // namespace flare
