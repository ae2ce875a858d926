#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flare/model.hpp"

namespace flare {

struct BlockCheck {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;  // at the worst index
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<BlockCheck> blocks;
    double max_rel_err = 0.0;
    std::string worst_block;
    double step = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Relative error with an absolute floor: a difference below floor_abs can
// never fail at tolerance tol. Implemented by flooring the denominator at
// floor_abs / tol.
double rel_error(double analytic, double numeric, double tol, double floor_abs);

// Central-difference sweep over every value in params, compared against the
// analytic grads already accumulated in the blocks. loss_fn must recompute the
// same scalar loss from the current parameter values. Parameter values are
// restored bit-exactly.
GradCheckReport check_gradients(ParamSet& params, const std::function<double()>& loss_fn,
                                double step = 1e-5, double tol = 1e-4,
                                double floor_abs = 1e-7);

struct ModelCheckCase {
    ModelKind kind = ModelKind::flare;
    std::size_t T = 2;
    std::size_t tau = 1;
    bool impute_mid = false;
    double alpha = 1.0;
};

std::string describe(const ModelCheckCase& c);

// Small shapes (modality dims 3/2/2, latent 6, hidden 5) so the sweep stays
// fast while every code path is exercised.
ModelConfig tiny_config();

// Deterministic random window for the case; unobserved mid visit when asked.
std::vector<VisitInput> make_check_window(const ModelCheckCase& c, const ModelConfig& cfg,
                                          std::uint64_t seed);

// Builds a tiny-config model plus window and runs the sweep end to end.
GradCheckReport check_model_case(const ModelCheckCase& c, std::uint64_t seed,
                                 double step = 1e-5, double tol = 1e-4,
                                 double floor_abs = 1e-7);
GradCheckReport check_model_case(const ModelCheckCase& c, ModelConfig cfg, std::uint64_t seed,
                                 double step = 1e-5, double tol = 1e-4,
                                 double floor_abs = 1e-7);

// The case matrix the gradcheck command runs: the rollout model over
// (T,tau) in {(2,1),(3,2),(4,1)} x alpha in {0,1} x {observed, imputed mid},
// plus the baseline at each (T,tau).
std::vector<ModelCheckCase> standard_cases();

}  // namespace flare
