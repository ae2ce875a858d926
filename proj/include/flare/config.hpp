#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/model.hpp"
#include "flare/sampling.hpp"
#include "flare/synthcohort.hpp"

namespace flare {

struct TrainingConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    LoaderScheme loader_scheme = LoaderScheme::uniform_random;
    std::optional<std::uint64_t> seed;  // mandatory for training runs
    std::size_t checkpoint_every = 0;   // extra periodic checkpoints; 0 = off
    std::string models = "both";        // flare | concat | both
};

struct DataConfig {
    std::string path;                // cohort CSV
    std::optional<CohortSpec> synth; // generated in memory when present
};

struct EvalConfig {
    SampleLimits limits;
    std::string checkpoint = "final";  // final | best
};

struct RunConfig {
    ModelConfig model;
    AdamConfig optimizer;
    TrainingConfig training;
    DataConfig data;
    SplitSpec split;
    EvalConfig eval;

    void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& cfg);
void from_json(const nlohmann::json& j, RunConfig& cfg);

// Reads the JSON config file and applies --set style dotted-path overrides
// ("training.epochs=300"). Override values parse as JSON when possible,
// otherwise they are taken as strings.
nlohmann::json load_config_document(const std::string& path,
                                    const std::vector<std::string>& overrides);

void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig parse_run_config(const nlohmann::json& doc);

}  // namespace flare
