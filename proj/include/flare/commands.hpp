#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flare {

struct SynthArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;  // cohort CSV path
};

struct TrainArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::string models;  // flare | concat | both; empty = use config
};

struct EvalArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string checkpoint;
    std::string normalizer;  // empty = normalizer.json next to the checkpoint
    std::string out_dir;
    std::string split = "test";  // test | train
};

struct GradcheckArgs {
    std::string config;  // optional; model section overrides the built-in tiny shapes
    std::vector<std::string> overrides;
    std::uint64_t seed = 42;
};

struct BucketsArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;  // optional CSV path
};

// Commands throw typed errors (ConfigError, DataError, VerificationError);
// run_cli maps them to exit codes 2 / 3 / 4.
int cmd_synth(const SynthArgs& args);
int cmd_train(const TrainArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_buckets(const BucketsArgs& args);

// args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace flare
