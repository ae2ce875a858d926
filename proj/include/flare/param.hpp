#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>

#include "flare/matrix.hpp"

namespace flare {

// A named weight matrix with paired gradient and Adam state, all same shape.
// Gradients accumulate by summation across a batch; zero_grads() resets them.
struct ParamBlock {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;

    ParamBlock(std::string n, std::size_t rows, std::size_t cols)
        : name(std::move(n)),
          value(rows, cols),
          grad(rows, cols),
          adam_m(rows, cols),
          adam_v(rows, cols) {}
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Owns all parameter blocks of one model, in creation order. Blocks live in a
// deque so references stay valid as blocks are added. Single-writer: one
// training loop owns the set; adam updates bump version() which invalidates
// forward traces taken before the update.
class ParamSet {
public:
    ParamBlock& add(const std::string& name, std::size_t rows, std::size_t cols);

    ParamBlock& at(const std::string& name);
    const ParamBlock& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::deque<ParamBlock>& blocks() { return blocks_; }
    const std::deque<ParamBlock>& blocks() const { return blocks_; }

    std::size_t total_values() const;

    void zero_grads();

    // In-place standard Adam with bias correction at the set's own step count.
    void adam_update(const AdamConfig& cfg) { adam_step(*this, cfg, ++step_); }

    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }
    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    // t is the 1-based update count; t == 0 violates the contract.
    friend void adam_step(ParamSet& params, const AdamConfig& cfg, std::uint64_t t);

private:
    std::deque<ParamBlock> blocks_;
    std::unordered_map<std::string, std::size_t> index_;
    std::uint64_t step_ = 0;
    std::uint64_t version_ = 0;
};

void adam_step(ParamSet& params, const AdamConfig& cfg, std::uint64_t t);

// Checkpoint I/O. Format picked by extension: ".json" for a JSON document,
// anything else for the binary layout (bitwise round-trip). Both carry every
// block (value + Adam state), the global step count, and an embedded config
// document supplied by the caller.
void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json);

struct LoadedCheckpoint {
    ParamSet params;
    std::string config_json;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace flare
