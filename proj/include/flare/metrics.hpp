#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "flare/sampling.hpp"

namespace flare {

// 3x3 counts, rows = true class (CN/MCI/AD), cols = predicted.
struct ConfusionMatrix {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};

    void add(int true_label, int predicted);
    void merge(const ConfusionMatrix& other);
    std::uint64_t total() const;
    std::uint64_t correct() const;
};

// Each row divided by its sum; all-zero rows stay zero.
std::array<std::array<double, 3>, 3> row_normalize(const ConfusionMatrix& cm);

// Per-class precision/recall/F1 with 0/0 defined as 0, macro averages over the
// three classes. Empty matrix yields all zeros.
struct MacroMetrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::array<double, 3> precision{};
    std::array<double, 3> recall{};
    std::array<double, 3> f1{};
};

MacroMetrics compute_metrics(const ConfusionMatrix& cm);

struct BucketKey {
    std::size_t T = 0;
    std::size_t tau = 0;
    auto operator<=>(const BucketKey&) const = default;
};

struct BucketReport {
    ConfusionMatrix confusion;
    std::uint64_t count = 0;
    MacroMetrics metrics;
};

struct EvalReport {
    MacroMetrics overall;          // pooled confusion over every sample
    MacroMetrics bucket_averaged;  // unweighted mean over nonempty buckets
    ConfusionMatrix confusion;
    std::map<BucketKey, BucketReport> per_bucket;  // every in-domain bucket
    std::uint64_t total = 0;
    std::uint64_t n_skipped = 0;  // windows the model rejected (baseline, missing visits)
};

nlohmann::json report_to_json(const EvalReport& report);

// Row-normalized confusion as CSV (header row/column with class names).
std::string confusion_csv(const ConfusionMatrix& cm);

// Bucket macro-F1 grid, rows T, cols tau; cells outside the (T, tau) domain or
// without samples stay empty.
std::string bucket_grid_csv(const EvalReport& report, const SampleLimits& limits);

// Single-writer accumulator; merge() supports parallel evaluation.
class ReportBuilder {
public:
    explicit ReportBuilder(SampleLimits limits = {});

    void accumulate(int true_label, int predicted, std::size_t T, std::size_t tau);
    void add_skipped(std::uint64_t n = 1) { skipped_ += n; }
    void merge(const ReportBuilder& other);

    EvalReport finalize() const;  // throws on empty accumulation

private:
    SampleLimits limits_;
    ConfusionMatrix overall_;
    std::map<BucketKey, ConfusionMatrix> buckets_;
    std::uint64_t skipped_ = 0;
};

}  // namespace flare
