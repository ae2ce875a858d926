#include "flare/metrics.hpp"

#include <cstdio>

#include "flare/errors.hpp"

namespace flare {

namespace {
const char* kClassNames[] = {"CN", "MCI", "AD"};
}

void ConfusionMatrix::add(int true_label, int predicted) {
    if (true_label < 0 || true_label > 2 || predicted < 0 || predicted > 2)
        throw ContractViolation("confusion: labels must be in {0,1,2}");
    ++counts[static_cast<std::size_t>(true_label)][static_cast<std::size_t>(predicted)];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 3; ++c) counts[r][c] += other.counts[r][c];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto& row : counts)
        for (auto c : row) n += c;
    return n;
}

std::uint64_t ConfusionMatrix::correct() const {
    return counts[0][0] + counts[1][1] + counts[2][2];
}

std::array<std::array<double, 3>, 3> row_normalize(const ConfusionMatrix& cm) {
    std::array<std::array<double, 3>, 3> out{};
    for (std::size_t r = 0; r < 3; ++r) {
        std::uint64_t row_sum = 0;
        for (auto c : cm.counts[r]) row_sum += c;
        if (row_sum == 0) continue;
        for (std::size_t c = 0; c < 3; ++c)
            out[r][c] = static_cast<double>(cm.counts[r][c]) / static_cast<double>(row_sum);
    }
    return out;
}

MacroMetrics compute_metrics(const ConfusionMatrix& cm) {
    MacroMetrics m;
    const std::uint64_t total = cm.total();
    if (total == 0) return m;
    m.accuracy = static_cast<double>(cm.correct()) / static_cast<double>(total);
    for (std::size_t k = 0; k < 3; ++k) {
        std::uint64_t col_sum = 0, row_sum = 0;
        for (std::size_t i = 0; i < 3; ++i) {
            col_sum += cm.counts[i][k];
            row_sum += cm.counts[k][i];
        }
        const double tp = static_cast<double>(cm.counts[k][k]);
        m.precision[k] = col_sum == 0 ? 0.0 : tp / static_cast<double>(col_sum);
        m.recall[k] = row_sum == 0 ? 0.0 : tp / static_cast<double>(row_sum);
        const double denom = m.precision[k] + m.recall[k];
        m.f1[k] = denom == 0.0 ? 0.0 : 2.0 * m.precision[k] * m.recall[k] / denom;
        m.macro_precision += m.precision[k] / 3.0;
        m.macro_recall += m.recall[k] / 3.0;
        m.macro_f1 += m.f1[k] / 3.0;
    }
    return m;
}

ReportBuilder::ReportBuilder(SampleLimits limits) : limits_(limits) { limits_.validate(); }

void ReportBuilder::accumulate(int true_label, int predicted, std::size_t T, std::size_t tau) {
    if (!limits_.admits(T, tau))
        throw ContractViolation("accumulate: bucket (T=" + std::to_string(T) +
                                ", tau=" + std::to_string(tau) + ") outside the domain");
    overall_.add(true_label, predicted);
    buckets_[{T, tau}].add(true_label, predicted);
}

void ReportBuilder::merge(const ReportBuilder& other) {
    overall_.merge(other.overall_);
    for (const auto& [key, cm] : other.buckets_) buckets_[key].merge(cm);
    skipped_ += other.skipped_;
}

EvalReport ReportBuilder::finalize() const {
    if (overall_.total() == 0)
        throw ContractViolation("finalize: no samples accumulated");

    EvalReport report;
    report.confusion = overall_;
    report.total = overall_.total();
    report.n_skipped = skipped_;
    report.overall = compute_metrics(overall_);

    std::size_t nonempty = 0;
    for (std::size_t T = 2; T <= limits_.max_T; ++T)
        for (std::size_t tau = 1; T + tau <= limits_.max_sum_T_tau; ++tau) {
            BucketReport bucket;
            auto it = buckets_.find({T, tau});
            if (it != buckets_.end()) bucket.confusion = it->second;
            bucket.count = bucket.confusion.total();
            bucket.metrics = compute_metrics(bucket.confusion);
            if (bucket.count > 0) {
                ++nonempty;
                report.bucket_averaged.accuracy += bucket.metrics.accuracy;
                report.bucket_averaged.macro_precision += bucket.metrics.macro_precision;
                report.bucket_averaged.macro_recall += bucket.metrics.macro_recall;
                report.bucket_averaged.macro_f1 += bucket.metrics.macro_f1;
            }
            report.per_bucket.emplace(BucketKey{T, tau}, std::move(bucket));
        }
    if (nonempty > 0) {
        const double n = static_cast<double>(nonempty);
        report.bucket_averaged.accuracy /= n;
        report.bucket_averaged.macro_precision /= n;
        report.bucket_averaged.macro_recall /= n;
        report.bucket_averaged.macro_f1 /= n;
    }
    return report;
}

namespace {

nlohmann::json metrics_to_json(const MacroMetrics& m) {
    return nlohmann::json{{"accuracy", m.accuracy},
                          {"macro_precision", m.macro_precision},
                          {"macro_recall", m.macro_recall},
                          {"macro_f1", m.macro_f1},
                          {"precision", m.precision},
                          {"recall", m.recall},
                          {"f1", m.f1}};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& report) {
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& [key, bucket] : report.per_bucket)
        buckets.push_back(nlohmann::json{{"T", key.T},
                                         {"tau", key.tau},
                                         {"count", bucket.count},
                                         {"accuracy", bucket.metrics.accuracy},
                                         {"macro_f1", bucket.metrics.macro_f1},
                                         {"confusion", bucket.confusion.counts}});
    return nlohmann::json{{"total", report.total},
                          {"n_skipped", report.n_skipped},
                          {"overall", metrics_to_json(report.overall)},
                          {"bucket_averaged",
                           {{"accuracy", report.bucket_averaged.accuracy},
                            {"macro_precision", report.bucket_averaged.macro_precision},
                            {"macro_recall", report.bucket_averaged.macro_recall},
                            {"macro_f1", report.bucket_averaged.macro_f1}}},
                          {"confusion", report.confusion.counts},
                          {"confusion_row_normalized", row_normalize(report.confusion)},
                          {"buckets", buckets}};
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    const auto rows = row_normalize(cm);
    std::string out = "true\\pred,CN,MCI,AD\n";
    char buf[32];
    for (std::size_t r = 0; r < 3; ++r) {
        out += kClassNames[r];
        for (std::size_t c = 0; c < 3; ++c) {
            std::snprintf(buf, sizeof(buf), ",%.6f", rows[r][c]);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

std::string bucket_grid_csv(const EvalReport& report, const SampleLimits& limits) {
    std::string out = "T\\tau";
    const std::size_t max_tau = limits.max_sum_T_tau - 2;
    for (std::size_t tau = 1; tau <= max_tau; ++tau) out += "," + std::to_string(tau);
    out += '\n';
    char buf[32];
    for (std::size_t T = 2; T <= limits.max_T; ++T) {
        out += std::to_string(T);
        for (std::size_t tau = 1; tau <= max_tau; ++tau) {
            out += ',';
            auto it = report.per_bucket.find({T, tau});
            if (it == report.per_bucket.end() || it->second.count == 0) continue;
            std::snprintf(buf, sizeof(buf), "%.4f", it->second.metrics.macro_f1);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace flare
