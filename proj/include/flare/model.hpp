#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/layers.hpp"
#include "flare/matrix.hpp"
#include "flare/param.hpp"
#include "flare/rng.hpp"

namespace flare {

// Stage labels, in severity order.
inline constexpr int kStageCn = 0;
inline constexpr int kStageMci = 1;
inline constexpr int kStageAd = 2;
inline constexpr std::size_t kNumClasses = 3;

struct LossWeights {
    Vec class_weights = {1.0, 1.3, 2.0};  // CN, MCI, AD
    double alpha = 1.0;                   // auxiliary-loss coefficient

    void validate() const;
};

enum class CellKind { gru, tanh_rnn };
enum class TauEncoding { scalar, one_hot };
enum class ModelKind { flare, concat };

ModelKind model_kind_from_string(const std::string& s);
std::string model_kind_to_string(ModelKind k);

struct ModelConfig {
    std::size_t dim_volumetric = 32;
    std::size_t dim_demographic = 3;
    std::size_t dim_cognitive = 4;

    std::vector<std::size_t> enc_hidden_vol = {16};
    std::vector<std::size_t> enc_hidden_dem = {8};
    std::vector<std::size_t> enc_hidden_cog = {8};
    std::size_t enc_out_vol = 8;
    std::size_t enc_out_dem = 2;
    std::size_t enc_out_cog = 4;

    std::size_t rnn_hidden = 16;
    std::vector<std::size_t> pred_hidden = {16};        // feature-prediction network
    std::vector<std::size_t> classifier_hidden = {16};
    std::size_t num_classes = kNumClasses;

    Activation activation = Activation::relu;
    CellKind cell = CellKind::gru;
    TauEncoding tau_encoding = TauEncoding::scalar;  // baseline horizon input

    LossWeights loss;

    std::size_t max_T = 4;
    std::size_t max_sum_T_tau = 5;

    std::size_t latent_dim() const { return enc_out_vol + enc_out_dem + enc_out_cog; }
    std::size_t max_tau() const { return max_sum_T_tau - 2; }  // T >= 2
    // Width of the horizon slot appended to the last hidden state by the baseline.
    std::size_t tau_slot_dim() const {
        return tau_encoding == TauEncoding::scalar ? 1 : max_tau();
    }
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// One visit's multimodal features. When observed is false the vectors are
// empty and must not be read; the model imputes the latent instead.
struct VisitInput {
    Vec volumetric;
    Vec demographic;
    Vec cognitive;
    bool observed = false;
};

enum class StepKind { encoded, imputed, rolled_out };

// Trace of one recurrent update, retained for backprop.
struct CellTrace {
    Vec x;
    Vec h_prev;
    Vec a_reset, a_update, a_cand;  // gate preactivations (a_cand only for tanh_rnn)
    Vec reset, update;
    Vec cand;
    Vec h;
};

// Single-layer recurrent cell: gated (reset/update gates, tanh candidate) or
// a plain tanh cell. At zero weights the gated update is h = 0.5 * h_prev.
class RecurrentCell {
public:
    RecurrentCell() = default;
    static RecurrentCell create(ParamSet& params, const std::string& prefix, CellKind kind,
                                std::size_t in_dim, std::size_t hidden, Rng& rng);
    static RecurrentCell bind(ParamSet& params, const std::string& prefix, CellKind kind,
                              std::size_t in_dim, std::size_t hidden);

    Vec forward(const Vec& x, const Vec& h_prev, CellTrace* trace = nullptr) const;
    // Accumulates parameter grads; returns (grad_x, grad_h_prev).
    std::pair<Vec, Vec> backward(const CellTrace& trace, const Vec& upstream) const;

    std::size_t hidden_dim() const { return hidden_; }

private:
    CellKind kind_ = CellKind::gru;
    std::size_t in_dim_ = 0;
    std::size_t hidden_ = 0;
    // gru: {reset, update, cand}; tanh_rnn: {cand} only
    std::vector<ParamBlock*> w_in_;
    std::vector<ParamBlock*> w_rec_;
    std::vector<ParamBlock*> bias_;
};

// Everything one forward pass produced, retained for backprop and inspection.
struct RolloutTrace {
    struct Step {
        StepKind kind = StepKind::encoded;
        Vec latent;  // recurrent-cell input at this step (encoded, imputed or rolled out)
        CellTrace cell;
        MlpTrace enc_vol, enc_dem, enc_cog;  // encoded steps
        MlpTrace pred;                       // imputed / rolled-out steps
    };

    std::vector<Step> steps;  // T + tau entries (flare), T entries (baseline)
    std::size_t T = 0;
    std::size_t tau = 0;
    Vec clf_input;  // classifier input (baseline appends the horizon slot)
    MlpTrace clf;
    Vec logits;
    std::uint64_t params_version = 0;

    const Vec& hidden(std::size_t step) const { return steps[step].cell.h; }
    std::size_t recurrent_updates() const { return steps.size(); }
    std::size_t count(StepKind kind) const;
    // rho evaluations on the classification path: imputations plus rollout steps.
    std::size_t predictor_evals() const {
        return count(StepKind::imputed) + count(StepKind::rolled_out);
    }
};

struct LossBreakdown {
    double total = 0.0;
    double cel = 0.0;
    double aux = 0.0;
};

// Teacher-forced predictor evaluations and the CE gradient, produced by loss()
// and consumed by backward().
struct LossTrace {
    struct TeacherPair {
        std::size_t t;       // 0-based window position; pair is (t -> t+1)
        MlpTrace pred_trace;
        Vec pred;            // predictor output at h_t
    };
    std::vector<TeacherPair> pairs;
    Vec grad_logits;
    int label = -1;
    LossBreakdown value;
};

// The forecaster: modality encoders, recurrent cell, feature-prediction
// network, classifier. kind() selects the latent-rollout forward (flare) or
// the horizon-concatenation baseline (concat).
class Forecaster {
public:
    Forecaster(ModelKind kind, const ModelConfig& cfg, std::uint64_t seed);
    static Forecaster from_checkpoint(const LoadedCheckpoint& ck);

    // Layer objects hold pointers into params_; a member-wise copy would alias
    // the source's parameters. Moves rebind the layers onto the moved storage.
    Forecaster(const Forecaster&) = delete;
    Forecaster& operator=(const Forecaster&) = delete;
    Forecaster(Forecaster&& other);
    Forecaster& operator=(Forecaster&& other);

    ModelKind kind() const { return kind_; }
    const ModelConfig& config() const { return cfg_; }
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

    // Concatenated modality encodings; requires x.observed.
    Vec encode_visit(const VisitInput& x) const;
    Vec rnn_step(const Vec& latent, const Vec& h_prev) const;
    Vec predict_next_latent(const Vec& h) const;

    // Latent rollout: T encode/impute steps, tau free-running steps, classify
    // the final hidden state. First visit must be observed; tau >= 1.
    RolloutTrace forward_flare(std::span<const VisitInput> window, std::size_t tau) const;

    // Baseline: run the T observed visits, append the horizon slot to the last
    // hidden state, classify. Rejects windows with unobserved visits.
    RolloutTrace forward_baseline(std::span<const VisitInput> window, std::size_t tau) const;

    RolloutTrace forward(std::span<const VisitInput> window, std::size_t tau) const {
        return kind_ == ModelKind::flare ? forward_flare(window, tau)
                                         : forward_baseline(window, tau);
    }

    // Composite objective: weighted CE on the logits plus alpha times the
    // teacher-forced MSE terms (flare only; observed next-visits inside the
    // window). Fills trace_out for backward().
    LossBreakdown loss(const RolloutTrace& trace, int label, LossTrace* trace_out = nullptr) const;

    // Full backprop through classifier, rollout, recurrent steps, encoders and
    // aux branches; accumulates into the param grads. Throws if the trace was
    // taken before the latest parameter update.
    void backward(const RolloutTrace& trace, const LossTrace& loss_trace);

    // Serialized kind + model config, embedded in checkpoints.
    std::string config_document() const;

private:
    Forecaster() = default;
    void bind_all();

    ModelKind kind_ = ModelKind::flare;
    ModelConfig cfg_;
    ParamSet params_;
    Mlp enc_vol_, enc_dem_, enc_cog_;
    RecurrentCell cell_;
    Mlp pred_;  // flare only
    Mlp clf_;
};

}  // namespace flare
