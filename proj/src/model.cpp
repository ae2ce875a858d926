#include "flare/model.hpp"

#include <algorithm>
#include <cmath>

#include "flare/errors.hpp"

namespace flare {

void LossWeights::validate() const {
    if (class_weights.size() != kNumClasses)
        throw ConfigError("loss.class_weights must have 3 entries (CN, MCI, AD)");
    for (double w : class_weights)
        if (!(w > 0.0)) throw ConfigError("loss.class_weights must all be > 0");
    if (!(alpha >= 0.0)) throw ConfigError("loss.alpha must be >= 0");
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "flare") return ModelKind::flare;
    if (s == "concat") return ModelKind::concat;
    throw ConfigError("unknown model kind: " + s + " (expected flare|concat)");
}

std::string model_kind_to_string(ModelKind k) {
    return k == ModelKind::flare ? "flare" : "concat";
}

void ModelConfig::validate() const {
    if (dim_volumetric == 0 || dim_demographic == 0 || dim_cognitive == 0)
        throw ConfigError("model: all modality dims must be positive");
    if (enc_out_vol == 0 || enc_out_dem == 0 || enc_out_cog == 0)
        throw ConfigError("model: encoder output dims must be positive");
    if (rnn_hidden == 0) throw ConfigError("model: rnn_hidden must be positive");
    if (num_classes != kNumClasses)
        throw ConfigError("model: num_classes must be 3 (CN, MCI, AD)");
    if (max_T < 2) throw ConfigError("model: max_T must be >= 2");
    if (max_sum_T_tau < max_T + 1)
        throw ConfigError("model: max_sum_T_tau must allow tau >= 1 at max_T");
    loss.validate();
}

namespace {

std::string cell_kind_to_string(CellKind k) {
    return k == CellKind::gru ? "gru" : "tanh_rnn";
}

CellKind cell_kind_from_string(const std::string& s) {
    if (s == "gru") return CellKind::gru;
    if (s == "tanh_rnn") return CellKind::tanh_rnn;
    throw ConfigError("unknown cell kind: " + s);
}

std::string tau_encoding_to_string(TauEncoding e) {
    return e == TauEncoding::scalar ? "scalar" : "one_hot";
}

TauEncoding tau_encoding_from_string(const std::string& s) {
    if (s == "scalar") return TauEncoding::scalar;
    if (s == "one_hot") return TauEncoding::one_hot;
    throw ConfigError("unknown tau encoding: " + s);
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"dim_volumetric", cfg.dim_volumetric},
                       {"dim_demographic", cfg.dim_demographic},
                       {"dim_cognitive", cfg.dim_cognitive},
                       {"enc_hidden_vol", cfg.enc_hidden_vol},
                       {"enc_hidden_dem", cfg.enc_hidden_dem},
                       {"enc_hidden_cog", cfg.enc_hidden_cog},
                       {"enc_out_vol", cfg.enc_out_vol},
                       {"enc_out_dem", cfg.enc_out_dem},
                       {"enc_out_cog", cfg.enc_out_cog},
                       {"rnn_hidden", cfg.rnn_hidden},
                       {"pred_hidden", cfg.pred_hidden},
                       {"classifier_hidden", cfg.classifier_hidden},
                       {"num_classes", cfg.num_classes},
                       {"activation", activation_to_string(cfg.activation)},
                       {"cell", cell_kind_to_string(cfg.cell)},
                       {"tau_encoding", tau_encoding_to_string(cfg.tau_encoding)},
                       {"class_weights", cfg.loss.class_weights},
                       {"alpha", cfg.loss.alpha},
                       {"max_T", cfg.max_T},
                       {"max_sum_T_tau", cfg.max_sum_T_tau}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    ModelConfig d;
    cfg.dim_volumetric = j.value("dim_volumetric", d.dim_volumetric);
    cfg.dim_demographic = j.value("dim_demographic", d.dim_demographic);
    cfg.dim_cognitive = j.value("dim_cognitive", d.dim_cognitive);
    cfg.enc_hidden_vol = j.value("enc_hidden_vol", d.enc_hidden_vol);
    cfg.enc_hidden_dem = j.value("enc_hidden_dem", d.enc_hidden_dem);
    cfg.enc_hidden_cog = j.value("enc_hidden_cog", d.enc_hidden_cog);
    cfg.enc_out_vol = j.value("enc_out_vol", d.enc_out_vol);
    cfg.enc_out_dem = j.value("enc_out_dem", d.enc_out_dem);
    cfg.enc_out_cog = j.value("enc_out_cog", d.enc_out_cog);
    cfg.rnn_hidden = j.value("rnn_hidden", d.rnn_hidden);
    cfg.pred_hidden = j.value("pred_hidden", d.pred_hidden);
    cfg.classifier_hidden = j.value("classifier_hidden", d.classifier_hidden);
    cfg.num_classes = j.value("num_classes", d.num_classes);
    cfg.activation = activation_from_string(j.value("activation", std::string("relu")));
    cfg.cell = cell_kind_from_string(j.value("cell", std::string("gru")));
    cfg.tau_encoding = tau_encoding_from_string(j.value("tau_encoding", std::string("scalar")));
    cfg.loss.class_weights = j.value("class_weights", d.loss.class_weights);
    cfg.loss.alpha = j.value("alpha", d.loss.alpha);
    cfg.max_T = j.value("max_T", d.max_T);
    cfg.max_sum_T_tau = j.value("max_sum_T_tau", d.max_sum_T_tau);
}

// ---------------------------------------------------------------------------
// Recurrent cell
// ---------------------------------------------------------------------------

namespace {
const char* kGateNames[] = {"reset", "update", "cand"};
}

RecurrentCell RecurrentCell::create(ParamSet& params, const std::string& prefix, CellKind kind,
                                    std::size_t in_dim, std::size_t hidden, Rng& rng) {
    RecurrentCell cell;
    cell.kind_ = kind;
    cell.in_dim_ = in_dim;
    cell.hidden_ = hidden;
    const std::size_t n_gates = kind == CellKind::gru ? 3 : 1;
    const double bound_in = std::sqrt(1.0 / static_cast<double>(in_dim));
    const double bound_rec = std::sqrt(1.0 / static_cast<double>(hidden));
    for (std::size_t g = 0; g < n_gates; ++g) {
        const std::string gate = kind == CellKind::gru ? kGateNames[g] : "cand";
        auto& w = params.add(prefix + ".W_" + gate, hidden, in_dim);
        auto& u = params.add(prefix + ".U_" + gate, hidden, hidden);
        auto& b = params.add(prefix + ".b_" + gate, hidden, 1);
        for (auto& v : w.value.data()) v = rng.uniform(-bound_in, bound_in);
        for (auto& v : u.value.data()) v = rng.uniform(-bound_rec, bound_rec);
        for (auto& v : b.value.data()) v = rng.uniform(-bound_rec, bound_rec);
        cell.w_in_.push_back(&w);
        cell.w_rec_.push_back(&u);
        cell.bias_.push_back(&b);
    }
    return cell;
}

RecurrentCell RecurrentCell::bind(ParamSet& params, const std::string& prefix, CellKind kind,
                                  std::size_t in_dim, std::size_t hidden) {
    RecurrentCell cell;
    cell.kind_ = kind;
    cell.in_dim_ = in_dim;
    cell.hidden_ = hidden;
    const std::size_t n_gates = kind == CellKind::gru ? 3 : 1;
    for (std::size_t g = 0; g < n_gates; ++g) {
        const std::string gate = kind == CellKind::gru ? kGateNames[g] : "cand";
        auto& w = params.at(prefix + ".W_" + gate);
        auto& u = params.at(prefix + ".U_" + gate);
        auto& b = params.at(prefix + ".b_" + gate);
        if (w.value.rows() != hidden || w.value.cols() != in_dim || u.value.rows() != hidden ||
            u.value.cols() != hidden || b.value.rows() != hidden)
            throw ShapeError("RecurrentCell::bind: checkpoint shape mismatch at " + w.name);
        cell.w_in_.push_back(&w);
        cell.w_rec_.push_back(&u);
        cell.bias_.push_back(&b);
    }
    return cell;
}

Vec RecurrentCell::forward(const Vec& x, const Vec& h_prev, CellTrace* trace) const {
    if (x.size() != in_dim_) throw ShapeError("rnn_step: input dim mismatch");
    if (h_prev.size() != hidden_) throw ShapeError("rnn_step: hidden dim mismatch");

    auto preact = [&](std::size_t g, const Vec& rec_arg) {
        Vec a = matvec(w_in_[g]->value, x, "rnn_step: W");
        Vec rec = matvec(w_rec_[g]->value, rec_arg, "rnn_step: U");
        for (std::size_t i = 0; i < hidden_; ++i) a[i] += rec[i] + bias_[g]->value(i, 0);
        return a;
    };

    if (kind_ == CellKind::tanh_rnn) {
        Vec a = preact(0, h_prev);
        Vec h = activate(a, Activation::tanh);
        if (trace) {
            trace->x = x;
            trace->h_prev = h_prev;
            trace->a_cand = std::move(a);
            trace->h = h;
        }
        return h;
    }

    Vec a_r = preact(0, h_prev);
    Vec a_z = preact(1, h_prev);
    Vec r = activate(a_r, Activation::sigmoid);
    Vec z = activate(a_z, Activation::sigmoid);
    Vec rh(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) rh[i] = r[i] * h_prev[i];
    Vec a_c = preact(2, rh);
    Vec c = activate(a_c, Activation::tanh);
    // h = (1 - z) .* h_prev + z .* c
    Vec h(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) h[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];

    if (trace) {
        trace->x = x;
        trace->h_prev = h_prev;
        trace->a_reset = std::move(a_r);
        trace->a_update = std::move(a_z);
        trace->a_cand = std::move(a_c);
        trace->reset = std::move(r);
        trace->update = std::move(z);
        trace->cand = std::move(c);
        trace->h = h;
    }
    return h;
}

std::pair<Vec, Vec> RecurrentCell::backward(const CellTrace& trace, const Vec& upstream) const {
    if (upstream.size() != hidden_) throw ShapeError("rnn backward: upstream dim mismatch");
    if (trace.h.size() != hidden_) throw ContractViolation("rnn backward: missing forward trace");

    auto accumulate_gate = [&](std::size_t g, const Vec& d_pre, const Vec& rec_arg) {
        add_outer(w_in_[g]->grad, d_pre, trace.x);
        add_outer(w_rec_[g]->grad, d_pre, rec_arg);
        for (std::size_t i = 0; i < hidden_; ++i) bias_[g]->grad(i, 0) += d_pre[i];
    };

    if (kind_ == CellKind::tanh_rnn) {
        Vec d_pre = activate_backward(trace.a_cand, upstream, Activation::tanh);
        accumulate_gate(0, d_pre, trace.h_prev);
        Vec gx = matvec_transposed(w_in_[0]->value, d_pre, "rnn backward: W");
        Vec gh = matvec_transposed(w_rec_[0]->value, d_pre, "rnn backward: U");
        return {std::move(gx), std::move(gh)};
    }

    const Vec& r = trace.reset;
    const Vec& z = trace.update;
    const Vec& c = trace.cand;
    const Vec& h_prev = trace.h_prev;

    Vec d_z(hidden_), d_c(hidden_), gh(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) {
        d_z[i] = upstream[i] * (c[i] - h_prev[i]);
        d_c[i] = upstream[i] * z[i];
        gh[i] = upstream[i] * (1.0 - z[i]);
    }

    Vec d_pre_c = activate_backward(trace.a_cand, d_c, Activation::tanh);
    Vec rh(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) rh[i] = r[i] * h_prev[i];
    accumulate_gate(2, d_pre_c, rh);
    Vec d_rh = matvec_transposed(w_rec_[2]->value, d_pre_c, "rnn backward: U_cand");
    Vec d_r(hidden_);
    for (std::size_t i = 0; i < hidden_; ++i) {
        d_r[i] = d_rh[i] * h_prev[i];
        gh[i] += d_rh[i] * r[i];
    }

    Vec d_pre_z = activate_backward(trace.a_update, d_z, Activation::sigmoid);
    accumulate_gate(1, d_pre_z, h_prev);
    axpy(gh, 1.0, matvec_transposed(w_rec_[1]->value, d_pre_z, "rnn backward: U_update"));

    Vec d_pre_r = activate_backward(trace.a_reset, d_r, Activation::sigmoid);
    accumulate_gate(0, d_pre_r, h_prev);
    axpy(gh, 1.0, matvec_transposed(w_rec_[0]->value, d_pre_r, "rnn backward: U_reset"));

    Vec gx = matvec_transposed(w_in_[2]->value, d_pre_c, "rnn backward: W_cand");
    axpy(gx, 1.0, matvec_transposed(w_in_[1]->value, d_pre_z, "rnn backward: W_update"));
    axpy(gx, 1.0, matvec_transposed(w_in_[0]->value, d_pre_r, "rnn backward: W_reset"));

    return {std::move(gx), std::move(gh)};
}

// ---------------------------------------------------------------------------
// Forecaster
// ---------------------------------------------------------------------------

std::size_t RolloutTrace::count(StepKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(steps.begin(), steps.end(),
                      [kind](const Step& s) { return s.kind == kind; }));
}

Forecaster::Forecaster(ModelKind kind, const ModelConfig& cfg, std::uint64_t seed)
    : kind_(kind), cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const Activation act = cfg_.activation;
    enc_vol_ = Mlp::create(params_, "enc_vol",
                           {cfg_.dim_volumetric, cfg_.enc_hidden_vol, cfg_.enc_out_vol, act}, rng);
    enc_dem_ = Mlp::create(params_, "enc_dem",
                           {cfg_.dim_demographic, cfg_.enc_hidden_dem, cfg_.enc_out_dem, act}, rng);
    enc_cog_ = Mlp::create(params_, "enc_cog",
                           {cfg_.dim_cognitive, cfg_.enc_hidden_cog, cfg_.enc_out_cog, act}, rng);
    cell_ = RecurrentCell::create(params_, "rnn", cfg_.cell, cfg_.latent_dim(), cfg_.rnn_hidden, rng);
    if (kind_ == ModelKind::flare)
        pred_ = Mlp::create(params_, "pred",
                            {cfg_.rnn_hidden, cfg_.pred_hidden, cfg_.latent_dim(), act}, rng);
    const std::size_t clf_in =
        kind_ == ModelKind::flare ? cfg_.rnn_hidden : cfg_.rnn_hidden + cfg_.tau_slot_dim();
    clf_ = Mlp::create(params_, "clf", {clf_in, cfg_.classifier_hidden, cfg_.num_classes, act},
                       rng);
}

void Forecaster::bind_all() {
    const Activation act = cfg_.activation;
    enc_vol_ = Mlp::bind(params_, "enc_vol",
                         {cfg_.dim_volumetric, cfg_.enc_hidden_vol, cfg_.enc_out_vol, act});
    enc_dem_ = Mlp::bind(params_, "enc_dem",
                         {cfg_.dim_demographic, cfg_.enc_hidden_dem, cfg_.enc_out_dem, act});
    enc_cog_ = Mlp::bind(params_, "enc_cog",
                         {cfg_.dim_cognitive, cfg_.enc_hidden_cog, cfg_.enc_out_cog, act});
    cell_ = RecurrentCell::bind(params_, "rnn", cfg_.cell, cfg_.latent_dim(), cfg_.rnn_hidden);
    if (kind_ == ModelKind::flare)
        pred_ = Mlp::bind(params_, "pred", {cfg_.rnn_hidden, cfg_.pred_hidden, cfg_.latent_dim(), act});
    const std::size_t clf_in =
        kind_ == ModelKind::flare ? cfg_.rnn_hidden : cfg_.rnn_hidden + cfg_.tau_slot_dim();
    clf_ = Mlp::bind(params_, "clf", {clf_in, cfg_.classifier_hidden, cfg_.num_classes, act});
}

Forecaster::Forecaster(Forecaster&& other)
    : kind_(other.kind_), cfg_(std::move(other.cfg_)), params_(std::move(other.params_)) {
    bind_all();
}

Forecaster& Forecaster::operator=(Forecaster&& other) {
    if (this != &other) {
        kind_ = other.kind_;
        cfg_ = std::move(other.cfg_);
        params_ = std::move(other.params_);
        bind_all();
    }
    return *this;
}

Forecaster Forecaster::from_checkpoint(const LoadedCheckpoint& ck) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(ck.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: embedded config is not valid JSON: ") + e.what());
    }
    Forecaster model;
    model.kind_ = model_kind_from_string(doc.at("kind").get<std::string>());
    model.cfg_ = doc.at("model").get<ModelConfig>();
    model.cfg_.validate();
    // Copy blocks; bind_all enforces strict shape validation against the config.
    for (const auto& b : ck.params.blocks()) {
        auto& nb = model.params_.add(b.name, b.value.rows(), b.value.cols());
        nb.value = b.value;
        nb.adam_m = b.adam_m;
        nb.adam_v = b.adam_v;
    }
    model.params_.set_step(ck.params.step());
    model.bind_all();
    return model;
}

std::string Forecaster::config_document() const {
    nlohmann::json doc;
    doc["kind"] = model_kind_to_string(kind_);
    doc["model"] = cfg_;
    return doc.dump();
}

Vec Forecaster::encode_visit(const VisitInput& x) const {
    if (!x.observed)
        throw ContractViolation("encode_visit: visit is unobserved; impute instead");
    Vec f = enc_vol_.forward(x.volumetric);
    Vec fs = enc_dem_.forward(x.demographic);
    Vec fc = enc_cog_.forward(x.cognitive);
    f.insert(f.end(), fs.begin(), fs.end());
    f.insert(f.end(), fc.begin(), fc.end());
    return f;
}

Vec Forecaster::rnn_step(const Vec& latent, const Vec& h_prev) const {
    return cell_.forward(latent, h_prev);
}

Vec Forecaster::predict_next_latent(const Vec& h) const {
    if (kind_ != ModelKind::flare)
        throw ContractViolation("predict_next_latent: baseline model has no feature predictor");
    return pred_.forward(h);
}

RolloutTrace Forecaster::forward_flare(std::span<const VisitInput> window, std::size_t tau) const {
    if (kind_ != ModelKind::flare)
        throw ContractViolation("forward_flare called on a concat model");
    if (window.empty()) throw ContractViolation("forward_flare: empty window");
    if (tau < 1) throw ContractViolation("forward_flare: tau must be >= 1");
    if (!window[0].observed)
        throw ContractViolation(
            "forward_flare: first visit of a window must be observed (imputation anchor)");

    RolloutTrace trace;
    trace.T = window.size();
    trace.tau = tau;
    trace.params_version = params_.version();
    trace.steps.reserve(window.size() + tau);

    Vec h(cfg_.rnn_hidden, 0.0);
    for (std::size_t t = 0; t < window.size(); ++t) {
        RolloutTrace::Step step;
        if (window[t].observed) {
            step.kind = StepKind::encoded;
            Vec fv = enc_vol_.forward(window[t].volumetric, &step.enc_vol);
            Vec fs = enc_dem_.forward(window[t].demographic, &step.enc_dem);
            Vec fc = enc_cog_.forward(window[t].cognitive, &step.enc_cog);
            step.latent = std::move(fv);
            step.latent.insert(step.latent.end(), fs.begin(), fs.end());
            step.latent.insert(step.latent.end(), fc.begin(), fc.end());
        } else {
            step.kind = StepKind::imputed;
            step.latent = pred_.forward(h, &step.pred);
        }
        h = cell_.forward(step.latent, h, &step.cell);
        trace.steps.push_back(std::move(step));
    }
    for (std::size_t k = 0; k < tau; ++k) {
        RolloutTrace::Step step;
        step.kind = StepKind::rolled_out;
        step.latent = pred_.forward(h, &step.pred);
        h = cell_.forward(step.latent, h, &step.cell);
        trace.steps.push_back(std::move(step));
    }

    trace.clf_input = h;
    trace.logits = clf_.forward(trace.clf_input, &trace.clf);
    return trace;
}

RolloutTrace Forecaster::forward_baseline(std::span<const VisitInput> window,
                                          std::size_t tau) const {
    if (kind_ != ModelKind::concat)
        throw ContractViolation("forward_baseline called on a flare model");
    if (window.empty()) throw ContractViolation("forward_baseline: empty window");
    if (tau < 1) throw ContractViolation("forward_baseline: tau must be >= 1");
    for (std::size_t t = 0; t < window.size(); ++t)
        if (!window[t].observed)
            throw DataError("forward_baseline: window position " + std::to_string(t) +
                            " is unobserved; the baseline has no imputation path");

    RolloutTrace trace;
    trace.T = window.size();
    trace.tau = tau;
    trace.params_version = params_.version();
    trace.steps.reserve(window.size());

    Vec h(cfg_.rnn_hidden, 0.0);
    for (const auto& visit : window) {
        RolloutTrace::Step step;
        step.kind = StepKind::encoded;
        Vec fv = enc_vol_.forward(visit.volumetric, &step.enc_vol);
        Vec fs = enc_dem_.forward(visit.demographic, &step.enc_dem);
        Vec fc = enc_cog_.forward(visit.cognitive, &step.enc_cog);
        step.latent = std::move(fv);
        step.latent.insert(step.latent.end(), fs.begin(), fs.end());
        step.latent.insert(step.latent.end(), fc.begin(), fc.end());
        h = cell_.forward(step.latent, h, &step.cell);
        trace.steps.push_back(std::move(step));
    }

    trace.clf_input = h;
    if (cfg_.tau_encoding == TauEncoding::scalar) {
        trace.clf_input.push_back(static_cast<double>(tau));
    } else {
        if (tau > cfg_.max_tau())
            throw ContractViolation("forward_baseline: tau exceeds the one-hot horizon range");
        for (std::size_t i = 1; i <= cfg_.max_tau(); ++i)
            trace.clf_input.push_back(i == tau ? 1.0 : 0.0);
    }
    trace.logits = clf_.forward(trace.clf_input, &trace.clf);
    return trace;
}

LossBreakdown Forecaster::loss(const RolloutTrace& trace, int label, LossTrace* trace_out) const {
    LossBreakdown out;
    CeResult ce = weighted_cross_entropy(trace.logits, label, cfg_.loss.class_weights);
    out.cel = ce.loss;

    LossTrace local;
    LossTrace& lt = trace_out ? *trace_out : local;
    lt.pairs.clear();
    lt.grad_logits = std::move(ce.grad_logits);
    lt.label = label;

    if (kind_ == ModelKind::flare && cfg_.loss.alpha > 0.0) {
        // Teacher-forced transitions inside the window, observed next-visit only.
        for (std::size_t t = 0; t + 1 < trace.T; ++t) {
            if (trace.steps[t + 1].kind != StepKind::encoded) continue;
            LossTrace::TeacherPair pair;
            pair.t = t;
            pair.pred = pred_.forward(trace.hidden(t), &pair.pred_trace);
            out.aux += mse(pair.pred, trace.steps[t + 1].latent).loss;
            lt.pairs.push_back(std::move(pair));
        }
    }

    out.total = out.cel + cfg_.loss.alpha * out.aux;
    lt.value = out;
    return out;
}

void Forecaster::backward(const RolloutTrace& trace, const LossTrace& loss_trace) {
    if (trace.params_version != params_.version())
        throw ContractViolation(
            "backward: trace is stale (parameters were updated after the forward pass)");
    if (loss_trace.grad_logits.size() != cfg_.num_classes)
        throw ContractViolation("backward: loss trace incomplete");

    const std::size_t n_steps = trace.steps.size();
    const double alpha = cfg_.loss.alpha;

    std::vector<Vec> grad_h(n_steps, Vec(cfg_.rnn_hidden, 0.0));
    std::vector<Vec> grad_latent_extra(n_steps);  // aux target-branch grads

    // Classifier.
    Vec g_clf_in = clf_.backward(trace.clf, loss_trace.grad_logits);
    for (std::size_t i = 0; i < cfg_.rnn_hidden; ++i) grad_h[n_steps - 1][i] += g_clf_in[i];
    // Baseline horizon slots carry no gradient anywhere.

    // Aux branches. Both MSE arguments are live: the prediction through the
    // feature predictor, the target through the encoder that produced it.
    for (const auto& pair : loss_trace.pairs) {
        const Vec& target = trace.steps[pair.t + 1].latent;
        MseResult m = mse(pair.pred, target);
        Vec g_pred(m.grad_pred.size());
        for (std::size_t i = 0; i < g_pred.size(); ++i) g_pred[i] = alpha * m.grad_pred[i];
        axpy(grad_h[pair.t], 1.0, pred_.backward(pair.pred_trace, g_pred));
        auto& extra = grad_latent_extra[pair.t + 1];
        if (extra.empty()) extra.assign(target.size(), 0.0);
        axpy(extra, -1.0, g_pred);
    }

    // Backprop through time, last step first.
    for (std::size_t s = n_steps; s-- > 0;) {
        auto [gx, gh_prev] = cell_.backward(trace.steps[s].cell, grad_h[s]);
        if (s > 0) axpy(grad_h[s - 1], 1.0, gh_prev);

        const auto& step = trace.steps[s];
        if (step.kind == StepKind::encoded) {
            if (!grad_latent_extra[s].empty()) axpy(gx, 1.0, grad_latent_extra[s]);
            const std::size_t dv = cfg_.enc_out_vol;
            const std::size_t ds = cfg_.enc_out_dem;
            Vec g_vol(gx.begin(), gx.begin() + dv);
            Vec g_dem(gx.begin() + dv, gx.begin() + dv + ds);
            Vec g_cog(gx.begin() + dv + ds, gx.end());
            enc_vol_.backward(step.enc_vol, g_vol);
            enc_dem_.backward(step.enc_dem, g_dem);
            enc_cog_.backward(step.enc_cog, g_cog);
        } else {
            // Imputed or rolled out: the step input came from the feature
            // predictor applied to the previous hidden state.
            Vec gh = pred_.backward(step.pred, gx);
            if (s == 0)
                throw ContractViolation("backward: first step cannot be a predictor output");
            axpy(grad_h[s - 1], 1.0, gh);
        }
    }
}

}  // namespace flare
