#include "flare/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "flare/errors.hpp"
#include "flare/rng.hpp"

namespace flare {

double rel_error(double analytic, double numeric, double tol, double floor_abs) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor_abs / tol});
    return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(ParamSet& params, const std::function<double()>& loss_fn,
                                double step, double tol, double floor_abs) {
    if (!(step > 0.0)) throw ContractViolation("check_gradients: step must be positive");
    GradCheckReport report;
    report.step = step;
    report.tolerance = tol;

    for (auto& block : params.blocks()) {
        BlockCheck bc;
        bc.name = block.name;
        Vec& values = block.value.data();
        const Vec& grads = block.grad.data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = loss_fn();
            values[i] = saved - step;
            const double down = loss_fn();
            values[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            const double err = rel_error(grads[i], fd, tol, floor_abs);
            if (err >= bc.max_rel_err) {
                bc.max_rel_err = err;
                bc.worst_index = i;
                bc.analytic = grads[i];
                bc.numeric = fd;
            }
        }
        if (bc.max_rel_err >= report.max_rel_err) {
            report.max_rel_err = bc.max_rel_err;
            report.worst_block = bc.name;
        }
        report.blocks.push_back(std::move(bc));
    }
    report.passed = report.max_rel_err < tol;
    return report;
}

std::string describe(const ModelCheckCase& c) {
    std::string s = model_kind_to_string(c.kind);
    s += " T=" + std::to_string(c.T) + " tau=" + std::to_string(c.tau);
    s += " alpha=" + std::to_string(static_cast<int>(c.alpha));
    if (c.impute_mid) s += " imputed-mid";
    return s;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.dim_volumetric = 3;
    cfg.dim_demographic = 2;
    cfg.dim_cognitive = 2;
    cfg.enc_hidden_vol = {4};
    cfg.enc_hidden_dem = {4};
    cfg.enc_hidden_cog = {4};
    cfg.enc_out_vol = 3;
    cfg.enc_out_dem = 1;
    cfg.enc_out_cog = 2;
    cfg.rnn_hidden = 5;
    cfg.pred_hidden = {4};
    cfg.classifier_hidden = {4};
    return cfg;
}

std::vector<VisitInput> make_check_window(const ModelCheckCase& c, const ModelConfig& cfg,
                                          std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x77696e646f77ULL));
    std::vector<VisitInput> window(c.T);
    const std::size_t hole = c.impute_mid ? std::max<std::size_t>(1, c.T / 2) : c.T;
    for (std::size_t t = 0; t < c.T; ++t) {
        if (t == hole) continue;  // stays unobserved with empty features
        auto& v = window[t];
        v.observed = true;
        v.volumetric.resize(cfg.dim_volumetric);
        v.demographic.resize(cfg.dim_demographic);
        v.cognitive.resize(cfg.dim_cognitive);
        for (auto& x : v.volumetric) x = rng.gaussian(0.0, 1.0);
        for (auto& x : v.demographic) x = rng.gaussian(0.0, 1.0);
        for (auto& x : v.cognitive) x = rng.gaussian(0.0, 1.0);
    }
    return window;
}

GradCheckReport check_model_case(const ModelCheckCase& c, std::uint64_t seed, double step,
                                 double tol, double floor_abs) {
    return check_model_case(c, tiny_config(), seed, step, tol, floor_abs);
}

GradCheckReport check_model_case(const ModelCheckCase& c, ModelConfig cfg, std::uint64_t seed,
                                 double step, double tol, double floor_abs) {
    if (c.kind == ModelKind::concat && c.impute_mid)
        throw ContractViolation("check_model_case: the baseline cannot take imputed windows");
    cfg.loss.alpha = c.alpha;
    Forecaster model(c.kind, cfg, derive_seed(seed, 0x6d6f64656cULL));

    const auto window = make_check_window(c, cfg, seed);
    const int label = static_cast<int>((c.T + c.tau) % kNumClasses);

    model.params().zero_grads();
    RolloutTrace trace = model.forward(window, c.tau);
    LossTrace lt;
    model.loss(trace, label, &lt);
    model.backward(trace, lt);

    auto loss_fn = [&]() {
        RolloutTrace t2 = model.forward(window, c.tau);
        return model.loss(t2, label).total;
    };
    return check_gradients(model.params(), loss_fn, step, tol, floor_abs);
}

std::vector<ModelCheckCase> standard_cases() {
    std::vector<ModelCheckCase> cases;
    const std::pair<std::size_t, std::size_t> shapes[] = {{2, 1}, {3, 2}, {4, 1}};
    for (auto [T, tau] : shapes)
        for (double alpha : {0.0, 1.0})
            for (bool impute : {false, true})
                cases.push_back({ModelKind::flare, T, tau, impute, alpha});
    for (auto [T, tau] : shapes) cases.push_back({ModelKind::concat, T, tau, false, 1.0});
    return cases;
}

}  // namespace flare
