#include "flare/config.hpp"

#include <fstream>

#include "flare/errors.hpp"

namespace flare {

namespace {

void to_json_training(nlohmann::json& j, const TrainingConfig& t) {
    j = nlohmann::json{{"epochs", t.epochs},
                       {"batch_size", t.batch_size},
                       {"loader_scheme", loader_scheme_to_string(t.loader_scheme)},
                       {"checkpoint_every", t.checkpoint_every},
                       {"models", t.models}};
    if (t.seed.has_value()) j["seed"] = *t.seed;
}

TrainingConfig training_from_json(const nlohmann::json& j) {
    TrainingConfig t;
    t.epochs = j.value("epochs", t.epochs);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.loader_scheme =
        loader_scheme_from_string(j.value("loader_scheme", std::string("uniform_random")));
    if (j.contains("seed")) t.seed = j.at("seed").get<std::uint64_t>();
    t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
    t.models = j.value("models", t.models);
    if (t.models != "flare" && t.models != "concat" && t.models != "both")
        throw ConfigError("training.models must be flare|concat|both");
    return t;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    eval.limits.validate();
    if (eval.limits.max_T != model.max_T || eval.limits.max_sum_T_tau != model.max_sum_T_tau)
        throw ConfigError("eval limits must match the model's max_T / max_sum_T_tau");
    if (eval.checkpoint != "final" && eval.checkpoint != "best")
        throw ConfigError("eval.checkpoint must be final|best");
    if (training.batch_size == 0) throw ConfigError("training.batch_size must be positive");
    if (!(split.train_fraction > 0.0 && split.train_fraction < 1.0))
        throw ConfigError("split.train_fraction must be in (0, 1)");
    if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (data.synth.has_value()) data.synth->validate();
    if (data.path.empty() && !data.synth.has_value())
        throw ConfigError("data: either path or synth must be given");
}

void to_json(nlohmann::json& j, const RunConfig& cfg) {
    nlohmann::json training;
    to_json_training(training, cfg.training);
    nlohmann::json data = nlohmann::json::object();
    if (!cfg.data.path.empty()) data["path"] = cfg.data.path;
    if (cfg.data.synth.has_value()) data["synth"] = *cfg.data.synth;
    j = nlohmann::json{
        {"model", cfg.model},
        {"optimizer",
         {{"lr", cfg.optimizer.lr},
          {"beta1", cfg.optimizer.beta1},
          {"beta2", cfg.optimizer.beta2},
          {"eps", cfg.optimizer.eps}}},
        {"training", training},
        {"data", data},
        {"split", {{"train_fraction", cfg.split.train_fraction}, {"seed", cfg.split.seed}}},
        {"eval",
         {{"max_T", cfg.eval.limits.max_T},
          {"max_sum_T_tau", cfg.eval.limits.max_sum_T_tau},
          {"checkpoint", cfg.eval.checkpoint}}}};
}

void from_json(const nlohmann::json& j, RunConfig& cfg) {
    if (j.contains("model")) cfg.model = j.at("model").get<ModelConfig>();
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
        cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
    }
    if (j.contains("training")) cfg.training = training_from_json(j.at("training"));
    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.path = d.value("path", std::string());
        if (d.contains("synth")) cfg.data.synth = d.at("synth").get<CohortSpec>();
    }
    if (j.contains("split")) {
        const auto& s = j.at("split");
        cfg.split.train_fraction = s.value("train_fraction", cfg.split.train_fraction);
        cfg.split.seed = s.value("seed", cfg.split.seed);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.limits.max_T = e.value("max_T", cfg.eval.limits.max_T);
        cfg.eval.limits.max_sum_T_tau = e.value("max_sum_T_tau", cfg.eval.limits.max_sum_T_tau);
        cfg.eval.checkpoint = e.value("checkpoint", cfg.eval.checkpoint);
    }
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key.path=value, got \"" + assignment + "\"");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw ConfigError("--set: empty key segment in \"" + path + "\"");
        if (dot == std::string::npos) {
            nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
            if (value.is_discarded()) value = raw;  // plain string
            (*node)[key] = std::move(value);
            return;
        }
        if (!node->contains(key) || !(*node)[key].is_object())
            (*node)[key] = nlohmann::json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

nlohmann::json load_config_document(const std::string& path,
                                    const std::vector<std::string>& overrides) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot read config " + path);
        try {
            f >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config " + path + " is not valid JSON: " + e.what());
        }
        if (!doc.is_object()) throw ConfigError("config " + path + " must be a JSON object");
    }
    for (const auto& assignment : overrides) apply_override(doc, assignment);
    return doc;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
    RunConfig cfg;
    try {
        cfg = doc.get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace flare
