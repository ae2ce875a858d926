#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "flare/gradcheck.hpp"
#include "flare/model.hpp"

using namespace flare;

namespace {

VisitInput random_visit(const ModelConfig& cfg, Rng& rng) {
    VisitInput v;
    v.observed = true;
    v.volumetric.resize(cfg.dim_volumetric);
    v.demographic.resize(cfg.dim_demographic);
    v.cognitive.resize(cfg.dim_cognitive);
    for (double& x : v.volumetric) x = rng.gaussian(0, 1);
    for (double& x : v.demographic) x = rng.gaussian(0, 1);
    for (double& x : v.cognitive) x = rng.gaussian(0, 1);
    return v;
}

std::vector<VisitInput> random_window(const ModelConfig& cfg, std::size_t T, Rng& rng) {
    std::vector<VisitInput> w;
    for (std::size_t t = 0; t < T; ++t) w.push_back(random_visit(cfg, rng));
    return w;
}

std::filesystem::path temp_file(const char* stem) {
    return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("gru with zero weights halves the previous hidden state") {
    ParamSet params;
    Rng rng(1);
    RecurrentCell cell = RecurrentCell::create(params, "rnn", CellKind::gru, 3, 4, rng);
    for (auto& block : params.blocks()) block.value.fill(0.0);

    Vec h_prev = {0.8, -0.4, 0.2, -1.6};
    Vec h = cell.forward({0.1, 0.2, 0.3}, h_prev);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(h[i] == doctest::Approx(0.5 * h_prev[i]).epsilon(1e-15));
}

TEST_CASE("gru keeps hidden entries inside (-1,1)") {
    // h' = (1-z) h + z c with z in (0,1), c in (-1,1): convex combination.
    ParamSet params;
    Rng rng(2);
    RecurrentCell cell = RecurrentCell::create(params, "rnn", CellKind::gru, 5, 6, rng);
    for (auto& block : params.blocks())
        for (double& v : block.value.data()) v = rng.uniform(-2, 2);

    Vec h(6, 0.0);
    for (int step = 0; step < 200; ++step) {
        Vec x(5);
        for (double& v : x) v = rng.gaussian(0, 3);
        h = cell.forward(x, h);
        for (double v : h) {
            CHECK(v > -1.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("recurrent cell is deterministic") {
    ParamSet params;
    Rng rng(3);
    RecurrentCell cell = RecurrentCell::create(params, "rnn", CellKind::gru, 2, 3, rng);
    Vec x = {0.5, -0.5}, h = {0.1, 0.2, 0.3};
    Vec a = cell.forward(x, h);
    Vec b = cell.forward(x, h);
    CHECK(a == b);
}

TEST_CASE("encode_visit concatenates the modality encoders") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 4);
    Rng rng(5);
    VisitInput v = random_visit(cfg, rng);

    Vec f = model.encode_visit(v);
    CHECK(f.size() == cfg.latent_dim());

    VisitInput unobserved;
    CHECK_THROWS_AS(model.encode_visit(unobserved), ContractViolation);

    for (auto& block : model.params().blocks()) block.value.fill(0.0);
    Vec zero = model.encode_visit(v);
    for (double x : zero) CHECK(x == 0.0);
}

TEST_CASE("flare rollout step accounting") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 6);
    Rng rng(7);

    SUBCASE("T=2 tau=1 fully observed") {
        auto w = random_window(cfg, 2, rng);
        RolloutTrace trace = model.forward_flare(w, 1);
        CHECK(trace.recurrent_updates() == 3);
        CHECK(trace.predictor_evals() == 1);
        CHECK(trace.count(StepKind::encoded) == 2);
        CHECK(trace.count(StepKind::rolled_out) == 1);
    }

    SUBCASE("T=2 tau=1 with the second visit missing") {
        auto w = random_window(cfg, 2, rng);
        w[1] = VisitInput{};
        RolloutTrace trace = model.forward_flare(w, 1);
        CHECK(trace.recurrent_updates() == 3);
        CHECK(trace.predictor_evals() == 2);  // one imputation + one rollout
        CHECK(trace.count(StepKind::imputed) == 1);
    }

    SUBCASE("T=3 tau=2 classifies the fifth hidden state") {
        auto w = random_window(cfg, 3, rng);
        RolloutTrace trace = model.forward_flare(w, 2);
        CHECK(trace.recurrent_updates() == 5);
        CHECK(trace.clf_input == trace.hidden(4));
    }
}

TEST_CASE("flare forward contract errors") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 8);
    Rng rng(9);
    auto w = random_window(cfg, 2, rng);

    CHECK_THROWS_AS(model.forward_flare(w, 0), ContractViolation);

    w[0] = VisitInput{};
    CHECK_THROWS_AS(model.forward_flare(w, 1), ContractViolation);
}

TEST_CASE("baseline appends the horizon and never rolls out") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::concat, cfg, 10);
    Rng rng(11);
    auto w = random_window(cfg, 3, rng);

    RolloutTrace t1 = model.forward_baseline(w, 1);
    CHECK(t1.recurrent_updates() == 3);
    CHECK(t1.predictor_evals() == 0);
    CHECK(t1.clf_input.size() == cfg.rnn_hidden + 1);
    CHECK(t1.clf_input.back() == 1.0);

    RolloutTrace t2 = model.forward_baseline(w, 2);
    CHECK(t2.clf_input.back() == 2.0);
    for (std::size_t i = 0; i + 1 < t1.clf_input.size(); ++i)
        CHECK(t1.clf_input[i] == t2.clf_input[i]);

    w[1] = VisitInput{};
    CHECK_THROWS_AS(model.forward_baseline(w, 1), DataError);
}

TEST_CASE("baseline one-hot horizon encoding") {
    ModelConfig cfg = tiny_config();
    cfg.tau_encoding = TauEncoding::one_hot;
    Forecaster model(ModelKind::concat, cfg, 12);
    Rng rng(13);
    auto w = random_window(cfg, 2, rng);

    RolloutTrace trace = model.forward_baseline(w, 2);
    CHECK(trace.clf_input.size() == cfg.rnn_hidden + cfg.max_tau());
    // slot is zero except at position tau-1
    for (std::size_t k = 0; k < cfg.max_tau(); ++k)
        CHECK(trace.clf_input[cfg.rnn_hidden + k] == (k == 1 ? 1.0 : 0.0));

    CHECK_THROWS_AS(model.forward_baseline(w, cfg.max_tau() + 1), ContractViolation);
}

TEST_CASE("rollout length law holds over randomized cases") {
    ModelConfig cfg = tiny_config();
    Forecaster flare_model(ModelKind::flare, cfg, 14);
    Forecaster concat_model(ModelKind::concat, cfg, 15);
    Rng rng(16);

    for (int it = 0; it < 1000; ++it) {
        const std::size_t T = 2 + rng.below(3);
        const std::size_t tau = 1 + rng.below(cfg.max_sum_T_tau - T);
        auto w = random_window(cfg, T, rng);
        std::size_t imputed = 0;
        for (std::size_t t = 1; t < T; ++t)
            if (rng.bernoulli(0.3)) {
                w[t] = VisitInput{};
                ++imputed;
            }

        RolloutTrace trace = flare_model.forward_flare(w, tau);
        REQUIRE(trace.recurrent_updates() == T + tau);
        REQUIRE(trace.predictor_evals() == tau + imputed);

        if (imputed == 0) {
            RolloutTrace base = concat_model.forward_baseline(w, tau);
            REQUIRE(base.recurrent_updates() == T);
            REQUIRE(base.predictor_evals() == 0);
        }
    }
}

TEST_CASE("loss breakdown structure") {
    ModelConfig cfg = tiny_config();
    Rng rng(17);

    SUBCASE("alpha zero keeps only the classification term") {
        cfg.loss.alpha = 0.0;
        Forecaster model(ModelKind::flare, cfg, 18);
        auto w = random_window(cfg, 3, rng);
        RolloutTrace trace = model.forward_flare(w, 1);
        LossBreakdown lb = model.loss(trace, kStageMci);
        CHECK(lb.aux == 0.0);
        CHECK(lb.total == lb.cel);
    }

    SUBCASE("T=2 fully observed yields exactly one teacher-forced pair") {
        Forecaster model(ModelKind::flare, cfg, 19);
        auto w = random_window(cfg, 2, rng);
        RolloutTrace trace = model.forward_flare(w, 1);
        LossTrace lt;
        LossBreakdown lb = model.loss(trace, kStageCn, &lt);
        CHECK(lt.pairs.size() == 1);
        CHECK(lt.pairs[0].t == 0);
        CHECK(lb.aux > 0.0);
        CHECK(lb.total == doctest::Approx(lb.cel + cfg.loss.alpha * lb.aux).epsilon(1e-15));
    }

    SUBCASE("imputed next-visits contribute no teacher term") {
        Forecaster model(ModelKind::flare, cfg, 20);
        auto w = random_window(cfg, 3, rng);
        w[1] = VisitInput{};  // pair (0->1) has no ground-truth latent
        RolloutTrace trace = model.forward_flare(w, 1);
        LossTrace lt;
        model.loss(trace, kStageAd, &lt);
        REQUIRE(lt.pairs.size() == 1);
        CHECK(lt.pairs[0].t == 1);
    }

    SUBCASE("class weights scale the classification term") {
        Forecaster model(ModelKind::flare, cfg, 21);
        auto w = random_window(cfg, 2, rng);
        RolloutTrace trace = model.forward_flare(w, 1);
        LossBreakdown cn = model.loss(trace, kStageCn);
        auto ce = weighted_cross_entropy(trace.logits, kStageCn, cfg.loss.class_weights);
        CHECK(cn.cel == ce.loss);
    }
}

TEST_CASE("backward rejects a stale trace") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 22);
    Rng rng(23);
    auto w = random_window(cfg, 2, rng);

    RolloutTrace trace = model.forward_flare(w, 1);
    LossTrace lt;
    model.loss(trace, kStageCn, &lt);
    model.params().adam_update(AdamConfig{});
    CHECK_THROWS_AS(model.backward(trace, lt), ContractViolation);
}

TEST_CASE("gradient reaches the encoders through the rollout") {
    ModelConfig cfg = tiny_config();
    cfg.loss.alpha = 0.0;
    Forecaster model(ModelKind::flare, cfg, 24);
    Rng rng(25);
    auto w = random_window(cfg, 2, rng);

    model.params().zero_grads();
    RolloutTrace trace = model.forward_flare(w, 1);
    LossTrace lt;
    model.loss(trace, kStageMci, &lt);
    model.backward(trace, lt);

    double mag = 0.0;
    for (double v : model.params().at("enc_vol.0.W").grad.data()) mag += std::fabs(v);
    CHECK(mag > 0.0);
}

TEST_CASE("full-model gradients match finite differences") {
    for (const ModelCheckCase& c : standard_cases()) {
        CAPTURE(describe(c));
        GradCheckReport report = check_model_case(c, 1234);
        CHECK(report.passed);
        CHECK(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("tanh cell gradients match finite differences") {
    ModelConfig cfg = tiny_config();
    cfg.cell = CellKind::tanh_rnn;
    ModelCheckCase c;
    c.T = 3;
    c.tau = 2;
    c.impute_mid = true;
    GradCheckReport report = check_model_case(c, cfg, 99);
    CHECK(report.passed);
}

TEST_CASE("corrupted gradient is caught and named") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 26);
    Rng rng(27);
    auto w = random_window(cfg, 2, rng);

    model.params().zero_grads();
    RolloutTrace trace = model.forward_flare(w, 1);
    LossTrace lt;
    model.loss(trace, kStageCn, &lt);
    model.backward(trace, lt);
    model.params().at("pred.0.W").grad(0, 0) += 0.5;

    auto loss_fn = [&] {
        RolloutTrace t = model.forward_flare(w, 1);
        return model.loss(t, kStageCn).total;
    };
    GradCheckReport report = check_gradients(model.params(), loss_fn);
    CHECK(!report.passed);
    CHECK(report.worst_block == "pred.0.W");
}

TEST_CASE("repeated batch: adam memorizes six samples, cutting loss by 90 percent") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 28);
    Rng rng(29);

    struct Sample {
        std::vector<VisitInput> window;
        std::size_t tau;
        int label;
    };
    std::vector<Sample> batch;
    for (int i = 0; i < 6; ++i) {
        const std::size_t T = 2 + rng.below(3);
        const std::size_t tau = 1 + rng.below(cfg.max_sum_T_tau - T);
        batch.push_back({random_window(cfg, T, rng), tau, static_cast<int>(rng.below(3))});
    }

    auto batch_loss = [&] {
        double sum = 0.0;
        for (const Sample& s : batch) {
            RolloutTrace t = model.forward_flare(s.window, s.tau);
            sum += model.loss(t, s.label).total;
        }
        return sum;
    };

    const double initial = batch_loss();
    AdamConfig opt;
    for (int step = 0; step < 1000; ++step) {
        model.params().zero_grads();
        for (const Sample& s : batch) {
            RolloutTrace t = model.forward_flare(s.window, s.tau);
            LossTrace lt;
            model.loss(t, s.label, &lt);
            model.backward(t, lt);
        }
        model.params().adam_update(opt);
    }
    const double final_loss = batch_loss();
    CHECK(final_loss <= 0.1 * initial);
}

TEST_CASE("checkpoint round trip restores the model bitwise") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 30);
    Rng rng(31);
    auto w = random_window(cfg, 3, rng);
    Vec logits = model.forward_flare(w, 2).logits;

    const auto bin = temp_file("flare_ckpt_test.bin");
    save_checkpoint(bin.string(), model.params(), model.config_document());
    Forecaster loaded = Forecaster::from_checkpoint(load_checkpoint(bin.string()));
    CHECK(loaded.kind() == ModelKind::flare);

    Vec logits2 = loaded.forward_flare(w, 2).logits;
    CHECK(logits == logits2);
    for (const auto& block : model.params().blocks()) {
        const auto& other = loaded.params().at(block.name);
        CHECK(block.value.data() == other.value.data());
        CHECK(block.adam_m.data() == other.adam_m.data());
    }
    std::filesystem::remove(bin);

    const auto js = temp_file("flare_ckpt_test.json");
    save_checkpoint(js.string(), model.params(), model.config_document());
    Forecaster from_json_ckpt = Forecaster::from_checkpoint(load_checkpoint(js.string()));
    Vec logits3 = from_json_ckpt.forward_flare(w, 2).logits;
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(logits3[i] == doctest::Approx(logits[i]).epsilon(1e-14));
    std::filesystem::remove(js);
}

TEST_CASE("checkpoint refuses a mismatched config") {
    ModelConfig cfg = tiny_config();
    Forecaster model(ModelKind::flare, cfg, 32);
    const auto path = temp_file("flare_ckpt_mismatch.bin");

    // Lie about the hidden size in the embedded document.
    ModelConfig wrong = cfg;
    wrong.rnn_hidden += 1;
    Forecaster probe(ModelKind::flare, wrong, 33);
    save_checkpoint(path.string(), model.params(), probe.config_document());
    CHECK_THROWS_AS(Forecaster::from_checkpoint(load_checkpoint(path.string())), ShapeError);
    std::filesystem::remove(path);
}

TEST_CASE("model config json round trip") {
    ModelConfig cfg = tiny_config();
    cfg.cell = CellKind::tanh_rnn;
    cfg.tau_encoding = TauEncoding::one_hot;
    cfg.loss.alpha = 0.25;
    nlohmann::json j = cfg;
    ModelConfig back = j.get<ModelConfig>();
    nlohmann::json j2 = back;
    CHECK(j == j2);
}

TEST_CASE("moved models keep their own parameters") {
    // Layer views must rebind onto the moved parameter storage; containers
    // that relocate elements exercise the same path.
    ModelConfig cfg = tiny_config();
    Rng rng(77);
    auto w = random_window(cfg, 2, rng);

    Forecaster original(ModelKind::flare, cfg, 5151);
    Vec want = original.forward_flare(w, 2).logits;

    Forecaster moved(std::move(original));
    Vec got = moved.forward_flare(w, 2).logits;
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);

    std::vector<Forecaster> pool;
    std::vector<Vec> baselines;
    for (std::uint64_t s = 0; s < 5; ++s) {
        pool.emplace_back(ModelKind::flare, cfg, 6000 + s);
        baselines.push_back(pool.back().forward_flare(w, 1).logits);
    }
    // Growth above relocated earlier elements; every model must still produce
    // the logits it produced when freshly constructed.
    for (std::size_t k = 0; k < pool.size(); ++k) {
        Vec now = pool[k].forward_flare(w, 1).logits;
        for (std::size_t i = 0; i < now.size(); ++i) CHECK(now[i] == baselines[k][i]);
    }

    Forecaster assigned(ModelKind::flare, cfg, 7000);
    assigned = std::move(moved);
    Vec after = assigned.forward_flare(w, 2).logits;
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i] == want[i]);
}
