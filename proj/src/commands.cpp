#include "flare/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "flare/config.hpp"
#include "flare/dataio.hpp"
#include "flare/errors.hpp"
#include "flare/gradcheck.hpp"
#include "flare/metrics.hpp"
#include "flare/model.hpp"
#include "flare/sampling.hpp"
#include "flare/synthcohort.hpp"
#include "flare/trainer.hpp"

namespace fs = std::filesystem;

namespace flare {

namespace {

// One run directory per process; created after validation so config errors
// leave nothing behind.
struct RunLock {
    std::string path;

    explicit RunLock(const fs::path& dir) : path((dir / ".lock").string()) {
        FILE* f = std::fopen(path.c_str(), "wx");
        if (!f)
            throw DataError("run directory is locked by another run (remove " + path +
                            " if stale)");
        std::fclose(f);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;
    ~RunLock() { std::remove(path.c_str()); }
};

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << content;
    if (!f.flush()) throw DataError("write failed: " + path.string());
}

Cohort resolve_cohort(const RunConfig& cfg) {
    if (cfg.data.synth.has_value()) return generate_cohort(*cfg.data.synth);
    return load_cohort(cfg.data.path);
}

void check_dims(const Cohort& cohort, const ModelConfig& model) {
    if (cohort.dim_volumetric != model.dim_volumetric ||
        cohort.dim_demographic != model.dim_demographic ||
        cohort.dim_cognitive != model.dim_cognitive)
        throw ConfigError(
            "cohort feature dims (" + std::to_string(cohort.dim_volumetric) + "/" +
            std::to_string(cohort.dim_demographic) + "/" + std::to_string(cohort.dim_cognitive) +
            ") do not match the model config (" + std::to_string(model.dim_volumetric) + "/" +
            std::to_string(model.dim_demographic) + "/" + std::to_string(model.dim_cognitive) +
            ")");
}

std::array<std::uint64_t, 3> count_stage_labels(const Cohort& cohort) {
    std::array<std::uint64_t, 3> counts{};
    for (const auto& traj : cohort.trajectories)
        for (const auto& visit : traj.visits)
            if (visit.label.has_value()) ++counts[static_cast<std::size_t>(*visit.label)];
    return counts;
}

nlohmann::json epoch_log_json(const EpochLog& e) {
    return nlohmann::json{{"epoch", e.epoch},
                          {"total_loss", e.total_loss},
                          {"cel", e.cel},
                          {"aux", e.aux},
                          {"wall_ms", e.wall_ms}};
}

// Per-model seed streams under training.seed.
constexpr std::uint64_t kInitStreamFlare = 101;
constexpr std::uint64_t kLoaderStreamFlare = 102;
constexpr std::uint64_t kInitStreamConcat = 201;
constexpr std::uint64_t kLoaderStreamConcat = 202;

}  // namespace

int cmd_synth(const SynthArgs& args) {
    const nlohmann::json doc = load_config_document(args.config, args.overrides);
    if (!doc.contains("data") || !doc.at("data").contains("synth"))
        throw ConfigError("synth: config needs a data.synth section");
    CohortSpec spec;
    try {
        spec = doc.at("data").at("synth").get<CohortSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad data.synth section: ") + e.what());
    }
    spec.validate();
    if (args.out.empty()) throw ConfigError("synth: --out is required");

    const Cohort cohort = generate_cohort(spec);
    const auto stages = count_stage_labels(cohort);
    nlohmann::json extra{{"spec", spec},
                         {"n_visits", cohort.total_visits()},
                         {"stage_counts", stages}};
    save_cohort(args.out, cohort, extra);

    std::cout << "patients: " << cohort.trajectories.size() << "\n"
              << "visits: " << cohort.total_visits() << "\n"
              << "stage counts: CN=" << stages[0] << " MCI=" << stages[1] << " AD=" << stages[2]
              << "\n"
              << "wrote " << args.out << " and " << manifest_path_for(args.out) << "\n";
    return 0;
}

int cmd_train(const TrainArgs& args) {
    nlohmann::json doc = load_config_document(args.config, args.overrides);
    RunConfig cfg = parse_run_config(doc);
    if (!args.models.empty()) {
        if (args.models != "flare" && args.models != "concat" && args.models != "both")
            throw ConfigError("--model must be flare|concat|both");
        cfg.training.models = args.models;
    }
    if (!cfg.training.seed.has_value())
        throw ConfigError("training.seed is required (runs must be reproducible)");
    if (args.out_dir.empty()) throw ConfigError("train: --out is required");
    const std::uint64_t seed = *cfg.training.seed;

    // Everything that can fail on config or data happens before the run
    // directory is touched.
    const Cohort cohort = resolve_cohort(cfg);
    check_dims(cohort, cfg.model);
    const auto [train_pos, test_pos] = split_patients(cohort, cfg.split);
    const auto train_subs = enumerate_cohort(cohort, cfg.eval.limits, train_pos);
    const auto test_subs = enumerate_cohort(cohort, cfg.eval.limits, test_pos);
    if (train_subs.empty()) throw DataError("train: no training samples after augmentation");
    const Normalizer norm = fit_normalizer(cohort, train_pos, "train");
    const auto train_samples = materialize_samples(cohort, train_subs, &norm);

    const fs::path dir(args.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create run directory " + dir.string());
    RunLock lock(dir);

    nlohmann::json resolved = cfg;
    write_text_file(dir / "config.json", resolved.dump(2) + "\n");
    save_normalizer((dir / "normalizer.json").string(), norm);

    auto train_one = [&](ModelKind kind) {
        const std::string kname = model_kind_to_string(kind);
        std::vector<TrainSample> samples = train_samples;
        if (kind == ModelKind::concat) {
            samples = fully_observed(train_samples);
            if (samples.empty())
                throw DataError("train: every training window has missing visits; "
                                "the concat baseline cannot train on this cohort");
        }
        const std::uint64_t init_stream =
            kind == ModelKind::flare ? kInitStreamFlare : kInitStreamConcat;
        const std::uint64_t loader_stream =
            kind == ModelKind::flare ? kLoaderStreamFlare : kLoaderStreamConcat;

        Forecaster model(kind, cfg.model, derive_seed(seed, init_stream));
        std::ofstream log(dir / ("train_" + kname + ".log.jsonl"), std::ios::binary);
        if (!log) throw DataError("cannot write training log for " + kname);

        auto on_epoch = [&](const EpochLog& e) {
            log << epoch_log_json(e).dump() << "\n";
            log.flush();
            if (cfg.training.checkpoint_every > 0 &&
                e.epoch % cfg.training.checkpoint_every == 0) {
                char tag[32];
                std::snprintf(tag, sizeof(tag), "_e%06zu", e.epoch);
                save_checkpoint((dir / ("checkpoint_" + kname + tag + ".bin")).string(),
                                model.params(), model.config_document());
            }
        };

        const TrainOutcome outcome =
            train_model(model, samples, cfg.training.epochs, cfg.training.batch_size,
                        cfg.training.loader_scheme, derive_seed(seed, loader_stream),
                        cfg.optimizer, on_epoch);

        save_checkpoint((dir / ("checkpoint_" + kname + "_final.bin")).string(), model.params(),
                        model.config_document());
        save_checkpoint((dir / ("checkpoint_" + kname + "_best.bin")).string(),
                        outcome.best_params, model.config_document());

        const double final_loss =
            outcome.logs.empty() ? outcome.initial_loss : outcome.logs.back().total_loss;
        std::cout << "[" << kname << "] samples=" << samples.size()
                  << " epochs=" << cfg.training.epochs << " initial_loss=" << outcome.initial_loss
                  << " final_loss=" << final_loss << " best_epoch=" << outcome.best_epoch
                  << " best_loss=" << outcome.best_loss << "\n";
    };

    std::cout << "patients: " << cohort.trajectories.size() << " (train " << train_pos.size()
              << ", test " << test_pos.size() << ")\n"
              << "augmented samples: train " << train_subs.size() << ", test "
              << test_subs.size() << "\n";
    if (cfg.training.models == "flare" || cfg.training.models == "both")
        train_one(ModelKind::flare);
    if (cfg.training.models == "concat" || cfg.training.models == "both")
        train_one(ModelKind::concat);
    std::cout << "run directory: " << dir.string() << "\n";
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    nlohmann::json doc = load_config_document(args.config, args.overrides);
    RunConfig cfg = parse_run_config(doc);
    if (args.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
    if (args.out_dir.empty()) throw ConfigError("eval: --out is required");
    if (args.split != "test" && args.split != "train")
        throw ConfigError("eval: --split must be test|train");

    Forecaster model = Forecaster::from_checkpoint(load_checkpoint(args.checkpoint));
    const SampleLimits limits{model.config().max_T, model.config().max_sum_T_tau};

    const Cohort cohort = resolve_cohort(cfg);
    check_dims(cohort, model.config());
    const auto [train_pos, test_pos] = split_patients(cohort, cfg.split);
    const auto& positions = args.split == "test" ? test_pos : train_pos;
    const auto subs = enumerate_cohort(cohort, limits, positions);
    if (subs.empty()) throw DataError("eval: no samples in the " + args.split + " split");

    const std::string norm_path =
        args.normalizer.empty()
            ? (fs::path(args.checkpoint).parent_path() / "normalizer.json").string()
            : args.normalizer;
    const Normalizer norm = load_normalizer(norm_path);
    const auto samples = materialize_samples(cohort, subs, &norm);

    const EvalReport report = evaluate_model(model, samples, limits);
    const std::string kname = model_kind_to_string(model.kind());

    fs::create_directories(args.out_dir);
    write_text_file(fs::path(args.out_dir) / ("metrics_" + kname + ".json"),
                    report_to_json(report).dump(2) + "\n");
    write_text_file(fs::path(args.out_dir) / ("confusion_" + kname + ".csv"),
                    confusion_csv(report.confusion));
    write_text_file(fs::path(args.out_dir) / ("buckets_" + kname + ".csv"),
                    bucket_grid_csv(report, limits));

    std::cout << "[" << kname << "] split=" << args.split << " evaluated=" << report.total
              << " skipped=" << report.n_skipped << " accuracy=" << report.overall.accuracy
              << " macro_f1=" << report.overall.macro_f1 << "\n"
              << "reports in " << args.out_dir << "\n";
    return 0;
}

int cmd_gradcheck(const GradcheckArgs& args) {
    ModelConfig cfg = tiny_config();
    if (!args.config.empty() || !args.overrides.empty()) {
        const nlohmann::json doc = load_config_document(args.config, args.overrides);
        if (doc.contains("model")) {
            try {
                cfg = doc.at("model").get<ModelConfig>();
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(std::string("bad model section: ") + e.what());
            }
        }
    }
    cfg.validate();
    if (cfg.latent_dim() > 8 || cfg.rnn_hidden > 8)
        throw ConfigError("gradcheck: latent dim and rnn_hidden must be <= 8 "
                          "(finite differences over a big model are too slow to be useful)");

    const auto start = std::chrono::steady_clock::now();
    bool all_ok = true;
    std::string worst_case, worst_block;
    double worst_err = 0.0;
    for (const auto& c : standard_cases()) {
        const GradCheckReport report = check_model_case(c, cfg, args.seed);
        std::printf("%-34s max_rel_err %.3e (block %s) %s\n", describe(c).c_str(),
                    report.max_rel_err, report.worst_block.c_str(),
                    report.passed ? "ok" : "FAIL");
        if (!report.passed) {
            for (const auto& b : report.blocks)
                if (b.max_rel_err >= report.tolerance)
                    std::printf("    %-16s rel_err %.3e analytic % .9e numeric % .9e\n",
                                b.name.c_str(), b.max_rel_err, b.analytic, b.numeric);
        }
        if (report.max_rel_err >= worst_err) {
            worst_err = report.max_rel_err;
            worst_case = describe(c);
            worst_block = report.worst_block;
        }
        all_ok = all_ok && report.passed;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("gradcheck: %s, worst %.3e (%s, block %s), %.1fs\n",
                all_ok ? "all cases passed" : "FAILED", worst_err, worst_case.c_str(),
                worst_block.c_str(), secs);
    if (!all_ok)
        throw VerificationError("gradient check failed at block " + worst_block + " (case " +
                                worst_case + ")");
    return 0;
}

int cmd_buckets(const BucketsArgs& args) {
    const nlohmann::json doc = load_config_document(args.config, args.overrides);
    RunConfig cfg = parse_run_config(doc);

    const Cohort cohort = resolve_cohort(cfg);
    const auto [train_pos, test_pos] = split_patients(cohort, cfg.split);
    const auto train_subs = enumerate_cohort(cohort, cfg.eval.limits, train_pos);
    const auto test_subs = enumerate_cohort(cohort, cfg.eval.limits, test_pos);
    const auto train_counts = bucket_counts(train_subs);
    const auto test_counts = bucket_counts(test_subs);

    std::string csv = "T,tau,split,count\n";
    for (std::size_t T = 2; T <= cfg.eval.limits.max_T; ++T)
        for (std::size_t tau = 1; T + tau <= cfg.eval.limits.max_sum_T_tau; ++tau) {
            const std::pair<std::size_t, std::size_t> key{T, tau};
            auto count_of = [&](const auto& counts) {
                auto it = counts.find(key);
                return it == counts.end() ? std::size_t{0} : it->second;
            };
            csv += std::to_string(T) + "," + std::to_string(tau) + ",train," +
                   std::to_string(count_of(train_counts)) + "\n";
            csv += std::to_string(T) + "," + std::to_string(tau) + ",test," +
                   std::to_string(count_of(test_counts)) + "\n";
        }

    std::cout << csv << "total: train " << train_subs.size() << ", test " << test_subs.size()
              << " (patients " << train_pos.size() << "/" << test_pos.size() << ")\n";
    if (!args.out.empty()) write_text_file(args.out, csv);
    return 0;
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"FLARe: longitudinal disease-stage forecasting (latent rollout + baseline)"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort CSV + manifest");
    synth->add_option("--config", synth_args.config, "JSON config with a data.synth section");
    synth->add_option("--set", synth_args.overrides, "config override key.path=value");
    synth->add_option("--out", synth_args.out, "output cohort CSV path")->required();

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train models and write checkpoints + logs");
    train->add_option("--config", train_args.config, "JSON run config")->required();
    train->add_option("--set", train_args.overrides, "config override key.path=value");
    train->add_option("--out", train_args.out_dir, "run directory")->required();
    train->add_option("--model", train_args.models, "flare|concat|both (overrides config)");

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint, write bucketed reports");
    eval->add_option("--config", eval_args.config, "JSON run config (data + split)")->required();
    eval->add_option("--set", eval_args.overrides, "config override key.path=value");
    eval->add_option("--checkpoint", eval_args.checkpoint, "checkpoint file")->required();
    eval->add_option("--normalizer", eval_args.normalizer,
                     "normalizer.json (default: next to the checkpoint)");
    eval->add_option("--out", eval_args.out_dir, "report directory")->required();
    eval->add_option("--split", eval_args.split, "test|train (default test)");

    GradcheckArgs grad_args;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of all gradients");
    grad->add_option("--config", grad_args.config, "JSON config with an optional model section");
    grad->add_option("--set", grad_args.overrides, "config override key.path=value");
    grad->add_option("--seed", grad_args.seed, "seed for weights and inputs");

    BucketsArgs buckets_args;
    auto* buckets = app.add_subcommand("buckets", "print the (T, tau) augmentation report");
    buckets->add_option("--config", buckets_args.config, "JSON run config")->required();
    buckets->add_option("--set", buckets_args.overrides, "config override key.path=value");
    buckets->add_option("--out", buckets_args.out, "also write the report CSV here");

    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("flare");
    for (const auto& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args);
        if (grad->parsed()) return cmd_gradcheck(grad_args);
        if (buckets->parsed()) return cmd_buckets(buckets_args);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const VerificationError& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return 4;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    args.reserve(static_cast<std::size_t>(argc > 0 ? argc - 1 : 0));
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace flare
