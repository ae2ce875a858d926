#include <doctest.h>

#include <unistd.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "flare/commands.hpp"
#include "flare/dataio.hpp"
#include "flare/param.hpp"
#include "flare/sampling.hpp"
#include "flare/synthcohort.hpp"

using namespace flare;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("flare_cli_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string write_json(const TempDir& dir, const std::string& name, const json& doc) {
    const std::string p = dir.file(name);
    std::ofstream out(p);
    out << doc.dump(2);
    return p;
}

std::string read_bytes(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<json> read_jsonl(const std::string& p) {
    std::ifstream in(p);
    std::vector<json> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(json::parse(line));
    return lines;
}

json tiny_model() {
    return {{"dim_volumetric", 6}, {"enc_hidden_vol", {5}}, {"enc_out_vol", 3},
            {"enc_hidden_dem", {4}}, {"enc_out_dem", 2},
            {"enc_hidden_cog", {4}}, {"enc_out_cog", 2},
            {"rnn_hidden", 6},       {"pred_hidden", {5}}, {"classifier_hidden", {5}}};
}

json tiny_run_config(std::uint64_t data_seed = 21) {
    return {{"model", tiny_model()},
            {"training", {{"seed", 11}, {"epochs", 2}, {"batch_size", 8}, {"models", "both"}}},
            {"data", {{"synth", {{"seed", data_seed}, {"n_patients", 14}, {"dim_volumetric", 6}}}}},
            {"split", {{"train_fraction", 0.75}, {"seed", 5}}}};
}

}  // namespace

TEST_CASE("synth writes a deterministic cohort and honors --set") {
    TempDir dir;
    json cfg = {{"data", {{"synth", {{"seed", 9}, {"n_patients", 10}, {"dim_volumetric", 6}}}}},
                {"model", tiny_model()}};
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);

    CHECK(run_cli({"synth", "--config", cfg_path, "--out", dir.file("a.csv")}) == 0);
    CHECK(run_cli({"synth", "--config", cfg_path, "--out", dir.file("b.csv")}) == 0);
    CHECK(read_bytes(dir.file("a.csv")) == read_bytes(dir.file("b.csv")));

    Cohort cohort = load_cohort(dir.file("a.csv"));
    std::set<std::string> ids;
    for (const auto& t : cohort.trajectories) ids.insert(t.patient_id);
    CHECK(ids.size() == 10);

    // Manifest stage counts equal a recount of the written file.
    json manifest = json::parse(read_bytes(dir.file("a.manifest.json")));
    std::array<int, 3> recount{};
    for (const auto& t : cohort.trajectories)
        for (const auto& v : t.visits)
            if (v.label) recount[static_cast<std::size_t>(*v.label)]++;
    for (std::size_t stage = 0; stage < 3; ++stage)
        CHECK(manifest.at("stage_counts").at(stage) == recount[stage]);

    CHECK(run_cli({"synth", "--config", cfg_path, "--set", "data.synth.n_patients=5", "--out",
                   dir.file("c.csv")}) == 0);
    json small = json::parse(read_bytes(dir.file("c.manifest.json")));
    CHECK(small.at("n_patients") == 5);
}

TEST_CASE("config errors exit with code 2 before any side effect") {
    TempDir dir;

    const std::string bad = dir.file("bad.json");
    {
        std::ofstream out(bad);
        out << "{ not json";
    }
    CHECK(run_cli({"synth", "--config", bad, "--out", dir.file("x.csv")}) == 2);
    CHECK(!fs::exists(dir.file("x.csv")));

    CHECK(run_cli({"synth", "--config", dir.file("absent.json"), "--out", dir.file("y.csv")}) == 2);

    // Structurally valid but semantically broken config.
    json cfg = tiny_run_config();
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    const std::string run_dir = dir.file("run_invalid");
    CHECK(run_cli({"train", "--config", cfg_path, "--set", "model.rnn_hidden=0", "--out",
                   run_dir}) == 2);
    CHECK(!fs::exists(run_dir));  // validation precedes directory creation

    // synth without a synth spec
    json no_synth = {{"data", {{"path", dir.file("whatever.csv")}}}};
    CHECK(run_cli({"synth", "--config", write_json(dir, "ns.json", no_synth), "--out",
                   dir.file("z.csv")}) == 2);

    // training seed is mandatory
    json unseeded = tiny_run_config();
    unseeded["training"].erase("seed");
    CHECK(run_cli({"train", "--config", write_json(dir, "us.json", unseeded), "--out",
                   dir.file("run_unseeded")}) == 2);
}

TEST_CASE("data errors exit with code 3") {
    TempDir dir;
    json cfg = tiny_run_config();
    cfg["data"] = {{"path", dir.file("missing.csv")}};
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    CHECK(run_cli({"train", "--config", cfg_path, "--out", dir.file("run")}) == 3);
}

TEST_CASE("train writes logs, checkpoints and config; logs line up with epochs") {
    TempDir dir;
    const std::string cfg_path = write_json(dir, "cfg.json", tiny_run_config());
    const std::string run_dir = dir.file("run");

    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", run_dir}) == 0);

    for (const char* name :
         {"config.json", "normalizer.json", "checkpoint_flare_final.bin",
          "checkpoint_flare_best.bin", "checkpoint_concat_final.bin",
          "checkpoint_concat_best.bin", "train_flare.log.jsonl", "train_concat.log.jsonl"})
        CHECK(fs::exists(fs::path(run_dir) / name));

    auto logs = read_jsonl((fs::path(run_dir) / "train_flare.log.jsonl").string());
    REQUIRE(logs.size() == 2);  // one line per epoch
    CHECK(logs[0].at("epoch") == 1);
    CHECK(logs[1].at("epoch") == 2);
    for (const auto& line : logs) {
        CHECK(line.contains("total_loss"));
        CHECK(line.contains("cel"));
        CHECK(line.contains("aux"));
        CHECK(line.contains("wall_ms"));
    }
    // Losses decrease across two epochs on this easy cohort.
    CHECK(logs[1].at("total_loss").get<double>() < logs[0].at("total_loss").get<double>());

    json stored = json::parse(read_bytes((fs::path(run_dir) / "config.json").string()));
    CHECK(stored.at("training").at("epochs") == 2);
    CHECK(stored.at("model").at("rnn_hidden") == 6);
}

TEST_CASE("identical configs train to bitwise-identical checkpoints") {
    TempDir dir;
    const std::string cfg_path = write_json(dir, "cfg.json", tiny_run_config());
    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", dir.file("r1")}) == 0);
    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", dir.file("r2")}) == 0);

    for (const char* name : {"checkpoint_flare_final.bin", "checkpoint_concat_final.bin",
                             "normalizer.json"}) {
        CAPTURE(name);
        CHECK(read_bytes((fs::path(dir.file("r1")) / name).string()) ==
              read_bytes((fs::path(dir.file("r2")) / name).string()));
    }
}

TEST_CASE("zero epochs checkpoints the initialization") {
    TempDir dir;
    json cfg = tiny_run_config();
    cfg["training"]["epochs"] = 0;
    cfg["training"]["models"] = "flare";
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    const std::string run_dir = dir.file("run0");
    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", run_dir}) == 0);

    const std::string final_b = read_bytes((fs::path(run_dir) / "checkpoint_flare_final.bin").string());
    const std::string best_b = read_bytes((fs::path(run_dir) / "checkpoint_flare_best.bin").string());
    CHECK(final_b == best_b);

    auto ck = load_checkpoint((fs::path(run_dir) / "checkpoint_flare_final.bin").string());
    CHECK(ck.params.step() == 0);  // no optimizer updates happened
}

TEST_CASE("periodic checkpoints are tagged by epoch") {
    TempDir dir;
    json cfg = tiny_run_config();
    cfg["training"]["checkpoint_every"] = 1;
    cfg["training"]["models"] = "flare";
    const std::string run_dir = dir.file("run_ck");
    REQUIRE(run_cli({"train", "--config", write_json(dir, "cfg.json", cfg), "--out", run_dir}) ==
            0);
    CHECK(fs::exists(fs::path(run_dir) / "checkpoint_flare_e000001.bin"));
    CHECK(fs::exists(fs::path(run_dir) / "checkpoint_flare_e000002.bin"));
}

TEST_CASE("a second run cannot enter a locked run directory") {
    TempDir dir;
    const std::string run_dir = dir.file("locked");
    fs::create_directories(run_dir);
    {
        std::ofstream lock(fs::path(run_dir) / ".lock");
        lock << "pid 0\n";
    }
    const std::string cfg_path = write_json(dir, "cfg.json", tiny_run_config());
    CHECK(run_cli({"train", "--config", cfg_path, "--out", run_dir}) == 3);
    CHECK(fs::exists(fs::path(run_dir) / ".lock"));  // foreign lock is left alone
}

TEST_CASE("--model restricts training to one architecture") {
    TempDir dir;
    const std::string cfg_path = write_json(dir, "cfg.json", tiny_run_config());
    const std::string run_dir = dir.file("only_flare");
    REQUIRE(run_cli({"train", "--config", cfg_path, "--model", "flare", "--out", run_dir}) == 0);
    CHECK(fs::exists(fs::path(run_dir) / "checkpoint_flare_final.bin"));
    CHECK(!fs::exists(fs::path(run_dir) / "checkpoint_concat_final.bin"));
}

TEST_CASE("eval reproduces the sampler's test accounting and is idempotent") {
    TempDir dir;
    json cfg = tiny_run_config();
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    const std::string run_dir = dir.file("run");
    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", run_dir}) == 0);

    const std::string ck = (fs::path(run_dir) / "checkpoint_flare_final.bin").string();
    REQUIRE(run_cli({"eval", "--config", cfg_path, "--checkpoint", ck, "--out",
                     dir.file("eval1")}) == 0);

    json metrics = json::parse(read_bytes(dir.file("eval1") + "/metrics_flare.json"));

    // Independent accounting: regenerate, split, enumerate.
    CohortSpec spec = cfg.at("data").at("synth").get<CohortSpec>();
    Cohort cohort = generate_cohort(spec);
    auto [train_pos, test_pos] = split_patients(cohort, SplitSpec{0.75, 5});
    auto test_samples = enumerate_cohort(cohort, SampleLimits{}, test_pos);
    CHECK(metrics.at("total").get<std::size_t>() == test_samples.size());
    CHECK(metrics.at("n_skipped") == 0);  // flare consumes every window

    std::size_t bucket_sum = 0;
    for (const auto& b : metrics.at("buckets")) bucket_sum += b.at("count").get<std::size_t>();
    CHECK(bucket_sum == test_samples.size());

    REQUIRE(run_cli({"eval", "--config", cfg_path, "--checkpoint", ck, "--out",
                     dir.file("eval2")}) == 0);
    for (const char* name : {"metrics_flare.json", "confusion_flare.csv", "buckets_flare.csv"})
        CHECK(read_bytes(dir.file("eval1") + "/" + name) ==
              read_bytes(dir.file("eval2") + "/" + name));
}

TEST_CASE("eval on the train split and the concat baseline skips holes") {
    TempDir dir;
    json cfg = tiny_run_config();
    cfg["data"]["synth"]["missing_prob"] = 0.25;
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    const std::string run_dir = dir.file("run");
    REQUIRE(run_cli({"train", "--config", cfg_path, "--out", run_dir}) == 0);

    const std::string ck = (fs::path(run_dir) / "checkpoint_concat_final.bin").string();
    REQUIRE(run_cli({"eval", "--config", cfg_path, "--checkpoint", ck, "--split", "train",
                     "--out", dir.file("eval_tr")}) == 0);
    json metrics = json::parse(read_bytes(dir.file("eval_tr") + "/metrics_concat.json"));

    CohortSpec spec = cfg.at("data").at("synth").get<CohortSpec>();
    Cohort cohort = generate_cohort(spec);
    auto [train_pos, test_pos] = split_patients(cohort, SplitSpec{0.75, 5});
    auto train_samples = enumerate_cohort(cohort, SampleLimits{}, train_pos);
    std::size_t with_holes = 0;
    for (const auto& s : train_samples) with_holes += s.has_missing();

    CHECK(metrics.at("n_skipped").get<std::size_t>() == with_holes);
    CHECK(metrics.at("total").get<std::size_t>() == train_samples.size() - with_holes);
}

TEST_CASE("missing checkpoint exits with a data error") {
    TempDir dir;
    const std::string cfg_path = write_json(dir, "cfg.json", tiny_run_config());
    CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", dir.file("nope.bin"), "--out",
                   dir.file("eval")}) == 3);
}

TEST_CASE("buckets reports the augmentation grid for both splits") {
    TempDir dir;
    json cfg = tiny_run_config();
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    const std::string out_csv = dir.file("buckets.csv");
    REQUIRE(run_cli({"buckets", "--config", cfg_path, "--out", out_csv}) == 0);

    CohortSpec spec = cfg.at("data").at("synth").get<CohortSpec>();
    Cohort cohort = generate_cohort(spec);
    auto [train_pos, test_pos] = split_patients(cohort, SplitSpec{0.75, 5});
    const std::size_t expected = enumerate_cohort(cohort, SampleLimits{}, train_pos).size() +
                                 enumerate_cohort(cohort, SampleLimits{}, test_pos).size();

    std::ifstream in(out_csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "T,tau,split,count");
    std::size_t total = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto last = line.rfind(',');
        total += static_cast<std::size_t>(std::stoul(line.substr(last + 1)));
    }
    CHECK(total == expected);
}

TEST_CASE("gradcheck command passes on the built-in shapes") {
    CHECK(run_cli({"gradcheck"}) == 0);
    CHECK(run_cli({"gradcheck", "--seed", "7"}) == 0);
}

TEST_CASE("gradcheck refuses non-tiny shapes") {
    TempDir dir;
    json cfg = {{"model", tiny_model()}};
    cfg["model"]["rnn_hidden"] = 32;
    const std::string cfg_path = write_json(dir, "cfg.json", cfg);
    CHECK(run_cli({"gradcheck", "--config", cfg_path}) == 2);
}

TEST_CASE("unknown subcommands and flags fail") {
    CHECK(run_cli({"frobnicate"}) != 0);
    CHECK(run_cli(std::vector<std::string>{}) != 0);
}
