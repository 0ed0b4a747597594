// End-to-end checks of the ptqlab executable: spawns the built binary and
// inspects its files and exit codes.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "mock_server.hpp"
#include "ptqlab/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = PTQLAB_CLI_PATH;

int run(const std::string& args) {
    std::string cmd = kCli + " " + args + " >cli_stdout.txt 2>cli_stderr.txt";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("ptqlab_cli_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("genmodel is byte-deterministic and validates flags") {
    TempDir dir;
    std::string m1 = dir / "m1.ftm";
    std::string m2 = dir / "m2.ftm";
    CHECK(run("genmodel --out " + m1 + " --layers 4 --dim 32 --seed 7") == 0);
    CHECK(run("genmodel --out " + m2 + " --layers 4 --dim 32 --seed 7") == 0);
    CHECK(slurp(m1) == slurp(m2));
    CHECK(slurp(m1 + ".bin") == slurp(m2 + ".bin"));
    CHECK(slurp(m1).find("layers 4") != std::string::npos);

    CHECK(run("genmodel --out " + (dir / "bad.ftm") + " --dim 0") != 0);
}

TEST_CASE("quantize: rtn vs gptq on seeded inputs, gptaq collapse digest") {
    TempDir dir;
    std::string model = dir / "model.ftm";
    std::string calib = dir / "calib.fab";
    REQUIRE(run("genmodel --out " + model + " --layers 1 --dim 32 --seed 11") == 0);
    REQUIRE(run("gendata --out " + calib + " --rows 32 --cols 64 --seed 12") == 0);

    std::string common = " --model " + model + " --calib " + calib + " --group-size 32";
    REQUIRE(run("quantize" + common + " --method rtn --out " + (dir / "rtn")) == 0);
    REQUIRE(run("quantize" + common + " --method gptq --out " + (dir / "gptq")) == 0);
    REQUIRE(run("quantize" + common + " --method gptaq --out " + (dir / "gptaq")) == 0);

    json rtn_m = json::parse(slurp(dir / "rtn.manifest.json"));
    json gptq_m = json::parse(slurp(dir / "gptq.manifest.json"));
    CHECK(gptq_m["config"]["total_objective"].get<double>() <=
          rtn_m["config"]["total_objective"].get<double>() + 1e-12);

    // One-layer model: the eq2 reference coincides with the calibration
    // batch, so gptaq and gptq agree bit-for-bit on the artifacts.
    CHECK(slurp(dir / "gptq.layer0.qt") == slurp(dir / "gptaq.layer0.qt"));
    CHECK(slurp(dir / "gptq.ftm.bin") == slurp(dir / "gptaq.ftm.bin"));

    // Reruns reproduce identical output digests.
    REQUIRE(run("quantize" + common + " --method gptq --out " + (dir / "gptq2")) == 0);
    json gptq2_m = json::parse(slurp(dir / "gptq2.manifest.json"));
    CHECK(gptq_m["outputs"][(dir / "gptq") + ".ftm.bin"] ==
          gptq2_m["outputs"][(dir / "gptq2") + ".ftm.bin"]);
}

TEST_CASE("exit codes: io, format, dimension, usage") {
    TempDir dir;
    // Missing model file -> io error (3).
    CHECK(run("quantize --model " + (dir / "nope.ftm") + " --calib " + (dir / "nope.fab") +
              " --out " + (dir / "x")) == 3);

    // Malformed model manifest -> format error (4).
    std::string broken = dir / "broken.ftm";
    std::ofstream(broken) << "not a manifest\n";
    std::ofstream(broken + ".bin") << "";
    std::string calib = dir / "calib.fab";
    REQUIRE(run("gendata --out " + calib + " --rows 8 --cols 4 --seed 1") == 0);
    CHECK(run("quantize --model " + broken + " --calib " + calib + " --out " + (dir / "x")) ==
          4);

    // Calibration features mismatch -> dimension error (5).
    std::string model = dir / "model.ftm";
    REQUIRE(run("genmodel --out " + model + " --layers 1 --dim 16 --seed 2") == 0);
    CHECK(run("quantize --model " + model + " --calib " + calib + " --out " + (dir / "x") +
              " --group-size 16") == 5);

    // Group size that does not divide d_in -> dimension/config error (5).
    std::string calib16 = dir / "calib16.fab";
    REQUIRE(run("gendata --out " + calib16 + " --rows 16 --cols 8 --seed 3") == 0);
    CHECK(run("quantize --model " + model + " --calib " + calib16 + " --out " + (dir / "x") +
              " --group-size 5") == 5);

    // Non-finite batch data -> numerical failure (6).
    std::string nan_batch = dir / "nan.fab";
    {
        std::ofstream f(nan_batch, std::ios::binary);
        f << "fab v1\nrows 16\ncols 2\n\n";
        std::vector<double> data(32, std::nan(""));
        f.write(reinterpret_cast<const char*>(data.data()), 32 * sizeof(double));
    }
    CHECK(run("quantize --model " + model + " --calib " + nan_batch + " --out " + (dir / "x") +
              " --group-size 16") == 6);

    // Unknown flag -> usage error (2).
    CHECK(run("genmodel --out x.ftm --nope 1") == 2);

    // Unreachable endpoint -> endpoint error (7).
    std::string seeds = dir / "seeds.jsonl";
    std::ofstream(seeds) << "{\"id\":\"a\",\"prompt\":\"hello\"}\n";
    CHECK(run("regen --seeds " + seeds + " --out " + (dir / "cands.jsonl") +
              " --base-url http://127.0.0.1:9 --model m --max-retries 0") == 7);
}

TEST_CASE("stats + compare: gaussian flagged smoother than student-t") {
    TempDir dir;
    std::string g = dir / "gauss.fab";
    std::string t = dir / "t3.fab";
    REQUIRE(run("gendata --out " + g + " --rows 32 --cols 512 --dist gaussian --seed 5") == 0);
    REQUIRE(run("gendata --out " + t + " --rows 32 --cols 512 --dist student-t3 --seed 6") == 0);
    REQUIRE(run("stats --data " + g + " --out " + (dir / "sg")) == 0);
    REQUIRE(run("stats --data " + t + " --out " + (dir / "st")) == 0);
    REQUIRE(run("compare --a " + (dir / "sg") + " --b " + (dir / "st") + " --out " +
                (dir / "cmp.json")) == 0);

    json cmp = json::parse(slurp(dir / "cmp.json"));
    for (const auto& m : cmp["stats_comparison"]["metrics"]) {
        std::string name = m["metric"].get<std::string>();
        if (name == "excess_kurtosis" || name == "outlier_ratio")
            CHECK(m["smoother"].get<std::string>() == "left");
    }

    // Comparing a run against itself yields all-zero deltas.
    REQUIRE(run("compare --a " + (dir / "sg") + " --b " + (dir / "sg") + " --out " +
                (dir / "self.json")) == 0);
    json self = json::parse(slurp(dir / "self.json"));
    CHECK(self["a_manifest_digest"] == self["b_manifest_digest"]);
    for (const auto& m : self["stats_comparison"]["metrics"])
        for (const auto& d : m["per_layer_delta"]) CHECK(d.get<double>() == 0.0);
}

TEST_CASE("outputs are bit-identical across thread counts") {
    TempDir dir;
    std::string model = dir / "m.ftm";
    std::string calib = dir / "c.fab";
    REQUIRE(run("genmodel --out " + model + " --layers 2 --dim 64 --seed 20") == 0);
    REQUIRE(run("gendata --out " + calib + " --rows 64 --cols 96 --seed 21") == 0);

    auto with_threads = [&](const std::string& n, const std::string& out) {
        std::string cmd = "OMP_NUM_THREADS=" + n + " " + kCli + " quantize --model " + model +
                          " --calib " + calib + " --out " + out + " --group-size 32" +
                          " >/dev/null 2>&1";
        REQUIRE(std::system(cmd.c_str()) == 0);
        std::string cmd2 = "OMP_NUM_THREADS=" + n + " " + kCli + " stats --model " + model +
                           " --data " + calib + " --out " + out + "_s >/dev/null 2>&1";
        REQUIRE(std::system(cmd2.c_str()) == 0);
    };
    with_threads("1", dir / "t1");
    with_threads("7", dir / "t7");
    CHECK(slurp(dir / "t1.ftm.bin") == slurp(dir / "t7.ftm.bin"));
    CHECK(slurp(dir / "t1.layer0.qt") == slurp(dir / "t7.layer0.qt"));
    CHECK(slurp(dir / "t1.objectives.txt") == slurp(dir / "t7.objectives.txt"));
    CHECK(slurp(dir / "t1_s.stats.jsonl") == slurp(dir / "t7_s.stats.jsonl"));
}

TEST_CASE("stats taps every layer of a model") {
    TempDir dir;
    std::string model = dir / "m.ftm";
    std::string data = dir / "d.fab";
    REQUIRE(run("genmodel --out " + model + " --layers 3 --dim 8 --seed 9") == 0);
    REQUIRE(run("gendata --out " + data + " --rows 8 --cols 32 --seed 10") == 0);
    REQUIRE(run("stats --model " + model + " --data " + data + " --out " + (dir / "s")) == 0);
    std::string doc = slurp(dir / "s.stats.jsonl");
    std::size_t lines = 0;
    for (char c : doc)
        if (c == '\n') ++lines;
    CHECK(lines == 4); // input tap + 3 layer outputs
    CHECK(fs::exists(dir / "s.layer0.hist.csv"));
    CHECK(fs::exists(dir / "s.layer3.hist.csv"));
}

TEST_CASE("pipeline subcommand runs the bundled 8-seed fixture") {
    ptqlab_test::MockChatServer server;
    TempDir dir;

    std::string seeds = std::string(PTQLAB_FIXTURE_DIR) + "/seeds8.jsonl";
    std::string tmpl = dir / "chat.tmpl";
    std::ofstream(tmpl) << "<|user|>{prompt}<|assistant|>{response}";

    std::string base = " --base-url " + server.base_url() + " --model mock-gen --timeout 10";
    REQUIRE(run("pipeline --seeds " + seeds + " --out " + (dir / "run1") + " --template " +
                tmpl + base) == 0);
    REQUIRE(run("pipeline --seeds " + seeds + " --out " + (dir / "run2") + " --template " +
                tmpl + base) == 0);

    json m1 = json::parse(slurp(dir / "run1.manifest.json"));
    json m2 = json::parse(slurp(dir / "run2.manifest.json"));
    CHECK(m1["seeds_in"] == 8);
    CHECK(m1["assembled_out"] == 8);
    CHECK(m1["failed"] == 0);
    CHECK(m1["corpus_digest"] == m2["corpus_digest"]);

    std::string corpus = slurp(dir / "run1.corpus.jsonl");
    std::size_t lines = 0;
    for (char c : corpus)
        if (c == '\n') ++lines;
    CHECK(lines == 8);
    CHECK(corpus.find("<|user|>question 0<|assistant|>") != std::string::npos);

    // Stage-by-stage subcommands agree with the fused pipeline.
    REQUIRE(run("regen --seeds " + seeds + " --out " + (dir / "cands.jsonl") + base) == 0);
    REQUIRE(run("judge --candidates " + (dir / "cands.jsonl") + " --out " +
                (dir / "sel.jsonl") + base) == 0);
    REQUIRE(run("assemble --selected " + (dir / "sel.jsonl") + " --out " +
                (dir / "corpus.jsonl") + " --template " + tmpl) == 0);
    CHECK(slurp(dir / "corpus.jsonl") == corpus);
}
