#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "json.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const fs::path& err_log) {
    const std::string cmd = std::string(NSFMAP_CLI_PATH) + " " + args + " 2>" + err_log.string();
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

const std::string kSmallGen = "--n-cycles 30 --set steps_per_state=2 --set fusion_steps_per_state=3 --set image_size=8";
const std::string kQuickTrain = "--epochs 2 --set plateau_patience=1 --set image_resize=8 --set pretrain_epochs=1";

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new nsfmap::support::TempDir();
        const auto r = run("gen --seed 4 " + kSmallGen + " --out " + (root() / "data").string(), log());
        ASSERT_EQ(r.code, 0) << slurp(log());
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path root() { return dir_->path; }
    static fs::path log() { return dir_->path / "stderr.txt"; }
    static std::string data() { return (root() / "data").string(); }

    static nsfmap::support::TempDir* dir_;
};

nsfmap::support::TempDir* CliTest::dir_ = nullptr;

}  // namespace

TEST_F(CliTest, GenWritesDatasetAndManifest) {
    EXPECT_TRUE(fs::exists(root() / "data" / "samples.csv"));
    const auto m = load(root() / "data" / "manifest.json");
    EXPECT_EQ(m["command"], "gen");
    EXPECT_EQ(m["config"]["n_cycles"]["value"], "30");
    EXPECT_EQ(m["config"]["n_cycles"]["source"], "cli");
    EXPECT_EQ(m["config"]["steps_per_state"]["source"], "cli");
}

TEST_F(CliTest, TrainEvalExplainStreamPipeline) {
    const auto tr = root() / "b1";
    auto r = run("train --variant B1 --data " + data() + " " + kQuickTrain + " --out " + tr.string(), log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    for (const char* f : {"checkpoint.json", "history.jsonl", "split.json", "manifest.json"}) {
        EXPECT_TRUE(fs::exists(tr / f)) << f;
    }
    const auto split = load(tr / "split.json");
    EXPECT_FALSE(split["test"].empty());
    EXPECT_FALSE(split["validation"].empty());

    const auto ev = root() / "eval";
    r = run("eval --checkpoint " + (tr / "checkpoint.json").string() + " --data " + data() + " --split " +
                (tr / "split.json").string() + " --part test --out " + ev.string(),
            log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    const auto metrics = load(ev / "metrics.json");
    EXPECT_TRUE(metrics.contains("consistency_rate"));

    const auto ex = root() / "explain";
    r = run("explain --checkpoint " + (tr / "checkpoint.json").string() + " --data " + data() +
                " --state 4 --limit 5 --format structured --out " + ex.string(),
            log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    std::ifstream lines(ex / "explanations.jsonl");
    int n = 0;
    for (std::string l; std::getline(lines, l); ++n) EXPECT_EQ(json::parse(l)["state"]["index"], 4);
    EXPECT_EQ(n, 5);

    const auto st = root() / "stream";
    r = run("stream --checkpoint " + (tr / "checkpoint.json").string() + " --data " + data() +
                " --test-mode --max-samples 15 --out " + st.string(),
            log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    r = run("validate-stream " + (st / "stream.jsonl").string(), log());
    EXPECT_EQ(r.code, 0) << r.out;

    std::ofstream(st / "stream.jsonl", std::ios::app) << "{not json\n";
    r = run("validate-stream " + (st / "stream.jsonl").string(), log());
    EXPECT_EQ(r.code, 1);
}

TEST_F(CliTest, OntologyQueryAndUpdate) {
    auto r = run("onto query --sensor variable-1 --state 4", log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    EXPECT_NE(r.out.find("[6000, 8000]"), std::string::npos) << r.out;
    r = run("onto query --anomaly NoNose", log());
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("8"), std::string::npos);

    const auto out = root() / "onto";
    r = run("onto update --sensor variable-1 --state 4 --min 5000 --max 9000 --out " + out.string(), log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    r = run("onto query --ontology " + (out / "ontology.json").string() + " --sensor variable-1 --state 4", log());
    EXPECT_NE(r.out.find("[5000, 9000]"), std::string::npos) << r.out;
    r = run("onto validate --ontology " + (out / "ontology.json").string(), log());
    EXPECT_EQ(r.code, 0);
}

TEST_F(CliTest, ErrorsExitNonZeroWithMessage) {
    auto r = run("train --variant P9 --data " + data() + " --out " + (root() / "bad").string(), log());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(slurp(log()).find("error:"), std::string::npos);
    r = run("gen --set no_such_key=1 --out " + (root() / "bad2").string(), log());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(slurp(log()).find("no_such_key"), std::string::npos);
    r = run("onto query --sensor variable-1 --state 40", log());
    EXPECT_NE(r.code, 0);
}

TEST_F(CliTest, AblationCoversEveryVariantAndSplit) {
    const auto out = root() / "ablate";
    const auto r =
        run("ablate --data " + data() + " " + kQuickTrain + " --seeds 1 --splits 0.8,0.6 --out " + out.string(), log());
    ASSERT_EQ(r.code, 0) << slurp(log());
    const auto rep = load(out / "report.json");
    ASSERT_EQ(rep["rows"].size(), 14u);
    int ok = 0;
    for (const auto& row : rep["rows"]) ok += row["runs_ok"].get<int>();
    EXPECT_EQ(ok, 14) << rep["cells"].dump(1);
    const auto table = slurp(out / "table.md");
    EXPECT_NE(table.find("| P3 | 60/40 |"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
}
