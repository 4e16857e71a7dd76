#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lerm/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "lerm_lab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = lerm::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char ch : s) n += ch == '\n';
    return n;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("lerm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string config(const std::string& name, const std::string& text) {
        const fs::path p = root_ / name;
        std::ofstream(p, std::ios::binary) << text;
        return p.string();
    }
    std::string dir(const std::string& name) const { return (root_ / name).string(); }

    fs::path root_;
};

// A small SSL task that trains in well under a second.
const char* kSmallSsl =
    "classes=3\ndim=4\nunlabeled_per_class=20\ntest_per_class=10\nhidden=8\nepochs=6\neval_every=2\n";

}  // namespace

TEST_F(CliTest, RunWritesArtifacts) {
    const auto cfg = config("a.cfg", kSmallSsl);
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "--quiet", "run"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    const std::string metrics = slurp(dir("o") + "/metrics.csv");
    EXPECT_EQ(count_lines(metrics), 1u + 6 / 2 + 1);
    EXPECT_TRUE(fs::exists(dir("o") + "/resolved.cfg"));
    EXPECT_TRUE(fs::exists(dir("o") + "/model.ckpt"));
}

TEST_F(CliTest, RunIsByteIdenticalAndResolvedReplays) {
    const auto cfg = config("a.cfg", kSmallSsl);
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("a"), "--quiet", "run"}).code, 0);
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("b"), "--quiet", "run"}).code, 0);
    EXPECT_EQ(slurp(dir("a") + "/metrics.csv"), slurp(dir("b") + "/metrics.csv"));
    EXPECT_EQ(slurp(dir("a") + "/model.ckpt"), slurp(dir("b") + "/model.ckpt"));
    // Feeding resolved.cfg back reproduces the run.
    ASSERT_EQ(invoke({"--config", dir("a") + "/resolved.cfg", "--out", dir("c"), "--quiet", "run"}).code, 0);
    EXPECT_EQ(slurp(dir("a") + "/metrics.csv"), slurp(dir("c") + "/metrics.csv"));
}

TEST_F(CliTest, SeedFlagsOverrideConfig) {
    const auto cfg = config("a.cfg", kSmallSsl);
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("a"), "--quiet", "--seed-train", "7", "run"}).code, 0);
    EXPECT_NE(slurp(dir("a") + "/resolved.cfg").find("seed_train=7\n"), std::string::npos);
}

TEST_F(CliTest, UnknownKeyFailsNamingKey) {
    const auto cfg = config("bad.cfg", "epochs=2\nlamda=1\n");
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "run"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("lamda"), std::string::npos);
    EXPECT_NE(r.err.find("line 2"), std::string::npos);
}

TEST_F(CliTest, BadUsageFails) {
    EXPECT_NE(invoke({}).code, 0);
    EXPECT_NE(invoke({"frobnicate"}).code, 0);
    EXPECT_NE(invoke({"--config", dir("missing.cfg"), "run"}).code, 0);
}

TEST_F(CliTest, DivergenceExitsNonzero) {
    const auto cfg = config("a.cfg", std::string(kSmallSsl) + "learning_rate=1e200\n");
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "--quiet", "run"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("diverged"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir("o") + "/metrics.csv"));
}

TEST_F(CliTest, CompareThreeArms) {
    const auto cfg = config("a.cfg", kSmallSsl);
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "--quiet", "compare"});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(dir("o") + "/compare.csv");
    EXPECT_EQ(count_lines(csv), 4u);
    EXPECT_EQ(csv.rfind("arm,regularizer,divergence,lambda,top1,macro_f1,mean_entropy,focus_recall,diverged,"
                        "hist_1,hist_2,hist_3\n",
                        0),
              0u);
    EXPECT_NE(csv.find("\nerm,none,"), std::string::npos);
    EXPECT_NE(csv.find("\nentmin,entmin,"), std::string::npos);
    EXPECT_NE(csv.find("\nlerm,lerm,"), std::string::npos);
}

TEST_F(CliTest, CompareLambdaZeroRowsIdentical) {
    const auto cfg = config("a.cfg", std::string(kSmallSsl) + "lambda=0\n");
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("o"), "--quiet", "compare"}).code, 0);
    std::istringstream csv(slurp(dir("o") + "/compare.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<std::string> metrics;
    while (std::getline(csv, line)) {
        // drop arm, regularizer, divergence
        std::size_t pos = 0;
        for (int k = 0; k < 3; ++k) pos = line.find(',', pos) + 1;
        metrics.push_back(line.substr(pos));
    }
    ASSERT_EQ(metrics.size(), 3u);
    EXPECT_EQ(metrics[0], metrics[1]);
    EXPECT_EQ(metrics[0], metrics[2]);
}

TEST_F(CliTest, CompareRejectsUnknownArm) {
    const auto cfg = config("a.cfg", kSmallSsl);
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "compare", "--arms", "erm,bogus"});
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.err.find("bogus"), std::string::npos);
}

TEST_F(CliTest, SweepRowsInValueOrder) {
    const auto cfg = config("a.cfg", kSmallSsl);
    const auto r =
        invoke({"--config", cfg, "--out", dir("o"), "--quiet", "sweep", "--key", "lambda", "--values", "1,0,0.5"});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(dir("o") + "/sweep.csv");
    EXPECT_EQ(count_lines(csv), 4u);
    EXPECT_NE(csv.find("\nlambda,1,"), std::string::npos);
    EXPECT_LT(csv.find("\nlambda,1,"), csv.find("\nlambda,0,"));
    EXPECT_LT(csv.find("\nlambda,0,"), csv.find("\nlambda,0.5,"));
}

TEST_F(CliTest, SweepRejections) {
    const auto cfg = config("a.cfg", kSmallSsl);
    EXPECT_NE(invoke({"--config", cfg, "--out", dir("o"), "sweep", "--values", ""}).code, 0);
    EXPECT_NE(invoke({"--config", cfg, "--out", dir("o"), "sweep", "--key", "divergence", "--values", "l1"}).code, 0);
    EXPECT_NE(invoke({"--config", cfg, "--out", dir("o"), "sweep", "--values", "1,x"}).code, 0);
    EXPECT_NE(invoke({"--config", cfg, "--out", dir("o"), "sweep"}).code, 0);
}

TEST_F(CliTest, CheckTheoremsDeterministicAndClean) {
    const auto a = invoke({"--out", dir("a"), "check-theorems", "--trials", "200"});
    const auto b = invoke({"--out", dir("b"), "check-theorems", "--trials", "200"});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0);
    const std::string csv = slurp(dir("a") + "/theorems.csv");
    EXPECT_EQ(csv, slurp(dir("b") + "/theorems.csv"));
    EXPECT_EQ(count_lines(csv), 1u + 3 * 201);
    const std::string summary = slurp(dir("a") + "/theorems_summary.txt");
    auto occurrences = [&](const std::string& needle) {
        std::size_t n = 0;
        for (auto pos = summary.find(needle); pos != std::string::npos; pos = summary.find(needle, pos + 1)) ++n;
        return n;
    };
    EXPECT_EQ(occurrences(" unconditional_violations 0 "), 3u);
    EXPECT_EQ(occurrences(" conditional_violations 0\n"), 3u);
    EXPECT_EQ(a.out, summary);
    // The injected one-hot trial flags equality in every theorem.
    EXPECT_NE(csv.find("\n0,T1,true,true,true,true,"), std::string::npos);
    EXPECT_NE(csv.find("\n0,T2,true,true,true,true,"), std::string::npos);
    EXPECT_NE(csv.find("\n0,T3,true,true,true,true,"), std::string::npos);
}

TEST_F(CliTest, CheckTheoremsRejectsZeroTrials) {
    EXPECT_EQ(invoke({"--out", dir("a"), "check-theorems", "--trials", "0"}).code, 1);
}

TEST_F(CliTest, ExportTaskWritesCsv) {
    const auto cfg = config("a.cfg", "scenario=uda\nclasses=3\ndim=4\nsource_per_class=5\n"
                                     "unlabeled_per_class=5\ntest_per_class=2\n");
    const auto r = invoke({"--config", cfg, "--out", dir("o"), "--quiet", "export-task"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir("o") + "/source.csv"));
    const std::string first = slurp(dir("o") + "/source.csv");
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("p"), "--quiet", "export-task"}).code, 0);
    EXPECT_EQ(first, slurp(dir("p") + "/source.csv"));
}

TEST_F(CliTest, OutputDirectoryFromEnvironment) {
    const auto cfg = config("a.cfg", kSmallSsl);
    ::setenv(lerm::cli::kOutEnv, dir("env").c_str(), 1);
    const auto r = invoke({"--config", cfg, "--quiet", "export-task"});
    ::unsetenv(lerm::cli::kOutEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir("env") + "/resolved.cfg"));
}

TEST_F(CliTest, ConfigOutBeatsEnvironment) {
    const auto cfg = config("a.cfg", std::string(kSmallSsl) + "out=" + dir("cfgout") + "\n");
    ::setenv(lerm::cli::kOutEnv, dir("env").c_str(), 1);
    const auto r = invoke({"--config", cfg, "--quiet", "export-task"});
    ::unsetenv(lerm::cli::kOutEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir("cfgout") + "/resolved.cfg"));
    EXPECT_FALSE(fs::exists(dir("env")));
}

namespace {

// compare.csv rows as (arm, column value) for the named column.
std::vector<std::pair<std::string, double>> compare_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line, cell;
    std::getline(in, line);
    std::size_t index = 0;
    {
        std::istringstream header(line);
        while (std::getline(header, cell, ',') && cell != column) ++index;
    }
    std::vector<std::pair<std::string, double>> rows;
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        rows.emplace_back(cells.at(0), lerm::parse_double(cells.at(index)));
    }
    return rows;
}

}  // namespace

TEST_F(CliTest, ImbalancedPresetLermHasHighestMacroF1) {
    const auto cfg = config("imb.cfg", "scenario=ssl\ntask=imbalanced\n");
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("o"), "--quiet", "compare"}).code, 0);
    const auto rows = compare_column(slurp(dir("o") + "/compare.csv"), "macro_f1");
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[2].first, "lerm");
    EXPECT_GT(rows[2].second, rows[0].second);
    EXPECT_GT(rows[2].second, rows[1].second);
}

TEST_F(CliTest, UdaWithoutShiftArmsAgree) {
    const auto cfg = config("uda.cfg", "scenario=uda\nshift=0\nrotation=0\n");
    ASSERT_EQ(invoke({"--config", cfg, "--out", dir("o"), "--quiet", "compare"}).code, 0);
    const auto rows = compare_column(slurp(dir("o") + "/compare.csv"), "top1");
    ASSERT_EQ(rows.size(), 3u);
    double lo = 1.0, hi = 0.0;
    for (const auto& [arm, top1] : rows) {
        lo = std::min(lo, top1);
        hi = std::max(hi, top1);
    }
    EXPECT_LE(hi - lo, 0.02);
}
