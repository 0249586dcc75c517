#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "dmm/motion_io.hpp"
#include "dmm/prediction.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

/// Runs the dmm binary with `args` in the fixture directory, capturing stdout.
Result run(const fs::path& dir, const std::string& args)
{
    const std::string cmd = "cd '" + dir.string() + "' && DMM_THREADS=1 '" DMM_CLI_PATH "' " + args + " 2>/dev/null";
    Result r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) {
        return r;
    }
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) {
        r.out.append(buf.data(), n);
    }
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> log_lines(const fs::path& p)
{
    std::istringstream in(read_file(p));
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

std::string table_only(const std::string& out)
{
    const auto at = out.find("method");
    if (at == std::string::npos) {
        return {};
    }
    return out.substr(at, out.find("per-item", at) - at);
}

/// Numbers on the table row whose first word is `name`.
std::vector<double> row(const std::string& out, const std::string& name)
{
    std::istringstream in(out);
    for (std::string line; std::getline(in, line);) {
        std::istringstream words(line);
        std::string first;
        words >> first;
        if (first == name) {
            std::vector<double> v;
            for (double x; words >> x;) {
                v.push_back(x);
            }
            return v;
        }
    }
    return {};
}

const char* kSmall =
    "--set model.n_samples=3 --set model.gru_hidden=16 --set model.hip_hidden=8 --set model.pose_embed=16 "
    "--set model.pose_ffn=32 --set model.pose_layers=1 --set critic_updates=1 --set batch_size=4";

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = fs::temp_directory_path() / ("dmm_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        ASSERT_EQ(run(dir_, "gen-data --out data --scenarios 10 --seed 7").code, 0);
        // untrained default-size model for the prediction and evaluation checks
        ASSERT_EQ(run(dir_, "train --data data --out fresh --steps 0").code, 0);
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static fs::path dir_;
};

fs::path Cli::dir_;

} // namespace

TEST_F(Cli, GenDataIsDeterministic)
{
    ASSERT_EQ(run(dir_, "gen-data --out again --scenarios 10 --seed 7").code, 0);
    EXPECT_EQ(read_file(dir_ / "data/train.motion"), read_file(dir_ / "again/train.motion"));
    EXPECT_EQ(read_file(dir_ / "data/test.motion"), read_file(dir_ / "again/test.motion"));
    ASSERT_EQ(run(dir_, "gen-data --out other --scenarios 10 --seed 8").code, 0);
    EXPECT_NE(read_file(dir_ / "data/train.motion"), read_file(dir_ / "other/train.motion"));
}

TEST_F(Cli, GenDataRejectsZeroScenarios)
{
    EXPECT_EQ(run(dir_, "gen-data --out none --scenarios 0").code, 2);
    EXPECT_EQ(run(dir_, "gen-data --out none --modes 7").code, 2);
}

TEST_F(Cli, GenDataDefaultsReportSplitAndLabels)
{
    const auto r = run(dir_, "gen-data --out full --binary");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("train: 800 sequences (160 scenarios)"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("test: 200 sequences (40 scenarios)"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("seed=7"), std::string::npos);
    const auto train = dmm::load_motion_file(dir_ / "full/train.motion");
    const auto test = dmm::load_motion_file(dir_ / "full/test.motion");
    EXPECT_EQ(train.size(), 800u);
    EXPECT_EQ(test.size(), 200u);
    std::set<int> labels;
    for (const auto& rec : train) {
        labels.insert(rec.mode.value_or(-1));
        EXPECT_EQ(rec.sequence.length(), 25u);
    }
    EXPECT_EQ(labels, (std::set<int>{0, 1, 2, 3, 4}));
}

TEST_F(Cli, TrainWritesOneLinePerStep)
{
    const auto r = run(dir_, std::string("train --data data --out run10 --steps 10 --seed 3 ") + kSmall +
                                 " --set checkpoint_interval=5");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("# resolved configuration"), std::string::npos);
    EXPECT_NE(r.out.find("seed=3"), std::string::npos);
    EXPECT_NE(r.out.find("final checkpoint: run10/ckpt_10.dmm"), std::string::npos) << r.out;
    const auto lines = log_lines(dir_ / "run10/train.log");
    ASSERT_EQ(lines.size(), 10u);
    for (std::size_t k = 0; k < lines.size(); ++k) {
        EXPECT_EQ(lines[k].rfind("step=" + std::to_string(k + 1) + " adv=", 0), 0u) << lines[k];
    }
}

TEST_F(Cli, ResumeContinuesTheLog)
{
    const std::string base = std::string("train --data data --steps 10 --seed 3 ") + kSmall +
                             " --set checkpoint_interval=5";
    ASSERT_EQ(run(dir_, base + " --out full10 --quiet").code, 0);
    ASSERT_EQ(run(dir_, base + " --out part --quiet").code, 0);
    const auto r = run(dir_, "train --data data --out part --resume part/ckpt_5.dmm --quiet");
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("at step 5"), std::string::npos);
    EXPECT_EQ(log_lines(dir_ / "part/train.log"), log_lines(dir_ / "full10/train.log"));
    EXPECT_EQ(read_file(dir_ / "part/ckpt_10.dmm"), read_file(dir_ / "full10/ckpt_10.dmm"));
}

TEST_F(Cli, ExitCodes)
{
    EXPECT_EQ(run(dir_, "train --data missing --out x --steps 1").code, 3);
    EXPECT_EQ(run(dir_, "train --data data --out x --no-such-flag").code, 2);
    EXPECT_EQ(run(dir_, "").code, 2);
    EXPECT_EQ(run(dir_, "train --data data --out x --set stepz=1").code, 2);
    EXPECT_EQ(run(dir_, "train --data data --out x --sim-mode sometimes").code, 2);
    EXPECT_EQ(run(dir_, std::string("train --data data --out bad --steps 2 ") + kSmall +
                            " --set abort_threshold=1e-9")
                  .code,
              4);
    EXPECT_EQ(run(dir_, "eval --checkpoint nowhere.dmm --data data").code, 3);
    EXPECT_EQ(run(dir_, "inspect --checkpoint data/train.motion").code, 3);
}

TEST_F(Cli, EvalUntrainedModel)
{
    const auto a = run(dir_, "eval --checkpoint fresh/ckpt_0.dmm --data data --out ev");
    ASSERT_EQ(a.code, 0);
    const auto model = row(a.out, "dmm-" + a.out.substr(a.out.find("model_version=dmm-") + 18, 16));
    ASSERT_EQ(model.size(), 9u) << a.out;
    for (const double v : model) {
        EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_GT(model[0], 0.0);
    EXPECT_EQ(row(a.out, "zero-velocity")[0], 0.0);
    EXPECT_TRUE(fs::exists(dir_ / "ev/metrics.tsv"));
    const auto b = run(dir_, "eval --checkpoint fresh/ckpt_0.dmm --data data --out ev2");
    EXPECT_EQ(table_only(a.out), table_only(b.out));
}

TEST_F(Cli, OracleModelHasZeroDisplacement)
{
    const auto r = run(dir_, "eval --oracle-model --data data");
    ASSERT_EQ(r.code, 0);
    const auto v = row(r.out, "oracle");
    ASSERT_EQ(v.size(), 9u);
    for (const std::size_t k : {1u, 2u, 3u, 4u}) {
        EXPECT_EQ(v[k], 0.0);
    }
}

TEST_F(Cli, PredictDefaultsAndOverrides)
{
    ASSERT_EQ(run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data data/test.motion --out p10.txt").code, 0);
    const auto p10 = dmm::load_prediction_file(dir_ / "p10.txt");
    EXPECT_EQ(p10.samples.size(), 10u);
    EXPECT_EQ(p10.horizon, 20u);
    ASSERT_EQ(run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data data/test.motion --n 3 --out p3.txt").code, 0);
    const auto p3 = dmm::load_prediction_file(dir_ / "p3.txt");
    ASSERT_EQ(p3.samples.size(), 3u);
    for (std::size_t g = 0; g < 3; ++g) {
        EXPECT_EQ(p3.samples[g], p10.samples[g]);
    }
    const auto again = run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data data/test.motion --n 3");
    EXPECT_NE(again.out.find(read_file(dir_ / "p3.txt")), std::string::npos);
}

TEST_F(Cli, PredictRejectsShortObservation)
{
    dmm::MotionSequence seq{10, dmm::PoseSequence(3)};
    dmm::save_motion_file(dir_ / "short.motion", {{0, std::nullopt, seq}});
    EXPECT_EQ(run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data short.motion").code, 3);
    EXPECT_EQ(run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data data/test.motion --n 11").code, 2);
}

TEST_F(Cli, PlotDataWritesTraces)
{
    ASSERT_EQ(run(dir_, "predict --checkpoint fresh/ckpt_0.dmm --data data/test.motion --n 2 --out plot.txt").code, 0);
    ASSERT_EQ(run(dir_, "plot-data --pred plot.txt --data data/test.motion --out traces").code, 0);
    for (const char* f : {"gt.tsv", "sample_1.tsv", "sample_2.tsv"}) {
        ASSERT_TRUE(fs::exists(dir_ / "traces" / f)) << f;
    }
    const auto lines = log_lines(dir_ / "traces/sample_2.tsv");
    EXPECT_EQ(lines.front(), "frame\tjoint\tx\ty\tz");
    EXPECT_EQ(lines.size(), 1u + 20u * 17u);

    dmm::MotionSequence seq{10, dmm::PoseSequence(12)};
    dmm::save_motion_file(dir_ / "twelve.motion", {{0, std::nullopt, seq}});
    EXPECT_EQ(run(dir_, "plot-data --pred plot.txt --data twelve.motion --out bad").code, 3);
}

TEST_F(Cli, InspectDescribesCheckpoint)
{
    const auto r = run(dir_, "inspect --checkpoint fresh/ckpt_0.dmm");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("step: 0"), std::string::npos);
    EXPECT_NE(r.out.find("generator: "), std::string::npos);
    EXPECT_NE(r.out.find("model.n_samples=10"), std::string::npos);
}
