// Acceptance report: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The gradient, oracle, trivial-case and schedule suites run as filtered unit
// test binaries; training outcome, ablation, hip wiring, throughput and
// persistence are measured here on the default configuration.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <unistd.h>
#include <vector>

#include "dmm/checkpoint.hpp"
#include "dmm/evaluation.hpp"
#include "dmm/prediction.hpp"
#include "dmm/synthetic.hpp"
#include "dmm/trainer.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;
int reported = 0;

void report(bool ok, const std::string& name, const std::string& detail)
{
    std::printf("%s  %-28s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
    ++reported;
}

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Runs a unit test binary restricted to `filter`; true when at least one
/// test was selected and every selected test passed.
bool run_suite(const char* binary, const std::string& filter, double& secs)
{
    const std::string cmd = std::string("'") + binary + "' --gtest_brief=1 --gtest_filter='" + filter + "' 2>&1";
    const auto t0 = Clock::now();
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) {
        return false;
    }
    std::string out;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) {
        out.append(buf, n);
    }
    const int status = ::pclose(p);
    secs += seconds_since(t0);
    const bool ran = out.find("[  PASSED  ] 0 tests") == std::string::npos && out.find("[  PASSED  ]") != std::string::npos;
    return ran && WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

struct Corpus {
    std::vector<dmm::SamplePair> train;  // rebased
    std::vector<dmm::SamplePair> test;
};

Corpus default_corpus()
{
    dmm::SynthConfig sc;
    const auto records = dmm::generate_synthetic_records(sc, 7);
    const std::size_t test_scenarios = static_cast<std::size_t>(0.2 * static_cast<double>(sc.scenarios));
    const std::size_t cut = (sc.scenarios - test_scenarios) * sc.modes_per_observation;
    const std::vector<dmm::MotionRecord> train(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(cut));
    const std::vector<dmm::MotionRecord> test(records.begin() + static_cast<std::ptrdiff_t>(cut), records.end());
    return {dmm::rebase_pairs(dmm::records_to_pairs(train, sc.alpha, sc.zeta)),
            dmm::records_to_pairs(test, sc.alpha, sc.zeta)};
}

struct Trained {
    dmm::TrainState state;
    double secs = 0;
};

Trained train_default(const Corpus& c, double w_sim)
{
    dmm::TrainConfig config;
    config.weights.w_sim = w_sim;
    // smoke runs only; the report is meaningful at the default budget
    if (const char* steps = std::getenv("DMM_ACCEPT_STEPS")) {
        config.total_steps = std::stoul(steps);
    }
    Trained t{dmm::init_train_state(config, c.train)};
    const auto t0 = Clock::now();
    while (t.state.step < config.total_steps) {
        dmm::train_step(t.state, c.train);
    }
    t.secs = seconds_since(t0);
    return t;
}

} // namespace

int main()
{
    // property suites
    double grad_secs = 0;
    const bool grad_ok = run_suite(DMM_TEST_OBJECTIVES, "GradientCheck.*", grad_secs);
    report(grad_ok && grad_secs < 120, "gradient suite",
           fmt("7 losses x 20 seeds, N=2 zeta=3 sigma=8, tol 1e-3, %.1f s (limit 120 s)", grad_secs));

    double oracle_secs = 0;
    bool oracle_ok = run_suite(DMM_TEST_OBJECTIVES, "ObjectiveOracle.*", oracle_secs);
    oracle_ok = run_suite(DMM_TEST_EVALUATION, "EvalOracle.*", oracle_secs) && oracle_ok;
    report(oracle_ok && oracle_secs < 60, "oracle suite",
           fmt("distance, selection, 5 losses, 5 metrics vs brute force at 1e-9, %.2f s (limit 60 s)", oracle_secs));

    double trivial_secs = 0;
    bool trivial_ok = run_suite(DMM_TEST_OBJECTIVES, "ObjectiveTrivial.*", trivial_secs);
    trivial_ok = run_suite(DMM_TEST_EVALUATION, "EvalTrivial.*:Evaluate.OracleModelHasZeroError", trivial_secs) &&
                 trivial_ok;
    report(trivial_ok, "exact trivial cases", "GP 0 and lambda, sim 0, joint 0, APD 0, oracle ADE=FDE=0");

    double sched_secs = 0;
    const bool sched_ok = run_suite(DMM_TEST_TRAINER, "TrainStep.SimilarityOnlyStopsMovingAfterM", sched_secs);
    report(sched_ok, "similarity schedule", "sim-only parameter deltas are exactly zero after step M");

    const Corpus corpus = default_corpus();
    dmm::EvalConfig ec;
    const auto zv = dmm::evaluate(dmm::zero_velocity_predictor(ec.n_samples, ec.horizon), corpus.test, ec,
                                  "zero-velocity");

    // desk-scale outcome and ablation
    const Trained full = train_default(corpus, dmm::TrainConfig{}.weights.w_sim);
    const auto m_full = dmm::evaluate_model(full.state.model, corpus.test, ec);
    const Trained nosim = train_default(corpus, 0.0);
    const auto m_nosim = dmm::evaluate_model(nosim.state.model, corpus.test, ec);
    auto named = m_nosim;
    named.name = "w_sim=0";
    std::printf("%s", dmm::format_metrics_table({zv, m_full, named}, 4).c_str());

    const bool outcome = full.secs < 1800 && m_full.ade_pose <= 0.7 * zv.ade_pose &&
                         m_full.ade_hip <= 0.7 * zv.ade_hip && m_full.apd > 0;
    report(outcome, "desk-scale training",
           fmt("ADE pose %.4f (<= %.4f), hip %.4f (<= %.4f)", m_full.ade_pose, 0.7 * zv.ade_pose, m_full.ade_hip,
               0.7 * zv.ade_hip) +
               fmt(", APD %.3f, %.0f s (limit 1800 s)", m_full.apd, full.secs));
    report(m_full.apd >= 1.5 * m_nosim.apd, "diversity ablation",
           fmt("APD default %.3f vs w_sim=0 %.3f (ratio %.2f, need 1.5); ADE pose w_sim=0 %.4f", m_full.apd,
               m_nosim.apd, m_full.apd / std::max(m_nosim.apd, 1e-12), m_nosim.ade_pose));

    // hip conditioning on the trained default model
    {
        const auto& model = full.state.model;
        double delta = 0;
        std::size_t values = 0;
        dmm::nn::NoGrad no_grad;
        for (std::size_t i = 0; i < 100; ++i) {
            const auto pair = dmm::rebase_pair(corpus.test[i % corpus.test.size()]);
            auto b = dmm::make_batch<float>({pair}, {0}, model.normalization());
            dmm::Rng rng(1000 + i);
            // perturb observations so the 100 inputs are distinct
            for (auto& v : b.obs_pose.mutable_values()) {
                v += static_cast<float>(0.1 * rng.normal());
            }
            const auto f = model.forward(b);
            const auto zeroed = model.predict_hip(b.obs_hip, dmm::Tensor<float>::zeros(f.pose_n.shape()));
            for (std::size_t k = 0; k < zeroed.numel(); ++k) {
                delta += std::abs(static_cast<double>(zeroed[k]) - static_cast<double>(f.hip[k]));
            }
            values += zeroed.numel();
        }
        delta /= static_cast<double>(values);
        report(delta > 0, "hip conditioning", fmt("mean |hip delta| with zeroed pose input %.4g m over 100 inputs", delta));
    }

    // throughput
    {
        const auto& obs = corpus.test.front().observed;
        for (int i = 0; i < 5; ++i) {
            (void)full.state.model.forecast(obs);
        }
        const auto t0 = Clock::now();
        for (int i = 0; i < 100; ++i) {
            (void)full.state.model.forecast(obs);
        }
        const double ms = seconds_since(t0) * 10.0;
        report(ms < 100, "forecast throughput", fmt("%.2f ms per forecast (N=10, zeta=20), 100 warm iterations", ms));
    }

    // determinism and persistence
    {
        dmm::TrainConfig short_run;
        short_run.total_steps = 4;
        auto a = dmm::init_train_state(short_run, corpus.train);
        auto b = dmm::init_train_state(short_run, corpus.train);
        for (int i = 0; i < 4; ++i) {
            dmm::train_step(a, corpus.train);
            dmm::train_step(b, corpus.train);
        }
        const bool same_ckpt = dmm::serialize_checkpoint(a) == dmm::serialize_checkpoint(b) &&
                               dmm::serialize_checkpoint(full.state) ==
                                   dmm::serialize_checkpoint(dmm::deserialize_checkpoint(dmm::serialize_checkpoint(full.state)));

        const fs::path dir = fs::temp_directory_path() / ("dmm_accept_" + std::to_string(::getpid()));
        fs::create_directories(dir);
        dmm::save_checkpoint(dir / "model.dmm", full.state);
        const auto loaded = dmm::load_checkpoint(dir / "model.dmm");
        const auto& obs = corpus.test[3].observed;
        const auto before = dmm::to_prediction_file(full.state.model.forecast(obs));
        const auto after = dmm::to_prediction_file(loaded.model.forecast(obs));
        const bool same_forecast = before == after;

        std::vector<dmm::MotionRecord> records;
        for (std::size_t i = 0; i < 10; ++i) {
            records.push_back({static_cast<int>(i), static_cast<int>(i % 5), dmm::merge_motion(corpus.test[i].future)});
            // the binary form stores float32, like the files gen-data writes
            for (auto& v : records.back().sequence.frames.values()) {
                v = static_cast<double>(static_cast<float>(v));
            }
        }
        dmm::save_motion_file(dir / "text.motion", records, dmm::MotionFormat::text);
        dmm::save_motion_file(dir / "bin.motion", records, dmm::MotionFormat::binary);
        dmm::save_prediction_file(dir / "pred.txt", before);
        const bool text = dmm::load_motion_file(dir / "text.motion") == records;
        const bool binary = dmm::load_motion_file(dir / "bin.motion") == records;
        const bool pred = dmm::load_prediction_file(dir / "pred.txt") == before;
        const bool files = text && binary && pred;
        fs::remove_all(dir);
        report(same_ckpt && same_forecast && files, "determinism and persistence",
               std::string("seeded runs ") + (same_ckpt ? "byte-identical" : "DIFFER") + ", reload forecast " +
                   (same_forecast ? "bit-identical" : "DIFFERS") + ", file round trips " + (files ? "exact" : "LOSSY") +
                   fmt(" (text %g, binary %g, prediction %g)", text, binary, pred));
    }

    // the benchmark tables need the original dataset, so the checks above stand in for them
    const int substitutes = reported;
    report(substitutes == 9, "benchmark numbers (substituted)",
           fmt("not reproducible here; %.0f substitute checks ran, %.0f failing", substitutes, failures));

    return failures == 0 ? 0 : 1;
}
