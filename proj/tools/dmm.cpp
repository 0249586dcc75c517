// dmm: synthetic data, training, evaluation, prediction and plot export.
//
// Exit codes: 0 success, 2 usage error, 3 missing or invalid input,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dmm/checkpoint.hpp"
#include "dmm/evaluation.hpp"
#include "dmm/motion_io.hpp"
#include "dmm/prediction.hpp"
#include "dmm/synthetic.hpp"
#include "dmm/trainer.hpp"

namespace fs = std::filesystem;
using namespace dmm;

namespace {

enum Exit { ok = 0, usage = 2, bad_input = 3, numeric = 4 };

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A data path is either a motion file or a directory holding `<name>.motion`.
fs::path resolve_data(const std::string& path, const char* name)
{
    if (path.empty()) {
        throw UsageError(std::string("--data is required"));
    }
    fs::path p(path);
    if (fs::is_directory(p)) {
        p /= std::string(name) + ".motion";
    }
    if (!fs::exists(p)) {
        throw IoError("no such data file: " + p.string());
    }
    return p;
}

std::vector<SamplePair> load_pairs(const fs::path& path, std::size_t alpha, std::size_t zeta)
{
    const auto records = load_motion_file(path);
    if (records.empty()) {
        throw DataError(path.string() + " holds no sequences");
    }
    return records_to_pairs(records, alpha, zeta);
}

void print_items(const std::vector<std::pair<std::string, std::string>>& items)
{
    std::printf("# resolved configuration\n");
    for (const auto& [k, v] : items) {
        std::printf("%s=%s\n", k.c_str(), v.c_str());
    }
}

// ---------------------------------------------------------------------------

struct GenData {
    std::string out = "data";
    std::uint64_t seed = 7;
    std::size_t scenarios = 200;
    std::size_t modes = kModeCount;
    std::size_t alpha = 5, zeta = 20;
    double test_fraction = 0.2;
    bool binary = false;

    int run() const
    {
        if (scenarios == 0) {
            throw UsageError("--scenarios must be positive");
        }
        if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
            throw UsageError("--test-fraction must be in [0, 1)");
        }
        SynthConfig sc;
        sc.scenarios = scenarios;
        sc.modes_per_observation = modes;
        sc.alpha = alpha;
        sc.zeta = zeta;
        try {
            sc.validate();
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        print_items({{"seed", std::to_string(seed)},
                     {"scenarios", std::to_string(scenarios)},
                     {"modes", std::to_string(modes)},
                     {"alpha", std::to_string(alpha)},
                     {"zeta", std::to_string(zeta)},
                     {"fps", std::to_string(sc.fps)},
                     {"test_fraction", config_detail::fmt_double(test_fraction)}});
        const auto records = generate_synthetic_records(sc, seed);
        // whole scenarios go to one side so test observations are unseen
        const std::size_t test_scenarios = static_cast<std::size_t>(test_fraction * static_cast<double>(scenarios));
        const std::size_t cut = (scenarios - test_scenarios) * modes;
        std::vector<MotionRecord> train(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(cut));
        std::vector<MotionRecord> test(records.begin() + static_cast<std::ptrdiff_t>(cut), records.end());
        fs::create_directories(out);
        const auto format = binary ? MotionFormat::binary : MotionFormat::text;
        save_motion_file(fs::path(out) / "train.motion", train, format);
        if (!test.empty()) {
            save_motion_file(fs::path(out) / "test.motion", test, format);
        }
        std::set<int> labels;
        for (const auto& r : records) {
            labels.insert(r.mode.value_or(-1));
        }
        std::printf("train: %zu sequences (%zu scenarios) -> %s\n", train.size(), scenarios - test_scenarios,
                    (fs::path(out) / "train.motion").c_str());
        std::printf("test: %zu sequences (%zu scenarios)%s\n", test.size(), test_scenarios,
                    test.empty() ? "" : (" -> " + (fs::path(out) / "test.motion").string()).c_str());
        std::printf("frames per sequence: %zu, mode labels:", alpha + zeta);
        for (const int m : labels) {
            std::printf(" %d(%s)", m, mode_name(m));
        }
        std::printf("\n");
        return ok;
    }
};

// ---------------------------------------------------------------------------

struct Train {
    std::string data, out = "run", config, resume, sim_mode;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> steps;
    std::vector<std::string> sets;
    bool quiet = false;

    TrainConfig resolve() const
    {
        TrainConfig c;
        try {
            if (!config.empty()) {
                c = load_config(config);
            }
            for (const auto& kv : sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw UsageError("--set expects key=value, got '" + kv + "'");
                }
                set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (seed) {
                c.seed = *seed;
            }
            if (steps) {
                c.total_steps = *steps;
            }
            if (!sim_mode.empty()) {
                c.weights.sim_mode = parse_sim_mode(sim_mode);
            }
            if (!data.empty()) {
                c.train_data = data;
            }
            c.validate();
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        return c;
    }

    int run() const
    {
        TrainState state = resume.empty() ? TrainState(resolve()) : load_checkpoint(resume);
        if (!resume.empty()) {
            // a resumed run keeps its recorded configuration; only the length may grow
            if (steps && *steps != state.config.total_steps) {
                // keep the similarity window of the original run
                state.config.sim_active_steps = state.config.resolved_weights().sim_active_steps;
                state.config.total_steps = *steps;
            }
            if (!config.empty() || !sets.empty() || seed || !sim_mode.empty()) {
                throw UsageError("--resume takes its configuration from the checkpoint; only --steps may change");
            }
            if (!data.empty()) {
                state.config.train_data = data;
            }
        }
        const TrainConfig& c = state.config;
        print_items(config_items(c));
        std::printf("# seed=%llu\n", static_cast<unsigned long long>(c.seed));
        const auto path = resolve_data(c.train_data, "train");
        const auto pairs = rebase_pairs(load_pairs(path, c.model.alpha, c.model.zeta));
        if (resume.empty()) {
            state = init_train_state(c, pairs);
        } else {
            std::printf("# resuming from %s at step %zu\n", resume.c_str(), state.step);
        }
        std::fflush(stdout);
        TrainOptions opt;
        opt.out_dir = out;
        opt.echo = quiet ? nullptr : &std::cout;
        const auto last = dmm::train(state, pairs, opt);
        std::cout << "final checkpoint: " << (last.empty() ? std::string("(none)") : last.string()) << std::endl;
        return ok;
    }
};

// ---------------------------------------------------------------------------

struct Eval {
    std::string checkpoint, data, out;
    std::optional<double> tau;
    std::optional<std::size_t> n;
    std::uint64_t seed = 0;
    bool oracle_model = false;
    std::size_t alpha = 5, zeta = 20;

    int run() const
    {
        EvalConfig ec;
        if (tau) {
            ec.use_mode_labels = false;
            ec.tau = *tau;
        }
        std::optional<TrainState> state;
        std::size_t a = alpha, z = zeta, samples = n.value_or(10);
        if (!oracle_model) {
            if (checkpoint.empty()) {
                throw UsageError("--checkpoint is required");
            }
            state.emplace(load_checkpoint(checkpoint));
            a = state->config.model.alpha;
            z = state->config.model.zeta;
            samples = n.value_or(state->config.model.n_samples);
            if (samples > state->config.model.n_samples) {
                throw UsageError("--n exceeds the model's " + std::to_string(state->config.model.n_samples) +
                                 " generators");
            }
        }
        ec.n_samples = samples;
        ec.horizon = z;
        try {
            ec.validate();
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        auto items = std::vector<std::pair<std::string, std::string>>{
            {"checkpoint", oracle_model ? "(oracle)" : checkpoint},
            {"model_version", state ? state->model.version() : "oracle"},
            {"step", state ? std::to_string(state->step) : "-"},
            {"alpha", std::to_string(a)},
            {"zeta", std::to_string(z)},
            {"n_samples", std::to_string(samples)},
            {"grouping", ec.use_mode_labels ? "mode-labels" : "tau=" + config_detail::fmt_double(ec.tau)},
            {"seed", std::to_string(state ? state->config.seed : seed)}};
        print_items(items);

        const auto pairs = load_pairs(resolve_data(data, "test"), a, z);
        std::vector<MetricsReport> rows;
        rows.push_back(evaluate(zero_velocity_predictor(samples, z), pairs, ec, "zero-velocity"));
        if (oracle_model) {
            rows.push_back(evaluate(oracle_predictor(samples), pairs, ec, "oracle"));
        } else {
            rows.push_back(evaluate(model_predictor(state->model, samples), pairs, ec, state->model.version()));
        }
        std::printf("%s", format_metrics_table(rows, ec.precision).c_str());
        if (!out.empty()) {
            fs::create_directories(out);
            write_metrics_tsv(fs::path(out) / "metrics.tsv", rows.back());
            std::printf("per-item metrics: %s\n", (fs::path(out) / "metrics.tsv").c_str());
        }
        return ok;
    }
};

// ---------------------------------------------------------------------------

struct Predict {
    std::string checkpoint, data, out;
    std::size_t index = 1;
    std::optional<std::size_t> n;
    std::uint64_t seed = 0;

    int run() const
    {
        const TrainState state = load_checkpoint(checkpoint);
        const ModelConfig& m = state.config.model;
        print_items({{"checkpoint", checkpoint},
                     {"model_version", state.model.version()},
                     {"index", std::to_string(index)},
                     {"n_samples", std::to_string(n.value_or(m.n_samples))},
                     {"alpha", std::to_string(m.alpha)},
                     {"zeta", std::to_string(m.zeta)},
                     {"seed", std::to_string(state.config.seed)}});
        if (n && (*n == 0 || *n > m.n_samples)) {
            throw UsageError("--n must be in [1, " + std::to_string(m.n_samples) + "]");
        }
        if (data.empty()) {
            throw UsageError("--data is required");
        }
        const auto records = load_motion_file(data);
        if (index == 0 || index > records.size()) {
            throw DataError("--index " + std::to_string(index) + " outside the file's " +
                            std::to_string(records.size()) + " sequences");
        }
        const auto& seq = records[index - 1].sequence;
        if (seq.length() < m.alpha) {
            throw DataError("observation has " + std::to_string(seq.length()) + " frames, model expects alpha=" +
                            std::to_string(m.alpha));
        }
        // the first alpha frames are the observation
        const MotionSplit observed = split_motion(seq).slice(0, m.alpha);
        const auto file = to_prediction_file(state.model.forecast(observed, n.value_or(0)));
        if (out.empty()) {
            std::printf("%s", format_prediction_file(file).c_str());
        } else {
            save_prediction_file(out, file);
            std::printf("wrote %zu samples of %zu frames to %s\n", file.samples.size(), file.horizon, out.c_str());
        }
        return ok;
    }
};

// ---------------------------------------------------------------------------

struct Inspect {
    std::string checkpoint;

    int run() const
    {
        const TrainState s = load_checkpoint(checkpoint);
        print_items(config_items(s.config));
        std::printf("# seed=%llu\n", static_cast<unsigned long long>(s.config.seed));
        std::printf("step: %zu\nmodel_version: %s\nema_total: %.6g\n", s.step, s.model.version().c_str(), s.ema_total);
        auto summary = [](const char* name, const nn::ParameterStore<float>& store) {
            std::size_t count = 0;
            for (const auto& t : store.tensors()) {
                count += t.numel();
            }
            std::printf("%s: %zu tensors, %zu values, fingerprint %016llx\n", name, store.names().size(), count,
                        static_cast<unsigned long long>(store.fingerprint()));
        };
        summary("generator", s.model.generator_params());
        summary("critic", s.model.critic_params());
        const auto& norm = s.model.normalization();
        double lo = norm.std[0], hi = norm.std[0];
        for (const double v : norm.std) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        std::printf("normalization std range: [%.6g, %.6g]\n", lo, hi);
        return ok;
    }
};

// ---------------------------------------------------------------------------

struct PlotData {
    std::string pred, data, out = "plot";
    std::size_t index = 1;

    static void write_trace(const fs::path& path, const PoseSequence& frames)
    {
        std::ofstream f(path);
        if (!f) {
            throw IoError("cannot write " + path.string());
        }
        f << "frame\tjoint\tx\ty\tz\n";
        char buf[128];
        for (std::size_t t = 0; t < frames.frames(); ++t) {
            for (std::size_t j = 0; j < kJoints; ++j) {
                std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\t%.9g\t%.9g\n", t, j, frames.at(t, 3 * j),
                              frames.at(t, 3 * j + 1), frames.at(t, 3 * j + 2));
                f << buf;
            }
        }
    }

    int run() const
    {
        print_items({{"pred", pred}, {"data", data}, {"index", std::to_string(index)}, {"out", out}, {"seed", "-"}});
        if (pred.empty() || data.empty()) {
            throw UsageError("--pred and --data are required");
        }
        const auto file = load_prediction_file(pred);
        const auto records = load_motion_file(data);
        if (index == 0 || index > records.size()) {
            throw DataError("--index " + std::to_string(index) + " outside the file's " +
                            std::to_string(records.size()) + " sequences");
        }
        const auto& seq = records[index - 1].sequence;
        if (seq.length() < file.horizon) {
            throw DataError("ground truth has " + std::to_string(seq.length()) + " frames, predictions have " +
                            std::to_string(file.horizon));
        }
        if (seq.fps != file.fps) {
            throw DataError("ground truth is at " + std::to_string(seq.fps) + " fps, predictions at " +
                            std::to_string(file.fps));
        }
        // the ground-truth future is the last `horizon` frames of the sequence
        PoseSequence gt(file.horizon);
        const std::size_t first = seq.length() - file.horizon;
        for (std::size_t t = 0; t < file.horizon; ++t) {
            for (std::size_t k = 0; k < kFrameWidth; ++k) {
                gt.at(t, k) = seq.frames.at(first + t, k);
            }
        }
        fs::create_directories(out);
        write_trace(fs::path(out) / "gt.tsv", gt);
        for (std::size_t g = 0; g < file.samples.size(); ++g) {
            write_trace(fs::path(out) / ("sample_" + std::to_string(g + 1) + ".tsv"), file.samples[g].frames);
        }
        std::printf("wrote gt.tsv and %zu sample traces to %s\n", file.samples.size(), out.c_str());
        return ok;
    }
};

int report(const char* kind, const std::exception& e, int code)
{
    std::fprintf(stderr, "dmm: %s: %s\n", kind, e.what());
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Diverse multi-sample human motion forecasting"};
    app.require_subcommand(1);

    GenData gen;
    auto* g = app.add_subcommand("gen-data", "Write a synthetic train/test corpus with mode labels");
    g->add_option("--out", gen.out, "Output directory")->capture_default_str();
    g->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    g->add_option("--scenarios", gen.scenarios, "Scenarios (one shared observation each)")->capture_default_str();
    g->add_option("--modes", gen.modes, "Futures per observation, 2..5")->capture_default_str();
    g->add_option("--alpha", gen.alpha, "Observed frames")->capture_default_str();
    g->add_option("--zeta", gen.zeta, "Future frames")->capture_default_str();
    g->add_option("--test-fraction", gen.test_fraction, "Share of scenarios held out")->capture_default_str();
    g->add_flag("--binary", gen.binary, "Write the binary motion format");

    Train tr;
    auto* t = app.add_subcommand("train", "Train a forecaster");
    t->add_option("--data", tr.data, "Training motion file, or a directory with train.motion");
    t->add_option("--out", tr.out, "Run directory for train.log and checkpoints")->capture_default_str();
    t->add_option("--config", tr.config, "key=value config file");
    t->add_option("--set", tr.sets, "Extra key=value settings, applied after --config");
    t->add_option("--seed", tr.seed, "Training seed");
    t->add_option("--steps", tr.steps, "Total generator steps");
    t->add_option("--sim-mode", tr.sim_mode, "Similarity loss mode: printed or capped");
    t->add_option("--resume", tr.resume, "Checkpoint to continue from");
    t->add_flag("--quiet", tr.quiet, "Do not echo loss lines");

    Eval ev;
    auto* e = app.add_subcommand("eval", "Score a checkpoint on a test corpus");
    e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
    e->add_option("--data", ev.data, "Test motion file, or a directory with test.motion");
    e->add_option("--out", ev.out, "Directory for metrics.tsv");
    e->add_option("--tau", ev.tau, "Group observations within this motion distance instead of by mode label");
    e->add_option("--n", ev.n, "Samples per observation");
    e->add_option("--seed", ev.seed, "Recorded only; evaluation is deterministic");
    e->add_flag("--oracle-model", ev.oracle_model)->group("");
    e->add_option("--alpha", ev.alpha)->group("");
    e->add_option("--zeta", ev.zeta)->group("");

    Predict pr;
    auto* p = app.add_subcommand("predict", "Forecast futures for one observation");
    p->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
    p->add_option("--data", pr.data, "Motion file holding the observation");
    p->add_option("--index", pr.index, "1-based sequence index in the file")->capture_default_str();
    p->add_option("--n", pr.n, "Samples to keep (default: all generators)");
    p->add_option("--out", pr.out, "Prediction file (default: standard output)");
    p->add_option("--seed", pr.seed, "Recorded only; forecasting is deterministic");

    Inspect in;
    auto* i = app.add_subcommand("inspect", "Describe a checkpoint");
    i->add_option("--checkpoint", in.checkpoint, "Checkpoint file")->required();

    PlotData pd;
    auto* d = app.add_subcommand("plot-data", "Export per-sample joint traces as tsv");
    d->add_option("--pred", pd.pred, "Prediction file");
    d->add_option("--data", pd.data, "Motion file with the ground truth sequence");
    d->add_option("--index", pd.index, "1-based sequence index in the file")->capture_default_str();
    d->add_option("--out", pd.out, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return usage;
    }

    try {
        if (*g) {
            return gen.run();
        }
        if (*t) {
            return tr.run();
        }
        if (*e) {
            return ev.run();
        }
        if (*p) {
            return pr.run();
        }
        if (*i) {
            return in.run();
        }
        if (*d) {
            return pd.run();
        }
    } catch (const UsageError& e) {
        return report("usage error", e, usage);
    } catch (const ConfigError& e) {
        return report("usage error", e, usage);
    } catch (const NumericError& e) {
        return report("numeric failure", e, numeric);
    } catch (const dmm::Error& e) {
        return report("input error", e, bad_input);
    } catch (const std::exception& e) {
        return report("input error", e, bad_input);
    }
    return usage;
}
