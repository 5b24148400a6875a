// cirdil: scenario generation, training, DIL experiments and exports.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 some runs failed.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cirdil/harness/config.hpp"
#include "cirdil/harness/experiment.hpp"
#include "cirdil/nn/checkpoint.hpp"
#include "cirdil/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cirdil;

namespace {

constexpr const char* kOutRootEnv = "CIRDIL_OUT_ROOT";

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::string out;
    std::optional<std::size_t> samples;
    std::vector<std::string> overrides;
    bool quiet = false;

    // adapt
    std::string checkpoint;
    std::string from_task;
    std::string to_task;
    // export
    std::string run_dir;
    std::string what = "table";
};

void log_line(const Options& opt, const std::string& msg) {
    if (!opt.quiet) std::cerr << "[cirdil] " << msg << '\n';
}

fs::path output_dir(const Options& opt, const std::string& command) {
    if (!opt.out.empty()) return opt.out;
    const char* root = std::getenv(kOutRootEnv);
    return fs::path(root && *root ? root : "cirdil-out") / command;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

// Config file plus --samples / --seed / --jobs / --override, in that order.
harness::ExperimentConfig load_config(const Options& opt, bool seed_is_scenario_seed) {
    json doc = json::object();
    if (!opt.config.empty()) doc = harness::read_json_file(opt.config);
    if (opt.samples) doc["generation"]["samples"] = *opt.samples;
    if (opt.seed && seed_is_scenario_seed) doc["generation"]["seed"] = *opt.seed;
    if (opt.jobs) doc["experiment"]["jobs"] = *opt.jobs;
    for (const auto& o : opt.overrides) harness::apply_override(doc, o);
    auto cfg = harness::parse_config(doc);
    // --seed on experiment commands shifts the seed list to start at the given value.
    if (opt.seed && !seed_is_scenario_seed) {
        const std::size_t n = cfg.experiment.seeds.size();
        cfg.experiment.seeds.clear();
        for (std::size_t i = 0; i < n; ++i) cfg.experiment.seeds.push_back(*opt.seed + i);
    }
    return cfg;
}

harness::Logger logger(const Options& opt) {
    return [&opt](const std::string& m) { log_line(opt, m); };
}

void save_effective_config(const harness::ExperimentConfig& cfg, const fs::path& dir) {
    json doc = cfg.document;
    doc["experiment"]["seeds"] = cfg.experiment.seeds;
    write_text(dir / "config.json", doc.dump(2) + "\n");
}

int finish(const harness::ExperimentResult& result, const Options& opt, const fs::path& dir) {
    std::size_t failed = 0;
    for (const auto& r : result.runs) failed += r.failed;
    std::size_t leaks = 0;
    for (const auto& r : result.runs) leaks += r.leakage_violations;
    log_line(opt, std::to_string(result.runs.size()) + " runs, " + std::to_string(failed) + " failed, " +
                      std::to_string(leaks) + " leakage violations; results in " + dir.string());
    if (leaks > 0) return 2;
    return failed > 0 ? 2 : 0;
}

int cmd_gen_scenario(const Options& opt) {
    auto cfg = load_config(opt, true);
    const fs::path dir = output_dir(opt, "scenario");
    const auto data = harness::prepare_scenario(cfg.scenario);
    harness::write_scenario_dir(data, dir);
    for (const auto& t : data.tasks) {
        std::printf("%s: %zu samples (%zu train: %zu modified, %zu static; %zu test)\n", t.dataset.name.c_str(),
                    t.dataset.size(), t.dataset.train.size(), t.modified_train.size(), t.static_train.size(),
                    t.dataset.test.size());
    }
    log_line(opt, "scenario written to " + dir.string());
    return 0;
}

int cmd_train(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "train");
    const auto data = cfg.load_data();
    const auto& spec = cfg.experiment;
    const auto& first = data.tasks[static_cast<std::size_t>(spec.sequence.front())];
    const std::uint64_t seed = spec.seeds.front();
    log_line(opt, "training on " + first.dataset.name + " with seed " + std::to_string(seed));
    auto fit = dil::fit_initial(first.table, first.dataset.train, spec.base, seed);
    nn::Checkpoint ck{fit.model, std::nullopt, seed, spec.base.epochs_initial};
    fs::create_directories(dir);
    nn::save_checkpoint(ck, dir / "model.json");
    json report = {{"task", first.dataset.name}, {"seed", seed}, {"parameter_hash", nn::parameter_hash(fit.model.flatten())}};
    for (int t : spec.sequence) {
        const auto& task = data.tasks[static_cast<std::size_t>(t)];
        const auto pred = fit.model.forward(dil::gather(task.table.features, task.dataset.test));
        report["test_mae"][task.dataset.name] = dil::mean_absolute_error(pred, dil::gather(task.table.positions, task.dataset.test));
    }
    write_text(dir / "train.json", report.dump(2) + "\n");
    save_effective_config(cfg, dir);
    std::cout << report.dump(2) << '\n';
    return 0;
}

int cmd_adapt(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "adapt");
    if (opt.checkpoint.empty()) throw UsageError("adapt needs --checkpoint");
    const auto data = cfg.load_data();
    const auto& spec = cfg.experiment;
    auto resolve = [&](const std::string& name, int fallback) {
        if (name.empty()) return fallback;
        const int i = data.index_of(name);
        if (i < 0) throw harness::ConfigError("unknown task '" + name + "'");
        return i;
    };
    if (spec.sequence.size() < 2 && (opt.from_task.empty() || opt.to_task.empty())) {
        throw UsageError("adapt needs --from/--to or a sequence of at least two tasks");
    }
    const int from = resolve(opt.from_task, spec.sequence.front());
    const int to = resolve(opt.to_task, spec.sequence.size() > 1 ? spec.sequence[1] : -1);
    if (from == to) throw UsageError("--from and --to must differ");

    dil::DilConfig dcfg = spec.base;
    dcfg.method = spec.methods.front();
    if (dcfg.method == dil::Method::Pnn) throw UsageError("adapt stores a single network; run pnn through 'run'");
    dcfg.lambda = spec.lambdas.empty() ? dil::DilConfig::default_lambda(dcfg.method) : spec.lambdas.front();
    dcfg.weight_averaging = spec.weight_averaging;
    const std::size_t count = spec.counts.front();
    const std::uint64_t seed = spec.seeds.front();

    const auto ck = nn::load_checkpoint(opt.checkpoint);
    dil::InitialFit fit;
    fit.model = ck.model;
    fit.start = ck.model.flatten();
    fit.si_path = Eigen::VectorXd::Zero(fit.start.size());
    fit.seed = ck.seed;
    const auto& prev = data.tasks[static_cast<std::size_t>(from)];
    const auto& task = data.tasks[static_cast<std::size_t>(to)];
    dil::Learner learner(fit, prev.table, prev.dataset.train, dcfg);

    sampling::SelectionConfig sc = spec.selections.front();
    sc.count = count;
    sc.seed = derive_seed(seed, 1001);
    const auto exemplars = count == 0 ? sampling::ExemplarSet{} : harness::select_exemplars(learner, prev, task, sc);
    const dil::AdaptBatchPlan plan{task.modified_train, exemplars.ids};
    if (!harness::leaked_ids(task.dataset, plan.stream()).empty()) throw std::logic_error("training stream contains test ids");
    learner.adapt(task.table, plan, derive_seed(seed, 2001));

    fs::create_directories(dir);
    nn::save_checkpoint(nn::Checkpoint{learner.model(), std::nullopt, seed, dcfg.epochs_adapt}, dir / "model.json");
    json report = {{"from", prev.dataset.name},
                   {"to", task.dataset.name},
                   {"config", harness::to_json(dcfg)},
                   {"exemplars", sampling::to_json(exemplars)},
                   {"modified", plan.modified.size()},
                   {"parameter_hash", nn::parameter_hash(learner.parameters())}};
    for (const auto* t : {&prev, &task}) {
        report["test_mae"][t->dataset.name] = dil::evaluate(learner, t->table, t->dataset.test, t == &prev ? 0 : 1);
    }
    write_text(dir / "adapt.json", report.dump(2) + "\n");
    std::cout << report.at("test_mae").dump(2) << '\n';
    return 0;
}

int cmd_run(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "run");
    const auto data = cfg.load_data();
    const auto result = harness::run_experiment(data, cfg.experiment, logger(opt));
    harness::write_experiment(result, dir);
    save_effective_config(cfg, dir);
    return finish(result, opt, dir);
}

int cmd_sweep(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "sweep-lambda");
    const auto data = cfg.load_data();
    const auto sweep = harness::sweep_lambda(data, cfg.experiment, cfg.sweep, logger(opt));
    harness::write_experiment(sweep.experiment, dir);
    write_text(dir / "sweep.csv", sweep.to_csv());
    write_text(dir / "sweep.json", sweep.to_json().dump(2) + "\n");
    save_effective_config(cfg, dir);
    for (const auto& [count, seeds] : sweep.monotone_seeds) {
        log_line(opt, "N=" + std::to_string(count) + ": larger lambda within 10% of smaller in " + std::to_string(seeds) + "/" +
                          std::to_string(cfg.experiment.seeds.size()) + " seeds");
    }
    return finish(sweep.experiment, opt, dir);
}

int cmd_compare(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "compare-selection");
    const auto data = cfg.load_data();
    auto spec = cfg.experiment;
    spec.methods = {cfg.compare_method};
    spec.selections = cfg.compare_selections;
    spec.lambdas.clear();
    const auto cmp = harness::compare_selection(data, spec, cfg.compare_count, logger(opt));
    harness::write_experiment(cmp.experiment, dir);
    write_text(dir / "selection.csv", cmp.to_csv());
    save_effective_config(cfg, dir);
    std::cout << cmp.to_csv();
    return finish(cmp.experiment, opt, dir);
}

int cmd_timing(const Options& opt) {
    auto cfg = load_config(opt, false);
    const fs::path dir = output_dir(opt, "timing");
    const auto data = cfg.load_data();
    const std::size_t count = cfg.experiment.counts.back();
    const auto report = harness::timing_report(data, cfg.experiment, count, logger(opt));
    write_text(dir / "timing.json", report.to_json().dump(2) + "\n");
    save_effective_config(cfg, dir);
    for (const auto& [m, s] : report.adapt_seconds) std::printf("adapt %-10s %.3f s\n", m.c_str(), s);
    for (const auto& [m, s] : report.select_seconds) std::printf("select %-22s %.4f s\n", m.c_str(), s);
    for (const auto& c : report.checks) std::printf("%s\n", c.c_str());
    return 0;
}

int cmd_export(const Options& opt) {
    const fs::path run_dir = opt.run_dir.empty() ? output_dir(Options{}, "run") : fs::path(opt.run_dir);
    const auto runs = harness::load_runs(run_dir);
    if (runs.empty()) throw UsageError("no run manifests under " + (run_dir / "runs").string());
    const fs::path dir = opt.out.empty() ? run_dir / "export" : fs::path(opt.out);
    if (opt.what == "table") {
        write_text(dir / "table.csv", harness::aggregate(runs).to_csv());
    } else if (opt.what == "trajectories" || opt.what == "cdf") {
        for (const auto& run : runs) {
            for (const auto& p : run.final_predictions) {
                const std::string name = run.name() + "_" + run.domain_names[static_cast<std::size_t>(p.domain)] + ".csv";
                const Eigen::VectorXd err = (p.predicted - p.truth).colwise().norm().transpose();
                std::string text;
                char buf[256];
                if (opt.what == "trajectories") {
                    text = "sample_id,true_x,true_y,pred_x,pred_y,error_m\n";
                    for (Eigen::Index j = 0; j < err.size(); ++j) {
                        std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                                      static_cast<unsigned long long>(p.ids[static_cast<std::size_t>(j)]), p.truth(0, j),
                                      p.truth(1, j), p.predicted(0, j), p.predicted(1, j), err(j));
                        text += buf;
                    }
                    write_text(dir / "trajectories" / name, text);
                } else {
                    std::vector<double> sorted(err.data(), err.data() + err.size());
                    std::sort(sorted.begin(), sorted.end());
                    text = "quantile,error_m\n";
                    for (std::size_t j = 0; j < sorted.size(); ++j) {
                        std::snprintf(buf, sizeof buf, "%.10g,%.17g\n",
                                      static_cast<double>(j + 1) / static_cast<double>(sorted.size()), sorted[j]);
                        text += buf;
                    }
                    write_text(dir / "cdf" / name, text);
                }
            }
        }
    } else {
        throw UsageError("--what must be trajectories, table or cdf");
    }
    log_line(opt, "exported " + opt.what + " to " + dir.string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cirdil: domain-incremental CIR positioning experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("--config", opt.config, "experiment configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", opt.seed, "scenario seed for gen-scenario, first run seed otherwise");
    app.add_option("--jobs", opt.jobs, "parallel grid cells")->check(CLI::PositiveNumber);
    app.add_option("--out", opt.out, std::string("output directory (default $") + kOutRootEnv + "/<command>)");
    app.add_option("--samples", opt.samples, "samples per task")->check(CLI::PositiveNumber);
    app.add_option("--override", opt.overrides, "config override key.path=value (repeatable)");
    app.add_flag("-q,--quiet", opt.quiet, "no log lines");

    auto* gen = app.add_subcommand("gen-scenario", "generate scene, change manifests and task datasets");
    auto* train = app.add_subcommand("train", "initial training on the first task of the sequence");
    auto* adapt = app.add_subcommand("adapt", "adapt a checkpoint to another task");
    adapt->add_option("--checkpoint", opt.checkpoint, "checkpoint from train or adapt")->check(CLI::ExistingFile);
    adapt->add_option("--from", opt.from_task, "task the checkpoint was trained on");
    adapt->add_option("--to", opt.to_task, "task to adapt to");
    auto* run = app.add_subcommand("run", "full experiment grid over the task sequence");
    auto* sweep = app.add_subcommand("sweep-lambda", "lambda x N grid on the first adaptation");
    auto* compare = app.add_subcommand("compare-selection", "exemplar selection strategies and metrics");
    auto* timing = app.add_subcommand("timing", "wall-clock report per method and selection strategy");
    auto* exp = app.add_subcommand("export", "plot-ready CSV from a run directory");
    exp->add_option("--run-dir", opt.run_dir, "directory written by run / sweep-lambda / compare-selection");
    exp->add_option("--what", opt.what, "trajectories, table or cdf")->check(CLI::IsMember({"trajectories", "table", "cdf"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen) return cmd_gen_scenario(opt);
        if (*train) return cmd_train(opt);
        if (*adapt) return cmd_adapt(opt);
        if (*run) return cmd_run(opt);
        if (*sweep) return cmd_sweep(opt);
        if (*compare) return cmd_compare(opt);
        if (*timing) return cmd_timing(opt);
        if (*exp) return cmd_export(opt);
    } catch (const harness::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
