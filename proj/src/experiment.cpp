#include "cirdil/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "cirdil/harness/config.hpp"
#include "cirdil/nn/checkpoint.hpp"
#include "cirdil/rng.hpp"

namespace cirdil::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string fmt_lambda(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(jobs, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

json matrix_rows(const Eigen::MatrixXd& m, Eigen::Index row) {
    json out = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(row, j));
    return out;
}

sampling::ExemplarSet exemplars_from_json(const json& j) {
    sampling::ExemplarSet set;
    set.ids = j.at("ids").get<std::vector<SampleId>>();
    set.scores = j.at("scores").get<std::vector<double>>();
    set.strategy = sampling::parse_strategy(j.at("strategy").get<std::string>());
    if (!j.at("metric").is_null()) set.metric = similarity::Metric::parse(j.at("metric").get<std::string>());
    set.seed = j.at("seed").get<std::uint64_t>();
    set.excluded = j.at("excluded").get<std::size_t>();
    set.note = j.value("note", std::string());
    return set;
}

struct EvalSet {
    Eigen::MatrixXd features;
    Eigen::MatrixXd positions;
};

// Similarity rankings depend only on data, so they are shared across seeds
// and cells; smaller budgets take a prefix.
struct SimilarityEntry {
    sampling::ExemplarSet ranked;
    std::string error;
    double seconds = 0.0;
};

std::string similarity_key(int stage, const similarity::Metric& metric) {
    return std::to_string(stage) + "|" + metric.name();
}

bool is_failure_tolerated(const std::exception& e) {
    return dynamic_cast<const dil::DivergenceError*>(&e) || dynamic_cast<const nn::NumericalError*>(&e) ||
           dynamic_cast<const std::domain_error*>(&e);
}

struct RunContext {
    const ScenarioData& data;
    const ExperimentSpec& spec;
    const std::vector<EvalSet>& eval;
    const std::map<std::string, SimilarityEntry>& similarity;
};

void evaluate_stage(const dil::Learner& learner, const RunContext& ctx, StageRecord& record) {
    record.mae.clear();
    for (std::size_t k = 0; k < ctx.eval.size(); ++k) {
        const Eigen::MatrixXd pred = learner.predict(ctx.eval[k].features, static_cast<int>(k));
        record.mae.push_back(dil::mean_absolute_error(pred, ctx.eval[k].positions));
    }
}

sampling::ExemplarSet stage_exemplars(const dil::Learner& learner, const RunContext& ctx, const Cell& cell, int stage,
                                       std::uint64_t seed, double& seconds) {
    const PreparedTask& task = ctx.data.tasks[static_cast<std::size_t>(ctx.spec.sequence[static_cast<std::size_t>(stage)])];
    sampling::SelectionConfig sc = cell.selection;
    sc.count = cell.count;
    sc.seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(stage));
    const auto start = Clock::now();
    sampling::ExemplarSet set;
    if (cell.count == 0) {
        set.strategy = sc.strategy;
        set.metric = sc.metric;
        set.seed = sc.seed;
    } else if (sc.strategy == sampling::Strategy::Similarity) {
        const auto& entry = ctx.similarity.at(similarity_key(stage, *sc.metric));
        if (!entry.error.empty()) throw std::runtime_error(entry.error);
        if (entry.ranked.ids.size() < cell.count) throw std::runtime_error("similarity ranking shorter than the budget");
        set = entry.ranked;
        set.ids.resize(cell.count);
        set.scores.resize(cell.count);
        set.seed = sc.seed;
        seconds = entry.seconds;
        return set;
    } else {
        const PreparedTask& prev = ctx.data.tasks[static_cast<std::size_t>(ctx.spec.sequence[static_cast<std::size_t>(stage) - 1])];
        set = select_exemplars(learner, prev, task, sc);
    }
    seconds = seconds_since(start);
    return set;
}

RunRecord run_single(const RunContext& ctx, const Cell& cell, std::uint64_t seed, const dil::InitialFit& fit) {
    RunRecord run;
    run.cell = cell;
    run.seed = seed;
    run.sequence = ctx.spec.sequence;
    for (int t : run.sequence) run.domain_names.push_back(ctx.data.tasks[static_cast<std::size_t>(t)].dataset.name);
    run.config = ctx.spec.base;
    run.config.method = cell.method;
    run.config.lambda = cell.lambda;
    run.config.weight_averaging = cell.weight_averaging;
    try {
        const PreparedTask& first = ctx.data.tasks[static_cast<std::size_t>(ctx.spec.sequence.front())];
        run.leakage_violations += leaked_ids(first.dataset, first.dataset.train).size();
        auto start = Clock::now();
        dil::Learner learner(fit, first.table, first.dataset.train, run.config);
        StageRecord stage0;
        stage0.task = ctx.spec.sequence.front();
        stage0.modified = 0;
        stage0.train_seconds = seconds_since(start);
        stage0.checkpoint_hash = nn::parameter_hash(learner.parameters());
        evaluate_stage(learner, ctx, stage0);
        run.stages.push_back(std::move(stage0));

        for (std::size_t s = 1; s < ctx.spec.sequence.size(); ++s) {
            const int stage = static_cast<int>(s);
            const PreparedTask& task = ctx.data.tasks[static_cast<std::size_t>(ctx.spec.sequence[s])];
            StageRecord record;
            record.stage = stage;
            record.task = ctx.spec.sequence[s];
            record.exemplars = stage_exemplars(learner, ctx, cell, stage, seed, record.select_seconds);
            dil::AdaptBatchPlan plan{task.modified_train, record.exemplars.ids};
            record.modified = plan.modified.size();
            run.leakage_violations += leaked_ids(task.dataset, plan.stream()).size();
            start = Clock::now();
            learner.adapt(task.table, plan, derive_seed(seed, 2000 + static_cast<std::uint64_t>(s)));
            record.train_seconds = seconds_since(start);
            record.checkpoint_hash = nn::parameter_hash(learner.parameters());
            evaluate_stage(learner, ctx, record);
            run.stages.push_back(std::move(record));
        }

        for (std::size_t k = 0; k < ctx.eval.size(); ++k) {
            const PreparedTask& task = ctx.data.tasks[static_cast<std::size_t>(ctx.spec.sequence[k])];
            DomainPredictions p;
            p.domain = static_cast<int>(k);
            p.ids = task.dataset.test;
            p.truth = ctx.eval[k].positions;
            p.predicted = learner.predict(ctx.eval[k].features, static_cast<int>(k));
            run.final_predictions.push_back(std::move(p));
        }
    } catch (const std::exception& e) {
        if (!is_failure_tolerated(e) && !dynamic_cast<const std::runtime_error*>(&e)) throw;
        run.failed = true;
        run.error = e.what();
        run.final_predictions.clear();
    }
    return run;
}

}  // namespace

sampling::ExemplarSet select_exemplars(const dil::Learner& learner, const PreparedTask& previous, const PreparedTask& task,
                                       const sampling::SelectionConfig& selection) {
    const sampling::Pool pool = sampling::make_pool(task.table, task.static_train);
    switch (selection.strategy) {
        case sampling::Strategy::Random: return sampling::select_random(pool, selection);
        case sampling::Strategy::EquallyDistributed: return sampling::select_equally_distributed(pool, selection);
        case sampling::Strategy::Similarity:
            return sampling::select_by_similarity(dil::gather(previous.table.features, previous.dataset.train), pool, selection);
        default: {
            const auto records = sampling::compute_errors(learner.predict_latest(pool.features), pool);
            auto set = sampling::select_by_error(records, selection);
            set.note = "errors from the pre-adaptation model";
            return set;
        }
    }
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) return {std::nan(""), std::nan("")};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

int ScenarioData::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (tasks[i].dataset.name == name) return static_cast<int>(i);
    }
    return -1;
}

PreparedTask prepare_task(channel::TaskDataset dataset) {
    PreparedTask task;
    task.table = channel::make_feature_table(dataset);
    for (SampleId id : dataset.train) {
        if (dataset.samples[static_cast<std::size_t>(id)].region == channel::Region::Modified) {
            task.modified_train.push_back(id);
        } else {
            task.static_train.push_back(id);
        }
    }
    task.dataset = std::move(dataset);
    return task;
}

ScenarioData prepare_scenario(const channel::Scenario& scenario) {
    ScenarioData data;
    data.scenario = scenario;
    for (auto& generated : channel::generate_scenario(scenario)) data.tasks.push_back(prepare_task(std::move(generated.dataset)));
    return data;
}

void write_scenario_dir(const ScenarioData& data, const fs::path& dir) {
    fs::create_directories(dir / "tasks");
    write_text(dir / "scenario.json", channel::to_json(data.scenario).dump(2) + "\n");
    json changes = json::array();
    for (std::size_t k = 0; k < data.tasks.size(); ++k) {
        const auto& task = data.tasks[k];
        const std::string file = "task_" + std::to_string(k) + ".cirds";
        channel::write_dataset(task.dataset, dir / "tasks" / file);
        const json scenario_task = channel::to_json(data.scenario).at("tasks").at(k);
        std::size_t modified = 0;
        for (const auto& s : task.dataset.samples) modified += s.region == channel::Region::Modified;
        changes.push_back({{"task", k},
                           {"name", task.dataset.name},
                           {"file", "tasks/" + file},
                           {"changes", scenario_task.value("changes", json::array())},
                           {"samples", task.dataset.size()},
                           {"modified_samples", modified},
                           {"train", task.dataset.train.size()},
                           {"test", task.dataset.test.size()},
                           {"scene_hash", task.dataset.scene_hash}});
    }
    write_text(dir / "changes.json", changes.dump(2) + "\n");
}

ScenarioData load_scenario_dir(const fs::path& dir) {
    if (!fs::exists(dir / "scenario.json")) throw std::runtime_error("no scenario.json in " + dir.string());
    ScenarioData data;
    data.scenario = channel::scenario_from_json(read_json_file(dir / "scenario.json"));
    for (std::size_t k = 0; k < data.scenario.tasks.size(); ++k) {
        const fs::path file = dir / "tasks" / ("task_" + std::to_string(k) + ".cirds");
        if (!fs::exists(file)) throw std::runtime_error("missing task file " + file.string());
        data.tasks.push_back(prepare_task(channel::read_dataset(file)));
    }
    return data;
}

sampling::SelectionConfig parse_selection(const std::string& label) {
    sampling::SelectionConfig sc;
    const auto colon = label.find(':');
    if (colon != std::string::npos) {
        if (label.substr(0, colon) != "similarity") throw std::invalid_argument("unknown selection '" + label + "'");
        sc.strategy = sampling::Strategy::Similarity;
        sc.metric = similarity::Metric::parse(label.substr(colon + 1));
        return sc;
    }
    try {
        sc.strategy = sampling::parse_strategy(label);
    } catch (const std::invalid_argument&) {
        sc.strategy = sampling::Strategy::Similarity;
        sc.metric = similarity::Metric::parse(label);
    }
    if (sc.strategy == sampling::Strategy::Similarity && !sc.metric) {
        throw std::invalid_argument("similarity selection needs a metric, e.g. similarity:euclidean");
    }
    return sc;
}

std::vector<sampling::SelectionConfig> all_selection_variants() {
    std::vector<sampling::SelectionConfig> out;
    out.push_back(parse_selection("random"));
    out.push_back(parse_selection("ed"));
    for (auto kind : similarity::kAllMetricKinds) {
        sampling::SelectionConfig sc;
        sc.strategy = sampling::Strategy::Similarity;
        sc.metric = similarity::Metric(kind, 3.0);
        out.push_back(sc);
    }
    return out;
}

std::string Cell::key() const {
    std::string sel = selection_label();
    std::replace(sel.begin(), sel.end(), ':', '-');
    std::string key = dil::to_string(method) + "_l" + fmt_lambda(lambda) + "_n" + std::to_string(count) + "_" + sel;
    if (weight_averaging) key += "_wa";
    return key;
}

json to_json(const Cell& cell) {
    return {{"method", dil::to_string(cell.method)},
            {"lambda", cell.lambda},
            {"count", cell.count},
            {"selection", cell.selection_label()},
            {"weight_averaging", cell.weight_averaging}};
}

Cell cell_from_json(const json& doc) {
    Cell cell;
    cell.method = dil::parse_method(doc.at("method").get<std::string>());
    cell.lambda = doc.at("lambda").get<double>();
    cell.count = doc.at("count").get<std::size_t>();
    const std::string sel = doc.at("selection").get<std::string>();
    if (sel != "none") cell.selection = parse_selection(sel);
    cell.weight_averaging = doc.at("weight_averaging").get<bool>();
    return cell;
}

std::string FitCache::key(const PreparedTask& first, const dil::DilConfig& cfg, std::uint64_t seed) {
    const nlohmann::json k = {first.dataset.name,   first.dataset.scene_hash, first.dataset.size(),
                              first.dataset.train.size(), seed,           cfg.hidden,
                              cfg.epochs_initial,  cfg.batch,                cfg.learning_rate,
                              cfg.milestones,      cfg.decay};
    return k.dump();
}

std::optional<dil::InitialFit> FitCache::find(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = fits_.find(key);
    if (it == fits_.end()) return std::nullopt;
    return it->second;
}

void FitCache::store(const std::string& key, const dil::InitialFit& fit) {
    std::lock_guard<std::mutex> lock(mutex_);
    fits_.emplace(key, fit);
}

std::size_t FitCache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return fits_.size();
}

std::vector<Cell> ExperimentSpec::cells() const {
    if (!custom_cells.empty()) return custom_cells;
    std::vector<Cell> out;
    for (dil::Method method : methods) {
        std::vector<double> method_lambdas;
        if (method == dil::Method::Finetune || method == dil::Method::Pnn) {
            method_lambdas = {0.0};
        } else if (lambdas.empty()) {
            method_lambdas = {dil::DilConfig::default_lambda(method)};
        } else {
            method_lambdas = lambdas;
        }
        for (double lambda : method_lambdas) {
            for (std::size_t count : counts) {
                if (count == 0) {
                    Cell cell{method, lambda, 0, sampling::SelectionConfig{}, weight_averaging};
                    out.push_back(cell);
                    continue;
                }
                for (const auto& sel : selections) out.push_back(Cell{method, lambda, count, sel, weight_averaging});
            }
        }
    }
    return out;
}

void ExperimentSpec::validate(const ScenarioData& data) const {
    if (sequence.empty()) throw std::invalid_argument("task sequence is empty");
    std::set<int> seen;
    for (int t : sequence) {
        if (t < 0 || t >= static_cast<int>(data.tasks.size())) throw std::invalid_argument("sequence refers to a missing task");
        if (!seen.insert(t).second) throw std::invalid_argument("a task appears twice in the sequence");
    }
    if (methods.empty() || counts.empty() || selections.empty() || seeds.empty()) {
        throw std::invalid_argument("experiment grids must be nonempty");
    }
    for (double l : lambdas) {
        if (!(l >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    }
    const std::vector<Cell> grid = cells();
    std::set<std::string> keys;
    for (const auto& cell : grid) {
        auto check = cell.selection;
        check.count = 0;
        check.validate();
        if (!(cell.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
        if (!keys.insert(cell.key()).second) throw std::invalid_argument("duplicate cell " + cell.key());
    }
    base.validate();
    for (std::size_t s = 1; s < sequence.size(); ++s) {
        const auto& task = data.tasks[static_cast<std::size_t>(sequence[s])];
        for (const auto& cell : grid) {
            const std::size_t count = cell.count;
            if (count > task.static_train.size()) {
                throw std::invalid_argument("exemplar budget " + std::to_string(count) + " exceeds the static pool of " +
                                            task.dataset.name + " (" + std::to_string(task.static_train.size()) + ")");
            }
        }
    }
    const auto& first = data.tasks[static_cast<std::size_t>(sequence.front())];
    if (first.dataset.train.empty()) throw std::invalid_argument("first task has no training data");
    for (int t : sequence) {
        if (data.tasks[static_cast<std::size_t>(t)].dataset.test.empty()) throw std::invalid_argument("a task has no test split");
    }
}

std::string RunRecord::name() const { return cell.key() + "_seed" + std::to_string(seed); }

json to_json(const RunRecord& run) {
    json stages = json::array();
    for (const auto& s : run.stages) {
        stages.push_back({{"stage", s.stage},
                          {"task", s.task},
                          {"mae", s.mae},
                          {"exemplars", sampling::to_json(s.exemplars)},
                          {"modified", s.modified},
                          {"checkpoint_hash", s.checkpoint_hash}});
    }
    json preds = json::array();
    for (const auto& p : run.final_predictions) {
        preds.push_back({{"domain", p.domain},
                         {"ids", p.ids},
                         {"true_x", matrix_rows(p.truth, 0)},
                         {"true_y", matrix_rows(p.truth, 1)},
                         {"pred_x", matrix_rows(p.predicted, 0)},
                         {"pred_y", matrix_rows(p.predicted, 1)}});
    }
    return {{"format", "cirdil-run"},
            {"version", 1},
            {"cell", to_json(run.cell)},
            {"grid_index", run.grid_index},
            {"config", to_json(run.config)},
            {"seed", run.seed},
            {"sequence", run.sequence},
            {"domains", run.domain_names},
            {"failed", run.failed},
            {"error", run.error},
            {"leakage_violations", run.leakage_violations},
            {"stages", stages},
            {"final_predictions", preds}};
}

RunRecord run_from_json(const json& doc) {
    if (doc.value("format", "") != "cirdil-run") throw std::invalid_argument("not a run manifest");
    RunRecord run;
    run.cell = cell_from_json(doc.at("cell"));
    run.grid_index = doc.at("grid_index").get<std::size_t>();
    run.config = dil_config_from_json(doc.at("config"));
    run.seed = doc.at("seed").get<std::uint64_t>();
    run.sequence = doc.at("sequence").get<std::vector<int>>();
    run.domain_names = doc.at("domains").get<std::vector<std::string>>();
    if (run.domain_names.size() != run.sequence.size()) throw std::invalid_argument("one domain name per sequence entry required");
    run.failed = doc.at("failed").get<bool>();
    run.error = doc.at("error").get<std::string>();
    run.leakage_violations = doc.at("leakage_violations").get<std::size_t>();
    for (const auto& s : doc.at("stages")) {
        StageRecord r;
        r.stage = s.at("stage").get<int>();
        r.task = s.at("task").get<int>();
        r.mae = s.at("mae").get<std::vector<double>>();
        r.exemplars = exemplars_from_json(s.at("exemplars"));
        r.modified = s.at("modified").get<std::size_t>();
        r.checkpoint_hash = s.at("checkpoint_hash").get<std::uint64_t>();
        run.stages.push_back(std::move(r));
    }
    for (const auto& p : doc.at("final_predictions")) {
        DomainPredictions d;
        d.domain = p.at("domain").get<int>();
        d.ids = p.at("ids").get<std::vector<SampleId>>();
        const auto tx = p.at("true_x").get<std::vector<double>>();
        const auto ty = p.at("true_y").get<std::vector<double>>();
        const auto px = p.at("pred_x").get<std::vector<double>>();
        const auto py = p.at("pred_y").get<std::vector<double>>();
        const auto n = static_cast<Eigen::Index>(d.ids.size());
        if (tx.size() != d.ids.size() || ty.size() != d.ids.size() || px.size() != d.ids.size() || py.size() != d.ids.size()) {
            throw std::invalid_argument("prediction arrays differ in length");
        }
        d.truth.resize(2, n);
        d.predicted.resize(2, n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto u = static_cast<std::size_t>(j);
            d.truth.col(j) << tx[u], ty[u];
            d.predicted.col(j) << px[u], py[u];
        }
        run.final_predictions.push_back(std::move(d));
    }
    return run;
}

std::string ResultRow::status() const {
    if (seeds_failed == 0) return "ok";
    return seeds_ok == 0 ? "failed" : "partial";
}

bool ResultTable::all_ok() const {
    return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.seeds_failed == 0; });
}

const char* ResultTable::csv_header() {
    return "stage,stage_task,test_domain,method,lambda,n,selection,weight_averaging,mae_mean,mae_std,seeds_ok,"
           "seeds_failed,status";
}

std::string ResultTable::to_csv() const {
    std::string out = std::string(csv_header()) + "\n";
    for (const auto& r : rows) {
        out += std::to_string(r.stage) + "," + r.stage_task + "," + r.test_domain + "," + dil::to_string(r.cell.method) +
               "," + fmt_lambda(r.cell.lambda) + "," + std::to_string(r.cell.count) + "," + r.cell.selection_label() + "," +
               (r.cell.weight_averaging ? "1" : "0") + "," + fmt(r.mae_mean) + "," + fmt(r.mae_std) + "," +
               std::to_string(r.seeds_ok) + "," + std::to_string(r.seeds_failed) + "," + r.status() + "\n";
    }
    return out;
}

json ResultTable::to_json() const {
    json rows_json = json::array();
    for (const auto& r : rows) {
        json row = {{"stage", r.stage},
                    {"stage_task", r.stage_task},
                    {"test_domain", r.test_domain},
                    {"cell", harness::to_json(r.cell)},
                    {"seeds_ok", r.seeds_ok},
                    {"seeds_failed", r.seeds_failed},
                    {"status", r.status()}};
        row["mae_mean"] = std::isnan(r.mae_mean) ? json(nullptr) : json(r.mae_mean);
        row["mae_std"] = std::isnan(r.mae_std) ? json(nullptr) : json(r.mae_std);
        rows_json.push_back(std::move(row));
    }
    return {{"columns", csv_header()}, {"rows", rows_json}};
}

ResultTable aggregate(const std::vector<RunRecord>& runs) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord*>> groups;
    for (const auto& run : runs) {
        const std::string key = run.cell.key();
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&run);
    }
    ResultTable table;
    for (const auto& key : order) {
        const auto& group = groups[key];
        const auto& sequence = group.front()->sequence;
        for (std::size_t s = 0; s < sequence.size(); ++s) {
            for (std::size_t k = 0; k < sequence.size(); ++k) {
                ResultRow row;
                row.stage = static_cast<int>(s);
                row.stage_task = group.front()->domain_names[s];
                row.test_domain = group.front()->domain_names[k];
                row.cell = group.front()->cell;
                std::vector<double> values;
                for (const RunRecord* run : group) {
                    if (run->failed || run->stages.size() <= s || run->stages[s].mae.size() <= k) {
                        ++row.seeds_failed;
                    } else {
                        values.push_back(run->stages[s].mae[k]);
                    }
                }
                row.seeds_ok = values.size();
                std::tie(row.mae_mean, row.mae_std) = mean_std(values);
                table.rows.push_back(std::move(row));
            }
        }
    }
    return table;
}

std::vector<SampleId> leaked_ids(const channel::TaskDataset& dataset, const std::vector<SampleId>& stream) {
    std::vector<SampleId> test = dataset.test;
    std::sort(test.begin(), test.end());
    std::vector<SampleId> leaked;
    for (SampleId id : stream) {
        if (std::binary_search(test.begin(), test.end(), id)) leaked.push_back(id);
    }
    return leaked;
}

ExperimentResult run_experiment(const ScenarioData& data, const ExperimentSpec& spec, const Logger& log) {
    spec.validate(data);
    const auto start = Clock::now();
    std::mutex log_mutex;
    auto say = [&](const std::string& msg) {
        if (!log) return;
        std::lock_guard<std::mutex> lock(log_mutex);
        log(msg);
    };

    std::vector<EvalSet> eval;
    for (int t : spec.sequence) {
        const auto& task = data.tasks[static_cast<std::size_t>(t)];
        eval.push_back({dil::gather(task.table.features, task.dataset.test), dil::gather(task.table.positions, task.dataset.test)});
    }

    const std::vector<Cell> cells = spec.cells();

    // Phase 1: one initial fit per seed and one similarity ranking per (stage, metric).
    std::map<std::string, SimilarityEntry> similarity;
    std::vector<std::pair<int, similarity::Metric>> rankings;
    std::size_t max_count = 0;
    for (const auto& cell : cells) {
        if (cell.count == 0 || cell.selection.strategy != sampling::Strategy::Similarity) continue;
        max_count = std::max(max_count, cell.count);
        for (std::size_t s = 1; s < spec.sequence.size(); ++s) {
            const std::string key = similarity_key(static_cast<int>(s), *cell.selection.metric);
            if (similarity.emplace(key, SimilarityEntry{}).second) rankings.emplace_back(static_cast<int>(s), *cell.selection.metric);
        }
    }
    const PreparedTask& first = data.tasks[static_cast<std::size_t>(spec.sequence.front())];
    std::vector<std::optional<dil::InitialFit>> fits(spec.seeds.size());
    std::vector<std::string> fit_errors(spec.seeds.size());
    parallel_for(spec.seeds.size() + rankings.size(), spec.jobs, [&](std::size_t i) {
        if (i < spec.seeds.size()) {
            const auto t0 = Clock::now();
            try {
                const std::string key = FitCache::key(first, spec.base, spec.seeds[i]);
                if (spec.fit_cache) fits[i] = spec.fit_cache->find(key);
                if (fits[i]) {
                    say("initial fit seed " + std::to_string(spec.seeds[i]) + " reused");
                    return;
                }
                fits[i] = dil::fit_initial(first.table, first.dataset.train, spec.base, spec.seeds[i]);
                if (spec.fit_cache) spec.fit_cache->store(key, *fits[i]);
            } catch (const std::exception& e) {
                if (!is_failure_tolerated(e)) throw;
                fit_errors[i] = e.what();
            }
            say("initial fit seed " + std::to_string(spec.seeds[i]) + (fit_errors[i].empty() ? " done" : " failed: " + fit_errors[i]) +
                " (" + fmt(seconds_since(t0)) + " s)");
            return;
        }
        const auto& [stage, metric] = rankings[i - spec.seeds.size()];
        const PreparedTask& prev = data.tasks[static_cast<std::size_t>(spec.sequence[static_cast<std::size_t>(stage) - 1])];
        const PreparedTask& task = data.tasks[static_cast<std::size_t>(spec.sequence[static_cast<std::size_t>(stage)])];
        SimilarityEntry& entry = similarity.at(similarity_key(stage, metric));
        const auto t0 = Clock::now();
        sampling::SelectionConfig sc;
        sc.strategy = sampling::Strategy::Similarity;
        sc.metric = metric;
        sc.count = std::min(max_count, task.static_train.size());
        try {
            entry.ranked = sampling::select_by_similarity(dil::gather(prev.table.features, prev.dataset.train),
                                                          sampling::make_pool(task.table, task.static_train), sc);
            if (entry.ranked.excluded > 0) {
                say("similarity " + metric.name() + " stage " + std::to_string(stage) + ": " +
                    std::to_string(entry.ranked.excluded) + " samples excluded (metric undefined)");
            }
        } catch (const std::invalid_argument& e) {
            entry.error = e.what();
        }
        entry.seconds = seconds_since(t0);
        say("similarity ranking " + metric.name() + " stage " + std::to_string(stage) + " (" + fmt(entry.seconds) + " s)");
    });

    // Phase 2: every (cell, seed) run.
    const RunContext ctx{data, spec, eval, similarity};
    ExperimentResult result;
    result.runs.resize(cells.size() * spec.seeds.size());
    parallel_for(result.runs.size(), spec.jobs, [&](std::size_t i) {
        const Cell& cell = cells[i / spec.seeds.size()];
        const std::size_t seed_index = i % spec.seeds.size();
        const std::uint64_t seed = spec.seeds[seed_index];
        RunRecord run;
        if (!fits[seed_index]) {
            run.cell = cell;
            run.seed = seed;
            run.sequence = spec.sequence;
            for (int t : run.sequence) run.domain_names.push_back(data.tasks[static_cast<std::size_t>(t)].dataset.name);
            run.config = spec.base;
            run.failed = true;
            run.error = "initial training failed: " + fit_errors[seed_index];
        } else {
            run = run_single(ctx, cell, seed, *fits[seed_index]);
        }
        run.grid_index = i / spec.seeds.size();
        say(run.name() + (run.failed ? " FAILED: " + run.error : " done"));
        result.runs[i] = std::move(run);
    });
    result.table = aggregate(result.runs);
    result.seconds = seconds_since(start);
    return result;
}

void write_experiment(const ExperimentResult& result, const fs::path& dir) {
    fs::create_directories(dir / "runs");
    for (const auto& entry : fs::directory_iterator(dir / "runs")) {
        if (entry.path().extension() == ".json") fs::remove(entry.path());
    }
    write_text(dir / "results.csv", result.table.to_csv());
    write_text(dir / "results.json", result.table.to_json().dump(2) + "\n");
    json timings = {{"total_seconds", result.seconds}, {"runs", json::object()}};
    for (const auto& run : result.runs) {
        write_text(dir / "runs" / (run.name() + ".json"), to_json(run).dump(1) + "\n");
        json stages = json::array();
        for (const auto& s : run.stages) stages.push_back({{"stage", s.stage}, {"train", s.train_seconds}, {"select", s.select_seconds}});
        timings["runs"][run.name()] = stages;
    }
    write_text(dir / "timings.json", timings.dump(2) + "\n");
}

std::vector<RunRecord> load_runs(const fs::path& dir) {
    std::vector<RunRecord> runs;
    if (fs::is_directory(dir / "runs")) {
        for (const auto& entry : fs::directory_iterator(dir / "runs")) {
            if (entry.path().extension() == ".json") runs.push_back(run_from_json(read_json_file(entry.path())));
        }
    }
    std::stable_sort(runs.begin(), runs.end(), [](const RunRecord& a, const RunRecord& b) {
        return a.grid_index != b.grid_index ? a.grid_index < b.grid_index : a.seed < b.seed;
    });
    return runs;
}

// ---------------------------------------------------------------------------

namespace {

ExperimentSpec first_adaptation(ExperimentSpec spec) {
    if (spec.sequence.size() < 2) throw std::invalid_argument("at least two tasks are needed for an adaptation");
    spec.sequence.resize(2);
    return spec;
}

const RunRecord* find_run(const std::vector<RunRecord>& runs, const Cell& cell, std::uint64_t seed) {
    for (const auto& r : runs) {
        if (r.seed == seed && r.cell.key() == cell.key()) return &r;
    }
    return nullptr;
}

}  // namespace

SweepResult sweep_lambda(const ScenarioData& data, ExperimentSpec base, const SweepSpec& sweep, const Logger& log) {
    if (sweep.method != dil::Method::Ewc && sweep.method != dil::Method::Lwf && sweep.method != dil::Method::Si) {
        throw std::invalid_argument("lambda sweeps need ewc, lwf or si");
    }
    if (sweep.lambdas.empty() || sweep.counts.empty()) throw std::invalid_argument("sweep grids must be nonempty");
    ExperimentSpec spec = first_adaptation(std::move(base));
    spec.methods = {sweep.method};
    spec.lambdas = sweep.lambdas;
    spec.counts = sweep.counts;
    spec.selections = {spec.selections.front()};
    SweepResult out;
    out.method = sweep.method;
    out.experiment = run_experiment(data, spec, log);
    for (const auto& cell : spec.cells()) {
        SweepCell sc;
        sc.lambda = cell.lambda;
        sc.count = cell.count;
        std::vector<double> news;
        for (std::uint64_t seed : spec.seeds) {
            const RunRecord* run = find_run(out.experiment.runs, cell, seed);
            if (!run || run->failed) {
                sc.failed = true;
                sc.old_per_seed.push_back(std::nan(""));
                continue;
            }
            sc.old_per_seed.push_back(run->stages[1].mae[0]);
            news.push_back(run->stages[1].mae[1]);
        }
        std::vector<double> olds;
        for (double v : sc.old_per_seed) {
            if (!std::isnan(v)) olds.push_back(v);
        }
        std::tie(sc.old_mean, sc.old_std) = mean_std(olds);
        std::tie(sc.new_mean, sc.new_std) = mean_std(news);
        out.grid.push_back(std::move(sc));
    }
    std::vector<double> lambdas = sweep.lambdas;
    std::sort(lambdas.begin(), lambdas.end());
    for (std::size_t count : sweep.counts) {
        std::size_t good = 0;
        for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
            bool ok = true;
            for (std::size_t k = 1; k < lambdas.size(); ++k) {
                double prev = std::nan(""), next = std::nan("");
                for (const auto& c : out.grid) {
                    if (c.count != count) continue;
                    if (c.lambda == lambdas[k - 1]) prev = c.old_per_seed[si];
                    if (c.lambda == lambdas[k]) next = c.old_per_seed[si];
                }
                if (!(next <= 1.1 * prev)) ok = false;
            }
            good += ok;
        }
        out.monotone_seeds.emplace_back(count, good);
    }
    return out;
}

std::string SweepResult::to_csv() const {
    std::string out = "method,lambda,n,old_mae_mean,old_mae_std,new_mae_mean,new_mae_std,status\n";
    for (const auto& c : grid) {
        out += dil::to_string(method) + "," + fmt_lambda(c.lambda) + "," + std::to_string(c.count) + "," + fmt(c.old_mean) +
               "," + fmt(c.old_std) + "," + fmt(c.new_mean) + "," + fmt(c.new_std) + "," + (c.failed ? "failed" : "ok") + "\n";
    }
    return out;
}

json SweepResult::to_json() const {
    json cells = json::array();
    for (const auto& c : grid) {
        json per_seed = json::array();
        for (double v : c.old_per_seed) per_seed.push_back(std::isnan(v) ? json(nullptr) : json(v));
        cells.push_back({{"lambda", c.lambda},
                         {"count", c.count},
                         {"old_mae_mean", c.old_mean},
                         {"old_mae_std", c.old_std},
                         {"new_mae_mean", c.new_mean},
                         {"new_mae_std", c.new_std},
                         {"old_mae_per_seed", per_seed},
                         {"failed", c.failed}});
    }
    json monotone = json::array();
    for (const auto& [count, seeds] : monotone_seeds) monotone.push_back({{"count", count}, {"seeds_within_10pct", seeds}});
    return {{"method", dil::to_string(method)}, {"grid", cells}, {"monotonicity", monotone}};
}

SelectionComparison compare_selection(const ScenarioData& data, ExperimentSpec base, std::size_t count, const Logger& log) {
    if (count == 0) throw std::invalid_argument("selection comparison needs a positive budget");
    ExperimentSpec spec = first_adaptation(std::move(base));
    spec.counts = {count};
    if (spec.methods.size() != 1) throw std::invalid_argument("selection comparison runs a single method");
    SelectionComparison out;
    out.experiment = run_experiment(data, spec, log);
    for (const auto& cell : spec.cells()) {
        SelectionSummary s;
        s.selection = cell.selection_label();
        std::vector<double> olds, news;
        for (std::uint64_t seed : spec.seeds) {
            const RunRecord* run = find_run(out.experiment.runs, cell, seed);
            if (!run || run->failed) {
                s.failed = true;
                continue;
            }
            olds.push_back(run->stages[1].mae[0]);
            news.push_back(run->stages[1].mae[1]);
            s.excluded = std::max(s.excluded, run->stages[1].exemplars.excluded);
        }
        std::tie(s.old_mean, s.old_std) = mean_std(olds);
        std::tie(s.new_mean, s.new_std) = mean_std(news);
        out.summary.push_back(std::move(s));
    }
    return out;
}

std::string SelectionComparison::to_csv() const {
    std::string out = "selection,old_mae_mean,old_mae_std,new_mae_mean,new_mae_std,excluded,status\n";
    for (const auto& s : summary) {
        out += s.selection + "," + fmt(s.old_mean) + "," + fmt(s.old_std) + "," + fmt(s.new_mean) + "," + fmt(s.new_std) + "," +
               std::to_string(s.excluded) + "," + (s.failed ? "failed" : "ok") + "\n";
    }
    return out;
}

TimingReport timing_report(const ScenarioData& data, ExperimentSpec base, std::size_t count, const Logger& log) {
    ExperimentSpec spec = std::move(base);
    spec.seeds = {spec.seeds.front()};
    spec.methods = {dil::Method::Finetune, dil::Method::Ewc, dil::Method::Lwf, dil::Method::Si, dil::Method::Pnn};
    spec.lambdas.clear();
    spec.counts = {count};
    spec.selections = {spec.selections.front()};
    spec.jobs = 1;  // timings are measured without contention
    const ExperimentResult result = run_experiment(data, spec, log);

    TimingReport report;
    std::map<std::string, double> per_method;
    for (const auto& run : result.runs) {
        double total = 0.0;
        for (std::size_t s = 1; s < run.stages.size(); ++s) total += run.stages[s].train_seconds;
        per_method[dil::to_string(run.cell.method)] = total;
        report.adapt_seconds.emplace_back(dil::to_string(run.cell.method), total);
    }

    // Selection timing on the first adaptation pool with the initial model.
    if (spec.sequence.size() >= 2) {
        const auto& first = data.tasks[static_cast<std::size_t>(spec.sequence[0])];
        const auto& task = data.tasks[static_cast<std::size_t>(spec.sequence[1])];
        const auto fit = dil::fit_initial(first.table, first.dataset.train, spec.base, spec.seeds.front());
        const sampling::Pool pool = sampling::make_pool(task.table, task.static_train);
        const std::size_t n = std::min(std::max<std::size_t>(count, 1), pool.size());
        for (const std::string label : {"random", "ed", "error_highest", "error_lowest", "similarity:euclidean"}) {
            sampling::SelectionConfig sc = parse_selection(label);
            sc.count = n;
            const auto t0 = Clock::now();
            switch (sc.strategy) {
                case sampling::Strategy::Random: (void)sampling::select_random(pool, sc); break;
                case sampling::Strategy::EquallyDistributed: (void)sampling::select_equally_distributed(pool, sc); break;
                case sampling::Strategy::Similarity:
                    (void)sampling::select_by_similarity(dil::gather(first.table.features, first.dataset.train), pool, sc);
                    break;
                default:
                    (void)sampling::select_by_error(sampling::compute_errors(fit.model, pool), sc);
                    break;
            }
            report.select_seconds.emplace_back(label, seconds_since(t0));
        }
    }

    auto check = [&](const std::string& what, bool holds) { report.checks.push_back((holds ? "ok: " : "differs: ") + what); };
    const std::vector<std::string> order = {"lwf", "ewc", "si", "pnn", "finetune"};
    for (std::size_t k = 1; k < order.size(); ++k) {
        const bool strict = k > 1;
        const double a = per_method[order[k - 1]];
        const double b = per_method[order[k]];
        check(order[k - 1] + (strict ? " < " : " <= ") + order[k] + " (" + fmt(a) + " s vs " + fmt(b) + " s)",
              strict ? a < b : a <= b);
    }
    if (per_method.count("finetune") && per_method.count("ewc")) {
        report.checks.push_back(std::string("faster of finetune/ewc on this machine: ") +
                                (per_method["finetune"] <= per_method["ewc"] ? "finetune" : "ewc"));
    }
    double fastest_error = 0.0, slowest_plain = 0.0;
    for (const auto& [label, secs] : report.select_seconds) {
        if (label == "random" || label == "ed") slowest_plain = std::max(slowest_plain, secs);
        if (label.rfind("error", 0) == 0) fastest_error = fastest_error == 0.0 ? secs : std::min(fastest_error, secs);
    }
    if (!report.select_seconds.empty()) {
        check("random/ed selection faster than error-based (" + fmt(slowest_plain) + " s vs " + fmt(fastest_error) + " s)",
              slowest_plain < fastest_error);
    }
    return report;
}

json TimingReport::to_json() const {
    json adapt = json::object();
    for (const auto& [m, s] : adapt_seconds) adapt[m] = s;
    json select = json::object();
    for (const auto& [m, s] : select_seconds) select[m] = s;
    return {{"adapt_seconds", adapt}, {"select_seconds", select}, {"checks", checks}};
}

}  // namespace cirdil::harness
