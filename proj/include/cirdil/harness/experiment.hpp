#ifndef CIRDIL_HARNESS_EXPERIMENT_HPP
#define CIRDIL_HARNESS_EXPERIMENT_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cirdil/channel/task.hpp"
#include "cirdil/dil/dil.hpp"
#include "cirdil/sampling/sampling.hpp"

namespace cirdil::harness {

/// A generated task with its feature table and region pools.
struct PreparedTask {
    channel::TaskDataset dataset;
    channel::FeatureTable table;
    std::vector<SampleId> modified_train;  // train ids in the modified region
    std::vector<SampleId> static_train;    // train ids in the static region (exemplar pool)
};

struct ScenarioData {
    channel::Scenario scenario;
    std::vector<PreparedTask> tasks;

    /// Index of the task called `name`, or -1.
    int index_of(const std::string& name) const;
};

PreparedTask prepare_task(channel::TaskDataset dataset);
ScenarioData prepare_scenario(const channel::Scenario& scenario);

/// Directory layout: scenario.json, changes.json and tasks/task_<k>.cirds.
void write_scenario_dir(const ScenarioData& data, const std::filesystem::path& dir);
ScenarioData load_scenario_dir(const std::filesystem::path& dir);

/// "random", "ed", "error_highest", "error_lowest", "similarity:<metric>"
/// or a bare metric name.
sampling::SelectionConfig parse_selection(const std::string& label);

/// One grid point. Cells with count 0 carry the "none" selection since no
/// exemplars are drawn.
struct Cell {
    dil::Method method = dil::Method::Finetune;
    double lambda = 0.0;
    std::size_t count = 0;
    sampling::SelectionConfig selection;
    bool weight_averaging = false;

    std::string selection_label() const { return count == 0 ? "none" : selection.label(); }
    /// File-name safe identifier, unique within a grid.
    std::string key() const;
};

nlohmann::json to_json(const Cell& cell);
Cell cell_from_json(const nlohmann::json& doc);

/// Initial fits shared between experiments on the same scenario. Entries are
/// keyed by the first task, the seed and every setting that shapes the fit.
class FitCache {
public:
    static std::string key(const PreparedTask& first, const dil::DilConfig& cfg, std::uint64_t seed);
    std::optional<dil::InitialFit> find(const std::string& key) const;
    void store(const std::string& key, const dil::InitialFit& fit);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, dil::InitialFit> fits_;
};

struct ExperimentSpec {
    std::vector<int> sequence;  // task indices; stage 0 trains on the first
    std::vector<dil::Method> methods = {dil::Method::Finetune};
    std::vector<double> lambdas;  // empty: each method's default
    std::vector<std::size_t> counts = {0};
    std::vector<sampling::SelectionConfig> selections = {sampling::SelectionConfig{}};
    std::vector<std::uint64_t> seeds = {0};
    bool weight_averaging = false;
    dil::DilConfig base;  // training settings shared by every cell
    int jobs = 1;
    std::vector<Cell> custom_cells;        // replaces the product grid when nonempty
    std::shared_ptr<FitCache> fit_cache;  // optional

    /// Methods x lambdas x counts x selections. Finetune and PNN take a single
    /// lambda of 0; count 0 collapses the selection axis.
    std::vector<Cell> cells() const;
    void validate(const ScenarioData& data) const;
};

struct StageRecord {
    int stage = 0;
    int task = 0;  // scenario task index
    std::vector<double> mae;  // per sequence domain
    sampling::ExemplarSet exemplars;
    std::size_t modified = 0;  // modified-region samples in the stream
    std::uint64_t checkpoint_hash = 0;
    double train_seconds = 0.0;
    double select_seconds = 0.0;
};

struct DomainPredictions {
    int domain = 0;  // position in the sequence
    std::vector<SampleId> ids;
    Eigen::MatrixXd truth;      // 2 x n
    Eigen::MatrixXd predicted;  // 2 x n
};

struct RunRecord {
    Cell cell;
    std::size_t grid_index = 0;  // position of the cell in ExperimentSpec::cells()
    dil::DilConfig config;       // settings actually trained with
    std::uint64_t seed = 0;
    std::vector<int> sequence;
    std::vector<std::string> domain_names;  // per sequence position
    bool failed = false;
    std::string error;
    std::size_t leakage_violations = 0;
    std::vector<StageRecord> stages;
    std::vector<DomainPredictions> final_predictions;

    std::string name() const;
};

/// Manifest without wall-clock fields, so it is reproducible byte for byte.
nlohmann::json to_json(const RunRecord& run);
RunRecord run_from_json(const nlohmann::json& doc);

struct ResultRow {
    int stage = 0;
    std::string stage_task;
    std::string test_domain;
    Cell cell;
    double mae_mean = 0.0;
    double mae_std = 0.0;  // population std over successful seeds
    std::size_t seeds_ok = 0;
    std::size_t seeds_failed = 0;

    std::string status() const;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    bool all_ok() const;
    static const char* csv_header();
    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// Groups runs by cell and aggregates every (stage, domain) pair. Cells keep
/// the order of first appearance.
ResultTable aggregate(const std::vector<RunRecord>& runs);

struct ExperimentResult {
    ResultTable table;
    std::vector<RunRecord> runs;
    double seconds = 0.0;
};

/// Exemplars for adapting to `task`: random / ED draw from its static train
/// pool, error strategies score that pool with the learner's current model,
/// similarity compares it with the train split of `previous`.
sampling::ExemplarSet select_exemplars(const dil::Learner& learner, const PreparedTask& previous, const PreparedTask& task,
                                       const sampling::SelectionConfig& selection);

using Logger = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ScenarioData& data, const ExperimentSpec& spec, const Logger& log = {});

/// Test ids that occur in a training stream; empty when the split is respected.
std::vector<SampleId> leaked_ids(const channel::TaskDataset& dataset, const std::vector<SampleId>& stream);

/// results.csv, results.json, runs/<name>.json and timings.json.
void write_experiment(const ExperimentResult& result, const std::filesystem::path& dir);

/// Every manifest under dir/runs in grid order, then seed order.
std::vector<RunRecord> load_runs(const std::filesystem::path& dir);

struct SweepSpec {
    dil::Method method = dil::Method::Ewc;
    std::vector<double> lambdas = {0.0, 1e2, 1e3, 1e4, 1e5};
    std::vector<std::size_t> counts = {0, 50, 100, 200};
};

struct SweepCell {
    double lambda = 0.0;
    std::size_t count = 0;
    double old_mean = 0.0;
    double old_std = 0.0;
    double new_mean = 0.0;
    double new_std = 0.0;
    std::vector<double> old_per_seed;
    bool failed = false;
};

struct SweepResult {
    ExperimentResult experiment;
    dil::Method method = dil::Method::Ewc;
    std::vector<SweepCell> grid;  // lambda-major
    /// Per count: seeds in which every larger lambda keeps old-domain MAE
    /// within 10% of the next smaller one.
    std::vector<std::pair<std::size_t, std::size_t>> monotone_seeds;

    std::string to_csv() const;
    nlohmann::json to_json() const;
};

/// First adaptation of `base.sequence` only, over the lambda x count grid.
SweepResult sweep_lambda(const ScenarioData& data, ExperimentSpec base, const SweepSpec& sweep, const Logger& log = {});

struct SelectionSummary {
    std::string selection;
    double old_mean = 0.0;
    double old_std = 0.0;
    double new_mean = 0.0;
    double new_std = 0.0;
    std::size_t excluded = 0;
    bool failed = false;
};

struct SelectionComparison {
    ExperimentResult experiment;
    std::vector<SelectionSummary> summary;

    std::string to_csv() const;
};

/// First adaptation of `base.sequence` for every selection in `base.selections`
/// at a single count.
SelectionComparison compare_selection(const ScenarioData& data, ExperimentSpec base, std::size_t count,
                                      const Logger& log = {});

/// Every selection variant of the comparison: RD, ED and the eight metrics.
std::vector<sampling::SelectionConfig> all_selection_variants();

struct TimingReport {
    std::vector<std::pair<std::string, double>> adapt_seconds;   // per method, summed over stages
    std::vector<std::pair<std::string, double>> select_seconds;  // per strategy
    std::vector<std::string> checks;                            // soft ordering checks, "ok"/"differs" prefixed

    nlohmann::json to_json() const;
};

/// One seed; all methods on `base.sequence` with `count` exemplars.
TimingReport timing_report(const ScenarioData& data, ExperimentSpec base, std::size_t count, const Logger& log = {});

/// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

}  // namespace cirdil::harness

#endif  // CIRDIL_HARNESS_EXPERIMENT_HPP
