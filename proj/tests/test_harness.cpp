#include <doctest.h>

#include <filesystem>

#include "cirdil/harness/config.hpp"
#include "cirdil/harness/experiment.hpp"

using namespace cirdil;
using namespace cirdil::harness;
namespace fs = std::filesystem;

namespace {

const ScenarioData& small_data() {
    static const ScenarioData data = [] {
        auto scenario = channel::default_scenario();
        scenario.samples_per_task = 240;
        scenario.tasks.resize(3);
        return prepare_scenario(scenario);
    }();
    return data;
}

ExperimentSpec small_spec() {
    ExperimentSpec spec;
    spec.sequence = {0, 1};
    spec.base.hidden = {16, 8};
    spec.base.epochs_initial = 2;
    spec.base.epochs_adapt = 1;
    return spec;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cirdil_test_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("prepared tasks split their train pools by region") {
    const auto& data = small_data();
    REQUIRE(data.tasks.size() == 3);
    CHECK(data.index_of("T2") == 1);
    CHECK(data.index_of("nope") == -1);
    for (const auto& task : data.tasks) {
        CHECK(task.modified_train.size() + task.static_train.size() == task.dataset.train.size());
        for (auto id : task.static_train) CHECK(task.dataset.samples[id].region == channel::Region::Static);
        for (auto id : task.modified_train) CHECK(task.dataset.samples[id].region == channel::Region::Modified);
    }
    CHECK(data.tasks[0].modified_train.empty());
    CHECK_FALSE(data.tasks[1].modified_train.empty());
}

TEST_CASE("grid cardinality") {
    ExperimentSpec spec = small_spec();
    spec.methods = {dil::Method::Finetune, dil::Method::Ewc, dil::Method::Pnn};
    spec.lambdas = {1.0, 2.0};
    spec.counts = {0, 5};
    spec.selections = {parse_selection("random"), parse_selection("ed"), parse_selection("cosine")};
    // finetune and pnn: 1 lambda x (1 + 3); ewc: 2 x (1 + 3)
    CHECK(spec.cells().size() == 16);
    for (const auto& cell : spec.cells()) {
        if (cell.count == 0) CHECK(cell.selection_label() == "none");
        if (cell.method != dil::Method::Ewc) CHECK(cell.lambda == 0.0);
    }
    spec.lambdas.clear();
    CHECK(spec.cells()[4].method == dil::Method::Ewc);
    CHECK(spec.cells()[4].lambda == 1e5);
}

TEST_CASE("one method, one seed, two tasks gives four cells") {
    const auto result = run_experiment(small_data(), small_spec());
    CHECK(result.table.rows.size() == 4);
    CHECK(result.runs.size() == 1);
    CHECK(result.table.all_ok());
    for (const auto& row : result.table.rows) CHECK(row.mae_mean >= 0.0);
    CHECK(result.runs[0].stages.size() == 2);
    CHECK(result.runs[0].leakage_violations == 0);
}

TEST_CASE("row count equals cells times stages times domains") {
    ExperimentSpec spec = small_spec();
    spec.sequence = {0, 1, 2};
    spec.methods = {dil::Method::Finetune, dil::Method::Lwf};
    spec.counts = {0, 10};
    spec.seeds = {0, 1};
    const auto result = run_experiment(small_data(), spec);
    CHECK(result.table.rows.size() == spec.cells().size() * 3 * 3);
    CHECK(result.runs.size() == spec.cells().size() * 2);
}

TEST_CASE("same spec twice and across worker counts gives the same table") {
    ExperimentSpec spec = small_spec();
    spec.methods = {dil::Method::Finetune, dil::Method::Ewc, dil::Method::Si};
    spec.counts = {0, 8};
    spec.selections = {parse_selection("random"), parse_selection("similarity:manhattan")};
    spec.seeds = {3, 4};
    const auto a = run_experiment(small_data(), spec);
    spec.jobs = 3;
    const auto b = run_experiment(small_data(), spec);
    CHECK(a.table.to_csv() == b.table.to_csv());
    REQUIRE(a.runs.size() == b.runs.size());
    for (std::size_t i = 0; i < a.runs.size(); ++i) CHECK(to_json(a.runs[i]) == to_json(b.runs[i]));
}

TEST_CASE("aggregates equal a recomputation from the written manifests") {
    ExperimentSpec spec = small_spec();
    spec.methods = {dil::Method::Finetune, dil::Method::Ewc};
    spec.counts = {0, 6};
    spec.seeds = {0, 1, 2};
    const auto result = run_experiment(small_data(), spec);
    const fs::path dir = scratch("aggregate");
    write_experiment(result, dir);
    const auto runs = load_runs(dir);
    REQUIRE(runs.size() == result.runs.size());
    CHECK(aggregate(runs).to_csv() == result.table.to_csv());

    for (const auto& row : result.table.rows) {
        std::vector<double> values;
        for (const auto& run : runs) {
            if (run.cell.key() != row.cell.key()) continue;
            const int d = static_cast<int>(std::find(run.domain_names.begin(), run.domain_names.end(), row.test_domain) - run.domain_names.begin());
            values.push_back(run.stages[static_cast<std::size_t>(row.stage)].mae[static_cast<std::size_t>(d)]);
        }
        REQUIRE(values.size() == 3);
        const double mean = (values[0] + values[1] + values[2]) / 3.0;
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        CHECK(row.mae_mean == doctest::Approx(mean).epsilon(1e-12));
        CHECK(row.mae_std == doctest::Approx(std::sqrt(var / 3.0)).epsilon(1e-9));
    }
    fs::remove_all(dir);
}

TEST_CASE("exemplar sets are drawn from the static train pool") {
    ExperimentSpec spec = small_spec();
    spec.sequence = {0, 1, 2};
    spec.counts = {12};
    spec.selections = {parse_selection("ed"), parse_selection("error_highest"), parse_selection("braycurtis")};
    const auto result = run_experiment(small_data(), spec);
    for (const auto& run : result.runs) {
        CHECK(run.leakage_violations == 0);
        for (std::size_t s = 1; s < run.stages.size(); ++s) {
            const auto& task = small_data().tasks[static_cast<std::size_t>(run.sequence[s])];
            const auto& ex = run.stages[s].exemplars.ids;
            CHECK(ex.size() == 12);
            for (auto id : ex) CHECK(std::binary_search(task.static_train.begin(), task.static_train.end(), id));
        }
    }
}

TEST_CASE("leakage check flags test ids") {
    const auto& ds = small_data().tasks[1].dataset;
    CHECK(leaked_ids(ds, ds.train).empty());
    std::vector<SampleId> stream = {ds.train[0], ds.test[0], ds.test[1]};
    CHECK(leaked_ids(ds, stream) == std::vector<SampleId>{ds.test[0], ds.test[1]});
}

TEST_CASE("failed runs are marked and the table is still produced") {
    ExperimentSpec spec = small_spec();
    spec.base.learning_rate = 1e200;
    const auto result = run_experiment(small_data(), spec);
    REQUIRE(result.runs.size() == 1);
    CHECK(result.runs[0].failed);
    CHECK_FALSE(result.runs[0].error.empty());
    CHECK(result.table.rows.size() == 4);
    CHECK_FALSE(result.table.all_ok());
    CHECK(result.table.rows.back().status() == "failed");
}

TEST_CASE("lambda sweep grid and its zero column") {
    ExperimentSpec base = small_spec();
    base.seeds = {0, 1};
    SweepSpec sweep;
    sweep.lambdas = {0.0, 10.0};
    sweep.counts = {0, 6};
    const auto result = sweep_lambda(small_data(), base, sweep);
    CHECK(result.grid.size() == 4);

    ExperimentSpec ft = base;
    ft.methods = {dil::Method::Finetune};
    ft.counts = {0, 6};
    const auto finetune = run_experiment(small_data(), ft);
    for (const auto& cell : result.grid) {
        if (cell.lambda != 0.0) continue;
        for (const auto& run : finetune.runs) {
            if (run.cell.count != cell.count) continue;
            const auto seed_index = static_cast<std::size_t>(run.seed);
            CHECK(cell.old_per_seed[seed_index] == run.stages[1].mae[0]);
        }
    }

    SweepSpec single;
    single.lambdas = {1.0};
    single.counts = {0};
    CHECK(sweep_lambda(small_data(), base, single).grid.size() == 1);
}

TEST_CASE("selection comparison with random only matches a plain run") {
    ExperimentSpec base = small_spec();
    base.methods = {dil::Method::Lwf};
    base.selections = {parse_selection("random")};
    const auto cmp = compare_selection(small_data(), base, 10);
    REQUIRE(cmp.summary.size() == 1);
    base.counts = {10};
    const auto plain = run_experiment(small_data(), base);
    CHECK(cmp.summary[0].old_mean == plain.runs[0].stages[1].mae[0]);
    CHECK(cmp.summary[0].new_mean == plain.runs[0].stages[1].mae[1]);
    CHECK(all_selection_variants().size() == 10);
}

TEST_CASE("scenario directory round trip") {
    const fs::path dir = scratch("scenario");
    write_scenario_dir(small_data(), dir);
    const auto back = load_scenario_dir(dir);
    REQUIRE(back.tasks.size() == small_data().tasks.size());
    for (std::size_t t = 0; t < back.tasks.size(); ++t) {
        CHECK(back.tasks[t].table.features == small_data().tasks[t].table.features);
        CHECK(back.tasks[t].static_train == small_data().tasks[t].static_train);
        CHECK(back.tasks[t].dataset.name == small_data().tasks[t].dataset.name);
    }
    fs::remove_all(dir);
}

TEST_CASE("population mean and std") {
    const auto [m, s] = mean_std({1.0, 2.0, 3.0, 4.0});
    CHECK(m == 2.5);
    CHECK(s == doctest::Approx(std::sqrt(1.25)));
}

}  // TEST_SUITE

TEST_SUITE("config") {

TEST_CASE("defaults parse") {
    const auto cfg = parse_config(nlohmann::json::object());
    CHECK(cfg.scenario.tasks.size() == 5);
    CHECK(cfg.experiment.seeds.size() == 5);
    CHECK(cfg.experiment.cells().size() == 6);
    CHECK(cfg.compare_selections.size() == 10);
    CHECK(cfg.sweep.lambdas.size() == 5);
}

TEST_CASE("overrides use dotted paths") {
    auto doc = default_config();
    apply_override(doc, "experiment.methods=[\"ewc\"]");
    apply_override(doc, "dil.epochs_adapt=3");
    apply_override(doc, "generation.samples=100");
    apply_override(doc, "selection.strategies.0=ed");
    apply_override(doc, "experiment.seeds=[7,9]");
    const auto cfg = parse_config(doc);
    CHECK(cfg.experiment.methods == std::vector<dil::Method>{dil::Method::Ewc});
    CHECK(cfg.experiment.base.epochs_adapt == 3);
    CHECK(cfg.scenario.samples_per_task == 100);
    CHECK(cfg.experiment.selections[0].strategy == sampling::Strategy::EquallyDistributed);
    CHECK(cfg.experiment.seeds == std::vector<std::uint64_t>{7, 9});
    CHECK_THROWS_AS(apply_override(doc, "noequals"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "selection.strategies.5=ed"), ConfigError);
}

TEST_CASE("invalid documents are config errors") {
    using nlohmann::json;
    CHECK_THROWS_AS(parse_config(json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"experiment", {{"methods", {"sgd"}}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"experiment", {{"seeds", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"dil", {{"epochs_adapt", 0}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"dil", {{"learning_rat", 0.1}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"selection", {{"strategies", {"similarity:hamming"}}}}}), ConfigError);
    CHECK_THROWS_AS(parse_config(json{{"sweep", {{"counts", json::array()}}}}), ConfigError);
    auto cfg = parse_config(json{{"experiment", {{"sequence", {"T1", "T9"}}}}, {"generation", {{"samples", 20}}}});
    CHECK_THROWS_AS(cfg.load_data(), ConfigError);
}

TEST_CASE("dil settings round trip through json") {
    dil::DilConfig c;
    c.method = dil::Method::Si;
    c.lambda = 7.0;
    c.hidden = {9, 4};
    c.milestones = {2};
    const auto back = dil_config_from_json(to_json(c));
    CHECK(back.method == dil::Method::Si);
    CHECK(back.lambda == 7.0);
    CHECK(back.hidden == c.hidden);
    CHECK(back.milestones == c.milestones);
}

}  // TEST_SUITE
