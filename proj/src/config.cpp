#include "cirdil/harness/config.hpp"

#include <fstream>
#include <set>

namespace cirdil::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& section, const std::string& name, const std::set<std::string>& allowed) {
    if (!section.is_object()) throw ConfigError("section '" + name + "' must be an object");
    for (const auto& [key, value] : section.items()) {
        if (!allowed.count(key)) throw ConfigError("unknown key '" + name + "." + key + "'");
    }
}

std::vector<std::size_t> counts_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + " must be a nonempty array of counts");
    std::vector<std::size_t> out;
    for (const auto& v : j) {
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError(where + " entries must be integers >= 0");
        out.push_back(v.get<std::size_t>());
    }
    return out;
}

std::vector<double> lambdas_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty()) throw ConfigError(where + " must be a nonempty array");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number() || !(v.get<double>() >= 0.0)) throw ConfigError(where + " entries must be numbers >= 0");
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

json to_json(const dil::DilConfig& cfg) {
    return {{"method", dil::to_string(cfg.method)},
            {"lambda", cfg.lambda},
            {"weight_averaging", cfg.weight_averaging},
            {"epochs_initial", cfg.epochs_initial},
            {"epochs_adapt", cfg.epochs_adapt},
            {"batch", cfg.batch},
            {"learning_rate", cfg.learning_rate},
            {"milestones", cfg.milestones},
            {"decay", cfg.decay},
            {"hidden", cfg.hidden},
            {"si_damping", cfg.si_damping}};
}

dil::DilConfig dil_config_from_json(const json& doc, dil::DilConfig cfg) {
    check_keys(doc, "dil", {"method", "lambda", "weight_averaging", "epochs_initial", "epochs_adapt", "batch", "learning_rate",
                            "milestones", "decay", "hidden", "si_damping"});
    try {
        if (doc.contains("method")) cfg.method = dil::parse_method(doc.at("method").get<std::string>());
        cfg.lambda = doc.value("lambda", cfg.lambda);
        cfg.weight_averaging = doc.value("weight_averaging", cfg.weight_averaging);
        cfg.epochs_initial = doc.value("epochs_initial", cfg.epochs_initial);
        cfg.epochs_adapt = doc.value("epochs_adapt", cfg.epochs_adapt);
        cfg.batch = doc.value("batch", cfg.batch);
        cfg.learning_rate = doc.value("learning_rate", cfg.learning_rate);
        cfg.milestones = doc.value("milestones", cfg.milestones);
        cfg.decay = doc.value("decay", cfg.decay);
        cfg.hidden = doc.value("hidden", cfg.hidden);
        cfg.si_damping = doc.value("si_damping", cfg.si_damping);
        cfg.validate();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dil: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("dil: ") + e.what());
    }
    return cfg;
}

json default_config() {
    json doc = channel::to_json(channel::default_scenario());
    json dil_section = to_json(dil::DilConfig{});
    dil_section.erase("method");
    dil_section.erase("lambda");
    doc["dil"] = dil_section;
    doc["experiment"] = {{"sequence", json::array()},
                         {"methods", {"finetune", "ewc", "lwf"}},
                         {"lambdas", nullptr},
                         {"counts", {0, 50}},
                         {"seeds", 5},
                         {"jobs", 1}};
    doc["selection"] = {{"strategies", {"random"}}, {"compare_count", 50}, {"compare_method", "lwf"}, {"compare_variants", json::array()}};
    const SweepSpec sweep;
    doc["sweep"] = {{"method", dil::to_string(sweep.method)}, {"lambdas", sweep.lambdas}, {"counts", sweep.counts}};
    return doc;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("empty key in override '" + path + "'");
        if (node->is_array()) {
            std::size_t index = 0;
            try {
                index = std::stoul(key);
            } catch (const std::exception&) {
                throw ConfigError("array index expected at '" + key + "' in '" + path + "'");
            }
            if (index >= node->size()) throw ConfigError("index out of range in override '" + path + "'");
            node = &(*node)[index];
        } else {
            if (node->is_null()) *node = json::object();
            if (!node->is_object()) throw ConfigError("cannot descend into '" + key + "' in '" + path + "'");
            node = &(*node)[key];
        }
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = std::move(value);
}

ExperimentConfig parse_config(const json& input) {
    ExperimentConfig out;
    json doc = default_config();
    if (!input.is_object()) throw ConfigError("configuration must be a JSON object");
    check_keys(input, "config", {"scene", "tasks", "generation", "scenario_dir", "dil", "experiment", "selection", "sweep"});
    // Whole sections replace their defaults, except the keyed ones below which merge.
    for (const auto& [key, value] : input.items()) {
        if (key == "dil" || key == "experiment" || key == "selection" || key == "sweep" || key == "generation") {
            if (!value.is_object()) throw ConfigError("section '" + key + "' must be an object");
            for (const auto& [k, v] : value.items()) doc[key][k] = v;
        } else {
            doc[key] = value;
        }
    }
    out.document = doc;

    try {
        check_keys(doc.at("generation"), "generation", {"seed", "samples", "train_fraction", "trajectory"});
        out.scenario = channel::scenario_from_json(doc);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("scenario: ") + e.what());
    }
    if (doc.contains("scenario_dir")) {
        if (!doc.at("scenario_dir").is_string()) throw ConfigError("scenario_dir must be a path string");
        out.scenario_dir = doc.at("scenario_dir").get<std::string>();
    }

    ExperimentSpec& spec = out.experiment;
    spec.base = dil_config_from_json(doc.at("dil"));
    spec.weight_averaging = spec.base.weight_averaging;

    const json& e = doc.at("experiment");
    check_keys(e, "experiment", {"sequence", "methods", "lambdas", "counts", "seeds", "jobs"});
    try {
        for (const auto& name : e.at("sequence")) out.sequence.push_back(name.get<std::string>());
        spec.methods.clear();
        for (const auto& m : e.at("methods")) spec.methods.push_back(dil::parse_method(m.get<std::string>()));
        if (spec.methods.empty()) throw ConfigError("experiment.methods is empty");
        spec.lambdas = e.at("lambdas").is_null() ? std::vector<double>{} : lambdas_from(e.at("lambdas"), "experiment.lambdas");
        spec.counts = counts_from(e.at("counts"), "experiment.counts");
        const json& seeds = e.at("seeds");
        spec.seeds.clear();
        if (seeds.is_number_integer()) {
            if (seeds.get<long long>() < 1) throw ConfigError("experiment.seeds must be >= 1");
            for (long long s = 0; s < seeds.get<long long>(); ++s) spec.seeds.push_back(static_cast<std::uint64_t>(s));
        } else {
            for (const auto& s : seeds) spec.seeds.push_back(s.get<std::uint64_t>());
        }
        if (spec.seeds.empty()) throw ConfigError("experiment.seeds is empty");
        spec.jobs = e.at("jobs").get<int>();
        if (spec.jobs < 1) throw ConfigError("experiment.jobs must be >= 1");

        const json& sel = doc.at("selection");
        check_keys(sel, "selection", {"strategies", "compare_count", "compare_method", "compare_variants"});
        spec.selections.clear();
        for (const auto& s : sel.at("strategies")) spec.selections.push_back(parse_selection(s.get<std::string>()));
        if (spec.selections.empty()) throw ConfigError("selection.strategies is empty");
        out.compare_count = sel.at("compare_count").get<std::size_t>();
        out.compare_method = dil::parse_method(sel.at("compare_method").get<std::string>());
        for (const auto& s : sel.at("compare_variants")) out.compare_selections.push_back(parse_selection(s.get<std::string>()));
        if (out.compare_selections.empty()) out.compare_selections = all_selection_variants();

        const json& sw = doc.at("sweep");
        check_keys(sw, "sweep", {"method", "lambdas", "counts"});
        out.sweep.method = dil::parse_method(sw.at("method").get<std::string>());
        out.sweep.lambdas = lambdas_from(sw.at("lambdas"), "sweep.lambdas");
        out.sweep.counts = counts_from(sw.at("counts"), "sweep.counts");
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& ex) {
        throw ConfigError(ex.what());
    }
    return out;
}

ScenarioData ExperimentConfig::load_data() {
    ScenarioData data = scenario_dir ? load_scenario_dir(*scenario_dir) : prepare_scenario(scenario);
    experiment.sequence.clear();
    if (sequence.empty()) {
        for (std::size_t k = 0; k < data.tasks.size(); ++k) experiment.sequence.push_back(static_cast<int>(k));
    } else {
        for (const auto& name : sequence) {
            const int index = data.index_of(name);
            if (index < 0) throw ConfigError("sequence refers to unknown task '" + name + "'");
            experiment.sequence.push_back(index);
        }
    }
    try {
        experiment.validate(data);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return data;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace cirdil::harness
