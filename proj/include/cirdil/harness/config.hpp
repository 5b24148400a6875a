#ifndef CIRDIL_HARNESS_CONFIG_HPP
#define CIRDIL_HARNESS_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cirdil/dil/dil.hpp"
#include "cirdil/harness/experiment.hpp"

namespace cirdil::harness {

/// Invalid configuration document or override.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

nlohmann::json to_json(const dil::DilConfig& cfg);
/// Keys absent from `doc` keep the values of `base`.
dil::DilConfig dil_config_from_json(const nlohmann::json& doc, dil::DilConfig base = {});

/// Experiment document sections:
///   scene, tasks, generation   scenario (defaults to the desk scenario)
///   scenario_dir               pre-generated scenario directory, replaces the above
///   dil                        training settings and weight_averaging
///   experiment                 sequence, methods, lambdas, counts, seeds, jobs
///   selection                  strategies for run; count, method and variants for compare-selection
///   sweep                      method, lambdas, counts for sweep-lambda
struct ExperimentConfig {
    nlohmann::json document;  // effective document, overrides applied
    channel::Scenario scenario;
    std::optional<std::filesystem::path> scenario_dir;
    ExperimentSpec experiment;
    std::vector<std::string> sequence;  // task names; empty means every task
    SweepSpec sweep;
    std::size_t compare_count = 50;
    dil::Method compare_method = dil::Method::Lwf;
    std::vector<sampling::SelectionConfig> compare_selections;

    /// Loads or generates the scenario and resolves the task sequence.
    ScenarioData load_data();
};

nlohmann::json default_config();

/// "a.b.c=value"; value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Validates the document against the schema above; throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace cirdil::harness

#endif  // CIRDIL_HARNESS_CONFIG_HPP
