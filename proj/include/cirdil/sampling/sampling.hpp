#ifndef CIRDIL_SAMPLING_SAMPLING_HPP
#define CIRDIL_SAMPLING_SAMPLING_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cirdil/channel/task.hpp"
#include "cirdil/similarity/metric.hpp"
#include "cirdil/types.hpp"

namespace cirdil::sampling {

using similarity::Metric;

enum class Strategy { Random, EquallyDistributed, ErrorHighest, ErrorLowest, Similarity };

std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& text);

struct SelectionConfig {
    Strategy strategy = Strategy::Random;
    std::size_t count = 0;
    std::optional<Metric> metric;  // present iff strategy == Similarity
    std::uint64_t seed = 0;

    void validate() const;
    /// "random", "ed", "error_highest", "error_lowest" or "similarity:<metric>".
    std::string label() const;
};

/// Candidate samples: ids with their feature vectors and positions as columns.
struct Pool {
    std::vector<SampleId> ids;
    Eigen::MatrixXd features;
    Eigen::MatrixXd positions;

    std::size_t size() const { return ids.size(); }
};

/// Columns of `table` selected by `ids`, in the given order.
Pool make_pool(const channel::FeatureTable& table, const std::vector<SampleId>& ids);

struct ExemplarSet {
    std::vector<SampleId> ids;
    std::vector<double> scores;  // error or nearest distance; empty for random / ED
    Strategy strategy = Strategy::Random;
    std::optional<Metric> metric;
    std::uint64_t seed = 0;
    std::size_t excluded = 0;  // candidates dropped because the metric was undefined for them
    std::string note;

    std::size_t size() const { return ids.size(); }
};

nlohmann::json to_json(const ExemplarSet& set);

struct ErrorRecord {
    SampleId id = 0;
    double error = 0.0;  // Euclidean prediction error in metres
};

ExemplarSet select_random(const Pool& pool, const SelectionConfig& cfg);

/// Grid of ceil(sqrt(N)) x ceil(sqrt(N)) cells over the pool's bounding box;
/// each non-empty cell contributes its sample closest to the cell centre.
/// When more cells than N are occupied, N of them are taken at evenly spaced
/// positions of the row-major cell order; a shortfall is filled by seeded
/// random draws from the remaining pool.
ExemplarSet select_equally_distributed(const Pool& pool, const SelectionConfig& cfg);

/// Per-sample Euclidean error of `predictions` (2 x n) against the pool positions.
std::vector<ErrorRecord> compute_errors(const Eigen::MatrixXd& predictions, const Pool& pool);

template <typename Model>
std::vector<ErrorRecord> compute_errors(const Model& model, const Pool& pool) {
    if (pool.size() == 0) return {};
    return compute_errors(Eigen::MatrixXd(model.forward(pool.features)), pool);
}

/// Top N by descending (ErrorHighest) or ascending (ErrorLowest) error,
/// ties to the smaller id.
ExemplarSet select_by_error(const std::vector<ErrorRecord>& records, const SelectionConfig& cfg);

/// Scores each pool sample by the distance to its nearest neighbour among
/// `previous` (features as columns) and keeps the N lowest scores, ties to
/// the smaller id. Vectors for which the metric is undefined are dropped and
/// counted in `excluded`.
ExemplarSet select_by_similarity(const Eigen::MatrixXd& previous, const Pool& pool, const SelectionConfig& cfg);

}  // namespace cirdil::sampling

#endif  // CIRDIL_SAMPLING_SAMPLING_HPP
