#include "cirdil/sampling/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cirdil/rng.hpp"
#include "cirdil/similarity/neighbor_index.hpp"

namespace cirdil::sampling {

std::string to_string(Strategy strategy) {
    switch (strategy) {
        case Strategy::Random: return "random";
        case Strategy::EquallyDistributed: return "ed";
        case Strategy::ErrorHighest: return "error_highest";
        case Strategy::ErrorLowest: return "error_lowest";
        case Strategy::Similarity: return "similarity";
    }
    return "random";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "random" || text == "rd") return Strategy::Random;
    if (text == "ed" || text == "equally_distributed") return Strategy::EquallyDistributed;
    if (text == "error_highest") return Strategy::ErrorHighest;
    if (text == "error_lowest") return Strategy::ErrorLowest;
    if (text == "similarity") return Strategy::Similarity;
    throw std::invalid_argument("unknown selection strategy '" + text + "'");
}

void SelectionConfig::validate() const {
    if ((strategy == Strategy::Similarity) != metric.has_value()) {
        throw std::invalid_argument("a metric is required for similarity selection and only there");
    }
}

std::string SelectionConfig::label() const {
    if (strategy == Strategy::Similarity) return "similarity:" + metric->name();
    return to_string(strategy);
}

Pool make_pool(const channel::FeatureTable& table, const std::vector<SampleId>& ids) {
    Pool pool;
    pool.ids = ids;
    pool.features.resize(table.features.rows(), static_cast<Eigen::Index>(ids.size()));
    pool.positions.resize(2, static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto col = static_cast<Eigen::Index>(ids[i]);
        if (col >= table.features.cols()) throw std::out_of_range("pool id outside the feature table");
        pool.features.col(static_cast<Eigen::Index>(i)) = table.features.col(col);
        pool.positions.col(static_cast<Eigen::Index>(i)) = table.positions.col(col);
    }
    return pool;
}

nlohmann::json to_json(const ExemplarSet& set) {
    nlohmann::json j = {{"ids", set.ids},
                        {"scores", set.scores},
                        {"strategy", to_string(set.strategy)},
                        {"seed", set.seed},
                        {"excluded", set.excluded}};
    j["metric"] = set.metric ? nlohmann::json(set.metric->name()) : nlohmann::json(nullptr);
    if (!set.note.empty()) j["note"] = set.note;
    return j;
}

namespace {

void check_count(std::size_t n, std::size_t available) {
    if (n > available) {
        throw std::invalid_argument("cannot select " + std::to_string(n) + " exemplars from a pool of " +
                                    std::to_string(available));
    }
}

ExemplarSet empty_set(const SelectionConfig& cfg) {
    ExemplarSet set;
    set.strategy = cfg.strategy;
    set.metric = cfg.metric;
    set.seed = cfg.seed;
    return set;
}

/// Indices ordered by (score, id) ascending or (score descending, id ascending).
std::vector<std::size_t> rank(const std::vector<double>& scores, const std::vector<SampleId>& ids, bool descending) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return descending ? scores[a] > scores[b] : scores[a] < scores[b];
        return ids[a] < ids[b];
    });
    return order;
}

}  // namespace

ExemplarSet select_random(const Pool& pool, const SelectionConfig& cfg) {
    check_count(cfg.count, pool.size());
    ExemplarSet set = empty_set(cfg);
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(cfg.seed);
    // Partial Fisher-Yates: the first `count` slots are a uniform draw without replacement.
    for (std::size_t i = 0; i < cfg.count; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
        std::swap(idx[i], idx[j]);
        set.ids.push_back(pool.ids[idx[i]]);
    }
    return set;
}

ExemplarSet select_equally_distributed(const Pool& pool, const SelectionConfig& cfg) {
    check_count(cfg.count, pool.size());
    ExemplarSet set = empty_set(cfg);
    if (cfg.count == 0) return set;

    const Eigen::Vector2d lo = pool.positions.rowwise().minCoeff();
    const Eigen::Vector2d hi = pool.positions.rowwise().maxCoeff();
    const auto grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(cfg.count))));
    const Eigen::Vector2d cell = ((hi - lo) / grid).cwiseMax(1e-12);

    auto cell_of = [&](Eigen::Index i, int axis) {
        const int c = static_cast<int>(std::floor((pool.positions(axis, i) - lo(axis)) / cell(axis)));
        return std::clamp(c, 0, grid - 1);
    };

    // Best candidate per cell in row-major order (rows along y).
    const auto n_cells = static_cast<std::size_t>(grid) * static_cast<std::size_t>(grid);
    std::vector<Eigen::Index> best(n_cells, -1);
    std::vector<double> best_dist(n_cells, 0.0);
    for (Eigen::Index i = 0; i < pool.positions.cols(); ++i) {
        const int cx = cell_of(i, 0);
        const int cy = cell_of(i, 1);
        const auto c = static_cast<std::size_t>(cy) * static_cast<std::size_t>(grid) + static_cast<std::size_t>(cx);
        const double centre_x = lo(0) + (cx + 0.5) * cell(0);
        const double centre_y = lo(1) + (cy + 0.5) * cell(1);
        const double d = std::hypot(pool.positions(0, i) - centre_x, pool.positions(1, i) - centre_y);
        const auto idx = static_cast<std::size_t>(i);
        if (best[c] < 0 || d < best_dist[c] ||
            (d == best_dist[c] && pool.ids[idx] < pool.ids[static_cast<std::size_t>(best[c])])) {
            best[c] = i;
            best_dist[c] = d;
        }
    }
    std::vector<Eigen::Index> occupied;
    for (auto b : best) {
        if (b >= 0) occupied.push_back(b);
    }

    std::vector<bool> taken(pool.size(), false);
    if (occupied.size() > cfg.count) {
        for (std::size_t k = 0; k < cfg.count; ++k) {
            const auto b = occupied[k * occupied.size() / cfg.count];
            taken[static_cast<std::size_t>(b)] = true;
            set.ids.push_back(pool.ids[static_cast<std::size_t>(b)]);
        }
    } else {
        for (auto b : occupied) {
            taken[static_cast<std::size_t>(b)] = true;
            set.ids.push_back(pool.ids[static_cast<std::size_t>(b)]);
        }
    }

    if (set.ids.size() < cfg.count) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (!taken[i]) rest.push_back(i);
        }
        Rng rng(cfg.seed);
        const std::size_t deficit = cfg.count - set.ids.size();
        for (std::size_t i = 0; i < deficit; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(rest.size() - i));
            std::swap(rest[i], rest[j]);
            set.ids.push_back(pool.ids[rest[i]]);
        }
        set.note = std::to_string(deficit) + " empty-cell slots filled at random";
    }
    return set;
}

std::vector<ErrorRecord> compute_errors(const Eigen::MatrixXd& predictions, const Pool& pool) {
    if (predictions.rows() != 2 || predictions.cols() != static_cast<Eigen::Index>(pool.size())) {
        throw std::invalid_argument("compute_errors: one 2D prediction per pool sample required");
    }
    std::vector<ErrorRecord> records;
    records.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto c = static_cast<Eigen::Index>(i);
        const double e = std::hypot(predictions(0, c) - pool.positions(0, c), predictions(1, c) - pool.positions(1, c));
        records.push_back({pool.ids[i], e});
    }
    return records;
}

ExemplarSet select_by_error(const std::vector<ErrorRecord>& records, const SelectionConfig& cfg) {
    if (cfg.strategy != Strategy::ErrorHighest && cfg.strategy != Strategy::ErrorLowest) {
        throw std::invalid_argument("select_by_error needs an error strategy");
    }
    check_count(cfg.count, records.size());
    ExemplarSet set = empty_set(cfg);
    set.note = "errors from the pre-adaptation model";
    std::vector<double> scores;
    std::vector<SampleId> ids;
    for (const auto& r : records) {
        scores.push_back(r.error);
        ids.push_back(r.id);
    }
    const auto order = rank(scores, ids, cfg.strategy == Strategy::ErrorHighest);
    for (std::size_t k = 0; k < cfg.count; ++k) {
        set.ids.push_back(ids[order[k]]);
        set.scores.push_back(scores[order[k]]);
    }
    return set;
}

ExemplarSet select_by_similarity(const Eigen::MatrixXd& previous, const Pool& pool, const SelectionConfig& cfg) {
    if (cfg.strategy != Strategy::Similarity || !cfg.metric) {
        throw std::invalid_argument("select_by_similarity needs the similarity strategy and a metric");
    }
    check_count(cfg.count, pool.size());
    if (previous.cols() == 0) throw std::invalid_argument("similarity selection needs previous-domain samples");
    if (previous.rows() != pool.features.rows()) throw std::invalid_argument("previous and pool feature lengths differ");
    const Metric metric = *cfg.metric;
    ExemplarSet set = empty_set(cfg);
    if (cfg.count == 0) return set;

    // References for which the metric is undefined against anything are dropped up front.
    std::vector<Eigen::Index> valid;
    const bool self_check = metric.kind == similarity::MetricKind::Cosine ||
                            metric.kind == similarity::MetricKind::Correlation;
    for (Eigen::Index j = 0; j < previous.cols(); ++j) {
        if (self_check) {
            try {
                (void)similarity::distance(metric, previous.col(j), previous.col(j));
            } catch (const similarity::UndefinedDistance&) {
                ++set.excluded;
                continue;
            }
        }
        valid.push_back(j);
    }
    if (valid.empty()) throw std::invalid_argument("metric undefined for every previous-domain sample");
    Eigen::MatrixXd refs(previous.rows(), static_cast<Eigen::Index>(valid.size()));
    std::vector<std::size_t> ref_ids;
    for (std::size_t k = 0; k < valid.size(); ++k) {
        refs.col(static_cast<Eigen::Index>(k)) = previous.col(valid[k]);
        ref_ids.push_back(static_cast<std::size_t>(valid[k]));
    }
    const similarity::NeighborIndex<double> index(std::move(refs), metric, std::move(ref_ids));

    std::vector<double> scores;
    std::vector<SampleId> ids;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        try {
            const auto nn = index.nearest(pool.features.col(static_cast<Eigen::Index>(i)));
            scores.push_back(nn.distance);
            ids.push_back(pool.ids[i]);
        } catch (const similarity::UndefinedDistance&) {
            ++set.excluded;
        }
    }
    check_count(cfg.count, ids.size());
    const auto order = rank(scores, ids, false);
    for (std::size_t k = 0; k < cfg.count; ++k) {
        set.ids.push_back(ids[order[k]]);
        set.scores.push_back(scores[order[k]]);
    }
    if (!index.uses_tree()) set.note = "exhaustive search: metric has no kd-tree bound";
    return set;
}

}  // namespace cirdil::sampling
