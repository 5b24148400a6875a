#include <doctest.h>

#include <algorithm>
#include <limits>
#include <set>

#include "cirdil/nn/mlp.hpp"
#include "cirdil/rng.hpp"
#include "cirdil/sampling/sampling.hpp"

using namespace cirdil;
using namespace cirdil::sampling;
using similarity::MetricKind;
using Eigen::MatrixXd;

namespace {

Pool random_pool(std::size_t n, Eigen::Index dim, Rng& rng, SampleId first_id = 0) {
    Pool pool;
    pool.features.resize(dim, static_cast<Eigen::Index>(n));
    pool.positions.resize(2, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        pool.ids.push_back(first_id + 3 * i);
        for (Eigen::Index r = 0; r < dim; ++r) pool.features(r, static_cast<Eigen::Index>(i)) = rng.uniform(-1.0, 1.0);
        pool.positions(0, static_cast<Eigen::Index>(i)) = rng.uniform(0.0, 20.0);
        pool.positions(1, static_cast<Eigen::Index>(i)) = rng.uniform(0.0, 20.0);
    }
    return pool;
}

SelectionConfig config(Strategy s, std::size_t n, std::uint64_t seed = 0) {
    SelectionConfig c;
    c.strategy = s;
    c.count = n;
    c.seed = seed;
    return c;
}

SelectionConfig similarity_config(similarity::Metric m, std::size_t n) {
    SelectionConfig c = config(Strategy::Similarity, n);
    c.metric = m;
    return c;
}

// Double loop over every (pool, previous) pair, then a full sort.
std::vector<SampleId> similarity_oracle(const MatrixXd& previous, const Pool& pool, const similarity::Metric& m, std::size_t n) {
    std::vector<std::pair<double, SampleId>> scored;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        bool any = false;
        for (Eigen::Index j = 0; j < previous.cols(); ++j) {
            try {
                best = std::min(best, similarity::distance(m, previous.col(j), pool.features.col(static_cast<Eigen::Index>(i))));
                any = true;
            } catch (const similarity::UndefinedDistance&) {
            }
        }
        if (any) scored.emplace_back(best, pool.ids[i]);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<SampleId> out;
    for (std::size_t k = 0; k < n; ++k) out.push_back(scored[k].second);
    return out;
}

double min_spacing_mean(const Pool& pool, const std::vector<SampleId>& ids) {
    std::vector<Eigen::Index> cols;
    for (auto id : ids) cols.push_back(std::find(pool.ids.begin(), pool.ids.end(), id) - pool.ids.begin());
    double total = 0.0;
    for (auto a : cols) {
        double best = std::numeric_limits<double>::infinity();
        for (auto b : cols) {
            if (a != b) best = std::min(best, (pool.positions.col(a) - pool.positions.col(b)).norm());
        }
        total += best;
    }
    return total / static_cast<double>(cols.size());
}

}  // namespace

TEST_SUITE("sampling") {

TEST_CASE("random selection") {
    Rng rng(1);
    const Pool pool = random_pool(30, 4, rng);
    const auto all = select_random(pool, config(Strategy::Random, 30, 5));
    CHECK(std::set<SampleId>(all.ids.begin(), all.ids.end()) == std::set<SampleId>(pool.ids.begin(), pool.ids.end()));
    CHECK(select_random(pool, config(Strategy::Random, 0, 5)).ids.empty());
    CHECK(select_random(pool, config(Strategy::Random, 10, 5)).ids == select_random(pool, config(Strategy::Random, 10, 5)).ids);
    CHECK(select_random(pool, config(Strategy::Random, 10, 5)).ids != select_random(pool, config(Strategy::Random, 10, 6)).ids);
    CHECK_THROWS(select_random(pool, config(Strategy::Random, 31, 5)));
}

TEST_CASE("equally distributed on the unit square corners") {
    Pool pool;
    pool.ids = {10, 11, 12, 13};
    pool.features = MatrixXd::Zero(1, 4);
    pool.positions.resize(2, 4);
    pool.positions << 0, 1, 0, 1, 0, 0, 1, 1;
    auto set = select_equally_distributed(pool, config(Strategy::EquallyDistributed, 4));
    std::sort(set.ids.begin(), set.ids.end());
    CHECK(set.ids == std::vector<SampleId>{10, 11, 12, 13});
}

TEST_CASE("equally distributed with one cell picks the sample nearest the centre") {
    Pool pool;
    pool.ids = {1, 2, 3};
    pool.features = MatrixXd::Zero(1, 3);
    pool.positions.resize(2, 3);
    pool.positions << 0, 4.2, 10, 0, 5.5, 10;
    CHECK(select_equally_distributed(pool, config(Strategy::EquallyDistributed, 1)).ids == std::vector<SampleId>{2});
}

TEST_CASE("equally distributed spreads wider than random on clustered pools") {
    int wins = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(1000 + seed);
        Pool pool = random_pool(2000, 1, rng);
        // Three quarters of the pool crowds into one corner.
        for (Eigen::Index i = 0; i < 1500; ++i) {
            pool.positions(0, i) = rng.uniform(0.0, 4.0);
            pool.positions(1, i) = rng.uniform(0.0, 4.0);
        }
        const auto ed = select_equally_distributed(pool, config(Strategy::EquallyDistributed, 50, seed));
        const auto rd = select_random(pool, config(Strategy::Random, 50, seed));
        CHECK(ed.size() == 50);
        wins += min_spacing_mean(pool, ed.ids) >= min_spacing_mean(pool, rd.ids);
    }
    CHECK(wins >= 4);
}

TEST_CASE("errors against positions") {
    Rng rng(4);
    const Pool pool = random_pool(20, 3, rng);
    const auto perfect = compute_errors(pool.positions, pool);
    for (const auto& r : perfect) CHECK(r.error == 0.0);
    const MatrixXd constant = MatrixXd::Constant(2, 20, 10.0);
    const auto records = compute_errors(constant, pool);
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].id == pool.ids[i]);
        const Eigen::Vector2d d = pool.positions.col(static_cast<Eigen::Index>(i)) - Eigen::Vector2d(10.0, 10.0);
        CHECK(records[i].error == doctest::Approx(d.norm()).epsilon(1e-14));
    }
    const auto net = nn::Mlp<double>::glorot({3, 4, 2}, rng);
    const auto via_model = compute_errors(net, pool);
    const MatrixXd pred = net.forward(pool.features);
    for (std::size_t i = 0; i < via_model.size(); ++i) {
        CHECK(via_model[i].error == doctest::Approx((pred.col(static_cast<Eigen::Index>(i)) - pool.positions.col(static_cast<Eigen::Index>(i))).norm()));
    }
}

TEST_CASE("error selection rules") {
    std::vector<ErrorRecord> equal;
    for (SampleId id = 0; id < 10; ++id) equal.push_back({9 - id, 1.0});
    CHECK(select_by_error(equal, config(Strategy::ErrorHighest, 3)).ids == std::vector<SampleId>{0, 1, 2});
    CHECK(select_by_error(equal, config(Strategy::ErrorLowest, 3)).ids == std::vector<SampleId>{0, 1, 2});

    std::vector<ErrorRecord> by_id;
    for (SampleId id = 0; id < 10; ++id) by_id.push_back({id, static_cast<double>(id)});
    CHECK(select_by_error(by_id, config(Strategy::ErrorHighest, 3)).ids == std::vector<SampleId>{9, 8, 7});
    CHECK_THROWS(select_by_error(by_id, config(Strategy::Random, 3)));
}

TEST_CASE("error selection equals a full sort") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ErrorRecord> records;
        for (SampleId id = 0; id < 500; ++id) records.push_back({id * 7 % 503, std::round(rng.uniform(0.0, 50.0))});
        for (auto strategy : {Strategy::ErrorHighest, Strategy::ErrorLowest}) {
            auto sorted = records;
            std::sort(sorted.begin(), sorted.end(), [&](const ErrorRecord& a, const ErrorRecord& b) {
                if (a.error != b.error) return strategy == Strategy::ErrorHighest ? a.error > b.error : a.error < b.error;
                return a.id < b.id;
            });
            const auto got = select_by_error(records, config(strategy, 60));
            for (std::size_t k = 0; k < 60; ++k) CHECK(got.ids[k] == sorted[k].id);
        }
    }
}

TEST_CASE("highest and lowest halves are complementary") {
    Rng rng(3);
    std::vector<ErrorRecord> records;
    for (SampleId id = 0; id < 100; ++id) records.push_back({id, rng.uniform()});
    const auto hi = select_by_error(records, config(Strategy::ErrorHighest, 50));
    const auto lo = select_by_error(records, config(Strategy::ErrorLowest, 50));
    std::set<SampleId> all(hi.ids.begin(), hi.ids.end());
    all.insert(lo.ids.begin(), lo.ids.end());
    CHECK(all.size() == 100);
}

TEST_CASE("similarity worked example") {
    MatrixXd previous(2, 2);
    previous << 0, 1, 0, 1;
    Pool pool;
    pool.ids = {0, 1, 2};
    pool.features.resize(2, 3);
    pool.features << 0.1, 5, 1, 0, 5, 1.2;
    pool.positions = MatrixXd::Zero(2, 3);
    const auto set = select_by_similarity(previous, pool, similarity_config(similarity::Metric(MetricKind::Chebyshev), 2));
    CHECK(set.ids == std::vector<SampleId>{0, 2});
    CHECK(set.scores[0] == doctest::Approx(0.1));
    CHECK(set.scores[1] == doctest::Approx(0.2));
}

TEST_CASE("pool inside the previous set scores zero") {
    Rng rng(9);
    const Pool pool = random_pool(20, 5, rng);
    const auto set = select_by_similarity(pool.features, pool, similarity_config(similarity::Metric(MetricKind::Euclidean), 6));
    CHECK(set.ids == std::vector<SampleId>(pool.ids.begin(), pool.ids.begin() + 6));
    for (double s : set.scores) CHECK(s == 0.0);
}

TEST_CASE("similarity selection equals the double-loop oracle for every metric") {
    Rng rng(500);
    const MatrixXd previous = random_pool(500, 12, rng).features;
    const Pool pool = random_pool(500, 12, rng, 7);
    for (auto kind : similarity::kAllMetricKinds) {
        const similarity::Metric m = kind == MetricKind::Minkowski ? similarity::Metric(kind, 3.0) : similarity::Metric(kind);
        const auto got = select_by_similarity(previous, pool, similarity_config(m, 50));
        CHECK_MESSAGE(got.ids == similarity_oracle(previous, pool, m, 50), m.name());
    }
}

TEST_CASE("similarity selection ignores input order") {
    Rng rng(77);
    const MatrixXd previous = random_pool(100, 6, rng).features;
    const Pool pool = random_pool(80, 6, rng);
    Pool reversed = pool;
    std::reverse(reversed.ids.begin(), reversed.ids.end());
    reversed.features = pool.features.rowwise().reverse();
    reversed.positions = pool.positions.rowwise().reverse();
    const MatrixXd prev_reversed = previous.rowwise().reverse();
    const auto cfg = similarity_config(similarity::Metric(MetricKind::Canberra), 15);
    CHECK(select_by_similarity(previous, pool, cfg).ids == select_by_similarity(prev_reversed, reversed, cfg).ids);
}

TEST_CASE("undefined vectors are excluded and counted") {
    MatrixXd previous(3, 2);
    previous << 1, 0, 2, 0, 3, 0;
    Pool pool;
    pool.ids = {0, 1, 2};
    pool.features.resize(3, 3);
    pool.features << 0, 1, 2, 0, 1, 1, 0, 1, 0;
    pool.positions = MatrixXd::Zero(2, 3);
    const auto set = select_by_similarity(previous, pool, similarity_config(similarity::Metric(MetricKind::Cosine), 2));
    CHECK(set.excluded == 2);
    CHECK(set.ids.size() == 2);
    CHECK_THROWS(select_by_similarity(previous, pool, similarity_config(similarity::Metric(MetricKind::Cosine), 3)));
}

TEST_CASE("zero count gives an empty set for every strategy") {
    Rng rng(2);
    const Pool pool = random_pool(10, 3, rng);
    CHECK(select_random(pool, config(Strategy::Random, 0)).ids.empty());
    CHECK(select_equally_distributed(pool, config(Strategy::EquallyDistributed, 0)).ids.empty());
    CHECK(select_by_error(compute_errors(pool.positions, pool), config(Strategy::ErrorLowest, 0)).ids.empty());
    CHECK(select_by_similarity(pool.features, pool, similarity_config(similarity::Metric(), 0)).ids.empty());
}

}  // TEST_SUITE
