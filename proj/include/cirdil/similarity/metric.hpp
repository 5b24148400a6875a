#ifndef CIRDIL_SIMILARITY_METRIC_HPP
#define CIRDIL_SIMILARITY_METRIC_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cirdil::similarity {

enum class MetricKind { Euclidean, Manhattan, Chebyshev, Minkowski, Cosine, Canberra, BrayCurtis, Correlation };

inline constexpr std::array<MetricKind, 8> kAllMetricKinds = {
    MetricKind::Euclidean, MetricKind::Manhattan,  MetricKind::Chebyshev,  MetricKind::Minkowski,
    MetricKind::Cosine,    MetricKind::Canberra,   MetricKind::BrayCurtis, MetricKind::Correlation};

/// Thrown when a distance is mathematically undefined for the given inputs
/// (zero vector under cosine, constant vector under correlation, zero
/// denominator under Bray-Curtis).
class UndefinedDistance : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct Metric {
    MetricKind kind = MetricKind::Euclidean;
    double p = 2.0;  // Minkowski order, >= 1

    Metric() = default;
    Metric(MetricKind k, double order = 2.0) : kind(k), p(k == MetricKind::Minkowski ? order : 2.0) {
        if (kind == MetricKind::Minkowski && !(p >= 1.0)) throw std::invalid_argument("Minkowski order must be >= 1");
    }

    /// Metrics whose distance is a norm of the coordinate differences, so a
    /// bounding-box gap gives a valid lower bound.
    bool kdtree_compatible() const {
        return kind == MetricKind::Euclidean || kind == MetricKind::Manhattan || kind == MetricKind::Chebyshev ||
               kind == MetricKind::Minkowski;
    }

    std::string name() const {
        switch (kind) {
            case MetricKind::Euclidean: return "euclidean";
            case MetricKind::Manhattan: return "manhattan";
            case MetricKind::Chebyshev: return "chebyshev";
            case MetricKind::Minkowski: {
                std::string order = std::to_string(p);
                order.erase(order.find_last_not_of('0') + 1);
                if (order.back() == '.') order.pop_back();
                return "minkowski" + order;
            }
            case MetricKind::Cosine: return "cosine";
            case MetricKind::Canberra: return "canberra";
            case MetricKind::BrayCurtis: return "braycurtis";
            case MetricKind::Correlation: return "correlation";
        }
        return "euclidean";
    }

    /// Accepts the names produced by name(); "minkowski" alone means order 3.
    static Metric parse(std::string_view text) {
        const std::string s(text);
        if (s == "euclidean") return Metric(MetricKind::Euclidean);
        if (s == "manhattan" || s == "cityblock") return Metric(MetricKind::Manhattan);
        if (s == "chebyshev") return Metric(MetricKind::Chebyshev);
        if (s == "cosine") return Metric(MetricKind::Cosine);
        if (s == "canberra") return Metric(MetricKind::Canberra);
        if (s == "braycurtis") return Metric(MetricKind::BrayCurtis);
        if (s == "correlation") return Metric(MetricKind::Correlation);
        if (s.rfind("minkowski", 0) == 0) {
            const std::string order = s.substr(9);
            if (order.empty()) return Metric(MetricKind::Minkowski, 3.0);
            std::size_t used = 0;
            double p = 0.0;
            try {
                p = std::stod(order, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != order.size()) throw std::invalid_argument("bad Minkowski order in '" + s + "'");
            return Metric(MetricKind::Minkowski, p);
        }
        throw std::invalid_argument("unknown metric '" + s + "'");
    }

    friend bool operator==(const Metric& a, const Metric& b) { return a.kind == b.kind && a.p == b.p; }
};

namespace detail {

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                                          const char* what) {
    using Scalar = typename DerivedA::Scalar;
    const Scalar aa = a.squaredNorm();
    const Scalar bb = b.squaredNorm();
    if (aa == Scalar(0) || bb == Scalar(0)) throw UndefinedDistance(what);
    // sqrt(aa * bb) reproduces aa exactly when a == b, so d(a, a) == 0.
    const Scalar d = Scalar(1) - a.dot(b) / std::sqrt(aa * bb);
    return std::max(d, Scalar(0));
}

/// Sum of term(absdiff(i)) over four interleaved accumulators in a fixed
/// order. Rounding is monotone, so the result never decreases when any
/// difference grows.
template <typename Scalar, typename Term, typename AbsDiff>
Scalar interleaved_sum(Eigen::Index n, Term&& term, AbsDiff&& absdiff) {
    Scalar acc[4] = {0, 0, 0, 0};
    Eigen::Index i = 0;
    for (; i + 4 <= n; i += 4) {
        acc[0] += term(absdiff(i));
        acc[1] += term(absdiff(i + 1));
        acc[2] += term(absdiff(i + 2));
        acc[3] += term(absdiff(i + 3));
    }
    for (; i < n; ++i) acc[i % 4] += term(absdiff(i));
    return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

/// Combines per-coordinate absolute differences for the Minkowski family.
/// The kd-tree bound and the exact distance both go through here.
template <typename Scalar, typename AbsDiff>
Scalar minkowski_reduce(const Metric& metric, Eigen::Index n, AbsDiff&& absdiff) {
    switch (metric.kind) {
        case MetricKind::Chebyshev: {
            Scalar best = 0;
            for (Eigen::Index i = 0; i < n; ++i) best = std::max(best, absdiff(i));
            return best;
        }
        case MetricKind::Manhattan:
            return interleaved_sum<Scalar>(n, [](Scalar d) { return d; }, absdiff);
        case MetricKind::Euclidean:
            return std::sqrt(interleaved_sum<Scalar>(n, [](Scalar d) { return d * d; }, absdiff));
        default: {
            const Scalar p = static_cast<Scalar>(metric.p);
            const Scalar total = interleaved_sum<Scalar>(n, [p](Scalar d) { return std::pow(d, p); }, absdiff);
            return std::pow(total, Scalar(1) / p);
        }
    }
}

}  // namespace detail

/// Distance between two equal-length vectors.
///
/// Canberra terms with |a_i| + |b_i| == 0 contribute 0. Correlation is the
/// cosine distance of the mean-centred vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar distance(const Metric& metric, const Eigen::MatrixBase<DerivedA>& a,
                                   const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    if (a.size() != b.size()) throw std::invalid_argument("distance: vector lengths differ");
    if (a.size() == 0) throw std::invalid_argument("distance: empty vectors");
    switch (metric.kind) {
        case MetricKind::Euclidean:
        case MetricKind::Manhattan:
        case MetricKind::Chebyshev:
        case MetricKind::Minkowski:
            return detail::minkowski_reduce<Scalar>(metric, a.size(),
                                                    [&](Eigen::Index i) { return std::abs(a(i) - b(i)); });
        case MetricKind::Cosine:
            return detail::cosine_distance(a, b, "cosine distance undefined for a zero vector");
        case MetricKind::Canberra: {
            Scalar total = 0;
            for (Eigen::Index i = 0; i < a.size(); ++i) {
                const Scalar denom = std::abs(a(i)) + std::abs(b(i));
                if (denom > Scalar(0)) total += std::abs(a(i) - b(i)) / denom;
            }
            return total;
        }
        case MetricKind::BrayCurtis: {
            const Scalar denom = (a + b).cwiseAbs().sum();
            if (denom == Scalar(0)) throw UndefinedDistance("Bray-Curtis distance undefined: sum |a + b| is zero");
            return (a - b).cwiseAbs().sum() / denom;
        }
        case MetricKind::Correlation: {
            const auto ca = (a.array() - a.mean()).matrix().eval();
            const auto cb = (b.array() - b.mean()).matrix().eval();
            return detail::cosine_distance(ca, cb, "correlation distance undefined for a constant vector");
        }
    }
    throw std::invalid_argument("unknown metric");
}

/// Smallest possible distance from `q` to any point of the box [lo, hi];
/// only defined for kdtree_compatible() metrics. Each per-coordinate gap is
/// <= the corresponding |q_i - x_i| for every x in the box (rounding is
/// monotone), so the bound never exceeds distance(metric, q, x) in floating
/// point either.
template <typename DerivedQ, typename DerivedL, typename DerivedH>
typename DerivedQ::Scalar box_distance(const Metric& metric, const Eigen::MatrixBase<DerivedQ>& q,
                                       const Eigen::MatrixBase<DerivedL>& lo, const Eigen::MatrixBase<DerivedH>& hi) {
    using Scalar = typename DerivedQ::Scalar;
    if (!metric.kdtree_compatible()) {
        throw std::invalid_argument("box_distance: metric '" + metric.name() + "' has no box bound");
    }
    // At most one of the two gaps is positive, so the sum is exact.
    return detail::minkowski_reduce<Scalar>(metric, q.size(), [&](Eigen::Index i) {
        return std::max(lo(i) - q(i), Scalar(0)) + std::max(q(i) - hi(i), Scalar(0));
    });
}

}  // namespace cirdil::similarity

#endif  // CIRDIL_SIMILARITY_METRIC_HPP
