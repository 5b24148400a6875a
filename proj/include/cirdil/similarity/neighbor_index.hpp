#ifndef CIRDIL_SIMILARITY_NEIGHBOR_INDEX_HPP
#define CIRDIL_SIMILARITY_NEIGHBOR_INDEX_HPP

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cirdil/similarity/metric.hpp"

namespace cirdil::similarity {

template <typename Scalar>
struct Neighbor {
    std::size_t id = 0;
    Scalar distance = std::numeric_limits<Scalar>::infinity();
};

struct QueryStats {
    std::size_t leaf_visits = 0;
    std::size_t distance_evaluations = 0;
};

/// Exact 1-nearest-neighbor index over the columns of a reference matrix.
///
/// Minkowski-family metrics get a kd-tree (median split on the dimension of
/// widest spread, bounding-box pruning); every other metric falls back to an
/// exhaustive scan behind the same interface. Ties resolve to the smallest id.
template <typename Scalar>
class NeighborIndex {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    /// `ids[j]` labels column j; defaults to 0..k-1.
    NeighborIndex(Matrix refs, Metric metric, std::vector<std::size_t> ids = {}, std::size_t leaf_size = 8)
        : refs_(std::move(refs)), metric_(metric), ids_(std::move(ids)), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
        if (refs_.cols() == 0 || refs_.rows() == 0) throw std::invalid_argument("NeighborIndex needs at least one reference");
        if (ids_.empty()) {
            ids_.resize(static_cast<std::size_t>(refs_.cols()));
            std::iota(ids_.begin(), ids_.end(), std::size_t{0});
        }
        if (ids_.size() != static_cast<std::size_t>(refs_.cols())) throw std::invalid_argument("one id per reference required");
        if (metric_.kdtree_compatible()) build_tree();
    }

    bool uses_tree() const { return !nodes_.empty(); }
    std::size_t size() const { return ids_.size(); }
    Eigen::Index dim() const { return refs_.rows(); }
    std::size_t num_leaves() const { return leaves_; }
    const Metric& metric() const { return metric_; }

    /// Throws UndefinedDistance when the metric is undefined for `q` against
    /// some reference.
    template <typename Derived>
    Neighbor<Scalar> nearest(const Eigen::MatrixBase<Derived>& q, QueryStats* stats = nullptr) const {
        if (q.size() != dim()) throw std::invalid_argument("query length does not match index dimension");
        Neighbor<Scalar> best;
        best.id = std::numeric_limits<std::size_t>::max();
        if (uses_tree()) {
            const Vector query = q;
            search(0, query, best, stats);
        } else {
            if (stats) ++stats->leaf_visits;
            for (Eigen::Index j = 0; j < refs_.cols(); ++j) consider(j, q, best, stats);
        }
        return best;
    }

private:
    struct Node {
        Vector lo;
        Vector hi;
        std::size_t begin = 0;  // range into order_
        std::size_t end = 0;
        int left = -1;
        int right = -1;
        Eigen::Index split_dim = 0;
        Scalar split_value = 0;
    };

    template <typename Derived>
    void consider(Eigen::Index column, const Eigen::MatrixBase<Derived>& q, Neighbor<Scalar>& best,
                  QueryStats* stats) const {
        const Scalar d = distance(metric_, refs_.col(column), q);
        if (stats) ++stats->distance_evaluations;
        const std::size_t id = ids_[static_cast<std::size_t>(column)];
        if (d < best.distance || (d == best.distance && id < best.id)) best = {id, d};
    }

    void build_tree() {
        order_.resize(static_cast<std::size_t>(refs_.cols()));
        std::iota(order_.begin(), order_.end(), Eigen::Index{0});
        nodes_.reserve(2 * order_.size() / leaf_size_ + 1);
        build_node(0, order_.size());
        // Store references in leaf order so a leaf scan reads contiguous memory.
        Matrix sorted(refs_.rows(), refs_.cols());
        std::vector<std::size_t> sorted_ids(ids_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) {
            sorted.col(static_cast<Eigen::Index>(i)) = refs_.col(order_[i]);
            sorted_ids[i] = ids_[static_cast<std::size_t>(order_[i])];
        }
        refs_ = std::move(sorted);
        ids_ = std::move(sorted_ids);
        order_.clear();
    }

    int build_node(std::size_t begin, std::size_t end) {
        const int index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        Vector lo = refs_.col(order_[begin]);
        Vector hi = lo;
        for (std::size_t i = begin + 1; i < end; ++i) {
            lo = lo.cwiseMin(refs_.col(order_[i]));
            hi = hi.cwiseMax(refs_.col(order_[i]));
        }
        Eigen::Index split_dim = 0;
        const Scalar spread = (hi - lo).maxCoeff(&split_dim);
        nodes_[index].lo = std::move(lo);
        nodes_[index].hi = std::move(hi);
        nodes_[index].begin = begin;
        nodes_[index].end = end;
        if (end - begin <= leaf_size_ || !(spread > Scalar(0))) {
            ++leaves_;
            return index;
        }
        const std::size_t mid = begin + (end - begin) / 2;
        auto first = order_.begin() + static_cast<std::ptrdiff_t>(begin);
        std::nth_element(first, order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end), [&](Eigen::Index a, Eigen::Index b) {
                             const Scalar va = refs_(split_dim, a);
                             const Scalar vb = refs_(split_dim, b);
                             return va < vb || (va == vb && a < b);
                         });
        nodes_[index].split_dim = split_dim;
        nodes_[index].split_value = refs_(split_dim, order_[mid]);
        const int left = build_node(begin, mid);
        const int right = build_node(mid, end);
        nodes_[index].left = left;
        nodes_[index].right = right;
        return index;
    }

    void search(int index, const Vector& q, Neighbor<Scalar>& best, QueryStats* stats) const {
        const Node& node = nodes_[static_cast<std::size_t>(index)];
        if (node.left < 0) {
            if (stats) ++stats->leaf_visits;
            for (std::size_t i = node.begin; i < node.end; ++i) consider(static_cast<Eigen::Index>(i), q, best, stats);
            return;
        }
        const bool go_left = q(node.split_dim) < node.split_value;
        const int first = go_left ? node.left : node.right;
        const int second = go_left ? node.right : node.left;
        visit_if_close(first, q, best, stats);
        visit_if_close(second, q, best, stats);
    }

    void visit_if_close(int index, const Vector& q, Neighbor<Scalar>& best, QueryStats* stats) const {
        const Node& node = nodes_[static_cast<std::size_t>(index)];
        // Equal bounds are still visited: a tied point there may carry a smaller id.
        if (box_distance(metric_, q, node.lo, node.hi) <= best.distance) search(index, q, best, stats);
    }

    Matrix refs_;
    Metric metric_;
    std::vector<std::size_t> ids_;
    std::size_t leaf_size_;
    std::vector<Eigen::Index> order_;
    std::vector<Node> nodes_;
    std::size_t leaves_ = 0;
};

}  // namespace cirdil::similarity

#endif  // CIRDIL_SIMILARITY_NEIGHBOR_INDEX_HPP
