#ifndef CIRDIL_DIL_PROGRESSIVE_HPP
#define CIRDIL_DIL_PROGRESSIVE_HPP

#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cirdil/nn/mlp.hpp"

namespace cirdil::dil {

/// Progressive network: one column per task, all with the same layer sizes.
/// Hidden layer l >= 2 of column c also receives a linear adapter applied to
/// the stacked layer l-1 activations of columns 0..c-1. Only the newest
/// column and its adapters are trainable; the flat parameter vector of the
/// network is that column's parameters followed by its adapters.
template <typename Scalar>
class ProgressiveNet {
public:
    using Matrix = nn::MatrixX<Scalar>;
    using Vector = nn::VectorX<Scalar>;

    struct TapeType {
        std::vector<Matrix> activations;  // of the newest column, as in nn::Tape
        std::vector<Matrix> lateral;      // stacked activations of older columns, per weight layer
    };

    ProgressiveNet() = default;
    explicit ProgressiveNet(nn::Mlp<Scalar> first) {
        columns_.push_back(std::move(first));
        adapters_.emplace_back();
    }

    int num_columns() const { return static_cast<int>(columns_.size()); }
    const std::vector<int>& sizes() const { return columns_.front().sizes(); }
    const nn::Mlp<Scalar>& column(int c) const { return columns_[static_cast<std::size_t>(c)]; }
    const Matrix& adapter(int c, int layer) const { return adapters_[static_cast<std::size_t>(c)][static_cast<std::size_t>(layer)]; }

    static bool has_lateral(int layer, int num_layers) { return layer >= 1 && layer + 1 < num_layers; }

    /// Appends a column initialised from `init` with zero adapters; earlier
    /// columns become frozen.
    void add_column(nn::Mlp<Scalar> init) {
        if (columns_.empty()) throw std::logic_error("add_column needs an existing column");
        if (init.sizes() != sizes()) throw std::invalid_argument("new column must share the layer sizes");
        const int c = num_columns();
        const int layers = init.num_layers();
        std::vector<Matrix> adapters(static_cast<std::size_t>(layers));
        for (int l = 0; l < layers; ++l) {
            if (has_lateral(l, layers)) adapters[static_cast<std::size_t>(l)] = Matrix::Zero(sizes()[l + 1], Eigen::Index(c) * sizes()[l]);
        }
        columns_.push_back(std::move(init));
        adapters_.push_back(std::move(adapters));
    }

    /// Column count t gives t * P_column plus, for every column c, c times
    /// the adapter weights of each lateral layer.
    static Eigen::Index count_params(const std::vector<int>& sizes, int columns) {
        const int layers = static_cast<int>(sizes.size()) - 1;
        Eigen::Index lateral = 0;
        for (int l = 0; l < layers; ++l) {
            if (has_lateral(l, layers)) lateral += Eigen::Index(sizes[l + 1]) * sizes[l];
        }
        const Eigen::Index c = columns;
        return c * nn::Mlp<Scalar>::count_params(sizes) + lateral * c * (c - 1) / 2;
    }

    Eigen::Index total_params() const {
        Eigen::Index total = 0;
        for (int c = 0; c < num_columns(); ++c) total += column_params(c);
        return total;
    }

    Eigen::Index column_params(int c) const {
        Eigen::Index n = columns_[static_cast<std::size_t>(c)].num_params();
        for (const auto& a : adapters_[static_cast<std::size_t>(c)]) n += a.size();
        return n;
    }

    /// Trainable (newest column) parameter count.
    Eigen::Index num_params() const { return column_params(num_columns() - 1); }

    Vector flatten_column(int c) const {
        Vector flat(column_params(c));
        const auto& col = columns_[static_cast<std::size_t>(c)];
        flat.head(col.num_params()) = col.flatten();
        Eigen::Index offset = col.num_params();
        for (const auto& a : adapters_[static_cast<std::size_t>(c)]) {
            flat.segment(offset, a.size()) = a.reshaped();
            offset += a.size();
        }
        return flat;
    }

    Vector flatten() const { return flatten_column(num_columns() - 1); }

    void unflatten(const Eigen::Ref<const Vector>& flat) {
        const int c = num_columns() - 1;
        if (flat.size() != column_params(c)) throw std::invalid_argument("parameter vector length does not match column");
        auto& col = columns_[static_cast<std::size_t>(c)];
        col.unflatten(flat.head(col.num_params()));
        Eigen::Index offset = col.num_params();
        for (auto& a : adapters_[static_cast<std::size_t>(c)]) {
            a.reshaped() = flat.segment(offset, a.size());
            offset += a.size();
        }
    }

    /// Output of column `c` (older columns are evaluated as its lateral inputs).
    Matrix forward_column(int c, const Eigen::Ref<const Matrix>& inputs) const {
        std::vector<std::vector<Matrix>> acts;
        run_columns(c, inputs, acts);
        return acts.back().back();
    }

    /// Forward pass through the newest column.
    Matrix forward(const Eigen::Ref<const Matrix>& inputs, TapeType* tape = nullptr) const {
        const int c = num_columns() - 1;
        std::vector<std::vector<Matrix>> acts;
        run_columns(c, inputs, acts);
        if (tape) {
            const int layers = columns_.front().num_layers();
            tape->lateral.assign(static_cast<std::size_t>(layers), Matrix());
            for (int l = 0; l < layers; ++l) {
                if (c > 0 && has_lateral(l, layers)) tape->lateral[static_cast<std::size_t>(l)] = stack(acts, c, l);
            }
            tape->activations = acts.back();
        }
        return acts.back().back();
    }

    Vector backward(const TapeType& tape, const Eigen::Ref<const Matrix>& output_grad) const {
        Vector grad(num_params());
        backward_into(tape, output_grad, grad);
        return grad;
    }

    void backward_into(const TapeType& tape, const Eigen::Ref<const Matrix>& output_grad, Eigen::Ref<Vector> grad) const {
        const int c = num_columns() - 1;
        const auto& col = columns_[static_cast<std::size_t>(c)];
        const auto& acts = tape.activations;
        const int layers = col.num_layers();
        if (grad.size() != num_params()) throw std::invalid_argument("gradient buffer has the wrong length");
        // Adapter block offsets follow the column's own parameters.
        std::vector<Eigen::Index> adapter_offset(static_cast<std::size_t>(layers), 0);
        Eigen::Index offset = col.num_params();
        for (int l = 0; l < layers; ++l) {
            adapter_offset[static_cast<std::size_t>(l)] = offset;
            offset += adapters_[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)].size();
        }
        Matrix delta = output_grad;
        Eigen::Index end = col.num_params();
        for (int l = layers - 1; l >= 0; --l) {
            const Eigen::Index nb = col.bias(l).size();
            const Eigen::Index nw = col.weight(l).size();
            end -= nb;
            grad.segment(end, nb) = delta.rowwise().sum();
            end -= nw;
            Eigen::Map<Matrix>(grad.data() + end, col.weight(l).rows(), col.weight(l).cols()).noalias() =
                delta * acts[static_cast<std::size_t>(l)].transpose();
            const auto& a = adapters_[static_cast<std::size_t>(c)][static_cast<std::size_t>(l)];
            if (a.size() > 0) {
                Eigen::Map<Matrix>(grad.data() + adapter_offset[static_cast<std::size_t>(l)], a.rows(), a.cols()).noalias() =
                    delta * tape.lateral[static_cast<std::size_t>(l)].transpose();
            }
            if (l > 0) {
                Matrix upstream = col.weight(l).transpose() * delta;
                delta = upstream.cwiseProduct(
                    (acts[static_cast<std::size_t>(l)].array() > Scalar(0)).template cast<Scalar>().matrix());
            }
        }
    }

private:
    // acts[j][k]: activation k (0 = input) of column j, for j = 0..c.
    void run_columns(int c, const Eigen::Ref<const Matrix>& inputs, std::vector<std::vector<Matrix>>& acts) const {
        if (c < 0 || c >= num_columns()) throw std::out_of_range("no such column");
        if (inputs.rows() != sizes().front()) throw std::invalid_argument("input length does not match network");
        acts.assign(static_cast<std::size_t>(c) + 1, {});
        for (int j = 0; j <= c; ++j) {
            const auto& col = columns_[static_cast<std::size_t>(j)];
            const int layers = col.num_layers();
            auto& mine = acts[static_cast<std::size_t>(j)];
            mine.push_back(inputs);
            for (int l = 0; l < layers; ++l) {
                Matrix z = col.weight(l) * mine.back();
                z.colwise() += col.bias(l);
                if (j > 0 && has_lateral(l, layers)) {
                    z.noalias() += adapters_[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)] * stack(acts, j, l);
                }
                if (!z.allFinite()) throw nn::NumericalError(l, "non-finite activation in column " + std::to_string(j));
                if (l + 1 < layers) z = z.cwiseMax(Scalar(0));
                mine.push_back(std::move(z));
            }
        }
    }

    // Inputs of layer `l` for columns 0..c-1, stacked vertically.
    static Matrix stack(const std::vector<std::vector<Matrix>>& acts, int c, int l) {
        const auto& first = acts[0][static_cast<std::size_t>(l)];
        Matrix out(first.rows() * c, first.cols());
        for (int j = 0; j < c; ++j) out.middleRows(first.rows() * j, first.rows()) = acts[static_cast<std::size_t>(j)][static_cast<std::size_t>(l)];
        return out;
    }

    std::vector<nn::Mlp<Scalar>> columns_;
    std::vector<std::vector<Matrix>> adapters_;  // adapters_[c][l], empty where no lateral input
};

}  // namespace cirdil::dil

#endif  // CIRDIL_DIL_PROGRESSIVE_HPP
