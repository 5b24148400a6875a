#ifndef CIRDIL_NN_MLP_HPP
#define CIRDIL_NN_MLP_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cirdil/rng.hpp"

namespace cirdil::nn {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Raised when a forward pass produces a non-finite pre-activation.
class NumericalError : public std::runtime_error {
public:
    NumericalError(int layer, const std::string& what)
        : std::runtime_error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
    int layer() const { return layer_; }

private:
    int layer_;
};

/// Activations recorded by a forward pass: entry 0 is the input batch, entry
/// k the post-activation output of layer k. Samples are columns.
template <typename Scalar>
struct Tape {
    std::vector<MatrixX<Scalar>> activations;
};

/// Dense feed-forward network: rectifier on hidden layers, identity on the
/// output layer.
///
/// Parameters are laid out layer by layer; each layer contributes its weight
/// matrix (out x in, column-major) followed by its bias. That order defines
/// the flat parameter vector used by optimizers, penalties and checkpoints.
template <typename Scalar>
class Mlp {
public:
    using Matrix = MatrixX<Scalar>;
    using Vector = VectorX<Scalar>;
    using TapeType = Tape<Scalar>;

    Mlp() = default;

    /// Zero-initialized network with the given layer sizes [in, hidden..., out].
    explicit Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
        if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least an input and an output size");
        for (int s : sizes_) {
            if (s < 1) throw std::invalid_argument("Mlp layer sizes must be positive");
        }
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            weights_.push_back(Matrix::Zero(sizes_[l + 1], sizes_[l]));
            biases_.push_back(Vector::Zero(sizes_[l + 1]));
        }
    }

    /// Uniform Glorot initialization, biases zero.
    static Mlp glorot(std::vector<int> sizes, Rng& rng) {
        Mlp net(std::move(sizes));
        for (auto& w : net.weights_) {
            const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(rng.uniform(-limit, limit));
            }
        }
        return net;
    }

    const std::vector<int>& sizes() const { return sizes_; }
    int num_layers() const { return static_cast<int>(weights_.size()); }
    int input_size() const { return sizes_.front(); }
    int output_size() const { return sizes_.back(); }

    Matrix& weight(int layer) { return weights_[layer]; }
    const Matrix& weight(int layer) const { return weights_[layer]; }
    Vector& bias(int layer) { return biases_[layer]; }
    const Vector& bias(int layer) const { return biases_[layer]; }

    static Eigen::Index count_params(const std::vector<int>& sizes) {
        Eigen::Index total = 0;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) total += Eigen::Index(sizes[l] + 1) * sizes[l + 1];
        return total;
    }
    Eigen::Index num_params() const { return count_params(sizes_); }

    Vector flatten() const {
        Vector flat(num_params());
        Eigen::Index offset = 0;
        for (int l = 0; l < num_layers(); ++l) {
            const auto& w = weights_[l];
            flat.segment(offset, w.size()) = w.reshaped();
            offset += w.size();
            flat.segment(offset, biases_[l].size()) = biases_[l];
            offset += biases_[l].size();
        }
        return flat;
    }

    void unflatten(const Eigen::Ref<const Vector>& flat) {
        if (flat.size() != num_params()) throw std::invalid_argument("parameter vector length does not match architecture");
        Eigen::Index offset = 0;
        for (int l = 0; l < num_layers(); ++l) {
            auto& w = weights_[l];
            w.reshaped() = flat.segment(offset, w.size());
            offset += w.size();
            biases_[l] = flat.segment(offset, biases_[l].size());
            offset += biases_[l].size();
        }
    }

    /// Forward pass over a batch whose columns are samples.
    Matrix forward(const Eigen::Ref<const Matrix>& inputs, Tape<Scalar>* tape = nullptr) const {
        if (inputs.rows() != input_size()) {
            throw std::invalid_argument("input has " + std::to_string(inputs.rows()) + " features, expected " +
                                        std::to_string(input_size()));
        }
        if (tape) {
            tape->activations.clear();
            tape->activations.emplace_back(inputs);
        }
        Matrix current = inputs;
        for (int l = 0; l < num_layers(); ++l) {
            Matrix z = weights_[l] * current;
            z.colwise() += biases_[l];
            if (!z.allFinite()) throw NumericalError(l, "non-finite activation");
            if (l + 1 < num_layers()) z = z.cwiseMax(Scalar(0));
            if (tape) tape->activations.push_back(z);
            current = std::move(z);
        }
        return current;
    }

    /// Gradient of a scalar loss w.r.t. all parameters, given dLoss/dOutput
    /// for the batch recorded in `tape`.
    Vector backward(const Tape<Scalar>& tape, const Eigen::Ref<const Matrix>& output_grad) const {
        Vector grad(num_params());
        backward_into(tape, output_grad, grad);
        return grad;
    }

    /// backward() into a caller-owned buffer of length num_params().
    void backward_into(const Tape<Scalar>& tape, const Eigen::Ref<const Matrix>& output_grad, Eigen::Ref<Vector> grad) const {
        const auto& acts = tape.activations;
        if (static_cast<int>(acts.size()) != num_layers() + 1) throw std::invalid_argument("tape does not match network");
        if (grad.size() != num_params()) throw std::invalid_argument("gradient buffer has the wrong length");
        Matrix delta = output_grad;
        Eigen::Index end = num_params();
        for (int l = num_layers() - 1; l >= 0; --l) {
            const auto& w = weights_[l];
            end -= biases_[l].size();
            grad.segment(end, biases_[l].size()) = delta.rowwise().sum();
            end -= w.size();
            Eigen::Map<Matrix>(grad.data() + end, w.rows(), w.cols()).noalias() = delta * acts[l].transpose();
            if (l > 0) {
                Matrix upstream = w.transpose() * delta;
                delta = upstream.cwiseProduct((acts[l].array() > Scalar(0)).template cast<Scalar>().matrix());
            }
        }
    }

    template <typename Other>
    Mlp<Other> cast() const {
        Mlp<Other> out(sizes_);
        out.unflatten(flatten().template cast<Other>());
        return out;
    }

private:
    std::vector<int> sizes_;
    std::vector<Matrix> weights_;
    std::vector<Vector> biases_;
};

}  // namespace cirdil::nn

#endif  // CIRDIL_NN_MLP_HPP
