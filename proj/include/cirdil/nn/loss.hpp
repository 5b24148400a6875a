#ifndef CIRDIL_NN_LOSS_HPP
#define CIRDIL_NN_LOSS_HPP

#include <stdexcept>
#include <type_traits>

#include <Eigen/Dense>

#include "cirdil/nn/mlp.hpp"

namespace cirdil::nn {

// Mean squared error, averaged over samples (columns) and output components
// (rows). For 2D positions this equals half the mean squared Euclidean error.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar mse_loss(const Eigen::MatrixBase<DerivedA>& pred, const Eigen::MatrixBase<DerivedB>& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("mse_loss: prediction and target shapes differ");
    }
    if (pred.cols() == 0) throw std::invalid_argument("mse_loss: empty batch");
    return (pred - target).squaredNorm() / static_cast<typename DerivedA::Scalar>(pred.size());
}

/// dLoss/dPred of mse_loss.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> mse_gradient(const Eigen::MatrixBase<DerivedA>& pred,
                                                const Eigen::MatrixBase<DerivedB>& target) {
    using Scalar = typename DerivedA::Scalar;
    return (pred - target) * (Scalar(2) / static_cast<Scalar>(pred.size()));
}

template <typename Scalar>
struct LossAndGradient {
    Scalar loss;
    VectorX<Scalar> gradient;
};

template <typename Scalar>
LossAndGradient<Scalar> mse_loss_and_gradient(const Mlp<Scalar>& net,
                                               const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>>& inputs,
                                               const std::type_identity_t<Eigen::Ref<const MatrixX<Scalar>>>& targets) {
    Tape<Scalar> tape;
    const MatrixX<Scalar> pred = net.forward(inputs, &tape);
    const Scalar loss = mse_loss(pred, targets);
    return {loss, net.backward(tape, mse_gradient(pred, targets))};
}

}  // namespace cirdil::nn

#endif  // CIRDIL_NN_LOSS_HPP
