#ifndef CIRDIL_NN_ADAM_HPP
#define CIRDIL_NN_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "cirdil/nn/mlp.hpp"

namespace cirdil::nn {

/// Adam with bias correction and a multi-step learning-rate schedule.
template <typename Scalar>
struct AdamState {
    Scalar base_learning_rate = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar epsilon = Scalar(1e-8);
    std::vector<int> milestones;  // epochs at which the rate is multiplied by decay
    Scalar decay = Scalar(0.1);

    std::int64_t step = 0;
    int epoch = 0;
    Scalar learning_rate = Scalar(1e-3);
    VectorX<Scalar> first_moment;
    VectorX<Scalar> second_moment;

    AdamState() = default;
    AdamState(Eigen::Index num_params, Scalar lr, std::vector<int> decay_milestones = {}, Scalar decay_factor = Scalar(0.1))
        : base_learning_rate(lr),
          milestones(std::move(decay_milestones)),
          decay(decay_factor),
          learning_rate(lr),
          first_moment(VectorX<Scalar>::Zero(num_params)),
          second_moment(VectorX<Scalar>::Zero(num_params)) {}
};

/// Moves the schedule to `epoch` (0-based): the rate is the base rate times
/// decay^(number of milestones <= epoch).
template <typename Scalar>
void set_epoch(AdamState<Scalar>& state, int epoch) {
    state.epoch = epoch;
    Scalar lr = state.base_learning_rate;
    for (int m : state.milestones) {
        if (epoch >= m) lr *= state.decay;
    }
    state.learning_rate = lr;
}

/// One Adam update of `params` in place. A non-finite gradient leaves both
/// the parameters and the state untouched and throws.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::type_identity_t<Eigen::Ref<VectorX<Scalar>>> params,
               const std::type_identity_t<Eigen::Ref<const VectorX<Scalar>>>& grad) {
    if (params.size() != grad.size() || params.size() != state.first_moment.size()) {
        throw std::invalid_argument("adam_step: parameter, gradient and state lengths differ");
    }
    if (!grad.allFinite()) throw std::domain_error("adam_step: non-finite gradient");
    ++state.step;
    state.first_moment = state.beta1 * state.first_moment + (Scalar(1) - state.beta1) * grad;
    state.second_moment = state.beta2 * state.second_moment + (Scalar(1) - state.beta2) * grad.cwiseAbs2();
    const Scalar t = static_cast<Scalar>(state.step);
    const Scalar correction1 = Scalar(1) - std::pow(state.beta1, t);
    const Scalar correction2 = Scalar(1) - std::pow(state.beta2, t);
    const Scalar step_size = state.learning_rate / correction1;
    params.array() -= step_size * state.first_moment.array() /
                      ((state.second_moment.array() / correction2).sqrt() + state.epsilon);
}

}  // namespace cirdil::nn

#endif  // CIRDIL_NN_ADAM_HPP
