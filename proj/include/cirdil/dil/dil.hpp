#ifndef CIRDIL_DIL_DIL_HPP
#define CIRDIL_DIL_DIL_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cirdil/channel/task.hpp"
#include "cirdil/dil/progressive.hpp"
#include "cirdil/nn/loss.hpp"
#include "cirdil/nn/mlp.hpp"
#include "cirdil/types.hpp"

namespace cirdil::dil {

enum class Method { Finetune, Ewc, Lwf, Si, Pnn };

std::string to_string(Method method);
Method parse_method(const std::string& text);

struct DilConfig {
    Method method = Method::Finetune;
    double lambda = 0.0;
    bool weight_averaging = false;
    int epochs_initial = 50;
    int epochs_adapt = 5;
    int batch = 16;
    double learning_rate = 1e-3;
    std::vector<int> milestones = {30, 40};  // initial training only
    double decay = 0.1;
    std::vector<int> hidden = {256, 128, 64};
    double si_damping = 0.1;

    void validate() const;
    /// EWC 1e5, LwF 10, SI 5, otherwise 0.
    static double default_lambda(Method method);
    std::vector<int> layer_sizes(int input) const;
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Quadratic anchor penalty lambda * sum_i w_i (theta_i - anchor_i)^2, shared
// by EWC (w = Fisher diagonal) and SI (w = path importance).
double quadratic_penalty(const Eigen::VectorXd& params, const Eigen::VectorXd& anchor, const Eigen::VectorXd& weights,
                         double lambda);
Eigen::VectorXd quadratic_penalty_gradient(const Eigen::VectorXd& params, const Eigen::VectorXd& anchor,
                                           const Eigen::VectorXd& weights, double lambda);

inline double penalty_ewc(const Eigen::VectorXd& params, const Eigen::VectorXd& anchor, const Eigen::VectorXd& fisher,
                          double lambda) {
    return quadratic_penalty(params, anchor, fisher, lambda);
}

/// lambda * MSE(teacher outputs, student outputs).
inline double penalty_lwf(const Eigen::MatrixXd& student, const Eigen::MatrixXd& teacher, double lambda) {
    return lambda * nn::mse_loss(student, teacher);
}

/// Diagonal Fisher estimate: mean over samples of the squared per-sample MSE gradient.
template <typename Net>
Eigen::VectorXd estimate_fisher(const Net& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    if (inputs.cols() == 0) throw std::invalid_argument("estimate_fisher needs at least one sample");
    Eigen::VectorXd fisher = Eigen::VectorXd::Zero(net.num_params());
    Eigen::VectorXd grad(net.num_params());
    typename Net::TapeType tape;
    for (Eigen::Index i = 0; i < inputs.cols(); ++i) {
        const Eigen::MatrixXd pred = net.forward(inputs.col(i), &tape);
        net.backward_into(tape, nn::mse_gradient(pred, targets.col(i)), grad);
        fisher += grad.cwiseAbs2();
    }
    return fisher / static_cast<double>(inputs.cols());
}

/// Path integral step: path += (-grad) * delta.
void si_accumulate(Eigen::VectorXd& path, const Eigen::VectorXd& grad, const Eigen::VectorXd& delta);
/// Task-end update: importance += max(path, 0) / (task_delta^2 + damping); path is reset.
void si_consolidate(Eigen::VectorXd& importance, Eigen::VectorXd& path, const Eigen::VectorXd& task_delta,
                    double damping);

/// Result of plain MSE training on the first task. The SI path integral is
/// always tracked so one fit can seed every method.
struct InitialFit {
    nn::Mlp<double> model;
    Eigen::VectorXd start;    // parameters before training
    Eigen::VectorXd si_path;  // accumulated -grad * delta
    std::uint64_t seed = 0;
};

InitialFit fit_initial(const channel::FeatureTable& table, const std::vector<SampleId>& train, const DilConfig& cfg,
                       std::uint64_t seed);

/// Adaptation stream: modified-region samples of the new task plus exemplars,
/// reshuffled every epoch.
struct AdaptBatchPlan {
    std::vector<SampleId> modified;
    std::vector<SampleId> exemplars;

    std::vector<SampleId> stream() const {
        std::vector<SampleId> all = modified;
        all.insert(all.end(), exemplars.begin(), exemplars.end());
        return all;
    }
};

/// Per-method state carried between tasks.
struct DilState {
    Method method = Method::Finetune;
    std::vector<Eigen::VectorXd> checkpoints;  // one per completed task
    Eigen::VectorXd anchor;                    // EWC / SI
    Eigen::VectorXd fisher;                    // EWC, summed over tasks
    Eigen::VectorXd importance;                // SI
    Eigen::VectorXd path;                      // SI, current task
    std::optional<nn::Mlp<double>> teacher;    // LwF
};

/// A regressor moving through a task sequence under one DIL method.
class Learner {
public:
    /// Runs the post-task bookkeeping of the first task on top of `fit`.
    Learner(InitialFit fit, const channel::FeatureTable& table, const std::vector<SampleId>& train, DilConfig cfg);

    const DilConfig& config() const { return cfg_; }
    const DilState& state() const { return state_; }
    const nn::Mlp<double>& model() const { return model_; }
    const ProgressiveNet<double>& progressive() const { return pnn_; }
    int tasks_completed() const { return static_cast<int>(state_.checkpoints.size()); }

    /// Current trainable parameters (for PNN: the newest column and its adapters).
    Eigen::VectorXd parameters() const;

    /// Predictions for domain `domain` (0-based task index). Only PNN looks at
    /// the domain: it answers with that task's column, or the newest one.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& inputs, int domain) const;

    /// Model scoring the next task before adaptation (errors for exemplar selection).
    Eigen::MatrixXd predict_latest(const Eigen::MatrixXd& inputs) const;

    /// Trains on the plan for epochs_adapt epochs, optionally averages the
    /// stored checkpoints in, then updates the method state.
    void adapt(const channel::FeatureTable& table, const AdaptBatchPlan& plan, std::uint64_t shuffle_seed);

private:
    void finish_task(const channel::FeatureTable& table, const std::vector<SampleId>& stream,
                     const Eigen::VectorXd& task_start);

    DilConfig cfg_;
    nn::Mlp<double> model_;
    ProgressiveNet<double> pnn_;
    DilState state_;
};

inline Learner train_initial(const channel::FeatureTable& table, const std::vector<SampleId>& train, const DilConfig& cfg,
                             std::uint64_t seed) {
    return Learner(fit_initial(table, train, cfg, seed), table, train, cfg);
}

/// Mean Euclidean distance between predicted and true positions (2 x n).
double mean_absolute_error(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth);

double evaluate(const Learner& learner, const channel::FeatureTable& table, const std::vector<SampleId>& test,
                int domain);

/// Columns of `m` selected by sample ids.
Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<SampleId>& ids);

}  // namespace cirdil::dil

#endif  // CIRDIL_DIL_DIL_HPP
