#include "cirdil/dil/dil.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>

#include "cirdil/nn/adam.hpp"
#include "cirdil/rng.hpp"

namespace cirdil::dil {

std::string to_string(Method method) {
    switch (method) {
        case Method::Finetune: return "finetune";
        case Method::Ewc: return "ewc";
        case Method::Lwf: return "lwf";
        case Method::Si: return "si";
        case Method::Pnn: return "pnn";
    }
    return "finetune";
}

Method parse_method(const std::string& text) {
    if (text == "finetune" || text == "ft") return Method::Finetune;
    if (text == "ewc") return Method::Ewc;
    if (text == "lwf") return Method::Lwf;
    if (text == "si") return Method::Si;
    if (text == "pnn") return Method::Pnn;
    throw std::invalid_argument("unknown DIL method '" + text + "'");
}

void DilConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (epochs_initial < 1 || epochs_adapt < 1) throw std::invalid_argument("epoch counts must be >= 1");
    if (batch < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(si_damping > 0.0)) throw std::invalid_argument("SI damping must be positive");
    for (int h : hidden) {
        if (h < 1) throw std::invalid_argument("hidden sizes must be positive");
    }
}

double DilConfig::default_lambda(Method method) {
    switch (method) {
        case Method::Ewc: return 1e5;
        case Method::Lwf: return 10.0;
        case Method::Si: return 5.0;
        default: return 0.0;
    }
}

std::vector<int> DilConfig::layer_sizes(int input) const {
    std::vector<int> sizes{input};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(2);
    return sizes;
}

double quadratic_penalty(const Eigen::VectorXd& params, const Eigen::VectorXd& anchor, const Eigen::VectorXd& weights,
                         double lambda) {
    if (params.size() != anchor.size() || params.size() != weights.size()) {
        throw std::invalid_argument("penalty: parameter, anchor and weight lengths differ");
    }
    return lambda * (weights.array() * (params - anchor).array().square()).sum();
}

Eigen::VectorXd quadratic_penalty_gradient(const Eigen::VectorXd& params, const Eigen::VectorXd& anchor,
                                           const Eigen::VectorXd& weights, double lambda) {
    return (2.0 * lambda) * weights.cwiseProduct(params - anchor);
}

void si_accumulate(Eigen::VectorXd& path, const Eigen::VectorXd& grad, const Eigen::VectorXd& delta) {
    path -= grad.cwiseProduct(delta);
}

void si_consolidate(Eigen::VectorXd& importance, Eigen::VectorXd& path, const Eigen::VectorXd& task_delta,
                    double damping) {
    importance.array() += path.array().max(0.0) / (task_delta.array().square() + damping);
    path.setZero();
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<SampleId>& ids) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t i = 0; i < ids.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(ids[i]));
    return out;
}

double mean_absolute_error(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& truth) {
    if (predicted.rows() != 2 || predicted.cols() != truth.cols() || truth.rows() != 2) {
        throw std::invalid_argument("mean_absolute_error: expected matching 2 x n matrices");
    }
    if (predicted.cols() == 0) throw std::invalid_argument("mean_absolute_error: empty test set");
    return (predicted - truth).colwise().norm().mean();
}

namespace {

struct StepHooks {
    const nn::Mlp<double>* teacher = nullptr;
    double distill_lambda = 0.0;
    const Eigen::VectorXd* anchor = nullptr;
    const Eigen::VectorXd* weights = nullptr;
    double anchor_lambda = 0.0;
    Eigen::VectorXd* si_path = nullptr;
};

template <typename Net>
void train_epochs(Net& net, const channel::FeatureTable& table, std::vector<SampleId> stream, int epochs, int batch,
                  nn::AdamState<double>& opt, Rng& rng, const StepHooks& hooks) {
    if (stream.empty()) return;
    typename Net::TapeType tape;
    Eigen::VectorXd params = net.flatten();
    Eigen::VectorXd grad(params.size());
    Eigen::VectorXd data_grad;
    Eigen::VectorXd before;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        nn::set_epoch(opt, epoch);
        rng.shuffle(std::span<SampleId>(stream));
        for (std::size_t start = 0; start < stream.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t stop = std::min(stream.size(), start + static_cast<std::size_t>(batch));
            const std::vector<SampleId> ids(stream.begin() + static_cast<std::ptrdiff_t>(start),
                                            stream.begin() + static_cast<std::ptrdiff_t>(stop));
            const Eigen::MatrixXd x = gather(table.features, ids);
            const Eigen::MatrixXd y = gather(table.positions, ids);
            const Eigen::MatrixXd pred = net.forward(x, &tape);
            const double loss = nn::mse_loss(pred, y);
            if (!std::isfinite(loss)) {
                std::ostringstream msg;
                msg << "training diverged: loss " << loss << " at epoch " << epoch << ", step " << opt.step;
                throw DivergenceError(msg.str());
            }
            Eigen::MatrixXd out_grad = nn::mse_gradient(pred, y);
            if (hooks.teacher && hooks.distill_lambda != 0.0) {
                out_grad += hooks.distill_lambda * nn::mse_gradient(pred, hooks.teacher->forward(x));
            }
            net.backward_into(tape, out_grad, grad);
            if (hooks.si_path) {
                data_grad = grad;
                before = params;
            }
            if (hooks.anchor && hooks.anchor_lambda != 0.0) {
                grad.array() += (2.0 * hooks.anchor_lambda) * hooks.weights->array() * (params - *hooks.anchor).array();
            }
            nn::adam_step(opt, params, grad);
            if (hooks.si_path) *hooks.si_path -= data_grad.cwiseProduct(params - before);
            net.unflatten(params);
        }
    }
}

}  // namespace

InitialFit fit_initial(const channel::FeatureTable& table, const std::vector<SampleId>& train, const DilConfig& cfg,
                       std::uint64_t seed) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("initial training needs data");
    Rng init_rng(derive_seed(seed, 100));
    InitialFit fit;
    fit.seed = seed;
    fit.model = nn::Mlp<double>::glorot(cfg.layer_sizes(static_cast<int>(table.features.rows())), init_rng);
    fit.start = fit.model.flatten();
    fit.si_path = Eigen::VectorXd::Zero(fit.start.size());
    nn::AdamState<double> opt(fit.model.num_params(), cfg.learning_rate, cfg.milestones, cfg.decay);
    Rng shuffle_rng(derive_seed(seed, 101));
    StepHooks hooks;
    hooks.si_path = &fit.si_path;
    train_epochs(fit.model, table, train, cfg.epochs_initial, cfg.batch, opt, shuffle_rng, hooks);
    return fit;
}

Learner::Learner(InitialFit fit, const channel::FeatureTable& table, const std::vector<SampleId>& train, DilConfig cfg)
    : cfg_(std::move(cfg)), model_(std::move(fit.model)) {
    cfg_.validate();
    state_.method = cfg_.method;
    if (cfg_.method == Method::Pnn) pnn_ = ProgressiveNet<double>(model_);
    const Eigen::Index n = model_.num_params();
    if (cfg_.method == Method::Ewc) state_.fisher = Eigen::VectorXd::Zero(n);
    if (cfg_.method == Method::Si) {
        state_.importance = Eigen::VectorXd::Zero(n);
        state_.path = std::move(fit.si_path);
    }
    finish_task(table, train, fit.start);
}

Eigen::VectorXd Learner::parameters() const {
    return cfg_.method == Method::Pnn ? pnn_.flatten() : model_.flatten();
}

Eigen::MatrixXd Learner::predict(const Eigen::MatrixXd& inputs, int domain) const {
    if (cfg_.method == Method::Pnn) {
        const int column = std::clamp(domain, 0, pnn_.num_columns() - 1);
        return pnn_.forward_column(column, inputs);
    }
    return model_.forward(inputs);
}

Eigen::MatrixXd Learner::predict_latest(const Eigen::MatrixXd& inputs) const {
    if (cfg_.method == Method::Pnn) return pnn_.forward(inputs);
    return model_.forward(inputs);
}

void Learner::adapt(const channel::FeatureTable& table, const AdaptBatchPlan& plan, std::uint64_t shuffle_seed) {
    const std::vector<SampleId> stream = plan.stream();
    for (SampleId id : stream) {
        if (id >= static_cast<SampleId>(table.features.cols())) throw std::invalid_argument("adaptation id outside the task");
    }
    if (table.features.rows() != model_.input_size()) throw std::invalid_argument("feature length does not match the model");

    Rng rng(shuffle_seed);
    if (cfg_.method == Method::Pnn) {
        pnn_.add_column(pnn_.column(pnn_.num_columns() - 1));
        const Eigen::VectorXd start = pnn_.flatten();
        nn::AdamState<double> opt(pnn_.num_params(), cfg_.learning_rate);
        train_epochs(pnn_, table, stream, cfg_.epochs_adapt, cfg_.batch, opt, rng, StepHooks{});
        finish_task(table, stream, start);
        return;
    }

    const Eigen::VectorXd start = model_.flatten();
    StepHooks hooks;
    switch (cfg_.method) {
        case Method::Ewc:
            hooks.anchor = &state_.anchor;
            hooks.weights = &state_.fisher;
            hooks.anchor_lambda = cfg_.lambda;
            break;
        case Method::Si:
            hooks.anchor = &state_.anchor;
            hooks.weights = &state_.importance;
            hooks.anchor_lambda = cfg_.lambda;
            hooks.si_path = &state_.path;
            break;
        case Method::Lwf:
            hooks.teacher = &*state_.teacher;
            hooks.distill_lambda = cfg_.lambda;
            break;
        default:
            break;
    }
    nn::AdamState<double> opt(model_.num_params(), cfg_.learning_rate);
    train_epochs(model_, table, stream, cfg_.epochs_adapt, cfg_.batch, opt, rng, hooks);

    if (cfg_.weight_averaging && !state_.checkpoints.empty()) {
        Eigen::VectorXd mean = model_.flatten();
        for (const auto& c : state_.checkpoints) mean += c;
        mean /= static_cast<double>(state_.checkpoints.size() + 1);
        model_.unflatten(mean);
    }
    finish_task(table, stream, start);
}

void Learner::finish_task(const channel::FeatureTable& table, const std::vector<SampleId>& stream,
                          const Eigen::VectorXd& task_start) {
    const Eigen::VectorXd params = parameters();
    switch (cfg_.method) {
        case Method::Ewc:
            if (!stream.empty()) {
                state_.fisher += estimate_fisher(model_, gather(table.features, stream), gather(table.positions, stream));
            }
            state_.anchor = params;
            break;
        case Method::Si:
            si_consolidate(state_.importance, state_.path, params - task_start, cfg_.si_damping);
            state_.anchor = params;
            break;
        case Method::Lwf:
            state_.teacher = model_;
            break;
        default:
            break;
    }
    state_.checkpoints.push_back(params);
}

double evaluate(const Learner& learner, const channel::FeatureTable& table, const std::vector<SampleId>& test,
                int domain) {
    return mean_absolute_error(learner.predict(gather(table.features, test), domain), gather(table.positions, test));
}

}  // namespace cirdil::dil
