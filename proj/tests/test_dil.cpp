#include <doctest.h>

#include <cstring>
#include <span>

#include "cirdil/channel/task.hpp"
#include "cirdil/dil/dil.hpp"
#include "cirdil/dil/progressive.hpp"
#include "cirdil/nn/adam.hpp"
#include "cirdil/rng.hpp"

using namespace cirdil;
using namespace cirdil::dil;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Fixture {
    channel::FeatureTable first;
    channel::FeatureTable second;
    std::vector<SampleId> train;
    std::vector<SampleId> modified;
    DilConfig cfg;

    Fixture() {
        const auto scenario = channel::default_scenario();
        channel::Scene scene = scenario.scene;
        const auto a = channel::generate_task(scene, scenario.trajectory, 160, 1);
        const auto changed = channel::apply_change(scene, scenario.tasks[1].change);
        const auto b = channel::generate_task(changed.scene, scenario.trajectory, 160, 2, changed.labeler);
        first = channel::make_feature_table(a);
        second = channel::make_feature_table(b);
        for (SampleId i = 0; i < 120; ++i) train.push_back(i);
        for (SampleId i = 0; i < 60; ++i) modified.push_back(i);
        cfg.hidden = {12, 8, 6};
        cfg.epochs_initial = 3;
        cfg.epochs_adapt = 2;
        cfg.batch = 16;
    }

    Learner learner(Method method, double lambda, bool averaging = false) const {
        DilConfig c = cfg;
        c.method = method;
        c.lambda = lambda;
        c.weight_averaging = averaging;
        return train_initial(first, train, c, 5);
    }
};

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
        for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(-1.0, 1.0);
    }
    return m;
}

std::vector<unsigned char> bytes_of(const VectorXd& v) {
    std::vector<unsigned char> out(static_cast<std::size_t>(v.size()) * sizeof(double));
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

}  // namespace

TEST_SUITE("dil") {

TEST_CASE("quadratic penalty values and gradient") {
    VectorXd anchor = VectorXd::Zero(3);
    VectorXd weights = VectorXd::Ones(3);
    VectorXd params = VectorXd::Unit(3, 0);
    CHECK(penalty_ewc(anchor, anchor, weights, 1.0) == 0.0);
    CHECK(penalty_ewc(params, anchor, weights, 1.0) == 1.0);

    Rng rng(4);
    const VectorXd p = random_matrix(20, 1, rng);
    const VectorXd a = random_matrix(20, 1, rng);
    const VectorXd w = random_matrix(20, 1, rng).cwiseAbs();
    double direct = 0.0;
    for (int i = 0; i < 20; ++i) direct += 3.5 * w(i) * (p(i) - a(i)) * (p(i) - a(i));
    CHECK(quadratic_penalty(p, a, w, 3.5) == doctest::Approx(direct).epsilon(1e-14));
    const VectorXd g = quadratic_penalty_gradient(p, a, w, 3.5);
    for (int i = 0; i < 20; ++i) {
        VectorXd up = p, down = p;
        up(i) += 1e-6;
        down(i) -= 1e-6;
        CHECK(g(i) == doctest::Approx((quadratic_penalty(up, a, w, 3.5) - quadratic_penalty(down, a, w, 3.5)) / 2e-6).epsilon(1e-6));
    }
    // Strictly increasing along a ray with positive importance.
    double previous = 0.0;
    for (double t = 0.1; t < 2.0; t += 0.1) {
        const double value = quadratic_penalty(a + t * (p - a), a, w, 3.5);
        CHECK(value > previous);
        previous = value;
    }
}

TEST_CASE("distillation penalty") {
    Rng rng(6);
    const MatrixXd s = random_matrix(2, 9, rng);
    const MatrixXd t = random_matrix(2, 9, rng);
    CHECK(penalty_lwf(s, s, 10.0) == 0.0);
    CHECK(penalty_lwf(s, t, 10.0) == doctest::Approx(10.0 * (s - t).squaredNorm() / 18.0).epsilon(1e-14));
}

TEST_CASE("fisher estimate") {
    Rng rng(14);
    const auto net = nn::Mlp<double>::glorot({5, 6, 2}, rng);
    const MatrixXd x = random_matrix(5, 7, rng);
    const MatrixXd y = random_matrix(2, 7, rng);
    CHECK(estimate_fisher(net, x, net.forward(x)).isZero());

    const VectorXd g = nn::mse_loss_and_gradient(net, x.col(0), y.col(0)).gradient;
    CHECK(estimate_fisher(net, MatrixXd(x.col(0)), MatrixXd(y.col(0))) == g.cwiseAbs2());

    VectorXd oracle = VectorXd::Zero(net.num_params());
    for (Eigen::Index i = 0; i < 7; ++i) oracle += nn::mse_loss_and_gradient(net, x.col(i), y.col(i)).gradient.cwiseAbs2();
    oracle /= 7.0;
    CHECK((estimate_fisher(net, x, y) - oracle).cwiseAbs().maxCoeff() < 1e-15);
    CHECK_THROWS(estimate_fisher(net, MatrixXd(5, 0), MatrixXd(2, 0)));
}

TEST_CASE("si accumulation and consolidation") {
    VectorXd path = VectorXd::Zero(3);
    si_accumulate(path, VectorXd::Zero(3), VectorXd::Constant(3, 0.5));
    CHECK(path.isZero());
    VectorXd importance = VectorXd::Constant(3, 2.0);
    si_consolidate(importance, path, VectorXd::Constant(3, 0.5), 0.1);
    CHECK(importance == VectorXd::Constant(3, 2.0));

    VectorXd step(3);
    step << 1e-3, 2e-3, -1e-3;
    si_accumulate(path, VectorXd::Constant(3, -1.0), step);
    CHECK(path == step);

    VectorXd fresh = VectorXd::Zero(3);
    si_consolidate(fresh, path, step, 0.1);
    CHECK(path.isZero());
    CHECK(fresh(0) == doctest::Approx(1e-3 / (1e-6 + 0.1)));
    CHECK(fresh(2) == 0.0);
}

TEST_CASE("si importance matches a replay of the initial fit") {
    const Fixture f;
    const Learner learner = f.learner(Method::Si, 5.0);

    // Replay the documented training loop step by step.
    Rng init(derive_seed(5, 100));
    auto net = nn::Mlp<double>::glorot(f.cfg.layer_sizes(static_cast<int>(f.first.features.rows())), init);
    const VectorXd start = net.flatten();
    VectorXd params = start;
    VectorXd path = VectorXd::Zero(params.size());
    nn::AdamState<double> opt(params.size(), f.cfg.learning_rate, f.cfg.milestones, f.cfg.decay);
    Rng shuffle(derive_seed(5, 101));
    std::vector<SampleId> stream = f.train;
    for (int epoch = 0; epoch < f.cfg.epochs_initial; ++epoch) {
        nn::set_epoch(opt, epoch);
        shuffle.shuffle(std::span<SampleId>(stream));
        for (std::size_t s = 0; s < stream.size(); s += 16) {
            const std::vector<SampleId> ids(stream.begin() + static_cast<long>(s), stream.begin() + static_cast<long>(std::min(stream.size(), s + 16)));
            const auto lg = nn::mse_loss_and_gradient(net, gather(f.first.features, ids), gather(f.first.positions, ids));
            const VectorXd before = params;
            nn::adam_step(opt, params, lg.gradient);
            path -= lg.gradient.cwiseProduct(params - before);
            net.unflatten(params);
        }
    }
    CHECK(learner.parameters() == params);
    const VectorXd delta = params - start;
    const VectorXd expected = (path.array().max(0.0) / (delta.array().square() + f.cfg.si_damping)).matrix();
    CHECK((learner.state().importance - expected).cwiseAbs().maxCoeff() <= 1e-12 * expected.cwiseAbs().maxCoeff());
    CHECK(learner.state().importance.minCoeff() >= 0.0);
    CHECK(learner.state().path.isZero());
}

TEST_CASE("zero lambda reproduces the finetune trajectory") {
    const Fixture f;
    Learner ft = f.learner(Method::Finetune, 0.0);
    AdaptBatchPlan plan{f.modified, {130, 140, 150}};
    ft.adapt(f.second, plan, 77);
    for (Method m : {Method::Ewc, Method::Lwf, Method::Si}) {
        Learner other = f.learner(m, 0.0);
        other.adapt(f.second, plan, 77);
        CHECK_MESSAGE(other.parameters() == ft.parameters(), to_string(m));
    }
    Learner ewc = f.learner(Method::Ewc, 1e3);
    ewc.adapt(f.second, plan, 77);
    CHECK(ewc.parameters() != ft.parameters());
}

TEST_CASE("huge ewc lambda pins the parameters") {
    const Fixture f;
    Learner ewc = f.learner(Method::Ewc, 1e12);
    const VectorXd anchor = ewc.parameters();
    const VectorXd fisher = ewc.state().fisher;
    ewc.adapt(f.second, AdaptBatchPlan{f.modified, {}}, 3);
    const VectorXd moved = (ewc.parameters() - anchor).cwiseAbs();
    double worst = 0.0;
    for (Eigen::Index i = 0; i < moved.size(); ++i) {
        if (fisher(i) > 0.0) worst = std::max(worst, moved(i));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("method state after each task") {
    const Fixture f;
    Learner ewc = f.learner(Method::Ewc, 1e5);
    CHECK(ewc.tasks_completed() == 1);
    CHECK(ewc.state().anchor == ewc.parameters());
    CHECK(ewc.state().fisher.minCoeff() >= 0.0);
    const VectorXd fisher_before = ewc.state().fisher;
    ewc.adapt(f.second, AdaptBatchPlan{f.modified, {}}, 1);
    CHECK(ewc.tasks_completed() == 2);
    CHECK((ewc.state().fisher.array() >= fisher_before.array()).all());
    CHECK(ewc.state().checkpoints.back() == ewc.parameters());

    Learner lwf = f.learner(Method::Lwf, 10.0);
    REQUIRE(lwf.state().teacher.has_value());
    CHECK(lwf.state().teacher->flatten() == lwf.parameters());
}

TEST_CASE("weight averaging") {
    const Fixture f;
    // Nothing to train on: the averaged model equals the stored checkpoint.
    Learner idle = f.learner(Method::Finetune, 0.0, true);
    const VectorXd theta = idle.parameters();
    idle.adapt(f.second, AdaptBatchPlan{}, 1);
    CHECK(idle.parameters() == theta);

    Learner plain = f.learner(Method::Finetune, 0.0, false);
    Learner averaged = f.learner(Method::Finetune, 0.0, true);
    plain.adapt(f.second, AdaptBatchPlan{f.modified, {}}, 9);
    averaged.adapt(f.second, AdaptBatchPlan{f.modified, {}}, 9);
    const VectorXd expected = (theta + plain.parameters()) / 2.0;
    CHECK((averaged.parameters() - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("initial training is deterministic and validated") {
    const Fixture f;
    CHECK(f.learner(Method::Finetune, 0.0).parameters() == f.learner(Method::Finetune, 0.0).parameters());
    DilConfig bad = f.cfg;
    bad.epochs_initial = 0;
    CHECK_THROWS_AS(train_initial(f.first, f.train, bad, 1), std::invalid_argument);
}

TEST_CASE("evaluation metric") {
    Rng rng(2);
    const MatrixXd truth = random_matrix(2, 30, rng);
    CHECK(mean_absolute_error(truth, truth) == 0.0);
    const Eigen::Vector2d centroid = truth.rowwise().mean();
    double direct = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i) direct += (truth.col(i) - centroid).norm();
    CHECK(mean_absolute_error(centroid.replicate(1, 30), truth) == doctest::Approx(direct / 30.0).epsilon(1e-14));
}

TEST_CASE("progressive parameter count") {
    Rng rng(3);
    const std::vector<int> sizes = {10, 7, 5, 4, 2};
    ProgressiveNet<double> pnn(nn::Mlp<double>::glorot(sizes, rng));
    for (int columns = 1; columns <= 4; ++columns) {
        if (columns > 1) pnn.add_column(nn::Mlp<double>::glorot(sizes, rng));
        // Lateral adapters feed hidden layers 2 and 3: 5x7 and 4x5 weights per older column.
        const Eigen::Index per_column = 11 * 7 + 8 * 5 + 6 * 4 + 5 * 2;
        CHECK(pnn.total_params() == columns * per_column + (35 + 20) * columns * (columns - 1) / 2);
        CHECK(pnn.total_params() == ProgressiveNet<double>::count_params(sizes, columns));
    }
}

TEST_CASE("zero adapters leave a new column equal to a lone copy") {
    Rng rng(8);
    const std::vector<int> sizes = {6, 5, 4, 2};
    const auto first = nn::Mlp<double>::glorot(sizes, rng);
    const auto second = nn::Mlp<double>::glorot(sizes, rng);
    ProgressiveNet<double> pnn(first);
    pnn.add_column(second);
    const MatrixXd x = random_matrix(6, 5, rng);
    CHECK(pnn.forward(x) == second.forward(x));
    CHECK(pnn.forward_column(0, x) == first.forward(x));
}

TEST_CASE("progressive gradient matches central differences") {
    Rng rng(17);
    const std::vector<int> sizes = {6, 5, 4, 3, 2};
    ProgressiveNet<double> pnn(nn::Mlp<double>::glorot(sizes, rng));
    pnn.add_column(nn::Mlp<double>::glorot(sizes, rng));
    pnn.add_column(nn::Mlp<double>::glorot(sizes, rng));
    VectorXd params = pnn.flatten();
    params += 0.3 * random_matrix(params.size(), 1, rng);
    pnn.unflatten(params);
    const MatrixXd x = random_matrix(6, 4, rng);
    const MatrixXd y = random_matrix(2, 4, rng);
    ProgressiveNet<double>::TapeType tape;
    const MatrixXd pred = pnn.forward(x, &tape);
    const VectorXd analytic = pnn.backward(tape, nn::mse_gradient(pred, y));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        VectorXd p = params;
        p(i) += 1e-5;
        pnn.unflatten(p);
        const double up = nn::mse_loss(pnn.forward(x), y);
        p(i) -= 2e-5;
        pnn.unflatten(p);
        const double down = nn::mse_loss(pnn.forward(x), y);
        const double numeric = (up - down) / 2e-5;
        worst = std::max(worst, std::abs(numeric - analytic(i)) / std::max(1e-6, std::abs(numeric) + std::abs(analytic(i))));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("progressive adaptation freezes earlier columns") {
    const Fixture f;
    Learner pnn = f.learner(Method::Pnn, 0.0);
    const auto frozen = bytes_of(pnn.progressive().flatten_column(0));
    const MatrixXd probe = f.first.features.leftCols(20);
    const MatrixXd before = pnn.predict(probe, 0);
    pnn.adapt(f.second, AdaptBatchPlan{f.modified, {150, 151}}, 4);
    pnn.adapt(f.first, AdaptBatchPlan{f.modified, {}}, 5);
    CHECK(pnn.progressive().num_columns() == 3);
    CHECK(pnn.tasks_completed() == 3);
    CHECK(bytes_of(pnn.progressive().flatten_column(0)) == frozen);
    CHECK(pnn.predict(probe, 0) == before);
    CHECK(pnn.predict(probe, 1) != before);
    CHECK(pnn.predict(probe, 9) == pnn.predict(probe, 2));
}

}  // TEST_SUITE
