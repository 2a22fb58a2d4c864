#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace mhgnn;

namespace {

ModelParams<float> two_params() {
    ModelParams<float> p;
    p.add("a", Tensor<float>({1, 3}, {0.5f, -1.0f, 2.0f}, true));
    p.add("b", Tensor<float>({2, 1}, {0.0f, 0.25f}, true));
    return p;
}

std::vector<float> flat(const ModelParams<float>& p) {
    std::vector<float> out;
    for (const auto& t : p.tensors()) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}

}  // namespace

TEST(Optim, AdamMatchesHandComputation) {
    auto p = two_params();
    Adam adam(0.01, 0.9, 0.999, 1e-8);
    const std::vector<std::vector<std::vector<double>>> steps{
        {{0.1, -0.2, 0.3}, {1.0, 0.0}}, {{0.2, -0.1, 0.0}, {-1.0, 0.5}}, {{-0.3, 0.4, 0.1}, {0.5, 0.5}}};

    std::vector<double> x{0.5, -1.0, 2.0, 0.0, 0.25}, m(5, 0.0), v(5, 0.0);
    for (std::size_t t = 1; t <= steps.size(); ++t) {
        adam.step(p, steps[t - 1]);
        std::vector<double> g(steps[t - 1][0]);
        g.insert(g.end(), steps[t - 1][1].begin(), steps[t - 1][1].end());
        for (std::size_t j = 0; j < 5; ++j) {
            m[j] = 0.9 * m[j] + 0.1 * g[j];
            v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
            const double mh = m[j] / (1 - std::pow(0.9, static_cast<double>(t)));
            const double vh = v[j] / (1 - std::pow(0.999, static_cast<double>(t)));
            x[j] = static_cast<float>(x[j] - 0.01 * mh / (std::sqrt(vh) + 1e-8));
        }
        const auto got = flat(p);
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(got[j], x[j], 1e-6) << "step " << t << " idx " << j;
    }
    EXPECT_EQ(adam.steps(), 3u);
}

TEST(Optim, FirstAdamStepIsBoundedByLearningRate) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 10.0);
    auto p = two_params();
    const auto before = flat(p);
    Adam adam(0.05);
    std::vector<std::vector<double>> grads{{g(rng), g(rng), g(rng)}, {g(rng), g(rng)}};
    adam.step(p, grads);
    const auto after = flat(p);
    for (std::size_t j = 0; j < after.size(); ++j) EXPECT_LE(std::abs(after[j] - before[j]), 0.05 * (1 + 1e-5));
}

TEST(Optim, ZeroLearningRateLeavesParametersUntouched) {
    for (auto kind : {OptimizerKind::adam, OptimizerKind::sgd}) {
        auto p = two_params();
        const auto before = flat(p);
        auto opt = make_optimizer(kind, 0.0, 0.9, 0.999, 1e-8);
        for (int i = 0; i < 5; ++i) opt->step(p, {{1.0, 2.0, 3.0}, {4.0, 5.0}});
        EXPECT_EQ(flat(p), before);
    }
}

TEST(Optim, SgdStep) {
    auto p = two_params();
    Sgd sgd(0.5);
    sgd.step(p, {{1.0, 0.0, -2.0}, {0.5, 0.5}});
    EXPECT_EQ(flat(p), (std::vector<float>{0.0f, -1.0f, 3.0f, -0.25f, 0.0f}));
}

TEST(Optim, RejectsMisalignedGradients) {
    auto p = two_params();
    Adam adam(0.1);
    EXPECT_THROW(adam.step(p, {{1.0, 2.0, 3.0}}), ConfigError);
    EXPECT_THROW(adam.step(p, {{1.0, 2.0}, {1.0, 2.0}}), ConfigError);
    EXPECT_EQ(parse_optimizer("sgd"), OptimizerKind::sgd);
    EXPECT_THROW((void)parse_optimizer("rmsprop"), ConfigError);
}
