#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "mhgnn/error.hpp"
#include "mhgnn/model.hpp"

namespace mhgnn {

enum class OptimizerKind { adam, sgd };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind parse_optimizer(std::string_view s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "sgd") return OptimizerKind::sgd;
    throw ConfigError("unknown optimizer '" + std::string(s) + "' (adam | sgd)");
}

/// Applies one update per call from gradients aligned with params.tensors().
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(ModelParams<float>& params, const std::vector<std::vector<double>>& grads) = 0;

protected:
    static void check(const ModelParams<float>& params, const std::vector<std::vector<double>>& grads) {
        if (grads.size() != params.size()) throw ConfigError("optimizer: gradient count does not match parameters");
        for (std::size_t i = 0; i < grads.size(); ++i)
            if (grads[i].size() != params.tensors()[i].size())
                throw ConfigError("optimizer: gradient size mismatch for '" + params.names()[i] + "'");
    }
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}

    void step(ModelParams<float>& params, const std::vector<std::vector<double>>& grads) override {
        check(params, grads);
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto v = params.tensors()[i].leaf_values();
            for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<float>(v[j] - lr_ * grads[i][j]);
        }
    }

private:
    double lr_;
};

/// Adam with bias-corrected moments:
///   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
///   x -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class Adam final : public Optimizer {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ModelParams<float>& params, const std::vector<std::vector<double>>& grads) override {
        check(params, grads);
        if (m_.empty()) {
            for (const auto& g : grads) {
                m_.emplace_back(g.size(), 0.0);
                v_.emplace_back(g.size(), 0.0);
            }
        }
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto x = params.tensors()[i].leaf_values();
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double g = grads[i][j];
                m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
                const double update = lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
                x[j] = static_cast<float>(x[j] - update);
            }
        }
    }

    [[nodiscard]] std::size_t steps() const { return t_; }

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps) {
    if (kind == OptimizerKind::sgd) return std::make_unique<Sgd>(lr);
    return std::make_unique<Adam>(lr, beta1, beta2, eps);
}

}  // namespace mhgnn
