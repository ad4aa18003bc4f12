#include "xdseg/optim.hpp"

#include <cmath>

#include "xdseg/errors.hpp"

namespace xdseg {

const char* to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::sgd: return "sgd";
        case OptimizerKind::adam: return "adam";
        case OptimizerKind::adamw: return "adamw";
    }
    return "?";
}

OptimizerKind optimizer_from_string(std::string_view s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    if (s == "adamw") return OptimizerKind::adamw;
    throw ConfigError("unknown optimizer '" + std::string(s) + "'");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double weight_decay)
    : kind_(kind), lr_(lr), wd_(weight_decay) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer: weight decay must be non-negative");
}

void Optimizer::step(const std::vector<ParamRef>& params) {
    if (kind_ == OptimizerKind::sgd) {
        for (const ParamRef& r : params) {
            float* p = r.value->data();
            const float* g = r.grad->data();
            for (std::size_t i = 0; i < r.value->size(); ++i)
                p[i] -= static_cast<float>(lr_ * (g[i] + wd_ * p[i]));
        }
        return;
    }

    if (m_.size() != params.size()) {
        m_.assign(params.size(), {});
        v_.assign(params.size(), {});
        for (std::size_t j = 0; j < params.size(); ++j) {
            m_[j].assign(params[j].value->size(), 0.0f);
            v_[j].assign(params[j].value->size(), 0.0f);
        }
        t_ = 0;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);

    for (std::size_t j = 0; j < params.size(); ++j) {
        float* p = params[j].value->data();
        const float* g = params[j].grad->data();
        float* m = m_[j].data();
        float* v = v_[j].data();
        for (std::size_t i = 0; i < params[j].value->size(); ++i) {
            const double grad =
                (kind_ == OptimizerKind::adam) ? g[i] + wd_ * p[i] : static_cast<double>(g[i]);
            m[i] = static_cast<float>(beta1_ * m[i] + (1.0 - beta1_) * grad);
            v[i] = static_cast<float>(beta2_ * v[i] + (1.0 - beta2_) * grad * grad);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = mhat / (std::sqrt(vhat) + eps_);
            if (kind_ == OptimizerKind::adamw) update += wd_ * p[i];
            p[i] -= static_cast<float>(lr_ * update);
        }
    }
}

}  // namespace xdseg
