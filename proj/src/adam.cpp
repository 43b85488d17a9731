#include "clare/adam.hpp"

#include <cmath>

namespace clare {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& p = *params_[pi];
        if (p.grad.size() != p.value.size())
            throw NumericsError("adam: missing grad for parameter '" + p.name + "'");
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

double cosine_lr(double base, int step, int total) {
    if (total <= 1) return base;
    const double t = static_cast<double>(step) / static_cast<double>(total);
    return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace clare
