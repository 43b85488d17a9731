#pragma once

#include <vector>

#include "clare/tensor.hpp"

namespace clare {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam over an explicit parameter list. Only registered tensors are
// ever touched, so freezing is enforced both here and by requires_grad.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg = {});

    void step();
    void zero_grad();
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    int step_count() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig cfg_;
    int t_ = 0;
};

// Half-cosine decay from base to 0 over `total` steps; step counts from 0.
double cosine_lr(double base, int step, int total);

}  // namespace clare
