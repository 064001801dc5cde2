#pragma once

// SGD with Nesterov momentum and weight decay. Update per parameter, with
// g' = grad + weight_decay * w:
//   v <- momentum * v - lr * g'
//   w <- w + momentum * v - lr * g'

#include <map>
#include <string>
#include <vector>

#include "ticketlab/autodiff.hpp"

namespace ticketlab {

struct OptimizerState {
    float learning_rate = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 1e-5f;
    // Velocity per parameter name, same shape, starts at zero.
    std::map<std::string, Tensor> velocity;

    void sgd_step(const std::vector<Parameter*>& params) {
        for (Parameter* p : params) {
            check_same_shape(p->value, p->grad, ("sgd_step: " + p->name).c_str());
            Tensor& v = velocity.try_emplace(p->name, Tensor::zeros(p->value.shape)).first->second;
            if (!v.same_shape(p->value))
                throw ShapeError("sgd_step: velocity " + shape_str(v.shape) + " does not match " +
                                 p->name + " " + shape_str(p->value.shape));
            const float lr = learning_rate, rho = momentum, alpha = weight_decay;
            float* w = p->value.ptr();
            const float* g = p->grad.ptr();
            float* vel = v.ptr();
            for (size_t i = 0; i < p->value.numel(); ++i) {
                const float gp = g[i] + alpha * w[i];
                vel[i] = rho * vel[i] - lr * gp;
                w[i] += rho * vel[i] - lr * gp;
            }
        }
    }
};

}  // namespace ticketlab
