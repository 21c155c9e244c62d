#pragma once

#include <cmath>
#include <map>
#include <string>

#include "nfce/errors.hpp"
#include "nfce/params.hpp"
#include "nfce/tensor.hpp"

namespace nfce {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by parameter name and
// created lazily on the first step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
        NFCE_REQUIRE(cfg_.lr > 0.0, "adam: learning rate must be > 0");
        NFCE_REQUIRE(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0, "adam: beta1 out of range");
        NFCE_REQUIRE(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0, "adam: beta2 out of range");
    }

    std::uint64_t step_count() const { return t_; }

    // Replaces the learning rate; moment buffers and step count are kept.
    void set_lr(double lr) {
        NFCE_REQUIRE(lr > 0.0, "adam: learning rate must be > 0");
        cfg_.lr = lr;
    }

    // Applies one update to every parameter present in `grads`.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const auto& [name, g] : grads) {
            Tensor& p = params.get(name);
            NFCE_REQUIRE(p.same_shape(g), "adam: gradient shape mismatch for " + name +
                                              ": " + shape_str(p.shape()) + " vs " +
                                              shape_str(g.shape()));
            auto mit = m_.find(name);
            if (mit == m_.end()) {
                m_.emplace(name, Tensor::zeros(p.shape()));
                v_.emplace(name, Tensor::zeros(p.shape()));
                mit = m_.find(name);
            }
            Tensor& m = mit->second;
            Tensor& v = v_.at(name);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
};

}  // namespace nfce
