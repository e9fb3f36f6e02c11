#ifndef FACTO_OPTIMIZER_HPP
#define FACTO_OPTIMIZER_HPP

#include <unordered_map>

#include "facto/encoder.hpp"

namespace facto {

// base lr multiplied by `factor` every `every` epochs (epoch is 0-based)
struct StepDecay {
    double base_lr = 5e-4;
    double factor = 0.9;
    int every = 20;

    double lr_at(int epoch) const;
};

class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // one update over every parameter present in `grads`
    void step(ParamStore& params, const GradMap& grads, double lr);

private:
    double beta1_, beta2_, eps_;
    long long t_ = 0;
    std::unordered_map<std::string, Mat> m_, v_;
};

} // namespace facto

#endif
