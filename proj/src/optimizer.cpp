#include "facto/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace facto {

double StepDecay::lr_at(int epoch) const {
    return base_lr * std::pow(factor, epoch / every);
}

void Adam::step(ParamStore& params, const GradMap& grads, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params.items()) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;
        const Mat& gm = git->second;
        if (!gm.same_shape(p)) throw std::runtime_error("adam: gradient shape mismatch for " + name);
        Mat& m = m_.try_emplace(name, Mat(p.rows, p.cols)).first->second;
        Mat& v = v_.try_emplace(name, Mat(p.rows, p.cols)).first->second;
        for (size_t i = 0; i < p.size(); ++i) {
            double gi = gm.d[i];
            if (!std::isfinite(gi)) throw std::runtime_error("adam: non-finite gradient in " + name);
            m.d[i] = beta1_ * m.d[i] + (1.0 - beta1_) * gi;
            v.d[i] = beta2_ * v.d[i] + (1.0 - beta2_) * gi * gi;
            double mh = m.d[i] / bc1;
            double vh = v.d[i] / bc2;
            p.d[i] -= lr * mh / (std::sqrt(vh) + eps_);
        }
    }
}

} // namespace facto
