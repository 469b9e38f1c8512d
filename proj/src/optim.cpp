#include "sagan/optim.hpp"

#include <cmath>

namespace sagan::optim {

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (Tensor* p : params_) {
        m_.push_back(Tensor::zeros(p->shape));
        v_.push_back(Tensor::zeros(p->shape));
    }
}

void Adam::step(const losses::GradBuffer& grads) {
    if (grads.params.size() != params_.size())
        throw ValueError("adam: gradient buffer does not match parameter list");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = *params_[i];
        const Tensor& g = grads.grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < p.numel(); ++j) {
            const double gj = g[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void clip_params(const std::vector<Tensor*>& params, double clip) {
    for (Tensor* p : params)
        for (auto& v : p->data) {
            if (v > clip) v = clip;
            if (v < -clip) v = -clip;
        }
}

}  // namespace sagan::optim
