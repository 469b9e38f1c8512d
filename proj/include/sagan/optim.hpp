#ifndef SAGAN_OPTIM_HPP
#define SAGAN_OPTIM_HPP

#include <vector>

#include "sagan/losses.hpp"
#include "sagan/tensor.hpp"

namespace sagan::optim {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over a fixed ordered parameter list. Moment buffers are exposed for
// checkpointing; updates are elementwise and deterministic.
class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg);

    void step(const losses::GradBuffer& grads);

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    const std::vector<Tensor*>& params() const { return params_; }
    std::vector<Tensor>& m() { return m_; }
    std::vector<Tensor>& v() { return v_; }

private:
    std::vector<Tensor*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    int64_t t_ = 0;
};

// Weight clipping for the Lipschitz-by-clipping ablation.
void clip_params(const std::vector<Tensor*>& params, double clip);

}  // namespace sagan::optim

#endif  // SAGAN_OPTIM_HPP
