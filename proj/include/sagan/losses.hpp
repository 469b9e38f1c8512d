#ifndef SAGAN_LOSSES_HPP
#define SAGAN_LOSSES_HPP

#include <functional>

#include "sagan/rng.hpp"
#include "sagan/tape.hpp"

namespace sagan::losses {

struct LossWeights {
    double lambda_pcl = 10.0;
    double lambda_cyc = 1.0;
    double lambda_idt = 5.0;
    double lambda_siam = 1.0;
    double siamese_margin = 2.0;
    double gp_weight = 10.0;

    void validate() const;
};

// Named scalars for one training step. `cyc == scl + lambda_pcl * pcl`
// holds on every report by construction.
struct LossReport {
    double d_adv = 0, g_adv = 0;
    double scl = 0, pcl = 0, cyc = 0;
    double idt = 0, siam = 0, gp = 0;
    double total_g = 0, total_d = 0;

    bool finite() const;
};

// Critic objective: mean(fake) - mean(real) + mean(dt_fwd) - mean(dt_inv).
// The gradient penalty is computed separately (see gradient_penalty below).
ad::Var critic_adv_loss(ad::Tape& g, ad::Var d_fake, ad::Var d_real,
                        ad::Var dt_fwd, ad::Var dt_inv);

// Generator/STM objective: -mean(d_fake) - mean(dt_fwd).
ad::Var gen_adv_loss(ad::Tape& g, ad::Var d_fake, ad::Var dt_fwd);

// Mean L1 between the recovered image and the original.
ad::Var pcl(ad::Tape& g, ad::Var x_recovered, ad::Var x);

// Mean L1 between invert(t_xy) and t_yx in the pinned gauge.
ad::Var scl(ad::Tape& g, ad::Var t_xy_params, ad::Var t_yx_params,
            geometry::TransformKind kind);

ad::Var cycle_loss(ad::Tape& g, ad::Var scl_val, ad::Var pcl_val, double lambda_pcl);

// Mean L1 of the mask-weighted difference; mask broadcast over channels.
ad::Var mask_identity_loss(ad::Tape& g, ad::Var adapted, ad::Var warped, ad::Var mask);

// Contrastive pair loss, mean over the batch.
// label 1: d^2; label 0: max(0, margin - d)^2 with d the Euclidean distance.
ad::Var siamese_loss(ad::Tape& g, int label, ad::Var e1, ad::Var e2, double margin);

ad::Var total_gen_loss(ad::Tape& g, ad::Var g_adv, ad::Var cyc, ad::Var idt,
                       ad::Var siam, const LossWeights& w);

// ----------------------------------------------------------------------------
// Gradient penalty. A critic is any function building a (N,1) score from an
// input Var on a fresh tape. The penalty mean((|grad_x D(x_hat)| - 1)^2) is
// evaluated exactly; its gradient w.r.t. the critic parameters is formed from
// two extra backward passes at input x_hat +- eps*v (central difference of
// the Hessian-vector product), accurate to O(eps^2) in double precision.
// ----------------------------------------------------------------------------

using CriticFn = std::function<ad::Var(ad::Tape&, ad::Var)>;

// Value only (no parameter gradients).
double gradient_penalty_value(const CriticFn& critic, const Tensor& real,
                              const Tensor& fake, Rng& rng);

// Value plus accumulation of gp_weight * dGP/dtheta into `grads`, which maps
// parameter storage to gradient buffers laid out like GradBuffer below.
struct GradBuffer {
    std::vector<Tensor*> params;
    std::vector<Tensor> grads;

    explicit GradBuffer(std::vector<Tensor*> p);
    void zero();
    void accumulate_from(const ad::Tape& tape);
    void add_scaled_from(const ad::Tape& tape, double scale);
};

double gradient_penalty_apply(const CriticFn& critic, const Tensor& real,
                              const Tensor& fake, Rng& rng, double gp_weight,
                              GradBuffer& grads);

// Exact input gradient of the summed critic score (one backward pass).
Tensor critic_input_gradient(const CriticFn& critic, const Tensor& x);

}  // namespace sagan::losses

#endif  // SAGAN_LOSSES_HPP
