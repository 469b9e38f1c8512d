#include "sagan/losses.hpp"

#include <cmath>

namespace sagan::losses {

using ad::Tape;
using ad::Var;

void LossWeights::validate() const {
    const double vals[] = {lambda_pcl, lambda_cyc, lambda_idt, lambda_siam, gp_weight};
    for (double v : vals)
        if (!(std::isfinite(v) && v >= 0.0))
            throw ValueError("loss weights must be finite and >= 0");
    if (!(std::isfinite(siamese_margin) && siamese_margin > 0.0))
        throw ValueError("siamese margin must be > 0");
}

bool LossReport::finite() const {
    const double vals[] = {d_adv, g_adv, scl, pcl, cyc, idt, siam, gp, total_g, total_d};
    for (double v : vals)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

void check_nonempty(Var v, const char* what) {
    if (v->value.numel() == 0 || v->value.dim(0) == 0)
        throw ValueError(std::string(what) + ": empty batch");
}

}  // namespace

Var critic_adv_loss(Tape& g, Var d_fake, Var d_real, Var dt_fwd, Var dt_inv) {
    check_nonempty(d_fake, "critic_adv_loss");
    check_nonempty(d_real, "critic_adv_loss");
    check_nonempty(dt_fwd, "critic_adv_loss");
    check_nonempty(dt_inv, "critic_adv_loss");
    Var a = g.sub(g.mean_all(d_fake), g.mean_all(d_real));
    Var b = g.sub(g.mean_all(dt_fwd), g.mean_all(dt_inv));
    return g.add(a, b);
}

Var gen_adv_loss(Tape& g, Var d_fake, Var dt_fwd) {
    check_nonempty(d_fake, "gen_adv_loss");
    check_nonempty(dt_fwd, "gen_adv_loss");
    return g.sub(g.neg(g.mean_all(d_fake)), g.mean_all(dt_fwd));
}

Var pcl(Tape& g, Var x_recovered, Var x) {
    if (!x_recovered->value.same_shape(x->value))
        throw ShapeError("pcl: shape mismatch");
    return g.mean_all(g.abs(g.sub(x_recovered, x)));
}

Var scl(Tape& g, Var t_xy_params, Var t_yx_params, geometry::TransformKind kind) {
    if (kind == geometry::TransformKind::Tps)
        throw UnsupportedKindError("scl: tps not supported");
    if (!t_xy_params->value.same_shape(t_yx_params->value))
        throw ShapeError("scl: parameter shape mismatch");
    Var inv = g.invert_transform(t_xy_params, kind);
    return g.mean_all(g.abs(g.sub(inv, t_yx_params)));
}

Var cycle_loss(Tape& g, Var scl_val, Var pcl_val, double lambda_pcl) {
    return g.add(scl_val, g.scale(pcl_val, lambda_pcl));
}

Var mask_identity_loss(Tape& g, Var adapted, Var warped, Var mask) {
    if (!adapted->value.same_shape(warped->value))
        throw ShapeError("mask_identity_loss: image shape mismatch");
    return g.mean_all(g.abs(g.mul_mask(g.sub(adapted, warped), mask)));
}

Var siamese_loss(Tape& g, int label, Var e1, Var e2, double margin) {
    if (!e1->value.same_shape(e2->value))
        throw ShapeError("siamese_loss: embedding shape mismatch");
    if (e1->value.rank() != 2) throw ShapeError("siamese_loss: expects (N,D)");
    Var d2 = g.row_sum(g.square(g.sub(e1, e2)));   // (N,1) squared distances
    if (label == 1) return g.mean_all(d2);
    Var d = g.sqrt(d2);
    Var hinge = g.relu(g.add_scalar(g.neg(d), margin));
    return g.mean_all(g.square(hinge));
}

Var total_gen_loss(Tape& g, Var g_adv, Var cyc, Var idt, Var siam,
                   const LossWeights& w) {
    Var total = g.add(g_adv, g.scale(cyc, w.lambda_cyc));
    total = g.add(total, g.scale(idt, w.lambda_idt));
    return g.add(total, g.scale(siam, w.lambda_siam));
}

// ============================================================================
// Gradient penalty
// ============================================================================

GradBuffer::GradBuffer(std::vector<Tensor*> p) : params(std::move(p)) {
    grads.reserve(params.size());
    for (Tensor* t : params) grads.push_back(Tensor::zeros(t->shape));
}

void GradBuffer::zero() {
    for (auto& g : grads)
        for (auto& v : g.data) v = 0.0;
}

void GradBuffer::accumulate_from(const ad::Tape& tape) {
    add_scaled_from(tape, 1.0);
}

void GradBuffer::add_scaled_from(const ad::Tape& tape, double scale) {
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor* g = tape.grad_of(params[i]);
        if (!g) continue;
        for (int64_t j = 0; j < grads[i].numel(); ++j) grads[i][j] += scale * (*g)[j];
    }
}

Tensor critic_input_gradient(const CriticFn& critic, const Tensor& x) {
    Tape tape;
    Var in = tape.input(x, true);
    Var score = critic(tape, in);
    tape.backward(tape.sum_all(score));
    if (in->grad.data.empty()) return Tensor::zeros(x.shape);
    return in->grad;
}

namespace {

struct Interpolates {
    Tensor x_hat;
    Tensor v;        // dGP/dg direction, including the 1/B factor
    double value;    // penalty value
};

Interpolates build_interpolates(const CriticFn& critic, const Tensor& real,
                                const Tensor& fake, Rng& rng) {
    if (!real.same_shape(fake)) throw ShapeError("gradient_penalty: shape mismatch");
    const int64_t n = real.dim(0);
    if (n == 0) throw ValueError("gradient_penalty: empty batch");
    const int64_t item = real.numel() / n;

    Interpolates out;
    out.x_hat = Tensor::zeros(real.shape);
    for (int64_t b = 0; b < n; ++b) {
        double eps = rng.uniform();
        for (int64_t i = 0; i < item; ++i) {
            int64_t idx = b * item + i;
            out.x_hat[idx] = eps * real[idx] + (1.0 - eps) * fake[idx];
        }
    }

    Tensor grad = critic_input_gradient(critic, out.x_hat);
    out.v = Tensor::zeros(real.shape);
    double value = 0.0;
    for (int64_t b = 0; b < n; ++b) {
        double norm_sq = 0.0;
        for (int64_t i = 0; i < item; ++i) {
            double gv = grad[b * item + i];
            norm_sq += gv * gv;
        }
        double norm = std::sqrt(norm_sq);
        value += (norm - 1.0) * (norm - 1.0);
        // v = dGP_b/dg = 2*(norm-1)/norm * g, folded with the 1/n batch mean
        if (norm > 1e-12) {
            double coeff = 2.0 * (norm - 1.0) / (norm * static_cast<double>(n));
            for (int64_t i = 0; i < item; ++i)
                out.v[b * item + i] = coeff * grad[b * item + i];
        }
    }
    out.value = value / static_cast<double>(n);
    return out;
}

}  // namespace

double gradient_penalty_value(const CriticFn& critic, const Tensor& real,
                              const Tensor& fake, Rng& rng) {
    return build_interpolates(critic, real, fake, rng).value;
}

double gradient_penalty_apply(const CriticFn& critic, const Tensor& real,
                              const Tensor& fake, Rng& rng, double gp_weight,
                              GradBuffer& grads) {
    Interpolates interp = build_interpolates(critic, real, fake, rng);
    if (gp_weight == 0.0) return interp.value;

    double vmax = 0.0;
    for (double v : interp.v.data) vmax = std::max(vmax, std::abs(v));
    if (vmax == 0.0) return interp.value;   // gradient norms exactly 1 (or 0)
    const double eps = 1e-5 / vmax;

    auto run_side = [&](double sign, double scale) {
        Tensor shifted = interp.x_hat;
        for (int64_t i = 0; i < shifted.numel(); ++i)
            shifted[i] += sign * eps * interp.v[i];
        Tape tape;
        Var in = tape.input(std::move(shifted), false);
        Var score = critic(tape, in);
        tape.backward(tape.sum_all(score));
        grads.add_scaled_from(tape, scale);
    };
    const double scale = gp_weight / (2.0 * eps);
    run_side(+1.0, scale);
    run_side(-1.0, -scale);
    return interp.value;
}

}  // namespace sagan::losses
