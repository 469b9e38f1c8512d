#include "sagan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sagan/losses.hpp"
#include "sagan/networks.hpp"
#include "sagan/rng.hpp"
#include "sagan/training.hpp"

namespace sagan::gradcheck {

CheckResult check_gradients(const std::string& name,
                            std::vector<Tensor> inputs,
                            const GraphBuilder& builder,
                            const CheckOptions& opts) {
    CheckResult result;
    result.name = name;

    // Analytic pass.
    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        leaves.reserve(inputs.size());
        for (const Tensor& t : inputs) leaves.push_back(tape.input(t, true));
        ad::Var root = builder(tape, leaves);
        if (root->value.numel() != 1)
            throw ShapeError("gradcheck: builder must return a scalar");
        tape.backward(root);
        for (ad::Var leaf : leaves) {
            analytic.push_back(leaf->grad.data.empty() ? Tensor::zeros(leaf->value.shape)
                                                       : leaf->grad);
        }
    }

    auto eval = [&]() {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        leaves.reserve(inputs.size());
        for (const Tensor& t : inputs) leaves.push_back(tape.input(t, false));
        return builder(tape, leaves)->value[0];
    };

    Rng rng(Rng::mix(opts.seed, 0x67AD));
    for (size_t which = 0; which < inputs.size(); ++which) {
        Tensor& t = inputs[which];
        const int64_t numel = t.numel();
        std::vector<int64_t> coords;
        if (opts.max_coords < 0 || numel <= opts.max_coords) {
            coords.resize(static_cast<size_t>(numel));
            for (int64_t i = 0; i < numel; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int i = 0; i < opts.max_coords; ++i)
                coords.push_back(rng.below(numel));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (int64_t idx : coords) {
            const double saved = t[idx];
            t[idx] = saved + opts.step;
            const double fplus = eval();
            t[idx] = saved - opts.step;
            const double fminus = eval();
            t[idx] = saved;
            const double fd = (fplus - fminus) / (2.0 * opts.step);
            const double an = analytic[which][idx];
            const double denom = std::max({std::abs(an), std::abs(fd), opts.floor});
            const double rel = std::abs(an - fd) / denom;
            result.max_rel_err = std::max(result.max_rel_err, rel);
            ++result.coords_checked;
        }
    }
    result.pass = result.max_rel_err < opts.tolerance;
    return result;
}

CheckResult check_parameter_gradients(const std::string& name,
                                      const std::vector<Tensor*>& params,
                                      const ModelBuilder& builder,
                                      const CheckOptions& opts) {
    CheckResult result;
    result.name = name;

    std::vector<Tensor> analytic;
    {
        ad::Tape tape;
        ad::Var root = builder(tape);
        if (root->value.numel() != 1)
            throw ShapeError("gradcheck: builder must return a scalar");
        tape.backward(root);
        for (Tensor* p : params) {
            const Tensor* g = tape.grad_of(p);
            analytic.push_back(g ? *g : Tensor::zeros(p->shape));
        }
    }

    auto eval = [&]() {
        ad::Tape tape;
        return builder(tape)->value[0];
    };

    Rng rng(Rng::mix(opts.seed, 0x67AE));
    for (size_t which = 0; which < params.size(); ++which) {
        Tensor& t = *params[which];
        const int64_t numel = t.numel();
        std::vector<int64_t> coords;
        if (opts.max_coords < 0 || numel <= opts.max_coords) {
            coords.resize(static_cast<size_t>(numel));
            for (int64_t i = 0; i < numel; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (int i = 0; i < opts.max_coords; ++i) coords.push_back(rng.below(numel));
            std::sort(coords.begin(), coords.end());
            coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
        }
        for (int64_t idx : coords) {
            const double saved = t[idx];
            t[idx] = saved + opts.step;
            const double fplus = eval();
            t[idx] = saved - opts.step;
            const double fminus = eval();
            t[idx] = saved;
            const double fd = (fplus - fminus) / (2.0 * opts.step);
            const double an = analytic[which][idx];
            const double denom = std::max({std::abs(an), std::abs(fd), opts.floor});
            result.max_rel_err = std::max(result.max_rel_err, std::abs(an - fd) / denom);
            ++result.coords_checked;
        }
    }
    result.pass = result.max_rel_err < opts.tolerance;
    return result;
}

// ============================================================================
// The full suite behind `sagan gradcheck`
// ============================================================================

namespace {

Tensor random_params(Rng& rng, geometry::TransformKind kind, int64_t n) {
    const int np = geometry::param_count(kind);
    Tensor out({n, np});
    for (int64_t b = 0; b < n; ++b) {
        if (kind == geometry::TransformKind::Tps) {
            for (int i = 0; i < np; ++i) out.at(b, i) = rng.uniform(-0.15, 0.15);
            continue;
        }
        for (;;) {
            std::vector<double> p = geometry::identity_params(kind);
            p[0] += rng.uniform(-0.25, 0.25);
            p[1] += rng.uniform(-0.25, 0.25);
            p[2] += rng.uniform(-0.3, 0.3);
            p[3] += rng.uniform(-0.25, 0.25);
            p[4] += rng.uniform(-0.25, 0.25);
            p[5] += rng.uniform(-0.3, 0.3);
            if (kind == geometry::TransformKind::Homography) {
                p[6] += rng.uniform(-0.1, 0.1);
                p[7] += rng.uniform(-0.1, 0.1);
            }
            try {
                geometry::make_transform(kind, p);
                geometry::invert(geometry::Transform{kind, p});
            } catch (const Error&) {
                continue;
            }
            for (int i = 0; i < np; ++i) out.at(b, i) = p[static_cast<size_t>(i)];
            break;
        }
    }
    return out;
}

Tensor uniform_tensor(Rng& rng, std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    rng.fill_uniform(t, lo, hi);
    return t;
}

}  // namespace

std::vector<CheckResult> run_all_checks(uint64_t seed) {
    using ad::Tape;
    using ad::Var;
    std::vector<CheckResult> out;
    Rng rng(Rng::mix(seed, 0xF00D));

    // ---- warp w.r.t. image and params, every kind ---------------------------
    Tensor img8 = uniform_tensor(rng, {2, 2, 8, 8}, -1, 1);
    for (auto kind : {geometry::TransformKind::Affine, geometry::TransformKind::Homography,
                      geometry::TransformKind::Tps}) {
        Tensor params = random_params(rng, kind, 2);
        std::string label = std::string("warp[") + geometry::kind_name(kind) + "]";
        out.push_back(check_gradients(
            label, {img8, params}, [kind](Tape& g, const std::vector<Var>& in) {
                return g.mean_all(g.square(
                    g.warp_by_transform(in[0], in[1], kind, 8, 8, 0.1)));
            }));
    }

    // ---- transform inversion -------------------------------------------------
    for (auto kind : {geometry::TransformKind::Affine, geometry::TransformKind::Homography}) {
        Tensor params = random_params(rng, kind, 3);
        std::string label = std::string("invert[") + geometry::kind_name(kind) + "]";
        out.push_back(check_gradients(
            label, {params}, [kind](Tape& g, const std::vector<Var>& in) {
                return g.mean_all(g.square(g.invert_transform(in[0], kind)));
            }));
    }

    // ---- losses ---------------------------------------------------------------
    Tensor xa = uniform_tensor(rng, {2, 3, 8, 8}, -1, 1);
    Tensor xb = uniform_tensor(rng, {2, 3, 8, 8}, -1, 1);
    Tensor mask = uniform_tensor(rng, {2, 1, 8, 8}, 0, 1);
    out.push_back(check_gradients("pcl", {xa, xb}, [](Tape& g, const std::vector<Var>& in) {
        return losses::pcl(g, in[0], in[1]);
    }));
    out.push_back(check_gradients("mask_identity", {xa, xb, mask},
                                  [](Tape& g, const std::vector<Var>& in) {
        return losses::mask_identity_loss(g, in[0], in[1], in[2]);
    }));
    Tensor ph1 = random_params(rng, geometry::TransformKind::Homography, 2);
    Tensor ph2 = random_params(rng, geometry::TransformKind::Homography, 2);
    out.push_back(check_gradients("scl", {ph1, ph2}, [](Tape& g, const std::vector<Var>& in) {
        return losses::scl(g, in[0], in[1], geometry::TransformKind::Homography);
    }));
    Tensor e1 = uniform_tensor(rng, {3, 8}, -1, 1);
    Tensor e2 = uniform_tensor(rng, {3, 8}, -1, 1);
    out.push_back(check_gradients("siamese[pos]", {e1, e2},
                                  [](Tape& g, const std::vector<Var>& in) {
        return losses::siamese_loss(g, 1, in[0], in[1], 2.0);
    }));
    out.push_back(check_gradients("siamese[neg]", {e1, e2},
                                  [](Tape& g, const std::vector<Var>& in) {
        return losses::siamese_loss(g, 0, in[0], in[1], 2.0);
    }));
    Tensor s1 = uniform_tensor(rng, {4, 1}, -1, 1);
    Tensor s2 = uniform_tensor(rng, {4, 1}, -1, 1);
    Tensor s3 = uniform_tensor(rng, {4, 1}, -1, 1);
    Tensor s4 = uniform_tensor(rng, {4, 1}, -1, 1);
    out.push_back(check_gradients("critic_adv", {s1, s2, s3, s4},
                                  [](Tape& g, const std::vector<Var>& in) {
        return losses::critic_adv_loss(g, in[0], in[1], in[2], in[3]);
    }));
    out.push_back(check_gradients("gen_adv", {s1, s2},
                                  [](Tape& g, const std::vector<Var>& in) {
        return losses::gen_adv_loss(g, in[0], in[1]);
    }));
    out.push_back(check_gradients("cycle+total", {s1, s2, s3, s4},
                                  [](Tape& g, const std::vector<Var>& in) {
        losses::LossWeights w;
        Var cyc = losses::cycle_loss(g, g.mean_all(in[0]), g.mean_all(in[1]), w.lambda_pcl);
        return losses::total_gen_loss(g, g.mean_all(in[2]), cyc, g.mean_all(in[3]),
                                      g.mean_all(in[0]), w);
    }));

    // ---- full forward cycle over every trainable parameter --------------------
    {
        nets::NetConfig net;
        net.image_size = 8;
        net.base = 4;
        net.code_dim = 4;
        net.emb_dim = 8;
        nets::ModelSet models;
        models.init(net, Rng::mix(seed, 0xCAFE));

        Tensor bx = uniform_tensor(rng, {2, 3, 8, 8}, -1, 1);
        Tensor by = uniform_tensor(rng, {2, 3, 8, 8}, -1, 1);
        Tensor mx = Tensor::full({2, 1, 8, 8}, 1.0);
        for (int64_t i = 0; i < mx.numel(); ++i)
            if (rng.uniform() < 0.4) mx[i] = 0.0;
        Tensor my = mx;
        auto code = nets::sample_code(net.code_dim, Rng::mix(seed, 0xC0DE));
        losses::LossWeights w;

        auto builder = [&](Tape& g) -> Var {
            Var vx = g.constant(bx);
            Var vmx = g.constant(mx);
            Var vy = g.constant(by);
            auto art = train::forward_cycle(g, models, train::Direction::XtoY, vx, vmx,
                                            code, w, true);
            Var dtf = models.dt.forward(g, art.t_fwd);
            Var g_adv = losses::gen_adv_loss(g, models.d1.forward(g, art.x_adp), dtf);
            Var e_x = models.sia.forward(g, vx);
            Var e_xadp = models.sia.forward(g, art.x_adp);
            Var e_y = models.sia.forward(g, vy);
            Var siam = g.scale(g.add(losses::siamese_loss(g, 1, e_x, e_xadp, w.siamese_margin),
                                     losses::siamese_loss(g, 0, e_x, e_y, w.siamese_margin)),
                               0.5);
            return losses::total_gen_loss(g, g_adv, art.cyc_v, art.idt_v, siam, w);
        };
        std::vector<Tensor*> params;
        for (auto& [name, t] : models.named_params()) params.push_back(t);
        CheckOptions opts;
        opts.max_coords = 10;
        opts.seed = Rng::mix(seed, 0xFE11);
        out.push_back(check_parameter_gradients("forward_cycle[all params]", params,
                                                builder, opts));
    }
    return out;
}

}  // namespace sagan::gradcheck
