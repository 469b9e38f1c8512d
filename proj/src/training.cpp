#include "sagan/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sagan/common.hpp"
#include "sagan/evaluation.hpp"
#include "sagan/image_io.hpp"

namespace fs = std::filesystem;

namespace sagan::train {

using ad::Tape;
using ad::Var;
using losses::GradBuffer;
using losses::LossReport;

void TrainConfig::validate() const {
    if (steps < 1 || batch_size < 1 || critic_steps < 1 || M < 1)
        throw ValueError("train config: counts must be positive");
    if (lr_critic <= 0 || lr_gen <= 0) throw ValueError("train config: learning rates must be > 0");
    if (clip_value <= 0) throw ValueError("train config: clip value must be > 0");
    weights.validate();
    net.validate();
}

// ============================================================================
// Cycle forward
// ============================================================================

CycleArtifacts forward_cycle(Tape& g, nets::ModelSet& models, Direction dir,
                             Var imgs, Var masks, const nets::SpatialCode& code,
                             const losses::LossWeights& w, bool disentangled) {
    nets::LocalizationNet& loc_fwd = dir == Direction::XtoY ? models.s1_loc : models.s2_loc;
    nets::LocalizationNet& loc_back = dir == Direction::XtoY ? models.s2_loc : models.s1_loc;
    nets::Generator& gen_fwd = dir == Direction::XtoY ? models.g1 : models.g2;
    nets::Generator& gen_back = dir == Direction::XtoY ? models.g2 : models.g1;
    const auto kind = models.cfg.kind;
    const auto& s = imgs->value.shape;

    CycleArtifacts art;
    auto stm = nets::stm_forward(g, loc_fwd, imgs, masks, code);
    art.x_s = stm.warped;
    art.mask_s = stm.warped_mask;
    art.t_fwd = stm.params;
    art.x_adp = gen_fwd.forward(g, art.x_s);

    // path 1: the reverse STM localizes the adapted image with the same code
    art.t_back_path1 =
        loc_back.forward(g, g.concat_channels(art.x_adp, art.mask_s), code);

    if (disentangled) {
        art.scl_v = losses::scl(g, art.t_fwd, art.t_back_path1, kind);
        // path 2: exact spatial recovery via the closed-form inverse
        Var inv = g.invert_transform(art.t_fwd, kind);
        Var rewarped = g.warp_by_transform(art.x_adp, inv, kind, s[2], s[3],
                                           models.cfg.fill);
        art.x_prime = gen_back.forward(g, rewarped);
        art.pcl_v = losses::pcl(g, art.x_prime, imgs);
    } else {
        // recombined naive cycle: spatial recovery rides inside the image
        // reconstruction; the spatial term is identically zero
        Var rewarped = g.warp_by_transform(art.x_adp, art.t_back_path1, kind,
                                           s[2], s[3], models.cfg.fill);
        art.x_prime = gen_back.forward(g, rewarped);
        art.scl_v = g.constant(Tensor::scalar(0.0));
        art.pcl_v = losses::pcl(g, art.x_prime, imgs);
    }
    art.cyc_v = losses::cycle_loss(g, art.scl_v, art.pcl_v, w.lambda_pcl);
    art.idt_v = losses::mask_identity_loss(g, art.x_adp, art.x_s, art.mask_s);
    return art;
}

// ============================================================================
// Trainer
// ============================================================================

namespace {

Tensor vstack_rows(const Tensor& a, const Tensor& b) {
    Tensor out({a.dim(0) + b.dim(0), a.dim(1)});
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.numel());
    return out;
}

constexpr uint64_t kTagCode = 0xC0;
constexpr uint64_t kTagGp1 = 0x61;
constexpr uint64_t kTagGp2 = 0x62;
constexpr uint64_t kTagGpT = 0x63;

}  // namespace

Trainer::Trainer(nets::ModelSet& models, const TrainConfig& cfg,
                 const data::Dataset& dx, const data::Dataset& dy)
    : models_(models),
      cfg_(cfg),
      dx_(dx),
      dy_(dy),
      sampler_x_(dx.size(), Rng::mix(cfg.seed, 0xA)),
      sampler_y_(dy.size(), Rng::mix(cfg.seed, 0xB)),
      gen_opt_(models.generator_params(), {cfg.lr_gen, 0.5, 0.999, 1e-8}),
      critic_opt_(models.critic_params(), {cfg.lr_critic, 0.5, 0.999, 1e-8}) {
    cfg_.validate();
    if (dx.size() < cfg.batch_size || dy.size() < cfg.batch_size)
        throw ValueError("datasets smaller than the batch size");
    set_num_threads(cfg.threads);
}

LossReport Trainer::step(int64_t step_index) {
    const int64_t b = cfg_.batch_size;
    const auto kind = models_.cfg.kind;
    LossReport report;

    // ---- critic phase -------------------------------------------------------
    for (int k = 0; k < cfg_.critic_steps; ++k) {
        const int64_t draw = step_index * (cfg_.critic_steps + 1) + k;
        auto bx = dx_.gather(sampler_x_.draw(draw, b));
        auto by = dy_.gather(sampler_y_.draw(draw, b));
        auto code = nets::sample_code(models_.cfg.code_dim,
                                      Rng::mix(Rng::mix(cfg_.seed, kTagCode),
                                               static_cast<uint64_t>(draw)));

        Tape g;
        Var vx = g.constant(bx.values);
        Var mx = g.constant(bx.mask);
        Var vy = g.constant(by.values);
        Var my = g.constant(by.mask);

        auto s1 = nets::stm_forward(g, models_.s1_loc, vx, mx, code);
        Var x_adp = g.detach(models_.g1.forward(g, s1.warped));
        auto s2 = nets::stm_forward(g, models_.s2_loc, vy, my, code);
        Var y_adp = g.detach(models_.g2.forward(g, s2.warped));
        Var t_xy = g.detach(s1.params);
        Var t_yx = g.detach(s2.params);

        Var d1_fake = models_.d1.forward(g, x_adp);
        Var d1_real = models_.d1.forward(g, vy);
        Var d2_fake = models_.d2.forward(g, y_adp);
        Var d2_real = models_.d2.forward(g, vx);

        Var zero = g.constant(Tensor({1, 1}, {0.0}));
        Var dtf_x = zero, dti_x = zero, dtf_y = zero, dti_y = zero;
        Var inv_txy = nullptr, inv_tyx = nullptr;
        if (cfg_.use_dt) {
            inv_tyx = g.invert_transform(t_yx, kind);
            inv_txy = g.invert_transform(t_xy, kind);
            dtf_x = models_.dt.forward(g, t_xy);
            dti_x = models_.dt.forward(g, inv_tyx);
            dtf_y = models_.dt.forward(g, t_yx);
            dti_y = models_.dt.forward(g, inv_txy);
        }
        Var d_loss = g.add(losses::critic_adv_loss(g, d1_fake, d1_real, dtf_x, dti_x),
                           losses::critic_adv_loss(g, d2_fake, d2_real, dtf_y, dti_y));
        g.backward(d_loss);

        GradBuffer grads(models_.critic_params());
        grads.accumulate_from(g);

        double gp_total = 0.0;
        if (cfg_.lipschitz == Lipschitz::Penalty) {
            auto d1_fn = [this](Tape& t, Var in) { return models_.d1.forward(t, in); };
            auto d2_fn = [this](Tape& t, Var in) { return models_.d2.forward(t, in); };
            Rng rng1 = Rng::derive(cfg_.seed, kTagGp1, static_cast<uint64_t>(draw));
            Rng rng2 = Rng::derive(cfg_.seed, kTagGp2, static_cast<uint64_t>(draw));
            gp_total += losses::gradient_penalty_apply(d1_fn, by.values, x_adp->value,
                                                       rng1, cfg_.weights.gp_weight, grads);
            gp_total += losses::gradient_penalty_apply(d2_fn, bx.values, y_adp->value,
                                                       rng2, cfg_.weights.gp_weight, grads);
            if (cfg_.use_dt) {
                auto dt_fn = [this](Tape& t, Var in) { return models_.dt.forward(t, in); };
                Rng rngt = Rng::derive(cfg_.seed, kTagGpT, static_cast<uint64_t>(draw));
                Tensor real = vstack_rows(inv_tyx->value, inv_txy->value);
                Tensor fake = vstack_rows(t_xy->value, t_yx->value);
                gp_total += losses::gradient_penalty_apply(dt_fn, real, fake, rngt,
                                                           cfg_.weights.gp_weight, grads);
            }
        }
        critic_opt_.step(grads);
        if (cfg_.lipschitz == Lipschitz::Clip)
            optim::clip_params(models_.critic_params(), cfg_.clip_value);

        if (k == cfg_.critic_steps - 1) {
            report.d_adv = d_loss->value[0];
            report.gp = gp_total;
        }
    }

    // ---- generator phase ----------------------------------------------------
    {
        const int64_t draw = step_index * (cfg_.critic_steps + 1) + cfg_.critic_steps;
        auto bx = dx_.gather(sampler_x_.draw(draw, b));
        auto by = dy_.gather(sampler_y_.draw(draw, b));
        auto code = nets::sample_code(models_.cfg.code_dim,
                                      Rng::mix(Rng::mix(cfg_.seed, kTagCode),
                                               static_cast<uint64_t>(draw)));

        Tape g;
        Var vx = g.constant(bx.values);
        Var mx = g.constant(bx.mask);
        Var vy = g.constant(by.values);
        Var my = g.constant(by.mask);

        auto cx = forward_cycle(g, models_, Direction::XtoY, vx, mx, code,
                                cfg_.weights, cfg_.disentangled);
        auto cy = forward_cycle(g, models_, Direction::YtoX, vy, my, code,
                                cfg_.weights, cfg_.disentangled);

        Var zero = g.constant(Tensor({1, 1}, {0.0}));
        Var dtf_x = cfg_.use_dt ? models_.dt.forward(g, cx.t_fwd) : zero;
        Var dtf_y = cfg_.use_dt ? models_.dt.forward(g, cy.t_fwd) : zero;
        Var g_adv_x = losses::gen_adv_loss(g, models_.d1.forward(g, cx.x_adp), dtf_x);
        Var g_adv_y = losses::gen_adv_loss(g, models_.d2.forward(g, cy.x_adp), dtf_y);

        // Siamese pairs: positives (x, x_s), (x, x_adp); negatives (x, y_s), (x, y)
        const double m = cfg_.weights.siamese_margin;
        Var e_x = models_.sia.forward(g, vx);
        Var e_y = models_.sia.forward(g, vy);
        Var e_xs = models_.sia.forward(g, cx.x_s);
        Var e_xadp = models_.sia.forward(g, cx.x_adp);
        Var e_ys = models_.sia.forward(g, cy.x_s);
        Var e_yadp = models_.sia.forward(g, cy.x_adp);
        Var siam_x = g.scale(
            g.add(g.add(losses::siamese_loss(g, 1, e_x, e_xs, m),
                        losses::siamese_loss(g, 1, e_x, e_xadp, m)),
                  g.add(losses::siamese_loss(g, 0, e_x, e_ys, m),
                        losses::siamese_loss(g, 0, e_x, e_y, m))),
            0.25);
        Var siam_y = g.scale(
            g.add(g.add(losses::siamese_loss(g, 1, e_y, e_ys, m),
                        losses::siamese_loss(g, 1, e_y, e_yadp, m)),
                  g.add(losses::siamese_loss(g, 0, e_y, e_xs, m),
                        losses::siamese_loss(g, 0, e_y, e_x, m))),
            0.25);

        Var total_x = losses::total_gen_loss(g, g_adv_x, cx.cyc_v, cx.idt_v, siam_x,
                                             cfg_.weights);
        Var total_y = losses::total_gen_loss(g, g_adv_y, cy.cyc_v, cy.idt_v, siam_y,
                                             cfg_.weights);
        Var total = g.add(total_x, total_y);
        g.backward(total);

        GradBuffer grads(models_.generator_params());
        grads.accumulate_from(g);
        gen_opt_.step(grads);

        report.g_adv = g_adv_x->value[0] + g_adv_y->value[0];
        report.scl = cx.scl_v->value[0] + cy.scl_v->value[0];
        report.pcl = cx.pcl_v->value[0] + cy.pcl_v->value[0];
        report.cyc = cx.cyc_v->value[0] + cy.cyc_v->value[0];
        report.idt = cx.idt_v->value[0] + cy.idt_v->value[0];
        report.siam = siam_x->value[0] + siam_y->value[0];
        report.total_g = total->value[0];
    }
    report.total_d = report.d_adv + cfg_.weights.gp_weight * report.gp;
    return report;
}

// ============================================================================
// Checkpoint plumbing
// ============================================================================

namespace {

void append_opt_state(ckpt::Archive& a, const std::string& prefix, optim::Adam& opt,
                      const nets::NamedParams& named) {
    // Adam's parameter order must match the model's named order for the nets
    // it covers; match by pointer identity.
    auto index_of = [&](Tensor* t) -> std::string {
        for (const auto& [name, ptr] : named)
            if (ptr == t) return name;
        throw ValueError("optimizer parameter missing from the named set");
    };
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        std::string name = index_of(params[i]);
        a.entries.emplace_back(prefix + ".m." + name, opt.m()[i]);
        a.entries.emplace_back(prefix + ".v." + name, opt.v()[i]);
    }
    a.entries.emplace_back(prefix + ".t",
                           Tensor::scalar(static_cast<double>(opt.t())));
}

void restore_opt_state(const ckpt::Archive& a, const std::string& prefix,
                       optim::Adam& opt, const nets::NamedParams& named) {
    auto index_of = [&](Tensor* t) -> std::string {
        for (const auto& [name, ptr] : named)
            if (ptr == t) return name;
        throw ValueError("optimizer parameter missing from the named set");
    };
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        std::string name = index_of(params[i]);
        const Tensor* m = a.find(prefix + ".m." + name);
        const Tensor* v = a.find(prefix + ".v." + name);
        if (!m || !v) throw IoError("checkpoint: missing optimizer state for " + name);
        opt.m()[i] = *m;
        opt.v()[i] = *v;
    }
    const Tensor* t = a.find(prefix + ".t");
    if (!t) throw IoError("checkpoint: missing optimizer step counter");
    opt.set_t(static_cast<int64_t>((*t)[0]));
}

}  // namespace

ckpt::Archive make_checkpoint(nets::ModelSet& models, optim::Adam& gen_opt,
                              optim::Adam& critic_opt, int64_t step,
                              const std::string& config_text, uint64_t config_hash) {
    ckpt::Archive a;
    a.step = step;
    a.config_text = config_text;
    a.config_hash = config_hash;
    auto named = models.named_params();
    for (const auto& [name, t] : named) a.entries.emplace_back("model." + name, *t);
    append_opt_state(a, "opt.gen", gen_opt, named);
    append_opt_state(a, "opt.critic", critic_opt, named);
    return a;
}

int64_t restore_checkpoint(const ckpt::Archive& a, nets::ModelSet& models,
                           optim::Adam* gen_opt, optim::Adam* critic_opt) {
    auto named = models.named_params();
    for (auto& [name, t] : named) {
        const Tensor* stored = a.find("model." + name);
        if (!stored) throw IoError("checkpoint: missing parameter " + name);
        if (stored->shape != t->shape)
            throw IoError("checkpoint: shape mismatch for " + name);
        *t = *stored;
    }
    if (gen_opt) restore_opt_state(a, "opt.gen", *gen_opt, named);
    if (critic_opt) restore_opt_state(a, "opt.critic", *critic_opt, named);
    return a.step;
}

// ============================================================================
// Full training loop
// ============================================================================

namespace {

std::string csv_row(int64_t step, const LossReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(step), r.d_adv, r.g_adv, r.scl, r.pcl, r.cyc,
                  r.idt, r.siam, r.gp, r.total_g, r.total_d);
    return buf;
}

Tensor slice_item(const Tensor& batch, int64_t i) {
    const int64_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor out({c, h, w});
    std::copy_n(batch.data.begin() + i * c * h * w, c * h * w, out.data.begin());
    return out;
}

void write_grid(nets::ModelSet& models, const TrainConfig& cfg,
                const data::Dataset& dx, const data::Dataset& dy, int64_t step,
                const std::string& dir) {
    const int64_t rows = std::min<int64_t>(4, std::min(dx.size(), dy.size()));
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < rows; ++i) idx.push_back(i);
    auto bx = dx.gather(idx);
    auto by = dy.gather(idx);
    auto outs = adapt(models, bx.values, bx.mask, cfg.M, Rng::mix(cfg.seed, 0x9819));

    // one warped view for the grid
    Tape g;
    auto code = nets::sample_code(models.cfg.code_dim, Rng::mix(cfg.seed, 0x9819));
    auto stm = nets::stm_forward(g, models.s1_loc, g.constant(bx.values),
                                 g.constant(bx.mask), code);

    std::vector<std::vector<Tensor>> cells;
    for (int64_t r = 0; r < rows; ++r) {
        std::vector<Tensor> row;
        row.push_back(slice_item(bx.values, r));
        row.push_back(slice_item(stm.warped->value, r));
        for (const auto& out : outs) row.push_back(slice_item(out.images, r));
        row.push_back(slice_item(by.values, r));
        cells.push_back(std::move(row));
    }
    char name[64];
    std::snprintf(name, sizeof(name), "step_%lld_grid.png", static_cast<long long>(step));
    imgio::save_grid(cells, (fs::path(dir) / name).string());
}

}  // namespace

TrainResult train(nets::ModelSet& models, const TrainConfig& cfg,
                  const data::Dataset& dx, const data::Dataset& dy,
                  const std::string& run_dir, const std::string& config_text,
                  uint64_t config_hash, const data::SyntheticPair* eval_pair,
                  const std::string& resume_from) {
    cfg.validate();
    fs::create_directories(run_dir);
    fs::create_directories(fs::path(run_dir) / "checkpoints");
    fs::create_directories(fs::path(run_dir) / "grids");

    Trainer trainer(models, cfg, dx, dy);
    int64_t start_step = 0;
    if (!resume_from.empty()) {
        auto a = ckpt::load(resume_from);
        if (a.config_hash != config_hash)
            throw IoError("resume: checkpoint config hash differs from the current config");
        start_step = restore_checkpoint(a, models, &trainer.gen_opt(), &trainer.critic_opt());
    }

    const std::string log_path = (fs::path(run_dir) / "train_log.csv").string();
    std::ofstream log(log_path, start_step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open " + log_path);
    if (start_step == 0)
        log << "step,d_adv,g_adv,scl,pcl,cyc,idt,siam,gp,total_g,total_d\n";

    const std::string eval_path = (fs::path(run_dir) / "eval_log.csv").string();
    std::ofstream eval_log;
    if (eval_pair) {
        eval_log.open(eval_path, start_step == 0 ? std::ios::trunc : std::ios::app);
        if (start_step == 0)
            eval_log << "step,corner_mean_px,corner_median_px,pos_dist,neg_dist\n";
    }

    TrainResult result;
    for (int64_t s = start_step; s < cfg.steps; ++s) {
        LossReport report;
        try {
            report = trainer.step(s);
        } catch (const Error& e) {
            auto snap = make_checkpoint(models, trainer.gen_opt(), trainer.critic_opt(),
                                        s, config_text, config_hash);
            std::string snap_path =
                (fs::path(run_dir) / "checkpoints" / "abort_snapshot.ckpt").string();
            ckpt::save(snap_path, snap);
            throw NumericError(std::string("training aborted at step ") +
                               std::to_string(s) + ": " + e.what() +
                               " (snapshot: " + snap_path + ")");
        }
        if (!report.finite()) {
            auto snap = make_checkpoint(models, trainer.gen_opt(), trainer.critic_opt(),
                                        s, config_text, config_hash);
            std::string snap_path =
                (fs::path(run_dir) / "checkpoints" / "abort_snapshot.ckpt").string();
            ckpt::save(snap_path, snap);
            throw NumericError("non-finite loss at step " + std::to_string(s) +
                               " (snapshot: " + snap_path + ")");
        }
        log << csv_row(s, report);
        result.last_report = report;

        const int64_t done = s + 1;
        if (eval_pair && (done % cfg.eval_every == 0 || done == cfg.steps)) {
            auto rec = eval::homography_recovery(models, eval_pair->x, eval_pair->gt,
                                                 Rng::mix(cfg.seed, 0xE7A1));
            auto bx = data::sample_batch(eval_pair->x, std::min<int64_t>(32, eval_pair->x.size()),
                                         Rng::mix(cfg.seed, 0xE7A2));
            auto by = data::sample_batch(eval_pair->y, std::min<int64_t>(32, eval_pair->y.size()),
                                         Rng::mix(cfg.seed, 0xE7A3));
            auto [pos, neg] = eval::identity_preservation(models, bx, by,
                                                          Rng::mix(cfg.seed, 0xE7A4));
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                          static_cast<long long>(done), rec.mean_px, rec.median_px, pos, neg);
            eval_log << buf;
            eval_log.flush();
        }
        if (done % cfg.grid_every == 0 || done == cfg.steps)
            write_grid(models, cfg, dx, dy, done, (fs::path(run_dir) / "grids").string());
        if (done % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "ckpt_%lld.bin", static_cast<long long>(done));
            ckpt::save((fs::path(run_dir) / "checkpoints" / name).string(),
                       make_checkpoint(models, trainer.gen_opt(), trainer.critic_opt(),
                                       done, config_text, config_hash));
        }
        log.flush();
    }

    result.steps_run = cfg.steps - start_step;
    result.final_checkpoint = (fs::path(run_dir) / "checkpoints" / "ckpt_final.bin").string();
    ckpt::save(result.final_checkpoint,
               make_checkpoint(models, trainer.gen_opt(), trainer.critic_opt(),
                               cfg.steps, config_text, config_hash));
    return result;
}

std::vector<AdaptOutput> adapt(nets::ModelSet& models, const Tensor& imgs,
                               const Tensor& masks, int m, uint64_t seed) {
    if (m < 1) throw ValueError("adapt: M must be >= 1");
    std::vector<AdaptOutput> out;
    out.reserve(static_cast<size_t>(m));
    for (int k = 0; k < m; ++k) {
        auto code = nets::sample_code(models.cfg.code_dim,
                                      Rng::mix(seed, static_cast<uint64_t>(k)));
        Tape g;
        auto stm = nets::stm_forward(g, models.s1_loc, g.constant(imgs),
                                     g.constant(masks), code);
        Var adapted = models.g1.forward(g, stm.warped);
        out.push_back({adapted->value, stm.params->value});
    }
    return out;
}

}  // namespace sagan::train
