#ifndef SAGAN_TRAINING_HPP
#define SAGAN_TRAINING_HPP

#include <memory>
#include <string>
#include <vector>

#include "sagan/checkpoint.hpp"
#include "sagan/data.hpp"
#include "sagan/losses.hpp"
#include "sagan/networks.hpp"
#include "sagan/optim.hpp"

namespace sagan::train {

enum class Lipschitz { Penalty, Clip };

struct TrainConfig {
    int64_t steps = 3000;
    int64_t batch_size = 16;
    int critic_steps = 5;              // critic updates per generator update
    double lr_critic = 1e-4;
    double lr_gen = 2e-4;
    losses::LossWeights weights;
    int M = 1;                         // adaptation outputs per input
    uint64_t seed = 0;
    nets::NetConfig net;
    Lipschitz lipschitz = Lipschitz::Penalty;
    double clip_value = 0.01;
    bool disentangled = true;          // false: recombined naive cycle loss
    bool use_dt = true;                // spatial critic on/off
    int64_t eval_every = 500;
    int64_t checkpoint_every = 1000;
    int64_t grid_every = 500;
    int threads = 2;

    void validate() const;
};

enum class Direction { XtoY, YtoX };

// One direction of the Fig-style cycle, with the two-path decomposition:
// path 1 re-localizes the adapted image (spatial recovery, SCL only);
// path 2 warps the adapted image back with the inverse transform and maps it
// through the reverse generator (pixel recovery, PCL only).
struct CycleArtifacts {
    ad::Var x_s, mask_s;       // spatially adapted image + its mask
    ad::Var t_fwd;             // predicted forward transform params (N,P)
    ad::Var x_adp;             // pixel-adapted image
    ad::Var t_back_path1;      // reverse localization on x_adp (same code)
    ad::Var x_prime;           // path-2 recovered image
    ad::Var scl_v, pcl_v, cyc_v, idt_v;
};

CycleArtifacts forward_cycle(ad::Tape& g, nets::ModelSet& models, Direction dir,
                             ad::Var imgs, ad::Var masks,
                             const nets::SpatialCode& code,
                             const losses::LossWeights& w, bool disentangled);

// ----------------------------------------------------------------------------
// Trainer: critic_steps critic updates (D1, D2, D_T) followed by one joint
// generator update (S1, S2, G1, G2, SiaNet) per step. All randomness is
// derived from (seed, step, phase), so runs resume bit-exactly.
// ----------------------------------------------------------------------------

class Trainer {
public:
    Trainer(nets::ModelSet& models, const TrainConfig& cfg,
            const data::Dataset& dx, const data::Dataset& dy);

    losses::LossReport step(int64_t step_index);

    optim::Adam& gen_opt() { return gen_opt_; }
    optim::Adam& critic_opt() { return critic_opt_; }
    int64_t critic_updates() const { return critic_opt_.t(); }
    int64_t generator_updates() const { return gen_opt_.t(); }

private:
    nets::ModelSet& models_;
    TrainConfig cfg_;
    const data::Dataset& dx_;
    const data::Dataset& dy_;
    data::EpochSampler sampler_x_, sampler_y_;
    optim::Adam gen_opt_, critic_opt_;
};

// Checkpoint plumbing shared by the training loop and the CLI.
ckpt::Archive make_checkpoint(nets::ModelSet& models, optim::Adam& gen_opt,
                              optim::Adam& critic_opt, int64_t step,
                              const std::string& config_text, uint64_t config_hash);
int64_t restore_checkpoint(const ckpt::Archive& archive, nets::ModelSet& models,
                           optim::Adam* gen_opt, optim::Adam* critic_opt);

struct TrainResult {
    int64_t steps_run = 0;
    std::string final_checkpoint;
    losses::LossReport last_report;
};

// Full run with CSV logs, image grids, periodic checkpoints, and (when a
// synthetic pair is supplied) periodic recovery/identity evaluation.
// A non-finite report aborts with a diagnostic snapshot checkpoint.
TrainResult train(nets::ModelSet& models, const TrainConfig& cfg,
                  const data::Dataset& dx, const data::Dataset& dy,
                  const std::string& run_dir, const std::string& config_text,
                  uint64_t config_hash,
                  const data::SyntheticPair* eval_pair = nullptr,
                  const std::string& resume_from = "");

struct AdaptOutput {
    Tensor images;   // (N,C,H,W)
    Tensor params;   // (N,P)
};

// M adapted outputs from M i.i.d. spatial codes; deterministic under seed.
std::vector<AdaptOutput> adapt(nets::ModelSet& models, const Tensor& imgs,
                               const Tensor& masks, int m, uint64_t seed);

}  // namespace sagan::train

#endif  // SAGAN_TRAINING_HPP
