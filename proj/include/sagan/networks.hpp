#ifndef SAGAN_NETWORKS_HPP
#define SAGAN_NETWORKS_HPP

#include <string>
#include <utility>
#include <vector>

#include "sagan/rng.hpp"
#include "sagan/tape.hpp"

namespace sagan::nets {

// Where the spatial code enters the localization network: tiled over the
// input planes (default) or concatenated to the flattened trunk features.
enum class CodeInjection { Input, Feature };

struct NetConfig {
    int64_t image_size = 32;       // H == W, divisible by 8
    int64_t channels = 3;          // image channels (mask channel excluded)
    int base = 16;                 // trunk width
    int code_dim = 8;
    int emb_dim = 32;
    geometry::TransformKind kind = geometry::TransformKind::Homography;
    CodeInjection injection = CodeInjection::Input;
    double fill = 0.0;             // out-of-frame warp fill

    void validate() const;
};

// Random conditioning vector for the localization networks. Resampling with
// the same seed reproduces the same values.
struct SpatialCode {
    Tensor values;     // (code_dim)
    uint64_t seed = 0;
};

SpatialCode sample_code(int code_dim, uint64_t seed);

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

// ----------------------------------------------------------------------------
// Layers
// ----------------------------------------------------------------------------

struct ConvLayer {
    Tensor w, b;
    int stride = 1, pad = 1;

    void init(Rng& rng, int64_t co, int64_t ci, int64_t k, int stride, int pad);
    ad::Var operator()(ad::Tape& g, ad::Var x) {
        return g.conv2d(x, g.param(&w), g.param(&b), stride, pad);
    }
    void collect(NamedParams& out, const std::string& prefix);
};

struct DenseLayer {
    Tensor w, b;

    void init(Rng& rng, int64_t in, int64_t out);
    ad::Var operator()(ad::Tape& g, ad::Var x) {
        return g.add_rowvec(g.matmul(x, g.param(&w)), g.param(&b));
    }
    void collect(NamedParams& out, const std::string& prefix);
};

// ----------------------------------------------------------------------------
// Networks
// ----------------------------------------------------------------------------

// Predicts transform parameters from (image + mask [+ code]) input. The head
// is zero-initialized with the identity params as bias, so the initial
// prediction is exactly the identity transform.
struct LocalizationNet {
    ConvLayer c1, c2, c3;
    DenseLayer f1, head;
    NetConfig cfg;

    void init(const NetConfig& cfg, Rng rng);
    // img_with_mask: (N, channels+1, H, W)
    ad::Var forward(ad::Tape& g, ad::Var img_with_mask, const SpatialCode& code);
    void collect(NamedParams& out, const std::string& prefix);
    int64_t expected_in_channels() const { return cfg.channels + 1; }
};

// Encoder / two residual blocks / decoder; tanh keeps outputs in [-1, 1].
struct Generator {
    ConvLayer enc1, enc2, r1a, r1b, r2a, r2b, dec1, out;
    void init(const NetConfig& cfg, Rng rng);
    ad::Var forward(ad::Tape& g, ad::Var img);
    void collect(NamedParams& out_params, const std::string& prefix);
};

// Wasserstein critic over images: one unbounded scalar per item.
struct ImageCritic {
    ConvLayer c1, c2, c3;
    DenseLayer score;
    void init(const NetConfig& cfg, Rng rng);
    ad::Var forward(ad::Tape& g, ad::Var img);
    void collect(NamedParams& out, const std::string& prefix);
};

// Wasserstein critic over gauge-normalized transform parameter vectors.
struct TransformCritic {
    DenseLayer f1, f2, score;
    void init(const NetConfig& cfg, Rng rng);
    ad::Var forward(ad::Tape& g, ad::Var params);
    void collect(NamedParams& out, const std::string& prefix);
};

struct SiameseNet {
    ConvLayer c1, c2, c3;
    DenseLayer embed;
    void init(const NetConfig& cfg, Rng rng);
    ad::Var forward(ad::Tape& g, ad::Var img);
    void collect(NamedParams& out, const std::string& prefix);
};

// ----------------------------------------------------------------------------
// Bundle
// ----------------------------------------------------------------------------

struct ModelSet {
    NetConfig cfg;
    LocalizationNet s1_loc, s2_loc;
    Generator g1, g2;
    ImageCritic d1, d2;
    TransformCritic dt;
    SiameseNet sia;

    void init(const NetConfig& cfg, uint64_t seed);
    NamedParams named_params();
    std::vector<Tensor*> generator_params();   // S1, S2, G1, G2, SiaNet
    std::vector<Tensor*> critic_params();      // D1, D2, D_T
};

struct StmOut {
    ad::Var warped;        // (N,C,H,W)
    ad::Var warped_mask;   // (N,1,H,W)
    ad::Var params;        // (N,P)
};

// Localize then warp; the mask channel is warped with the same grid.
StmOut stm_forward(ad::Tape& g, LocalizationNet& loc, ad::Var img, ad::Var mask,
                   const SpatialCode& code);

}  // namespace sagan::nets

#endif  // SAGAN_NETWORKS_HPP
