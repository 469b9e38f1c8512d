#include "sagan/networks.hpp"

namespace sagan::nets {

void NetConfig::validate() const {
    if (image_size < 8 || image_size % 8 != 0)
        throw ValueError("image_size must be a positive multiple of 8");
    if (channels < 1) throw ValueError("channels must be >= 1");
    if (base < 2) throw ValueError("base width must be >= 2");
    if (code_dim < 1) throw ValueError("code_dim must be >= 1");
    if (emb_dim < 1) throw ValueError("emb_dim must be >= 1");
}

SpatialCode sample_code(int code_dim, uint64_t seed) {
    SpatialCode code;
    code.seed = seed;
    code.values = Tensor({code_dim});
    Rng rng = Rng::derive(seed, 0xC0DE);
    rng.fill_normal(code.values, 0.0, 1.0);
    return code;
}

// ----------------------------------------------------------------------------
// Layers
// ----------------------------------------------------------------------------

void ConvLayer::init(Rng& rng, int64_t co, int64_t ci, int64_t k, int stride_, int pad_) {
    w = Tensor({co, ci, k, k});
    b = Tensor({co});
    rng.fill_normal(w, 0.0, 0.02);
    stride = stride_;
    pad = pad_;
}

void ConvLayer::collect(NamedParams& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

void DenseLayer::init(Rng& rng, int64_t in, int64_t out) {
    w = Tensor({in, out});
    b = Tensor({out});
    rng.fill_normal(w, 0.0, 0.02);
}

void DenseLayer::collect(NamedParams& out, const std::string& prefix) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
}

// ----------------------------------------------------------------------------
// LocalizationNet
// ----------------------------------------------------------------------------

void LocalizationNet::init(const NetConfig& c, Rng rng) {
    cfg = c;
    int64_t in_ch = c.channels + 1;
    if (c.injection == CodeInjection::Input) in_ch += c.code_dim;
    c1.init(rng, c.base, in_ch, 3, 2, 1);
    c2.init(rng, 2 * c.base, c.base, 3, 2, 1);
    c3.init(rng, 2 * c.base, 2 * c.base, 3, 2, 1);
    int64_t flat = 2 * c.base * (c.image_size / 8) * (c.image_size / 8);
    if (c.injection == CodeInjection::Feature) flat += c.code_dim;
    f1.init(rng, flat, 64);
    const int np = geometry::param_count(c.kind);
    head.init(rng, 64, np);
    // zero-init head with identity bias: the first prediction is the identity
    for (auto& v : head.w.data) v = 0.0;
    auto idp = geometry::identity_params(c.kind);
    for (int i = 0; i < np; ++i) head.b[i] = idp[static_cast<size_t>(i)];
}

ad::Var LocalizationNet::forward(ad::Tape& g, ad::Var img_with_mask,
                                 const SpatialCode& code) {
    const auto& s = img_with_mask->value.shape;
    if (s.size() != 4 || s[1] != expected_in_channels())
        throw ShapeError("localize: expected " + std::to_string(expected_in_channels()) +
                         " input channels, got " + img_with_mask->value.shape_str());
    if (code.values.numel() != cfg.code_dim)
        throw ValueError("localize: code length must equal code_dim");
    ad::Var x = img_with_mask;
    ad::Var code_var = g.constant(code.values);
    if (cfg.injection == CodeInjection::Input)
        x = g.concat_channels(x, g.tile_code(code_var, s[0], s[2], s[3]));
    ad::Var h = g.leaky_relu(c1(g, x));
    h = g.leaky_relu(c2(g, h));
    h = g.leaky_relu(c3(g, h));
    ad::Var flat = g.flatten_images(h);
    if (cfg.injection == CodeInjection::Feature)
        flat = g.concat_cols(flat, g.repeat_rows(code_var, s[0]));
    ad::Var f = g.leaky_relu(f1(g, flat));
    return head(g, f);
}

void LocalizationNet::collect(NamedParams& out, const std::string& prefix) {
    c1.collect(out, prefix + ".c1");
    c2.collect(out, prefix + ".c2");
    c3.collect(out, prefix + ".c3");
    f1.collect(out, prefix + ".f1");
    head.collect(out, prefix + ".head");
}

// ----------------------------------------------------------------------------
// Generator
// ----------------------------------------------------------------------------

void Generator::init(const NetConfig& c, Rng rng) {
    enc1.init(rng, c.base, c.channels, 3, 1, 1);
    enc2.init(rng, 2 * c.base, c.base, 3, 2, 1);
    r1a.init(rng, 2 * c.base, 2 * c.base, 3, 1, 1);
    r1b.init(rng, 2 * c.base, 2 * c.base, 3, 1, 1);
    r2a.init(rng, 2 * c.base, 2 * c.base, 3, 1, 1);
    r2b.init(rng, 2 * c.base, 2 * c.base, 3, 1, 1);
    dec1.init(rng, c.base, 2 * c.base, 3, 1, 1);
    out.init(rng, c.channels, c.base, 3, 1, 1);
}

ad::Var Generator::forward(ad::Tape& g, ad::Var img) {
    ad::Var h = g.relu(enc1(g, img));
    h = g.relu(enc2(g, h));
    h = g.add(h, r1b(g, g.relu(r1a(g, h))));
    h = g.add(h, r2b(g, g.relu(r2a(g, h))));
    h = g.relu(dec1(g, g.upsample_nearest2(h)));
    return g.tanh(out(g, h));
}

void Generator::collect(NamedParams& out_params, const std::string& prefix) {
    enc1.collect(out_params, prefix + ".enc1");
    enc2.collect(out_params, prefix + ".enc2");
    r1a.collect(out_params, prefix + ".r1a");
    r1b.collect(out_params, prefix + ".r1b");
    r2a.collect(out_params, prefix + ".r2a");
    r2b.collect(out_params, prefix + ".r2b");
    dec1.collect(out_params, prefix + ".dec1");
    out.collect(out_params, prefix + ".out");
}

// ----------------------------------------------------------------------------
// Critics / Siamese
// ----------------------------------------------------------------------------

void ImageCritic::init(const NetConfig& c, Rng rng) {
    c1.init(rng, c.base, c.channels, 3, 2, 1);
    c2.init(rng, 2 * c.base, c.base, 3, 2, 1);
    c3.init(rng, 2 * c.base, 2 * c.base, 3, 2, 1);
    score.init(rng, 2 * c.base * (c.image_size / 8) * (c.image_size / 8), 1);
}

ad::Var ImageCritic::forward(ad::Tape& g, ad::Var img) {
    ad::Var h = g.leaky_relu(c1(g, img));
    h = g.leaky_relu(c2(g, h));
    h = g.leaky_relu(c3(g, h));
    return score(g, g.flatten_images(h));
}

void ImageCritic::collect(NamedParams& out, const std::string& prefix) {
    c1.collect(out, prefix + ".c1");
    c2.collect(out, prefix + ".c2");
    c3.collect(out, prefix + ".c3");
    score.collect(out, prefix + ".score");
}

void TransformCritic::init(const NetConfig& c, Rng rng) {
    const int np = geometry::param_count(c.kind);
    f1.init(rng, np, 32);
    f2.init(rng, 32, 32);
    score.init(rng, 32, 1);
}

ad::Var TransformCritic::forward(ad::Tape& g, ad::Var params) {
    if (params->value.rank() != 2 || params->value.dim(1) != f1.w.dim(0))
        throw ShapeError("transform critic: bad parameter vector length");
    ad::Var h = g.leaky_relu(f1(g, params));
    h = g.leaky_relu(f2(g, h));
    return score(g, h);
}

void TransformCritic::collect(NamedParams& out, const std::string& prefix) {
    f1.collect(out, prefix + ".f1");
    f2.collect(out, prefix + ".f2");
    score.collect(out, prefix + ".score");
}

void SiameseNet::init(const NetConfig& c, Rng rng) {
    c1.init(rng, c.base, c.channels, 3, 2, 1);
    c2.init(rng, 2 * c.base, c.base, 3, 2, 1);
    c3.init(rng, 2 * c.base, 2 * c.base, 3, 2, 1);
    embed.init(rng, 2 * c.base * (c.image_size / 8) * (c.image_size / 8), c.emb_dim);
}

ad::Var SiameseNet::forward(ad::Tape& g, ad::Var img) {
    ad::Var h = g.relu(c1(g, img));
    h = g.relu(c2(g, h));
    h = g.relu(c3(g, h));
    return embed(g, g.flatten_images(h));
}

void SiameseNet::collect(NamedParams& out, const std::string& prefix) {
    c1.collect(out, prefix + ".c1");
    c2.collect(out, prefix + ".c2");
    c3.collect(out, prefix + ".c3");
    embed.collect(out, prefix + ".embed");
}

// ----------------------------------------------------------------------------
// ModelSet
// ----------------------------------------------------------------------------

void ModelSet::init(const NetConfig& c, uint64_t seed) {
    c.validate();
    cfg = c;
    s1_loc.init(c, Rng::derive(seed, 1));
    s2_loc.init(c, Rng::derive(seed, 2));
    g1.init(c, Rng::derive(seed, 3));
    g2.init(c, Rng::derive(seed, 4));
    d1.init(c, Rng::derive(seed, 5));
    d2.init(c, Rng::derive(seed, 6));
    dt.init(c, Rng::derive(seed, 7));
    sia.init(c, Rng::derive(seed, 8));
}

NamedParams ModelSet::named_params() {
    NamedParams out;
    s1_loc.collect(out, "s1");
    s2_loc.collect(out, "s2");
    g1.collect(out, "g1");
    g2.collect(out, "g2");
    d1.collect(out, "d1");
    d2.collect(out, "d2");
    dt.collect(out, "dt");
    sia.collect(out, "sia");
    return out;
}

std::vector<Tensor*> ModelSet::generator_params() {
    NamedParams named;
    s1_loc.collect(named, "s1");
    s2_loc.collect(named, "s2");
    g1.collect(named, "g1");
    g2.collect(named, "g2");
    sia.collect(named, "sia");
    std::vector<Tensor*> out;
    out.reserve(named.size());
    for (auto& [name, t] : named) out.push_back(t);
    return out;
}

std::vector<Tensor*> ModelSet::critic_params() {
    NamedParams named;
    d1.collect(named, "d1");
    d2.collect(named, "d2");
    dt.collect(named, "dt");
    std::vector<Tensor*> out;
    out.reserve(named.size());
    for (auto& [name, t] : named) out.push_back(t);
    return out;
}

StmOut stm_forward(ad::Tape& g, LocalizationNet& loc, ad::Var img, ad::Var mask,
                   const SpatialCode& code) {
    StmOut out;
    out.params = loc.forward(g, g.concat_channels(img, mask), code);
    const auto& s = img->value.shape;
    out.warped = g.warp_by_transform(img, out.params, loc.cfg.kind, s[2], s[3], loc.cfg.fill);
    out.warped_mask = g.warp_by_transform(mask, out.params, loc.cfg.kind, s[2], s[3], 0.0);
    return out;
}

}  // namespace sagan::nets
