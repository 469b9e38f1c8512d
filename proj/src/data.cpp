#include "sagan/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <regex>

#include "sagan/image_io.hpp"

namespace fs = std::filesystem;

namespace sagan::data {

void ImageBatch::validate() const {
    if (values.rank() != 4 || mask.rank() != 4)
        throw ShapeError("image batch must be NCHW");
    const int64_t n = values.dim(0);
    if (mask.dim(0) != n || mask.dim(1) != 1 ||
        static_cast<int64_t>(identity.size()) != n ||
        static_cast<int64_t>(camera.size()) != n)
        throw ShapeError("image batch field sizes disagree");
    for (double v : values.data)
        if (v < -1.0 || v > 1.0) throw ValueError("image values must lie in [-1,1]");
    for (double v : mask.data)
        if (v != 0.0 && v != 1.0) throw ValueError("mask values must be binary");
}

ImageBatch Dataset::gather(const std::vector<int64_t>& idx) const {
    const int64_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    ImageBatch out;
    out.values = Tensor({static_cast<int64_t>(idx.size()), c, h, w});
    out.mask = Tensor({static_cast<int64_t>(idx.size()), 1, h, w});
    for (size_t k = 0; k < idx.size(); ++k) {
        int64_t i = idx[k];
        if (i < 0 || i >= size()) throw ValueError("gather: index out of range");
        std::copy_n(images.data.begin() + i * c * h * w, c * h * w,
                    out.values.data.begin() + static_cast<int64_t>(k) * c * h * w);
        std::copy_n(masks.data.begin() + i * h * w, h * w,
                    out.mask.data.begin() + static_cast<int64_t>(k) * h * w);
        out.identity.push_back(identities[static_cast<size_t>(i)]);
        out.camera.push_back(cameras[static_cast<size_t>(i)]);
    }
    return out;
}

void SyntheticDomainSpec::validate() const {
    if (family == geometry::TransformKind::Tps)
        throw ValueError("synthetic ground truth requires an invertible family (affine/homography)");
    if (n_identities < 1 || n_views < 1) throw ValueError("need at least one identity and view");
    if (image_size < 8) throw ValueError("image_size too small");
    if (color_gain_min <= 0.0 || color_gain_max < color_gain_min)
        throw ValueError("color gains must be positive with min <= max");
    if (max_rotation_deg < 0 || max_perspective < 0 || max_translation < 0 ||
        jitter_rotation_deg < 0 || jitter_translation < 0 || noise_std < 0 ||
        color_bias_max < 0)
        throw ValueError("synthetic ranges must be nonnegative");
}

// ============================================================================
// Synthetic scenes
// ============================================================================

namespace {

struct SceneParams {
    double body[3], legs[3], head[3];
    double cx, cy, scale;
    double tone[3], amp1[3], amp2[3];
    double f1u, f1v, p1, f2u, f2v, p2;
};

void vivid_color(Rng& rng, double* rgb) {
    double m = 0.0;
    for (int c = 0; c < 3; ++c) {
        rgb[c] = rng.uniform(-1.0, 1.0);
        m = std::max(m, std::abs(rgb[c]));
    }
    double target = rng.uniform(0.7, 1.0);
    if (m > 1e-6) {
        double k = target / m;
        for (int c = 0; c < 3; ++c) rgb[c] *= k;
    }
}

SceneParams make_scene(uint64_t seed, int identity, int view) {
    SceneParams s{};
    Rng id_rng = Rng::derive(seed, 0x1D, static_cast<uint64_t>(identity));
    vivid_color(id_rng, s.body);
    vivid_color(id_rng, s.legs);
    const double skin[3] = {0.60, 0.15, -0.25};
    for (int c = 0; c < 3; ++c) s.head[c] = skin[c] + id_rng.uniform(-0.15, 0.15);

    Rng view_rng = Rng::derive(seed, 0x2F, static_cast<uint64_t>(identity),
                               static_cast<uint64_t>(view));
    s.cx = view_rng.uniform(-0.12, 0.12);
    s.cy = view_rng.uniform(-0.08, 0.08);
    s.scale = view_rng.uniform(0.85, 1.10);
    for (int c = 0; c < 3; ++c) {
        s.tone[c] = view_rng.uniform(-0.55, -0.25);
        s.amp1[c] = view_rng.uniform(0.05, 0.15);
        s.amp2[c] = view_rng.uniform(0.05, 0.15);
    }
    s.f1u = view_rng.uniform(1.0, 3.5);
    s.f1v = view_rng.uniform(1.0, 3.5);
    s.p1 = view_rng.uniform(0.0, 6.283185307179586);
    s.f2u = view_rng.uniform(1.0, 3.5);
    s.f2v = view_rng.uniform(1.0, 3.5);
    s.p2 = view_rng.uniform(0.0, 6.283185307179586);
    return s;
}

// Analytic scene lookup: color plus exact person membership at (u, v).
bool render_scene(const SceneParams& s, double u, double v, double* rgb) {
    const double lu = (u - s.cx) / s.scale;
    const double lv = (v - s.cy) / s.scale;
    // head
    {
        const double du = lu, dv = lv + 0.52;
        if (du * du + dv * dv <= 0.17 * 0.17) {
            for (int c = 0; c < 3; ++c) rgb[c] = s.head[c];
            return true;
        }
    }
    // torso
    {
        const double du = lu / 0.24, dv = (lv + 0.05) / 0.34;
        if (du * du + dv * dv <= 1.0) {
            for (int c = 0; c < 3; ++c) rgb[c] = s.body[c];
            return true;
        }
    }
    // legs
    if (lv >= 0.24 && lv <= 0.80) {
        const double a = std::abs(lu);
        if (a >= 0.04 && a <= 0.17) {
            for (int c = 0; c < 3; ++c) rgb[c] = s.legs[c];
            return true;
        }
    }
    for (int c = 0; c < 3; ++c)
        rgb[c] = s.tone[c] + s.amp1[c] * std::sin(s.f1u * u + s.f1v * v + s.p1) +
                 s.amp2[c] * std::sin(s.f2u * u + s.f2v * v + s.p2);
    return false;
}

geometry::Transform perspective_transform(geometry::TransformKind family,
                                          double g, double h) {
    if (family == geometry::TransformKind::Affine)
        return geometry::identity(family);
    return geometry::make_transform(family, {1, 0, 0, 0, 1, 0, g, h});
}

double signed_magnitude(Rng& rng, double maxval, double lo_frac) {
    if (maxval == 0.0) return 0.0;
    double mag = rng.uniform(lo_frac * maxval, maxval);
    return rng.uniform() < 0.5 ? -mag : mag;
}

geometry::Transform draw_base(const SyntheticDomainSpec& spec) {
    Rng rng = Rng::derive(spec.seed, 0x0B);
    const double rot = signed_magnitude(rng, spec.max_rotation_deg, 0.5) * M_PI / 180.0;
    const double tx = signed_magnitude(rng, spec.max_translation, 0.35);
    const double ty = signed_magnitude(rng, spec.max_translation, 0.35);
    const double pg = signed_magnitude(rng, spec.max_perspective, 0.35);
    const double ph = signed_magnitude(rng, spec.max_perspective, 0.35);
    auto t = geometry::translation(spec.family, tx, ty);
    auto r = geometry::rotation(spec.family, rot);
    auto p = perspective_transform(spec.family, pg, ph);
    return geometry::compose(t, geometry::compose(r, p));
}

geometry::Transform draw_jitter(const SyntheticDomainSpec& spec, int identity, int view) {
    Rng rng = Rng::derive(spec.seed, 0x4B, static_cast<uint64_t>(identity),
                          static_cast<uint64_t>(view));
    const double rot = rng.uniform(-spec.jitter_rotation_deg, spec.jitter_rotation_deg) *
                       M_PI / 180.0;
    const double tx = rng.uniform(-spec.jitter_translation, spec.jitter_translation);
    const double ty = rng.uniform(-spec.jitter_translation, spec.jitter_translation);
    return geometry::compose(geometry::translation(spec.family, tx, ty),
                             geometry::rotation(spec.family, rot));
}

}  // namespace

SyntheticPair synth_pair(const SyntheticDomainSpec& spec) {
    spec.validate();
    const int64_t hw = spec.image_size;
    const int64_t n = static_cast<int64_t>(spec.n_identities) * spec.n_views;

    SyntheticPair pair;
    pair.spec = spec;
    pair.base = draw_base(spec);

    Rng color_rng = Rng::derive(spec.seed, 0x5C);
    double gains[3], biases[3];
    for (int c = 0; c < 3; ++c) gains[c] = color_rng.uniform(spec.color_gain_min, spec.color_gain_max);
    for (int c = 0; c < 3; ++c) biases[c] = color_rng.uniform(-spec.color_bias_max, spec.color_bias_max);

    for (Dataset* ds : {&pair.x, &pair.y}) {
        ds->images = Tensor({n, 3, hw, hw});
        ds->masks = Tensor({n, 1, hw, hw});
        ds->identities.resize(static_cast<size_t>(n));
        ds->cameras.resize(static_cast<size_t>(n));
    }
    pair.gt.reserve(static_cast<size_t>(n));

    for (int id = 0; id < spec.n_identities; ++id) {
        for (int view = 0; view < spec.n_views; ++view) {
            const int64_t item = static_cast<int64_t>(id) * spec.n_views + view;
            SceneParams scene = make_scene(spec.seed, id, view);
            geometry::Transform gt =
                geometry::compose(pair.base, draw_jitter(spec, id, view));
            pair.gt.push_back(gt);

            Rng noise_x = Rng::derive(spec.seed, 0x3A, static_cast<uint64_t>(id),
                                      static_cast<uint64_t>(view));
            Rng noise_y = Rng::derive(spec.seed, 0x6D, static_cast<uint64_t>(id),
                                      static_cast<uint64_t>(view));

            for (int64_t i = 0; i < hw; ++i) {
                const double v0 = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(hw - 1);
                for (int64_t j = 0; j < hw; ++j) {
                    const double u0 = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(hw - 1);
                    double rgb[3];
                    // domain x: the scene as-is
                    bool inside = render_scene(scene, u0, v0, rgb);
                    for (int c = 0; c < 3; ++c) {
                        double val = rgb[c];
                        if (spec.noise_std > 0.0) val += noise_x.normal(0.0, spec.noise_std);
                        pair.x.images.at(item, c, i, j) = std::clamp(val, -1.0, 1.0);
                    }
                    pair.x.masks.at(item, 0, i, j) = inside ? 1.0 : 0.0;

                    // domain y: same scene observed through gt + color shift
                    double qu, qv;
                    geometry::apply_point(gt, u0, v0, &qu, &qv);
                    bool inside_y = render_scene(scene, qu, qv, rgb);
                    for (int c = 0; c < 3; ++c) {
                        double val = gains[c] * rgb[c] + biases[c];
                        if (spec.noise_std > 0.0) val += noise_y.normal(0.0, spec.noise_std);
                        pair.y.images.at(item, c, i, j) = std::clamp(val, -1.0, 1.0);
                    }
                    pair.y.masks.at(item, 0, i, j) = inside_y ? 1.0 : 0.0;
                }
            }
            for (Dataset* ds : {&pair.x, &pair.y}) {
                ds->identities[static_cast<size_t>(item)] = id;
                ds->cameras[static_cast<size_t>(item)] = view % 2;
            }
        }
    }
    return pair;
}

// ============================================================================
// Real-directory ingestion
// ============================================================================

Dataset load_reid_dir(const std::string& path, int64_t h, int64_t w, int* skipped) {
    if (!fs::is_directory(path)) throw IoError("not a directory: " + path);
    static const std::regex name_re(R"(^(-?\d+)_c(\d+).*)");

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    int skip_count = 0;
    std::vector<Tensor> images, masks;
    std::vector<int> ids, cams;
    for (const auto& file : files) {
        std::smatch m;
        const std::string stem = file.stem().string();
        if (!std::regex_match(stem, m, name_re)) {
            ++skip_count;
            continue;
        }
        images.push_back(imgio::load_image(file.string(), h, w));
        fs::path mask_path = file.parent_path() / "masks" / file.filename();
        if (fs::exists(mask_path))
            masks.push_back(imgio::load_mask(mask_path.string(), h, w));
        else
            masks.push_back(Tensor::full({1, h, w}, 1.0));
        ids.push_back(std::stoi(m[1].str()));
        cams.push_back(std::stoi(m[2].str()));
    }
    if (skipped) *skipped = skip_count;
    if (images.empty()) throw IoError("no parseable images in " + path);

    Dataset ds;
    const int64_t n = static_cast<int64_t>(images.size());
    ds.images = Tensor({n, 3, h, w});
    ds.masks = Tensor({n, 1, h, w});
    for (int64_t i = 0; i < n; ++i) {
        std::copy(images[static_cast<size_t>(i)].data.begin(),
                  images[static_cast<size_t>(i)].data.end(),
                  ds.images.data.begin() + i * 3 * h * w);
        std::copy(masks[static_cast<size_t>(i)].data.begin(),
                  masks[static_cast<size_t>(i)].data.end(),
                  ds.masks.data.begin() + i * h * w);
    }
    ds.identities = std::move(ids);
    ds.cameras = std::move(cams);
    return ds;
}

// ============================================================================
// Sampling
// ============================================================================

ImageBatch sample_batch(const Dataset& ds, int64_t n, uint64_t seed) {
    if (n < 1) throw ValueError("sample_batch: n must be >= 1");
    if (n > ds.size())
        throw ValueError("sample_batch: n exceeds dataset size " + std::to_string(ds.size()));
    std::vector<int64_t> idx(static_cast<size_t>(ds.size()));
    for (int64_t i = 0; i < ds.size(); ++i) idx[static_cast<size_t>(i)] = i;
    Rng rng = Rng::derive(seed, 0xBA7C4);
    for (int64_t j = 0; j < n; ++j) {
        int64_t k = j + rng.below(ds.size() - j);
        std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(k)]);
    }
    idx.resize(static_cast<size_t>(n));
    return ds.gather(idx);
}

EpochSampler::EpochSampler(int64_t size, uint64_t seed) : size_(size), seed_(seed) {
    if (size < 1) throw ValueError("epoch sampler: empty dataset");
}

const std::vector<int64_t>& EpochSampler::permutation(int64_t epoch) const {
    if (cached_epoch_ != epoch) {
        std::vector<int64_t> perm(static_cast<size_t>(size_));
        for (int64_t i = 0; i < size_; ++i) perm[static_cast<size_t>(i)] = i;
        Rng rng = Rng::derive(seed_, 0xE70C, static_cast<uint64_t>(epoch));
        for (int64_t i = size_ - 1; i > 0; --i) {
            int64_t j = rng.below(i + 1);
            std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
        }
        cached_ = std::move(perm);
        cached_epoch_ = epoch;
    }
    return cached_;
}

std::vector<int64_t> EpochSampler::draw(int64_t draw_id, int64_t batch) const {
    if (batch > size_) throw ValueError("epoch sampler: batch exceeds dataset size");
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch));
    for (int64_t j = 0; j < batch; ++j) {
        const int64_t pos = draw_id * batch + j;
        const int64_t epoch = pos / size_;
        out.push_back(permutation(epoch)[static_cast<size_t>(pos % size_)]);
    }
    return out;
}

// ============================================================================
// Export
// ============================================================================

void export_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    fs::create_directories(fs::path(dir) / "masks");
    const int64_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    for (int64_t i = 0; i < ds.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%04d_c%d_%06lld.png",
                      ds.identities[static_cast<size_t>(i)],
                      ds.cameras[static_cast<size_t>(i)],
                      static_cast<long long>(i));
        Tensor img({c, h, w});
        std::copy_n(ds.images.data.begin() + i * c * h * w, c * h * w, img.data.begin());
        imgio::save_image(img, (fs::path(dir) / name).string());
        Tensor mask({1, h, w});
        std::copy_n(ds.masks.data.begin() + i * h * w, h * w, mask.data.begin());
        // mask stored as 0/255 grayscale png
        for (auto& v : mask.data) v = v > 0.5 ? 1.0 : -1.0;
        imgio::save_image(mask, (fs::path(dir) / "masks" / name).string());
    }
}

void export_pair(const SyntheticPair& pair, const std::string& dir) {
    export_dataset(pair.x, (fs::path(dir) / "domain_x").string());
    export_dataset(pair.y, (fs::path(dir) / "domain_y").string());
    std::ofstream gt((fs::path(dir) / "gt_transforms.csv").string());
    if (!gt) throw IoError("cannot write gt_transforms.csv");
    gt << "item,kind,params\n";
    for (size_t i = 0; i < pair.gt.size(); ++i) {
        gt << i << "," << geometry::kind_name(pair.gt[i].kind);
        char buf[32];
        for (double p : pair.gt[i].params) {
            std::snprintf(buf, sizeof(buf), ",%.17g", p);
            gt << buf;
        }
        gt << "\n";
    }
}

}  // namespace sagan::data
