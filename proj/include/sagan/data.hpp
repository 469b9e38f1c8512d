#ifndef SAGAN_DATA_HPP
#define SAGAN_DATA_HPP

#include <mutex>
#include <string>
#include <vector>

#include "sagan/geometry.hpp"
#include "sagan/rng.hpp"
#include "sagan/tensor.hpp"

namespace sagan::data {

struct ImageBatch {
    Tensor values;                 // (N,C,H,W) in [-1,1]
    Tensor mask;                   // (N,1,H,W) binary
    std::vector<int> identity;
    std::vector<int> camera;

    int64_t size() const { return values.rank() == 4 ? values.dim(0) : 0; }
    void validate() const;
};

// Immutable after construction.
struct Dataset {
    Tensor images;                 // (N,C,H,W)
    Tensor masks;                  // (N,1,H,W)
    std::vector<int> identities;
    std::vector<int> cameras;

    int64_t size() const { return images.rank() == 4 ? images.dim(0) : 0; }
    int64_t height() const { return images.dim(2); }
    int64_t width() const { return images.dim(3); }
    ImageBatch gather(const std::vector<int64_t>& idx) const;
};

// Ground-truth synthetic domain pair: person-like sprites on textured
// backgrounds; domain y re-renders the same scenes under a per-domain
// homography (plus small per-item jitter) and a per-domain color shift.
struct SyntheticDomainSpec {
    geometry::TransformKind family = geometry::TransformKind::Homography;
    double max_rotation_deg = 15.0;
    double max_perspective = 0.1;
    double max_translation = 0.2;      // normalized units
    double jitter_rotation_deg = 1.5;
    double jitter_translation = 0.02;
    double color_gain_min = 0.6;
    double color_gain_max = 1.4;
    double color_bias_max = 0.2;
    double noise_std = 0.02;
    int n_identities = 24;
    int n_views = 8;
    int64_t image_size = 32;
    uint64_t seed = 0;

    void validate() const;
};

struct SyntheticPair {
    Dataset x, y;
    std::vector<geometry::Transform> gt;   // per y-item, evaluation only
    geometry::Transform base;              // per-domain base transform
    SyntheticDomainSpec spec;
};

SyntheticPair synth_pair(const SyntheticDomainSpec& spec);

// Market-style ingestion: files named <identity>_c<camera>_<seq>.<ext>.
// Optional masks under <path>/masks/<same name>; missing masks are all-ones.
// Unparseable filenames are skipped (counted); an empty result is an error.
Dataset load_reid_dir(const std::string& path, int64_t h, int64_t w,
                      int* skipped = nullptr);

// Deterministic draw of n distinct items.
ImageBatch sample_batch(const Dataset& ds, int64_t n, uint64_t seed);

// Uniform-without-replacement epochs addressed by absolute draw index, so
// training can resume bit-exactly without sampler state.
class EpochSampler {
public:
    EpochSampler(int64_t size, uint64_t seed);
    std::vector<int64_t> draw(int64_t draw_id, int64_t batch) const;

private:
    const std::vector<int64_t>& permutation(int64_t epoch) const;
    int64_t size_;
    uint64_t seed_;
    mutable std::mutex mu_;
    mutable int64_t cached_epoch_ = -1;
    mutable std::vector<int64_t> cached_;
};

// Writes <identity>_c<camera>_<seq>.png (+ masks/) in the load_reid_dir layout.
void export_dataset(const Dataset& ds, const std::string& dir);
void export_pair(const SyntheticPair& pair, const std::string& dir);

}  // namespace sagan::data

#endif  // SAGAN_DATA_HPP
