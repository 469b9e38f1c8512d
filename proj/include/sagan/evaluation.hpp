#ifndef SAGAN_EVALUATION_HPP
#define SAGAN_EVALUATION_HPP

#include <string>
#include <vector>

#include "sagan/data.hpp"
#include "sagan/networks.hpp"

namespace sagan::eval {

struct RetrievalResult {
    std::vector<std::vector<int>> rankings;  // per query: gallery indices by distance
    std::vector<double> cmc;                 // rank-k accuracy, k = 1..len
    double r1 = 0, r5 = 0, r10 = 0;
    double map = 0;
    int excluded_queries = 0;
};

// Single-query protocol: Euclidean distances, same-identity same-camera
// gallery entries excluded per query; queries without any valid match are
// dropped (counted). CMC rank-k and mean average precision.
RetrievalResult cmc_map(const Tensor& query_emb, const Tensor& gallery_emb,
                        const std::vector<int>& query_ids,
                        const std::vector<int>& gallery_ids,
                        const std::vector<int>& query_cams,
                        const std::vector<int>& gallery_cams);

struct RecoveryStats {
    double mean_px = 0;
    double median_px = 0;
};

// Runs S1 with one fixed code over the set and scores the predicted
// transforms against the per-item ground truth in corner-error pixels.
RecoveryStats homography_recovery(nets::ModelSet& models, const data::Dataset& x,
                                  const std::vector<geometry::Transform>& gt,
                                  uint64_t code_seed);

// Mean embedding distance of (x, x_adp) pairs and of (x, y) pairs.
std::pair<double, double> identity_preservation(nets::ModelSet& models,
                                                const data::ImageBatch& x,
                                                const data::ImageBatch& y,
                                                uint64_t code_seed);

// ----------------------------------------------------------------------------
// Toy retrieval pipeline: a fresh Siamese-architecture embedder is trained on
// a labeled set with contrastive identity pairs, then frozen as the feature
// extractor for target-domain retrieval (queries camera 0, gallery camera 1).
// ----------------------------------------------------------------------------

struct ToyEmbedderConfig {
    int64_t steps = 600;
    int64_t batch_pairs = 16;
    double lr = 2e-4;
    double margin = 2.0;
    uint64_t seed = 0;
};

nets::SiameseNet train_toy_embedder(const data::Dataset& labeled,
                                    const nets::NetConfig& net,
                                    const ToyEmbedderConfig& cfg);

Tensor embed_images(nets::SiameseNet& net, const Tensor& images,
                    int64_t batch = 64);

// Retrieval on a target dataset with a frozen embedder.
RetrievalResult evaluate_retrieval(nets::SiameseNet& embedder,
                                   const data::Dataset& target);

// Builds the M-times adapted copy of a labeled source set (labels inherited).
data::Dataset adapt_dataset(nets::ModelSet& models, const data::Dataset& source,
                            int m, uint64_t seed);

struct MSweepRow {
    int m = 0;
    double r1 = 0, r5 = 0, r10 = 0, map = 0;
};

struct MSweepResult {
    std::vector<MSweepRow> rows;
    double spearman_rho = 0;   // rank correlation between M and R-1
};

// For each M: adapt the source set, train a toy embedder on it, evaluate
// retrieval on the synthetic target test set.
MSweepResult m_sweep(nets::ModelSet& models, const data::Dataset& train_x,
                     const data::Dataset& test_y, const std::vector<int>& m_values,
                     const nets::NetConfig& net, const ToyEmbedderConfig& toy);

double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace sagan::eval

#endif  // SAGAN_EVALUATION_HPP
