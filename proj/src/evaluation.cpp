#include "sagan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sagan/losses.hpp"
#include "sagan/optim.hpp"
#include "sagan/training.hpp"

namespace sagan::eval {

using ad::Tape;
using ad::Var;

// ============================================================================
// CMC / mAP
// ============================================================================

RetrievalResult cmc_map(const Tensor& query_emb, const Tensor& gallery_emb,
                        const std::vector<int>& query_ids,
                        const std::vector<int>& gallery_ids,
                        const std::vector<int>& query_cams,
                        const std::vector<int>& gallery_cams) {
    if (query_emb.rank() != 2 || gallery_emb.rank() != 2 ||
        query_emb.dim(1) != gallery_emb.dim(1))
        throw ShapeError("cmc_map: embeddings must be (N,D) with equal D");
    const int64_t nq = query_emb.dim(0), ng = gallery_emb.dim(0), d = query_emb.dim(1);
    if (nq == 0 || ng == 0) throw ValueError("cmc_map: empty query or gallery");
    if (static_cast<int64_t>(query_ids.size()) != nq ||
        static_cast<int64_t>(query_cams.size()) != nq ||
        static_cast<int64_t>(gallery_ids.size()) != ng ||
        static_cast<int64_t>(gallery_cams.size()) != ng)
        throw ShapeError("cmc_map: label lengths disagree");

    RetrievalResult res;
    std::vector<double> cmc_acc(static_cast<size_t>(ng), 0.0);
    double map_acc = 0.0;
    int valid_queries = 0;

    for (int64_t q = 0; q < nq; ++q) {
        std::vector<std::pair<double, int>> dist;
        dist.reserve(static_cast<size_t>(ng));
        bool has_match = false;
        for (int64_t gidx = 0; gidx < ng; ++gidx) {
            // single-query protocol: drop same-identity same-camera entries
            if (gallery_ids[static_cast<size_t>(gidx)] == query_ids[static_cast<size_t>(q)] &&
                gallery_cams[static_cast<size_t>(gidx)] == query_cams[static_cast<size_t>(q)])
                continue;
            double s = 0.0;
            for (int64_t k = 0; k < d; ++k) {
                double diff = query_emb[q * d + k] - gallery_emb[gidx * d + k];
                s += diff * diff;
            }
            dist.emplace_back(std::sqrt(s), static_cast<int>(gidx));
            if (gallery_ids[static_cast<size_t>(gidx)] == query_ids[static_cast<size_t>(q)])
                has_match = true;
        }
        if (!has_match) {
            ++res.excluded_queries;
            res.rankings.emplace_back();
            continue;
        }
        std::sort(dist.begin(), dist.end());  // ties broken by gallery index
        ++valid_queries;

        std::vector<int> ranking;
        ranking.reserve(dist.size());
        int num_rel = 0;
        double ap = 0.0;
        size_t first_match = dist.size();
        for (size_t r = 0; r < dist.size(); ++r) {
            const int gidx = dist[r].second;
            ranking.push_back(gidx);
            const bool rel =
                gallery_ids[static_cast<size_t>(gidx)] == query_ids[static_cast<size_t>(q)];
            if (rel) {
                ++num_rel;
                ap += static_cast<double>(num_rel) / static_cast<double>(r + 1);
                if (first_match == dist.size()) first_match = r;
            }
        }
        for (size_t r = first_match; r < static_cast<size_t>(ng); ++r) cmc_acc[r] += 1.0;
        map_acc += ap / static_cast<double>(num_rel);
        res.rankings.push_back(std::move(ranking));
    }

    if (valid_queries == 0) throw ValueError("cmc_map: no query has a valid match");
    res.cmc.resize(static_cast<size_t>(ng));
    for (int64_t k = 0; k < ng; ++k)
        res.cmc[static_cast<size_t>(k)] = cmc_acc[static_cast<size_t>(k)] / valid_queries;
    auto rank_at = [&](int64_t k) {
        k = std::min<int64_t>(k, ng) - 1;
        return res.cmc[static_cast<size_t>(k)];
    };
    res.r1 = rank_at(1);
    res.r5 = rank_at(5);
    res.r10 = rank_at(10);
    res.map = map_acc / valid_queries;
    return res;
}

// ============================================================================
// Model-centric evaluations
// ============================================================================

RecoveryStats homography_recovery(nets::ModelSet& models, const data::Dataset& x,
                                  const std::vector<geometry::Transform>& gt,
                                  uint64_t code_seed) {
    if (static_cast<int64_t>(gt.size()) != x.size())
        throw ValueError("homography_recovery: gt list must match the dataset");
    auto code = nets::sample_code(models.cfg.code_dim, code_seed);
    const auto kind = models.cfg.kind;
    const int np = geometry::param_count(kind);
    std::vector<double> errors;
    errors.reserve(static_cast<size_t>(x.size()));

    const int64_t chunk = 32;
    for (int64_t start = 0; start < x.size(); start += chunk) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(start + chunk, x.size()); ++i) idx.push_back(i);
        auto batch = x.gather(idx);
        Tape g;
        auto stm = nets::stm_forward(g, models.s1_loc, g.constant(batch.values),
                                     g.constant(batch.mask), code);
        for (size_t b = 0; b < idx.size(); ++b) {
            std::vector<double> p(static_cast<size_t>(np));
            for (int k = 0; k < np; ++k)
                p[static_cast<size_t>(k)] = stm.params->value.at(static_cast<int64_t>(b), k);
            geometry::Transform est{kind, std::move(p)};
            errors.push_back(geometry::corner_error(
                est, gt[static_cast<size_t>(idx[b])], x.height(), x.width()));
        }
    }
    RecoveryStats stats;
    for (double e : errors) stats.mean_px += e;
    stats.mean_px /= static_cast<double>(errors.size());
    std::sort(errors.begin(), errors.end());
    const size_t mid = errors.size() / 2;
    stats.median_px = errors.size() % 2 == 1
                          ? errors[mid]
                          : 0.5 * (errors[mid - 1] + errors[mid]);
    return stats;
}

std::pair<double, double> identity_preservation(nets::ModelSet& models,
                                                const data::ImageBatch& x,
                                                const data::ImageBatch& y,
                                                uint64_t code_seed) {
    if (x.size() == 0 || y.size() == 0)
        throw ValueError("identity_preservation: empty batch");
    auto outs = train::adapt(models, x.values, x.mask, 1, code_seed);
    Tape g;
    Var e_x = models.sia.forward(g, g.constant(x.values));
    Var e_adp = models.sia.forward(g, g.constant(outs[0].images));
    Var e_y = models.sia.forward(g, g.constant(y.values));
    auto mean_dist = [&](Var a, Var b, int64_t n) {
        const int64_t d = a->value.dim(1);
        double total = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (int64_t k = 0; k < d; ++k) {
                double diff = a->value[i * d + k] - b->value[i * d + k];
                s += diff * diff;
            }
            total += std::sqrt(s);
        }
        return total / static_cast<double>(n);
    };
    const int64_t n = std::min(x.size(), y.size());
    return {mean_dist(e_x, e_adp, x.size()), mean_dist(e_x, e_y, n)};
}

// ============================================================================
// Toy retrieval pipeline
// ============================================================================

nets::SiameseNet train_toy_embedder(const data::Dataset& labeled,
                                    const nets::NetConfig& net,
                                    const ToyEmbedderConfig& cfg) {
    if (labeled.size() < 2) throw ValueError("toy embedder: need at least two items");
    nets::SiameseNet sia;
    sia.init(net, Rng::derive(cfg.seed, 0x70E));

    nets::NamedParams named;
    sia.collect(named, "toy");
    std::vector<Tensor*> params;
    for (auto& [name, t] : named) params.push_back(t);
    optim::Adam opt(params, {cfg.lr, 0.5, 0.999, 1e-8});

    // identity -> item indices
    std::vector<std::vector<int64_t>> by_id;
    for (int64_t i = 0; i < labeled.size(); ++i) {
        int id = labeled.identities[static_cast<size_t>(i)];
        if (static_cast<size_t>(id) >= by_id.size()) by_id.resize(static_cast<size_t>(id) + 1);
        by_id[static_cast<size_t>(id)].push_back(i);
    }

    for (int64_t s = 0; s < cfg.steps; ++s) {
        Rng rng = Rng::derive(cfg.seed, 0x70F, static_cast<uint64_t>(s));
        std::vector<int64_t> a_idx, b_idx;
        std::vector<int> labels;
        for (int64_t p = 0; p < cfg.batch_pairs; ++p) {
            int64_t a = rng.below(labeled.size());
            const int id_a = labeled.identities[static_cast<size_t>(a)];
            const bool positive = rng.uniform() < 0.5;
            int64_t b = a;
            if (positive) {
                const auto& pool = by_id[static_cast<size_t>(id_a)];
                b = pool[static_cast<size_t>(rng.below(static_cast<int64_t>(pool.size())))];
            } else {
                for (int attempt = 0; attempt < 64; ++attempt) {
                    b = rng.below(labeled.size());
                    if (labeled.identities[static_cast<size_t>(b)] != id_a) break;
                }
            }
            a_idx.push_back(a);
            b_idx.push_back(b);
            labels.push_back(positive ? 1 : 0);
        }
        Tape g;
        // one batched loss per label
        Var loss = nullptr;
        for (int label : {1, 0}) {
            std::vector<int64_t> sel_a, sel_b;
            for (size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] != label) continue;
                sel_a.push_back(a_idx[i]);
                sel_b.push_back(b_idx[i]);
            }
            if (sel_a.empty()) continue;
            auto ga = labeled.gather(sel_a);
            auto gb = labeled.gather(sel_b);
            Var e1 = sia.forward(g, g.constant(ga.values));
            Var e2 = sia.forward(g, g.constant(gb.values));
            Var part = losses::siamese_loss(g, label, e1, e2, cfg.margin);
            loss = loss ? g.add(loss, part) : part;
        }
        g.backward(loss);
        losses::GradBuffer grads(params);
        grads.accumulate_from(g);
        opt.step(grads);
    }
    return sia;
}

Tensor embed_images(nets::SiameseNet& net, const Tensor& images, int64_t batch) {
    const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out;
    int64_t emb_dim = -1;
    for (int64_t start = 0; start < n; start += batch) {
        const int64_t count = std::min(batch, n - start);
        Tensor chunk({count, c, h, w});
        std::copy_n(images.data.begin() + start * c * h * w, count * c * h * w,
                    chunk.data.begin());
        Tape g;
        Var e = net.forward(g, g.constant(chunk));
        if (emb_dim < 0) {
            emb_dim = e->value.dim(1);
            out = Tensor({n, emb_dim});
        }
        std::copy(e->value.data.begin(), e->value.data.end(),
                  out.data.begin() + start * emb_dim);
    }
    return out;
}

RetrievalResult evaluate_retrieval(nets::SiameseNet& embedder,
                                   const data::Dataset& target) {
    std::vector<int64_t> q_idx, g_idx;
    for (int64_t i = 0; i < target.size(); ++i) {
        if (target.cameras[static_cast<size_t>(i)] == 0)
            q_idx.push_back(i);
        else
            g_idx.push_back(i);
    }
    if (q_idx.empty() || g_idx.empty())
        throw ValueError("evaluate_retrieval: need both cameras in the target set");
    auto qb = target.gather(q_idx);
    auto gb = target.gather(g_idx);
    Tensor qe = embed_images(embedder, qb.values);
    Tensor ge = embed_images(embedder, gb.values);
    return cmc_map(qe, ge, qb.identity, gb.identity, qb.camera, gb.camera);
}

data::Dataset adapt_dataset(nets::ModelSet& models, const data::Dataset& source,
                            int m, uint64_t seed) {
    const int64_t n = source.size();
    const int64_t c = source.images.dim(1), h = source.height(), w = source.width();
    data::Dataset out;
    out.images = Tensor({n * m, c, h, w});
    out.masks = Tensor({n * m, 1, h, w});

    const int64_t chunk = 32;
    for (int64_t start = 0; start < n; start += chunk) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(start + chunk, n); ++i) idx.push_back(i);
        auto batch = source.gather(idx);
        auto outs = train::adapt(models, batch.values, batch.mask, m, seed);
        for (int k = 0; k < m; ++k) {
            for (size_t b = 0; b < idx.size(); ++b) {
                const int64_t dst = static_cast<int64_t>(k) * n + idx[b];
                std::copy_n(outs[static_cast<size_t>(k)].images.data.begin() +
                                static_cast<int64_t>(b) * c * h * w,
                            c * h * w, out.images.data.begin() + dst * c * h * w);
                std::copy_n(batch.mask.data.begin() + static_cast<int64_t>(b) * h * w,
                            h * w, out.masks.data.begin() + dst * h * w);
            }
        }
    }
    for (int k = 0; k < m; ++k) {
        out.identities.insert(out.identities.end(), source.identities.begin(),
                              source.identities.end());
        out.cameras.insert(out.cameras.end(), source.cameras.begin(),
                           source.cameras.end());
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ValueError("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> order(v.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](size_t i, size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (size_t pos = 0; pos < order.size();) {
            size_t end = pos;
            while (end + 1 < order.size() && v[order[end + 1]] == v[order[pos]]) ++end;
            const double avg = (static_cast<double>(pos) + static_cast<double>(end)) / 2.0 + 1.0;
            for (size_t k = pos; k <= end; ++k) r[order[k]] = avg;
            pos = end + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    double ma = 0, mb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= static_cast<double>(ra.size());
    mb /= static_cast<double>(rb.size());
    double cov = 0, va = 0, vb = 0;
    for (size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0 || vb == 0) return 0.0;
    return cov / std::sqrt(va * vb);
}

MSweepResult m_sweep(nets::ModelSet& models, const data::Dataset& train_x,
                     const data::Dataset& test_y, const std::vector<int>& m_values,
                     const nets::NetConfig& net, const ToyEmbedderConfig& toy) {
    if (m_values.empty()) throw ValueError("m_sweep: need at least one M");
    MSweepResult result;
    for (int m : m_values) {
        data::Dataset setm = adapt_dataset(models, train_x, m, Rng::mix(toy.seed, 0x5EED));
        auto embedder = train_toy_embedder(setm, net, toy);
        auto res = evaluate_retrieval(embedder, test_y);
        result.rows.push_back({m, res.r1, res.r5, res.r10, res.map});
    }
    if (result.rows.size() >= 2) {
        std::vector<double> ms, r1s;
        for (const auto& row : result.rows) {
            ms.push_back(static_cast<double>(row.m));
            r1s.push_back(row.r1);
        }
        result.spearman_rho = spearman(ms, r1s);
    }
    return result;
}

}  // namespace sagan::eval
