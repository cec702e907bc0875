// Second training stage: a small segmentation head is distilled from the
// frozen feature field with contrastive correlation losses. Feature batches
// are sampled around surface points, paired through a FIFO buffer (self /
// nearest-neighbor / random), and the head's output space is clustered with
// cosine mini-batch k-means to obtain unsupervised classes.
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fieldsc/field.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/log.hpp"
#include "fieldsc/random.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::distill {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Segmentation head

struct SegHead {
    Tensor w1, b1, w2, b2;  // D -> hidden -> K, K < D

    static SegHead init(int d, int hidden, int k, Rng& rng) {
        if (k >= d) throw ConfigError("seg head: distilled dim K must be smaller than D");
        if (hidden < 1 || k < 1) throw ConfigError("seg head: dims must be positive");
        auto dense = [&rng](int rows, int cols) {
            Tensor t = Tensor::zeros({rows, cols});
            float scale = std::sqrt(2.0f / static_cast<float>(rows));
            for (auto& x : t.mutable_values()) x = static_cast<float>(rng.normal()) * scale;
            return t;
        };
        SegHead h;
        h.w1 = dense(d, hidden);
        h.b1 = Tensor::zeros({hidden});
        h.w2 = dense(hidden, k);
        h.b2 = Tensor::zeros({k});
        return h;
    }

    int out_dim() const { return w2.extent(1); }

    Tensor apply(const Tensor& rows) const {
        return ad::affine(ad::softplus(ad::affine(rows, w1, b1)), w2, b2);
    }

    std::vector<std::pair<std::string, Tensor*>> named() {
        return {{"head_w1", &w1}, {"head_b1", &b1}, {"head_w2", &w2}, {"head_b2", &b2}};
    }

    std::vector<Tensor*> all() {
        std::vector<Tensor*> out;
        for (auto& [n, t] : named()) out.push_back(t);
        return out;
    }

    SegHead watched(ad::Tape& tape) const {
        SegHead h = *this;
        for (auto& [n, t] : h.named()) *t = tape.watch(*t);
        return h;
    }
};

// ---------------------------------------------------------------------------
// Feature batches and the FIFO buffer

struct FeatureBatch {
    Tensor features;      // [D, N], one column per sampled point, detached
    Tensor mean_feature;  // [D]
    std::int64_t scene_id = -1;
    geo::Vec3 center{};
};

class FeatureBuffer {
  public:
    explicit FeatureBuffer(std::size_t capacity = 256) : capacity_(capacity) {
        if (capacity_ == 0) throw ConfigError("feature buffer: capacity must be positive");
    }

    void push(FeatureBatch batch) {
        if (entries_.size() == capacity_) entries_.pop_front();
        entries_.push_back(std::move(batch));
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    const FeatureBatch& at(std::size_t i) const { return entries_.at(i); }

  private:
    std::size_t capacity_;
    std::deque<FeatureBatch> entries_;
};

// ---------------------------------------------------------------------------
// 3D sampling

// Depth-stratified center selection: order valid surface points by depth,
// cut into `m` nearly equal chunks (the remainder goes to the leading ones),
// draw one point uniformly from each chunk.
inline std::vector<geo::Vec3> sample_center_points(const std::vector<geo::Vec3>& points,
                                                   const std::vector<float>& depths,
                                                   const std::vector<std::uint8_t>& valid, int m,
                                                   Rng& rng) {
    if (points.size() != depths.size() || points.size() != valid.size())
        throw ShapeError("sample_center_points: inputs must be parallel arrays");
    if (m < 1) throw DomainError("sample_center_points: need m >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (valid[i]) idx.push_back(i);
    if (idx.size() < static_cast<std::size_t>(m))
        throw DomainError("sample_center_points: fewer valid surface points than centers");
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return depths[a] != depths[b] ? depths[a] < depths[b] : a < b;
    });

    std::vector<geo::Vec3> out;
    out.reserve(static_cast<std::size_t>(m));
    std::size_t base = idx.size() / static_cast<std::size_t>(m);
    std::size_t rem = idx.size() % static_cast<std::size_t>(m);
    std::size_t begin = 0;
    for (int c = 0; c < m; ++c) {
        std::size_t len = base + (static_cast<std::size_t>(c) < rem ? 1 : 0);
        std::size_t pick = begin + static_cast<std::size_t>(rng.uniform_int(len));
        out.push_back(points[idx[pick]]);
        begin += len;
    }
    return out;
}

using DensityFn = std::function<std::vector<float>(const std::vector<geo::Vec3>&)>;

// Rejection sampling inside the ball of radius r around `center`, keeping
// draws whose field density exceeds sigma_min. If the acceptance budget
// (max_attempts draws per requested point) runs out, the densest draws seen
// so far are returned instead and a warning is emitted.
inline std::vector<geo::Vec3> sample_neighborhood(geo::Vec3 center, const DensityFn& density,
                                                  int n, float r, float sigma_min, Rng& rng,
                                                  int max_attempts = 100) {
    if (n < 1) throw DomainError("sample_neighborhood: need n >= 1");
    if (r <= 0.0f) throw DomainError("sample_neighborhood: radius must be positive");
    std::vector<geo::Vec3> accepted;
    std::vector<std::pair<float, geo::Vec3>> seen;  // (density, point) in draw order
    accepted.reserve(static_cast<std::size_t>(n));
    std::size_t budget = static_cast<std::size_t>(max_attempts) * static_cast<std::size_t>(n);
    std::size_t drawn = 0;
    while (accepted.size() < static_cast<std::size_t>(n) && drawn < budget) {
        std::size_t chunk = std::min(static_cast<std::size_t>(n), budget - drawn);
        std::vector<geo::Vec3> draws;
        draws.reserve(chunk);
        for (std::size_t i = 0; i < chunk; ++i) {
            // Uniform in the ball: random direction, radius ~ r * u^(1/3).
            geo::Vec3 dir;
            float len2;
            do {
                dir = {static_cast<float>(rng.normal()), static_cast<float>(rng.normal()),
                       static_cast<float>(rng.normal())};
                len2 = geo::dot(dir, dir);
            } while (len2 < 1e-12f);
            float rad = r * std::cbrt(static_cast<float>(rng.uniform()));
            draws.push_back(center + (rad / std::sqrt(len2)) * dir);
        }
        drawn += chunk;
        std::vector<float> sig = density(draws);
        if (sig.size() != draws.size())
            throw ShapeError("sample_neighborhood: density callback size mismatch");
        for (std::size_t i = 0; i < draws.size(); ++i) {
            seen.emplace_back(sig[i], draws[i]);
            if (sig[i] > sigma_min && accepted.size() < static_cast<std::size_t>(n))
                accepted.push_back(draws[i]);
        }
    }
    if (accepted.size() == static_cast<std::size_t>(n)) return accepted;

    log::warn("sample_neighborhood: acceptance budget exhausted (", accepted.size(), "/", n,
              " accepted); falling back to densest draws");
    std::vector<std::size_t> order(seen.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return seen[a].first > seen[b].first; });
    std::vector<geo::Vec3> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(seen[order[static_cast<std::size_t>(i)]].second);
    return out;
}

// Queries the frozen field at the sampled points and stacks the up-projected
// features column-wise. Features are detached: distillation never reaches
// back into the field. Invalid points are dropped; fewer than half surviving
// is an error.
inline FeatureBatch build_feature_batch(const std::vector<geo::Vec3>& points,
                                        const Tensor& e_rows, const geo::Pose& input_pose,
                                        const geo::Intrinsics& k, const field::FieldConfig& cfg,
                                        const field::FieldParams& params, std::int64_t scene_id,
                                        geo::Vec3 center) {
    field::QueryFull q = field::query_field(e_rows, points, input_pose, k, cfg, params);
    std::vector<int> keep;
    for (std::size_t i = 0; i < q.valid.size(); ++i)
        if (q.valid[i]) keep.push_back(static_cast<int>(i));
    if (keep.size() * 2 < points.size())
        throw DomainError("build_feature_batch: too many points fell outside the frustum");
    Tensor rows = ad::detach(ad::gather_rows(q.feat, keep));  // [N_kept, D]
    FeatureBatch fb;
    fb.features = ad::permute(rows, {1, 0});  // [D, N_kept]
    fb.mean_feature = ad::mean(fb.features, 1);
    fb.scene_id = scene_id;
    fb.center = center;
    return fb;
}

enum class LookupMode { knn, random };

// Picks a partner batch: `random` draws uniformly; `knn` ranks the buffer by
// cosine similarity between mean features and draws uniformly among the
// top-k entries (ties broken toward older entries).
inline const FeatureBatch& buffer_lookup(const FeatureBuffer& buffer, const FeatureBatch& query,
                                         LookupMode mode, int k, Rng& rng) {
    if (buffer.size() == 0) throw DomainError("buffer_lookup: buffer is empty");
    if (mode == LookupMode::random)
        return buffer.at(static_cast<std::size_t>(rng.uniform_int(buffer.size())));
    if (buffer.size() < static_cast<std::size_t>(k))
        throw DomainError("buffer_lookup: knn requires at least k buffered batches");

    auto cosine = [](const Tensor& a, const Tensor& b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dot += static_cast<double>(a.values()[i]) * b.values()[i];
            na += static_cast<double>(a.values()[i]) * a.values()[i];
            nb += static_cast<double>(b.values()[i]) * b.values()[i];
        }
        double den = std::sqrt(na) * std::sqrt(nb);
        return den > 0 ? dot / den : 0.0;
    };
    std::vector<std::size_t> order(buffer.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> sim(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i)
        sim[i] = cosine(buffer.at(i).mean_feature, query.mean_feature);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
    std::size_t pick = order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::size_t>(k)))];
    return buffer.at(pick);
}

// ---------------------------------------------------------------------------
// Correlation losses

namespace detail {

// Unit-normalize the columns of [D,N] in plain float math (inputs are
// detached constants).
inline Tensor normalize_columns_const(const Tensor& f) {
    int d = f.extent(0), n = f.extent(1);
    Tensor out = Tensor::zeros({d, n});
    for (int j = 0; j < n; ++j) {
        double norm2 = 0;
        for (int i = 0; i < d; ++i) {
            float v = f.values()[static_cast<std::size_t>(i) * n + j];
            norm2 += static_cast<double>(v) * v;
        }
        float inv = norm2 > 0 ? static_cast<float>(1.0 / std::sqrt(norm2)) : 0.0f;
        for (int i = 0; i < d; ++i)
            out.mutable_values()[static_cast<std::size_t>(i) * n + j] =
                f.values()[static_cast<std::size_t>(i) * n + j] * inv;
    }
    return out;
}

// Row-normalize a tracked [N,K] matrix on the tape.
inline Tensor normalize_rows(const Tensor& z) {
    Tensor n2 = ad::sum(ad::mul(z, z), 1, /*keepdim=*/true);  // [N,1]
    return ad::div(z, ad::sqrt(ad::add(n2, Tensor::full({z.extent(0), 1}, 1e-30f))));
}

}  // namespace detail

// Contrastive correlation: S holds feature-space cosines (constants), S^h
// the head-space cosines (tracked). loss = -(1/N^2) sum (S - b) * max(S^h, 0).
inline Tensor correlation_loss(const FeatureBatch& fx, const FeatureBatch& fy, const SegHead& head,
                               float b) {
    if (fx.features.extent(0) != fy.features.extent(0))
        throw ShapeError("correlation_loss: feature dims differ");
    int n_x = fx.features.extent(1), n_y = fy.features.extent(1);
    if (n_x != n_y) throw ShapeError("correlation_loss: batch sizes differ");

    Tensor xn = detail::normalize_columns_const(fx.features);
    Tensor yn = detail::normalize_columns_const(fy.features);
    Tensor s = ad::matmul(ad::permute(xn, {1, 0}), yn);  // [N,N] constants

    Tensor zx = detail::normalize_rows(head.apply(ad::permute(fx.features, {1, 0})));
    Tensor zy = detail::normalize_rows(head.apply(ad::permute(fy.features, {1, 0})));
    Tensor sh = ad::matmul(zx, ad::permute(zy, {1, 0}));  // [N,N] tracked

    Tensor weighted = ad::mul(ad::add_const(s, -b), ad::relu(sh));
    return ad::scale(ad::sum(weighted), -1.0f / static_cast<float>(n_x) / static_cast<float>(n_y));
}

struct DistillWeights {
    float lambda_self = 0.08f;
    float lambda_knn = 0.43f;
    float lambda_rand = 0.67f;
    float b_self = 0.44f;
    float b_knn = 0.18f;
    float b_rand = 0.87f;
    int k = 4;

    void validate() const {
        if (lambda_self < 0 || lambda_knn < 0 || lambda_rand < 0)
            throw ConfigError("distill: lambdas must be nonnegative");
        for (float b : {b_self, b_knn, b_rand})
            if (b < -1.0f || b > 1.0f) throw ConfigError("distill: biases must lie in [-1,1]");
        if (k < 1) throw ConfigError("distill: k must be positive");
    }
};

struct DistillReport {
    float self_term = 0, knn_term = 0, rand_term = 0;
    bool knn_present = false, rand_present = false;
};

// Weighted sum of the three correlation terms. Missing partner batches (an
// underfilled buffer early in training) drop their term with a notice.
inline Tensor distillation_loss(const FeatureBatch& fx, const FeatureBatch& fx_self,
                                const std::optional<FeatureBatch>& fy_knn,
                                const std::optional<FeatureBatch>& fy_rand, const SegHead& head,
                                const DistillWeights& w, DistillReport* report = nullptr) {
    w.validate();
    Tensor self_term = correlation_loss(fx, fx_self, head, w.b_self);
    Tensor total = ad::scale(self_term, w.lambda_self);
    if (report) {
        *report = DistillReport{};
        report->self_term = self_term.item();
    }
    if (fy_knn) {
        Tensor t = correlation_loss(fx, *fy_knn, head, w.b_knn);
        if (report) {
            report->knn_term = t.item();
            report->knn_present = true;
        }
        total = ad::add(total, ad::scale(t, w.lambda_knn));
    } else {
        log::info("distillation_loss: no kNN partner available, term skipped");
    }
    if (fy_rand) {
        Tensor t = correlation_loss(fx, *fy_rand, head, w.b_rand);
        if (report) {
            report->rand_term = t.item();
            report->rand_present = true;
        }
        total = ad::add(total, ad::scale(t, w.lambda_rand));
    } else {
        log::info("distillation_loss: no random partner available, term skipped");
    }
    return total;
}

// ---------------------------------------------------------------------------
// Cosine mini-batch k-means

struct ClusterCenters {
    Tensor theta;                      // [K, C], unit-norm columns
    std::vector<std::int64_t> counts;  // assignments absorbed per center

    int dim() const { return theta.extent(0); }
    int count() const { return theta.extent(1); }
};

namespace detail {
inline void renormalize_columns(Tensor& theta) {
    int k = theta.extent(0), c = theta.extent(1);
    for (int j = 0; j < c; ++j) {
        double n2 = 0;
        for (int i = 0; i < k; ++i) {
            float v = theta.values()[static_cast<std::size_t>(i) * c + j];
            n2 += static_cast<double>(v) * v;
        }
        float inv = n2 > 1e-30 ? static_cast<float>(1.0 / std::sqrt(n2)) : 0.0f;
        for (int i = 0; i < k; ++i)
            theta.mutable_values()[static_cast<std::size_t>(i) * c + j] *= inv;
    }
}
}  // namespace detail

// Farthest-similarity seeding from the first batch z [K,N]: start from a
// random column, then repeatedly take the column whose best similarity to
// the chosen set is lowest.
inline ClusterCenters init_centers(const Tensor& z, int c, Rng& rng) {
    if (z.rank() != 2) throw ShapeError("init_centers: expected [K,N]");
    int k = z.extent(0), n = z.extent(1);
    if (n < c) throw DomainError("init_centers: need at least as many points as centers");
    Tensor zn = detail::normalize_columns_const(z);
    std::vector<int> chosen{static_cast<int>(rng.uniform_int(static_cast<std::size_t>(n)))};
    std::vector<double> best_sim(static_cast<std::size_t>(n),
                                 -2.0);  // max similarity to the chosen set
    while (static_cast<int>(chosen.size()) < c) {
        int last = chosen.back();
        int arg = -1;
        double lowest = 3.0;
        for (int j = 0; j < n; ++j) {
            double dot = 0;
            for (int i = 0; i < k; ++i)
                dot += static_cast<double>(zn.values()[static_cast<std::size_t>(i) * n + j]) *
                       zn.values()[static_cast<std::size_t>(i) * n + last];
            best_sim[static_cast<std::size_t>(j)] =
                std::max(best_sim[static_cast<std::size_t>(j)], dot);
            bool taken = std::find(chosen.begin(), chosen.end(), j) != chosen.end();
            if (!taken && best_sim[static_cast<std::size_t>(j)] < lowest) {
                lowest = best_sim[static_cast<std::size_t>(j)];
                arg = j;
            }
        }
        chosen.push_back(arg);
    }
    ClusterCenters cc;
    cc.theta = Tensor::zeros({k, c});
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < k; ++i)
            cc.theta.mutable_values()[static_cast<std::size_t>(i) * c + j] =
                zn.values()[static_cast<std::size_t>(i) * n + chosen[static_cast<std::size_t>(j)]];
    detail::renormalize_columns(cc.theta);
    cc.counts.assign(static_cast<std::size_t>(c), 0);
    return cc;
}

// Max-cosine assignment of each column of z (ties toward the lower index).
inline std::vector<int> assign_clusters(const ClusterCenters& cc, const Tensor& z) {
    if (z.extent(0) != cc.dim()) throw ShapeError("assign_clusters: dim mismatch");
    Tensor zn = detail::normalize_columns_const(z);
    int k = cc.dim(), c = cc.count(), n = z.extent(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double best = -2.0;
        int arg = 0;
        for (int m = 0; m < c; ++m) {
            double dot = 0;
            for (int i = 0; i < k; ++i)
                dot += static_cast<double>(zn.values()[static_cast<std::size_t>(i) * n + j]) *
                       cc.theta.values()[static_cast<std::size_t>(i) * c + m];
            if (dot > best + 1e-12) {
                best = dot;
                arg = m;
            }
        }
        out[static_cast<std::size_t>(j)] = arg;
    }
    return out;
}

// One mini-batch update: per center, absorb its assigned points and move
// toward their mean with rate n_assigned/count, then renormalize.
inline void kmeans_update(ClusterCenters& cc, const Tensor& z) {
    if (z.size() == 0 || z.extent(1) == 0) return;
    std::vector<int> assign = assign_clusters(cc, z);
    Tensor zn = detail::normalize_columns_const(z);
    int k = cc.dim(), c = cc.count(), n = z.extent(1);
    for (int m = 0; m < c; ++m) {
        std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
        std::int64_t cnt = 0;
        for (int j = 0; j < n; ++j)
            if (assign[static_cast<std::size_t>(j)] == m) {
                ++cnt;
                for (int i = 0; i < k; ++i)
                    mean[static_cast<std::size_t>(i)] +=
                        zn.values()[static_cast<std::size_t>(i) * n + j];
            }
        if (cnt == 0) continue;
        for (auto& v : mean) v /= static_cast<double>(cnt);
        cc.counts[static_cast<std::size_t>(m)] += cnt;
        double rate = static_cast<double>(cnt) / static_cast<double>(cc.counts[static_cast<std::size_t>(m)]);
        for (int i = 0; i < k; ++i) {
            float& t = cc.theta.mutable_values()[static_cast<std::size_t>(i) * c + m];
            t = static_cast<float>(t + rate * (mean[static_cast<std::size_t>(i)] - t));
        }
    }
    detail::renormalize_columns(cc.theta);
}

// Mean best-cosine of the batch under the current centers (the clustering
// objective; useful for monitoring).
inline double kmeans_objective(const ClusterCenters& cc, const Tensor& z) {
    Tensor zn = detail::normalize_columns_const(z);
    int k = cc.dim(), c = cc.count(), n = z.extent(1);
    double total = 0;
    for (int j = 0; j < n; ++j) {
        double best = -2.0;
        for (int m = 0; m < c; ++m) {
            double dot = 0;
            for (int i = 0; i < k; ++i)
                dot += static_cast<double>(zn.values()[static_cast<std::size_t>(i) * n + j]) *
                       cc.theta.values()[static_cast<std::size_t>(i) * c + m];
            best = std::max(best, dot);
        }
        total += best;
    }
    return total / n;
}

// p = softmax over per-center cosine similarities of the distilled feature.
// rows [N,D] -> [N,C]; gradients flow if the head is watched.
inline Tensor probe_rows(const Tensor& rows, const SegHead& head, const ClusterCenters& cc) {
    Tensor z = detail::normalize_rows(head.apply(rows));  // [N,K]
    Tensor sims = ad::matmul(z, cc.theta);                // centers are unit columns
    return ad::softmax(sims, 1);
}

inline Tensor probe(const Tensor& f, const SegHead& head, const ClusterCenters& cc) {
    if (f.rank() != 1) throw ShapeError("probe: expected a single feature vector");
    Tensor rows = ad::reshape(f, {1, f.extent(0)});
    return ad::reshape(probe_rows(rows, head, cc), {cc.count()});
}

}  // namespace fieldsc::distill
