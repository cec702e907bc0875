// Training objective: photometric reconstruction with an SSIM term,
// edge-aware smoothness of normalized inverse depth, cosine feature
// reconstruction against downsampled targets, and feature smoothness.
#pragma once

#include <cstdint>
#include <vector>

#include "fieldsc/log.hpp"
#include "fieldsc/tensor.hpp"

namespace fieldsc::losses {

using ad::Tensor;

struct LossWeights {
    float lambda_p = 1.0f;
    float lambda_s = 0.001f;
    float lambda_f = 0.2f;
    float lambda_fs = 0.25f;
    // Split between L1 and SSIM inside the photometric term.
    float lambda_l1 = 0.85f;
    float lambda_ssim = 0.15f;

    void validate() const {
        for (float v : {lambda_p, lambda_s, lambda_f, lambda_fs, lambda_l1, lambda_ssim})
            if (v < 0.0f) throw ConfigError("losses: weights must be nonnegative");
    }
};

// ---------------------------------------------------------------------------
// SSIM

namespace detail {
constexpr float kSsimC1 = 1e-4f;
constexpr float kSsimC2 = 9e-4f;

// Local SSIM values over all valid 3x3 windows; x,y are [N,h,w] with h,w >= 3.
inline Tensor ssim_window_map(const Tensor& x, const Tensor& y) {
    Tensor mx = ad::box3_valid(x);
    Tensor my = ad::box3_valid(y);
    Tensor mxx = ad::box3_valid(ad::mul(x, x));
    Tensor myy = ad::box3_valid(ad::mul(y, y));
    Tensor mxy = ad::box3_valid(ad::mul(x, y));
    Tensor vx = ad::sub(mxx, ad::mul(mx, mx));
    Tensor vy = ad::sub(myy, ad::mul(my, my));
    Tensor cov = ad::sub(mxy, ad::mul(mx, my));
    Tensor c1 = Tensor::scalar(kSsimC1), c2 = Tensor::scalar(kSsimC2);
    Tensor num = ad::mul(ad::add(ad::scale(ad::mul(mx, my), 2.0f), c1),
                         ad::add(ad::scale(cov, 2.0f), c2));
    Tensor den = ad::mul(ad::add(ad::add(ad::mul(mx, mx), ad::mul(my, my)), c1),
                         ad::add(ad::add(vx, vy), c2));
    return ad::div(num, den);
}
}  // namespace detail

// Mean SSIM between two equally shaped stacks of planes [N,h,w] (a color
// patch is passed as its three channel planes). Result is a scalar in
// [-1, 1]. The loss form used elsewhere is (1 - ssim)/2.
inline Tensor ssim(const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) throw ShapeError("ssim: inputs must have identical shapes");
    if (x.rank() != 3 || x.extent(1) < 3 || x.extent(2) < 3)
        throw ShapeError("ssim: expected [N,h,w] with h,w >= 3");
    return ad::mean(detail::ssim_window_map(x, y));
}

// ---------------------------------------------------------------------------
// Photometric

struct PhotometricResult {
    Tensor loss;                           // scalar mean over counted patches
    Tensor per_patch;                      // [B] minimum per patch (garbage where unused)
    int counted = 0;                       // patches with >= 1 valid reconstruction
    std::vector<std::uint8_t> patch_used;  // [B]
};

// target [B,3,h,w]; one reconstruction stack per source view, each [B,3,h,w]
// with a per-patch validity vector. Per patch and source: the L1/SSIM blend;
// the patch's loss is the minimum over its valid sources, invalid patches are
// dropped from the mean.
inline PhotometricResult photometric_loss(const Tensor& target,
                                          const std::vector<Tensor>& recon,
                                          const std::vector<std::vector<std::uint8_t>>& valid,
                                          const LossWeights& w) {
    if (recon.empty()) throw ShapeError("photometric_loss: need at least one source view");
    if (recon.size() != valid.size())
        throw ShapeError("photometric_loss: one validity vector per reconstruction");
    if (target.rank() != 4 || target.extent(1) != 3)
        throw ShapeError("photometric_loss: target must be [B,3,h,w]");
    int b = target.extent(0), h = target.extent(2), wd = target.extent(3);
    int per_patch_px = 3 * h * wd;
    int ssim_px = 3 * (h - 2) * (wd - 2);

    Tensor target_planes = ad::reshape(target, {b * 3, h, wd});
    Tensor best;
    for (std::size_t s = 0; s < recon.size(); ++s) {
        if (recon[s].shape() != target.shape())
            throw ShapeError("photometric_loss: reconstruction shape mismatch");
        if (static_cast<int>(valid[s].size()) != b)
            throw ShapeError("photometric_loss: validity vector length mismatch");

        Tensor diff = ad::abs(ad::sub(target, recon[s]));
        Tensor l1 = ad::mean(ad::reshape(diff, {b, per_patch_px}), 1);

        Tensor smap = detail::ssim_window_map(target_planes,
                                              ad::reshape(recon[s], {b * 3, h, wd}));
        Tensor s_patch = ad::mean(ad::reshape(smap, {b, ssim_px}), 1);
        Tensor dssim = ad::scale(ad::sub(Tensor::scalar(1.0f), s_patch), 0.5f);

        Tensor term = ad::add(ad::scale(l1, w.lambda_l1), ad::scale(dssim, w.lambda_ssim));

        // Invalid reconstructions are pushed out of reach of the minimum.
        Tensor mask = Tensor::zeros({b});
        for (int i = 0; i < b; ++i)
            if (!valid[s][static_cast<std::size_t>(i)])
                mask.mutable_values()[static_cast<std::size_t>(i)] = 1e6f;
        term = ad::add(term, mask);

        best = s == 0 ? term : ad::min(best, term);
    }

    PhotometricResult out;
    out.per_patch = best;
    out.patch_used.assign(static_cast<std::size_t>(b), 0);
    Tensor sel = Tensor::zeros({b});
    for (int i = 0; i < b; ++i) {
        bool any = false;
        for (const auto& v : valid) any = any || v[static_cast<std::size_t>(i)];
        if (any) {
            out.patch_used[static_cast<std::size_t>(i)] = 1;
            sel.mutable_values()[static_cast<std::size_t>(i)] = 1.0f;
            ++out.counted;
        }
    }
    if (out.counted == 0) {
        log::warn("photometric_loss: no patch had a valid reconstruction");
        out.loss = Tensor::scalar(0.0f);
        return out;
    }
    out.loss = ad::scale(ad::sum(ad::mul(best, sel)), 1.0f / static_cast<float>(out.counted));
    return out;
}

// ---------------------------------------------------------------------------
// Smoothness

// map [B,C,H,W], image [B,3,H,W]: mean of |forward x-diff of map| weighted by
// exp(-mean-rgb |x-diff of image|), plus the same along y. Degenerate axes
// (width or height 1) contribute zero.
inline Tensor edge_aware_smoothness_batch(const Tensor& map, const Tensor& image) {
    if (map.rank() != 4 || image.rank() != 4 || image.extent(1) != 3)
        throw ShapeError("edge_aware_smoothness: expected map [B,C,H,W], image [B,3,H,W]");
    if (map.extent(0) != image.extent(0) || map.extent(2) != image.extent(2) ||
        map.extent(3) != image.extent(3))
        throw ShapeError("edge_aware_smoothness: spatial shapes must match");
    int b = map.extent(0), c = map.extent(1), h = map.extent(2), w = map.extent(3);

    auto diff = [](const Tensor& t, int axis) {
        ad::Shape sz = t.shape();
        std::vector<int> starts(sz.size(), 0), hi(sz.begin(), sz.end());
        hi[static_cast<std::size_t>(axis)] -= 1;
        Tensor lo_part = ad::slice(t, starts, hi);
        starts[static_cast<std::size_t>(axis)] = 1;
        Tensor hi_part = ad::slice(t, starts, hi);
        return ad::sub(hi_part, lo_part);
    };

    Tensor total = Tensor::scalar(0.0f);
    if (w > 1) {
        Tensor gx = ad::abs(diff(map, 3));
        Tensor ix = ad::mean(ad::abs(diff(image, 3)), 1, /*keepdim=*/true);  // [B,1,H,W-1]
        total = ad::add(total, ad::mean(ad::mul(gx, ad::exp(ad::neg(ix)))));
    }
    if (h > 1) {
        Tensor gy = ad::abs(diff(map, 2));
        Tensor iy = ad::mean(ad::abs(diff(image, 2)), 1, /*keepdim=*/true);
        total = ad::add(total, ad::mean(ad::mul(gy, ad::exp(ad::neg(iy)))));
    }
    (void)b;
    (void)c;
    return total;
}

inline Tensor edge_aware_smoothness(const Tensor& map, const Tensor& image) {
    if (map.rank() != 3 || image.rank() != 3)
        throw ShapeError("edge_aware_smoothness: expected map [C,H,W], image [3,H,W]");
    Tensor m4 = ad::reshape(map, {1, map.extent(0), map.extent(1), map.extent(2)});
    Tensor i4 = ad::reshape(image, {1, image.extent(0), image.extent(1), image.extent(2)});
    return edge_aware_smoothness_batch(m4, i4);
}

// Invert, then divide by the mean of the inverses. Scale-invariant.
inline Tensor normalize_inverse_depth(const Tensor& depth) {
    for (float d : depth.values())
        if (d <= 0.0f) throw DomainError("normalize_inverse_depth: depths must be positive");
    Tensor q = ad::div(Tensor::scalar(1.0f), depth);
    return ad::div(q, ad::mean(q));
}

// Per-entry variant for a batch of depth patches [B,h,w]: each patch is
// normalized by its own mean inverse depth.
inline Tensor normalize_inverse_depth_batch(const Tensor& depth) {
    if (depth.rank() != 3) throw ShapeError("normalize_inverse_depth_batch: expected [B,h,w]");
    for (float d : depth.values())
        if (d <= 0.0f) throw DomainError("normalize_inverse_depth: depths must be positive");
    Tensor q = ad::div(Tensor::scalar(1.0f), depth);
    Tensor m = ad::mean(ad::reshape(q, {depth.extent(0), depth.extent(1) * depth.extent(2)}), 1,
                        /*keepdim=*/true);  // [B,1]
    return ad::div(q, ad::reshape(m, {depth.extent(0), 1, 1}));
}

// ---------------------------------------------------------------------------
// Feature reconstruction

// Softmax-normalized p*p kernel shared across cells and channels.
inline Tensor downsample_kernel(const Tensor& logits, int p) {
    if (logits.rank() != 1 || logits.extent(0) != p * p)
        throw ShapeError("downsample_kernel: logits must be [p*p]");
    return ad::softmax(logits, 0);
}

// Learned blur-and-stride pooling: features [D,H,W] -> [D,H/p,W/p].
inline Tensor downsample_features(const Tensor& feats, const Tensor& logits, int p) {
    if (feats.rank() != 3) throw ShapeError("downsample_features: expected [D,H,W]");
    int d = feats.extent(0), h = feats.extent(1), w = feats.extent(2);
    if (p < 1 || h % p != 0 || w % p != 0)
        throw ShapeError("downsample_features: p must divide H and W");
    int hp = h / p, wp = w / p;
    Tensor blocks = ad::reshape(feats, {d, hp, p, wp, p});
    blocks = ad::permute(blocks, {0, 1, 3, 2, 4});           // [D,Hp,Wp,p,p]
    blocks = ad::reshape(blocks, {d * hp * wp, p * p});
    Tensor kernel = ad::reshape(downsample_kernel(logits, p), {p * p, 1});
    return ad::reshape(ad::matmul(blocks, kernel), {d, hp, wp});
}

// Per-row cosine similarity between [B,D] stacks, clamped to [-1,1].
// Zero-norm rows come out as 0 and are counted for the caller.
inline Tensor rowwise_cosine(const Tensor& a, const Tensor& b, int* zero_rows = nullptr) {
    if (a.shape() != b.shape() || a.rank() != 2)
        throw ShapeError("rowwise_cosine: expected matching [B,D] inputs");
    int n = a.extent(0);
    Tensor dot = ad::sum(ad::mul(a, b), 1);
    Tensor eps = Tensor::full({n}, 1e-30f);
    Tensor na = ad::sqrt(ad::add(ad::sum(ad::mul(a, a), 1), eps));
    Tensor nb = ad::sqrt(ad::add(ad::sum(ad::mul(b, b), 1), eps));
    Tensor cos = ad::div(dot, ad::mul(na, nb));
    cos = ad::max(cos, Tensor::full({n}, -1.0f));
    cos = ad::min(cos, Tensor::full({n}, 1.0f));
    if (zero_rows) {
        *zero_rows = 0;
        for (int i = 0; i < n; ++i)
            if (na.values()[static_cast<std::size_t>(i)] < 1e-12f ||
                nb.values()[static_cast<std::size_t>(i)] < 1e-12f)
                ++*zero_rows;
        if (*zero_rows > 0)
            log::info("rowwise_cosine: ", *zero_rows, " zero-norm rows treated as similarity 0");
    }
    return cos;
}

// 1 - mean rowwise cosine, the patch-level workhorse behind the feature loss.
inline Tensor feature_loss_rows(const Tensor& target_rows, const Tensor& pred_rows,
                                int* zero_rows = nullptr) {
    Tensor cos = rowwise_cosine(target_rows, pred_rows, zero_rows);
    return ad::sub(Tensor::scalar(1.0f), ad::mean(cos));
}

// Full-image form: targets [D,Hp,Wp] vs downsampled rendered features plus
// the constant decomposition.
inline Tensor feature_loss(const Tensor& target, const Tensor& rendered, const Tensor& f_bar,
                           const Tensor& logits, int p, int* zero_rows = nullptr) {
    Tensor pred = ad::add(downsample_features(rendered, logits, p), f_bar);
    if (pred.shape() != target.shape())
        throw ShapeError("feature_loss: target and downsampled shapes differ");
    int d = target.extent(0), cells = target.extent(1) * target.extent(2);
    Tensor t_rows = ad::permute(ad::reshape(target, {d, cells}), {1, 0});
    Tensor p_rows = ad::permute(ad::reshape(pred, {d, cells}), {1, 0});
    return feature_loss_rows(t_rows, p_rows, zero_rows);
}

// ---------------------------------------------------------------------------
// Weighted total

struct LossTerms {
    Tensor photometric;  // L_p
    Tensor smoothness;   // L_s
    Tensor feature;      // L_f
    Tensor feat_smooth;  // L_fs
};

struct LossReport {
    float photometric = 0, smoothness = 0, feature = 0, feat_smooth = 0, total = 0;
};

inline Tensor total_loss(const LossTerms& t, const LossWeights& w, LossReport* report = nullptr) {
    w.validate();
    Tensor total = ad::add(
        ad::add(ad::scale(t.photometric, w.lambda_p), ad::scale(t.smoothness, w.lambda_s)),
        ad::add(ad::scale(t.feature, w.lambda_f), ad::scale(t.feat_smooth, w.lambda_fs)));
    if (report) {
        report->photometric = t.photometric.item();
        report->smoothness = t.smoothness.item();
        report->feature = t.feature.item();
        report->feat_smooth = t.feat_smooth.item();
        report->total = total.item();
    }
    return total;
}

}  // namespace fieldsc::losses
