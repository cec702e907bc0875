#pragma once

// Evaluation protocols: Hungarian class alignment, voxel scene-completion
// metrics over range bands, 2D segmentation metrics, and multi-view feature
// consistency. Everything here works on frozen models and plain buffers, so
// reports from independent scenes can be merged by summing counts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fieldsc/distill.hpp"
#include "fieldsc/error.hpp"
#include "fieldsc/field.hpp"
#include "fieldsc/geometry.hpp"
#include "fieldsc/tensor.hpp"
#include "fieldsc/voxel.hpp"

namespace fieldsc::eval {

using ad::Tensor;

// ---------------------------------------------------------------------------
// Hungarian assignment

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// O(n^3) shortest augmenting path assignment on a square matrix; returns the
// minimal total cost, writing the row -> column map when `out` is non-null.
inline double assignment_cost(const std::vector<std::vector<double>>& a, std::vector<int>* out) {
    int n = static_cast<int>(a.size());
    if (n == 0) {
        if (out) out->clear();
        return 0.0;
    }
    // 1-indexed potentials; p[j] is the row matched to column j
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            int i0 = p[static_cast<std::size_t>(j0)], j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = a[static_cast<std::size_t>(i0 - 1)][static_cast<std::size_t>(j - 1)] -
                             u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    if (out) out->assign(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        int i = p[static_cast<std::size_t>(j)];
        total += a[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
        if (out) (*out)[static_cast<std::size_t>(i - 1)] = j - 1;
    }
    return total;
}

}  // namespace detail

// Minimum-cost perfect assignment; result[i] is the column matched to row i.
// Among equally cheap assignments the lexicographically smallest permutation
// wins, which keeps cluster-to-class alignments reproducible when overlap
// counts tie.
inline std::vector<int> hungarian_match(const std::vector<std::vector<double>>& cost) {
    std::size_t n = cost.size();
    for (const auto& row : cost) {
        if (row.size() != n) throw ShapeError("hungarian_match: cost matrix must be square");
        for (double c : row)
            if (!std::isfinite(c)) throw DomainError("hungarian_match: cost must be finite");
    }
    if (n == 0) return {};

    double best = detail::assignment_cost(cost, nullptr);
    double tol = 1e-9 * (1.0 + std::fabs(best));

    // Fix rows one by one to the smallest column that still permits an
    // optimal completion; n+1 solver calls per row keep this well under any
    // practical budget for class counts.
    std::vector<int> result(n, -1);
    std::vector<char> col_used(n, 0);
    double fixed_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> free_cols;
        for (std::size_t j = 0; j < n; ++j)
            if (!col_used[j]) free_cols.push_back(j);
        for (std::size_t j : free_cols) {
            // optimal completion over remaining rows x remaining columns
            std::vector<std::vector<double>> sub;
            sub.reserve(n - i - 1);
            for (std::size_t r = i + 1; r < n; ++r) {
                std::vector<double> row;
                row.reserve(n - i - 1);
                for (std::size_t c : free_cols)
                    if (c != j) row.push_back(cost[r][c]);
                sub.push_back(std::move(row));
            }
            double total = fixed_cost + cost[i][j] + detail::assignment_cost(sub, nullptr);
            if (total <= best + tol) {
                result[i] = static_cast<int>(j);
                col_used[j] = 1;
                fixed_cost += cost[i][j];
                break;
            }
        }
        if (result[i] < 0) throw DomainError("hungarian_match: no optimal completion found");
    }
    return result;
}

// Overlap counts between two aligned label sequences; rows index `pred`,
// columns index `gt`. Labels outside [0, classes) are rejected.
inline std::vector<std::vector<long long>> overlap_counts(const std::vector<int>& pred,
                                                          const std::vector<int>& gt,
                                                          int classes) {
    if (pred.size() != gt.size()) throw ShapeError("overlap_counts: length mismatch");
    if (classes < 1) throw ConfigError("overlap_counts: need at least one class");
    std::vector<std::vector<long long>> m(static_cast<std::size_t>(classes),
                                          std::vector<long long>(static_cast<std::size_t>(classes), 0));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= classes || gt[i] < 0 || gt[i] >= classes)
            throw DomainError("overlap_counts: label out of range");
        ++m[static_cast<std::size_t>(pred[i])][static_cast<std::size_t>(gt[i])];
    }
    return m;
}

// Hungarian alignment maximizing overlap: result[i] is the gt class assigned
// to predicted cluster i.
inline std::vector<int> match_by_overlap(const std::vector<std::vector<long long>>& overlap) {
    std::size_t n = overlap.size();
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        if (overlap[i].size() != n) throw ShapeError("match_by_overlap: overlap must be square");
        for (std::size_t j = 0; j < n; ++j)
            cost[i][j] = -static_cast<double>(overlap[i][j]);
    }
    return hungarian_match(cost);
}

// ---------------------------------------------------------------------------
// Voxel aggregation

// Samples a batch of world points, returning density per point and class
// probabilities row-major [N, classes]. Decouples the aggregation rule from
// the concrete field so analytic test fields slot in directly.
using VolumeSampler =
    std::function<void(const std::vector<geo::Vec3>&, std::vector<float>& sigma,
                       std::vector<float>& probs)>;

struct AggregateConfig {
    int samples_per_voxel = 2;  // s, giving s^3 points per voxel
    float occ_threshold = 0.5f;
    float far = 20.0f;  // observability limit along the view ray

    void validate() const {
        if (samples_per_voxel < 1)
            throw ConfigError("aggregate: samples_per_voxel must be positive");
        if (occ_threshold < 0.0f) throw ConfigError("aggregate: negative occupancy threshold");
        if (far <= 0.0f) throw ConfigError("aggregate: far limit must be positive");
    }
};

// Converts a continuous field into a voxel grid: a voxel is occupied iff the
// maximum sampled density exceeds the threshold, and its class maximizes the
// absorption-weighted probability sum alpha(sigma) * p_class with
// alpha(sigma) = 1 - exp(-sigma * voxel_size). Voxels whose centers fall
// outside the source frustum are marked unobserved.
inline vox::VoxelGrid aggregate_voxels(const VolumeSampler& sampler, int classes,
                                       const geo::Pose& input_pose, const geo::Intrinsics& k,
                                       const vox::GridConfig& grid, const AggregateConfig& cfg) {
    cfg.validate();
    if (classes < 1) throw ConfigError("aggregate: need at least one class");
    vox::VoxelGrid out = vox::VoxelGrid::empty(grid);
    geo::Vec3 cam = input_pose.center();

    int s = cfg.samples_per_voxel;
    std::size_t per_voxel = static_cast<std::size_t>(s) * s * s;
    std::vector<geo::Vec3> pts;
    pts.reserve(per_voxel);
    std::vector<float> sigma, probs;

    for (int ix = 0; ix < grid.nx; ++ix)
        for (int iy = 0; iy < grid.ny; ++iy)
            for (int iz = 0; iz < grid.nz; ++iz) {
                std::size_t vi = grid.index(ix, iy, iz);
                geo::Vec3 c = grid.center(ix, iy, iz);
                geo::Projection proj = geo::project(c, input_pose, k);
                if (!proj.in_front || !geo::in_image(proj, k) ||
                    geo::norm(c - cam) > cfg.far) {
                    out.observed[vi] = 0;
                    continue;
                }

                pts.clear();
                geo::Vec3 lo = grid.origin + geo::Vec3{static_cast<float>(ix),
                                                       static_cast<float>(iy),
                                                       static_cast<float>(iz)} *
                                                 grid.voxel_size;
                for (int a = 0; a < s; ++a)
                    for (int b = 0; b < s; ++b)
                        for (int d = 0; d < s; ++d)
                            // evenly spaced interior points at odd multiples
                            // of size / (2s)
                            pts.push_back(lo + geo::Vec3{(2.0f * a + 1.0f), (2.0f * b + 1.0f),
                                                         (2.0f * d + 1.0f)} *
                                                   (grid.voxel_size / (2.0f * s)));
                sampler(pts, sigma, probs);
                if (sigma.size() != per_voxel || probs.size() != per_voxel * classes)
                    throw ShapeError("aggregate: sampler returned wrong batch size");

                float max_sigma = 0.0f;
                std::vector<double> score(static_cast<std::size_t>(classes), 0.0);
                for (std::size_t p = 0; p < per_voxel; ++p) {
                    max_sigma = std::max(max_sigma, sigma[p]);
                    double alpha = 1.0 - std::exp(-static_cast<double>(sigma[p]) * grid.voxel_size);
                    for (int cl = 0; cl < classes; ++cl)
                        score[static_cast<std::size_t>(cl)] +=
                            alpha * probs[p * classes + static_cast<std::size_t>(cl)];
                }
                if (max_sigma > cfg.occ_threshold) {
                    out.occupied[vi] = 1;
                    out.cls[vi] = static_cast<std::int32_t>(
                        std::max_element(score.begin(), score.end()) - score.begin());
                }
            }
    return out;
}

// Adapter binding the trained field, segmentation head and cluster centers
// into a VolumeSampler. Off-frustum points get zero density so they never
// assert occupancy.
inline VolumeSampler make_field_sampler(const Tensor& e_rows, const geo::Pose& input_pose,
                                        const geo::Intrinsics& k, const field::FieldConfig& fcfg,
                                        const field::FieldParams& params,
                                        const distill::SegHead& head,
                                        const distill::ClusterCenters& centers) {
    return [=, &params, &head, &centers](const std::vector<geo::Vec3>& pts,
                                         std::vector<float>& sigma, std::vector<float>& probs) {
        field::QueryFull q = field::query_field(e_rows, pts, input_pose, k, fcfg, params);
        Tensor p = distill::probe_rows(q.feat, head, centers);
        std::size_t n = pts.size();
        std::size_t c = static_cast<std::size_t>(centers.count());
        sigma.assign(n, 0.0f);
        probs.assign(n * c, 0.0f);
        for (std::size_t i = 0; i < n; ++i) {
            if (!q.valid[i]) continue;
            sigma[i] = q.sigma.values()[i];
            for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = p.values()[i * c + j];
        }
    };
}

// ---------------------------------------------------------------------------
// Scene-completion metrics

struct RangeBand {
    float lo = 0.0f;
    float hi = 0.0f;  // half-open [lo, hi)
};

// Raw counts for one range band. The semantic confusion matrix carries an
// explicit "empty" state in row/column 0 so misses and hallucinations stay
// attributable; real class c occupies index c + 1.
struct BandCounts {
    long long tp = 0, fp = 0, fn = 0, tn = 0;  // geometric occupancy counts
    int classes = 0;
    std::vector<long long> confusion;  // (classes+1)^2, row = gt state, col = pred state

    long long& conf(int gt_state, int pred_state) {
        return confusion[static_cast<std::size_t>(gt_state) *
                             static_cast<std::size_t>(classes + 1) +
                         static_cast<std::size_t>(pred_state)];
    }
    long long conf(int gt_state, int pred_state) const {
        return confusion[static_cast<std::size_t>(gt_state) *
                             static_cast<std::size_t>(classes + 1) +
                         static_cast<std::size_t>(pred_state)];
    }
};

struct GeomScores {
    double iou = 1.0, precision = 1.0, recall = 1.0;
};

// Empty denominators read as perfect agreement: a band with nothing predicted
// and nothing present has nothing wrong with it.
inline GeomScores geometric_scores(const BandCounts& b) {
    GeomScores g;
    if (b.tp + b.fp + b.fn > 0) g.iou = static_cast<double>(b.tp) / (b.tp + b.fp + b.fn);
    if (b.tp + b.fp > 0) g.precision = static_cast<double>(b.tp) / (b.tp + b.fp);
    if (b.tp + b.fn > 0) g.recall = static_cast<double>(b.tp) / (b.tp + b.fn);
    return g;
}

// Per-class IoU; classes absent from both prediction and ground truth return
// NaN and are skipped by mean_iou.
inline std::vector<double> class_iou(const BandCounts& b) {
    std::vector<double> out(static_cast<std::size_t>(b.classes),
                            std::numeric_limits<double>::quiet_NaN());
    for (int c = 0; c < b.classes; ++c) {
        long long tp = b.conf(c + 1, c + 1);
        long long fp = 0, fn = 0;
        for (int s = 0; s <= b.classes; ++s) {
            if (s != c + 1) {
                fp += b.conf(s, c + 1);
                fn += b.conf(c + 1, s);
            }
        }
        if (tp + fp + fn > 0)
            out[static_cast<std::size_t>(c)] = static_cast<double>(tp) / (tp + fp + fn);
    }
    return out;
}

inline double mean_iou(const BandCounts& b) {
    double sum = 0.0;
    int present = 0;
    for (double v : class_iou(b)) {
        if (std::isnan(v)) continue;
        sum += v;
        ++present;
    }
    return present > 0 ? sum / present : 1.0;
}

struct SSCReport {
    std::vector<RangeBand> bands;
    std::vector<BandCounts> counts;  // parallel to bands
};

// Voxelized scene-completion metrics per range band. Band membership goes by
// voxel-center distance from `ref`; only voxels observed in both grids count.
// `matching[i]` relabels predicted class i before scoring.
inline SSCReport ssc_metrics(const vox::VoxelGrid& pred, const vox::VoxelGrid& gt,
                             const std::vector<int>& matching,
                             const std::vector<RangeBand>& bands, geo::Vec3 ref = {0, 0, 0}) {
    if (!pred.cfg.same_layout(gt.cfg)) throw ShapeError("ssc_metrics: grid layouts differ");
    int classes = static_cast<int>(matching.size());
    if (classes < 1) throw ConfigError("ssc_metrics: empty matching");
    for (int m : matching)
        if (m < 0 || m >= classes) throw DomainError("ssc_metrics: matching is not a permutation");

    SSCReport report;
    report.bands = bands;
    report.counts.assign(bands.size(), BandCounts{});
    for (BandCounts& b : report.counts) {
        b.classes = classes;
        b.confusion.assign(static_cast<std::size_t>(classes + 1) *
                               static_cast<std::size_t>(classes + 1),
                           0);
    }

    const vox::GridConfig& g = pred.cfg;
    for (int ix = 0; ix < g.nx; ++ix)
        for (int iy = 0; iy < g.ny; ++iy)
            for (int iz = 0; iz < g.nz; ++iz) {
                std::size_t vi = g.index(ix, iy, iz);
                if (!pred.observed[vi] || !gt.observed[vi]) continue;
                float r = geo::norm(g.center(ix, iy, iz) - ref);
                for (std::size_t bi = 0; bi < bands.size(); ++bi) {
                    if (r < bands[bi].lo || r >= bands[bi].hi) continue;
                    BandCounts& b = report.counts[bi];
                    bool po = pred.occupied[vi] != 0, go = gt.occupied[vi] != 0;
                    b.tp += po && go;
                    b.fp += po && !go;
                    b.fn += !po && go;
                    b.tn += !po && !go;
                    int ps = 0, gs = 0;
                    if (po) {
                        int c = pred.cls[vi];
                        if (c < 0 || c >= classes)
                            throw DomainError("ssc_metrics: predicted class out of range");
                        ps = matching[static_cast<std::size_t>(c)] + 1;
                    }
                    if (go) {
                        int c = gt.cls[vi];
                        if (c < 0 || c >= classes)
                            throw DomainError("ssc_metrics: gt class out of range");
                        gs = c + 1;
                    }
                    ++b.conf(gs, ps);
                }
            }
    return report;
}

// Merge per-scene reports by summing counts; bands must line up.
inline SSCReport merge(const SSCReport& a, const SSCReport& b) {
    if (a.bands.size() != b.bands.size()) throw ShapeError("merge: band lists differ");
    SSCReport out = a;
    for (std::size_t i = 0; i < a.bands.size(); ++i) {
        if (a.bands[i].lo != b.bands[i].lo || a.bands[i].hi != b.bands[i].hi)
            throw ShapeError("merge: band lists differ");
        if (a.counts[i].classes != b.counts[i].classes)
            throw ShapeError("merge: class counts differ");
        BandCounts& dst = out.counts[i];
        dst.tp += b.counts[i].tp;
        dst.fp += b.counts[i].fp;
        dst.fn += b.counts[i].fn;
        dst.tn += b.counts[i].tn;
        for (std::size_t j = 0; j < dst.confusion.size(); ++j)
            dst.confusion[j] += b.counts[i].confusion[j];
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D segmentation metrics

struct Seg2dReport {
    double accuracy = 0.0;
    double miou = 0.0;
    std::vector<double> per_class_iou;      // NaN where a class is absent
    std::vector<long long> confusion;       // classes x classes, row gt, col pred
    long long pixels = 0;
};

// Pixel accuracy and IoU after relabeling predictions through `matching`.
// Maps hold class ids as floats, rounded here.
inline Seg2dReport seg2d_metrics(const Tensor& pred, const Tensor& gt,
                                 const std::vector<int>& matching) {
    if (pred.shape() != gt.shape()) throw ShapeError("seg2d_metrics: map shapes differ");
    int classes = static_cast<int>(matching.size());
    if (classes < 1) throw ConfigError("seg2d_metrics: empty matching");
    for (int m : matching)
        if (m < 0 || m >= classes) throw DomainError("seg2d_metrics: matching is not a permutation");

    Seg2dReport rep;
    rep.confusion.assign(static_cast<std::size_t>(classes) * static_cast<std::size_t>(classes), 0);
    rep.pixels = static_cast<long long>(pred.size());
    if (rep.pixels == 0) throw ShapeError("seg2d_metrics: empty maps");

    long long correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        int p = static_cast<int>(std::lround(pred.values()[i]));
        int g = static_cast<int>(std::lround(gt.values()[i]));
        if (p < 0 || p >= classes || g < 0 || g >= classes)
            throw DomainError("seg2d_metrics: class id out of range");
        p = matching[static_cast<std::size_t>(p)];
        correct += p == g;
        ++rep.confusion[static_cast<std::size_t>(g) * static_cast<std::size_t>(classes) +
                        static_cast<std::size_t>(p)];
    }
    rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.pixels);

    rep.per_class_iou.assign(static_cast<std::size_t>(classes),
                             std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        long long tp = rep.confusion[static_cast<std::size_t>(c) * classes + c];
        long long fp = 0, fn = 0;
        for (int o = 0; o < classes; ++o) {
            if (o == c) continue;
            fp += rep.confusion[static_cast<std::size_t>(o) * classes + c];
            fn += rep.confusion[static_cast<std::size_t>(c) * classes + o];
        }
        if (tp + fp + fn > 0) {
            double iou = static_cast<double>(tp) / (tp + fp + fn);
            rep.per_class_iou[static_cast<std::size_t>(c)] = iou;
            sum += iou;
            ++present;
        }
    }
    rep.miou = present > 0 ? sum / present : 1.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Multi-view feature consistency

struct MvcReport {
    double l1 = 0.0;   // mean over pixels of sum_d |delta|
    double l2 = 0.0;   // mean Euclidean norm of delta
    double cos = 0.0;  // mean cosine similarity
    long long pixels = 0;
};

namespace detail {

// Border-clamped bilinear read of channel `c` at image coordinates (u, v)
// expressed in the pixel-center convention of a W x H raster.
inline double bilinear_at(const Tensor& f, int c, double u, double v) {
    int hh = f.extent(1), ww = f.extent(2);
    double x = std::min(std::max(u - 0.5, 0.0), static_cast<double>(ww - 1));
    double y = std::min(std::max(v - 0.5, 0.0), static_cast<double>(hh - 1));
    int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, ww - 1), y1 = std::min(y0 + 1, hh - 1);
    double ax = x - x0, ay = y - y0;
    auto at = [&](int yy, int xx) {
        return static_cast<double>(
            f.values()[(static_cast<std::size_t>(c) * hh + static_cast<std::size_t>(yy)) * ww +
                       static_cast<std::size_t>(xx)]);
    };
    return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) +
           ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
}

}  // namespace detail

// Compares features of view A against bilinearly warped features of view B at
// the ground-truth corresponding locations, over visible pixels only. Feature
// maps may be coarser than the correspondence raster; coordinates scale
// accordingly. Returns nothing when every pixel is excluded.
inline std::optional<MvcReport> mvc_metrics(const Tensor& fa, const Tensor& fb,
                                            const Tensor& corr,
                                            const std::optional<Tensor>& extra_mask = {}) {
    if (fa.rank() != 3 || fb.rank() != 3) throw ShapeError("mvc_metrics: features must be [D,H,W]");
    if (fa.extent(0) != fb.extent(0))
        throw ShapeError("mvc_metrics: feature widths differ");
    if (corr.rank() != 3 || corr.extent(0) != 3)
        throw ShapeError("mvc_metrics: correspondence must be [3,H,W]");
    int d = fa.extent(0);
    int h = corr.extent(1), w = corr.extent(2);
    if (extra_mask && extra_mask->shape() != ad::Shape{h, w})
        throw ShapeError("mvc_metrics: mask shape mismatch");

    // A's features are read at the raster scale of A, B's at B's own scale.
    double sax = static_cast<double>(fa.extent(2)) / w;
    double say = static_cast<double>(fa.extent(1)) / h;
    double sbx = static_cast<double>(fb.extent(2)) / w;
    double sby = static_cast<double>(fb.extent(1)) / h;

    std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    MvcReport rep;
    double sum_l1 = 0.0, sum_l2 = 0.0, sum_cos = 0.0;
    std::vector<double> va(static_cast<std::size_t>(d)), vb(static_cast<std::size_t>(d));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::size_t px = static_cast<std::size_t>(y) * w + x;
            if (corr.values()[2 * plane + px] != 1.0f) continue;
            if (extra_mask && extra_mask->values()[px] <= 0.5f) continue;
            double ua = (x + 0.5) * sax, vay = (y + 0.5) * say;
            double ub = corr.values()[px] * sbx, vby = corr.values()[plane + px] * sby;
            double l1 = 0.0, l2 = 0.0, dotp = 0.0, na = 0.0, nb = 0.0;
            for (int c = 0; c < d; ++c) {
                va[static_cast<std::size_t>(c)] = detail::bilinear_at(fa, c, ua, vay);
                vb[static_cast<std::size_t>(c)] = detail::bilinear_at(fb, c, ub, vby);
                double diff = va[static_cast<std::size_t>(c)] - vb[static_cast<std::size_t>(c)];
                l1 += std::fabs(diff);
                l2 += diff * diff;
                dotp += va[static_cast<std::size_t>(c)] * vb[static_cast<std::size_t>(c)];
                na += va[static_cast<std::size_t>(c)] * va[static_cast<std::size_t>(c)];
                nb += vb[static_cast<std::size_t>(c)] * vb[static_cast<std::size_t>(c)];
            }
            sum_l1 += l1;
            sum_l2 += std::sqrt(l2);
            sum_cos += dotp / std::sqrt(na * nb + 1e-30);
            ++rep.pixels;
        }
    if (rep.pixels == 0) return std::nullopt;
    rep.l1 = sum_l1 / rep.pixels;
    rep.l2 = sum_l2 / rep.pixels;
    rep.cos = sum_cos / rep.pixels;
    return rep;
}

// ---------------------------------------------------------------------------
// Report emission

// One CSV row per band for the geometric scores, then one per band/class.
inline void write_ssc_csv(const SSCReport& r, std::ostream& os) {
    os << "band_lo,band_hi,kind,class,iou,precision,recall,miou\n";
    for (std::size_t i = 0; i < r.bands.size(); ++i) {
        const RangeBand& band = r.bands[i];
        GeomScores g = geometric_scores(r.counts[i]);
        os << band.lo << ',' << band.hi << ",geometric,," << g.iou << ',' << g.precision << ','
           << g.recall << ',' << mean_iou(r.counts[i]) << '\n';
        std::vector<double> ious = class_iou(r.counts[i]);
        for (std::size_t c = 0; c < ious.size(); ++c) {
            os << band.lo << ',' << band.hi << ",class," << c << ',';
            if (std::isnan(ious[c]))
                os << "absent";
            else
                os << ious[c];
            os << ",,,\n";
        }
    }
}

inline nlohmann::json to_json(const SSCReport& r) {
    nlohmann::json bands = nlohmann::json::array();
    for (std::size_t i = 0; i < r.bands.size(); ++i) {
        GeomScores g = geometric_scores(r.counts[i]);
        nlohmann::json cls = nlohmann::json::array();
        for (double v : class_iou(r.counts[i]))
            cls.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
        bands.push_back({{"lo", r.bands[i].lo},
                         {"hi", r.bands[i].hi},
                         {"geometric_iou", g.iou},
                         {"precision", g.precision},
                         {"recall", g.recall},
                         {"miou", mean_iou(r.counts[i])},
                         {"class_iou", cls}});
    }
    return {{"bands", bands}};
}

inline nlohmann::json to_json(const Seg2dReport& r) {
    nlohmann::json cls = nlohmann::json::array();
    for (double v : r.per_class_iou)
        cls.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return {{"accuracy", r.accuracy}, {"miou", r.miou}, {"class_iou", cls},
            {"pixels", r.pixels}};
}

inline nlohmann::json to_json(const MvcReport& r) {
    return {{"l1", r.l1}, {"l2", r.l2}, {"cos", r.cos}, {"pixels", r.pixels}};
}

}  // namespace fieldsc::eval
