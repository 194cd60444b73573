#include "vgh/semantic_field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "vgh/errors.hpp"
#include "vgh/rng.hpp"

namespace vgh {

namespace {

size_t map_pixels(const FeatureMap& map) {
  return static_cast<size_t>(map.width) * static_cast<size_t>(map.height);
}

std::vector<size_t> mask_pixels(const Mask& mask) {
  std::vector<size_t> px;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) px.push_back(i);
  return px;
}

/// Mean feature over mask pixels. Raises on empty mask.
std::vector<double> mask_mean(const FeatureMap& map, const Mask& mask) {
  if (mask.size() != map_pixels(map))
    raise(Errc::shape_mismatch, "mask size does not match rendered map");
  std::vector<double> mean(static_cast<size_t>(map.channels), 0.0);
  size_t count = 0;
  for (size_t px = 0; px < mask.size(); ++px) {
    if (!mask[px]) continue;
    const double* f = map.features.data() + px * static_cast<size_t>(map.channels);
    for (int c = 0; c < map.channels; ++c) mean[static_cast<size_t>(c)] += f[c];
    ++count;
  }
  if (count == 0) raise(Errc::empty_mask, "mask has no pixels");
  for (double& v : mean) v /= static_cast<double>(count);
  return mean;
}

}  // namespace

double smoothing_loss(const FeatureMap& map, const std::vector<Mask>& masks) {
  double total = 0.0;
  for (const Mask& mask : masks) {
    std::vector<double> mean = mask_mean(map, mask);
    for (size_t px = 0; px < mask.size(); ++px) {
      if (!mask[px]) continue;
      const double* f = map.features.data() + px * static_cast<size_t>(map.channels);
      for (int c = 0; c < map.channels; ++c) {
        double d = f[c] - mean[static_cast<size_t>(c)];
        total += d * d;
      }
    }
  }
  return total;
}

double contrastive_loss(const FeatureMap& map, const std::vector<Mask>& masks, double eps) {
  size_t k = masks.size();
  if (k < 2) raise(Errc::too_few_masks, "contrastive loss needs at least two masks");
  std::vector<std::vector<double>> means;
  means.reserve(k);
  for (const Mask& mask : masks) means.push_back(mask_mean(map, mask));
  double total = 0.0;
  for (size_t a = 0; a < k; ++a)
    for (size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      double d2 = 0.0;
      for (size_t c = 0; c < means[a].size(); ++c) {
        double d = means[a][c] - means[b][c];
        d2 += d * d;
      }
      total += 1.0 / (d2 + eps);
    }
  return total / (static_cast<double>(k) * static_cast<double>(k - 1));
}

double quantization_loss(const FeatureMap& rendered, const FeatureMap& quantized) {
  if (rendered.width != quantized.width || rendered.height != quantized.height ||
      rendered.channels != quantized.channels)
    raise(Errc::shape_mismatch, "quantization loss shape mismatch");
  double total = 0.0;
  for (size_t i = 0; i < rendered.features.size(); ++i)
    total += std::abs(rendered.features[i] - quantized.features[i]);
  return total;
}

double quantization_loss_masked(const FeatureMap& rendered, const FeatureMap& quantized,
                                const Mask& mask) {
  if (rendered.width != quantized.width || rendered.height != quantized.height ||
      rendered.channels != quantized.channels)
    raise(Errc::shape_mismatch, "quantization loss shape mismatch");
  if (mask.size() != map_pixels(rendered))
    raise(Errc::shape_mismatch, "quantization mask shape mismatch");
  double total = 0.0;
  size_t C = static_cast<size_t>(rendered.channels);
  for (size_t px = 0; px < mask.size(); ++px) {
    if (!mask[px]) continue;
    const double* a = rendered.features.data() + px * C;
    const double* b = quantized.features.data() + px * C;
    for (size_t c = 0; c < C; ++c) total += std::abs(a[c] - b[c]);
  }
  return total;
}

namespace {

/// Per-view precomputation shared by loss, gradient, and the training loop.
/// Blending weights never change because the geometry is frozen.
struct ViewBundle {
  std::vector<std::vector<SplatWeight>> weights;  // per pixel
  std::vector<std::vector<size_t>> mask_px;       // per non-empty mask
  std::vector<size_t> used_px;                    // union, sorted unique
};

std::vector<ViewBundle> prepare_views(const SplatScene& scene,
                                      const std::vector<SplatCamera>& cams,
                                      const std::vector<std::vector<Mask>>& masks,
                                      double cutoff_sigmas) {
  if (cams.size() != masks.size())
    raise(Errc::shape_mismatch, "camera and mask view counts differ");
  std::vector<ViewBundle> views;
  views.reserve(cams.size());
  for (size_t v = 0; v < cams.size(); ++v) {
    ViewBundle bundle;
    bundle.weights = render_weights(scene, cams[v], nullptr, cutoff_sigmas);
    std::set<size_t> used;
    for (const Mask& m : masks[v]) {
      if (m.size() != static_cast<size_t>(cams[v].width) * static_cast<size_t>(cams[v].height))
        raise(Errc::shape_mismatch, "stage-1 mask does not match camera raster");
      std::vector<size_t> px = mask_pixels(m);
      if (px.empty()) continue;  // instance invisible in this view
      used.insert(px.begin(), px.end());
      bundle.mask_px.push_back(std::move(px));
    }
    bundle.used_px.assign(used.begin(), used.end());
    views.push_back(std::move(bundle));
  }
  return views;
}

/// Renders features at the given pixels only.
void features_at(const SplatScene& scene, const std::vector<std::vector<SplatWeight>>& weights,
                 const std::vector<size_t>& pixels, std::vector<double>& out) {
  size_t C = static_cast<size_t>(scene.feature_dim);
  out.assign(pixels.size() * C, 0.0);
  for (size_t i = 0; i < pixels.size(); ++i) {
    double* f = out.data() + i * C;
    for (const SplatWeight& sw : weights[pixels[i]]) {
      const double* src = scene.splats[static_cast<size_t>(sw.splat)].feature.data();
      for (size_t c = 0; c < C; ++c) f[c] += sw.weight * src[c];
    }
  }
}

struct ViewEval {
  double loss = 0.0;
  // Gradient w.r.t. rendered features, aligned with bundle.used_px.
  std::vector<double> pixel_grad;
};

ViewEval eval_view(const SplatScene& scene, const ViewBundle& bundle, const TrainConfig& cfg,
                   bool want_grad) {
  const size_t C = static_cast<size_t>(scene.feature_dim);
  ViewEval ev;

  std::vector<double> feats;
  features_at(scene, bundle.weights, bundle.used_px, feats);
  std::map<size_t, size_t> slot;  // pixel -> row in feats
  for (size_t i = 0; i < bundle.used_px.size(); ++i) slot[bundle.used_px[i]] = i;

  if (want_grad) ev.pixel_grad.assign(feats.size(), 0.0);

  size_t K = bundle.mask_px.size();
  std::vector<std::vector<double>> means(K, std::vector<double>(C, 0.0));
  for (size_t k = 0; k < K; ++k) {
    for (size_t px : bundle.mask_px[k]) {
      const double* f = feats.data() + slot[px] * C;
      for (size_t c = 0; c < C; ++c) means[k][c] += f[c];
    }
    double inv = 1.0 / static_cast<double>(bundle.mask_px[k].size());
    for (size_t c = 0; c < C; ++c) means[k][c] *= inv;
  }

  // Smoothing term. The mean's own gradient contribution cancels because
  // deviations from a mean sum to zero, leaving 2 * (F(p) - mean).
  for (size_t k = 0; k < K; ++k) {
    for (size_t px : bundle.mask_px[k]) {
      size_t row = slot[px];
      const double* f = feats.data() + row * C;
      for (size_t c = 0; c < C; ++c) {
        double d = f[c] - means[k][c];
        ev.loss += cfg.lambda_s * d * d;
        if (want_grad) ev.pixel_grad[row * C + c] += cfg.lambda_s * 2.0 * d;
      }
    }
  }

  // Contrastive term over mask means; needs at least two masks.
  if (K >= 2) {
    const double eps = 1e-8;
    double norm = 1.0 / (static_cast<double>(K) * static_cast<double>(K - 1));
    std::vector<std::vector<double>> mean_grad(K, std::vector<double>(C, 0.0));
    for (size_t a = 0; a < K; ++a)
      for (size_t b = 0; b < K; ++b) {
        if (a == b) continue;
        double d2 = 0.0;
        for (size_t c = 0; c < C; ++c) {
          double d = means[a][c] - means[b][c];
          d2 += d * d;
        }
        double denom = d2 + eps;
        ev.loss += cfg.lambda_c * norm / denom;
        if (want_grad) {
          double scale = -cfg.lambda_c * norm * 2.0 / (denom * denom);
          for (size_t c = 0; c < C; ++c)
            mean_grad[a][c] += scale * (means[a][c] - means[b][c]);
        }
      }
    if (want_grad) {
      for (size_t k = 0; k < K; ++k) {
        double inv = 1.0 / static_cast<double>(bundle.mask_px[k].size());
        for (size_t px : bundle.mask_px[k]) {
          size_t row = slot[px];
          for (size_t c = 0; c < C; ++c) ev.pixel_grad[row * C + c] += mean_grad[k][c] * inv;
        }
      }
    }
  }
  return ev;
}

void backprop_to_features(const SplatScene& scene, const ViewBundle& bundle,
                          const std::vector<double>& pixel_grad,
                          std::vector<std::vector<double>>& grad) {
  const size_t C = static_cast<size_t>(scene.feature_dim);
  for (size_t i = 0; i < bundle.used_px.size(); ++i) {
    const double* g = pixel_grad.data() + i * C;
    for (const SplatWeight& sw : bundle.weights[bundle.used_px[i]]) {
      double* dst = grad[static_cast<size_t>(sw.splat)].data();
      for (size_t c = 0; c < C; ++c) dst[c] += sw.weight * g[c];
    }
  }
}

}  // namespace

double field_loss(const SplatScene& scene, const std::vector<SplatCamera>& cams,
                  const std::vector<std::vector<Mask>>& masks, const TrainConfig& cfg) {
  scene.validate();
  double total = 0.0;
  for (const ViewBundle& bundle : prepare_views(scene, cams, masks, cfg.cutoff_sigmas))
    total += eval_view(scene, bundle, cfg, false).loss;
  return total;
}

std::vector<std::vector<double>> field_gradient(const SplatScene& scene,
                                                const std::vector<SplatCamera>& cams,
                                                const std::vector<std::vector<Mask>>& masks,
                                                const TrainConfig& cfg) {
  scene.validate();
  std::vector<std::vector<double>> grad(
      scene.splats.size(), std::vector<double>(static_cast<size_t>(scene.feature_dim), 0.0));
  for (const ViewBundle& bundle : prepare_views(scene, cams, masks, cfg.cutoff_sigmas)) {
    ViewEval ev = eval_view(scene, bundle, cfg, true);
    backprop_to_features(scene, bundle, ev.pixel_grad, grad);
  }
  return grad;
}

TrainStats train_features(SplatScene& scene, const std::vector<SplatCamera>& cams,
                          const std::vector<std::vector<Mask>>& masks, const TrainConfig& cfg) {
  scene.validate();
  std::vector<ViewBundle> views = prepare_views(scene, cams, masks, cfg.cutoff_sigmas);
  const size_t C = static_cast<size_t>(scene.feature_dim);

  TrainStats stats;
  std::vector<std::vector<double>> grad(scene.splats.size(), std::vector<double>(C, 0.0));
  for (int it = 0; it < cfg.iterations; ++it) {
    for (auto& g : grad) std::fill(g.begin(), g.end(), 0.0);
    double loss = 0.0;
    for (const ViewBundle& bundle : views) {
      ViewEval ev = eval_view(scene, bundle, cfg, true);
      loss += ev.loss;
      backprop_to_features(scene, bundle, ev.pixel_grad, grad);
    }
    if (!std::isfinite(loss)) raise(Errc::diverged, "feature training loss is not finite");
    stats.loss_history.push_back(loss);
    for (size_t i = 0; i < scene.splats.size(); ++i)
      for (size_t c = 0; c < C; ++c) scene.splats[i].feature[c] -= cfg.learning_rate * grad[i][c];
  }
  double final_loss = 0.0;
  for (const ViewBundle& bundle : views) final_loss += eval_view(scene, bundle, cfg, false).loss;
  if (!std::isfinite(final_loss)) raise(Errc::diverged, "feature training loss is not finite");
  stats.final_loss = final_loss;
  return stats;
}

namespace {

std::vector<int> cluster_members(const std::vector<int>& cluster_of, int cluster_id) {
  std::vector<int> members;
  for (size_t i = 0; i < cluster_of.size(); ++i)
    if (cluster_of[i] == cluster_id) members.push_back(static_cast<int>(i));
  return members;
}

struct DepthLayer {
  std::vector<double> alpha;
  std::vector<double> depth_norm;  // blended depth / alpha where alpha > 0
};

DepthLayer render_layer(const SplatScene& scene, const std::vector<int>& subset,
                        const SplatCamera& cam) {
  FeatureMap map = render_feature_map_subset(scene, subset, cam);
  DepthLayer layer;
  layer.alpha = map.alpha;
  layer.depth_norm.assign(map.alpha.size(), std::numeric_limits<double>::infinity());
  for (size_t px = 0; px < map.alpha.size(); ++px)
    if (map.alpha[px] > 0.0) layer.depth_norm[px] = map.depth[px] / map.alpha[px];
  return layer;
}

}  // namespace

Mask occlusion_mask(const SplatScene& scene, const std::vector<int>& cluster_of, int cluster_id,
                    const SplatCamera& cam, double alpha_min) {
  if (cluster_of.size() != scene.splats.size())
    raise(Errc::shape_mismatch, "cluster assignment size mismatch");
  std::vector<int> members = cluster_members(cluster_of, cluster_id);
  if (members.empty())
    raise(Errc::unknown_cluster, "cluster " + std::to_string(cluster_id) + " has no members");
  std::vector<int> others;
  for (size_t i = 0; i < scene.splats.size(); ++i)
    if (cluster_of[i] != cluster_id) others.push_back(static_cast<int>(i));

  DepthLayer target = render_layer(scene, members, cam);
  Mask mask(target.alpha.size(), 0);
  if (others.empty()) {
    for (size_t px = 0; px < mask.size(); ++px)
      mask[px] = target.alpha[px] > alpha_min ? 1 : 0;
    return mask;
  }
  DepthLayer rest = render_layer(scene, others, cam);
  for (size_t px = 0; px < mask.size(); ++px) {
    if (target.alpha[px] <= alpha_min) continue;
    // Other clusters count as occluders only where their own footprint is
    // solid; below alpha_min they are treated as absent.
    bool occluder_present = rest.alpha[px] > alpha_min;
    if (!occluder_present || target.depth_norm[px] < rest.depth_norm[px]) mask[px] = 1;
  }
  return mask;
}

Mask cluster_footprint(const SplatScene& scene, const std::vector<int>& cluster_of,
                       int cluster_id, const SplatCamera& cam, double alpha_min) {
  if (cluster_of.size() != scene.splats.size())
    raise(Errc::shape_mismatch, "cluster assignment size mismatch");
  std::vector<int> members = cluster_members(cluster_of, cluster_id);
  if (members.empty())
    raise(Errc::unknown_cluster, "cluster " + std::to_string(cluster_id) + " has no members");
  DepthLayer target = render_layer(scene, members, cam);
  Mask mask(target.alpha.size(), 0);
  for (size_t px = 0; px < mask.size(); ++px)
    mask[px] = target.alpha[px] > alpha_min ? 1 : 0;
  return mask;
}

std::vector<ViewScore> select_training_views(const SplatScene& scene,
                                             const std::vector<int>& cluster_of, int cluster_id,
                                             const std::vector<SplatCamera>& cams, int delta_vis,
                                             double alpha_min) {
  std::vector<ViewScore> out;
  for (size_t v = 0; v < cams.size(); ++v) {
    Mask mask = occlusion_mask(scene, cluster_of, cluster_id, cams[v], alpha_min);
    int visible = 0;
    for (uint8_t m : mask) visible += m;
    if (visible > delta_vis) out.push_back({static_cast<int>(v), visible});
  }
  return out;
}

namespace {

struct KmeansResult {
  std::vector<std::vector<double>> centroids;
  std::vector<int> assign;
};

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    d2 += d * d;
  }
  return d2;
}

/// k-means++ seeding followed by Lloyd iterations. Stops after `iters`
/// rounds or when the relative centroid shift drops below 1e-6. Empty
/// clusters keep their previous centroid. Fully deterministic given rng.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, int iters, Rng& rng) {
  KmeansResult result;
  size_t n = points.size();
  if (n == 0) return result;
  k = std::min<int>(k, static_cast<int>(n));

  // Seeding: first centroid uniform, the rest weighted by squared distance.
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  result.centroids.push_back(points[rng.next_below(n)]);
  while (static_cast<int>(result.centroids.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist(points[i], result.centroids.back()));
      total += min_d2[i];
    }
    if (total <= 0.0) break;  // all remaining points coincide with centroids
    double pick = rng.next_double() * total;
    double acc = 0.0;
    size_t chosen = n - 1;
    for (size_t i = 0; i < n; ++i) {
      acc += min_d2[i];
      if (pick < acc) {
        chosen = i;
        break;
      }
    }
    result.centroids.push_back(points[chosen]);
  }

  size_t k_eff = result.centroids.size();
  result.assign.assign(n, 0);
  for (int round = 0; round < iters; ++round) {
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int arg = 0;
      for (size_t c = 0; c < k_eff; ++c) {
        double d2 = sq_dist(points[i], result.centroids[c]);
        if (d2 < best) {
          best = d2;
          arg = static_cast<int>(c);
        }
      }
      result.assign[i] = arg;
    }
    std::vector<std::vector<double>> next(k_eff,
                                          std::vector<double>(points[0].size(), 0.0));
    std::vector<int> counts(k_eff, 0);
    for (size_t i = 0; i < n; ++i) {
      auto& c = next[static_cast<size_t>(result.assign[i])];
      for (size_t d = 0; d < c.size(); ++d) c[d] += points[i][d];
      ++counts[static_cast<size_t>(result.assign[i])];
    }
    double shift2 = 0.0, scale2 = 0.0;
    for (size_t c = 0; c < k_eff; ++c) {
      if (counts[c] == 0) {
        next[c] = result.centroids[c];
      } else {
        for (double& v : next[c]) v /= static_cast<double>(counts[c]);
      }
      shift2 += sq_dist(next[c], result.centroids[c]);
      for (double v : next[c]) scale2 += v * v;
    }
    result.centroids = std::move(next);
    if (std::sqrt(shift2) < 1e-6 * (1.0 + std::sqrt(scale2))) break;
  }
  // Final assignment against the final centroids.
  for (size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (size_t c = 0; c < k_eff; ++c) {
      double d2 = sq_dist(points[i], result.centroids[c]);
      if (d2 < best) {
        best = d2;
        arg = static_cast<int>(c);
      }
    }
    result.assign[i] = arg;
  }
  return result;
}

double kmeans_inertia(const std::vector<std::vector<double>>& points, const KmeansResult& r) {
  double total = 0.0;
  for (size_t i = 0; i < points.size(); ++i)
    total += sq_dist(points[i], r.centroids[static_cast<size_t>(r.assign[i])]);
  return total;
}

/// Best of several independently seeded runs by within-cluster squared error.
/// Lloyd's algorithm only finds local optima; restarts keep one unlucky
/// seeding from merging well-separated groups. Deterministic given rng.
KmeansResult kmeans_best(const std::vector<std::vector<double>>& points, int k, int iters,
                         Rng& rng, int restarts = 8) {
  KmeansResult best;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    KmeansResult cur = kmeans(points, k, iters, rng);
    double sse = kmeans_inertia(points, cur);
    if (sse < best_sse) {
      best_sse = sse;
      best = std::move(cur);
    }
  }
  return best;
}

}  // namespace

Codebook discretize_codebook(const SplatScene& scene, int k1, int k2, double pos_weight,
                             int iters, uint64_t seed) {
  scene.validate();
  if (k1 < 1 || k2 < 1) raise(Errc::invalid_argument, "cluster counts must be positive");
  const size_t n = scene.splats.size();
  const size_t C = static_cast<size_t>(scene.feature_dim);

  std::vector<std::vector<double>> root_points(n);
  for (size_t i = 0; i < n; ++i) {
    root_points[i] = scene.splats[i].feature;
    root_points[i].push_back(pos_weight * scene.splats[i].center.x);
    root_points[i].push_back(pos_weight * scene.splats[i].center.y);
    root_points[i].push_back(pos_weight * scene.splats[i].center.z);
  }
  Rng root_rng(Rng::mix(seed, 0x726f6f74));
  KmeansResult roots = kmeans_best(root_points, k1, iters, root_rng);

  Codebook cb;
  cb.k1 = static_cast<int>(roots.centroids.size());
  cb.k2 = k2;
  cb.pos_weight = pos_weight;
  cb.root_centroids = std::move(roots.centroids);
  cb.root_assign = std::move(roots.assign);
  cb.leaf_assign.assign(n, 0);
  cb.leaf_centroids.resize(static_cast<size_t>(cb.k1));

  for (int r = 0; r < cb.k1; ++r) {
    std::vector<int> members;
    for (size_t i = 0; i < n; ++i)
      if (cb.root_assign[i] == r) members.push_back(static_cast<int>(i));
    if (members.empty()) continue;
    std::vector<std::vector<double>> feats(members.size(), std::vector<double>(C));
    for (size_t m = 0; m < members.size(); ++m)
      feats[m] = scene.splats[static_cast<size_t>(members[m])].feature;
    Rng leaf_rng(Rng::mix(seed, 0x6c656166 + static_cast<uint64_t>(r)));
    KmeansResult leaves = kmeans_best(feats, k2, iters, leaf_rng);
    cb.leaf_centroids[static_cast<size_t>(r)] = std::move(leaves.centroids);
    for (size_t m = 0; m < members.size(); ++m)
      cb.leaf_assign[static_cast<size_t>(members[m])] = leaves.assign[m];
  }
  return cb;
}

std::vector<int> segment_instances(const SplatScene& scene, const Codebook& codebook) {
  if (codebook.root_assign.size() != scene.splats.size())
    raise(Errc::shape_mismatch, "codebook does not match scene");
  std::vector<int> compact(static_cast<size_t>(codebook.k1), -1);
  int next = 0;
  for (int r = 0; r < codebook.k1; ++r) {
    bool used = false;
    for (int a : codebook.root_assign)
      if (a == r) {
        used = true;
        break;
      }
    if (used) compact[static_cast<size_t>(r)] = next++;
  }
  std::vector<int> labels(scene.splats.size());
  for (size_t i = 0; i < labels.size(); ++i)
    labels[i] = compact[static_cast<size_t>(codebook.root_assign[i])];
  return labels;
}

SegScore evaluate_segmentation(const std::vector<Mask>& pred, const std::vector<Mask>& gt) {
  if (pred.size() != gt.size())
    raise(Errc::shape_mismatch, "prediction and ground truth counts differ");
  if (gt.empty()) raise(Errc::empty_ground_truth, "no ground-truth masks");
  double iou_sum = 0.0, acc_sum = 0.0;
  size_t counted = 0;
  for (size_t k = 0; k < gt.size(); ++k) {
    if (pred[k].size() != gt[k].size())
      raise(Errc::shape_mismatch, "mask " + std::to_string(k) + " size mismatch");
    size_t inter = 0, uni = 0, gt_count = 0;
    for (size_t px = 0; px < gt[k].size(); ++px) {
      bool p = pred[k][px] != 0;
      bool g = gt[k][px] != 0;
      inter += (p && g) ? 1 : 0;
      uni += (p || g) ? 1 : 0;
      gt_count += g ? 1 : 0;
    }
    if (gt_count == 0) continue;  // instance invisible here; not scored
    iou_sum += static_cast<double>(inter) / static_cast<double>(uni);
    acc_sum += static_cast<double>(inter) / static_cast<double>(gt_count);
    ++counted;
  }
  if (counted == 0) raise(Errc::empty_ground_truth, "all ground-truth masks are empty");
  return {iou_sum / static_cast<double>(counted), acc_sum / static_cast<double>(counted)};
}

std::vector<AnnotationView> rank_annotation_views(const SplatScene& scene,
                                                  const std::vector<int>& members,
                                                  const std::vector<SplatCamera>& cams,
                                                  const std::vector<Mask>& reference_masks,
                                                  double alpha_score, int top_k,
                                                  double alpha_min) {
  if (members.empty()) raise(Errc::unknown_cluster, "instance has no splats");
  if (reference_masks.size() != cams.size())
    raise(Errc::shape_mismatch, "one reference mask per view required");

  std::vector<int> cluster_of(scene.splats.size(), 0);
  for (int m : members) {
    if (m < 0 || m >= static_cast<int>(scene.splats.size()))
      raise(Errc::unknown_cluster, "splat index out of range");
    cluster_of[static_cast<size_t>(m)] = 1;
  }

  std::vector<AnnotationView> ranked;
  for (size_t v = 0; v < cams.size(); ++v) {
    Mask foot = cluster_footprint(scene, cluster_of, 1, cams[v], alpha_min);
    Mask visible = occlusion_mask(scene, cluster_of, 1, cams[v], alpha_min);
    if (reference_masks[v].size() != foot.size())
      raise(Errc::shape_mismatch, "reference mask raster mismatch in view " + std::to_string(v));
    size_t foot_n = 0, vis_n = 0, inter = 0, uni = 0;
    for (size_t px = 0; px < foot.size(); ++px) {
      bool f = foot[px] != 0;
      bool r = reference_masks[v][px] != 0;
      foot_n += f ? 1 : 0;
      vis_n += visible[px] ? 1 : 0;
      inter += (f && r) ? 1 : 0;
      uni += (f || r) ? 1 : 0;
    }
    AnnotationView av;
    av.view = static_cast<int>(v);
    av.iou = uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    av.visibility = foot_n > 0 ? static_cast<double>(vis_n) / static_cast<double>(foot_n) : 0.0;
    av.score = av.iou + alpha_score * av.visibility;
    ranked.push_back(std::move(av));
  }

  bool any = false;
  for (const AnnotationView& av : ranked) any = any || av.score > 0.0;
  if (!any) raise(Errc::no_visible_view, "instance scores zero in every view");

  std::stable_sort(ranked.begin(), ranked.end(), [](const AnnotationView& a,
                                                    const AnnotationView& b) {
    return a.score != b.score ? a.score > b.score : a.view < b.view;
  });
  if (static_cast<int>(ranked.size()) > top_k) ranked.resize(static_cast<size_t>(top_k));

  for (AnnotationView& av : ranked) {
    const SplatCamera& cam = cams[static_cast<size_t>(av.view)];
    Mask visible = occlusion_mask(scene, cluster_of, 1, cam, alpha_min);
    Image img = render_color(scene, cam);
    // Dim everything outside the visible instance region to 30 percent.
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        size_t px = static_cast<size_t>(y) * static_cast<size_t>(img.width) +
                    static_cast<size_t>(x);
        if (visible[px]) continue;
        Rgb c = img.get(x, y);
        img.set(x, y,
                {static_cast<uint8_t>(c[0] * 0.3), static_cast<uint8_t>(c[1] * 0.3),
                 static_cast<uint8_t>(c[2] * 0.3)});
      }
    // Saturated red contour: visible pixels bordering a non-visible neighbor.
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        size_t px = static_cast<size_t>(y) * static_cast<size_t>(img.width) +
                    static_cast<size_t>(x);
        if (!visible[px]) continue;
        bool edge = x == 0 || x == img.width - 1 || y == 0 || y == img.height - 1;
        if (!edge) {
          size_t w = static_cast<size_t>(img.width);
          edge = !visible[px - 1] || !visible[px + 1] || !visible[px - w] || !visible[px + w];
        }
        if (edge) img.set(x, y, {255, 0, 0});
      }
    av.image = std::move(img);
  }
  return ranked;
}

std::vector<Mask> gt_instance_masks(const SplatScene& scene, const SplatCamera& cam,
                                    const std::vector<int>& instances, double alpha_min) {
  std::vector<int> assign(scene.splats.size());
  for (size_t i = 0; i < scene.splats.size(); ++i) assign[i] = scene.splats[i].gt_instance;

  auto weights = render_weights(scene, cam);
  size_t npx = weights.size();
  std::vector<Mask> masks(instances.size(), Mask(npx, 0));
  for (size_t px = 0; px < npx; ++px) {
    double total = 0.0;
    std::map<int, double> per_id;
    for (const SplatWeight& sw : weights[px]) {
      total += sw.weight;
      per_id[assign[static_cast<size_t>(sw.splat)]] += sw.weight;
    }
    if (total <= alpha_min) continue;
    for (size_t k = 0; k < instances.size(); ++k) {
      auto it = per_id.find(instances[k]);
      // Majority of the blending weight decides ownership of the pixel.
      if (it != per_id.end() && it->second > 0.5 * total) masks[k][px] = 1;
    }
  }
  return masks;
}

PipelineResult run_semantic_pipeline(SplatScene scene, const std::vector<SplatCamera>& cams,
                                     const std::vector<std::vector<Mask>>& stage1_masks,
                                     const PipelineConfig& cfg) {
  scene.validate();

  bool all_zero = true;
  for (const Splat& s : scene.splats)
    for (double f : s.feature) all_zero = all_zero && f == 0.0;
  if (all_zero) {
    Rng init_rng(Rng::mix(cfg.seed, 0xfea70000));
    for (Splat& s : scene.splats)
      for (double& f : s.feature) f = init_rng.uniform(-cfg.init_scale, cfg.init_scale);
  }

  PipelineResult result;
  TrainStats stats = train_features(scene, cams, stage1_masks, cfg.stage1);
  result.stage1_loss = stats.loss_history;

  Codebook initial =
      discretize_codebook(scene, cfg.k1, cfg.k2, cfg.pos_weight, cfg.kmeans_iters, cfg.seed);

  const size_t C = static_cast<size_t>(scene.feature_dim);

  // The root clusters are the instance proposal. Their mean features are
  // frozen now and act as the queries the refined field is evaluated against,
  // so any supervision damage during refinement shows up as lost pixels.
  std::vector<int> labels_initial = segment_instances(scene, initial);
  int n_labels = 0;
  for (int l : labels_initial) n_labels = std::max(n_labels, l + 1);
  std::vector<std::vector<double>> prototypes(static_cast<size_t>(n_labels),
                                              std::vector<double>(C, 0.0));
  std::vector<int> proto_count(static_cast<size_t>(n_labels), 0);
  for (size_t i = 0; i < scene.splats.size(); ++i) {
    auto& p = prototypes[static_cast<size_t>(labels_initial[i])];
    for (size_t c = 0; c < C; ++c) p[c] += scene.splats[i].feature[c];
    ++proto_count[static_cast<size_t>(labels_initial[i])];
  }
  for (size_t l = 0; l < prototypes.size(); ++l)
    if (proto_count[l] > 0)
      for (double& v : prototypes[l]) v /= static_cast<double>(proto_count[l]);

  // Frozen refinement target: the continuous full-scene render after stage 1.
  std::vector<FeatureMap> targets;
  targets.reserve(cams.size());
  for (const SplatCamera& cam : cams)
    targets.push_back(render_feature_map(scene, cam, cfg.stage1.cutoff_sigmas));
  for (int r = 0; r < initial.k1; ++r) {
    std::vector<int> members;
    for (size_t i = 0; i < scene.splats.size(); ++i)
      if (initial.root_assign[i] == r) members.push_back(static_cast<int>(i));
    if (members.empty()) continue;

    std::vector<int> view_ids;
    if (cfg.use_view_selection) {
      for (const ViewScore& vs : select_training_views(scene, initial.root_assign, r, cams,
                                                       cfg.delta_vis, cfg.alpha_min))
        view_ids.push_back(vs.view);
    } else {
      for (size_t v = 0; v < cams.size(); ++v) view_ids.push_back(static_cast<int>(v));
    }
    if (view_ids.empty()) continue;

    struct RefineView {
      std::vector<std::vector<SplatWeight>> weights;  // cluster-only
      std::vector<size_t> px;                         // supervised pixels
      const FeatureMap* target;
    };
    std::vector<RefineView> rviews;
    for (int v : view_ids) {
      const SplatCamera& cam = cams[static_cast<size_t>(v)];
      Mask m = cfg.use_occlusion_masks
                   ? occlusion_mask(scene, initial.root_assign, r, cam, cfg.alpha_min)
                   : cluster_footprint(scene, initial.root_assign, r, cam, cfg.alpha_min);
      std::vector<size_t> px = mask_pixels(m);
      if (px.empty()) continue;
      RefineView rv;
      rv.weights = render_weights(scene, cam, &members, cfg.stage1.cutoff_sigmas);
      rv.px = std::move(px);
      rv.target = &targets[static_cast<size_t>(v)];
      rviews.push_back(std::move(rv));
    }
    if (rviews.empty()) continue;

    std::vector<int> member_row(scene.splats.size(), -1);
    for (size_t m = 0; m < members.size(); ++m)
      member_row[static_cast<size_t>(members[m])] = static_cast<int>(m);

    for (int outer = 0; outer < cfg.refine_outer; ++outer) {
      // Re-quantize member features at the leaf level.
      std::vector<std::vector<double>> feats(members.size());
      for (size_t m = 0; m < members.size(); ++m)
        feats[m] = scene.splats[static_cast<size_t>(members[m])].feature;
      Rng leaf_rng(Rng::mix(cfg.seed, 0x72666e00 + static_cast<uint64_t>(r) * 131 +
                                          static_cast<uint64_t>(outer)));
      KmeansResult leaf = kmeans_best(feats, cfg.k2, cfg.kmeans_iters, leaf_rng);
      std::vector<int> leaf_count(leaf.centroids.size(), 0);
      for (int a : leaf.assign) ++leaf_count[static_cast<size_t>(a)];

      for (int inner = 0; inner < cfg.refine_inner; ++inner) {
        // Quantized member features under the current leaf assignment.
        std::vector<std::vector<double>> quantized(members.size());
        std::vector<std::vector<double>> centroids(leaf.centroids.size(),
                                                   std::vector<double>(C, 0.0));
        for (size_t m = 0; m < members.size(); ++m) {
          auto& c = centroids[static_cast<size_t>(leaf.assign[m])];
          const auto& f = scene.splats[static_cast<size_t>(members[m])].feature;
          for (size_t d = 0; d < C; ++d) c[d] += f[d];
        }
        for (size_t l = 0; l < centroids.size(); ++l)
          if (leaf_count[l] > 0)
            for (double& v : centroids[l]) v /= static_cast<double>(leaf_count[l]);
        for (size_t m = 0; m < members.size(); ++m)
          quantized[m] = centroids[static_cast<size_t>(leaf.assign[m])];

        // Subgradient of sum |target - quantized render| through the
        // centroid means back to member features.
        std::vector<std::vector<double>> cgrad(centroids.size(), std::vector<double>(C, 0.0));
        std::vector<double> mass(centroids.size(), 0.0);
        for (const RefineView& rv : rviews) {
          for (size_t px : rv.px) {
            std::vector<double> fq(C, 0.0);
            for (const SplatWeight& sw : rv.weights[px]) {
              const auto& q = quantized[static_cast<size_t>(member_row[static_cast<size_t>(sw.splat)])];
              for (size_t c = 0; c < C; ++c) fq[c] += sw.weight * q[c];
            }
            const double* ft = rv.target->features.data() + px * C;
            for (const SplatWeight& sw : rv.weights[px]) {
              size_t l = static_cast<size_t>(
                  leaf.assign[static_cast<size_t>(member_row[static_cast<size_t>(sw.splat)])]);
              mass[l] += sw.weight;
              for (size_t c = 0; c < C; ++c) {
                double diff = fq[c] - ft[c];
                double s = diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0;
                cgrad[l][c] += s * sw.weight;
              }
            }
          }
        }
        // Normalizing by the leaf's supervised weight mass turns the update
        // into a bounded step toward the weighted median of the per-pixel
        // targets; the harmonic decay damps the terminal oscillation that a
        // constant subgradient step would otherwise leave behind.
        double step = cfg.refine_lr / (1.0 + static_cast<double>(inner));
        for (size_t m = 0; m < members.size(); ++m) {
          size_t l = static_cast<size_t>(leaf.assign[m]);
          if (leaf_count[l] == 0 || mass[l] <= 0.0) continue;
          auto& f = scene.splats[static_cast<size_t>(members[m])].feature;
          for (size_t c = 0; c < C; ++c) f[c] -= step * cgrad[l][c] / mass[l];
        }
      }
    }
  }

  // Cluster topology stays frozen; only the feature values were refined.
  // Refresh the stored centroid values so the codebook reflects the field.
  result.codebook = initial;
  {
    std::vector<int> root_n(static_cast<size_t>(initial.k1), 0);
    std::vector<std::vector<int>> leaf_n(static_cast<size_t>(initial.k1));
    for (size_t r = 0; r < static_cast<size_t>(initial.k1); ++r) {
      result.codebook.root_centroids[r].assign(C + 3, 0.0);
      leaf_n[r].assign(result.codebook.leaf_centroids[r].size(), 0);
      for (auto& leaf : result.codebook.leaf_centroids[r]) leaf.assign(C, 0.0);
    }
    for (size_t i = 0; i < scene.splats.size(); ++i) {
      size_t r = static_cast<size_t>(initial.root_assign[i]);
      size_t l = static_cast<size_t>(initial.leaf_assign[i]);
      const Splat& s = scene.splats[i];
      auto& rc = result.codebook.root_centroids[r];
      for (size_t c = 0; c < C; ++c) rc[c] += s.feature[c];
      rc[C + 0] += cfg.pos_weight * s.center.x;
      rc[C + 1] += cfg.pos_weight * s.center.y;
      rc[C + 2] += cfg.pos_weight * s.center.z;
      auto& lc = result.codebook.leaf_centroids[r][l];
      for (size_t c = 0; c < C; ++c) lc[c] += s.feature[c];
      ++root_n[r];
      ++leaf_n[r][l];
    }
    for (size_t r = 0; r < static_cast<size_t>(initial.k1); ++r) {
      if (root_n[r] > 0)
        for (double& v : result.codebook.root_centroids[r])
          v /= static_cast<double>(root_n[r]);
      else
        result.codebook.root_centroids[r] = initial.root_centroids[r];
      for (size_t l = 0; l < leaf_n[r].size(); ++l)
        if (leaf_n[r][l] > 0)
          for (double& v : result.codebook.leaf_centroids[r][l])
            v /= static_cast<double>(leaf_n[r][l]);
        else
          result.codebook.leaf_centroids[r][l] = initial.leaf_centroids[r][l];
    }
  }
  result.labels = labels_initial;

  std::vector<int> instances;
  for (const Splat& s : scene.splats)
    if (s.gt_instance >= 0 &&
        std::find(instances.begin(), instances.end(), s.gt_instance) == instances.end())
      instances.push_back(s.gt_instance);
  std::sort(instances.begin(), instances.end());
  if (instances.empty()) raise(Errc::empty_ground_truth, "scene carries no gt_instance labels");

  std::vector<int> label_ids;
  for (int l = 0; l < n_labels; ++l)
    if (proto_count[static_cast<size_t>(l)] > 0) label_ids.push_back(l);

  // Global greedy matching of predicted labels to instances by overlap.
  std::vector<std::vector<size_t>> inter(label_ids.size(),
                                         std::vector<size_t>(instances.size(), 0));
  std::vector<std::vector<size_t>> uni(label_ids.size(),
                                       std::vector<size_t>(instances.size(), 0));
  // Predicted masks: every sufficiently covered pixel answers to the nearest
  // frozen query through the refined field, so corrupted features surrender
  // their pixels to whichever cluster poisoned them.
  auto query_masks = [&](const SplatCamera& cam) {
    auto weights = render_weights(scene, cam);
    std::vector<Mask> masks(label_ids.size(), Mask(weights.size(), 0));
    std::vector<double> f(C);
    for (size_t px = 0; px < weights.size(); ++px) {
      double total = 0.0;
      std::fill(f.begin(), f.end(), 0.0);
      for (const SplatWeight& sw : weights[px]) {
        total += sw.weight;
        const auto& sf = scene.splats[static_cast<size_t>(sw.splat)].feature;
        for (size_t c = 0; c < C; ++c) f[c] += sw.weight * sf[c];
      }
      if (total <= cfg.alpha_min) continue;
      for (double& v : f) v /= total;
      size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < label_ids.size(); ++k) {
        const auto& p = prototypes[static_cast<size_t>(label_ids[k])];
        double d2 = 0.0;
        for (size_t c = 0; c < C; ++c) d2 += (f[c] - p[c]) * (f[c] - p[c]);
        if (d2 < best_d) {
          best_d = d2;
          best = k;
        }
      }
      masks[best][px] = 1;
    }
    return masks;
  };

  // One pooled sample per instance: pixels from every view concatenate into
  // a single mask, so a handful of sliver views contributes its pixels to
  // the score instead of each counting as a full sample of boundary noise.
  std::vector<Mask> pred_pool(label_ids.size()), gt_pool(instances.size());
  for (const SplatCamera& cam : cams) {
    std::vector<Mask> pred = query_masks(cam);
    std::vector<Mask> gt = gt_instance_masks(scene, cam, instances, cfg.alpha_min);
    for (size_t a = 0; a < pred.size(); ++a)
      pred_pool[a].insert(pred_pool[a].end(), pred[a].begin(), pred[a].end());
    for (size_t b = 0; b < gt.size(); ++b)
      gt_pool[b].insert(gt_pool[b].end(), gt[b].begin(), gt[b].end());
  }
  for (size_t a = 0; a < label_ids.size(); ++a)
    for (size_t b = 0; b < instances.size(); ++b)
      for (size_t px = 0; px < pred_pool[a].size(); ++px) {
        bool p = pred_pool[a][px] != 0;
        bool g = gt_pool[b][px] != 0;
        inter[a][b] += (p && g) ? 1 : 0;
        uni[a][b] += (p || g) ? 1 : 0;
      }
  std::vector<int> match(instances.size(), -1);  // instance -> label row
  std::vector<bool> label_used(label_ids.size(), false);
  for (size_t step = 0; step < instances.size(); ++step) {
    double best = -1.0;
    size_t ba = 0, bb = 0;
    for (size_t a = 0; a < label_ids.size(); ++a) {
      if (label_used[a]) continue;
      for (size_t b = 0; b < instances.size(); ++b) {
        if (match[b] >= 0) continue;
        double iou = uni[a][b] > 0
                         ? static_cast<double>(inter[a][b]) / static_cast<double>(uni[a][b])
                         : 0.0;
        if (iou > best) {
          best = iou;
          ba = a;
          bb = b;
        }
      }
    }
    if (best < 0.0) break;
    match[bb] = static_cast<int>(ba);
    label_used[ba] = true;
  }

  std::vector<Mask> paired_pred, paired_gt;
  for (size_t b = 0; b < instances.size(); ++b) {
    paired_gt.push_back(gt_pool[b]);
    if (match[b] >= 0)
      paired_pred.push_back(pred_pool[static_cast<size_t>(match[b])]);
    else
      paired_pred.push_back(Mask(gt_pool[b].size(), 0));
  }
  result.score = evaluate_segmentation(paired_pred, paired_gt);
  for (size_t b = 0; b < instances.size(); ++b) {
    size_t i2 = 0, u2 = 0;
    for (size_t px = 0; px < gt_pool[b].size(); ++px) {
      bool p = paired_pred[b][px] != 0;
      bool g = gt_pool[b][px] != 0;
      i2 += (p && g) ? 1 : 0;
      u2 += (p || g) ? 1 : 0;
    }
    result.per_instance_iou.push_back(u2 > 0 ? static_cast<double>(i2) / static_cast<double>(u2)
                                             : 1.0);
  }
  result.scene = std::move(scene);
  return result;
}

}  // namespace vgh
