#pragma once

#include <cstdint>
#include <vector>

#include "vgh/image.hpp"
#include "vgh/splats.hpp"

namespace vgh {

/// Binary pixel mask, row-major, same raster as the rendering camera.
using Mask = std::vector<uint8_t>;

/// Sum over masks of squared deviation of rendered features from the mask
/// mean: sum_k sum_{p in B_k} ||F(p) - mean_k||^2. Raises Errc::empty_mask
/// when a mask contains no pixels.
double smoothing_loss(const FeatureMap& map, const std::vector<Mask>& masks);

/// Mean inverse squared distance between mask-mean features:
/// (1 / (K(K-1))) * sum_{k != j} 1 / (||mean_k - mean_j||^2 + eps).
/// Raises Errc::too_few_masks for K < 2, Errc::empty_mask for an empty mask.
double contrastive_loss(const FeatureMap& map, const std::vector<Mask>& masks,
                        double eps = 1e-8);

/// L1 distance between two rendered maps, summed over all pixels and
/// channels, or over `mask` pixels when given. Shapes must match.
double quantization_loss(const FeatureMap& rendered, const FeatureMap& quantized);
double quantization_loss_masked(const FeatureMap& rendered, const FeatureMap& quantized,
                                const Mask& mask);

struct TrainConfig {
  int iterations = 150;
  double learning_rate = 5e-3;
  double lambda_c = 1.0;   // contrastive weight
  double lambda_s = 0.1;   // smoothing weight
  double cutoff_sigmas = 4.0;
};

struct TrainStats {
  std::vector<double> loss_history;  // one entry per iteration, pre-step
  double final_loss = 0.0;
};

/// Gradient of sum over views of (lambda_c * L_c + lambda_s * L_s) with
/// respect to every splat feature. Gradients flow through the mask means.
/// Views with fewer than two non-empty masks contribute no contrastive term;
/// empty masks are skipped.
std::vector<std::vector<double>> field_gradient(const SplatScene& scene,
                                                const std::vector<SplatCamera>& cams,
                                                const std::vector<std::vector<Mask>>& masks,
                                                const TrainConfig& cfg);

double field_loss(const SplatScene& scene, const std::vector<SplatCamera>& cams,
                  const std::vector<std::vector<Mask>>& masks, const TrainConfig& cfg);

/// Fixed-step gradient descent on the splat features, starting from the
/// features already present in the scene. Raises Errc::diverged when the
/// loss becomes non-finite.
TrainStats train_features(SplatScene& scene, const std::vector<SplatCamera>& cams,
                          const std::vector<std::vector<Mask>>& masks, const TrainConfig& cfg);

/// Occlusion-aware visibility mask of one cluster: pixel is in the mask iff
/// the cluster's own accumulated alpha exceeds alpha_min and its normalized
/// blended depth is strictly nearer than the depth-only render of all other
/// clusters (treated as absent where their alpha stays at or below
/// alpha_min). Raises Errc::unknown_cluster for an id with no members.
Mask occlusion_mask(const SplatScene& scene, const std::vector<int>& cluster_of, int cluster_id,
                    const SplatCamera& cam, double alpha_min = 0.5);

/// Cluster footprint without the depth test: alpha of the cluster-only
/// render above alpha_min.
Mask cluster_footprint(const SplatScene& scene, const std::vector<int>& cluster_of,
                       int cluster_id, const SplatCamera& cam, double alpha_min = 0.5);

struct ViewScore {
  int view = -1;
  int visible_pixels = 0;
};

/// Views where the cluster's occlusion-aware mask has strictly more than
/// `delta_vis` pixels, with their pixel counts, in ascending view order.
std::vector<ViewScore> select_training_views(const SplatScene& scene,
                                             const std::vector<int>& cluster_of, int cluster_id,
                                             const std::vector<SplatCamera>& cams, int delta_vis,
                                             double alpha_min = 0.5);

struct Codebook {
  int k1 = 0;
  int k2 = 0;
  double pos_weight = 0.5;
  std::vector<std::vector<double>> root_centroids;                // k1 x (C + 3)
  std::vector<std::vector<std::vector<double>>> leaf_centroids;   // per root, k2 x C
  std::vector<int> root_assign;  // per splat
  std::vector<int> leaf_assign;  // per splat, within its root

  const std::vector<double>& quantized_feature(size_t splat) const {
    return leaf_centroids[static_cast<size_t>(root_assign[splat])]
                         [static_cast<size_t>(leaf_assign[splat])];
  }
};

/// Two-level codebook. Root k-means runs on [feature, pos_weight * position]
/// with k-means++ seeding from `seed`; within each root, leaf k-means runs on
/// features alone. Lloyd iterations stop at `iters` or when the relative
/// centroid shift drops below 1e-6. Cluster counts clamp to the number of
/// member points. Deterministic for a fixed seed.
Codebook discretize_codebook(const SplatScene& scene, int k1 = 64, int k2 = 32,
                             double pos_weight = 0.5, int iters = 100, uint64_t seed = 0);

/// Per-splat instance labels: the root-level cluster of the codebook,
/// compacted to consecutive ids in ascending root order.
std::vector<int> segment_instances(const SplatScene& scene, const Codebook& codebook);

struct SegScore {
  double miou = 0.0;
  double macc = 0.0;
};

/// Paired prediction/ground-truth masks. Pairs whose ground-truth mask is
/// empty are excluded; raises Errc::empty_ground_truth when nothing remains.
SegScore evaluate_segmentation(const std::vector<Mask>& pred, const std::vector<Mask>& gt);

struct AnnotationView {
  int view = -1;
  double score = 0.0;
  double iou = 0.0;         // footprint vs reference mask
  double visibility = 0.0;  // visible pixels / footprint pixels
  Image image;              // contour in saturated red, background dimmed
};

/// Ranks views for annotating one instance (a set of splat indices) by
/// score = IoU + alpha_score * VisibilityRatio and returns the best `top_k`
/// with composited images. `reference_masks` holds the instance's 2D mask per
/// view. Raises Errc::no_visible_view when every view scores zero.
std::vector<AnnotationView> rank_annotation_views(const SplatScene& scene,
                                                  const std::vector<int>& members,
                                                  const std::vector<SplatCamera>& cams,
                                                  const std::vector<Mask>& reference_masks,
                                                  double alpha_score = 1.0, int top_k = 3,
                                                  double alpha_min = 0.5);

struct PipelineConfig {
  TrainConfig stage1;
  int k1 = 64;
  int k2 = 32;
  double pos_weight = 0.5;
  int kmeans_iters = 100;
  int refine_outer = 3;     // leaf re-quantization rounds
  int refine_inner = 12;    // gradient steps per round
  double refine_lr = 0.3;  // initial step of the mass-normalized subgradient
  int delta_vis = 50;       // pixels
  double alpha_min = 0.5;
  bool use_occlusion_masks = true;
  bool use_view_selection = true;
  double init_scale = 0.1;  // feature init range when the scene has all-zero features
  uint64_t seed = 0;
};

struct PipelineResult {
  std::vector<int> labels;       // per splat
  Codebook codebook;
  SegScore score;                // against gt_instance-derived masks
  std::vector<double> per_instance_iou;  // one entry per gt instance, ascending id
  std::vector<double> stage1_loss;
  SplatScene scene;              // input scene with learned, refined features
};

/// Ground-truth 2D instance masks for a synthetic scene: a pixel belongs to
/// the instance holding the majority of its blending weight, where the total
/// alpha exceeds alpha_min. Returns one mask per instance id in `instances`.
std::vector<Mask> gt_instance_masks(const SplatScene& scene, const SplatCamera& cam,
                                    const std::vector<int>& instances, double alpha_min = 0.5);

/// Stage 1 feature learning, two-level discretization with occlusion-aware
/// refinement, final re-clustering, and evaluation against the scene's
/// gt_instance labels.
PipelineResult run_semantic_pipeline(SplatScene scene, const std::vector<SplatCamera>& cams,
                                     const std::vector<std::vector<Mask>>& stage1_masks,
                                     const PipelineConfig& cfg);

}  // namespace vgh
