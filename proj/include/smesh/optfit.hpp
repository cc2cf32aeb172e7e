#pragma once

// Two-stage per-scene fitting. Stage 1 volume-renders the triplane field
// against rgb and mask; stage 2 re-initializes the SDF head from the density
// head, extracts a mesh every step and supervises its rasterization with rgb,
// mask, depth and normals plus the extraction regularizer.
//
// Pixel terms are per-view means (masked means for depth and normal, over
// pixels whose ground-truth mask exceeds 0.5), summed over views.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"
#include "smesh/autodiff.hpp"
#include "smesh/core3d.hpp"
#include "smesh/flexigrid.hpp"
#include "smesh/image.hpp"
#include "smesh/mesh.hpp"
#include "smesh/triplane.hpp"

namespace smesh {

struct LossWeights {
  double lpips = 2.0;
  double mask = 1.0;
  double depth = 0.5;
  double normal = 0.2;
  double reg = 0.01;
};

/// Unweighted per-term values and the weighted total.
struct LossTerms {
  double rgb = 0.0;
  double lpips = 0.0;
  double mask = 0.0;
  double depth = 0.0;
  double normal = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

/// Optional perceptual loss: (predicted rgb rows, ground truth rgb, width, height).
using PerceptualLoss = std::function<ad::Var(const ad::Var&, const Eigen::MatrixX3d&, int, int)>;

// Per-view terms on a tape.
ad::Var rgb_loss(const ad::Var& pred, const Eigen::MatrixX3d& gt);
ad::Var mask_loss(const ad::Var& pred, const Eigen::VectorXd& gt);
ad::Var depth_loss(const ad::Var& pred, const Eigen::VectorXd& gt, const Eigen::VectorXd& gt_mask);
ad::Var normal_loss(const ad::Var& pred, const Eigen::MatrixX3d& gt, const Eigen::VectorXd& gt_mask);

LossTerms loss_stage1(const std::vector<ImageBuffer>& rendered, const std::vector<ImageBuffer>& gt,
                      const LossWeights& w = {}, const PerceptualLoss& perceptual = nullptr);
LossTerms loss_stage2(const std::vector<ImageBuffer>& rendered, const std::vector<ImageBuffer>& gt,
                      const LossWeights& w, const ExtractionGrid& grid, const Extraction& extraction,
                      const PerceptualLoss& perceptual = nullptr);

/// lr_end + (lr_start - lr_end) (1 + cos(pi step / total)) / 2.
double cosine_lr(int step, int total_steps, double lr_start, double lr_end);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  long step = 0;
};

/// Bias-corrected Adam update of params[i] with grads[i] (an untouched slot
/// is a zero gradient). Throws std::runtime_error, leaving everything
/// unchanged, when any gradient entry is non-finite.
void adam_step(std::span<Eigen::MatrixXd* const> params, const ad::ParamGrad& grads, AdamState& state, double lr,
               const AdamOptions& options = {});

struct FitConfig {
  FieldConfig field;
  LossWeights weights;

  int stage1_steps = 2000;
  int stage2_steps = 1000;
  double stage1_lr_start = 4e-4;
  double stage1_lr_end = 4e-5;
  double stage2_lr_start = 4e-5;
  double stage2_lr_end = 0.0;

  int n_samples = 96;
  int grid_resolution = 128;
  int input_size = 320;
  /// Stage-1 square crop side; whole frames when >= the view size.
  int render_size_stage1 = 192;
  int render_size_stage2 = 512;
  /// Views used from the dataset (first n) and views rendered per step.
  int n_input_views = 6;
  int n_supervision_views = 4;
  double tau = kDefaultTau;
  bool jitter = true;
  std::uint64_t seed = 0;
  int threads = 1;

  static FitConfig base();
  static FitConfig large();
  /// Small network and budgets that fit a single-core desk run.
  static FitConfig desk();
};

/// Named scalar fields of FitConfig (field.* and weights.* included), used for
/// JSON and command-line overrides.
using ConfigValue = std::variant<int*, double*, bool*, std::uint64_t*>;
struct ConfigField {
  std::string name;
  ConfigValue value;
};
std::vector<ConfigField> config_fields(FitConfig& config);
void validate(const FitConfig& config);

void to_json(nlohmann::json& j, const FitConfig& config);
/// Keys absent from `j` keep their current value; unknown keys throw.
void from_json(const nlohmann::json& j, FitConfig& config);

struct TraceRow {
  int stage = 1;
  int step = 0;
  double lr = 0.0;
  LossTerms terms;
};

struct FitHooks {
  std::function<void(const TraceRow&)> trace;
  PerceptualLoss perceptual;
};

/// Ground-truth views with their cameras (camera size = view size).
struct ViewSet {
  std::vector<CameraPose> cameras;
  std::vector<ImageBuffer> images;

  std::size_t size() const { return cameras.size(); }
};

/// Stage-1 loss of `field` on (view, crop) pairs; adds the gradient into `grad` when given.
LossTerms evaluate_stage1(const TriplaneField& field, const ViewSet& views, const std::vector<int>& chosen,
                          const std::vector<Patch>& crops, const FitConfig& config, std::uint64_t jitter_key,
                          ad::ParamGrad* grad, const PerceptualLoss& perceptual = nullptr);

/// Stage-2 loss of the mesh extracted from `field` at the chosen views; adds
/// the full gradient (through rasterization, extraction and the regularizer)
/// into `grad` when given. Throws when the extraction is empty.
LossTerms evaluate_stage2(const TriplaneField& field, const ViewSet& views, const std::vector<int>& chosen,
                          const FitConfig& config, ad::ParamGrad* grad, const PerceptualLoss& perceptual = nullptr);

TriplaneField fit_stage1(TriplaneField field, const ViewSet& views, const FitConfig& config,
                         const FitHooks& hooks = {});

struct Stage2Result {
  TriplaneField field;
  Mesh mesh;
};

/// Applies init_sdf_from_density(field, config.tau) and optimizes the mesh.
Stage2Result fit_stage2(const TriplaneField& field, const ViewSet& views, const FitConfig& config,
                        const FitHooks& hooks = {});

/// Extraction of the field's SDF at `resolution`, shaded by its color head.
Mesh extract_field_mesh(const TriplaneField& field, int resolution);

}  // namespace smesh
