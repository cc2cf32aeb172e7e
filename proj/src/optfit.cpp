#include "smesh/optfit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "smesh/raster.hpp"
#include "smesh/volren.hpp"

namespace smesh {

namespace {

constexpr double kMaskThreshold = 0.5;

ad::Var zero(ad::Tape& tape) { return tape.constant(Eigen::MatrixXd::Zero(1, 1)); }

Eigen::VectorXd mask_weights(const Eigen::VectorXd& gt_mask) {
  Eigen::VectorXd w = (gt_mask.array() > kMaskThreshold).cast<double>();
  const double count = w.sum();
  if (count > 0.0) w /= count;
  return w;
}

void check_pixels(Eigen::Index pred, Eigen::Index gt, const char* what) {
  if (pred != gt) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

// Accumulates weighted per-view terms on a tape.
struct LossBuilder {
  ad::Tape& tape;
  const LossWeights& w;
  ad::Var rgb, lpips, mask, depth, normal;

  LossBuilder(ad::Tape& t, const LossWeights& weights)
      : tape(t), w(weights), rgb(zero(t)), lpips(zero(t)), mask(zero(t)), depth(zero(t)), normal(zero(t)) {}

  void add_stage1(const ad::Var& pred_rgb, const ad::Var& pred_mask, const ImageBuffer& gt,
                  const PerceptualLoss& perceptual) {
    rgb = rgb + rgb_loss(pred_rgb, gt.rgb);
    mask = mask + mask_loss(pred_mask, gt.mask);
    if (perceptual) lpips = lpips + perceptual(pred_rgb, gt.rgb, gt.width, gt.height);
  }

  void add_geometry(const ad::Var& pred_depth, const ad::Var& pred_normal, const ImageBuffer& gt) {
    if (gt.depth.size() != gt.pixel_count() || gt.normal.rows() != gt.pixel_count()) {
      throw std::invalid_argument("loss_stage2: ground truth lacks depth or normal channels");
    }
    depth = depth + depth_loss(pred_depth, gt.depth, gt.mask);
    normal = normal + normal_loss(pred_normal, gt.normal, gt.mask);
  }

  ad::Var total(bool geometry, double reg) const {
    ad::Var t = rgb + w.lpips * lpips + w.mask * mask;
    if (geometry) t = t + w.depth * depth + w.normal * normal + w.reg * reg;
    return t;
  }

  LossTerms terms(const ad::Var& total, double reg) const {
    return {rgb.scalar(), lpips.scalar(), mask.scalar(), depth.scalar(), normal.scalar(), reg, total.scalar()};
  }
};

void check_lists(const std::vector<ImageBuffer>& rendered, const std::vector<ImageBuffer>& gt, const char* what) {
  if (rendered.size() != gt.size()) throw std::invalid_argument(std::string(what) + ": view count mismatch");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (rendered[i].width != gt[i].width || rendered[i].height != gt[i].height) {
      throw std::invalid_argument(std::string(what) + ": dimension mismatch");
    }
  }
}

std::vector<int> choose_views(std::mt19937_64& rng, int available, int wanted) {
  std::vector<int> ids(available);
  for (int i = 0; i < available; ++i) ids[i] = i;
  if (wanted >= available) return ids;
  // Partial Fisher-Yates, then ascending order.
  for (int i = 0; i < wanted; ++i) {
    const int j = i + static_cast<int>(rng() % static_cast<std::uint64_t>(available - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(wanted);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Patch choose_crop(std::mt19937_64& rng, const CameraPose& cam, int size) {
  const int w = std::min(size, cam.width), h = std::min(size, cam.height);
  const int x0 = cam.width > w ? static_cast<int>(rng() % static_cast<std::uint64_t>(cam.width - w + 1)) : 0;
  const int y0 = cam.height > h ? static_cast<int>(rng() % static_cast<std::uint64_t>(cam.height - h + 1)) : 0;
  return {x0, y0, w, h};
}

void check_views(const ViewSet& views) {
  if (views.cameras.size() != views.images.size()) throw std::invalid_argument("fit: cameras and images differ in count");
  if (views.size() == 0) throw std::invalid_argument("fit: at least one view is required");
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views.cameras[i].width != views.images[i].width || views.cameras[i].height != views.images[i].height) {
      throw std::invalid_argument("fit: camera size differs from its image");
    }
  }
}

std::vector<Eigen::MatrixXd*> mutable_params(TriplaneField& field) { return field.parameters(); }

}  // namespace

// --- losses -----------------------------------------------------------------

ad::Var rgb_loss(const ad::Var& pred, const Eigen::MatrixX3d& gt) {
  check_pixels(pred.rows(), gt.rows(), "rgb_loss");
  return ad::mean(ad::square(pred - pred.tape().constant(gt)));
}

ad::Var mask_loss(const ad::Var& pred, const Eigen::VectorXd& gt) {
  check_pixels(pred.rows(), gt.rows(), "mask_loss");
  return ad::mean(ad::square(pred - pred.tape().constant(gt)));
}

ad::Var depth_loss(const ad::Var& pred, const Eigen::VectorXd& gt, const Eigen::VectorXd& gt_mask) {
  check_pixels(pred.rows(), gt.rows(), "depth_loss");
  check_pixels(pred.rows(), gt_mask.rows(), "depth_loss");
  const Eigen::VectorXd w = mask_weights(gt_mask);
  if (w.isZero(0.0)) return zero(pred.tape());
  return ad::sum(ad::scale_rows(ad::abs(pred - pred.tape().constant(gt)), w));
}

ad::Var normal_loss(const ad::Var& pred, const Eigen::MatrixX3d& gt, const Eigen::VectorXd& gt_mask) {
  check_pixels(pred.rows(), gt.rows(), "normal_loss");
  check_pixels(pred.rows(), gt_mask.rows(), "normal_loss");
  const Eigen::VectorXd w = mask_weights(gt_mask);
  if (w.isZero(0.0)) return zero(pred.tape());
  const ad::Var cosine = ad::row_sum(pred * pred.tape().constant(gt));
  return ad::sum(ad::scale_rows(-cosine + 1.0, w));
}

LossTerms loss_stage1(const std::vector<ImageBuffer>& rendered, const std::vector<ImageBuffer>& gt,
                      const LossWeights& w, const PerceptualLoss& perceptual) {
  check_lists(rendered, gt, "loss_stage1");
  ad::Tape tape;
  LossBuilder b(tape, w);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    b.add_stage1(tape.constant(rendered[i].rgb), tape.constant(rendered[i].mask), gt[i], perceptual);
  }
  return b.terms(b.total(false, 0.0), 0.0);
}

LossTerms loss_stage2(const std::vector<ImageBuffer>& rendered, const std::vector<ImageBuffer>& gt,
                      const LossWeights& w, const ExtractionGrid& grid, const Extraction& extraction,
                      const PerceptualLoss& perceptual) {
  check_lists(rendered, gt, "loss_stage2");
  ad::Tape tape;
  LossBuilder b(tape, w);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    b.add_stage1(tape.constant(rendered[i].rgb), tape.constant(rendered[i].mask), gt[i], perceptual);
    b.add_geometry(tape.constant(rendered[i].depth), tape.constant(rendered[i].normal), gt[i]);
  }
  const double reg = reg_loss(grid, extraction);
  return b.terms(b.total(true, reg), reg);
}

double cosine_lr(int step, int total_steps, double lr_start, double lr_end) {
  if (total_steps <= 0) return lr_start;
  if (step < 0 || step > total_steps) throw std::out_of_range("cosine_lr: step outside [0, total]");
  if (step == total_steps) return lr_end;
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(phase));
}

void adam_step(std::span<Eigen::MatrixXd* const> params, const ad::ParamGrad& grads, AdamState& state, double lr,
               const AdamOptions& options) {
  if (grads.size() != params.size()) throw std::invalid_argument("adam_step: gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.touched(static_cast<ad::ParamId>(i))) continue;
    const Eigen::MatrixXd& g = grads[static_cast<ad::ParamId>(i)];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for parameter " + std::to_string(i));
    }
    if (!g.allFinite()) throw std::runtime_error("adam_step: non-finite gradient in parameter " + std::to_string(i));
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (auto* p : params) {
      state.m.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
      state.v.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (grads.touched(static_cast<ad::ParamId>(i))) {
      const Eigen::MatrixXd& g = grads[static_cast<ad::ParamId>(i)];
      m = options.beta1 * m + (1.0 - options.beta1) * g;
      v = options.beta2 * v + (1.0 - options.beta2) * g.cwiseAbs2();
    } else {
      m *= options.beta1;
      v *= options.beta2;
    }
    params[i]->array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options.epsilon);
  }
}

// --- config -------------------------------------------------------------------

FitConfig FitConfig::base() { return {}; }

FitConfig FitConfig::large() {
  FitConfig c;
  c.field = FieldConfig::large();
  c.n_samples = 128;
  return c;
}

FitConfig FitConfig::desk() {
  FitConfig c;
  c.field.resolution = 32;
  c.field.channels = 8;
  c.field.hidden_width = 16;
  c.field.hidden_layers = 1;
  c.field.aux_hidden_width = 16;
  c.stage1_lr_start = 1e-2;
  c.stage1_lr_end = 1e-3;
  c.stage2_lr_start = 1e-3;
  c.stage2_lr_end = 0.0;
  c.n_samples = 32;
  c.grid_resolution = 64;
  c.input_size = 64;
  c.render_size_stage1 = 64;
  c.render_size_stage2 = 64;
  c.n_supervision_views = 1;
  return c;
}

std::vector<ConfigField> config_fields(FitConfig& c) {
  return {
      {"field.resolution", &c.field.resolution},
      {"field.channels", &c.field.channels},
      {"field.hidden_width", &c.field.hidden_width},
      {"field.hidden_layers", &c.field.hidden_layers},
      {"field.aux_hidden_width", &c.field.aux_hidden_width},
      {"field.plane_init", &c.field.plane_init},
      {"field.seed", &c.field.seed},
      {"weights.lpips", &c.weights.lpips},
      {"weights.mask", &c.weights.mask},
      {"weights.depth", &c.weights.depth},
      {"weights.normal", &c.weights.normal},
      {"weights.reg", &c.weights.reg},
      {"stage1_steps", &c.stage1_steps},
      {"stage2_steps", &c.stage2_steps},
      {"stage1_lr_start", &c.stage1_lr_start},
      {"stage1_lr_end", &c.stage1_lr_end},
      {"stage2_lr_start", &c.stage2_lr_start},
      {"stage2_lr_end", &c.stage2_lr_end},
      {"n_samples", &c.n_samples},
      {"grid_resolution", &c.grid_resolution},
      {"input_size", &c.input_size},
      {"render_size_stage1", &c.render_size_stage1},
      {"render_size_stage2", &c.render_size_stage2},
      {"n_input_views", &c.n_input_views},
      {"n_supervision_views", &c.n_supervision_views},
      {"tau", &c.tau},
      {"jitter", &c.jitter},
      {"seed", &c.seed},
      {"threads", &c.threads},
  };
}

void validate(const FitConfig& c) {
  const auto fail = [](const std::string& msg) { throw std::invalid_argument("FitConfig: " + msg); };
  if (c.stage1_steps < 0 || c.stage2_steps < 0) fail("step counts must be >= 0");
  if (!(c.stage1_lr_start >= c.stage1_lr_end && c.stage1_lr_end >= 0.0)) fail("stage-1 lr must satisfy start >= end >= 0");
  if (!(c.stage2_lr_start >= c.stage2_lr_end && c.stage2_lr_end >= 0.0)) fail("stage-2 lr must satisfy start >= end >= 0");
  const LossWeights& w = c.weights;
  if (w.lpips < 0 || w.mask < 0 || w.depth < 0 || w.normal < 0 || w.reg < 0) fail("loss weights must be >= 0");
  if (c.n_samples < 1) fail("n_samples must be >= 1");
  if (c.grid_resolution < 2) fail("grid_resolution must be >= 2");
  if (c.render_size_stage1 < 1 || c.render_size_stage2 < 1 || c.input_size < 1) fail("sizes must be >= 1");
  if (c.n_input_views < 1 || c.n_supervision_views < 1) fail("view counts must be >= 1");
  if (c.field.resolution < 2 || c.field.channels < 1 || c.field.hidden_width < 1 || c.field.hidden_layers < 1 ||
      c.field.aux_hidden_width < 1) {
    fail("invalid field architecture");
  }
  if (c.threads < 1) fail("threads must be >= 1");
}

void to_json(nlohmann::json& j, const FitConfig& config) {
  FitConfig copy = config;
  j = nlohmann::json::object();
  for (const auto& f : config_fields(copy)) {
    std::visit([&](auto* p) { j[f.name] = *p; }, f.value);
  }
}

void from_json(const nlohmann::json& j, FitConfig& config) {
  if (!j.is_object()) throw std::invalid_argument("FitConfig: expected a JSON object");
  auto fields = config_fields(config);
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.name == key; });
    if (it == fields.end()) throw std::invalid_argument("FitConfig: unknown key '" + key + "'");
    std::visit([&](auto* p) { *p = value.get<std::remove_pointer_t<decltype(p)>>(); }, it->value);
  }
  validate(config);
}

// --- fitting --------------------------------------------------------------------

LossTerms evaluate_stage1(const TriplaneField& field, const ViewSet& views, const std::vector<int>& chosen,
                          const std::vector<Patch>& crops, const FitConfig& config, std::uint64_t jitter_key,
                          ad::ParamGrad* grad, const PerceptualLoss& perceptual) {
  if (crops.size() != chosen.size()) throw std::invalid_argument("evaluate_stage1: one crop per view required");
  ad::Tape tape;
  FieldGraph graph(tape, field);
  LossBuilder b(tape, config.weights);
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const int v = chosen[k];
    VolumeOptions opts;
    opts.n_samples = config.n_samples;
    opts.patch = crops[k];
    if (config.jitter) opts.jitter_seed = jitter_key ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(v + 1));
    const Composite c = render_volume(graph, views.cameras[v], opts);
    const ImageBuffer gt = views.images[v].crop(crops[k]);
    b.add_stage1(c.rgb, c.mask, gt, perceptual);
  }
  const ad::Var total = b.total(false, 0.0);
  const LossTerms terms = b.terms(total, 0.0);
  if (grad && std::isfinite(terms.total)) {
    if (grad->size() != field.parameters().size()) grad->resize(field.parameters().size());
    tape.backward(total, *grad);
  }
  return terms;
}

LossTerms evaluate_stage2(const TriplaneField& field, const ViewSet& views, const std::vector<int>& chosen,
                          const FitConfig& config, ad::ParamGrad* grad, const PerceptualLoss& perceptual) {
  ad::Tape grid_tape;
  const FieldGraph grid_graph(grid_tape, field);
  const GridGraph gg_graph = build_grid(grid_graph, config.grid_resolution, {.dense_alpha = false});
  const ExtractionGrid& grid = gg_graph.grid;
  const Extraction ex = extract(grid);
  if (ex.mesh.empty()) throw std::runtime_error("fit_stage2: iso-surface vanished (check tau)");

  ad::Tape tape;
  FieldGraph graph(tape, field);
  const ad::Var vertices = tape.variable(ex.mesh.vertices);
  const ad::Var colors = shade_vertices(graph, vertices);
  LossBuilder b(tape, config.weights);
  for (const int v : chosen) {
    const RasterGraph r = rasterize(vertices, colors, ex.mesh.triangles, views.cameras[v], {config.threads});
    const ImageBuffer& gt = views.images[v];
    b.add_stage1(r.rgb, tape.constant(r.mask), gt, perceptual);
    b.add_geometry(r.depth, r.normal, gt);
  }
  const double reg = reg_loss(grid, ex);
  const ad::Var total = b.total(true, reg);
  const LossTerms terms = b.terms(total, reg);
  if (grad && std::isfinite(terms.total)) {
    if (grad->size() != field.parameters().size()) grad->resize(field.parameters().size());
    tape.backward(total, *grad);
    GridGradient gg = GridGradient::zeros(grid);
    const ad::Tensor& dv = tape.grad(vertices);
    if (dv.size() > 0) backprop_extraction(grid, ex, dv, gg);
    reg_loss_gradient(grid, ex, config.weights.reg, gg);
    backprop_grid(gg_graph, gg, *grad);
  }
  return terms;
}

TriplaneField fit_stage1(TriplaneField field, const ViewSet& views, const FitConfig& config, const FitHooks& hooks) {
  validate(config);
  check_views(views);
  const int available = std::min<int>(config.n_input_views, static_cast<int>(views.size()));
  std::mt19937_64 rng(config.seed);
  AdamState adam;
  const auto params = mutable_params(field);
  for (int step = 0; step < config.stage1_steps; ++step) {
    const double lr = cosine_lr(step, config.stage1_steps, config.stage1_lr_start, config.stage1_lr_end);
    const std::vector<int> chosen = choose_views(rng, available, config.n_supervision_views);
    std::vector<Patch> crops;
    for (const int v : chosen) crops.push_back(choose_crop(rng, views.cameras[v], config.render_size_stage1));
    ad::ParamGrad grad(params.size());
    const std::uint64_t key = config.seed ^ (static_cast<std::uint64_t>(step) << 32);
    const LossTerms terms = evaluate_stage1(field, views, chosen, crops, config, key, &grad, hooks.perceptual);
    if (!std::isfinite(terms.total)) {
      throw std::runtime_error("fit_stage1: non-finite loss at step " + std::to_string(step));
    }
    if (hooks.trace) hooks.trace({1, step, lr, terms});
    adam_step(params, grad, adam, lr);
  }
  return field;
}

Stage2Result fit_stage2(const TriplaneField& stage1, const ViewSet& views, const FitConfig& config,
                        const FitHooks& hooks) {
  validate(config);
  check_views(views);
  Stage2Result out{init_sdf_from_density(stage1, config.tau), {}};
  const int available = std::min<int>(config.n_input_views, static_cast<int>(views.size()));
  std::mt19937_64 rng(config.seed ^ 0x5f3759dfULL);
  AdamState adam;
  const auto params = mutable_params(out.field);
  for (int step = 0; step < config.stage2_steps; ++step) {
    const double lr = cosine_lr(step, config.stage2_steps, config.stage2_lr_start, config.stage2_lr_end);
    const std::vector<int> chosen = choose_views(rng, available, config.n_supervision_views);
    ad::ParamGrad grad(params.size());
    LossTerms terms;
    try {
      terms = evaluate_stage2(out.field, views, chosen, config, &grad, hooks.perceptual);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(step));
    }
    if (!std::isfinite(terms.total)) {
      throw std::runtime_error("fit_stage2: non-finite loss at step " + std::to_string(step));
    }
    if (hooks.trace) hooks.trace({2, step, lr, terms});
    adam_step(params, grad, adam, lr);
  }
  out.mesh = extract_field_mesh(out.field, config.grid_resolution);
  if (out.mesh.empty()) throw std::runtime_error("fit_stage2: iso-surface vanished after the final step");
  return out;
}

Mesh extract_field_mesh(const TriplaneField& field, int resolution) {
  Mesh mesh = extract_mesh(build_grid(field, resolution, {.dense_alpha = false}));
  return shade_vertices(field, mesh);
}

}  // namespace smesh
