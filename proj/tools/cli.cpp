#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "smesh/campose.hpp"
#include "smesh/dataio.hpp"
#include "smesh/flexigrid.hpp"
#include "smesh/meshmetrics.hpp"
#include "smesh/optfit.hpp"
#include "smesh/raster.hpp"
#include "smesh/triplane.hpp"

namespace smesh {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";

PoseSet load_poses(const fs::path& path) { return json::parse(read_file(path)).get<PoseSet>(); }

void write_run_json(const fs::path& dir, const std::string& command, json details) {
  details["command"] = command;
  details["version"] = std::string("sparsemesh ") + kVersion;
  fs::create_directories(dir.empty() ? fs::path(".") : dir);
  write_file((dir.empty() ? fs::path(".") : dir) / "run.json", details.dump(2) + "\n");
}

fs::path parent_of(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

std::string flag_name(const std::string& field) {
  std::string out;
  for (char c : field) out += (c == '.' || c == '_') ? '-' : c;
  return out;
}

void apply_override(ConfigField& f, const std::string& text) {
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        std::size_t used = 0;
        if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1") {
            *p = true;
          } else if (text == "false" || text == "0") {
            *p = false;
          } else {
            throw CLI::ValidationError("--" + flag_name(f.name), "expected true/false");
          }
          used = text.size();
        } else if constexpr (std::is_same_v<T, int>) {
          *p = std::stoi(text, &used);
        } else if constexpr (std::is_same_v<T, double>) {
          *p = std::stod(text, &used);
        } else {
          *p = std::stoull(text, &used);
        }
        if (used != text.size()) throw CLI::ValidationError("--" + flag_name(f.name), "bad value '" + text + "'");
      },
      f.value);
}

ViewSet to_views(const Dataset& ds) {
  ViewSet v;
  v.cameras = ds.poses.poses;
  v.images = ds.views;
  return v;
}

Dataset render_mesh_views(const Mesh& mesh, const PoseSet& poses, std::optional<int> size, int threads) {
  Dataset ds;
  ds.poses = poses;
  for (CameraPose& cam : ds.poses.poses) {
    if (size) cam.width = cam.height = *size;
    ds.views.push_back(rasterize(mesh, cam, RasterOptions{threads}));
  }
  return ds;
}

// --- subcommands ------------------------------------------------------------------

struct PosesArgs {
  std::string protocol = "zero123pp";
  double query_azimuth = 0.0;
  int n = 21;
  std::uint64_t seed = 0;
  double radius = kDefaultRadius;
  double fov = kDefaultFovDeg;
  int size = 64;
  std::optional<std::uint64_t> augment_seed;
  std::optional<std::uint64_t> perturb_seed;
  std::string out;
};

int cmd_poses(const PosesArgs& a, std::ostream& out) {
  PoseSet set;
  if (a.protocol == "zero123pp") {
    set = zero123pp_targets(a.query_azimuth, a.radius, a.fov, a.size, a.size);
  } else if (a.protocol == "orbit") {
    set = orbit_eval_poses(a.n, {30.0, 0.0, -30.0}, a.radius, a.fov, a.size, a.size);
  } else {
    ViewpointRanges ranges;
    ranges.radius = a.radius;
    ranges.fov_deg = a.fov;
    ranges.width = ranges.height = a.size;
    set = random_viewpoints(a.n, a.seed, ranges);
  }
  if (a.augment_seed) set = augment_poses(set, *a.augment_seed);
  if (a.perturb_seed) set = perturb_poses(set, *a.perturb_seed);
  const std::string text = json(set).dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
  }
  return 0;
}

struct SynthArgs {
  std::string scene;
  std::string poses;
  std::string out;
  int size = 64;
  int gt_grid = 128;
  int threads = 1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const SceneSpec scene = parse_scene(a.scene);
  const PoseSet poses = a.poses.empty() ? zero123pp_targets(0.0) : load_poses(a.poses);
  Dataset ds;
  ds.poses = poses;
  for (auto& cam : ds.poses.poses) cam.width = cam.height = a.size;
  ds.views = render_gt(scene, ds.poses, a.size, a.size, a.threads);
  ds.scene = scene;
  write_dataset(ds, a.out);
  const Mesh gt = scene_mesh(scene, a.gt_grid);
  write_obj(gt, fs::path(a.out) / "gt.obj");
  write_run_json(a.out, "synth",
                 {{"scene", format_scene(scene)}, {"views", ds.views.size()}, {"size", a.size}, {"gt_grid", a.gt_grid}});
  out << "wrote " << ds.views.size() << " views and gt.obj to " << a.out << "\n";
  return 0;
}

struct FitArgs {
  std::string scene;
  std::string config;
  std::string preset = "base";
  std::string out;
  std::string stage = "both";
  std::string init;
  std::string mesh;
  std::string trace;
  int log_every = 0;
  std::map<std::string, std::string> overrides;
  std::vector<CLI::Option*> override_options;
};

int cmd_fit(FitArgs& a, std::ostream& out, std::ostream& err) {
  FitConfig cfg = a.preset == "large" ? FitConfig::large() : a.preset == "desk" ? FitConfig::desk() : FitConfig::base();
  if (!a.config.empty()) from_json(json::parse(read_file(a.config)), cfg);
  auto fields = config_fields(cfg);
  for (auto& f : fields) {
    const auto it = a.overrides.find(f.name);
    if (it != a.overrides.end()) apply_override(f, it->second);
  }
  validate(cfg);

  const Dataset ds = read_dataset(a.scene);
  const ViewSet views = to_views(ds);
  const fs::path ckpt = a.out;
  const fs::path mesh_path = a.mesh.empty() ? fs::path(ckpt).replace_extension(".obj") : fs::path(a.mesh);
  const fs::path trace_path = a.trace.empty() ? fs::path(ckpt).replace_extension(".trace.csv") : fs::path(a.trace);

  std::ofstream trace(trace_path);
  if (!trace) throw std::runtime_error("cannot write " + trace_path.string());
  trace << "stage,step,lr,total,rgb,lpips,mask,depth,normal,reg\n";
  FitHooks hooks;
  hooks.trace = [&](const TraceRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.stage, r.step, r.lr,
                  r.terms.total, r.terms.rgb, r.terms.lpips, r.terms.mask, r.terms.depth, r.terms.normal, r.terms.reg);
    trace << buf;
    if (a.log_every > 0 && r.step % a.log_every == 0) {
      err << "stage " << r.stage << " step " << r.step << " loss " << r.terms.total << "\n";
    }
  };

  const auto start = std::chrono::steady_clock::now();
  TriplaneField field;
  Mesh mesh;
  if (a.stage == "2") {
    if (a.init.empty()) throw std::runtime_error("fit --stage 2 requires --init <checkpoint>");
    field = load_checkpoint(a.init);
  } else {
    field = fit_stage1(make_field(cfg.field), views, cfg, hooks);
  }
  if (a.stage == "1") {
    mesh = extract_field_mesh(init_sdf_from_density(field, cfg.tau), cfg.grid_resolution);
  } else {
    Stage2Result r = fit_stage2(field, views, cfg, hooks);
    field = std::move(r.field);
    mesh = std::move(r.mesh);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  save_checkpoint(field, ckpt);
  write_obj(mesh, mesh_path);
  write_run_json(parent_of(ckpt), "fit",
                 {{"config", cfg},
                  {"preset", a.preset},
                  {"stage", a.stage},
                  {"scene", a.scene},
                  {"seed", cfg.seed},
                  {"checkpoint", ckpt.string()},
                  {"mesh", mesh_path.string()},
                  {"trace", trace_path.string()},
                  {"seconds", seconds}});
  out << "wrote " << ckpt.string() << " and " << mesh_path.string() << " (" << mesh.vertex_count() << " vertices, "
      << mesh.triangle_count() << " triangles)\n";
  return 0;
}

struct ExtractArgs {
  std::string ckpt;
  int grid = 64;
  std::string out;
  bool from_density = false;
  double tau = kDefaultTau;
};

int cmd_extract(const ExtractArgs& a, std::ostream& out) {
  TriplaneField field = load_checkpoint(a.ckpt);
  if (a.from_density) field = init_sdf_from_density(field, a.tau);
  const Mesh mesh = extract_field_mesh(field, a.grid);
  write_obj(mesh, a.out);
  out << "wrote " << a.out << " (" << mesh.vertex_count() << " vertices, " << mesh.triangle_count() << " triangles)\n";
  return 0;
}

struct RenderArgs {
  std::string mesh;
  std::string poses;
  std::string out;
  std::optional<int> size;
  int threads = 1;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const Mesh mesh = read_obj(a.mesh);
  const Dataset ds = render_mesh_views(mesh, load_poses(a.poses), a.size, a.threads);
  write_dataset(ds, a.out);
  write_run_json(a.out, "render", {{"mesh", a.mesh}, {"poses", a.poses}, {"views", ds.views.size()}});
  out << "wrote " << ds.views.size() << " views to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string views;
  int n_points = kDefaultSurfaceSamples;
  std::uint64_t seed = 0;
  bool align = false;
  int align_steps = 72;
  double tau = kDefaultFscoreThreshold;
  std::optional<int> size;
  std::string out;
  int threads = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Mesh world_pred = read_obj(a.pred);
  const Mesh world_gt = read_obj(a.gt);
  Mesh pred = normalize_unit_cube(world_pred);
  const Mesh gt = normalize_unit_cube(world_gt);
  double yaw = 0.0;
  if (a.align) {
    const YawAlignment al = align_yaw(pred, gt, a.align_steps, a.seed);
    pred = al.mesh;
    yaw = al.yaw_deg;
    world_pred = rotate_yaw(world_pred, yaw);
  }
  const PointCloud pc = sample_surface(pred, a.n_points, a.seed);
  const PointCloud gc = sample_surface(gt, a.n_points, a.seed + 1);
  const CloudComparison cmp = compare_clouds(pc, gc, a.tau);
  json report = {{"cd", cmp.chamfer}, {"fscore", cmp.fscore}, {"n_points", a.n_points},
                 {"seed", a.seed},    {"aligned_yaw_deg", yaw}, {"tau", a.tau}};
  report["psnr"] = nullptr;
  report["ssim"] = nullptr;
  if (!a.views.empty()) {
    const PoseSet poses = load_poses(a.views);
    // world-frame renders
    const Dataset rp = render_mesh_views(world_pred, poses, a.size, a.threads);
    const Dataset rg = render_mesh_views(world_gt, poses, a.size, a.threads);
    double p = 0.0, s = 0.0;
    for (std::size_t i = 0; i < rp.views.size(); ++i) {
      p += psnr(rp.views[i], rg.views[i]);
      s += ssim(rp.views[i], rg.views[i]);
    }
    const double n = static_cast<double>(std::max<std::size_t>(rp.views.size(), 1));
    report["psnr"] = p / n;
    report["ssim"] = s / n;
    report["n_views"] = rp.views.size();
  }
  const std::string text = report.dump(2) + "\n";
  if (!a.out.empty()) write_file(a.out, text);
  out << text;
  return 0;
}

struct FilterArgs {
  std::string manifest;
  std::string out;
  std::string rejected;
};

int cmd_filter(const FilterArgs& a, std::ostream& out) {
  const json doc = json::parse(read_file(a.manifest));
  if (!doc.is_array()) throw std::runtime_error("manifest must be a JSON array");
  const auto entries = doc.get<std::vector<ManifestEntry>>();
  const FilterResult r = filter_manifest(entries);
  write_file(a.out, json(r.kept).dump(2) + "\n");
  json rej = json::array();
  for (const auto& x : r.rejected) rej.push_back({{"entry", x.entry}, {"reason", x.reason}});
  fs::path rejected_path = a.rejected;
  if (rejected_path.empty()) rejected_path = fs::path(a.out).replace_extension(".rejected.json");
  write_file(rejected_path, rej.dump(2) + "\n");
  out << "kept " << r.kept.size() << " of " << entries.size() << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sparsemesh: sparse-view triplane fitting and mesh extraction", "sparsemesh"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("sparsemesh ") + kVersion);

  PosesArgs pa;
  auto* poses = app.add_subcommand("poses", "Emit a camera pose set as JSON");
  poses->add_option("--protocol", pa.protocol, "Pose generator")
      ->check(CLI::IsMember({"zero123pp", "orbit", "random"}))
      ->capture_default_str();
  poses->add_option("--query-azimuth", pa.query_azimuth, "Query azimuth in degrees (zero123pp)")->capture_default_str();
  poses->add_option("--n", pa.n, "Number of poses (orbit, random)")->check(CLI::PositiveNumber)->capture_default_str();
  poses->add_option("--seed", pa.seed, "Seed (random)")->capture_default_str();
  poses->add_option("--radius", pa.radius, "Camera distance")->check(CLI::PositiveNumber)->capture_default_str();
  poses->add_option("--fov", pa.fov, "Vertical field of view in degrees")->capture_default_str();
  poses->add_option("--size", pa.size, "Image width and height")->check(CLI::PositiveNumber)->capture_default_str();
  poses->add_option("--augment-seed", pa.augment_seed, "Apply a shared random rotation and scale");
  poses->add_option("--perturb-seed", pa.perturb_seed, "Add per-pose Gaussian noise");
  poses->add_option("--out", pa.out, "Write to a file instead of stdout");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render ground-truth views of an analytic scene");
  synth->add_option("--scene", sa.scene, "Scene spec, e.g. sphere:0.6 or sphere_box")->required();
  synth->add_option("--poses", sa.poses, "Pose JSON (default: zero123pp at azimuth 0)");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--size", sa.size, "Image width and height")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--gt-grid", sa.gt_grid, "Grid for the ground-truth mesh")->check(CLI::Range(2, 1024))->capture_default_str();
  synth->add_option("--threads", sa.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  FitArgs fa;
  FitConfig defaults;
  auto* fit = app.add_subcommand("fit", "Fit a triplane field to a view dataset (stage 1, 2 or both)");
  fit->add_option("--scene", fa.scene, "Dataset directory written by synth")->required();
  fit->add_option("--config", fa.config, "FitConfig JSON");
  fit->add_option("--preset", fa.preset, "Base configuration")
      ->check(CLI::IsMember({"base", "large", "desk"}))
      ->capture_default_str();
  fit->add_option("--out", fa.out, "Checkpoint path")->required();
  fit->add_option("--stage", fa.stage, "Stages to run")->check(CLI::IsMember({"1", "2", "both"}))->capture_default_str();
  fit->add_option("--init", fa.init, "Stage-1 checkpoint (required for --stage 2)");
  fit->add_option("--mesh", fa.mesh, "Mesh output (default: checkpoint with .obj)");
  fit->add_option("--trace", fa.trace, "Loss trace CSV (default: checkpoint with .trace.csv)");
  fit->add_option("--log-every", fa.log_every, "Print progress every N steps (0: quiet)")->capture_default_str();
  for (auto& f : config_fields(defaults)) {
    std::string def;
    std::visit([&](auto* p) { def = json(*p).dump(); }, f.value);
    fit->add_option_function<std::string>(
        "--" + flag_name(f.name), [&fa, name = f.name](const std::string& v) { fa.overrides[name] = v; },
        "Override " + f.name + " (base default " + def + ")");
  }

  ExtractArgs ea;
  auto* extract_cmd = app.add_subcommand("extract", "Extract a mesh from a checkpoint's SDF head");
  extract_cmd->add_option("--ckpt", ea.ckpt, "Checkpoint")->required();
  extract_cmd->add_option("--grid", ea.grid, "Grid vertices per axis")->check(CLI::Range(2, 1024))->capture_default_str();
  extract_cmd->add_option("--out", ea.out, "OBJ output")->required();
  extract_cmd->add_flag("--from-density", ea.from_density, "Re-initialize the SDF head from the density head first");
  extract_cmd->add_option("--tau", ea.tau, "Density level for --from-density")->capture_default_str();

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Rasterize a mesh at a pose set");
  render->add_option("--mesh", ra.mesh, "OBJ mesh")->required();
  render->add_option("--poses", ra.poses, "Pose JSON")->required();
  render->add_option("--out", ra.out, "Output directory")->required();
  render->add_option("--size", ra.size, "Override image width and height")->check(CLI::PositiveNumber);
  render->add_option("--threads", ra.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  EvalArgs va;
  auto* eval = app.add_subcommand("eval", "Compare a predicted mesh with a ground-truth mesh");
  eval->add_option("--pred", va.pred, "Predicted OBJ")->required();
  eval->add_option("--gt", va.gt, "Ground-truth OBJ")->required();
  eval->add_option("--views", va.views, "Pose JSON for image metrics");
  eval->add_option("--n-points", va.n_points, "Surface samples per mesh")->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_option("--seed", va.seed, "Sampling seed")->capture_default_str();
  eval->add_flag("--align", va.align, "Search the best yaw before comparing");
  eval->add_option("--align-steps", va.align_steps, "Yaw candidates")->check(CLI::PositiveNumber)->capture_default_str();
  eval->add_option("--tau", va.tau, "F-score threshold")->capture_default_str();
  eval->add_option("--size", va.size, "Override render size for image metrics")->check(CLI::PositiveNumber);
  eval->add_option("--out", va.out, "Also write the report to this file");
  eval->add_option("--threads", va.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  FilterArgs xa;
  auto* filter = app.add_subcommand("filter", "Apply the asset filtering rules to a manifest");
  filter->add_option("--manifest", xa.manifest, "Manifest JSON array")->required();
  filter->add_option("--out", xa.out, "Kept entries JSON")->required();
  filter->add_option("--rejected", xa.rejected, "Rejected entries JSON (default: next to --out)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*poses) return cmd_poses(pa, out);
    if (*synth) return cmd_synth(sa, out);
    if (*fit) return cmd_fit(fa, out, err);
    if (*extract_cmd) return cmd_extract(ea, out);
    if (*render) return cmd_render(ra, out);
    if (*eval) return cmd_eval(va, out);
    if (*filter) return cmd_filter(xa, out);
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace smesh
