// arbor_slam_cli: simulate -> slam -> eval -> export-map.
//
// Exit codes: 0 success, 2 usage or invalid parameter, 3 malformed input file, 4 runtime failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "arbor_slam/evaluation.hpp"
#include "arbor_slam/slam_pipeline.hpp"

namespace fs = std::filesystem;
using namespace arbor_slam;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitRuntime = 4;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  bool quiet = false;
  std::vector<std::string> overrides;
};

struct EvalSettings {
  double tolerance = 0.05;  // s

  void read(KeyValueConfig& cfg) { cfg.read("eval_tolerance", tolerance); }
  void validate() const { require(tolerance >= 0.0, "eval_tolerance", "must be non-negative"); }
  [[nodiscard]] std::string to_text() const { return "eval_tolerance = " + csv::format(tolerance) + "\n"; }
};

/// Every command accepts the full key set so one file can drive the whole workflow.
struct Settings {
  SimulationConfig sim;
  PipelineConfig slam;
  EvalSettings eval;

  [[nodiscard]] std::string to_text() const { return sim.to_text() + slam.to_text() + eval.to_text(); }
};

class Context {
 public:
  explicit Context(const GlobalOptions& g) : g_(g), start_(std::chrono::steady_clock::now()) {}

  Settings load_settings() {
    KeyValueConfig cfg = g_.config_path.empty() ? KeyValueConfig::parse("", "<defaults>")
                                                : KeyValueConfig::load(g_.config_path);
    for (const auto& kv : g_.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kInvalidParameter, "--set expects key=value, got '" + kv + "'");
      cfg.set(std::string(csv::trim(std::string_view(kv).substr(0, eq))),
              std::string(csv::trim(std::string_view(kv).substr(eq + 1))));
    }
    if (g_.seed) cfg.set("seed", std::to_string(*g_.seed));
    Settings s;
    s.sim.read(cfg);
    s.slam.read(cfg);
    s.eval.read(cfg);
    cfg.check_consumed();
    s.sim.validate();
    s.slam.validate();
    s.eval.validate();
    settings_text_ = s.to_text();
    return s;
  }

  fs::path out_dir() const {
    fs::path dir(g_.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, dir.string() + ": cannot create output directory");
    return dir;
  }

  fs::path output(const std::string& name) {
    fs::path p = out_dir() / name;
    outputs_.push_back(p);
    return p;
  }

  void input(const fs::path& p) { inputs_.push_back(p); }

  void notice(const std::string& msg) const {
    if (!g_.quiet) std::cerr << "arbor_slam_cli: " << msg << "\n";
  }

  [[nodiscard]] bool quiet() const { return g_.quiet; }

  /// Written last, through a temporary file, so a manifest only exists for a completed run.
  void write_manifest(const std::string& command) {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::ordered_json m;
    m["tool"] = "arbor_slam_cli";
    m["version"] = ARBOR_SLAM_VERSION;
    m["command"] = command;
    m["config"] = settings_text_;
    m["inputs"] = nlohmann::ordered_json::array();
    for (const auto& p : inputs_) m["inputs"].push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    m["outputs"] = nlohmann::ordered_json::array();
    for (const auto& p : outputs_) m["outputs"].push_back({{"path", p.filename().string()}, {"sha256", sha256_file(p)}});
    m["duration_s"] = seconds;

    const fs::path final_path = out_dir() / "manifest.json";
    const fs::path tmp = final_path.string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw Error(ErrorCode::kIo, tmp.string() + ": cannot open for writing");
      out << m.dump(2) << "\n";
      if (!out) throw Error(ErrorCode::kIo, tmp.string() + ": write failed");
    }
    fs::rename(tmp, final_path);
  }

  static std::string sha256_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, p.string() + ": cannot open for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int k = 0; k < len; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[k]);
    return hex.str();
  }

 private:
  const GlobalOptions& g_;
  std::chrono::steady_clock::time_point start_;
  std::string settings_text_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::kIo, path + ": no such file");
}

// ---------------------------------------------------------------------------------------------------------------

void cmd_simulate(Context& ctx) {
  const Settings s = ctx.load_settings();
  const Scenario scenario = build_scenario(s.sim);

  const fs::path scans_path = ctx.output("scans.csv");
  std::ofstream scans(scans_path);
  if (!scans) throw Error(ErrorCode::kIo, scans_path.string() + ": cannot open for writing");
  scans << "t,r,theta,phi\n";
  for (const auto& p : scenario.trajectory.poses) {
    append_scan_csv(scans, simulate_scan(scenario.world, p.pose, scenario.sensor, p.t));
  }
  scans.close();
  if (!scans) throw Error(ErrorCode::kIo, scans_path.string() + ": write failed");

  write_controls_csv(scenario.trajectory.controls, ctx.output("controls.csv").string());
  write_poses_csv(scenario.trajectory.poses, ctx.output("ground_truth.csv").string());
  write_world_csv(scenario.world, ctx.output("world.csv").string());
  ctx.write_manifest("simulate");
  ctx.notice("simulate: " + std::to_string(scenario.trajectory.poses.size()) + " scans, " +
             std::to_string(scenario.world.obstacles.size()) + " obstacles -> " + ctx.out_dir().string());
}

struct SlamArgs {
  std::string scans;
  std::string controls;
};

void cmd_slam(Context& ctx, const SlamArgs& a) {
  const Settings s = ctx.load_settings();
  require_file(a.scans);
  ctx.input(a.scans);
  std::optional<std::string> controls;
  if (a.controls.empty()) {
    ctx.notice("notice: no controls file given; predicting with constant-velocity pseudo-controls");
  } else if (!fs::is_regular_file(a.controls)) {
    ctx.notice("notice: controls file '" + a.controls + "' not found; predicting with constant-velocity pseudo-controls");
  } else if (s.slam.control_source == ControlSource::kConstantVelocity) {
    ctx.notice("notice: control_source = constant_velocity; ignoring '" + a.controls + "'");
  } else {
    controls = a.controls;
    ctx.input(a.controls);
  }

  const RunResult result = run(a.scans, controls, s.slam);
  write_trajectory_csv(result.trajectory, ctx.output("trajectory.csv").string());
  const fs::path map_path = ctx.output("map.pgm");
  write_pgm(result.map, map_path.string());
  ctx.output("map.pgm.txt");
  ctx.write_manifest("slam");

  std::size_t fallbacks = 0;
  for (const auto& r : result.trajectory) fallbacks += r.fallback ? 1 : 0;
  if (result.skipped_scans > 0) {
    ctx.notice("notice: skipped " + std::to_string(result.skipped_scans) + " unusable scans before initialization");
  }
  ctx.notice("slam: " + std::to_string(result.trajectory.size()) + " frames, " + std::to_string(fallbacks) +
             " fallbacks, map " + std::to_string(result.map.meta().width) + "x" +
             std::to_string(result.map.meta().height) + " cells -> " + ctx.out_dir().string());
}

struct EvalArgs {
  std::vector<std::string> est;
  std::vector<std::string> gt;
  std::string map;
  std::string world;
  std::string ref_map;
};

OccupancyGrid reference_from_world(const WorldModel& world, double resolution) {
  GridMeta meta;
  meta.resolution = resolution;
  meta.origin = world.extent.min;
  const Eigen::Vector2d size = world.extent.max - world.extent.min;
  meta.width = std::max(1, static_cast<int>(std::ceil(size.x() / resolution - 1e-9)));
  meta.height = std::max(1, static_cast<int>(std::ceil(size.y() / resolution - 1e-9)));
  return rasterize_world(world, meta);
}

void cmd_eval(Context& ctx, const EvalArgs& a) {
  const Settings s = ctx.load_settings();
  if (a.gt.size() != 1 && a.gt.size() != a.est.size()) {
    throw Error(ErrorCode::kInvalidParameter, "--gt: give one ground truth or one per --est");
  }
  if (!a.map.empty() && a.world.empty() && a.ref_map.empty()) {
    throw Error(ErrorCode::kInvalidParameter, "--map: needs --world or --ref-map as the reference");
  }

  using Row = std::vector<std::pair<std::string, double>>;
  std::vector<Row> runs;
  for (std::size_t r = 0; r < a.est.size(); ++r) {
    const std::string& gt_path = a.gt.size() == 1 ? a.gt[0] : a.gt[r];
    require_file(a.est[r]);
    require_file(gt_path);
    ctx.input(a.est[r]);
    if (r == 0 || a.gt.size() > 1) ctx.input(gt_path);
    const auto est = read_trajectory_csv(a.est[r]);
    const auto gt = read_trajectory_csv(gt_path);
    const auto aligned = associate(est, gt, s.eval.tolerance);
    if (aligned.unpaired > 0) {
      ctx.notice("notice: " + a.est[r] + ": " + std::to_string(aligned.unpaired) + " of " +
                 std::to_string(est.size()) + " poses had no ground truth within " +
                 csv::format(s.eval.tolerance) + " s");
    }
    const double len = path_length(gt);
    Row row = pose_metrics(aligned, len > 0.0 ? len : 1.0).fields();
    row.emplace_back("pairs", static_cast<double>(aligned.pairs.size()));
    runs.push_back(std::move(row));
  }

  if (!a.map.empty()) {
    require_file(a.map);
    ctx.input(a.map);
    const OccupancyGrid est_map = read_pgm(a.map);
    OccupancyGrid ref;
    if (!a.ref_map.empty()) {
      require_file(a.ref_map);
      ctx.input(a.ref_map);
      ref = read_pgm(a.ref_map);
    } else {
      require_file(a.world);
      ctx.input(a.world);
      ref = reference_from_world(read_world_csv(a.world), est_map.meta().resolution);
    }
    const auto mm = map_metrics(est_map, ref).fields();
    for (auto& row : runs) row.insert(row.end(), mm.begin(), mm.end());
  }

  Row out;
  if (runs.size() == 1) {
    out = runs[0];
  } else {
    const double n = static_cast<double>(runs.size());
    out.emplace_back("runs", n);
    for (std::size_t k = 0; k < runs[0].size(); ++k) {
      double mean = 0.0;
      for (const auto& row : runs) mean += row[k].second / n;
      double var = 0.0;
      for (const auto& row : runs) var += (row[k].second - mean) * (row[k].second - mean) / (n - 1.0);
      out.emplace_back(runs[0][k].first + ".mean_over_runs", mean);
      out.emplace_back(runs[0][k].first + ".std_over_runs", std::sqrt(var));
    }
  }

  const fs::path metrics_path = ctx.output("metrics.csv");
  {
    std::ofstream f(metrics_path);
    if (!f) throw Error(ErrorCode::kIo, metrics_path.string() + ": cannot open for writing");
    f << "name,value\n";
    for (const auto& [name, value] : out) f << name << ',' << csv::format(value) << '\n';
  }
  ctx.write_manifest("eval");

  if (!ctx.quiet()) {
    std::size_t w = 0;
    for (const auto& [name, value] : out) w = std::max(w, name.size());
    for (const auto& [name, value] : out) {
      std::cout << std::left << std::setw(static_cast<int>(w) + 2) << name << csv::format_fixed(value, 6) << "\n";
    }
  }
}

struct ExportArgs {
  std::string map;
  std::string world;
};

/// Occupied cells of a map as points, and optionally the world's reference raster on the same resolution.
void cmd_export_map(Context& ctx, const ExportArgs& a) {
  ctx.load_settings();
  require_file(a.map);
  ctx.input(a.map);
  const OccupancyGrid map = read_pgm(a.map);
  const fs::path cells_path = ctx.output("occupied_cells.csv");
  {
    std::ofstream f(cells_path);
    if (!f) throw Error(ErrorCode::kIo, cells_path.string() + ": cannot open for writing");
    f << "x,y\n";
    for (const auto& p : occupied_cells(map).points) f << csv::format(p.x()) << ',' << csv::format(p.y()) << '\n';
  }
  if (!a.world.empty()) {
    require_file(a.world);
    ctx.input(a.world);
    const OccupancyGrid ref = reference_from_world(read_world_csv(a.world), map.meta().resolution);
    write_pgm(ref, ctx.output("reference.pgm").string());
    ctx.output("reference.pgm.txt");
  }
  ctx.write_manifest("export-map");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scan-matching SLAM for tree rows: simulate, map, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(ARBOR_SLAM_VERSION));

  GlobalOptions g;
  app.add_option("--config", g.config_path, "key = value settings file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "random seed (overrides the config)");
  app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "suppress notices and tables");
  app.add_option("--set", g.overrides, "override one setting, key=value (repeatable)");

  auto* sim = app.add_subcommand("simulate", "generate a world, a loop trajectory and lidar scans");

  SlamArgs slam_args;
  auto* slam = app.add_subcommand("slam", "run the online SLAM loop on a scan log");
  slam->add_option("--scans", slam_args.scans, "t,r,theta,phi scan log")->required();
  slam->add_option("--controls", slam_args.controls, "t,v,omega control log");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "pose and map metrics against ground truth");
  eval->add_option("--est", eval_args.est, "estimated trajectory (repeat for several runs)")->required();
  eval->add_option("--gt", eval_args.gt, "ground-truth trajectory (one, or one per --est)")->required();
  eval->add_option("--map", eval_args.map, "estimated map (PGM with sidecar)");
  eval->add_option("--world", eval_args.world, "world CSV used to rasterize the reference map");
  eval->add_option("--ref-map", eval_args.ref_map, "reference map (PGM with sidecar)");

  ExportArgs export_args;
  auto* exp = app.add_subcommand("export-map", "export occupied cells and the world reference raster");
  exp->add_option("--map", export_args.map, "map (PGM with sidecar)")->required();
  exp->add_option("--world", export_args.world, "world CSV to rasterize alongside");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    Context ctx(g);
    if (sim->parsed()) cmd_simulate(ctx);
    if (slam->parsed()) cmd_slam(ctx, slam_args);
    if (eval->parsed()) cmd_eval(ctx, eval_args);
    if (exp->parsed()) cmd_export_map(ctx, export_args);
  } catch (const ParseError& e) {
    std::cerr << "arbor_slam_cli: parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const Error& e) {
    std::cerr << "arbor_slam_cli: error: " << e.what() << "\n";
    return e.code() == ErrorCode::kInvalidParameter ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "arbor_slam_cli: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
