#include "lidpm/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "lidpm/cloud.hpp"
#include "lidpm/dataio.hpp"
#include "lidpm/denoiser.hpp"
#include "lidpm/errors.hpp"
#include "lidpm/metrics.hpp"
#include "lidpm/sampler_global.hpp"
#include "lidpm/sampler_local.hpp"
#include "lidpm/schedule.hpp"
#include "lidpm/synthetic.hpp"
#include "lidpm/toy_denoiser.hpp"

namespace lidpm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string git_blob_sha1(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), blob.data(), blob.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

namespace {

struct SamplingOptions {
  int t0 = 300;
  double gamma = 6.0;
  std::size_t k_dup = 10;
  int steps = 20;
  bool ancestral = false;
  bool first_order = false;
  std::string sampler = "global";
  std::uint64_t seed = 0;
  std::string denoiser = "toy";
  std::string model;
  std::vector<double> oracle_mean{0.0, 0.0, 0.0};
  double oracle_var = 1.0;
};

struct PrepOptions {
  double crop_range = 50.0;
  std::size_t budget_sparse = 18000;
  std::size_t budget_dense = 180000;
  std::size_t disc_points = 1000;
  double disc_radius = 3.5;
};

struct SourceOptions {
  std::string input;
  std::string scans_dir;
  std::string poses_file;
  std::string calib_file;
  std::string labels_dir;
  std::size_t scan_index = 0;
  std::size_t window = 5;
  std::uint64_t scene_seed = 0;
};

struct MetricFlags {
  std::vector<double> voxel_res{0.5, 0.2, 0.1};
  double jsd_res = 0.5;
  double extent = 50.0;
};

void add_config(CLI::App* app) {
  app->set_config("--config", "", "key = value file mirroring flag names");
}

// CLI11 only reads config files attached to the root app, so subcommand files
// are applied here. Options already given on the command line win.
void apply_config(CLI::App* sub) {
  const CLI::Option* cfg = sub->get_config_ptr();
  if (cfg == nullptr || cfg->count() == 0) return;
  const std::string path = cfg->as<std::string>();
  if (!fs::exists(path)) throw CLI::FileError::Missing(path);
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
    if (!item.parents.empty() && item.parents != std::vector<std::string>{sub->get_name()}) continue;
    if (item.name == "++" || item.name == "--") continue;
    CLI::Option* op = sub->get_option_no_throw("--" + item.name);
    if (op == nullptr || op == cfg) throw CLI::ConfigError::Extras(item.fullname());
    if (op->count() > 0) continue;
    op->add_result(item.inputs);
    op->run_callback();
  }
}

void add_sampling_flags(CLI::App* app, SamplingOptions& o) {
  app->add_option("--t0", o.t0, "start step")->capture_default_str();
  app->add_option("--gamma", o.gamma, "guidance weight")->capture_default_str();
  app->add_option("--k-dup", o.k_dup, "duplication factor")->capture_default_str();
  app->add_option("--steps", o.steps, "fast solver steps")->capture_default_str();
  app->add_flag("--ancestral", o.ancestral, "use the stochastic step-by-step sampler");
  app->add_flag("--first-order", o.first_order, "first-order fast solver");
  app->add_option("--sampler", o.sampler, "diffusion formulation")
      ->check(CLI::IsMember({"global", "local"}))
      ->capture_default_str();
  app->add_option("--seed", o.seed, "random seed")->capture_default_str();
  app->add_option("--denoiser", o.denoiser, "noise predictor")
      ->check(CLI::IsMember({"toy", "oracle"}))
      ->capture_default_str();
  app->add_option("--model", o.model, "trained toy model (parameters file)");
  app->add_option("--oracle-mean", o.oracle_mean, "oracle target mean")->expected(3)->delimiter(',');
  app->add_option("--oracle-var", o.oracle_var, "oracle target variance")->capture_default_str();
}

void add_prep_flags(CLI::App* app, PrepOptions& o) {
  app->add_option("--crop-range", o.crop_range, "crop radius (m)")->capture_default_str();
  app->add_option("--budget-sparse", o.budget_sparse, "sparse scan points")->capture_default_str();
  app->add_option("--budget-dense", o.budget_dense, "dense ground truth points")->capture_default_str();
  app->add_option("--disc-points", o.disc_points, "ground disc points")->capture_default_str();
  app->add_option("--disc-radius", o.disc_radius, "ground disc radius (m)")->capture_default_str();
}

void add_source_flags(CLI::App* app, SourceOptions& o) {
  app->add_option("--input", o.input, "input scan (.bin or .ply)");
  app->add_option("--scans-dir", o.scans_dir, "directory of .bin scans");
  app->add_option("--poses-file", o.poses_file, "poses, 12 numbers per line");
  app->add_option("--calib-file", o.calib_file, "calibration file with a Tr entry");
  app->add_option("--labels-dir", o.labels_dir, "directory of .label files");
  app->add_option("--scan-index", o.scan_index, "center scan index")->capture_default_str();
  app->add_option("--window", o.window, "scans aggregated on each side")->capture_default_str();
  app->add_option("--scene-seed", o.scene_seed, "synthetic scene seed")->capture_default_str();
}

void add_metric_flags(CLI::App* app, MetricFlags& o) {
  app->add_option("--voxel-res", o.voxel_res, "IoU voxel sizes (m)")->delimiter(',');
  app->add_option("--jsd-res", o.jsd_res, "JSD histogram cell (m)")->capture_default_str();
  app->add_option("--extent", o.extent, "metric extent (m)")->capture_default_str();
}

json to_json(const SamplingOptions& o, int effective_t0, double effective_gamma) {
  json j;
  j["t0"] = effective_t0;
  j["gamma"] = effective_gamma;
  j["k_dup"] = o.k_dup;
  j["steps"] = o.ancestral ? effective_t0 : o.steps;
  j["solver"] = o.ancestral ? "ancestral" : (o.first_order ? "first-order" : "second-order");
  j["sampler"] = o.sampler;
  j["seed"] = o.seed;
  j["denoiser"] = o.denoiser;
  if (!o.model.empty()) j["model"] = o.model;
  if (o.denoiser == "oracle") {
    j["oracle_mean"] = o.oracle_mean;
    j["oracle_var"] = o.oracle_var;
  }
  return j;
}

json to_json(const PrepOptions& o) {
  return json{{"crop_range", o.crop_range},   {"budget_sparse", o.budget_sparse},
              {"budget_dense", o.budget_dense}, {"disc_points", o.disc_points},
              {"disc_radius", o.disc_radius}};
}

json to_json(const MetricFlags& o) {
  return json{{"voxel_res", o.voxel_res}, {"jsd_res", o.jsd_res}, {"extent", o.extent}};
}

void write_manifest(const fs::path& output, const std::string& command, const json& config,
                    const json& inputs, const json& outputs) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["param_hash"] = git_blob_sha1(config.dump());
  const fs::path path = output.string() + ".manifest.json";
  std::ofstream f(path);
  if (!f) throw DataError("cannot write manifest " + path.string());
  f << m.dump(2) << '\n';
  if (!f) throw DataError("cannot write manifest " + path.string());
}

std::unique_ptr<Denoiser> make_denoiser(const SamplingOptions& o, const NoiseSchedule& sched) {
  if (o.denoiser == "oracle") {
    if (o.oracle_mean.size() != 3) throw std::invalid_argument("--oracle-mean needs 3 values");
    return std::make_unique<GaussianOracleDenoiser>(
        Vec3(o.oracle_mean[0], o.oracle_mean[1], o.oracle_mean[2]), o.oracle_var, sched);
  }
  if (!o.model.empty()) return std::make_unique<ToyDenoiser>(ToyDenoiser::load(o.model));
  ToyDenoiserConfig cfg;
  cfg.coord_scale = 20.0;
  return std::make_unique<ToyDenoiser>(cfg, sched, o.seed);
}

LidarPattern cli_pattern() { return LidarPattern{}; }

constexpr double kScanSpacing = 2.0;

// Center scan of the configured source; synthetic street scene when no input is given.
PointCloud load_scan(const SourceOptions& s, json& inputs) {
  if (!s.input.empty()) {
    inputs["scan"] = s.input;
    return read_cloud(s.input);
  }
  if (!s.scans_dir.empty()) {
    SequencePaths paths{s.scans_dir, std::nullopt, std::nullopt, std::nullopt};
    if (!s.labels_dir.empty()) paths.labels_dir = s.labels_dir;
    auto [scans, center] = load_window(paths, s.scan_index, 0);
    inputs["scans_dir"] = s.scans_dir;
    inputs["scan_index"] = s.scan_index;
    return std::move(scans[center].cloud);
  }
  inputs["synthetic_scene_seed"] = s.scene_seed;
  const StreetScene scene = street_scene(s.scene_seed);
  return virtual_scan(scene, Vec3::Zero(), cli_pattern(), s.scene_seed).cloud;
}

// Scans around the center with poses, for ground-truth aggregation.
std::pair<std::vector<ScanRecord>, std::size_t> load_sequence(const SourceOptions& s, json& inputs) {
  if (!s.scans_dir.empty()) {
    SequencePaths paths{s.scans_dir, std::nullopt, std::nullopt, std::nullopt};
    if (!s.poses_file.empty()) paths.poses_file = s.poses_file;
    if (!s.calib_file.empty()) paths.calib_file = s.calib_file;
    if (!s.labels_dir.empty()) paths.labels_dir = s.labels_dir;
    inputs["scans_dir"] = s.scans_dir;
    inputs["scan_index"] = s.scan_index;
    if (!s.poses_file.empty()) inputs["poses_file"] = s.poses_file;
    if (!s.calib_file.empty()) inputs["calib_file"] = s.calib_file;
    return load_window(paths, s.scan_index, s.window);
  }
  inputs["synthetic_scene_seed"] = s.scene_seed;
  const StreetScene scene = street_scene(s.scene_seed);
  return {synthetic_sequence(scene, 2 * s.window + 1, kScanSpacing, cli_pattern(), s.scene_seed),
          s.window};
}

// Crop, ground disc, then farthest-point subsampling to the sparse budget.
PointCloud preprocess(const PointCloud& scan, const PrepOptions& p, std::uint64_t seed) {
  PointCloud pc = range_crop(scan, p.crop_range);
  if (p.disc_points > 0) {
    pc = disc_augment(pc, p.disc_points, p.disc_radius, estimate_ground_height(pc), seed);
  }
  if (pc.empty()) throw DataError("scan is empty after cropping");
  return farthest_point_sample(pc, std::min(p.budget_sparse, pc.size()), seed);
}

SamplerConfig sampler_config(const SamplingOptions& o) {
  SamplerConfig cfg;
  cfg.t0 = o.t0;
  cfg.gamma = o.gamma;
  cfg.k_dup = o.k_dup;
  cfg.steps_fast = o.steps;
  cfg.order = o.first_order ? SolverOrder::First : SolverOrder::Second;
  cfg.seed = o.seed;
  return cfg;
}

PointCloud run_sampler(const Denoiser& d, const PointCloud& p_s, const SamplerConfig& cfg,
                       const SamplingOptions& o, const NoiseSchedule& sched) {
  cfg.validate(sched);
  if (o.sampler == "local") return sample_local(d, p_s, cfg, sched);
  return o.ancestral ? sample(d, p_s, cfg, sched) : fast_solve(d, p_s, cfg, sched);
}

PointCloud float_rounded(PointCloud pc) {
  for (auto& p : pc.points) p = p.cast<float>().cast<double>();
  return pc;
}

// Largest relative deviation of the sample covariance eigenvalues from the target variance.
double covariance_error(const Points& pts, double variance) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
  cov /= static_cast<double>(pts.size() - 1);
  const Vec3 ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvalues();
  return (ev.array() / variance - 1.0).abs().maxCoeff();
}

// --- complete ----------------------------------------------------------------

struct CompleteArgs {
  SamplingOptions sampling;
  PrepOptions prep;
  SourceOptions source;
  std::string output;
};

int cmd_complete(const CompleteArgs& a, std::ostream& out) {
  const NoiseSchedule sched = default_schedule();
  json inputs;
  const PointCloud scan = load_scan(a.source, inputs);
  const PointCloud p_s = preprocess(scan, a.prep, a.sampling.seed);
  const auto denoiser = make_denoiser(a.sampling, sched);
  const SamplerConfig cfg = sampler_config(a.sampling);
  const PointCloud result = run_sampler(*denoiser, p_s, cfg, a.sampling, sched);
  write_cloud(result, a.output);

  const int t0 = a.sampling.sampler == "local" ? sched.steps() : a.sampling.t0;
  json config;
  config["sampling"] = to_json(a.sampling, t0, a.sampling.gamma);
  config["preprocess"] = to_json(a.prep);
  write_manifest(a.output, "complete", config, inputs,
                 json{{"cloud", a.output}, {"points", result.size()}, {"sparse_points", p_s.size()}});
  out << "wrote " << result.size() << " points to " << a.output << '\n';
  return kOk;
}

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  SamplingOptions sampling;
  std::string template_name;
  std::string template_file;
  std::size_t points = 180000;
  std::string output;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const NoiseSchedule sched = default_schedule();
  json inputs;
  PointCloud shape;
  if (a.template_name == "file") {
    if (a.template_file.empty()) throw std::invalid_argument("--template file needs --template-file");
    const PointCloud src = read_cloud(a.template_file);
    if (src.empty()) throw DataError(a.template_file + " holds no points");
    PointCloud dup = duplicate_k(src, (a.points + src.size() - 1) / src.size());
    shape = uniform_sample(dup, a.points, a.sampling.seed);
    inputs["template_file"] = a.template_file;
  } else {
    shape = template_cloud(template_from_string(a.template_name), a.points, a.sampling.seed);
  }
  shape.intensity.reset();
  inputs["template"] = a.template_name;

  SamplingOptions eff = a.sampling;
  eff.gamma = 0.0;
  eff.k_dup = 1;
  const auto denoiser = make_denoiser(eff, sched);
  const SamplerConfig cfg = sampler_config(eff);
  const PointCloud result = run_sampler(*denoiser, shape, cfg, eff, sched);
  write_cloud(result, a.output);

  const int t0 = eff.sampler == "local" ? sched.steps() : eff.t0;
  json config;
  config["sampling"] = to_json(eff, t0, 0.0);
  config["template_points"] = a.points;
  write_manifest(a.output, "generate", config, inputs,
                 json{{"cloud", a.output}, {"points", result.size()}});
  out << "wrote " << result.size() << " points to " << a.output << '\n';
  return kOk;
}

// --- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string scan_id;
  std::string csv;
  MetricFlags metrics;
  std::string output;
};

MetricOptions metric_options(const MetricFlags& m) {
  MetricOptions o;
  o.jsd_resolution = m.jsd_res;
  o.extent = m.extent;
  o.iou_resolutions = m.voxel_res;
  return o;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const PointCloud pred = read_cloud(a.pred);
  const PointCloud gt = read_cloud(a.gt);
  if (pred.empty() || gt.empty()) throw std::invalid_argument("eval needs non-empty clouds");
  const MetricReport r = evaluate(pred, gt, metric_options(a.metrics), a.scan_id);
  {
    std::ofstream f(a.output);
    if (!f) throw DataError("cannot write " + a.output);
    f << r.to_json() << '\n';
  }
  json outputs{{"report", a.output}};
  if (!a.csv.empty()) {
    std::ofstream f(a.csv);
    if (!f) throw DataError("cannot write " + a.csv);
    f << csv_header() << '\n' << r.to_csv_row() << '\n';
    outputs["csv"] = a.csv;
  }
  write_manifest(a.output, "eval", json{{"metrics", to_json(a.metrics)}},
                 json{{"pred", a.pred}, {"gt", a.gt}}, outputs);
  out << r.to_json() << '\n';
  return kOk;
}

// --- ablate ------------------------------------------------------------------

struct AblateArgs {
  SamplingOptions sampling;
  PrepOptions prep;
  SourceOptions source;
  MetricFlags metrics;
  std::vector<int> t0_list{1000, 500, 300, 100, 50};
  std::vector<int> steps_list{50, 20, 10, 5};
  std::string gt;
  std::string output_dir;
  bool save_clouds = false;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const NoiseSchedule sched = default_schedule();
  json inputs;
  PointCloud scan;
  PointCloud gt;
  if (!a.gt.empty()) {
    scan = load_scan(a.source, inputs);
    gt = read_cloud(a.gt);
    inputs["gt"] = a.gt;
  } else {
    auto [scans, center] = load_sequence(a.source, inputs);
    scan = scans[center].cloud;
    const PointCloud dense = aggregate(scans, center, a.prep.crop_range);
    gt = float_rounded(uniform_sample(dense, std::min(a.prep.budget_dense, dense.size()), a.sampling.seed + 1));
  }
  if (gt.empty()) throw DataError("ground truth is empty");
  const PointCloud p_s = preprocess(scan, a.prep, a.sampling.seed);
  const auto denoiser = make_denoiser(a.sampling, sched);
  const MetricOptions mopts = metric_options(a.metrics);
  const bool oracle = a.sampling.denoiser == "oracle";

  fs::create_directories(a.output_dir);
  const fs::path dir(a.output_dir);
  std::ofstream csv(dir / "ablation.csv");
  std::ofstream jsonl(dir / "reports.jsonl");
  if (!csv || !jsonl) throw DataError("cannot write into " + a.output_dir);
  std::string header = csv_header();
  header = "t0,steps," + header.substr(header.find(',') + 1);
  if (oracle) header += ",cov_err";
  csv << header << '\n';

  const std::vector<int> steps_list = a.sampling.ancestral ? std::vector<int>{0} : a.steps_list;
  json cells = json::array();
  for (int t0 : a.t0_list) {
    for (int steps : steps_list) {
      SamplingOptions o = a.sampling;
      o.t0 = t0;
      if (steps > 0) o.steps = steps;
      const PointCloud result = float_rounded(run_sampler(*denoiser, p_s, sampler_config(o), o, sched));
      const std::string id = "t0_" + std::to_string(t0) + "_steps_" + std::to_string(o.ancestral ? t0 : o.steps);
      if (a.save_clouds) write_cloud(result, dir / (id + ".ply"));
      const MetricReport r = evaluate(result, gt, mopts, id);
      jsonl << r.to_json() << '\n';
      std::string row = r.to_csv_row();
      row = std::to_string(t0) + ',' + std::to_string(o.ancestral ? t0 : o.steps) + row.substr(row.find(','));
      if (oracle) {
        std::ostringstream os;
        os << std::setprecision(10) << covariance_error(result.points, o.oracle_var);
        row += ',' + os.str();
      }
      csv << row << '\n';
      cells.push_back(id);
      out << row << '\n';
    }
  }
  json config;
  config["sampling"] = to_json(a.sampling, a.sampling.t0, a.sampling.gamma);
  config["preprocess"] = to_json(a.prep);
  config["metrics"] = to_json(a.metrics);
  config["t0_list"] = a.t0_list;
  config["steps_list"] = steps_list;
  write_manifest(dir / "ablation", "ablate", config, inputs,
                 json{{"csv", (dir / "ablation.csv").string()},
                      {"reports", (dir / "reports.jsonl").string()},
                      {"cells", cells}});
  return kOk;
}

// --- train-toy ---------------------------------------------------------------

struct TrainArgs {
  std::string scene = "two-cluster";
  std::string sampler = "global";
  double lambda = 5.0;
  int iterations = 2000;
  std::size_t batch_size = 4;
  std::size_t points = 512;
  std::size_t items = 16;
  double lr = 0.01;
  std::string optimizer = "sgd";
  double cond_prob = 0.1;
  std::vector<int> hidden{64, 64};
  std::string norm = "per-instance";
  double coord_scale = 0.0;
  std::uint64_t seed = 0;
  int log_every = 100;
  std::string log;
  std::string output;
};

struct TrainData {
  std::vector<Points> x0;
  std::vector<Points> cond;
  std::vector<TrainItem> items;
};

TrainData make_train_data(const TrainArgs& a) {
  TrainData d;
  for (std::size_t i = 0; i < a.items; ++i) {
    const std::uint64_t s = a.seed + 1000 + i;
    if (a.scene == "two-cluster") {
      TwoClusterScene sc = two_cluster_scene(a.points, std::max<std::size_t>(a.points / 4, 1), s);
      d.x0.push_back(std::move(sc.dense));
      d.cond.push_back(std::move(sc.sparse));
    } else {
      const StreetScene scene = street_scene(s);
      LidarPattern pattern;
      pattern.beams = 32;
      pattern.azimuth_steps = 512;
      const auto scans = synthetic_sequence(scene, 5, kScanSpacing, pattern, s);
      PairConfig pc;
      pc.budget_dense = a.points;
      pc.budget_sparse = std::max<std::size_t>(a.points / 10, 1);
      pc.seed = s;
      ScanPair pair = make_pair(scans, 2, pc);
      d.x0.push_back(std::move(pair.dense.points));
      d.cond.push_back(std::move(pair.sparse.points));
    }
  }
  for (std::size_t i = 0; i < d.x0.size(); ++i) {
    d.items.push_back(TrainItem{d.x0[i], std::span<const Vec3>(d.cond[i])});
  }
  return d;
}

int cmd_train_toy(const TrainArgs& a, std::ostream& out) {
  if (a.iterations < 1 || a.batch_size < 1 || a.points < 1 || a.items < 1) {
    throw std::invalid_argument("iterations, batch size, points and items must be positive");
  }
  if (a.log_every < 1) throw std::invalid_argument("--log-every must be >= 1");
  if (!(a.lambda >= 0.0)) throw std::invalid_argument("--lambda must be >= 0");
  const NoiseSchedule sched = default_schedule();
  ToyDenoiserConfig cfg;
  cfg.hidden = a.hidden;
  cfg.norm_mode = norm_mode_from_string(a.norm);
  cfg.coord_scale = a.coord_scale > 0.0 ? a.coord_scale : (a.scene == "street" ? 20.0 : 1.0);
  ToyDenoiser model(cfg, sched, a.seed);

  TrainOptions opts;
  opts.learning_rate = a.lr;
  opts.optimizer = a.optimizer == "sgd" ? Optimizer::Sgd : Optimizer::Adam;
  opts.condition_probability = a.cond_prob;
  opts.objective = a.sampler == "local" ? Objective::Local : Objective::Global;
  opts.reg_weight = a.sampler == "local" ? a.lambda : 0.0;

  const TrainData data = make_train_data(a);
  const std::size_t probe_n = std::min<std::size_t>(data.items.size(), 8);
  const PreparedBatch probe = prepare_batch(std::span(data.items).first(probe_n), sched, a.seed + 77, opts);

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw DataError("cannot write " + a.log);
    log << "iteration,loss,denoise,reg,noise_mean,noise_std\n";
  }
  auto report = [&](int it) {
    const LossReport l = evaluate_loss(model, probe, opts.reg_weight);
    const auto queries = probe.queries();
    const NoiseStats ns = noise_stats(model, queries);
    std::ostringstream row;
    row << it << ',' << l.loss << ',' << l.denoise << ',' << l.reg << ',' << ns.mean << ',' << ns.std;
    out << row.str() << '\n';
    if (log) log << row.str() << '\n';
  };

  json config{{"scene", a.scene},           {"sampler", a.sampler},
              {"lambda", opts.reg_weight},   {"iterations", a.iterations},
              {"batch_size", a.batch_size},  {"points", a.points},
              {"items", a.items},            {"lr", a.lr},
              {"optimizer", a.optimizer},    {"cond_prob", a.cond_prob},
              {"hidden", a.hidden},          {"norm", a.norm},
              {"coord_scale", cfg.coord_scale}, {"seed", a.seed}};
  auto finish = [&](int completed) {
    model.snap_to_float32();
    model.save(a.output);
    json outputs{{"model", a.output}, {"metadata", a.output + ".json"}, {"iterations_completed", completed}};
    if (!a.log.empty()) outputs["log"] = a.log;
    write_manifest(a.output, "train-toy", config, json{{"scene", a.scene}}, outputs);
  };

  Rng rng(a.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.items.size() - 1);
  std::vector<TrainItem> batch(a.batch_size);
  report(0);
  for (int it = 1; it <= a.iterations; ++it) {
    for (auto& b : batch) b = data.items[pick(rng)];
    try {
      model.train_step(batch, rng(), opts);
    } catch (const NumericalError&) {
      finish(it - 1);
      throw;
    }
    if (it % a.log_every == 0 || it == a.iterations) report(it);
  }
  finish(a.iterations);
  out << "saved model to " << a.output << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lidar scene completion with point-cloud diffusion"};
  app.require_subcommand(1);

  CompleteArgs complete;
  auto* c = app.add_subcommand("complete", "complete a sparse scan");
  add_config(c);
  add_sampling_flags(c, complete.sampling);
  add_prep_flags(c, complete.prep);
  add_source_flags(c, complete.source);
  c->add_option("--output,-o", complete.output, "output cloud (.ply or .bin)")->required();

  GenerateArgs generate;
  auto* g = app.add_subcommand("generate", "unconditional generation from a shape template");
  add_config(g);
  add_sampling_flags(g, generate.sampling);
  g->add_option("--template", generate.template_name, "straight, crossing, turn or file")->required();
  g->add_option("--template-file", generate.template_file, "cloud used by --template file");
  g->add_option("--template-points", generate.points, "template size")->capture_default_str();
  g->add_option("--output,-o", generate.output, "output cloud (.ply or .bin)")->required();

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "compare a completed cloud with ground truth");
  add_config(e);
  e->add_option("--pred", eval.pred, "predicted cloud")->required();
  e->add_option("--gt", eval.gt, "ground-truth cloud")->required();
  e->add_option("--scan-id", eval.scan_id, "identifier stored in the report");
  e->add_option("--csv", eval.csv, "also write a CSV table");
  add_metric_flags(e, eval.metrics);
  e->add_option("--output,-o", eval.output, "JSON report path")->required();

  AblateArgs ablate;
  auto* ab = app.add_subcommand("ablate", "sweep start step and solver steps");
  add_config(ab);
  add_sampling_flags(ab, ablate.sampling);
  add_prep_flags(ab, ablate.prep);
  add_source_flags(ab, ablate.source);
  add_metric_flags(ab, ablate.metrics);
  ab->add_option("--t0-list", ablate.t0_list, "start steps")->delimiter(',');
  ab->add_option("--steps-list", ablate.steps_list, "solver step counts")->delimiter(',');
  ab->add_option("--gt", ablate.gt, "ground-truth cloud (default: aggregated sequence)");
  ab->add_flag("--save-clouds", ablate.save_clouds, "write every completed cloud");
  ab->add_option("--output-dir,-o", ablate.output_dir, "directory for tables and reports")->required();

  TrainArgs train;
  auto* tr = app.add_subcommand("train-toy", "train the small pointwise denoiser");
  add_config(tr);
  tr->add_option("--scene", train.scene, "training scene")
      ->check(CLI::IsMember({"two-cluster", "street"}))
      ->capture_default_str();
  tr->add_option("--sampler", train.sampler, "diffusion formulation")
      ->check(CLI::IsMember({"global", "local"}))
      ->capture_default_str();
  tr->add_option("--lambda", train.lambda, "regulariser weight (local only)")->capture_default_str();
  tr->add_option("--iterations", train.iterations, "optimisation steps")->capture_default_str();
  tr->add_option("--batch-size", train.batch_size, "items per step")->capture_default_str();
  tr->add_option("--points", train.points, "points per training cloud")->capture_default_str();
  tr->add_option("--items", train.items, "distinct training clouds")->capture_default_str();
  tr->add_option("--lr", train.lr, "learning rate")->capture_default_str();
  tr->add_option("--optimizer", train.optimizer, "sgd or adam")
      ->check(CLI::IsMember({"sgd", "adam"}))
      ->capture_default_str();
  tr->add_option("--cond-prob", train.cond_prob, "probability of keeping the condition")
      ->capture_default_str();
  tr->add_option("--hidden", train.hidden, "hidden layer widths")->delimiter(',');
  tr->add_option("--norm", train.norm, "per-instance or per-batch")
      ->check(CLI::IsMember({"per-instance", "per-batch"}))
      ->capture_default_str();
  tr->add_option("--coord-scale", train.coord_scale, "coordinate divisor (0 = scene default)");
  tr->add_option("--seed", train.seed, "random seed")->capture_default_str();
  tr->add_option("--log-every", train.log_every, "iterations between loss reports")->capture_default_str();
  tr->add_option("--log", train.log, "CSV loss curve");
  tr->add_option("--output,-o", train.output, "parameters file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    for (CLI::App* sub : app.get_subcommands()) apply_config(sub);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (c->parsed()) return cmd_complete(complete, out);
    if (g->parsed()) return cmd_generate(generate, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (ab->parsed()) return cmd_ablate(ablate, out);
    if (tr->parsed()) return cmd_train_toy(train, out);
  } catch (const NumericalError& ex) {
    err << "numerical failure: " << ex.what() << '\n';
    return kNumericalError;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& ex) {
    err << "invalid argument: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::out_of_range& ex) {
    err << "invalid argument: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace lidpm::cli
