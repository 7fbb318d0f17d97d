// resflow: generate data, train, restore, evaluate and run the self-checks.
//
// Every command ends with one machine-readable line on stdout:
//   summary command=<name> status=<ok|fail> key=value ...
// and exits 0 exactly when status=ok.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "resflow/checkpoint.hpp"
#include "resflow/config.hpp"
#include "resflow/degradations.hpp"
#include "resflow/image_io.hpp"
#include "resflow/metrics.hpp"
#include "resflow/sampler.hpp"
#include "resflow/trainer.hpp"
#include "resflow/verify.hpp"

namespace fs = std::filesystem;
using namespace resflow;

namespace {

enum Exit : int { kOk = 0, kFailed = 1, kUsage = 2, kRuntime = 3 };

struct Summary {
  std::string command;
  std::vector<std::pair<std::string, std::string>> fields = {};

  template <class V>
  Summary& add(std::string key, const V& value) {
    std::ostringstream os;
    os.precision(10);
    os << value;
    fields.emplace_back(std::move(key), os.str());
    return *this;
  }
  void print(bool ok) const {
    std::cout << "summary command=" << command << " status=" << (ok ? "ok" : "fail");
    for (const auto& [k, v] : fields) std::cout << ' ' << k << '=' << v;
    std::cout << std::endl;
  }
};

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    apply_overrides(cfg, overrides);
    cfg.validate();
    return cfg;
  }
};

std::string image_name(std::size_t i, std::size_t channels) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return std::string(buf) + pnm::extension(channels);
}

bool is_image(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ------------------------------------------------------------------ gen

template <class T>
int cmd_gen(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out / "hq");
  fs::create_directories(out / "lq");
  const auto data = make_dataset<T>(cfg.data.n, cfg.family(), cfg.data_seed());
  std::ofstream manifest(out / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + (out / "manifest.csv").string());
  manifest << "path_hq,path_lq,kind,params,seed\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto name = image_name(i, cfg.data.channels);
    pnm::write(out / "hq" / name, data[i].x0);
    pnm::write(out / "lq" / name, data[i].x1);
    manifest << "hq/" << name << ",lq/" << name << ',' << chain_kind_string(data[i].spec) << ','
             << chain_params_string(data[i].spec) << ',' << data[i].seed << '\n';
  }
  manifest.close();
  if (!manifest) throw std::runtime_error("write failed for manifest.csv");
  std::ofstream(out / "config.txt") << cfg.dump();
  Summary{"gen"}.add("n", data.size()).add("out", out.string()).print(true);
  return kOk;
}

// ---------------------------------------------------------------- train

template <class T>
std::vector<PairedSample<T>> load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.csv";
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
  std::string line;
  std::getline(in, line);
  if (line != "path_hq,path_lq,kind,params,seed") {
    throw std::runtime_error("unexpected manifest header in " + manifest_path.string());
  }
  std::vector<PairedSample<T>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw std::runtime_error("bad manifest row: " + line);
    PairedSample<T> s;
    s.x0 = pnm::read<T>(dir / cols[0]);
    s.x1 = pnm::read<T>(dir / cols[1]);
    if (s.x0.shape() != s.x1.shape()) throw std::runtime_error("HQ/LQ shape mismatch: " + line);
    s.seed = std::stoull(cols[4]);
    out.push_back(std::move(s));
  }
  if (out.empty()) throw std::runtime_error("dataset " + dir.string() + " has no pairs");
  return out;
}

template <class T>
int cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& ckpt,
              std::optional<fs::path> log_path, bool resume) {
  const auto data = load_dataset<T>(data_dir);
  const auto tc = cfg.resolved_train();
  std::optional<VelocityModel<T>> model;
  std::uint64_t start = 0;
  if (resume && fs::exists(ckpt)) {
    auto loaded = checkpoint::load<T>(ckpt);
    if (!loaded.optimizer_step) throw std::runtime_error("checkpoint has no optimizer state");
    model.emplace(std::move(loaded.model));
    start = loaded.meta.step;
    AdamW<T> opt(model->parameters(), {0.9, 0.999, 1e-8, tc.weight_decay});
    opt.restore_state(*loaded.optimizer_step, std::move(loaded.first_moments),
                      std::move(loaded.second_moments));
    if (start > tc.iterations) throw std::runtime_error("checkpoint is beyond train.iterations");
    TrainOutputs io{ckpt, log_path, cfg.checkpoint_every, {}};
    const auto res = train(*model, opt, data, tc, io, start);
    Summary s{"train"};
    s.add("start_step", start).add("steps", res.final_step);
    if (!res.log.empty()) s.add("final_loss", res.log.back().loss);
    s.add("checkpoint", ckpt.string()).print(true);
    return kOk;
  }
  auto mc = cfg.resolved_model();
  mc.channels = data.front().x0.dim(0);
  model.emplace(mc);
  AdamW<T> opt(model->parameters(), {0.9, 0.999, 1e-8, tc.weight_decay});
  TrainOutputs io{ckpt, log_path, cfg.checkpoint_every, {}};
  const auto res = train(*model, opt, data, tc, io, 0);
  Summary{"train"}
      .add("start_step", 0)
      .add("steps", res.final_step)
      .add("params", model->parameter_count())
      .add("final_loss", res.log.back().loss)
      .add("checkpoint", ckpt.string())
      .print(true);
  return kOk;
}

// -------------------------------------------------------------- restore

template <class T>
int cmd_restore(const RunConfig& cfg, const fs::path& ckpt, const fs::path& input,
                const fs::path& out, std::optional<std::size_t> steps,
                std::optional<std::uint64_t> y_seed, std::optional<fs::path> trajectory_csv,
                std::optional<fs::path> reference) {
  const auto loaded = checkpoint::load<T>(ckpt);
  auto sc = cfg.resolved_sample();
  sc.schedule = loaded.meta.schedule;
  sc.aux = loaded.meta.aux;
  if (steps) sc.steps = *steps;
  if (y_seed) sc.y_seed = *y_seed;
  sc.validate();

  const bool batch = fs::is_directory(input);
  std::vector<fs::path> inputs = batch ? list_images(input) : std::vector<fs::path>{input};
  if (inputs.empty()) throw std::runtime_error("no PGM/PPM images in " + input.string());
  if (batch) fs::create_directories(out);

  std::ofstream traj;
  if (trajectory_csv) {
    traj.open(*trajectory_csv, std::ios::trunc);
    if (!traj) throw std::runtime_error("cannot write " + trajectory_csv->string());
    traj << "image,step,t,mae_to_input,psnr_to_reference\n";
    traj.precision(9);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto x1 = pnm::read<T>(inputs[i]);
    auto c = sc;
    if (batch) c.y_seed = batch_y_seed(sc.y_seed, i);
    const auto path = trajectory(loaded.model, x1, c);
    const auto& restored = path.back().x;
    pnm::write(batch ? out / inputs[i].filename() : out, restored);
    if (traj) {
      std::optional<Tensor<T>> ref;
      if (reference) {
        ref = pnm::read<T>(fs::is_directory(*reference) ? *reference / inputs[i].filename()
                                                        : *reference);
      }
      for (std::size_t k = 0; k < path.size(); ++k) {
        traj << inputs[i].filename().string() << ',' << k << ',' << path[k].t << ','
             << metrics::mae(path[k].x, x1) << ',';
        if (ref) traj << metrics::psnr(path[k].x, *ref, cfg.eval.max_val);
        traj << '\n';
      }
    }
  }
  Summary{"restore"}
      .add("images", inputs.size())
      .add("steps", sc.steps)
      .add("out", out.string())
      .print(true);
  return kOk;
}

// ----------------------------------------------------------------- eval

template <class T>
int cmd_eval(const RunConfig& cfg, const fs::path& restored_dir, const fs::path& reference_dir,
             std::optional<fs::path> out_csv) {
  const auto restored = list_images(restored_dir);
  const auto reference = list_images(reference_dir);
  if (restored.size() != reference.size()) {
    throw std::runtime_error("image count mismatch: " + std::to_string(restored.size()) +
                             " restored vs " + std::to_string(reference.size()) + " reference");
  }
  metrics::MetricReport report;
  for (std::size_t i = 0; i < restored.size(); ++i) {
    if (restored[i].filename() != reference[i].filename()) {
      throw std::runtime_error("unmatched image " + restored[i].filename().string());
    }
    const auto a = pnm::read<T>(restored[i]);
    const auto b = pnm::read<T>(reference[i]);
    metrics::ImageMetrics m{restored[i].filename().string(),
                            metrics::psnr(a, b, cfg.eval.max_val),
                            metrics::ssim(a, b, cfg.eval.window, cfg.eval.max_val),
                            metrics::mae(a, b)};
    report.add(std::move(m));
  }
  std::ostringstream csv;
  csv.precision(10);
  csv << "image_id,psnr,ssim,mae\n";
  for (const auto& m : report.images) csv << m.id << ',' << m.psnr << ',' << m.ssim << ',' << m.mae << '\n';
  const auto& g = report.aggregate;
  csv << g.id << ',' << g.psnr << ',' << g.ssim << ',' << g.mae << '\n';
  if (out_csv) {
    std::ofstream f(*out_csv, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out_csv->string());
    f << csv.str();
  } else {
    std::cout << csv.str();
  }
  Summary{"eval"}
      .add("images", report.images.size())
      .add("psnr", g.psnr)
      .add("ssim", g.ssim)
      .add("mae", g.mae)
      .print(true);
  return kOk;
}

// --------------------------------------------------------------- verify

int cmd_verify(const RunConfig& cfg, const std::string& suite) {
  verify::Report rep;
  if (suite == "schedule") {
    rep = verify::schedule(cfg.train.schedule);
  } else if (suite == "mi") {
    rep = verify::mutual_information(200, cfg.seed);
  } else if (suite == "dpi") {
    rep = verify::dpi(500, cfg.seed);
  } else if (suite == "entropy") {
    rep = verify::entropy(1, cfg.train.schedule.beta);
  } else {
    rep = verify::gradcheck(cfg.seed);
  }
  for (const auto& c : rep.checks) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  }
  Summary{"verify"}.add("suite", suite).add(rep.value_name, rep.value).print(rep.passed());
  return rep.passed() ? kOk : kFailed;
}

int cmd_schedule_dump(const RunConfig& cfg, std::size_t resolution, std::optional<fs::path> out) {
  std::ostringstream csv;
  csv.precision(17);
  csv << "t,alpha_x,sigma_x,sigma_y,dsigma_y,lambda\n";
  for (std::size_t k = 0; k <= resolution; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(resolution);
    const auto cx = eval_x(t);
    const auto cy = eval_y(t, cfg.train.schedule);
    csv << t << ',' << cx.alpha << ',' << cx.sigma << ',' << cy.sigma << ',' << cy.dsigma << ','
        << loss_weight(t, cfg.train.schedule.gamma) << '\n';
  }
  if (out) {
    std::ofstream f(*out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + out->string());
    f << csv.str();
  } else {
    std::cout << csv.str();
  }
  Summary{"schedule-dump"}.add("rows", resolution + 1).print(true);
  return kOk;
}

std::string precision_from_env() {
  const char* env = std::getenv("RESFLOW_PRECISION");
  const std::string p = env && *env ? env : "f32";
  if (p != "f32" && p != "f64") {
    throw ConfigError("RESFLOW_PRECISION: expected f32 or f64, got '" + p + "'");
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ResFlow restoration engine"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config_path, "flat key=value config file");
  app.add_option("-s,--set", common.overrides, "override, key=value (repeatable)");
  app.fallthrough();

  fs::path gen_out;
  auto* gen = app.add_subcommand("gen", "generate a paired HQ/LQ dataset");
  gen->add_option("-o,--out", gen_out, "output directory")->required();

  fs::path train_data, train_ckpt;
  std::optional<fs::path> train_log;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "train a velocity model");
  train_cmd->add_option("-d,--data", train_data, "dataset directory from gen")->required();
  train_cmd->add_option("-o,--out", train_ckpt, "checkpoint path")->required();
  train_cmd->add_option("-l,--log", train_log, "loss log CSV (step,loss,lr)");
  train_cmd->add_flag("--resume", resume, "continue from the checkpoint at --out");

  fs::path r_ckpt, r_input, r_out;
  std::optional<std::size_t> r_steps;
  std::optional<std::uint64_t> r_seed;
  std::optional<fs::path> r_traj, r_ref;
  auto* restore_cmd = app.add_subcommand("restore", "restore LQ image(s)");
  restore_cmd->add_option("-m,--checkpoint", r_ckpt, "model checkpoint")->required();
  restore_cmd->add_option("-i,--input", r_input, "LQ image or directory")->required();
  restore_cmd->add_option("-o,--out", r_out, "output image or directory")->required();
  restore_cmd->add_option("--steps", r_steps, "Euler steps (default 4)");
  restore_cmd->add_option("--y-seed", r_seed, "seed of the auxiliary draw");
  restore_cmd->add_option("--trajectory", r_traj, "per-step CSV");
  restore_cmd->add_option("--reference", r_ref, "HQ image or directory for trajectory PSNR");

  fs::path e_restored, e_reference;
  std::optional<fs::path> e_out;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM/MAE of restored vs reference");
  eval_cmd->add_option("-i,--restored", e_restored, "restored directory")->required();
  eval_cmd->add_option("-r,--reference", e_reference, "reference directory")->required();
  eval_cmd->add_option("-o,--out", e_out, "CSV path (stdout if omitted)");

  std::string suite;
  auto* verify_cmd = app.add_subcommand("verify", "numeric self-checks");
  verify_cmd->add_option("suite", suite, "schedule|mi|dpi|entropy|gradcheck")
      ->required()
      ->check(CLI::IsMember({"schedule", "mi", "dpi", "entropy", "gradcheck"}));

  std::size_t resolution = 100;
  std::optional<fs::path> dump_out;
  auto* dump = app.add_subcommand("schedule-dump", "CSV of schedule coefficients");
  dump->add_option("-n,--resolution", resolution, "intervals on [0,1]")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  dump->add_option("-o,--out", dump_out, "CSV path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = common.resolve();
    const bool f64 = precision_from_env() == "f64";
    if (*gen) return f64 ? cmd_gen<double>(cfg, gen_out) : cmd_gen<float>(cfg, gen_out);
    if (*train_cmd) {
      return f64 ? cmd_train<double>(cfg, train_data, train_ckpt, train_log, resume)
                 : cmd_train<float>(cfg, train_data, train_ckpt, train_log, resume);
    }
    if (*restore_cmd) {
      return f64 ? cmd_restore<double>(cfg, r_ckpt, r_input, r_out, r_steps, r_seed, r_traj, r_ref)
                 : cmd_restore<float>(cfg, r_ckpt, r_input, r_out, r_steps, r_seed, r_traj, r_ref);
    }
    if (*eval_cmd) {
      return f64 ? cmd_eval<double>(cfg, e_restored, e_reference, e_out)
                 : cmd_eval<float>(cfg, e_restored, e_reference, e_out);
    }
    if (*verify_cmd) return cmd_verify(cfg, suite);
    return cmd_schedule_dump(cfg, resolution, dump_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    Summary{command}.add("error", "invalid_argument").print(false);
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    Summary{command}.add("error", "runtime").print(false);
    return kRuntime;
  }
}
