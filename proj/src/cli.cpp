#include "diffprior/cli.hpp"

#include <fnmatch.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "diffprior/config.hpp"
#include "diffprior/denoiser.hpp"
#include "diffprior/error.hpp"

namespace diffprior {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Command-line flags are collected into a JSON patch that is applied after
// the config file, so flags override file values override defaults.
class Overrides {
 public:
  template <class T>
  void option(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    app->add_option_function<T>(
        flag, [this, pointer](const T& v) { patch_[json::json_pointer(pointer)] = v; }, help);
  }
  void triple(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    app->add_option_function<std::vector<double>>(
           flag, [this, pointer](const std::vector<double>& v) { patch_[json::json_pointer(pointer)] = v; }, help)
        ->expected(3)
        ->delimiter(',');
  }
  void dims(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    app->add_option_function<std::vector<std::size_t>>(
           flag, [this, pointer](const std::vector<std::size_t>& v) { patch_[json::json_pointer(pointer)] = v; },
           help)
        ->expected(3)
        ->delimiter(',');
  }
  void flag(CLI::App* app, const std::string& name, const std::string& pointer, bool value, const std::string& help) {
    app->add_flag_callback(name, [this, pointer, value] { patch_[json::json_pointer(pointer)] = value; }, help);
  }
  json& patch() { return patch_; }

 private:
  json patch_ = json::object();
};

struct Invocation {
  std::string config_path;
  std::vector<std::string> positional;
};

void add_common(CLI::App* app, Overrides& o, Invocation& inv) {
  app->add_option("--config", inv.config_path, "JSON config file (a provenance sidecar also works)");
  o.option<std::uint64_t>(app, "--seed", "/seed", "Random seed (generated and recorded when absent)");
  o.option<std::string>(app, "-o,--output", "/output", "Output path");
}

void add_prior(CLI::App* app, Overrides& o) {
  o.option<std::string>(app, "--prior-kind", "/prior/kind", "gaussian | gmm | denoiser");
  o.option<std::string>(app, "--prior", "/prior/path", "GMM JSON or denoiser checkpoint");
  o.option<double>(app, "--prior-mean", "/prior/mean", "Gaussian prior mean");
  o.option<double>(app, "--prior-variance", "/prior/variance", "Gaussian prior variance");
}

void add_solver(CLI::App* app, Overrides& o) {
  o.option<double>(app, "--tau-y", "/solver/tau_y", "Likelihood noise scale");
  o.option<std::size_t>(app, "--steps", "/solver/annealing_steps", "Annealing steps");
  o.option<double>(app, "--sigma-max", "/solver/sigma_max", "Initial noise level");
  o.option<double>(app, "--sigma-min", "/solver/sigma_min", "Final noise level");
  o.option<std::size_t>(app, "--ode-steps", "/solver/ode_steps", "Probability-flow steps per estimate");
  o.option<std::string>(app, "--ode-method", "/solver/ode_method", "euler | heun");
  o.option<std::size_t>(app, "--langevin-steps", "/solver/langevin_steps", "Inner Langevin steps");
  o.option<double>(app, "--eta", "/solver/langevin_eta", "Initial Langevin step size");
  o.option<double>(app, "--eta-decay", "/solver/eta_decay_ratio", "Final / initial step size");
  o.option<std::string>(app, "--eta-schedule", "/solver/eta_schedule",
                        "annealing-linear | inner-geometric | inner-linear");
  o.option<double>(app, "--tau-t-multiplier", "/solver/tau_t_multiplier", "Langevin anchor width / sigma_t");
  o.option<std::string>(app, "--glob", "/glob", "Batch mode: process every matching file into the -o directory");
}

void add_bias(CLI::App* app, Overrides& o) {
  o.flag(app, "--no-bias", "/solver/bias/enabled", false, "Disable bias-field estimation");
  o.option<int>(app, "--bias-order", "/solver/bias/order", "Polynomial order of log b");
  o.option<double>(app, "--bias-lambda", "/solver/bias/lambda", "Coefficient prior weight");
  o.option<double>(app, "--bias-alpha0", "/solver/bias/alpha0", "Bias step multiplier");
  o.option<std::size_t>(app, "--bias-updates", "/solver/bias/updates_per_step", "c-updates per annealing step");
}

RunConfig resolve(const std::string& command, const Invocation& inv, Overrides& o) {
  RunConfig cfg;
  if (!inv.config_path.empty()) apply_json(cfg, load_config_json(inv.config_path));
  if (!inv.positional.empty()) o.patch()["inputs"] = inv.positional;
  apply_json(cfg, o.patch());
  cfg.command = command;
  if (!cfg.seed) cfg.seed = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
  return cfg;
}

std::unique_ptr<ScoreProvider> make_prior(const PriorSpec& p, std::size_t state) {
  if (p.kind == "gaussian") return std::make_unique<GaussianPrior>(std::vector<double>{p.mean}, p.variance);
  if (p.kind == "gmm") {
    std::ifstream in(p.path);
    if (!in) throw InvalidArgument("prior file '" + p.path + "' does not exist");
    std::stringstream ss;
    ss << in.rdbuf();
    auto gmm = gmm_from_json(ss.str());
    if (!gmm.voxelwise() && gmm.dim() != state)
      throw InvalidArgument("GMM prior dimension does not match the volume size");
    return std::make_unique<GmmPrior>(std::move(gmm));
  }
  if (p.kind == "denoiser") {
    auto d = std::make_shared<const Denoiser>(read_checkpoint(p.path));
    if (d->dim() != state) throw InvalidArgument("denoiser dimension does not match the volume size");
    return std::make_unique<DenoiserScore>(std::move(d));
  }
  throw InvalidArgument("unknown prior kind '" + p.kind + "'");
}

void require_output(const RunConfig& cfg) {
  if (cfg.output.empty()) throw InvalidArgument("an output path (-o) is required");
}

void require_inputs(const RunConfig& cfg, std::size_t n, const char* what) {
  if (cfg.inputs.size() != n) throw InvalidArgument(std::string("expected ") + what);
}

json report_json(const SolveReport& r) { return json::parse(r.to_json()); }

void finish(const RunConfig& cfg, const json& report, Clock::time_point t0) {
  write_json(sidecar_path(cfg.output), make_sidecar(cfg, report, seconds_since(t0)));
}

// --- one-file runners -------------------------------------------------------

void run_degrade(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  Volume truth;
  if (cfg.inputs.empty()) {
    Phantom p{phantom_kind_from_string(cfg.phantom.kind), cfg.phantom.dims, cfg.phantom.spacing, *cfg.seed};
    truth = make_phantom(p);
  } else {
    require_inputs(cfg, 1, "one input volume");
    truth = read_nifti(cfg.inputs[0]);
  }
  DegradeConfig d = cfg.degrade;
  d.seed = *cfg.seed;
  const auto out = degrade(truth, d);
  write_nifti(out.low, cfg.output, cfg.output_type);
  if (!cfg.truth_output.empty()) write_nifti(truth, cfg.truth_output, cfg.output_type);
  finish(cfg, {{"bias_coefficients", out.bias_c}, {"output_dims", out.low.dims()}}, t0);
}

void run_restore(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  require_inputs(cfg, 1, "one input volume");
  const Volume y = read_nifti(cfg.inputs[0]);
  const Geometry hr = restoration_grid(y.geometry(), cfg.restoration);
  const auto prior = make_prior(cfg.prior, hr.size());
  SolverConfig s = cfg.solver;
  s.seed = *cfg.seed;
  const auto result = restore(y, cfg.restoration, *prior, s);
  write_nifti(result.x, cfg.output, cfg.output_type);
  finish(cfg, report_json(result.report), t0);
}

void run_inpaint(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  require_inputs(cfg, 1, "one input volume");
  if (cfg.mask.empty()) throw InvalidArgument("inpainting needs --mask");
  const Volume y = read_nifti(cfg.inputs[0]);
  const Mask mask = Mask::from_volume(read_nifti(cfg.mask));
  const auto prior = make_prior(cfg.prior, y.size());
  SolverConfig s = cfg.solver;
  s.seed = *cfg.seed;
  const auto result = inpaint(y, mask, *prior, s);
  write_nifti(result.x, cfg.output, cfg.output_type);
  finish(cfg, report_json(result.report), t0);
}

void run_refine(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  require_inputs(cfg, 1, "one input volume");
  const Volume x_hat = read_nifti(cfg.inputs[0]);
  const auto prior = make_prior(cfg.prior, x_hat.size());
  SolverConfig s = cfg.solver;
  s.seed = *cfg.seed;
  const auto result = refine(x_hat, cfg.tau_s, *prior, s);
  write_nifti(result.x, cfg.output, cfg.output_type);
  finish(cfg, report_json(result.report), t0);
}

std::vector<Volume> training_volumes(const RunConfig& cfg) {
  std::vector<Volume> vols;
  for (const auto& p : cfg.inputs) vols.push_back(read_nifti(p));
  for (std::size_t i = 0; i < cfg.phantom.count; ++i)
    vols.push_back(make_phantom({phantom_kind_from_string(cfg.phantom.kind), cfg.phantom.dims, cfg.phantom.spacing,
                                 derive_seed(*cfg.seed, i)}));
  if (vols.empty()) throw InvalidArgument("train-prior needs input volumes or --phantoms N");
  return vols;
}

void run_train_prior(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  const auto vols = training_volumes(cfg);
  json report;
  if (cfg.train_prior.kind == "gmm") {
    std::vector<double> samples;
    for (const auto& v : vols) samples.insert(samples.end(), v.data().begin(), v.data().end());
    const auto gmm = fit_gmm_1d(samples, cfg.train_prior.components, cfg.train_prior.em_iterations,
                                cfg.train_prior.variance_floor);
    std::ofstream out(cfg.output);
    if (!out) throw IoError("cannot write '" + cfg.output + "'");
    out << gmm_to_json(gmm) << '\n';
    report = {{"samples", samples.size()}, {"weights", gmm.weights()}, {"means", gmm.means()},
              {"variances", gmm.variances()}};
  } else if (cfg.train_prior.kind == "denoiser") {
    std::vector<std::vector<double>> data;
    for (const auto& v : vols) {
      if (v.size() != vols.front().size()) throw InvalidArgument("training volumes must share one size");
      data.emplace_back(v.data().begin(), v.data().end());
    }
    TrainConfig t = cfg.train;
    t.seed = *cfg.seed;
    Rng init(derive_seed(t.seed, 0x1417));
    Denoiser d(data.front().size(), cfg.train_prior.hidden, t.sigma_data, init);
    const auto result = train(data, t, std::move(d));
    write_checkpoint(cfg.output, result.model);
    if (!cfg.train_prior.curve.empty()) write_curve_csv(cfg.train_prior.curve, result.curve);
    report = {{"steps", result.curve.size()},
              {"first_loss", result.curve.empty() ? 0.0 : result.curve.front().loss},
              {"last_loss", result.curve.empty() ? 0.0 : result.curve.back().loss}};
  } else {
    throw InvalidArgument("unknown prior kind '" + cfg.train_prior.kind + "' (use gmm or denoiser)");
  }
  finish(cfg, report, t0);
}

void run_sample_prior(RunConfig cfg) {
  const auto t0 = Clock::now();
  require_output(cfg);
  Geometry g{cfg.sample.dims, cfg.sample.spacing, spacing_affine(cfg.sample.spacing)};
  g.validate();
  const auto prior = make_prior(cfg.prior, g.size());
  Rng rng(*cfg.seed);
  const auto sched = schedule_poly7(cfg.sample.steps, cfg.solver.sigma_min, cfg.solver.sigma_max);
  const Volume x = sample_prior(sched, *prior, rng, g, cfg.solver.ode());
  write_nifti(x, cfg.output, cfg.output_type);
  finish(cfg, {{"steps", cfg.sample.steps}}, t0);
}

std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(10) << v;
  return s.str();
}

void run_metrics(RunConfig cfg, std::ostream& out) {
  const auto t0 = Clock::now();
  require_inputs(cfg, 2, "two volumes: estimate reference");
  const Volume a = read_nifti(cfg.inputs[0]);
  const Volume b = read_nifti(cfg.inputs[1]);
  const auto r = evaluate(a, b, cfg.data_range, cfg.ssim_window);
  std::ostringstream row;
  row << cfg.inputs[0] << ',' << cfg.inputs[1] << ',' << format_metric(r.mae) << ',' << format_metric(r.psnr) << ','
      << format_metric(r.ssim) << ',' << format_metric(r.gmsd) << '\n';
  out << row.str();
  if (!cfg.output.empty()) {
    std::ofstream csv(cfg.output);
    if (!csv) throw IoError("cannot write '" + cfg.output + "'");
    csv << "path_a,path_b,mae,psnr,ssim,gmsd\n" << row.str();
    finish(cfg,
           {{"mae", r.mae},
            {"psnr", std::isinf(r.psnr) ? json("inf") : json(r.psnr)},
            {"ssim", r.ssim},
            {"gmsd", r.gmsd},
            {"ssim_by_axis", r.ssim_by_axis.value},
            {"gmsd_by_axis", r.gmsd_by_axis.value}},
           t0);
  }
}

// --- batch mode -------------------------------------------------------------

std::vector<std::string> expand_glob(const std::string& pattern) {
  const fs::path p(pattern);
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  const std::string name = p.filename().string();
  if (!fs::is_directory(dir)) throw InvalidArgument("glob directory '" + dir.string() + "' does not exist");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && fnmatch(name.c_str(), e.path().filename().string().c_str(), 0) == 0)
      out.push_back(e.path().string());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw InvalidArgument("glob '" + pattern + "' matched no files");
  return out;
}

std::string stem_of(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  for (const std::string ext : {".nii.gz", ".nii"})
    if (name.size() > ext.size() && name.compare(name.size() - ext.size(), ext.size(), ext) == 0)
      return name.substr(0, name.size() - ext.size());
  return name;
}

// Files are processed concurrently; file i uses seed derive_seed(seed, i) and
// writes <output dir>/<stem>_<command>.nii.gz.
void run_batch(const RunConfig& cfg, const std::function<void(RunConfig)>& runner) {
  require_output(cfg);
  const auto files = expand_glob(cfg.glob);
  fs::create_directories(cfg.output);
  std::vector<RunConfig> jobs;
  for (std::size_t i = 0; i < files.size(); ++i) {
    RunConfig c = cfg;
    c.glob.clear();
    c.inputs = {files[i]};
    c.seed = derive_seed(*cfg.seed, i);
    c.output = (fs::path(cfg.output) / (stem_of(files[i]) + "_" + cfg.command + ".nii.gz")).string();
    jobs.push_back(std::move(c));
  }
  const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t start = 0; start < jobs.size(); start += workers) {
    std::vector<std::future<void>> running;
    for (std::size_t i = start; i < std::min(jobs.size(), start + workers); ++i)
      running.push_back(std::async(std::launch::async, runner, jobs[i]));
    for (auto& f : running) f.get();
  }
}

void dispatch(const RunConfig& cfg, const std::function<void(RunConfig)>& runner) {
  if (!cfg.glob.empty()) run_batch(cfg, runner);
  else {
    require_inputs_exist(cfg);
    runner(cfg);
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-prior posterior sampling for volumetric inverse problems", "diffprior"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kLibraryVersion));

  Overrides o;
  Invocation inv;

  auto* deg = app.add_subcommand("degrade", "Synthetic degradation: low-pass, downsample, bias, noise");
  add_common(deg, o, inv);
  deg->add_option("input", inv.positional, "Input volume (omit to generate a phantom)");
  o.triple(deg, "--factors", "/degrade/factors", "Spacing ratios per axis");
  o.option<double>(deg, "--filter-sigma-scale", "/degrade/filter_sigma_scale", "Low-pass width per (factor - 1)");
  o.option<int>(deg, "--bias-order", "/degrade/bias_order", "Bias polynomial order");
  o.option<double>(deg, "--bias-amplitude", "/degrade/bias_amplitude", "Bias amplitude (0 = none)");
  o.option<double>(deg, "--noise-sigma", "/degrade/noise_sigma", "Additive noise level");
  o.option<std::string>(deg, "--phantom", "/phantom/kind", "Phantom kind when no input is given");
  o.dims(deg, "--dims", "/phantom/dims", "Phantom dims");
  o.option<std::string>(deg, "--truth-output", "/truth_output", "Also write the clean volume here");
  o.option<std::string>(deg, "--output-type", "/output_type", "float32 | int16 | uint8");

  auto* res = app.add_subcommand("restore", "Restoration with bias-field estimation");
  add_common(res, o, inv);
  res->add_option("input", inv.positional, "Low-resolution observation");
  add_prior(res, o);
  add_solver(res, o);
  add_bias(res, o);
  o.triple(res, "--factors", "/restoration/factors", "Spacing ratios per axis");
  o.dims(res, "--hr-dims", "/restoration/hr_dims", "High-resolution dims (default: derived)");
  o.triple(res, "--slice-fwhm", "/restoration/slice_fwhm_mm", "Slice-profile FWHM per axis in mm");

  auto* inp = app.add_subcommand("inpaint", "Inpainting of masked voxels");
  add_common(inp, o, inv);
  inp->add_option("input", inv.positional, "Observed volume");
  o.option<std::string>(inp, "--mask", "/mask", "Mask volume (1 = observed)");
  add_prior(inp, o);
  add_solver(inp, o);

  auto* ref = app.add_subcommand("refine", "Refinement of an existing estimate");
  add_common(ref, o, inv);
  ref->add_option("input", inv.positional, "Estimate to refine");
  o.option<double>(ref, "--tau-s", "/refinement/tau_s", "Observation precision");
  add_prior(ref, o);
  add_solver(ref, o);

  auto* trn = app.add_subcommand("train-prior", "Fit a GMM or train a denoiser prior");
  add_common(trn, o, inv);
  trn->add_option("inputs", inv.positional, "Training volumes");
  o.option<std::string>(trn, "--kind", "/train_prior/kind", "gmm | denoiser");
  o.option<std::size_t>(trn, "--phantoms", "/phantom/count", "Generate this many training phantoms");
  o.option<std::string>(trn, "--phantom", "/phantom/kind", "Phantom kind");
  o.dims(trn, "--dims", "/phantom/dims", "Phantom dims");
  o.option<std::size_t>(trn, "--components", "/train_prior/components", "GMM components");
  o.option<int>(trn, "--em-iterations", "/train_prior/em_iterations", "EM iterations");
  o.option<double>(trn, "--variance-floor", "/train_prior/variance_floor", "GMM variance floor");
  trn->add_option_function<std::vector<std::size_t>>(
         "--hidden", [&o](const std::vector<std::size_t>& v) { o.patch()["train_prior"]["hidden"] = v; },
         "Hidden layer widths")
      ->delimiter(',');
  o.option<std::size_t>(trn, "--steps", "/train/steps", "Training steps");
  o.option<std::size_t>(trn, "--batch", "/train/batch", "Batch size");
  o.option<double>(trn, "--lr", "/train/lr", "Learning rate");
  o.option<std::size_t>(trn, "--warmup", "/train/warmup_steps", "Warmup steps");
  o.option<double>(trn, "--ema-decay", "/train/ema_decay", "EMA decay");
  o.option<std::string>(trn, "--curve", "/train_prior/curve", "Training curve CSV");

  auto* smp = app.add_subcommand("sample-prior", "Draw a sample from the prior");
  add_common(smp, o, inv);
  add_prior(smp, o);
  o.dims(smp, "--dims", "/sample/dims", "Sample dims");
  o.option<std::size_t>(smp, "--steps", "/sample/steps", "Noise levels");
  o.option<double>(smp, "--sigma-max", "/solver/sigma_max", "Initial noise level");
  o.option<double>(smp, "--sigma-min", "/solver/sigma_min", "Final noise level");

  auto* met = app.add_subcommand("metrics", "MAE, PSNR, SSIM and GMSD of an estimate against a reference");
  add_common(met, o, inv);
  met->add_option("volumes", inv.positional, "estimate reference")->expected(2);
  o.option<double>(met, "--data-range", "/metrics/data_range", "Intensity range");
  o.option<int>(met, "--window", "/metrics/ssim_window", "SSIM window size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kLibraryVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    const std::string command = app.get_subcommands().front()->get_name();
    const RunConfig cfg = resolve(command, inv, o);
    if (command == "degrade") dispatch(cfg, run_degrade);
    else if (command == "restore") dispatch(cfg, run_restore);
    else if (command == "inpaint") dispatch(cfg, run_inpaint);
    else if (command == "refine") dispatch(cfg, run_refine);
    else if (command == "train-prior") {
      require_inputs_exist(cfg);
      run_train_prior(cfg);
    } else if (command == "sample-prior") {
      require_inputs_exist(cfg);
      run_sample_prior(cfg);
    } else if (command == "metrics") {
      require_inputs_exist(cfg);
      run_metrics(cfg, out);
    }
    return kExitOk;
  } catch (const NumericRangeError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const TrainingDiverged& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const json::exception& e) {
    err << "error: bad configuration value: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"diffprior"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

int run_cli(int argc, char** argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace diffprior
