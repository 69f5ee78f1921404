#include "diffprior/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>

#include <Eigen/Core>
#include <fftw3.h>
#include <zlib.h>

#include "diffprior/error.hpp"

namespace diffprior {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw InvalidArgument("config section '" + section + "' must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.count(key)) throw InvalidArgument("unknown config key '" + section + "." + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InvalidArgument(std::string("config key '") + key + "' has the wrong type");
  }
}

template <class T>
void read_triple(const json& j, const char* key, std::array<T, 3>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 3) throw InvalidArgument(std::string("config key '") + key + "' needs 3 values");
  read(j, key, out);
}

OdeMethod ode_method_from_string(const std::string& s) {
  if (s == "euler") return OdeMethod::euler;
  if (s == "heun") return OdeMethod::heun;
  throw InvalidArgument("unknown ode_method '" + s + "'");
}

LangevinSchedule schedule_from_string(const std::string& s) {
  if (s == "annealing-linear") return LangevinSchedule::annealing_linear;
  if (s == "inner-geometric") return LangevinSchedule::inner_geometric;
  if (s == "inner-linear") return LangevinSchedule::inner_linear;
  throw InvalidArgument("unknown eta_schedule '" + s + "'");
}

std::string datatype_name(NiftiDatatype t) {
  switch (t) {
    case NiftiDatatype::uint8: return "uint8";
    case NiftiDatatype::int16: return "int16";
    case NiftiDatatype::float32: return "float32";
  }
  return "float32";
}

json affine_json(const Affine& a) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({a(r, 0), a(r, 1), a(r, 2), a(r, 3)});
  return rows;
}

Affine affine_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw InvalidArgument("alignment must be a 4x4 matrix");
  Affine a;
  for (int r = 0; r < 4; ++r) {
    if (!j[r].is_array() || j[r].size() != 4) throw InvalidArgument("alignment must be a 4x4 matrix");
    for (int c = 0; c < 4; ++c) a(r, c) = j[r][c].get<double>();
  }
  return a;
}

void apply_solver(SolverConfig& s, const json& j) {
  check_keys(j,
             {"annealing_steps", "sigma_max", "sigma_min", "ode_steps", "ode_sigma_min", "ode_method",
              "langevin_steps", "langevin_eta", "eta_decay_ratio", "eta_schedule", "langevin_stability", "tau_y",
              "tau_t_multiplier", "bias"},
             "solver");
  read(j, "annealing_steps", s.annealing_steps);
  read(j, "sigma_max", s.sigma_max);
  read(j, "sigma_min", s.sigma_min);
  read(j, "ode_steps", s.ode_steps);
  read(j, "ode_sigma_min", s.ode_sigma_min);
  if (j.contains("ode_method")) s.ode_method = ode_method_from_string(j.at("ode_method").get<std::string>());
  read(j, "langevin_steps", s.langevin_steps);
  read(j, "langevin_eta", s.langevin_eta);
  read(j, "eta_decay_ratio", s.eta_decay_ratio);
  if (j.contains("eta_schedule")) s.eta_schedule = schedule_from_string(j.at("eta_schedule").get<std::string>());
  read(j, "langevin_stability", s.langevin_stability);
  if (j.contains("tau_y")) {
    if (j.at("tau_y").is_null()) s.tau_y.reset();
    else s.tau_y = j.at("tau_y").get<double>();
  }
  read(j, "tau_t_multiplier", s.tau_t_multiplier);
  if (j.contains("bias")) {
    const auto& b = j.at("bias");
    check_keys(b, {"enabled", "order", "lambda", "alpha0", "updates_per_step"}, "solver.bias");
    read(b, "enabled", s.bias.enabled);
    read(b, "order", s.bias.order);
    read(b, "lambda", s.bias.lambda);
    read(b, "alpha0", s.bias.alpha0);
    read(b, "updates_per_step", s.bias.updates_per_step);
  }
}

json solver_json(const SolverConfig& s) {
  return {{"annealing_steps", s.annealing_steps},
          {"sigma_max", s.sigma_max},
          {"sigma_min", s.sigma_min},
          {"ode_steps", s.ode_steps},
          {"ode_sigma_min", s.ode_sigma_min},
          {"ode_method", to_string(s.ode_method)},
          {"langevin_steps", s.langevin_steps},
          {"langevin_eta", s.langevin_eta},
          {"eta_decay_ratio", s.eta_decay_ratio},
          {"eta_schedule", to_string(s.eta_schedule)},
          {"langevin_stability", s.langevin_stability},
          {"tau_y", s.tau_y ? json(*s.tau_y) : json(nullptr)},
          {"tau_t_multiplier", s.tau_t_multiplier},
          {"bias",
           {{"enabled", s.bias.enabled},
            {"order", s.bias.order},
            {"lambda", s.bias.lambda},
            {"alpha0", s.bias.alpha0},
            {"updates_per_step", s.bias.updates_per_step}}}};
}

}  // namespace

std::string to_string(OdeMethod m) { return m == OdeMethod::heun ? "heun" : "euler"; }

std::string to_string(LangevinSchedule s) {
  switch (s) {
    case LangevinSchedule::annealing_linear: return "annealing-linear";
    case LangevinSchedule::inner_geometric: return "inner-geometric";
    case LangevinSchedule::inner_linear: return "inner-linear";
  }
  return "annealing-linear";
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = c.command;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["inputs"] = c.inputs;
  j["mask"] = c.mask;
  j["output"] = c.output;
  j["truth_output"] = c.truth_output;
  j["glob"] = c.glob;
  j["output_type"] = datatype_name(c.output_type);
  j["solver"] = solver_json(c.solver);
  json r = {{"factors", c.restoration.factors}, {"hr_dims", c.restoration.hr_dims}};
  r["slice_fwhm_mm"] = c.restoration.profile ? json(c.restoration.profile->fwhm_mm) : json(nullptr);
  r["alignment"] = c.restoration.alignment ? affine_json(*c.restoration.alignment) : json(nullptr);
  j["restoration"] = r;
  j["refinement"] = {{"tau_s", c.tau_s}};
  j["degrade"] = {{"factors", c.degrade.factors},
                  {"filter_sigma_scale", c.degrade.filter_sigma_scale},
                  {"bias_order", c.degrade.bias_order},
                  {"bias_amplitude", c.degrade.bias_amplitude},
                  {"noise_sigma", c.degrade.noise_sigma}};
  j["train"] = {{"p_mean", c.train.p_mean},
                {"p_std", c.train.p_std},
                {"sigma_data", c.train.sigma_data},
                {"lr", c.train.lr},
                {"batch", c.train.batch},
                {"steps", c.train.steps},
                {"warmup_steps", c.train.warmup_steps},
                {"grad_clip", c.train.grad_clip},
                {"ema_decay", c.train.ema_decay},
                {"ema_rampup", c.train.ema_rampup},
                {"ema_every", c.train.ema_every},
                {"divergence_threshold", c.train.divergence_threshold}};
  j["prior"] = {{"kind", c.prior.kind}, {"mean", c.prior.mean}, {"variance", c.prior.variance}, {"path", c.prior.path}};
  j["phantom"] = {{"kind", c.phantom.kind},
                  {"dims", c.phantom.dims},
                  {"spacing", c.phantom.spacing},
                  {"count", c.phantom.count}};
  j["train_prior"] = {{"kind", c.train_prior.kind},
                      {"components", c.train_prior.components},
                      {"em_iterations", c.train_prior.em_iterations},
                      {"variance_floor", c.train_prior.variance_floor},
                      {"hidden", c.train_prior.hidden},
                      {"curve", c.train_prior.curve}};
  j["sample"] = {{"dims", c.sample.dims}, {"spacing", c.sample.spacing}, {"steps", c.sample.steps}};
  j["metrics"] = {{"data_range", c.data_range}, {"ssim_window", c.ssim_window}};
  return j;
}

void apply_json(RunConfig& c, const json& j) {
  check_keys(j,
             {"schema_version", "command", "seed", "inputs", "mask", "output", "truth_output", "glob", "output_type",
              "solver", "restoration", "refinement", "degrade", "train", "prior", "phantom", "train_prior", "sample",
              "metrics"},
             "config");
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion)
    throw InvalidArgument("unsupported config schema_version " + j.at("schema_version").dump());
  read(j, "command", c.command);
  if (j.contains("seed")) {
    if (j.at("seed").is_null()) c.seed.reset();
    else c.seed = j.at("seed").get<std::uint64_t>();
  }
  read(j, "inputs", c.inputs);
  read(j, "mask", c.mask);
  read(j, "output", c.output);
  read(j, "truth_output", c.truth_output);
  read(j, "glob", c.glob);
  if (j.contains("output_type")) c.output_type = nifti_datatype_from_string(j.at("output_type").get<std::string>());
  if (j.contains("solver")) apply_solver(c.solver, j.at("solver"));
  if (j.contains("restoration")) {
    const auto& r = j.at("restoration");
    check_keys(r, {"factors", "hr_dims", "slice_fwhm_mm", "alignment"}, "restoration");
    read_triple(r, "factors", c.restoration.factors);
    read_triple(r, "hr_dims", c.restoration.hr_dims);
    if (r.contains("slice_fwhm_mm")) {
      if (r.at("slice_fwhm_mm").is_null()) c.restoration.profile.reset();
      else {
        SliceProfile p;
        read_triple(r, "slice_fwhm_mm", p.fwhm_mm);
        c.restoration.profile = p;
      }
    }
    if (r.contains("alignment")) {
      if (r.at("alignment").is_null()) c.restoration.alignment.reset();
      else c.restoration.alignment = affine_from_json(r.at("alignment"));
    }
  }
  if (j.contains("refinement")) {
    check_keys(j.at("refinement"), {"tau_s"}, "refinement");
    read(j.at("refinement"), "tau_s", c.tau_s);
  }
  if (j.contains("degrade")) {
    const auto& d = j.at("degrade");
    check_keys(d, {"factors", "filter_sigma_scale", "bias_order", "bias_amplitude", "noise_sigma"}, "degrade");
    read_triple(d, "factors", c.degrade.factors);
    read(d, "filter_sigma_scale", c.degrade.filter_sigma_scale);
    read(d, "bias_order", c.degrade.bias_order);
    read(d, "bias_amplitude", c.degrade.bias_amplitude);
    read(d, "noise_sigma", c.degrade.noise_sigma);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t,
               {"p_mean", "p_std", "sigma_data", "lr", "batch", "steps", "warmup_steps", "grad_clip", "ema_decay",
                "ema_rampup", "ema_every", "divergence_threshold"},
               "train");
    read(t, "p_mean", c.train.p_mean);
    read(t, "p_std", c.train.p_std);
    read(t, "sigma_data", c.train.sigma_data);
    read(t, "lr", c.train.lr);
    read(t, "batch", c.train.batch);
    read(t, "steps", c.train.steps);
    read(t, "warmup_steps", c.train.warmup_steps);
    read(t, "grad_clip", c.train.grad_clip);
    read(t, "ema_decay", c.train.ema_decay);
    read(t, "ema_rampup", c.train.ema_rampup);
    read(t, "ema_every", c.train.ema_every);
    read(t, "divergence_threshold", c.train.divergence_threshold);
  }
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    check_keys(p, {"kind", "mean", "variance", "path"}, "prior");
    read(p, "kind", c.prior.kind);
    read(p, "mean", c.prior.mean);
    read(p, "variance", c.prior.variance);
    read(p, "path", c.prior.path);
  }
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    check_keys(p, {"kind", "dims", "spacing", "count"}, "phantom");
    read(p, "kind", c.phantom.kind);
    read_triple(p, "dims", c.phantom.dims);
    read_triple(p, "spacing", c.phantom.spacing);
    read(p, "count", c.phantom.count);
  }
  if (j.contains("train_prior")) {
    const auto& p = j.at("train_prior");
    check_keys(p, {"kind", "components", "em_iterations", "variance_floor", "hidden", "curve"}, "train_prior");
    read(p, "kind", c.train_prior.kind);
    read(p, "components", c.train_prior.components);
    read(p, "em_iterations", c.train_prior.em_iterations);
    read(p, "variance_floor", c.train_prior.variance_floor);
    read(p, "hidden", c.train_prior.hidden);
    read(p, "curve", c.train_prior.curve);
  }
  if (j.contains("sample")) {
    const auto& s = j.at("sample");
    check_keys(s, {"dims", "spacing", "steps"}, "sample");
    read_triple(s, "dims", c.sample.dims);
    read_triple(s, "spacing", c.sample.spacing);
    read(s, "steps", c.sample.steps);
  }
  if (j.contains("metrics")) {
    check_keys(j.at("metrics"), {"data_range", "ssim_window"}, "metrics");
    read(j.at("metrics"), "data_range", c.data_range);
    read(j.at("metrics"), "ssim_window", c.ssim_window);
  }
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  apply_json(c, j);
  return c;
}

json load_config_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config file '" + path + "' does not exist or is unreadable");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (j.is_object() && j.contains("run_config")) return j.at("run_config");
  return j;
}

void require_inputs_exist(const RunConfig& c) {
  auto need = [](const std::string& p, const char* what) {
    if (!p.empty() && !std::filesystem::exists(p))
      throw InvalidArgument(std::string(what) + " '" + p + "' does not exist");
  };
  for (const auto& p : c.inputs) need(p, "input file");
  need(c.mask, "mask file");
  if (c.prior.kind != "gaussian") need(c.prior.path, "prior file");
}

json make_sidecar(const RunConfig& c, const json& report, double wall_seconds) {
  json prov = {{"library", kLibraryVersion},
               {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                             std::to_string(EIGEN_MINOR_VERSION)},
               {"fftw", std::string(fftw_version)},
               {"zlib", ZLIB_VERSION},
               {"seed", c.seed ? json(*c.seed) : json(nullptr)},
               {"wall_seconds", wall_seconds}};
  return {{"schema_version", kSchemaVersion}, {"run_config", to_json(c)}, {"provenance", prov}, {"report", report}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write '" + path + "'");
}

std::string sidecar_path(const std::string& output) {
  std::string stem = output;
  for (const char* ext : {".nii.gz", ".nii", ".json", ".csv", ".bin"}) {
    const std::string e = ext;
    if (stem.size() > e.size() && stem.compare(stem.size() - e.size(), e.size(), e) == 0) {
      stem.resize(stem.size() - e.size());
      break;
    }
  }
  return stem + ".sidecar.json";
}

}  // namespace diffprior
