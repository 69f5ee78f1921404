#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffprior/metrics.hpp"
#include "diffprior/nifti.hpp"
#include "diffprior/solver.hpp"
#include "diffprior/synth.hpp"
#include "diffprior/trainer.hpp"

namespace diffprior {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

/// Which score provider a run uses.
///  gaussian: N(mean, variance) per voxel, no file.
///  gmm:      voxelwise mixture from a JSON file written by `train-prior --kind gmm`.
///  denoiser: trained checkpoint.
struct PriorSpec {
  std::string kind = "gaussian";
  double mean = 0.0;
  double variance = 0.25;
  std::string path;
};

struct PhantomSpec {
  std::string kind = "ellipsoid-stack";
  Dims dims{32, 32, 32};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::size_t count = 0;
};

struct TrainPriorSpec {
  std::string kind = "gmm";
  std::size_t components = 5;
  int em_iterations = 200;
  double variance_floor = 1e-3;
  std::vector<std::size_t> hidden{64, 64};
  std::string curve;  // optional CSV path
};

struct SampleSpec {
  Dims dims{16, 16, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::size_t steps = 40;
};

/// Everything a CLI run needs. Serialized as JSON with a schema_version.
/// Defaults < config file < command-line flags.
struct RunConfig {
  std::string command;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> inputs;
  std::string mask;
  std::string output;
  std::string truth_output;
  std::string glob;
  NiftiDatatype output_type = NiftiDatatype::float32;

  SolverConfig solver;
  RestorationParams restoration;
  double tau_s = kDefaultRefinementTauS;
  DegradeConfig degrade;
  TrainConfig train;
  PriorSpec prior;
  PhantomSpec phantom;
  TrainPriorSpec train_prior;
  SampleSpec sample;
  double data_range = kDefaultDataRange;
  int ssim_window = kDefaultSsimWindow;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Overlays the keys present in `j` onto `cfg`. Unknown keys and
/// schema_version mismatches throw InvalidArgument.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Loads a config file. A provenance sidecar is accepted too: its
/// "run_config" member is used, so a sidecar reproduces its run.
nlohmann::json load_config_json(const std::string& path);

/// Throws InvalidArgument naming the first referenced input that does not exist.
void require_inputs_exist(const RunConfig& cfg);

/// Sidecar written next to every output: resolved config, provenance and report.
nlohmann::json make_sidecar(const RunConfig& cfg, const nlohmann::json& report, double wall_seconds);
void write_json(const std::string& path, const nlohmann::json& j);
/// "<output>.json" with a trailing ".nii" / ".nii.gz" removed first.
std::string sidecar_path(const std::string& output);

std::string to_string(OdeMethod m);
std::string to_string(LangevinSchedule s);

}  // namespace diffprior
