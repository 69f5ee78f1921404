#include "doctest.h"

#include "diffprior/config.hpp"
#include "diffprior/error.hpp"
#include "helpers.hpp"

using namespace diffprior;
using nlohmann::json;

TEST_CASE("defaults follow the documented values") {
  const RunConfig c;
  CHECK(c.solver.annealing_steps == 50);
  CHECK(c.solver.sigma_max == 100.0);
  CHECK(c.solver.sigma_min == 0.1);
  CHECK(c.solver.ode_steps == 5);
  CHECK(c.solver.langevin_steps == 20);
  CHECK(c.solver.langevin_eta == 1e-4);
  CHECK(c.solver.eta_decay_ratio == 0.01);
  CHECK(c.tau_s == 0.05);
  CHECK(c.train.p_mean == -1.2);
  CHECK(c.train.ema_decay == 0.9999);
  CHECK(c.data_range == 2.0);
}

TEST_CASE("JSON round trip") {
  RunConfig c;
  c.command = "restore";
  c.seed = 17;
  c.inputs = {"a.nii"};
  c.output = "out.nii.gz";
  c.solver.tau_y = 0.025;
  c.solver.eta_schedule = LangevinSchedule::inner_geometric;
  c.solver.ode_method = OdeMethod::heun;
  c.solver.bias.order = 3;
  c.restoration.factors = {1.6, 1.6, 5.0};
  c.restoration.profile = SliceProfile{{0, 0, 5}};
  Affine a = Affine::Identity();
  a(0, 3) = 2.5;
  c.restoration.alignment = a;
  c.prior = {"gmm", 0.0, 1.0, "gmm.json"};
  c.train_prior.hidden = {16, 8};
  c.output_type = NiftiDatatype::int16;
  const json j = to_json(c);
  CHECK(j.at("schema_version") == kSchemaVersion);
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(*back.restoration.alignment == a);
  CHECK(back.solver.tau_y == 0.025);
}

TEST_CASE("overlay order gives flags precedence over files over defaults") {
  RunConfig c;
  apply_json(c, json::parse(R"({"solver": {"tau_y": 0.1, "langevin_steps": 7}, "seed": 3})"));
  apply_json(c, json::parse(R"({"solver": {"tau_y": 0.025}})"));
  CHECK(*c.solver.tau_y == 0.025);
  CHECK(c.solver.langevin_steps == 7);
  CHECK(c.solver.annealing_steps == 50);
  CHECK(*c.seed == 3);
}

TEST_CASE("invalid configs are rejected") {
  RunConfig c;
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"solvr": {}})")), InvalidArgument);
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"solver": {"tauy": 1}})")), InvalidArgument);
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"schema_version": 2})")), InvalidArgument);
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"solver": {"langevin_steps": "many"}})")), InvalidArgument);
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"restoration": {"factors": [1, 2]}})")), InvalidArgument);
  CHECK_THROWS_AS(apply_json(c, json::parse(R"({"solver": {"ode_method": "rk4"}})")), InvalidArgument);
}

TEST_CASE("sidecars reload as configs") {
  const auto dir = testutil::temp_dir("config_sidecar");
  RunConfig c;
  c.command = "refine";
  c.seed = 99;
  c.tau_s = 0.5;
  const json side = make_sidecar(c, json{{"ok", true}}, 1.5);
  CHECK(side.at("provenance").at("seed") == 99);
  CHECK(side.at("provenance").contains("eigen"));
  const std::string path = (dir / "run.sidecar.json").string();
  write_json(path, side);
  const RunConfig back = run_config_from_json(load_config_json(path));
  CHECK(back.tau_s == 0.5);
  CHECK(*back.seed == 99);
  CHECK(sidecar_path("x/out.nii.gz") == "x/out.sidecar.json");
  CHECK(sidecar_path("model.bin") == "model.sidecar.json");
}

TEST_CASE("referenced inputs must exist") {
  RunConfig c;
  c.inputs = {"/nonexistent/volume.nii"};
  try {
    require_inputs_exist(c);
    FAIL("expected InvalidArgument");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("/nonexistent/volume.nii") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config_json("/nonexistent/cfg.json"), InvalidArgument);
}
