#include <cmath>
#include <string>

#include <json.hpp>

#include "bladefl/error.hpp"
#include "bladefl/experiment.hpp"

namespace bladefl {

using nlohmann::json;

void RunConfig::resolve() {
  if (hardware) {
    const Rates r = derive_rates(*hardware, params.n_clients);
    params.alpha = r.alpha;
    params.beta = r.beta;
  }
  params.validate_static();
  if (samples_per_client < 1) throw Error(ErrorCode::InvalidParameter, "samples_per_client must be >= 1");
  if (partition != "noniid" && partition != "iid") {
    throw Error(ErrorCode::InvalidParameter, "partition must be 'noniid' or 'iid'");
  }
  if (dataset.kind != "synth" && dataset.kind != "idx") {
    throw Error(ErrorCode::InvalidParameter, "dataset.kind must be 'synth' or 'idx'");
  }
  if (!(safety_factor >= 1.0)) throw Error(ErrorCode::InvalidParameter, "safety_factor must be >= 1");
  if (probes < 2) throw Error(ErrorCode::InvalidParameter, "probes must be >= 2");
  if (difficulty_bits > kMaxDifficultyBits) {
    throw Error(ErrorCode::InvalidParameter, "difficulty_bits must be <= " + std::to_string(kMaxDifficultyBits));
  }
  if (!(dp_noise_var >= 0.0)) throw Error(ErrorCode::InvalidParameter, "dp_noise_var must be >= 0");
  if (constants) constants->validate();
}

SimulationConfig RunConfig::simulation() const {
  SimulationConfig s;
  s.params = params;
  s.model = model;
  s.batch = batch;
  s.dp_noise_var = dp_noise_var;
  s.mining = deterministic_mining ? MiningMode::Deterministic : MiningMode::Stochastic;
  s.difficulty_bits = difficulty_bits;
  s.seed = seed;
  return s;
}

RunConfig desk_preset() {
  RunConfig c;
  c.params.n_clients = 10;
  c.params.n_lazy = 0;
  c.params.noise_var = 0.0;
  c.params.t_sum = 60.0;
  c.params.alpha = 1.0;
  c.params.beta = 4.0;
  c.params.eta = 0.05;
  c.params.rounds = 3;
  c.dataset = DatasetConfig{};
  c.samples_per_client = 200;
  c.model = ModelSpec{ModelKind::SoftmaxRegression, 256, 1e-3};
  return c;
}

RunConfig paper_preset() {
  RunConfig c = desk_preset();
  c.params.n_clients = 20;
  c.params.t_sum = 100.0;
  c.params.alpha = 1.0;
  c.params.beta = 10.0;
  c.params.eta = 0.01;
  c.params.rounds = 4;
  c.samples_per_client = 512;
  c.dataset.n_classes = 10;
  c.dataset.n_features = 784;
  c.dataset.n_samples = 20 * 512 + 10000;
  c.model = ModelSpec{ModelKind::Mlp, 256, 0.0};
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw Error(ErrorCode::InvalidParameter, "unknown preset '" + name + "'");
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& dst) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidParameter, std::string("config key '") + key + "': " + e.what());
  }
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "softmax") return ModelKind::SoftmaxRegression;
  if (s == "mlp") return ModelKind::Mlp;
  throw Error(ErrorCode::InvalidParameter, "model.kind must be 'softmax' or 'mlp'");
}

}  // namespace

RunConfig config_from_json(const std::string& json_text, RunConfig base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidParameter, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidParameter, "config must be a JSON object");
  if (j.contains("preset")) base = preset(j.at("preset").get<std::string>());

  RunConfig c = std::move(base);
  read(j, "n_clients", c.params.n_clients);
  read(j, "n_lazy", c.params.n_lazy);
  read(j, "noise_var", c.params.noise_var);
  read(j, "t_sum", c.params.t_sum);
  read(j, "alpha", c.params.alpha);
  read(j, "beta", c.params.beta);
  read(j, "eta", c.params.eta);
  read(j, "k", c.params.rounds);
  if (j.contains("hardware") && !j.at("hardware").is_null()) {
    const json& h = j.at("hardware");
    HardwareModel hw;
    read(h, "kappa", hw.mining_difficulty);
    read(h, "chi", hw.avg_cycles_per_block);
    read(h, "f", hw.cpu_rate);
    read(h, "rho", hw.cycles_per_sample);
    read(h, "d_i", hw.samples_per_client);
    c.hardware = hw;
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    read(d, "kind", c.dataset.kind);
    read(d, "n_classes", c.dataset.n_classes);
    read(d, "n_features", c.dataset.n_features);
    read(d, "n_samples", c.dataset.n_samples);
    read(d, "separation", c.dataset.separation);
    read(d, "images", c.dataset.images);
    read(d, "labels", c.dataset.labels);
  }
  read(j, "samples_per_client", c.samples_per_client);
  read(j, "partition", c.partition);
  read(j, "shards_per_client", c.shards_per_client);
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (m.contains("kind")) c.model.kind = parse_model_kind(m.at("kind").get<std::string>());
    read(m, "hidden_units", c.model.hidden_units);
    read(m, "l2_reg", c.model.l2_reg);
  }
  read(j, "batch", c.batch);
  read(j, "dp_noise_var", c.dp_noise_var);
  read(j, "difficulty_bits", c.difficulty_bits);
  read(j, "deterministic_mining", c.deterministic_mining);
  read(j, "seed", c.seed);
  if (j.contains("constants") && !j.at("constants").is_null()) {
    const json& k = j.at("constants");
    BoundConstants bc = c.constants.value_or(BoundConstants{});
    read(k, "xi", bc.xi);
    read(k, "L", bc.L);
    read(k, "delta", bc.delta);
    read(k, "phi", bc.phi);
    read(k, "theta", bc.theta);
    if (k.contains("epsilon_sq") && !k.at("epsilon_sq").is_null()) bc.epsilon_sq = k.at("epsilon_sq").get<double>();
    c.constants = bc;
  }
  if (j.contains("theta") && !j.at("theta").is_null()) c.theta = j.at("theta").get<double>();
  read(j, "k_min", c.k_min);
  read(j, "probes", c.probes);
  read(j, "safety_factor", c.safety_factor);
  c.resolve();
  return c;
}

std::string config_to_json(const RunConfig& c, int indent) {
  json j;
  j["n_clients"] = c.params.n_clients;
  j["n_lazy"] = c.params.n_lazy;
  j["noise_var"] = c.params.noise_var;
  j["t_sum"] = c.params.t_sum;
  j["alpha"] = c.params.alpha;
  j["beta"] = c.params.beta;
  j["eta"] = c.params.eta;
  j["k"] = c.params.rounds;
  if (c.hardware) {
    j["hardware"] = {{"kappa", c.hardware->mining_difficulty},
                     {"chi", c.hardware->avg_cycles_per_block},
                     {"f", c.hardware->cpu_rate},
                     {"rho", c.hardware->cycles_per_sample},
                     {"d_i", c.hardware->samples_per_client}};
  }
  j["dataset"] = {{"kind", c.dataset.kind},           {"n_classes", c.dataset.n_classes},
                  {"n_features", c.dataset.n_features}, {"n_samples", c.dataset.n_samples},
                  {"separation", c.dataset.separation}, {"images", c.dataset.images},
                  {"labels", c.dataset.labels}};
  j["samples_per_client"] = c.samples_per_client;
  j["partition"] = c.partition;
  j["shards_per_client"] = c.shards_per_client;
  j["model"] = {{"kind", c.model.kind == ModelKind::Mlp ? "mlp" : "softmax"},
                {"hidden_units", c.model.hidden_units},
                {"l2_reg", c.model.l2_reg}};
  j["batch"] = c.batch;
  j["dp_noise_var"] = c.dp_noise_var;
  j["difficulty_bits"] = c.difficulty_bits;
  j["deterministic_mining"] = c.deterministic_mining;
  j["seed"] = c.seed;
  if (c.constants) {
    json k = {{"xi", c.constants->xi}, {"L", c.constants->L},     {"delta", c.constants->delta},
              {"phi", c.constants->phi}, {"theta", c.constants->theta}};
    if (c.constants->epsilon_sq) k["epsilon_sq"] = *c.constants->epsilon_sq;
    j["constants"] = k;
  }
  if (c.theta) j["theta"] = *c.theta;
  j["k_min"] = c.k_min;
  j["probes"] = c.probes;
  j["safety_factor"] = c.safety_factor;
  return j.dump(indent);
}

}  // namespace bladefl
