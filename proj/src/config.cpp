#include "lingo/config.hpp"

#include <fstream>

#include "json.hpp"

namespace lingo {

using nlohmann::json;

RunConfig RunConfig::from_profile(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "desk") {
    c.dims = AgentDims::desk();
    c.train.learning_rate = 0.01;
    // at desk learning rates the epsilon floor must dominate the
    // weight-decay term for entries whose gradient is momentarily zero
    c.train.adagrad_epsilon = 1e-3;
    c.train.iterations = 2000;
    c.train_manifest = "preset:desk_train";
    c.test_manifest = "preset:desk_test";
  } else if (profile == "paper") {
    c.dims = AgentDims::paper();
    c.train.learning_rate = 1e-5;
    c.train.iterations = 200000;
    c.train.probe_every = 1000;
    c.train_manifest = "preset:animal";
    c.test_manifest = "preset:fruit";
    c.checkpoint_every = 10000;
  } else {
    throw ConfigError("unknown profile: " + profile);
  }
  return c;
}

namespace {

void apply_dims(AgentDims& d, const json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "embed") d.embed = it->get<int>();
    else if (k == "state") d.state = it->get<int>();
    else if (k == "key") d.key = it->get<int>();
    else if (k == "mem_slots") d.mem_slots = it->get<int>();
    else if (k == "read_temp") d.read_temp = it->get<double>();
    else if (k == "usage_decay") d.usage_decay = it->get<double>();
    else if (k == "image_size") d.image_size = it->get<int>();
    else if (k == "conv_channels") d.conv_channels = it->get<std::vector<int>>();
    else if (k == "enc_fc") d.enc_fc = it->get<std::vector<int>>();
    else if (k == "controller_hidden")
      d.controller_hidden = it->get<std::vector<int>>();
    else if (k == "fusion_hidden") d.fusion_hidden = it->get<std::vector<int>>();
    else if (k == "gmem_hidden") d.gmem_hidden = it->get<std::vector<int>>();
    else if (k == "value_hidden") d.value_hidden = it->get<std::vector<int>>();
    else if (k == "extract_state") d.extract_state = it->get<int>();
    else if (k == "extract_out") d.extract_out = it->get<int>();
    else if (k == "fmlp_hidden") d.fmlp_hidden = it->get<int>();
    else if (k == "max_len") d.max_len = it->get<int>();
    else throw ConfigError("unknown dims key: " + k);
  }
}

void apply_key(RunConfig& c, const std::string& k, const json& v) {
  try {
    if (k == "profile") {
      // handled before field application
    } else if (k == "mode") c.train.mode = mode_from_string(v.get<std::string>());
    else if (k == "task") c.train.task = task_from_string(v.get<std::string>());
    else if (k == "seed") c.train.seed = v.get<std::uint64_t>();
    else if (k == "iterations") c.train.iterations = v.get<int>();
    else if (k == "batch_size") c.train.batch_size = v.get<int>();
    else if (k == "learning_rate") c.train.learning_rate = v.get<double>();
    else if (k == "weight_decay") c.train.weight_decay = v.get<double>();
    else if (k == "adagrad_decay") c.train.adagrad_decay = v.get<double>();
    else if (k == "adagrad_epsilon") c.train.adagrad_epsilon = v.get<double>();
    else if (k == "gamma") c.train.gamma = v.get<double>();
    else if (k == "lambda") c.train.lambda = v.get<double>();
    else if (k == "replay_capacity") c.train.replay_capacity = v.get<int>();
    else if (k == "replay_sample") c.train.replay_sample = v.get<int>();
    else if (k == "replay_imitation") c.train.replay_imitation = v.get<bool>();
    else if (k == "replay_reinforce") c.train.replay_reinforce = v.get<bool>();
    else if (k == "target_sync") c.train.target_sync = v.get<int>();
    else if (k == "gaussian_sigma") c.train.gaussian_sigma = v.get<double>();
    else if (k == "probe_every") c.train.probe_every = v.get<int>();
    else if (k == "probe_sessions") c.train.probe_sessions = v.get<int>();
    else if (k == "threads") c.train.threads = v.get<int>();
    else if (k == "max_steps") c.env.max_steps = v.get<int>();
    else if (k == "variation_ratio") c.env.variation_ratio = v.get<double>();
    else if (k == "strict_question_success")
      c.env.strict_question_success = v.get<bool>();
    else if (k == "train_manifest") c.train_manifest = v.get<std::string>();
    else if (k == "test_manifest") c.test_manifest = v.get<std::string>();
    else if (k == "out_dir") c.out_dir = v.get<std::string>();
    else if (k == "checkpoint_every") c.checkpoint_every = v.get<int>();
    else if (k == "dims") apply_dims(c.dims, v);
    else throw ConfigError("unknown config key: " + k);
  } catch (const json::exception& e) {
    throw ConfigError("bad value for config key '" + k + "': " + e.what());
  }
}

json parse_override_value(const std::string& raw) {
  json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(raw);  // plain string
  return v;
}

}  // namespace

RunConfig RunConfig::load(const std::string& config_path,
                          const std::vector<std::string>& overrides,
                          const std::string& profile_flag) {
  json file = json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot read config file: " + config_path);
    try {
      f >> file;
    } catch (const json::exception& e) {
      throw ConfigError("config file is not valid JSON: " +
                        std::string(e.what()));
    }
  }

  std::string profile = "desk";
  if (file.contains("profile")) profile = file["profile"].get<std::string>();
  if (!profile_flag.empty()) profile = profile_flag;

  RunConfig c = from_profile(profile);
  for (auto it = file.begin(); it != file.end(); ++it)
    apply_key(c, it.key(), it.value());

  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got: " + kv);
    std::string key = kv.substr(0, eq);
    json value = parse_override_value(kv.substr(eq + 1));
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      if (key.substr(0, dot) != "dims")
        throw ConfigError("unknown config section: " + key.substr(0, dot));
      json wrap = json::object();
      wrap[key.substr(dot + 1)] = value;
      apply_key(c, "dims", wrap);
    } else {
      apply_key(c, key, value);
    }
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError(what); };
  if (train.batch_size < 1) bad("batch_size must be >= 1");
  if (train.iterations < 0) bad("iterations must be >= 0");
  if (train.gamma <= 0.0 || train.gamma > 1.0)
    bad("gamma must be in (0, 1]");
  if (train.lambda <= 0.0 || train.lambda > 1.0)
    bad("lambda must be in (0, 1]");
  if (env.variation_ratio < 0.0 || env.variation_ratio > 1.0)
    bad("variation_ratio must be in [0, 1]");
  if (env.max_steps < 1) bad("max_steps must be >= 1");
  if (train.replay_capacity < 1) bad("replay_capacity must be >= 1");
  if (train.replay_sample < 0) bad("replay_sample must be >= 0");
  if (train.threads < 1) bad("threads must be >= 1");
  if (dims.max_len < 1) bad("dims.max_len must be >= 1");
  if (train.probe_sessions < 1) bad("probe_sessions must be >= 1");
}

std::string RunConfig::to_json() const {
  json j;
  j["profile"] = profile;
  j["mode"] = mode_name(train.mode);
  j["task"] = task_name(train.task);
  j["seed"] = train.seed;
  j["iterations"] = train.iterations;
  j["batch_size"] = train.batch_size;
  j["learning_rate"] = train.learning_rate;
  j["weight_decay"] = train.weight_decay;
  j["adagrad_decay"] = train.adagrad_decay;
  j["adagrad_epsilon"] = train.adagrad_epsilon;
  j["gamma"] = train.gamma;
  j["lambda"] = train.lambda;
  j["replay_capacity"] = train.replay_capacity;
  j["replay_sample"] = train.replay_sample;
  j["replay_imitation"] = train.replay_imitation;
  j["replay_reinforce"] = train.replay_reinforce;
  j["target_sync"] = train.target_sync;
  j["gaussian_sigma"] = train.gaussian_sigma;
  j["probe_every"] = train.probe_every;
  j["probe_sessions"] = train.probe_sessions;
  j["threads"] = train.threads;
  j["max_steps"] = env.max_steps;
  j["variation_ratio"] = env.variation_ratio;
  j["strict_question_success"] = env.strict_question_success;
  j["train_manifest"] = train_manifest;
  j["test_manifest"] = test_manifest;
  j["out_dir"] = out_dir;
  j["checkpoint_every"] = checkpoint_every;
  json d;
  d["embed"] = dims.embed;
  d["state"] = dims.state;
  d["key"] = dims.key;
  d["mem_slots"] = dims.mem_slots;
  d["read_temp"] = dims.read_temp;
  d["usage_decay"] = dims.usage_decay;
  d["image_size"] = dims.image_size;
  d["conv_channels"] = dims.conv_channels;
  d["enc_fc"] = dims.enc_fc;
  d["controller_hidden"] = dims.controller_hidden;
  d["fusion_hidden"] = dims.fusion_hidden;
  d["gmem_hidden"] = dims.gmem_hidden;
  d["value_hidden"] = dims.value_hidden;
  d["extract_state"] = dims.extract_state;
  d["extract_out"] = dims.extract_out;
  d["fmlp_hidden"] = dims.fmlp_hidden;
  d["max_len"] = dims.max_len;
  j["dims"] = d;
  return j.dump(2);
}

std::uint64_t RunConfig::hash() const {
  const std::string s = to_json();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

DatasetManifest RunConfig::resolve_manifest(const std::string& spec) const {
  if (spec.rfind("preset:", 0) == 0)
    return DatasetManifest::preset(spec.substr(7));
  std::ifstream probe(spec);
  if (!probe) throw ConfigError("dataset manifest not found: " + spec);
  probe.close();
  return DatasetManifest::load(spec);
}

}  // namespace lingo
