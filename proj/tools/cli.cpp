#include "cli.hpp"

#include "dglight/baselines.hpp"
#include "dglight/critic.hpp"
#include "dglight/error.hpp"
#include "dglight/grpo.hpp"
#include "dglight/jsgrpo.hpp"
#include "dglight/network_io.hpp"
#include "dglight/pipeline.hpp"
#include "dglight/rollout.hpp"
#include "dglight/seed.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

namespace dglight::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Flags {
  std::optional<std::string> config, grid, network, flow, out, llm_url, controller, critic, policy,
      records;
  std::optional<std::uint64_t> seed;
  std::optional<int> episode, interval, k, horizon, rounds, episodes;
  std::optional<double> gamma, alpha, beta;
  bool cheap = false;
};

json demand_to_json(const DemandProfile& d) {
  return {{"ew_through_headway", d.ew_through_headway}, {"ns_through_headway", d.ns_through_headway},
          {"left_headway", d.left_headway},             {"right_headway", d.right_headway},
          {"start", d.start},                           {"end", d.end}};
}

DemandProfile demand_from_json(const json& j) {
  DemandProfile d;
  d.ew_through_headway = j.value("ew_through_headway", d.ew_through_headway);
  d.ns_through_headway = j.value("ns_through_headway", d.ns_through_headway);
  d.left_headway = j.value("left_headway", d.left_headway);
  d.right_headway = j.value("right_headway", d.right_headway);
  d.start = j.value("start", d.start);
  d.end = j.value("end", d.end);
  return d;
}

json default_config() {
  json critic = critic_config_to_json(CriticConfig{});
  for (const char* k : {"episode_s", "interval_s", "seed"}) critic.erase(k);
  json grpo = grpo_config_to_json(GRPOConfig{});
  grpo.erase("seed");
  grpo.erase("r_invalid");
  return {{"seed", 0},
          {"episode_s", 3600},
          {"interval_s", 30},
          {"grid", "1x1"},
          {"lane_length", 300.0},
          {"network", nullptr},
          {"flow", nullptr},
          {"demand", demand_to_json(DemandProfile{})},
          {"controller", "maxpressure"},
          {"critic", critic},
          {"critic_rounds", 20},
          {"critic_path", nullptr},
          {"rollout", {{"k", 4}, {"r_invalid", 0.0}}},
          {"grpo", grpo},
          {"episodes", 2},
          {"policy_path", nullptr},
          {"records_path", nullptr},
          {"js", js_config_to_json(JSConfig{})},
          {"llm", {{"url", ""}, {"model", "dglight"}, {"timeout_s", 60.0}}}};
}

// Like merge_patch, but null is a value rather than a deletion.
void overlay(json& base, const json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      overlay(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

// Defaults, then the config file, then flags.
json resolve_config(const Flags& f) {
  json cfg = default_config();
  if (f.config) {
    const json file = read_json_file(*f.config);
    if (!file.is_object()) throw SchemaError(*f.config + ": config must be a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!cfg.contains(key)) throw SchemaError(*f.config + ": unknown config key '" + key + "'");
    }
    overlay(cfg, file);
  }
  if (f.seed) cfg["seed"] = *f.seed;
  if (f.episode) cfg["episode_s"] = *f.episode;
  if (f.interval) cfg["interval_s"] = *f.interval;
  if (f.grid) {
    cfg["grid"] = *f.grid;
    cfg["network"] = nullptr;
    cfg["flow"] = nullptr;
  }
  if (f.network) cfg["network"] = *f.network;
  if (f.flow) cfg["flow"] = *f.flow;
  if (f.controller) cfg["controller"] = *f.controller;
  if (f.critic) cfg["critic_path"] = *f.critic;
  if (f.policy) cfg["policy_path"] = *f.policy;
  if (f.records) cfg["records_path"] = *f.records;
  if (f.rounds) cfg["critic_rounds"] = *f.rounds;
  if (f.episodes) cfg["episodes"] = *f.episodes;
  if (f.k) cfg["rollout"]["k"] = *f.k;
  if (f.horizon) cfg["js"]["horizon"] = *f.horizon;
  if (f.gamma) cfg["js"]["gamma"] = *f.gamma;
  if (f.alpha) cfg["js"]["alpha"] = *f.alpha;
  if (f.beta) cfg["js"]["beta"] = *f.beta;
  if (f.cheap) cfg["js"]["cheap"] = true;
  if (f.llm_url) cfg["llm"]["url"] = *f.llm_url;
  return cfg;
}

std::pair<int, int> parse_grid(const std::string& spec) {
  int rows = 0;
  int cols = 0;
  char x = 0;
  char extra = 0;
  if (std::sscanf(spec.c_str(), "%d%c%d%c", &rows, &x, &cols, &extra) != 3 || (x != 'x' && x != 'X') ||
      rows < 1 || cols < 1) {
    throw Error("--grid expects RxC, e.g. 3x4; got '" + spec + "'");
  }
  return {rows, cols};
}

std::optional<std::string> opt_string(const json& cfg, const char* key) {
  const auto& v = cfg.at(key);
  if (v.is_null()) return std::nullopt;
  return v.get<std::string>();
}

// Network plus a per-salt environment builder.
struct Scenario {
  std::shared_ptr<const RoadNetwork> net;
  std::string dataset;
  std::function<SimState(std::uint64_t salt)> make;
};

Scenario load_scenario(const json& cfg) {
  Scenario s;
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  if (auto net_path = opt_string(cfg, "network")) {
    auto flow_path = opt_string(cfg, "flow");
    if (!flow_path) throw Error("--network needs a matching --flow file");
    s.net = std::make_shared<const RoadNetwork>(network_from_json(read_json_file(*net_path)));
    const FlowSpec flow = flow_from_json(*s.net, read_json_file(*flow_path));
    s.dataset = fs::path(*net_path).stem().string();
    auto net = s.net;
    s.make = [net, flow, seed](std::uint64_t) { return SimState(net, flow, {}, seed); };
    return s;
  }
  const auto [rows, cols] = parse_grid(cfg.at("grid").get<std::string>());
  s.net = std::make_shared<const RoadNetwork>(
      RoadNetwork::grid(rows, cols, cfg.at("lane_length").get<double>()));
  s.dataset = "grid" + std::to_string(rows) + "x" + std::to_string(cols);
  const DemandProfile demand = demand_from_json(cfg.at("demand"));
  auto net = s.net;
  s.make = [net, demand, seed](std::uint64_t salt) {
    const std::uint64_t env_seed = derive_seed(seed, {salt});
    return SimState(net, synthetic_flow(*net, demand, env_seed), {}, env_seed);
  };
  return s;
}

EpisodeSpec episode_of(const json& cfg) {
  EpisodeSpec e;
  e.episode_s = cfg.at("episode_s").get<int>();
  e.interval_s = cfg.at("interval_s").get<int>();
  e.decisions();
  return e;
}

CriticConfig critic_config_of(const json& cfg) {
  CriticConfig c = critic_config_from_json(cfg.at("critic"));
  c.episode = episode_of(cfg);
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

RolloutConfig rollout_config_of(const json& cfg) {
  RolloutConfig r;
  r.k = cfg.at("rollout").value("k", r.k);
  r.r_invalid = cfg.at("rollout").value("r_invalid", r.r_invalid);
  r.episode = episode_of(cfg);
  r.seed = cfg.at("seed").get<std::uint64_t>();
  r.validate();
  return r;
}

GRPOConfig grpo_config_of(const json& cfg) {
  json g = cfg.at("grpo");
  g["seed"] = cfg.at("seed");
  g["r_invalid"] = cfg.at("rollout").value("r_invalid", 0.0);
  return grpo_config_from_json(g);
}

LlmEndpoint endpoint_of(const json& cfg) {
  LlmEndpoint e;
  const json& l = cfg.at("llm");
  e.base_url = l.value("url", "");
  e.model = l.value("model", e.model);
  e.timeout_s = l.value("timeout_s", e.timeout_s);
  return e;
}

MockPolicyParams mock_policy_of(const json& cfg) {
  if (auto p = opt_string(cfg, "policy_path")) return load_mock_policy(*p);
  return MockPolicyParams{};
}

FrozenCritic critic_of(const json& cfg) {
  auto p = opt_string(cfg, "critic_path");
  if (!p) throw Error("this command needs a trained critic (--critic FILE)");
  return load_critic(*p);
}

std::unique_ptr<Policy> policy_of(const json& cfg, const std::string& kind) {
  const SamplingParams sampling = sampling_from_json(cfg.at("grpo").value("sampling", json::object()));
  if (kind == "mock-policy") return std::make_unique<MockPolicy>(mock_policy_of(cfg), sampling);
  if (kind == "llm") return std::make_unique<LlmPolicy>(endpoint_of(cfg), sampling);
  throw Error("unknown policy controller '" + kind + "' (expected mock-policy or llm)");
}

fs::path prepare_out(const Flags& f, const json& cfg) {
  const fs::path out = f.out.value_or("dglight_out");
  fs::create_directories(out);
  write_json_file(out / "config.json", cfg);
  return out;
}

std::string csv_header() { return "controller,dataset,seed,att,aql,awt"; }

std::string csv_row(const std::string& controller, const std::string& dataset, std::uint64_t seed,
                    const MetricsReport& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%s,%llu,%.6f,%.6f,%.6f", controller.c_str(), dataset.c_str(),
                static_cast<unsigned long long>(seed), m.att, m.aql, m.awt);
  return buf;
}

void write_metrics(const fs::path& out, const std::string& controller, const Scenario& sc,
                   std::uint64_t seed, const MetricsReport& m, std::ostream& os) {
  write_json_file(out / "metrics.json", {{"controller", controller},
                                         {"dataset", sc.dataset},
                                         {"seed", seed},
                                         {"att", m.att},
                                         {"aql", m.aql},
                                         {"awt", m.awt}});
  std::ofstream csv(out / "metrics.csv");
  csv << csv_header() << '\n' << csv_row(controller, sc.dataset, seed, m) << '\n';
  if (!csv) throw Error("cannot write " + (out / "metrics.csv").string());
  os << csv_header() << '\n' << csv_row(controller, sc.dataset, seed, m) << '\n';
}

int cmd_gen_net(const Flags& f, std::ostream& os) {
  const json cfg = resolve_config(f);
  const Scenario sc = load_scenario(cfg);
  const fs::path out = prepare_out(f, cfg);
  const SimState env = sc.make(0);
  write_json_file(out / "network.json", network_to_json(*sc.net));
  write_json_file(out / "flow.json", flow_to_json(*sc.net, env.flow()));
  os << "wrote " << (out / "network.json").string() << " and " << (out / "flow.json").string() << '\n';
  return 0;
}

int cmd_import_cityflow(const Flags& f, std::ostream& os, std::ostream& err) {
  if (!f.network || !f.flow) throw Error("import-cityflow needs --network ROADNET --flow FLOW");
  json cfg = resolve_config(f);
  const CityFlowImport imp = import_cityflow(read_json_file(*f.network), read_json_file(*f.flow));
  const fs::path out = prepare_out(f, cfg);
  write_json_file(out / "network.json", network_to_json(imp.network));
  write_json_file(out / "flow.json", flow_to_json(imp.network, imp.flow));
  std::ofstream w(out / "warnings.txt");
  for (const auto& msg : imp.warnings) {
    w << msg << '\n';
    err << "warning: " << msg << '\n';
  }
  os << "imported " << imp.network.controlled().size() << " intersections, " << imp.flow.entries.size()
     << " flow entries\n";
  return 0;
}

Controller controller_of(const json& cfg, const std::string& name, std::unique_ptr<Policy>& holder) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  if (name == "fixedtime") return fixed_time_controller();
  if (name == "maxpressure") return max_pressure_controller();
  if (name == "random") return random_controller(seed);
  if (name == "critic-greedy") return critic_greedy_controller(critic_of(cfg));
  if (name == "mock-policy" || name == "llm") {
    holder = policy_of(cfg, name);
    return policy_controller(*holder, derive_seed(seed, {0x6576616c}));
  }
  throw Error("unknown controller '" + name + "'");
}

int cmd_eval(const Flags& f, std::ostream& os, bool baselines_only) {
  const json cfg = resolve_config(f);
  const std::string name = cfg.at("controller").get<std::string>();
  if (baselines_only && name != "fixedtime" && name != "maxpressure" && name != "random") {
    throw Error("baseline expects --controller fixedtime, maxpressure or random");
  }
  const Scenario sc = load_scenario(cfg);
  std::unique_ptr<Policy> holder;
  const Controller ctl = controller_of(cfg, name, holder);
  const fs::path out = prepare_out(f, cfg);
  SimState env = sc.make(0);
  const MetricsReport m = run_episode(env, ctl, episode_of(cfg));
  write_metrics(out, name, sc, cfg.at("seed").get<std::uint64_t>(), m, os);
  return 0;
}

int cmd_train_critic(const Flags& f, std::ostream& os) {
  const json cfg = resolve_config(f);
  const Scenario sc = load_scenario(cfg);
  const CriticConfig cc = critic_config_of(cfg);
  const int rounds = cfg.at("critic_rounds").get<int>();
  const fs::path out = prepare_out(f, cfg);
  std::ofstream curve(out / "loss.csv");
  curve << "round,epsilon,mean_loss,skipped,buffer,train_att,greedy_att\n";
  const TrainResult res = train_critic(
      [&](int round) { return sc.make(1000 + static_cast<std::uint64_t>(round)); }, cc, rounds,
      [&](const RoundLog& l) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%d,%zu,%.6f,%.6f", l.round, l.epsilon, l.mean_loss,
                      l.skipped_update ? 1 : 0, l.buffer_size, l.train_metrics.att,
                      l.greedy_metrics.att);
        curve << buf << '\n';
        os << "round " << l.round << ": loss " << l.mean_loss << ", greedy att " << l.greedy_metrics.att
           << '\n';
      });
  save_critic(out / "critic.json", res.params, cc);
  os << "wrote " << (out / "critic.json").string() << '\n';
  return 0;
}

int cmd_rollout(const Flags& f, std::ostream& os) {
  const json cfg = resolve_config(f);
  const Scenario sc = load_scenario(cfg);
  const FrozenCritic critic = critic_of(cfg);
  std::string kind = cfg.at("controller").get<std::string>();
  if (kind != "llm") kind = "mock-policy";
  const auto policy = policy_of(cfg, kind);
  const RolloutConfig rc = rollout_config_of(cfg);
  const fs::path out = prepare_out(f, cfg);
  const EpisodeResult ep = collect_episode(sc.make(0), *policy, critic, rc);
  persist_records(ep.records, out / "records.jsonl", ep.truncated);
  write_metrics(out, "rollout-" + kind, sc, rc.seed, ep.metrics, os);
  os << "wrote " << ep.records.size() << " records to " << (out / "records.jsonl").string() << '\n';
  if (ep.truncated) {
    os << "rollout truncated: " << ep.error << '\n';
    return 1;
  }
  return 0;
}

void write_diag(std::ostream& csv, int episode, const GrpoStepLog& l) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f", episode, l.epoch, l.step,
                l.mean_reward, l.diagnostics.surrogate, l.diagnostics.mean_ratio,
                l.diagnostics.clipped_fraction, l.diagnostics.kl);
  csv << buf << '\n';
}

int cmd_grpo_train(const Flags& f, std::ostream& os) {
  const json cfg = resolve_config(f);
  const GRPOConfig gc = grpo_config_of(cfg);
  const fs::path out = prepare_out(f, cfg);
  std::ofstream diag(out / "grpo.csv");
  diag << "episode,epoch,step,mean_reward,surrogate,mean_ratio,clipped_fraction,kl\n";
  MockPolicyParams policy = mock_policy_of(cfg);

  if (auto records = opt_string(cfg, "records_path")) {
    const RecordFile file = load_record_file(*records);
    const auto entries = to_entries(file.records, gc.r_invalid);
    export_dataset(entries, out / "dataset.jsonl");
    policy = grpo_train(std::move(policy), entries, gc,
                        [&](const GrpoStepLog& l) { write_diag(diag, 0, l); });
  } else {
    const Scenario sc = load_scenario(cfg);
    const FrozenCritic critic = critic_of(cfg);
    const RolloutConfig rc = rollout_config_of(cfg);
    int current = 0;
    PipelineResult res = run_pipeline(
        [&](int e) { return sc.make(2000 + static_cast<std::uint64_t>(e)); }, critic, std::move(policy),
        rc, gc, cfg.at("episodes").get<int>(),
        [&](int e, const EpisodeResult& ep) {
          current = e;
          persist_records(ep.records, out / ("records_" + std::to_string(e) + ".jsonl"));
          os << "episode " << e << ": " << ep.records.size() << " records, att " << ep.metrics.att << '\n';
        },
        [&](const GrpoStepLog& l) { write_diag(diag, current, l); });
    policy = std::move(res.policy);
  }
  save_mock_policy(out / "policy.json", policy);
  os << "wrote " << (out / "policy.json").string() << '\n';
  return 0;
}

int cmd_jsgrpo_rollout(const Flags& f, std::ostream& os) {
  const json cfg = resolve_config(f);
  const Scenario sc = load_scenario(cfg);
  std::string kind = cfg.at("controller").get<std::string>();
  if (kind != "llm") kind = "mock-policy";
  const auto policy = policy_of(cfg, kind);
  const RolloutConfig rc = rollout_config_of(cfg);
  const JSConfig js = js_config_from_json(cfg.at("js"));
  const fs::path out = prepare_out(f, cfg);
  const EpisodeResult ep = collect_js_episode(sc.make(0), *policy, rc, js);
  persist_records(ep.records, out / "js_records.jsonl", ep.truncated);
  write_metrics(out, "jsgrpo-h" + std::to_string(js.horizon), sc, rc.seed, ep.metrics, os);
  os << "wrote " << ep.records.size() << " records to " << (out / "js_records.jsonl").string() << '\n';
  if (ep.truncated) {
    os << "rollout truncated: " << ep.error << '\n';
    return 1;
  }
  return 0;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config file; flags override its values");
  sub->add_option("--seed", f.seed, "Random seed");
  sub->add_option("--grid", f.grid, "Synthetic grid RxC");
  sub->add_option("--network", f.network, "Network file");
  sub->add_option("--flow", f.flow, "Flow file");
  sub->add_option("--episode", f.episode, "Episode length, seconds");
  sub->add_option("--interval", f.interval, "Action interval, seconds");
  sub->add_option("--out", f.out, "Output directory");
  sub->add_option("--controller", f.controller,
                  "fixedtime, maxpressure, random, critic-greedy, mock-policy or llm");
  sub->add_option("--critic", f.critic, "Critic checkpoint");
  sub->add_option("--policy", f.policy, "Mock policy checkpoint");
  sub->add_option("--records", f.records, "Rollout record file");
  sub->add_option("--rounds", f.rounds, "Critic training rounds");
  sub->add_option("--episodes", f.episodes, "Collect/train episodes");
  sub->add_option("--k", f.k, "Candidates per intersection");
  sub->add_option("--horizon", f.horizon, "Joint-scored horizon, intervals");
  sub->add_option("--gamma", f.gamma, "Joint-scored discount");
  sub->add_option("--alpha", f.alpha, "Local congestion weight");
  sub->add_option("--beta", f.beta, "Neighbour congestion weight");
  sub->add_flag("--cheap", f.cheap, "Use max_pressure for interior fork steps");
  sub->add_option("--llm-url", f.llm_url, "Completion endpoint (default $DGLIGHT_LLM_URL)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Traffic signal control with critic-scored policy optimisation", "dglight"};
  app.require_subcommand(1);
  Flags f;
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"gen-net", "Write a synthetic grid network and flow"},
      {"import-cityflow", "Convert CityFlow roadnet/flow files"},
      {"baseline", "Run a classical controller"},
      {"train-critic", "Train the graph-attention critic"},
      {"rollout", "Collect critic-scored rollout records"},
      {"grpo-train", "Train the mock policy with GRPO"},
      {"jsgrpo-rollout", "Collect joint-scored rollout records"},
      {"eval", "Evaluate any controller"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help), f);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "gen-net") return cmd_gen_net(f, out);
    if (cmd == "import-cityflow") return cmd_import_cityflow(f, out, err);
    if (cmd == "baseline") return cmd_eval(f, out, true);
    if (cmd == "eval") return cmd_eval(f, out, false);
    if (cmd == "train-critic") return cmd_train_critic(f, out);
    if (cmd == "rollout") return cmd_rollout(f, out);
    if (cmd == "grpo-train") return cmd_grpo_train(f, out);
    if (cmd == "jsgrpo-rollout") return cmd_jsgrpo_rollout(f, out);
  } catch (const std::exception& e) {
    err << "dglight " << cmd << ": " << e.what() << '\n';
    return 2;
  }
  return 2;
}

}  // namespace dglight::cli
