#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedesn/continual.hpp"
#include "fedesn/error.hpp"
#include "fedesn/json_io.hpp"
#include "fedesn/model_io.hpp"
#include "fedesn/readout.hpp"
#include "fedesn/reservoir.hpp"
#include "fedesn/server.hpp"
#include "fedesn/simulation.hpp"
#include "fedesn/tasks.hpp"

namespace fedesn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline std::atomic<bool> g_stop_requested{false};

inline void on_stop_signal(int) { g_stop_requested.store(true); }

inline json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json j = json::parse(buf.str(), nullptr, false);
  require(!j.is_discarded(), ErrorCode::SchemaError, "'" + path + "' is not valid JSON");
  return j;
}

/// Writes text to a file, or to stdout when path is "-".
inline void write_output(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text << std::flush;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << text;
  require(out.good(), ErrorCode::IoError, "failed writing '" + path + "'");
}

inline void write_json(const std::string& path, const json& j) { write_output(path, dump_json(j, 2) + "\n"); }

// --- subcommand bodies ---------------------------------------------------

struct GenerateArgs {
  std::string task = "narma10";
  std::int64_t steps = 1000;
  std::uint64_t seed = 1;
  std::int64_t delay = 5;
  std::string out = "-";
};

inline void run_generate(const GenerateArgs& a) {
  TaskSpec spec;
  spec.name = a.task;
  spec.delay = a.delay;
  const LabeledSeries series = generate_task(spec, a.steps, a.seed);
  std::ostringstream text;
  write_csv(text, series);
  write_output(a.out, text.str());
}

struct TrainArgs {
  std::string data;
  std::string config;
  double lambda = 1e-6;
  std::string model;
  std::string out = "-";
};

inline void run_train(const TrainArgs& a) {
  const LabeledSeries series = load_csv(a.data);
  const ReservoirConfig config = reservoir_config_from_json(read_json_file(a.config));
  require(series.input.dim() == config.input_dim, ErrorCode::DimensionMismatch,
          "data has " + std::to_string(series.input.dim()) + " input columns, config expects " +
              std::to_string(config.input_dim));
  const Reservoir reservoir(config);
  const ReadoutStats stats = harvest_series(reservoir, series);
  const Readout readout = solve_readout(stats, a.lambda);
  save_model(readout, config, a.model);
  write_json(a.out, json{{"model", a.model}, {"train", to_json(evaluate(readout, reservoir, series))}});
}

struct EvalArgs {
  std::string model;
  std::string data;
  std::string out = "-";
};

inline void run_eval(const EvalArgs& a) {
  const Model model = load_model(a.model);
  const LabeledSeries series = load_csv(a.data);
  const Reservoir reservoir(model.reservoir_config);
  require(series.target.cols() == model.readout.n_y(), ErrorCode::DimensionMismatch,
          "data target width does not match the model");
  write_json(a.out, json{{"eval", to_json(evaluate(model.readout, reservoir, series))}});
}

struct FederateArgs {
  std::string config;
  std::string out = "-";
  std::string export_shards;
};

inline void run_federate(const FederateArgs& a) {
  const SimConfig cfg = sim_config_from_json(read_json_file(a.config));
  if (!a.export_shards.empty()) {
    std::filesystem::create_directories(a.export_shards);
    const auto shards = simulation_shards(cfg);
    for (std::size_t c = 0; c < shards.size(); ++c)
      save_csv(shards[c], (std::filesystem::path(a.export_shards) /
                           (sim_client_id(static_cast<std::int64_t>(c)) + ".csv"))
                              .string());
  }
  write_json(a.out, to_json(run_simulation(cfg)));
}

/// Experience config entries either name a generator
/// ({"task", "steps", "seed", "delay", "input_gain"}) or list CSV files
/// ({"csv": [...]}).
inline std::vector<Experience> experiences_from_json(const json& list) {
  require(list.is_array() && !list.empty(), ErrorCode::SchemaError, "'experiences' must be a non-empty array");
  std::vector<Experience> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const json& e = list[i];
    Experience exp;
    exp.id = static_cast<std::int64_t>(i);
    exp.description = e.value("description", std::string());
    if (e.contains("csv")) {
      for (const auto& path : get_field<std::vector<std::string>>(e, "csv")) exp.data.push_back(load_csv(path));
    } else {
      TaskSpec spec;
      spec.name = get_field<std::string>(e, "task");
      spec.delay = e.value("delay", std::int64_t{5});
      LabeledSeries s = generate_task(spec, get_field<std::int64_t>(e, "steps"), get_field<std::uint64_t>(e, "seed"));
      const double gain = e.value("input_gain", 1.0);
      if (gain != 1.0) s = LabeledSeries(TimeSeries(s.input.values() * gain), s.target);
      exp.data.push_back(std::move(s));
    }
    out.push_back(std::move(exp));
  }
  return out;
}

struct ContinualArgs {
  std::string config;
  std::string out = "-";
};

inline void run_continual(const ContinualArgs& a) {
  const json cfg = read_json_file(a.config);
  const Reservoir reservoir(reservoir_config_from_json(field(cfg, "reservoir")));
  const double lambda = cfg.value("lambda", 1e-6);
  const auto experiences = experiences_from_json(field(cfg, "experiences"));
  std::vector<std::string> strategies{"cumulative_stats", "naive_refit"};
  if (cfg.contains("strategies")) strategies = get_field<std::vector<std::string>>(cfg, "strategies");
  json runs = json::array();
  for (const auto& name : strategies)
    runs.push_back(to_json(train_continual(reservoir, experiences, continual_strategy_from_string(name), lambda)));
  write_json(a.out, json{{"runs", std::move(runs)}});
}

struct ServeArgs {
  std::string config;
  std::string bind = "127.0.0.1:0";
  int tick_ms = 50;
  std::string out = "-";
};

inline void run_serve(const ServeArgs& a) {
  const SimConfig sim = sim_config_from_json(read_json_file(a.config));
  FederationServer server(serve_config_from(sim, a.tick_ms), net::parse_endpoint(a.bind));
  const auto ep = net::parse_endpoint(a.bind);
  // First stdout line announces the bound port (useful with port 0).
  std::cout << dump_json(json{{"listening", ep.host + ":" + std::to_string(server.port())}}) << std::endl;
  g_stop_requested = false;
  std::signal(SIGINT, on_stop_signal);
  std::signal(SIGTERM, on_stop_signal);
  const ServeResult result = server.run(g_stop_requested);
  json rounds = json::array();
  for (const auto& r : result.rounds)
    rounds.push_back({{"round", r.round},
                      {"outcome", to_string(r.outcome)},
                      {"participants", r.participants},
                      {"global_fingerprint", r.global ? json(fingerprint(*r.global)) : json(nullptr)}});
  write_json(a.out, json{{"rounds", std::move(rounds)},
                         {"final_readout", result.final_readout ? to_json(*result.final_readout) : json(nullptr)}});
  require(result.final_readout.has_value(), ErrorCode::AllRoundsFailed, "no round produced a global model");
}

struct ClientArgs {
  std::string connect;
  std::string id;
  std::vector<std::string> data;
  std::string out;
};

inline void run_client_cmd(const ClientArgs& a) {
  std::vector<LabeledSeries> local;
  for (const auto& path : a.data) local.push_back(load_csv(path));
  const ClientResult result = run_client(net::parse_endpoint(a.connect), a.id, local, &std::cerr);
  save_model(*result.global, result.reservoir_config, a.out);
}

/// Entry point of the `fedesn` tool. Exit codes: 0 success, 1 usage error,
/// 2 runtime error.
inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Federated echo state networks: train, evaluate, federate, and serve."};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Generate a synthetic task as CSV");
  generate->add_option("--task", gen.task, "narma10 | delay_recall")->check(CLI::IsMember({"narma10", "delay_recall"}));
  generate->add_option("--steps", gen.steps, "Number of steps")->required();
  generate->add_option("--seed", gen.seed, "Generator seed");
  generate->add_option("--delay", gen.delay, "Delay for delay_recall");
  generate->add_option("--out", gen.out, "Output CSV path or '-'");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a readout on a CSV series");
  train_cmd->add_option("--data", train.data, "Training CSV")->required();
  train_cmd->add_option("--config", train.config, "Reservoir config JSON")->required();
  train_cmd->add_option("--lambda", train.lambda, "Ridge coefficient");
  train_cmd->add_option("--model", train.model, "Model output path")->required();
  train_cmd->add_option("--out", train.out, "Metrics output path or '-'");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on a CSV series");
  eval_cmd->add_option("--model", ev.model, "Model file")->required();
  eval_cmd->add_option("--data", ev.data, "Evaluation CSV")->required();
  eval_cmd->add_option("--out", ev.out, "Metrics output path or '-'");

  FederateArgs fed;
  auto* federate = app.add_subcommand("federate", "Run the deterministic federation simulator");
  federate->add_option("--config", fed.config, "Simulation config JSON")->required();
  federate->add_option("--out", fed.out, "Report output path or '-'");
  federate->add_option("--export-shards", fed.export_shards, "Also write each client's shard CSV here");

  ContinualArgs cont;
  auto* continual = app.add_subcommand("continual", "Run a continual-learning experiment");
  continual->add_option("--config", cont.config, "Experiences config JSON")->required();
  continual->add_option("--out", cont.out, "Report output path or '-'");

  ServeArgs srv;
  auto* serve = app.add_subcommand("serve", "Run the aggregation server");
  serve->add_option("--config", srv.config, "Simulation config JSON (server fields)")->required();
  serve->add_option("--bind", srv.bind, "host:port to listen on (port 0 picks one)");
  serve->add_option("--tick-ms", srv.tick_ms, "Wall-clock length of one deadline tick");
  serve->add_option("--out", srv.out, "Result output path or '-'");

  ClientArgs cli;
  auto* client = app.add_subcommand("client", "Join a federation with local CSV shards");
  client->add_option("--connect", cli.connect, "Server host:port")->required();
  client->add_option("--id", cli.id, "Client id")->required();
  client->add_option("--data", cli.data, "Local CSV shard(s)")->required();
  client->add_option("--out", cli.out, "Where to save the final global model")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*generate) run_generate(gen);
    else if (*train_cmd) run_train(train);
    else if (*eval_cmd) run_eval(ev);
    else if (*federate) run_federate(fed);
    else if (*continual) run_continual(cont);
    else if (*serve) run_serve(srv);
    else if (*client) run_client_cmd(cli);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace fedesn::cli
