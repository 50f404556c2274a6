// privstream: command-line front end for the privacy-preserving stream
// analytics pipeline. Simulation verbs (run, sweep, replicate) execute fully
// in process; service verbs (relay, aggregator, agent) run network daemons;
// analyst verbs (publish, status, invert, tick, report, historical) speak
// the aggregator control protocol.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "privstream/aggregator.h"
#include "privstream/client.h"
#include "privstream/harness.h"
#include "privstream/net.h"
#include "privstream/privacy.h"
#include "privstream/query.h"
#include "privstream/relay.h"
#include "privstream/rng.h"
#include "privstream/server.h"

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void print_summary(const privstream::ExperimentResult& r, std::ostream& out) {
  privstream::AccuracySummary acc = privstream::summarize_accuracy(r);
  out << "population " << r.population << ", windows " << r.estimates.size()
      << ", messages " << r.messages_dispatched << " (skipped "
      << r.epochs_skipped << ", dropped " << r.epochs_dropped << ", shares lost "
      << r.shares_lost << ")\n";
  out << "params s=" << fmt(r.final_params.s) << " p=" << fmt(r.final_params.p)
      << " q=" << fmt(r.final_params.q) << "  eps_rr=" << fmt(r.privacy.eps_rr)
      << " eps_dp=" << fmt(r.privacy.eps_dp) << " eps_zk=" << fmt(r.privacy.eps_zk)
      << "\n";
  out << "bytes " << r.bytes_sent << ", joins " << r.joins.joined << " (expired "
      << r.joins.expired << ", corrupt " << r.joins.corrupt << ", duplicate "
      << r.joins.duplicate << "), late " << r.late << ", quarantined "
      << r.quarantined << "\n";
  out << "accuracy: max_abs " << fmt(acc.max_abs_error) << ", max_rel "
      << fmt(acc.max_rel_error) << ", mean_rel " << fmt(acc.mean_rel_error)
      << ", within_bound " << fmt(acc.within_bound_fraction) << "\n";
  if (r.budget_conflict) {
    out << "note: accuracy target unreachable within the privacy budget\n";
  }
  out << "elapsed " << fmt(r.elapsed_seconds) << "s\n";
}

std::vector<std::string> request(const std::string& host, uint16_t port,
                                 const std::vector<std::string>& lines) {
  return privstream::control_request(host, port, lines);
}

void print_lines(const std::vector<std::string>& lines) {
  for (const std::string& line : lines) std::cout << line << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving stream analytics pipeline"};
  app.require_subcommand(1);

  // --- Simulation verbs ----------------------------------------------------
  std::string scenario_path;
  std::string csv_path;
  bool with_summary = false;

  CLI::App* cmd_run = app.add_subcommand("run", "Run one scenario in process");
  cmd_run->add_option("--scenario", scenario_path, "Scenario file")->required();
  cmd_run->add_option("--csv", csv_path, "Write the per-window CSV here (default stdout)");
  cmd_run->add_flag("--summary", with_summary, "Print a human summary to stderr");

  std::string sweep_values;
  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "Run the scenario once per sampling fraction, same seed");
  cmd_sweep->add_option("--scenario", scenario_path, "Scenario file")->required();
  cmd_sweep->add_option("--s", sweep_values, "Comma-separated sampling fractions")
      ->required();

  uint32_t replicates = 5;
  uint64_t seed_step = 1;
  CLI::App* cmd_rep = app.add_subcommand(
      "replicate", "Run the scenario n times with stepped seeds");
  cmd_rep->add_option("--scenario", scenario_path, "Scenario file")->required();
  cmd_rep->add_option("--n", replicates, "Number of runs");
  cmd_rep->add_option("--seed-step", seed_step, "Seed increment between runs");

  std::string query_path;
  CLI::App* cmd_validate =
      app.add_subcommand("validate", "Parse and validate a query block file");
  cmd_validate->add_option("--file", query_path, "Query block file")->required();

  // --- Analyst verbs -------------------------------------------------------
  std::string host = "127.0.0.1";
  uint16_t port = 7400;
  uint64_t query_id = 0;
  auto add_remote = [&](CLI::App* cmd, bool with_query_id) {
    cmd->add_option("--host", host, "Aggregator control host");
    cmd->add_option("--port", port, "Aggregator control port")->required();
    if (with_query_id) {
      cmd->add_option("--query-id", query_id, "Query id")->required();
    }
  };

  CLI::App* cmd_publish = app.add_subcommand("publish", "Publish a query block");
  cmd_publish->add_option("--file", query_path, "Query block file")->required();
  add_remote(cmd_publish, false);

  CLI::App* cmd_status = app.add_subcommand("status", "Query counters and parameters");
  add_remote(cmd_status, true);

  bool invert_on = false;
  bool invert_off = false;
  CLI::App* cmd_invert = app.add_subcommand("invert", "Toggle complementary reporting");
  add_remote(cmd_invert, true);
  cmd_invert->add_flag("--on", invert_on, "Enable inverted reporting");
  cmd_invert->add_flag("--off", invert_off, "Disable inverted reporting");

  int64_t now_ms = 0;
  CLI::App* cmd_tick = app.add_subcommand(
      "tick", "Advance the aggregator watermark (deterministic mode)");
  add_remote(cmd_tick, false);
  cmd_tick->add_option("--now", now_ms, "New watermark, ms")->required();

  CLI::App* cmd_report =
      app.add_subcommand("report", "Latest window estimate as CSV");
  add_remote(cmd_report, true);

  int64_t from_ms = 0;
  int64_t to_ms = 0;
  double sampling = 1.0;
  uint64_t hist_seed = 1;
  CLI::App* cmd_hist = app.add_subcommand(
      "historical", "Batch query over the aggregator's historical store");
  add_remote(cmd_hist, true);
  cmd_hist->add_option("--from", from_ms, "Range start, ms")->required();
  cmd_hist->add_option("--to", to_ms, "Range end, ms (exclusive)")->required();
  cmd_hist->add_option("--sampling", sampling, "Aggregator-side sampling fraction");
  cmd_hist->add_option("--seed", hist_seed, "Sampling seed");

  // --- Service verbs -------------------------------------------------------
  uint16_t ingest_port = 7401;
  uint16_t drain_port = 7402;
  std::string topic = "answer";
  size_t capacity = 65536;
  CLI::App* cmd_relay = app.add_subcommand("relay", "Run one relay (proxy) daemon");
  cmd_relay->add_option("--host", host, "Listen host");
  cmd_relay->add_option("--ingest-port", ingest_port, "Client-facing port");
  cmd_relay->add_option("--drain-port", drain_port, "Aggregator-facing port");
  cmd_relay->add_option("--topic", topic, "Relay topic name");
  cmd_relay->add_option("--capacity", capacity, "Buffer capacity (shares)");

  uint16_t control_port = 7400;
  std::vector<std::string> relay_drains;
  uint64_t population = 0;
  double coin_p = 0.9;
  double coin_q = 0.6;
  double s_floor = 0.05;
  uint32_t pilot_windows = 0;
  int64_t tick_interval = 200;
  std::string historical_root;
  CLI::App* cmd_agg = app.add_subcommand("aggregator", "Run the aggregator daemon");
  cmd_agg->add_option("--host", host, "Listen host");
  cmd_agg->add_option("--control-port", control_port, "Analyst control port");
  cmd_agg->add_option("--relay", relay_drains, "Relay drain host:port (repeat per relay)")
      ->required()
      ->expected(-2);
  cmd_agg->add_option("--population", population, "Registered population per query")
      ->required();
  cmd_agg->add_option("--coin-p", coin_p, "Truth coin probability p");
  cmd_agg->add_option("--coin-q", coin_q, "Yes coin probability q");
  cmd_agg->add_option("--s-floor", s_floor, "Lower bound for adaptive sampling");
  cmd_agg->add_option("--pilot-windows", pilot_windows,
                      "Windows before pilot-rate error bounds kick in");
  cmd_agg->add_option("--tick-interval-ms", tick_interval,
                      "Wall-clock watermark period; 0 = only TICK advances time");
  cmd_agg->add_option("--historical-root", historical_root,
                      "Directory for the historical store");

  std::string agg_address;
  std::vector<std::string> relay_ingests;
  uint32_t n_clients = 100;
  uint64_t agent_seed = 1;
  double records_lo = 0;
  double records_hi = 1;
  CLI::App* cmd_agent = app.add_subcommand(
      "agent", "Run a swarm of client agents against a live aggregator");
  cmd_agent->add_option("--aggregator", agg_address, "Control host:port")->required();
  cmd_agent->add_option("--relay", relay_ingests, "Relay ingest host:port (repeat)")
      ->required()
      ->expected(-2);
  cmd_agent->add_option("--clients", n_clients, "Number of simulated clients");
  cmd_agent->add_option("--seed", agent_seed, "Base randomness seed");
  cmd_agent->add_option("--lo", records_lo, "Uniform record value lower bound");
  cmd_agent->add_option("--hi", records_hi, "Uniform record value upper bound");

  CLI11_PARSE(app, argc, argv);

  try {
    // --- Simulation ---
    if (cmd_run->parsed()) {
      privstream::Scenario sc = privstream::parse_scenario(read_file(scenario_path));
      privstream::ExperimentResult result = privstream::run_scenario(sc);
      std::string csv = privstream::experiment_csv(result);
      if (csv_path.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(csv_path);
        if (!out) throw std::runtime_error("cannot write " + csv_path);
        out << csv;
      }
      if (with_summary) print_summary(result, std::cerr);
      return 0;
    }

    if (cmd_sweep->parsed()) {
      privstream::Scenario sc = privstream::parse_scenario(read_file(scenario_path));
      std::vector<double> s_values;
      std::stringstream ss(sweep_values);
      std::string item;
      while (std::getline(ss, item, ',')) s_values.push_back(std::stod(item));
      std::cout << "s,eps_rr,eps_dp,eps_zk,bytes,messages,max_rel_error,"
                   "mean_rel_error,within_bound\n";
      for (const auto& r : privstream::sweep_s(sc, s_values)) {
        privstream::AccuracySummary acc = privstream::summarize_accuracy(r);
        std::cout << fmt(r.final_params.s) << ',' << fmt(r.privacy.eps_rr) << ','
                  << fmt(r.privacy.eps_dp) << ',' << fmt(r.privacy.eps_zk) << ','
                  << r.bytes_sent << ',' << r.messages_dispatched << ','
                  << fmt(acc.max_rel_error) << ',' << fmt(acc.mean_rel_error)
                  << ',' << fmt(acc.within_bound_fraction) << "\n";
      }
      return 0;
    }

    if (cmd_rep->parsed()) {
      privstream::Scenario sc = privstream::parse_scenario(read_file(scenario_path));
      std::cout << "seed,bytes,messages,max_rel_error,mean_rel_error,within_bound\n";
      uint64_t seed = sc.seed;
      for (const auto& r : privstream::replicate(sc, replicates, seed_step)) {
        privstream::AccuracySummary acc = privstream::summarize_accuracy(r);
        std::cout << seed << ',' << r.bytes_sent << ',' << r.messages_dispatched
                  << ',' << fmt(acc.max_rel_error) << ',' << fmt(acc.mean_rel_error)
                  << ',' << fmt(acc.within_bound_fraction) << "\n";
        seed += seed_step;
      }
      return 0;
    }

    if (cmd_validate->parsed()) {
      privstream::QueryBlock qb = privstream::parse_query_block(read_file(query_path));
      std::vector<std::string> violations = privstream::validate_query(qb.query);
      if (violations.empty()) {
        std::cout << "OK query_id=" << qb.query.query_id << " buckets="
                  << qb.query.buckets.size() << "\n";
        return 0;
      }
      for (const std::string& v : violations) std::cout << "violation: " << v << "\n";
      return 1;
    }

    // --- Analyst ---
    if (cmd_publish->parsed()) {
      privstream::QueryBlock qb = privstream::parse_query_block(read_file(query_path));
      privstream::ExecutionParams params = privstream::publish_remote(host, port, qb);
      std::cout << "published query_id=" << qb.query.query_id
                << " s=" << fmt(params.s) << " p=" << fmt(params.p)
                << " q=" << fmt(params.q) << "\n";
      return 0;
    }
    if (cmd_status->parsed()) {
      print_lines(request(host, port, {"STATUS " + std::to_string(query_id)}));
      return 0;
    }
    if (cmd_invert->parsed()) {
      if (invert_on == invert_off) {
        std::cerr << "invert: pass exactly one of --on/--off\n";
        return 2;
      }
      print_lines(request(host, port,
                          {"INVERT " + std::to_string(query_id) +
                           (invert_on ? " on" : " off")}));
      return 0;
    }
    if (cmd_tick->parsed()) {
      print_lines(request(host, port, {"TICK " + std::to_string(now_ms)}));
      return 0;
    }
    if (cmd_report->parsed()) {
      print_lines(request(host, port, {"REPORT " + std::to_string(query_id)}));
      return 0;
    }
    if (cmd_hist->parsed()) {
      print_lines(request(
          host, port,
          {"HISTORICAL " + std::to_string(query_id) + " " +
           std::to_string(from_ms) + " " + std::to_string(to_ms) + " " +
           fmt(sampling) + " " + std::to_string(hist_seed)}));
      return 0;
    }

    // --- Services ---
    if (cmd_relay->parsed()) {
      install_signal_handlers();
      privstream::RelayServer::Config cfg;
      cfg.listen_host = host;
      cfg.ingest_port = ingest_port;
      cfg.drain_port = drain_port;
      cfg.topic = topic;
      cfg.capacity = capacity;
      privstream::RelayServer relay(cfg);
      relay.start();
      std::cerr << "relay '" << topic << "' ingest " << host << ":"
                << relay.ingest_port() << " drain " << host << ":"
                << relay.drain_port() << "\n";
      while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      relay.stop();
      return 0;
    }

    if (cmd_agg->parsed()) {
      install_signal_handlers();
      privstream::AggregatorServer::Config cfg;
      cfg.listen_host = host;
      cfg.control_port = control_port;
      cfg.relay_drains = relay_drains;
      cfg.population[0] = population;
      cfg.tick_interval_ms = tick_interval;
      cfg.aggregator.coins = privstream::RRCoins{coin_p, coin_q};
      cfg.aggregator.n_proxies = static_cast<uint32_t>(relay_drains.size());
      cfg.aggregator.s_floor = s_floor;
      cfg.aggregator.pilot_windows = pilot_windows;
      if (!historical_root.empty()) cfg.aggregator.historical_root = historical_root;
      if (tick_interval > 0) {
        // Live mode: window time is wall time.
        cfg.aggregator.base_time_ms =
            std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count();
      }
      privstream::AggregatorServer server(std::move(cfg));
      server.start();
      std::cerr << "aggregator control " << host << ":" << server.control_port()
                << "\n";
      while (!g_interrupted) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
      }
      server.stop();
      return 0;
    }

    if (cmd_agent->parsed()) {
      install_signal_handlers();
      auto [ahost, aport] = privstream::parse_host_port(agg_address);

      // Socket sinks, one per relay, shared by all simulated clients.
      std::vector<privstream::ShareSink> sinks;
      for (const std::string& address : relay_ingests) {
        auto [rhost, rport] = privstream::parse_host_port(address);
        int fd = privstream::connect_to(rhost, rport);
        if (fd < 0) throw std::runtime_error("cannot connect to relay " + address);
        sinks.push_back([fd](const privstream::ShareMessage& share) {
          if (!privstream::write_frame(fd, privstream::encode_share_frame(share))) {
            return privstream::RelayAck::kMalformed;
          }
          uint8_t ack = 0;
          if (!privstream::read_exact(fd, &ack, 1)) {
            return privstream::RelayAck::kMalformed;
          }
          return static_cast<privstream::RelayAck>(ack);
        });
      }

      std::vector<std::unique_ptr<privstream::ClientAgent>> agents;
      for (uint32_t c = 0; c < n_clients; ++c) {
        privstream::ClientConfig cc;
        cc.client_id = c;
        cc.n_proxies = sinks.size();
        cc.rng_seed = privstream::derive_seed(agent_seed, 1'000'000 + c);
        agents.push_back(std::make_unique<privstream::ClientAgent>(cc, sinks));
      }

      std::mutex mu;
      std::optional<privstream::Query> active;
      std::thread sub([&] {
        privstream::subscribe_stream(
            ahost, aport,
            [&](const privstream::Query& q, const privstream::ExecutionParams& p) {
              std::lock_guard<std::mutex> lock(mu);
              for (auto& agent : agents) agent->subscribe(q, p);
              if (!active) std::cerr << "agent: subscribed to query " << q.query_id << "\n";
              active = q;
            },
            [] { return g_interrupted == 0; });
      });

      privstream::Rng wrng(privstream::derive_seed(agent_seed, 5'000'000));
      while (!g_interrupted) {
        privstream::Query query;
        {
          std::lock_guard<std::mutex> lock(mu);
          if (!active) {
            // No query yet.
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            continue;
          }
          query = *active;
        }
        std::this_thread::sleep_for(
            std::chrono::milliseconds(query.answer_frequency_ms));
        int64_t epoch_end = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count();
        std::lock_guard<std::mutex> lock(mu);
        for (auto& agent : agents) {
          privstream::Record r;
          r.timestamp_ms = epoch_end - 1;
          r.fields.emplace_back(
              query.buckets.field,
              privstream::Scalar{records_lo +
                                 wrng.uniform_double() * (records_hi - records_lo)});
          agent->observe(std::move(r));
          agent->answer_epoch(query.query_id, epoch_end);
        }
      }
      sub.join();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "privstream: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
