#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "tlstap/engine.hpp"
#include "tlstap/forwarder.hpp"
#include "tlstap/keywire.hpp"

using namespace tlstap;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

void install_signal_handlers() {
  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
}

struct HostPort {
  std::string host;
  uint16_t port = 0;
};

HostPort parse_host_port(const std::string& value) {
  size_t colon = value.rfind(':');
  if (colon == std::string::npos)
    throw CLI::ValidationError("expected host:port, got '" + value + "'");
  HostPort hp;
  hp.host = value.substr(0, colon);
  int port = std::stoi(value.substr(colon + 1));
  if (port < 1 || port > 65535)
    throw CLI::ValidationError("port out of range in '" + value + "'");
  hp.port = static_cast<uint16_t>(port);
  return hp;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

int cmd_decrypt(const std::string& pcap, const std::string& keylog,
                const std::string& timestamped, const std::string& log_path,
                const std::string& dump_dir, const std::string& filter,
                bool seq_from_nonce) {
  KeyStore store;
  if (!keylog.empty()) store.load_keylog_file(keylog);
  if (!timestamped.empty()) store.load_timestamped_file(timestamped);

  EngineConfig config;
  config.seq_from_nonce = seq_from_nonce;
  config.gate_by_arrival_time = false;  // keys preloaded: usable at any time

  std::unique_ptr<CleartextSink> sink;
  if (!log_path.empty())
    sink = std::make_unique<TsvLogSink>(log_path, dump_dir);
  else
    sink = std::make_unique<NullSink>();

  AggregateReport report = run_capture(pcap, filter, store, config, sink.get());
  std::cout << report.to_text();
  std::cout << "keystore: entries=" << store.stats().entries_total
            << " duplicates=" << store.stats().duplicates
            << " malformed=" << store.stats().malformed_lines
            << " skipped=" << store.stats().skipped_lines << "\n";
  return 0;
}

int cmd_simulate_delay(const std::string& pcap, const std::string& keys_path,
                       std::vector<Micros> delays, const std::string& out_path,
                       bool seq_from_nonce) {
  KeyStore store;
  store.load_timestamped_file(keys_path);

  EngineConfig config;
  config.seq_from_nonce = seq_from_nonce;
  auto rows = sweep_delays(pcap, store, config, delays);
  std::string tsv = sweep_rows_to_tsv(rows);
  if (out_path == "-") {
    std::cout << tsv;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw TlstapError("cannot write " + out_path);
    out << tsv;
    std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& pcap, const std::string& keylog,
              int repetitions, const std::string& filter) {
  KeyStore store;
  if (!keylog.empty()) store.load_keylog_file(keylog);

  auto timed_run = [&](bool decrypt) {
    EngineConfig config;
    config.decrypt_enabled = decrypt;
    config.gate_by_arrival_time = false;
    NullSink sink;
    auto start = std::chrono::steady_clock::now();
    AggregateReport report = run_capture(pcap, filter, store, config, &sink);
    auto stop = std::chrono::steady_clock::now();
    double seconds = std::chrono::duration<double>(stop - start).count();
    return std::make_pair(seconds, report);
  };

  std::vector<double> parse_times, decrypt_times;
  AggregateReport parse_report, decrypt_report;
  for (int i = 0; i < repetitions; i++) {
    auto [t, r] = timed_run(false);
    parse_times.push_back(t);
    parse_report = r;
  }
  for (int i = 0; i < repetitions; i++) {
    auto [t, r] = timed_run(true);
    decrypt_times.push_back(t);
    decrypt_report = r;
  }

  double parse_median = median(parse_times);
  double decrypt_median = median(decrypt_times);
  double overhead = parse_median > 0 ? decrypt_median / parse_median : 0.0;

  auto print_mode = [](const char* mode, double wall,
                       const AggregateReport& report) {
    std::cout << "mode=" << mode << " wall_time=" << wall
              << " sessions=" << report.sessions_total
              << " bytes_sent_s=" << report.bytes_c2s_total
              << " bytes_received_r=" << report.bytes_s2c_total
              << " decrypted_bytes=" << report.bytes_decrypted << "\n";
  };
  print_mode("ParseOnly", parse_median, parse_report);
  print_mode("Decrypt", decrypt_median, decrypt_report);
  std::cout << "overhead_factor=" << overhead << " repetitions=" << repetitions
            << " (median)\n";
  return 0;
}

int cmd_receive_keys(const std::string& listen, const std::string& auth_secret,
                     const std::string& tee, size_t max_entries,
                     uint64_t exit_after) {
  HostPort hp = parse_host_port(listen);
  ReceiverConfig config;
  config.listen_host = hp.host;
  config.port = hp.port;
  if (!auth_secret.empty()) config.auth_secret = auth_secret;
  if (!tee.empty()) config.tee_path = tee;
  config.max_entries = max_entries;

  KeyStore store;
  KeyReceiver receiver(config, store);
  receiver.start();
  std::cerr << "listening on " << hp.host << ":" << receiver.port() << "\n";

  install_signal_handlers();
  while (!g_stop) {
    if (exit_after > 0 && receiver.stats().messages_ingested >= exit_after)
      break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  receiver.stop();
  auto stats = receiver.stats();
  std::cout << "connections_accepted=" << stats.connections_accepted
            << " connections_dropped=" << stats.connections_dropped
            << " messages_ingested=" << stats.messages_ingested
            << " evictions=" << stats.evictions
            << " keystore_entries=" << store.size() << "\n";
  return 0;
}

int cmd_forward(const std::string& config_path, const std::string& keylog,
                const std::string& collector, const std::string& mode,
                const std::vector<std::string>& rules,
                const std::string& auth_secret, bool poll) {
  ForwarderConfig config;
  if (!config_path.empty()) config = ForwarderConfig::from_file(config_path);
  if (!keylog.empty()) config.keylog_path = keylog;
  if (!collector.empty()) {
    HostPort hp = parse_host_port(collector);
    config.collector_host = hp.host;
    config.collector_port = hp.port;
  }
  if (!mode.empty()) {
    if (mode == "forward-all")
      config.mode = ForwardMode::ForwardAll;
    else if (mode == "allowlist")
      config.mode = ForwardMode::Allowlist;
    else if (mode == "blocklist")
      config.mode = ForwardMode::Blocklist;
    else
      throw CLI::ValidationError("unknown mode: " + mode);
  }
  if (!rules.empty()) config.domain_rules = rules;
  if (!auth_secret.empty()) config.auth_secret = auth_secret;
  if (poll) config.force_polling = true;

  Forwarder forwarder(std::move(config));
  install_signal_handlers();
  forwarder.run(g_stop);
  auto stats = forwarder.stats();
  std::cout << "lines_seen=" << stats.lines_seen
            << " entries_forwarded=" << stats.entries_forwarded
            << " entries_withheld=" << stats.entries_withheld
            << " dropped_overflow=" << stats.entries_dropped_overflow
            << " reconnects=" << stats.reconnects << "\n";
  return 0;
}

std::vector<Micros> delays_from_options(const std::vector<int64_t>& delays_ms,
                                        const std::string& range) {
  std::vector<Micros> out;
  if (!range.empty()) {
    int64_t start, stop, step;
    if (std::sscanf(range.c_str(), "%" SCNd64 ":%" SCNd64 ":%" SCNd64, &start,
                    &stop, &step) != 3 ||
        step <= 0 || stop < start)
      throw CLI::ValidationError("--delay-range expects START:STOP:STEP (ms)");
    for (int64_t ms = start; ms <= stop; ms += step) out.push_back(ms * 1000);
  }
  for (int64_t ms : delays_ms) out.push_back(ms * 1000);
  if (out.empty())
    throw CLI::ValidationError("need --delays or --delay-range");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"passive TLS 1.2 decryption for network monitoring"};
  app.require_subcommand(1);

  // decrypt
  std::string pcap, keylog, timestamped, log_path, dump_dir, filter;
  bool no_seq_from_nonce = false;
  auto* decrypt = app.add_subcommand(
      "decrypt", "decrypt a capture with preloaded key material");
  decrypt->add_option("pcap", pcap, "pcap/pcapng file")
      ->required()
      ->check(CLI::ExistingFile);
  decrypt->add_option("--keylog", keylog, "SSLKEYLOG file")
      ->check(CLI::ExistingFile);
  decrypt->add_option("--timestamped-keys", timestamped,
                      "timestamped keylog TSV")
      ->check(CLI::ExistingFile);
  decrypt->add_option("--log", log_path, "cleartext event log (TSV)");
  decrypt->add_option("--dump", dump_dir, "directory for raw payload dumps")
      ->needs(decrypt->get_option("--log"));
  decrypt->add_option("--filter", filter, "capture filter (tcp/port/host)");
  decrypt->add_flag("--no-seq-from-nonce", no_seq_from_nonce,
                    "count records instead of trusting explicit nonces");

  // simulate-delay
  std::string keys_path, out_path = "-", delay_range;
  std::vector<int64_t> delays_ms;
  auto* simulate = app.add_subcommand(
      "simulate-delay", "sweep simulated traffic delays over a capture");
  simulate->add_option("pcap", pcap, "pcap/pcapng file")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--keys", keys_path, "timestamped keylog TSV")
      ->required()
      ->check(CLI::ExistingFile);
  simulate->add_option("--delays", delays_ms,
                       "delay values in milliseconds")
      ->delimiter(',');
  simulate->add_option("--delay-range", delay_range, "START:STOP:STEP in ms");
  simulate->add_option("--out", out_path, "output TSV path ('-' = stdout)");
  simulate->add_flag("--no-seq-from-nonce", no_seq_from_nonce,
                     "count records instead of trusting explicit nonces");

  // bench
  int repetitions = 3;
  auto* bench = app.add_subcommand(
      "bench", "compare parse-only and decrypt runtimes");
  bench->add_option("pcap", pcap, "pcap/pcapng file")
      ->required()
      ->check(CLI::ExistingFile);
  bench->add_option("--keylog", keylog, "SSLKEYLOG file")
      ->check(CLI::ExistingFile);
  bench->add_option("--repetitions", repetitions, "timing repetitions")
      ->check(CLI::PositiveNumber);
  bench->add_option("--filter", filter, "capture filter");

  // receive-keys
  std::string listen = "127.0.0.1:7443", auth_secret, tee;
  size_t max_entries = 0;
  uint64_t exit_after = 0;
  auto* receive = app.add_subcommand(
      "receive-keys", "accept forwarded key material over the wire protocol");
  receive->add_option("--listen", listen, "host:port to bind");
  receive->add_option("--auth-secret", auth_secret,
                      "shared secret for mutual channel authentication");
  receive->add_option("--tee", tee, "append entries to a timestamped TSV");
  receive->add_option("--max-entries", max_entries,
                      "LRU cap on stored keys (0 = unbounded)");
  receive->add_option("--exit-after", exit_after,
                      "exit after N ingested entries (testing aid)");

  // forward
  std::string config_path, collector, mode;
  std::vector<std::string> rules;
  bool poll = false;
  auto* forward = app.add_subcommand(
      "forward", "watch an SSLKEYLOG file and forward entries");
  forward->add_option("--config", config_path, "forwarder config file")
      ->check(CLI::ExistingFile);
  forward->add_option("--keylog", keylog, "SSLKEYLOG file to watch");
  forward->add_option("--collector", collector, "receiver host:port");
  forward->add_option("--mode", mode,
                      "forward-all (default) | allowlist | blocklist");
  forward->add_option("--rules", rules, "domain patterns for list modes")
      ->delimiter(',');
  forward->add_option("--auth-secret", auth_secret, "shared channel secret");
  forward->add_flag("--poll", poll, "force polling instead of inotify");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (decrypt->parsed())
      return cmd_decrypt(pcap, keylog, timestamped, log_path, dump_dir, filter,
                         !no_seq_from_nonce);
    if (simulate->parsed())
      return cmd_simulate_delay(pcap, keys_path,
                                delays_from_options(delays_ms, delay_range),
                                out_path, !no_seq_from_nonce);
    if (bench->parsed()) return cmd_bench(pcap, keylog, repetitions, filter);
    if (receive->parsed())
      return cmd_receive_keys(listen, auth_secret, tee, max_entries,
                              exit_after);
    if (forward->parsed())
      return cmd_forward(config_path, keylog, collector, mode, rules,
                         auth_secret, poll);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
