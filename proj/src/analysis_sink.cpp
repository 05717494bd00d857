#include "tlstap/analysis_sink.hpp"

#include <array>
#include <cstring>

namespace tlstap {

const char* to_string(AppProtocol protocol) {
  switch (protocol) {
    case AppProtocol::Http1:
      return "HTTP1";
    case AppProtocol::Http2:
      return "HTTP2";
    default:
      return "Unknown";
  }
}

AppProtocol detect_protocol(ByteSpan first_bytes) {
  static constexpr char kH2Preface[] = "PRI * HTTP/2.0\r\n\r\nSM\r\n\r\n";
  constexpr size_t kPrefaceLen = 24;
  if (first_bytes.size() >= kPrefaceLen &&
      std::memcmp(first_bytes.data(), kH2Preface, kPrefaceLen) == 0)
    return AppProtocol::Http2;

  static constexpr std::array<std::string_view, 9> kMethods = {
      "GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS", "TRACE", "CONNECT",
      "PATCH"};
  for (auto method : kMethods) {
    if (first_bytes.size() > method.size() &&
        std::memcmp(first_bytes.data(), method.data(), method.size()) == 0 &&
        first_bytes[method.size()] == ' ')
      return AppProtocol::Http1;
  }
  return AppProtocol::Unknown;
}

TsvLogSink::TsvLogSink(const std::string& log_path, std::string dump_dir)
    : log_(log_path), dump_dir_(std::move(dump_dir)) {
  if (!log_) throw TlstapError("cannot open cleartext log: " + log_path);
  log_ << "#fields\tts\tclient\tclient_port\tserver\tserver_port\tdirection"
          "\tprotocol\tbytes\toffset\tgap\n";
  if (!log_) throw TlstapError("cleartext log write failed: " + log_path);
}

std::string TsvLogSink::dump_file_name(const FlowKey& flow,
                                       Direction direction) {
  return flow.to_file_stem() + "-" +
         (direction == Direction::ClientToServer ? "c2s" : "s2c") + ".bin";
}

void TsvLogSink::on_cleartext(const CleartextEvent& event) {
  std::string stream_key = event.flow.to_string() +
                           (event.direction == Direction::ClientToServer
                                ? "/c2s"
                                : "/s2c");
  auto& state = streams_[stream_key];
  if (!state.protocol_decided) {
    state.protocol = event.gap_before ? AppProtocol::Unknown
                                      : detect_protocol(event.bytes);
    state.protocol_decided = true;
  }

  log_ << event.capture_time << '\t' << event.flow.client_ip.to_string()
       << '\t' << event.flow.client_port << '\t'
       << event.flow.server_ip.to_string() << '\t' << event.flow.server_port
       << '\t'
       << (event.direction == Direction::ClientToServer ? "c2s" : "s2c")
       << '\t' << to_string(state.protocol) << '\t' << event.bytes.size()
       << '\t' << event.offset << '\t' << (event.gap_before ? 1 : 0) << '\n';
  if (!log_) throw TlstapError("cleartext log write failed");
  event_count_++;

  if (!dump_dir_.empty()) {
    auto it = dumps_.find(stream_key);
    if (it == dumps_.end()) {
      std::string path =
          dump_dir_ + "/" + dump_file_name(event.flow, event.direction);
      auto [inserted, ok] =
          dumps_.emplace(stream_key, std::ofstream(path, std::ios::binary));
      if (!ok || !inserted->second)
        throw TlstapError("cannot open payload dump: " + path);
      it = inserted;
    }
    it->second.write(reinterpret_cast<const char*>(event.bytes.data()),
                     static_cast<std::streamsize>(event.bytes.size()));
    if (!it->second) throw TlstapError("payload dump write failed");
    it->second.flush();
  }
}

}  // namespace tlstap
