#include "tlstap/pcap_reader.hpp"

#include <cstring>
#include <vector>

namespace tlstap {

namespace {

constexpr uint32_t kPcapMagicUs = 0xa1b2c3d4;
constexpr uint32_t kPcapMagicUsSwapped = 0xd4c3b2a1;
constexpr uint32_t kPcapMagicNs = 0xa1b23c4d;
constexpr uint32_t kPcapMagicNsSwapped = 0x4d3cb2a1;
constexpr uint32_t kPcapngShb = 0x0a0d0d0a;
constexpr uint32_t kPcapngByteOrder = 0x1a2b3c4d;

constexpr uint32_t kLinkEthernet = 1;
constexpr uint32_t kLinkRawIp = 101;
constexpr uint32_t kLinkIpv4 = 228;
constexpr uint32_t kLinkIpv6 = 229;

std::optional<LinkType> classify_link(uint32_t code) {
  switch (code) {
    case kLinkEthernet:
      return LinkType::Ethernet;
    case kLinkRawIp:
    case kLinkIpv4:
    case kLinkIpv6:
      return LinkType::RawIp;
    default:
      return std::nullopt;
  }
}

uint32_t swap32(uint32_t v) { return __builtin_bswap32(v); }
uint16_t swap16(uint16_t v) { return __builtin_bswap16(v); }

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

struct CaptureReader::Impl {
  std::unique_ptr<std::FILE, FileCloser> file;
  std::string path;
  bool is_pcapng = false;

  // classic pcap state
  bool swapped = false;
  bool nanos = false;
  LinkType link = LinkType::Ethernet;

  // pcapng per-section state
  struct Interface {
    LinkType link = LinkType::Ethernet;
    // ticks per second of the interface timestamp clock
    uint64_t ticks_per_sec = 1000000;
  };
  std::vector<Interface> interfaces;

  bool read_exact(void* out, size_t n) {
    return std::fread(out, 1, n, file.get()) == n;
  }

  uint32_t fix32(uint32_t v) const { return swapped ? swap32(v) : v; }
  uint16_t fix16(uint16_t v) const { return swapped ? swap16(v) : v; }
};

CaptureReader::CaptureReader(const std::string& path)
    : impl_(std::make_unique<Impl>()) {
  impl_->path = path;
  impl_->file.reset(std::fopen(path.c_str(), "rb"));
  if (!impl_->file)
    throw TlstapError("cannot open capture file: " + path);

  uint32_t magic = 0;
  if (!impl_->read_exact(&magic, 4))
    throw TlstapError("capture file too short: " + path);

  if (magic == kPcapngShb) {
    impl_->is_pcapng = true;
    // Rewind so the block loop sees the SHB header again.
    std::fseek(impl_->file.get(), 0, SEEK_SET);
    return;
  }

  switch (magic) {
    case kPcapMagicUs:
      break;
    case kPcapMagicNs:
      impl_->nanos = true;
      break;
    case kPcapMagicUsSwapped:
      impl_->swapped = true;
      break;
    case kPcapMagicNsSwapped:
      impl_->swapped = true;
      impl_->nanos = true;
      break;
    default:
      throw TlstapError("not a pcap or pcapng file: " + path);
  }

  uint8_t rest[20];
  if (!impl_->read_exact(rest, sizeof(rest)))
    throw TlstapError("truncated pcap header: " + path);
  uint32_t linktype;
  std::memcpy(&linktype, rest + 16, 4);
  linktype = impl_->fix32(linktype);
  auto link = classify_link(linktype);
  if (!link)
    throw TlstapError("unsupported link type " + std::to_string(linktype) +
                      " (only Ethernet and raw IP are supported): " + path);
  impl_->link = *link;
}

CaptureReader::~CaptureReader() = default;

std::optional<Frame> CaptureReader::next() {
  auto& im = *impl_;
  if (!im.is_pcapng) {
    uint32_t hdr[4];
    size_t got = std::fread(hdr, 1, sizeof(hdr), im.file.get());
    if (got == 0) return std::nullopt;
    if (got != sizeof(hdr)) {
      truncated_tail_++;
      return std::nullopt;
    }
    uint32_t ts_sec = im.fix32(hdr[0]);
    uint32_t ts_frac = im.fix32(hdr[1]);
    uint32_t incl_len = im.fix32(hdr[2]);
    if (incl_len > (1u << 26)) throw TlstapError("implausible packet length");
    Frame frame;
    frame.data.resize(incl_len);
    if (!im.read_exact(frame.data.data(), incl_len)) {
      truncated_tail_++;
      return std::nullopt;
    }
    frame.capture_time =
        static_cast<Micros>(ts_sec) * 1000000 +
        (im.nanos ? ts_frac / 1000 : ts_frac);
    frame.link = im.link;
    frames_read_++;
    return frame;
  }

  // pcapng block loop: skip everything but EPB/SPB, tracking SHB and IDB.
  for (;;) {
    uint32_t head[2];
    size_t got = std::fread(head, 1, sizeof(head), im.file.get());
    if (got == 0) return std::nullopt;
    if (got != sizeof(head)) {
      truncated_tail_++;
      return std::nullopt;
    }
    uint32_t raw_type = head[0];
    // The SHB's byte-order magic resets endianness for the new section.
    if (raw_type == kPcapngShb) {
      uint32_t body[2];
      if (!im.read_exact(body, sizeof(body))) {
        truncated_tail_++;
        return std::nullopt;
      }
      if (body[0] == kPcapngByteOrder)
        im.swapped = false;
      else if (swap32(body[0]) == kPcapngByteOrder)
        im.swapped = true;
      else
        throw TlstapError("bad pcapng byte-order magic: " + im.path);
      uint32_t total = im.fix32(head[1]);
      if (total < 28) throw TlstapError("bad pcapng SHB length");
      im.interfaces.clear();
      // Skip the remainder: section length + options + trailing length.
      std::fseek(im.file.get(), static_cast<long>(total) - 16, SEEK_CUR);
      continue;
    }

    uint32_t type = im.fix32(raw_type);
    uint32_t total = im.fix32(head[1]);
    if (total < 12 || total % 4 != 0)
      throw TlstapError("bad pcapng block length");
    size_t body_len = total - 12;
    Bytes body(body_len);
    if (!im.read_exact(body.data(), body_len)) {
      truncated_tail_++;
      return std::nullopt;
    }
    uint32_t trailer;
    if (!im.read_exact(&trailer, 4)) {
      truncated_tail_++;
      return std::nullopt;
    }

    auto u32at = [&](size_t off) {
      uint32_t v;
      std::memcpy(&v, body.data() + off, 4);
      return im.fix32(v);
    };
    auto u16at = [&](size_t off) {
      uint16_t v;
      std::memcpy(&v, body.data() + off, 2);
      return im.fix16(v);
    };

    if (type == 1) {  // Interface Description Block
      if (body_len < 8) throw TlstapError("short pcapng IDB");
      uint32_t linktype = u16at(0);
      auto link = classify_link(linktype);
      if (!link)
        throw TlstapError("unsupported link type " + std::to_string(linktype) +
                          " (only Ethernet and raw IP are supported): " +
                          im.path);
      Impl::Interface iface;
      iface.link = *link;
      // Walk options for if_tsresol (code 9).
      size_t off = 8;
      while (off + 4 <= body_len) {
        uint16_t code = u16at(off);
        uint16_t len = u16at(off + 2);
        if (code == 0) break;
        if (code == 9 && len >= 1) {
          uint8_t resol = body[off + 4];
          if (resol & 0x80)
            iface.ticks_per_sec = 1ull << (resol & 0x7f);
          else {
            iface.ticks_per_sec = 1;
            for (int i = 0; i < (resol & 0x7f); i++)
              iface.ticks_per_sec *= 10;
          }
        }
        off += 4 + ((len + 3u) & ~3u);
      }
      im.interfaces.push_back(iface);
      continue;
    }

    if (type == 6) {  // Enhanced Packet Block
      if (body_len < 20) throw TlstapError("short pcapng EPB");
      uint32_t iface_id = u32at(0);
      uint64_t ticks = (static_cast<uint64_t>(u32at(4)) << 32) | u32at(8);
      uint32_t cap_len = u32at(12);
      if (20 + cap_len > body_len) throw TlstapError("bad pcapng EPB length");
      Impl::Interface iface;
      if (iface_id < im.interfaces.size()) iface = im.interfaces[iface_id];
      Frame frame;
      frame.data.assign(body.begin() + 20, body.begin() + 20 + cap_len);
      frame.link = iface.link;
      frame.capture_time = static_cast<Micros>(
          (static_cast<unsigned __int128>(ticks) * 1000000) /
          iface.ticks_per_sec);
      frames_read_++;
      return frame;
    }

    if (type == 3) {  // Simple Packet Block: no timestamp, interface 0
      if (body_len < 4) throw TlstapError("short pcapng SPB");
      uint32_t orig_len = u32at(0);
      size_t cap_len = std::min<size_t>(orig_len, body_len - 4);
      Frame frame;
      frame.data.assign(body.begin() + 4, body.begin() + 4 + cap_len);
      frame.link =
          im.interfaces.empty() ? LinkType::Ethernet : im.interfaces[0].link;
      frame.capture_time = 0;
      frames_read_++;
      return frame;
    }
    // other block types (NRB, ISB, ...) are skipped
  }
}

}  // namespace tlstap
