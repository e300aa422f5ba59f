#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mde/common.hpp"
#include "mde/tensor.hpp"

namespace mde {

// On-disk tensor container shared by checkpoints and feature-weight files.
// Layout, all little-endian:
//   magic "MDE1", format version u32,
//   repeated records [name_len u32, name bytes, dtype u8 (0=f32, 1=f64,
//   2=bytes), ndim u32, dims u64..., raw scalar payload],
//   a name_len of 0 terminates the records,
//   then rng state (u64 length + bytes) and step u64.
struct Archive {
  std::map<std::string, Tensor<float>> f32;
  std::map<std::string, Tensor<double>> f64;
  std::map<std::string, std::vector<uint8_t>> blobs;
  std::string rng;
  uint64_t step = 0;
};

namespace detail {

constexpr char kArchiveMagic[4] = {'M', 'D', 'E', '1'};
constexpr uint32_t kArchiveVersion = 1;

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename S>
void put_scalar(std::string& out, S value) {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8);
  if constexpr (sizeof(S) == 4) {
    uint32_t bits;
    std::memcpy(&bits, &value, 4);
    put_u32(out, bits);
  } else {
    uint64_t bits;
    std::memcpy(&bits, &value, 8);
    put_u64(out, bits);
  }
}

struct ArchiveReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    MDE_CHECK(pos + n <= buf.size(), ParseError, "checkpoint truncated at byte ", pos,
              " while reading ", what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

template <typename S>
void put_record(std::string& out, const std::string& name, uint8_t dtype, const Tensor<S>& t) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.append(name);
  out.push_back(static_cast<char>(dtype));
  put_u32(out, static_cast<uint32_t>(t.ndim()));
  for (int64_t d : t.shape) put_u64(out, static_cast<uint64_t>(d));
  for (int64_t i = 0; i < t.size(); ++i) put_scalar(out, t[i]);
}

}  // namespace detail

inline std::string serialize_archive(const Archive& a) {
  for (const auto& [name, t] : a.f32) {
    (void)t;
    MDE_CHECK(a.f64.count(name) == 0 && a.blobs.count(name) == 0, ContractError,
              "archive: duplicate record name '", name, "'");
  }
  for (const auto& [name, t] : a.f64) {
    (void)t;
    MDE_CHECK(a.blobs.count(name) == 0, ContractError, "archive: duplicate record name '", name,
              "'");
  }

  std::string out;
  out.append(detail::kArchiveMagic, 4);
  detail::put_u32(out, detail::kArchiveVersion);
  for (const auto& [name, t] : a.f32) detail::put_record(out, name, 0, t);
  for (const auto& [name, t] : a.f64) detail::put_record(out, name, 1, t);
  for (const auto& [name, b] : a.blobs) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out.append(name);
    out.push_back(2);
    detail::put_u32(out, 1);
    detail::put_u64(out, b.size());
    out.append(reinterpret_cast<const char*>(b.data()), b.size());
  }
  detail::put_u32(out, 0);  // record terminator
  detail::put_u64(out, a.rng.size());
  out.append(a.rng);
  detail::put_u64(out, a.step);
  return out;
}

inline Archive parse_archive(const std::string& buf) {
  detail::ArchiveReader r{buf};
  const std::string magic = r.bytes(4, "magic");
  MDE_CHECK(std::memcmp(magic.data(), detail::kArchiveMagic, 4) == 0, ParseError,
            "checkpoint magic mismatch: not an archive file");
  const uint32_t version = r.u32("version");
  MDE_CHECK(version == detail::kArchiveVersion, ParseError, "checkpoint version ", version,
            " unsupported (expected ", detail::kArchiveVersion, ")");

  Archive a;
  for (;;) {
    const uint32_t name_len = r.u32("record name length");
    if (name_len == 0) break;
    MDE_CHECK(name_len <= 4096, ParseError, "checkpoint record name length ", name_len,
              " implausible at byte ", r.pos - 4);
    const std::string name = r.bytes(name_len, "record name");
    MDE_CHECK(a.f32.count(name) + a.f64.count(name) + a.blobs.count(name) == 0, ParseError,
              "checkpoint has duplicate record '", name, "'");
    const uint8_t dtype = r.u8("dtype tag");
    const uint32_t ndim = r.u32("rank");
    MDE_CHECK(ndim >= 1 && ndim <= 8, ParseError, "checkpoint record '", name,
              "' has implausible rank ", ndim);
    Shape dims;
    uint64_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
      const uint64_t d = r.u64("dimension");
      MDE_CHECK(d >= 1 && d <= (uint64_t(1) << 32), ParseError, "checkpoint record '", name,
                "' has implausible dimension ", d);
      MDE_CHECK(numel <= (uint64_t(1) << 40) / d, ParseError, "checkpoint record '", name,
                "' is implausibly large");
      numel *= d;
      dims.push_back(static_cast<int64_t>(d));
    }
    if (dtype == 0) {
      auto t = Tensor<float>::zeros(dims);
      for (uint64_t i = 0; i < numel; ++i) {
        const uint32_t bits = r.u32("f32 payload");
        std::memcpy(&t[static_cast<int64_t>(i)], &bits, 4);
      }
      a.f32.emplace(name, std::move(t));
    } else if (dtype == 1) {
      auto t = Tensor<double>::zeros(dims);
      for (uint64_t i = 0; i < numel; ++i) {
        const uint64_t bits = r.u64("f64 payload");
        std::memcpy(&t[static_cast<int64_t>(i)], &bits, 8);
      }
      a.f64.emplace(name, std::move(t));
    } else if (dtype == 2) {
      MDE_CHECK(ndim == 1, ParseError, "checkpoint byte record '", name, "' must have rank 1");
      const std::string payload = r.bytes(numel, "byte payload");
      a.blobs.emplace(name, std::vector<uint8_t>(payload.begin(), payload.end()));
    } else {
      MDE_THROW(ParseError, "checkpoint record '", name, "' has unknown dtype tag ",
                static_cast<int>(dtype));
    }
  }
  const uint64_t rng_len = r.u64("rng state length");
  MDE_CHECK(rng_len <= (uint64_t(1) << 20), ParseError, "checkpoint rng state implausibly long");
  a.rng = r.bytes(rng_len, "rng state");
  a.step = r.u64("step");
  MDE_CHECK(r.pos == buf.size(), ParseError, "checkpoint has ", buf.size() - r.pos,
            " trailing bytes");
  return a;
}

inline void save_archive(const Archive& a, const std::string& path) {
  const std::string bytes = serialize_archive(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MDE_CHECK(f.good(), IoError, "cannot open '", path, "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  MDE_CHECK(f.good(), IoError, "short write to '", path, "'");
}

inline Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MDE_CHECK(f.good(), IoError, "cannot open '", path, "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  MDE_CHECK(!f.bad(), IoError, "read failure on '", path, "'");
  return parse_archive(buf);
}

}  // namespace mde
