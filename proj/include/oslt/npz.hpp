#pragma once

// Minimal .npy / .npz (zip of npy) reader & writer. Covers the named-array
// container layout used for datasets, checkpoints and frame export: C-order
// little-endian arrays, zip entries stored or deflated.

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace oslt::npz {

struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;          // numeric view, always filled
  std::vector<std::uint8_t> bytes;   // filled for 1-byte dtypes (embedded text, images)

  std::size_t size() const {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

namespace detail {

inline void put16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

inline std::uint32_t get32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string npy_header(const std::string& descr, const std::vector<std::size_t>& shape) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict << shape[i] << (shape.size() == 1 ? "," : (i + 1 < shape.size() ? ", " : ""));
  dict << "), }";
  std::string d = dict.str();
  // magic(6) + version(2) + hlen(2) + dict padded to 64-byte alignment, '\n'-terminated
  std::size_t total = 10 + d.size() + 1;
  std::size_t pad = (64 - total % 64) % 64;
  d.append(pad, ' ');
  d.push_back('\n');
  std::string out("\x93NUMPY\x01\x00", 8);
  put16(out, static_cast<std::uint16_t>(d.size()));
  out += d;
  return out;
}

inline std::string npy_bytes_f8(const std::vector<std::size_t>& shape, const double* data, std::size_t n) {
  std::string out = npy_header("<f8", shape);
  out.append(reinterpret_cast<const char*>(data), n * sizeof(double));
  return out;
}

inline std::string npy_bytes_u1(const std::vector<std::size_t>& shape, const std::uint8_t* data, std::size_t n) {
  std::string out = npy_header("|u1", shape);
  out.append(reinterpret_cast<const char*>(data), n);
  return out;
}

inline std::vector<std::uint8_t> inflate_raw(const std::uint8_t* src, std::size_t src_len, std::size_t out_len) {
  std::vector<std::uint8_t> out(out_len);
  z_stream zs{};
  if (inflateInit2(&zs, -15) != Z_OK) throw std::runtime_error("npz: inflateInit failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out_len);
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != out_len) throw std::runtime_error("npz: deflate stream corrupt");
  return out;
}

inline std::string header_field(const std::string& header, const std::string& key) {
  const auto kpos = header.find("'" + key + "'");
  if (kpos == std::string::npos) throw std::runtime_error("npy: header missing key " + key);
  auto vpos = header.find(':', kpos);
  if (vpos == std::string::npos) throw std::runtime_error("npy: malformed header");
  ++vpos;
  while (vpos < header.size() && header[vpos] == ' ') ++vpos;
  return header.substr(vpos);
}

inline Array parse_npy(const std::uint8_t* p, std::size_t len) {
  if (len < 10 || std::memcmp(p, "\x93NUMPY", 6) != 0) throw std::runtime_error("npy: bad magic");
  const int major = p[6];
  std::size_t hlen, hoff;
  if (major == 1) {
    hlen = get16(p + 8);
    hoff = 10;
  } else {
    hlen = get32(p + 8);
    hoff = 12;
  }
  if (hoff + hlen > len) throw std::runtime_error("npy: truncated header");
  const std::string header(reinterpret_cast<const char*>(p + hoff), hlen);

  std::string descr = header_field(header, "descr");
  descr = descr.substr(1, descr.find('\'', 1) - 1);
  if (header_field(header, "fortran_order").substr(0, 4) == "True")
    throw std::runtime_error("npy: fortran_order arrays unsupported");

  std::vector<std::size_t> shape;
  std::string sh = header_field(header, "shape");
  for (std::size_t i = 1; i < sh.size() && sh[i] != ')';) {
    if (!std::isdigit(static_cast<unsigned char>(sh[i]))) {
      ++i;
      continue;
    }
    std::size_t v = 0;
    while (i < sh.size() && std::isdigit(static_cast<unsigned char>(sh[i]))) v = v * 10 + (sh[i++] - '0');
    shape.push_back(v);
  }

  Array arr;
  arr.shape = shape;
  const std::size_t n = arr.size();
  const std::uint8_t* d = p + hoff + hlen;
  const std::size_t avail = len - hoff - hlen;
  arr.data.resize(n);

  auto need = [&](std::size_t bytes_per) {
    if (n * bytes_per > avail) throw std::runtime_error("npy: truncated data");
  };
  if (descr == "<f8") {
    need(8);
    std::memcpy(arr.data.data(), d, n * 8);
  } else if (descr == "<f4") {
    need(4);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, d + 4 * i, 4);
      arr.data[i] = f;
    }
  } else if (descr == "|u1" || descr == "<u1") {
    need(1);
    arr.bytes.assign(d, d + n);
    for (std::size_t i = 0; i < n; ++i) arr.data[i] = d[i];
  } else if (descr == "|i1" || descr == "<i1") {
    need(1);
    arr.bytes.assign(d, d + n);
    for (std::size_t i = 0; i < n; ++i) arr.data[i] = static_cast<std::int8_t>(d[i]);
  } else if (descr == "<i2" || descr == "<u2" || descr == "<i4" || descr == "<u4" || descr == "<i8" || descr == "<u8") {
    const std::size_t w = static_cast<std::size_t>(descr[2] - '0');
    const bool sgn = descr[1] == 'i';
    need(w);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t v = 0;
      for (std::size_t b = 0; b < w; ++b) v |= static_cast<std::uint64_t>(d[w * i + b]) << (8 * b);
      if (sgn) {
        // sign-extend
        const std::uint64_t m = 1ULL << (8 * w - 1);
        arr.data[i] = static_cast<double>(static_cast<std::int64_t>((v ^ m) - m));
      } else {
        arr.data[i] = static_cast<double>(v);
      }
    }
  } else {
    throw std::runtime_error("npy: unsupported dtype " + descr);
  }
  return arr;
}

}  // namespace detail

inline void save_npy(const std::string& path, const std::vector<std::size_t>& shape, const double* data) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npy: cannot open " + path);
  const std::string bytes = detail::npy_bytes_f8(shape, data, n);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("npy: write failed " + path);
}

inline Array load_npy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npy: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return detail::parse_npy(buf.data(), buf.size());
}

// Output entry: exactly one of f8/u1 payloads is used.
struct OutArray {
  std::vector<std::size_t> shape;
  std::vector<double> f8;
  std::vector<std::uint8_t> u1;
};

inline void save_npz(const std::string& path, const std::vector<std::pair<std::string, OutArray>>& entries) {
  std::string out;
  std::string central;
  std::uint16_t count = 0;
  for (const auto& [key, arr] : entries) {
    const std::string name = key + ".npy";
    const std::string payload = arr.u1.empty() ? detail::npy_bytes_f8(arr.shape, arr.f8.data(), arr.f8.size())
                                               : detail::npy_bytes_u1(arr.shape, arr.u1.data(), arr.u1.size());
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    const auto offset = static_cast<std::uint32_t>(out.size());
    const auto sz = static_cast<std::uint32_t>(payload.size());

    detail::put32(out, 0x04034b50);
    detail::put16(out, 20);  // version needed
    detail::put16(out, 0);   // flags
    detail::put16(out, 0);   // method: stored
    detail::put16(out, 0);   // mod time
    detail::put16(out, 0);   // mod date
    detail::put32(out, crc);
    detail::put32(out, sz);
    detail::put32(out, sz);
    detail::put16(out, static_cast<std::uint16_t>(name.size()));
    detail::put16(out, 0);  // extra len
    out += name;
    out += payload;

    detail::put32(central, 0x02014b50);
    detail::put16(central, 20);
    detail::put16(central, 20);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put32(central, crc);
    detail::put32(central, sz);
    detail::put32(central, sz);
    detail::put16(central, static_cast<std::uint16_t>(name.size()));
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put32(central, 0);
    detail::put32(central, offset);
    central += name;
    ++count;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  detail::put32(out, 0x06054b50);
  detail::put16(out, 0);
  detail::put16(out, 0);
  detail::put16(out, count);
  detail::put16(out, count);
  detail::put32(out, static_cast<std::uint32_t>(central.size()));
  detail::put32(out, cd_offset);
  detail::put16(out, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npz: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("npz: write failed " + path);
}

inline std::map<std::string, Array> load_npz(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("npz: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 22) throw std::runtime_error("npz: file too small");

  // end-of-central-directory record, scanned from the tail
  std::size_t eocd = std::string::npos;
  const std::size_t scan_from = buf.size() >= 22 + 65535 ? buf.size() - 22 - 65535 : 0;
  for (std::size_t i = buf.size() - 22 + 1; i-- > scan_from;) {
    if (detail::get32(buf.data() + i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) throw std::runtime_error("npz: no end-of-central-directory record");
  const std::uint16_t count = detail::get16(buf.data() + eocd + 10);
  std::size_t pos = detail::get32(buf.data() + eocd + 16);

  std::map<std::string, Array> arrays;
  for (std::uint16_t e = 0; e < count; ++e) {
    if (pos + 46 > buf.size() || detail::get32(buf.data() + pos) != 0x02014b50)
      throw std::runtime_error("npz: corrupt central directory");
    const std::uint16_t method = detail::get16(buf.data() + pos + 10);
    const std::uint32_t crc_expect = detail::get32(buf.data() + pos + 16);
    const std::uint32_t csize = detail::get32(buf.data() + pos + 20);
    const std::uint32_t usize = detail::get32(buf.data() + pos + 24);
    const std::uint16_t nlen = detail::get16(buf.data() + pos + 28);
    const std::uint16_t xlen = detail::get16(buf.data() + pos + 30);
    const std::uint16_t clen = detail::get16(buf.data() + pos + 32);
    const std::uint32_t lho = detail::get32(buf.data() + pos + 42);
    std::string name(reinterpret_cast<const char*>(buf.data() + pos + 46), nlen);
    pos += 46u + nlen + xlen + clen;

    if (lho + 30 > buf.size() || detail::get32(buf.data() + lho) != 0x04034b50)
      throw std::runtime_error("npz: corrupt local header for " + name);
    const std::uint16_t lnlen = detail::get16(buf.data() + lho + 26);
    const std::uint16_t lxlen = detail::get16(buf.data() + lho + 28);
    const std::size_t dstart = lho + 30u + lnlen + lxlen;
    if (dstart + csize > buf.size()) throw std::runtime_error("npz: truncated entry " + name);

    std::vector<std::uint8_t> payload;
    if (method == 0) {
      payload.assign(buf.begin() + static_cast<std::ptrdiff_t>(dstart), buf.begin() + static_cast<std::ptrdiff_t>(dstart + csize));
    } else if (method == 8) {
      payload = detail::inflate_raw(buf.data() + dstart, csize, usize);
    } else {
      throw std::runtime_error("npz: unsupported compression method for " + name);
    }
    const auto crc_got = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    if (crc_got != crc_expect) throw std::runtime_error("npz: crc mismatch in " + name);

    if (name.size() > 4 && name.substr(name.size() - 4) == ".npy") name = name.substr(0, name.size() - 4);
    arrays[name] = detail::parse_npy(payload.data(), payload.size());
  }
  return arrays;
}

// CRC32 of a whole file; used by the optional dataset checksum check.
inline std::uint32_t file_crc32(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("crc32: cannot open " + path);
  std::uint32_t crc = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
  char chunk[1 << 16];
  while (f) {
    f.read(chunk, sizeof(chunk));
    const std::streamsize got = f.gcount();
    if (got > 0) crc = static_cast<std::uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(chunk), static_cast<uInt>(got)));
  }
  return crc;
}

}  // namespace oslt::npz
