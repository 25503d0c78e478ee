// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#include "onionlab/io.hpp"

#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "onionlab/errors.hpp"

namespace onionlab {

// -------------------------------------------------------------- hashing ----
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string fnv1a64_hex(const void* data, size_t n) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(data, n)));
  return buf;
}

std::string hash_string_hex(const std::string& s) {
  return fnv1a64_hex(s.data(), s.size());
}

std::string hash_file_hex(const std::string& path) {
  return hash_string_hex(read_file(path));
}

// -------------------------------------------------------- atomic writes ----
std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  if (!f.good() && !f.eof()) throw IoError("read failed: " + path);
  return ss.str();
}

bool file_exists(const std::string& path) {
  struct stat st{};
  return ::stat(path.c_str(), &st) == 0;
}

void ensure_dir(const std::string& path) {
  if (path.empty()) return;
  std::string cur;
  for (size_t i = 0; i < path.size(); ++i) {
    cur += path[i];
    if (path[i] == '/' || i + 1 == path.size()) {
      if (cur == "/" || cur.empty()) continue;
      std::string d = cur;
      while (!d.empty() && d.back() == '/') d.pop_back();
      if (d.empty()) continue;
      if (::mkdir(d.c_str(), 0755) != 0 && errno != EEXIST)
        throw IoError("mkdir failed: " + d + " (" + std::strerror(errno) + ")");
    }
  }
}

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f.good()) throw IoError("write failed: " + tmp);
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::remove(tmp.c_str());
    throw IoError("rename failed: " + tmp + " -> " + path);
  }
}

// ----------------------------------------------------------- JSON utils ----
void write_json_file(const std::string& path, const Json& j) {
  atomic_write_file(path, j.dump(2) + "\n");
}

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
}

void write_jsonl(const std::string& path, const std::vector<Json>& lines) {
  std::string out;
  for (const auto& j : lines) out += j.dump() + "\n";
  atomic_write_file(path, out);
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Json> out;
  std::string line;
  size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw IoError("malformed JSONL at " + path + ":" + std::to_string(ln) +
                    ": " + e.what());
    }
  }
  return out;
}

// -------------------------------------------------------- corpus format ----
namespace {

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const std::string& s, size_t& off, const std::string& what) {
  if (off + 4 > s.size()) throw IoError("truncated " + what);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(s.data() + off);
  off += 4;
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_corpus(const std::string& path, const Corpus& c) {
  std::string out(kCorpusMagic);
  if (c.size() > 0xffffffffLL) throw IoError("corpus too large for format");
  put_u32(out, static_cast<uint32_t>(c.size()));
  for (const auto& s : c.seqs) {
    if (s.size() > 255) throw IoError("sequence too long for format");
    out.push_back(static_cast<char>(s.size()));
    out.append(reinterpret_cast<const char*>(s.data()), s.size());
  }
  atomic_write_file(path, out);
}

Corpus read_corpus(const std::string& path) {
  const std::string s = read_file(path);
  const std::string magic(kCorpusMagic);
  if (s.size() < magic.size() || s.compare(0, magic.size(), magic) != 0)
    throw IoError("bad corpus magic in " + path);
  size_t off = magic.size();
  const uint32_t count = get_u32(s, off, "corpus header in " + path);
  Corpus c;
  c.seqs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    if (off >= s.size())
      throw IoError("truncated corpus record " + std::to_string(i) + " in " + path);
    const size_t len = static_cast<unsigned char>(s[off++]);
    if (off + len > s.size())
      throw IoError("truncated corpus record " + std::to_string(i) + " in " + path);
    c.seqs.emplace_back(s.begin() + static_cast<long>(off),
                        s.begin() + static_cast<long>(off + len));
    off += len;
  }
  if (off != s.size()) throw IoError("trailing bytes in corpus " + path);
  return c;
}

// ----------------------------------------------- named array containers ----
const TensorF& NamedArrays::get(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw IoError("container missing array: " + name);
}

bool NamedArrays::has(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return true;
  return false;
}

void save_container(const std::string& path, const std::string& magic,
                    Json meta, const NamedArrays& arrays) {
  Json decl = Json::array();
  for (const auto& [name, t] : arrays.items) {
    Json a;
    a["name"] = name;
    a["shape"] = t.shape();
    decl.push_back(a);
  }
  meta["arrays"] = decl;
  const std::string mbytes = meta.dump();
  std::string out(magic);
  put_u32(out, static_cast<uint32_t>(mbytes.size()));
  out += mbytes;
  for (const auto& [name, t] : arrays.items) {
    static_assert(sizeof(float) == 4);
    out.append(reinterpret_cast<const char*>(t.data()),
               static_cast<size_t>(t.numel()) * 4);
  }
  atomic_write_file(path, out);
}

std::pair<Json, NamedArrays> load_container(const std::string& path,
                                            const std::string& magic) {
  const std::string s = read_file(path);
  if (s.size() < magic.size() || s.compare(0, magic.size(), magic) != 0)
    throw IoError("bad magic in " + path + " (want " + magic + ")");
  size_t off = magic.size();
  const uint32_t mlen = get_u32(s, off, "container header in " + path);
  if (off + mlen > s.size()) throw IoError("truncated metadata in " + path);
  Json meta;
  try {
    meta = Json::parse(s.substr(off, mlen));
  } catch (const Json::parse_error& e) {
    throw IoError("malformed container metadata in " + path + ": " + e.what());
  }
  off += mlen;
  if (!meta.contains("arrays") || !meta["arrays"].is_array())
    throw IoError("container metadata missing arrays list in " + path);
  NamedArrays out;
  for (const auto& a : meta["arrays"]) {
    const std::string name = a.at("name").get<std::string>();
    const std::vector<int64_t> shape = a.at("shape").get<std::vector<int64_t>>();
    TensorF t(shape);
    const size_t bytes = static_cast<size_t>(t.numel()) * 4;
    if (off + bytes > s.size())
      throw IoError("truncated array '" + name + "' in " + path);
    std::memcpy(t.data(), s.data() + off, bytes);
    off += bytes;
    out.items.emplace_back(name, std::move(t));
  }
  if (off != s.size()) throw IoError("trailing bytes in " + path);
  return {std::move(meta), std::move(out)};
}

}  // namespace onionlab
