// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "onionlab/taskgen.hpp"
#include "onionlab/tensor.hpp"

namespace onionlab {

using Json = nlohmann::json;

// -------------------------------------------------------------- hashing ----
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
std::string fnv1a64_hex(const void* data, size_t n);
std::string hash_file_hex(const std::string& path);
std::string hash_string_hex(const std::string& s);

// -------------------------------------------------------- atomic writes ----
// Write to <path>.tmp.<pid> then rename. Readers never observe partials.
void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

// ----------------------------------------------------------- JSON utils ----
void write_json_file(const std::string& path, const Json& j);
Json read_json_file(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<Json>& lines);
std::vector<Json> read_jsonl(const std::string& path);

// -------------------------------------------------------- corpus format ----
// "ONCORP1" magic, u32 record count, then per record: u8 length followed by
// that many u8 token ids. Little-endian, no padding.
void write_corpus(const std::string& path, const Corpus& c);
Corpus read_corpus(const std::string& path);

// ----------------------------------------------- named array containers ----
// Shared layout for checkpoints ("ONCKPT1") and auxiliary bundles ("ONAUX1"):
//   7-byte magic, u32 metadata length, metadata JSON (UTF-8), then each
//   array's raw little-endian f32 data in the order declared by the
//   metadata's "arrays" list ({name, shape}).
struct NamedArrays {
  std::vector<std::pair<std::string, TensorF>> items;

  void add(const std::string& name, const TensorF& t) { items.emplace_back(name, t); }
  const TensorF& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_container(const std::string& path, const std::string& magic,
                    Json meta, const NamedArrays& arrays);
std::pair<Json, NamedArrays> load_container(const std::string& path,
                                            const std::string& magic);

inline constexpr const char* kCorpusMagic = "ONCORP1";
inline constexpr const char* kCheckpointMagic = "ONCKPT1";
inline constexpr const char* kAuxMagic = "ONAUX1";

}  // namespace onionlab
