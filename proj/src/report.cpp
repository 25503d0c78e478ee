// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0

#include "onionlab/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

#include "onionlab/errors.hpp"

namespace onionlab {

namespace fs = std::filesystem;

std::vector<EvalArtifact> scan_artifacts(const std::string& root) {
  if (!fs::exists(root)) throw IoError("scan_artifacts: no such directory " + root);
  std::vector<EvalArtifact> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || entry.path().filename() != "eval.json") continue;
    EvalArtifact a;
    a.path = fs::relative(entry.path(), root).generic_string();
    a.body = read_json_file(entry.path().string());
    out.push_back(std::move(a));
  }
  std::sort(out.begin(), out.end(),
            [](const EvalArtifact& a, const EvalArtifact& b) { return a.path < b.path; });
  return out;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

struct Acc {
  double sum = 0;
  int count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double mean() const { return count ? sum / count : 0.0; }
};

std::string get_str(const Json& j, const char* key) {
  return j.value(key, std::string("?"));
}

int get_int(const Json& j, const char* key) { return j.value(key, -1); }

}  // namespace

std::string render_report(const std::vector<EvalArtifact>& artifacts) {
  // Keyed aggregates. Map keys double as the printed row labels, so the
  // row order is the map's lexicographic order, which is stable.
  std::map<std::pair<int, std::string>, Acc> base_ar;         // (hidden, feedback)
  std::map<std::pair<std::string, int>, Acc> intervene_ar;    // (objective, hidden)
  std::map<std::pair<std::string, int>, Acc> probe_rows_seq;  // (probe, hidden)
  std::map<std::pair<std::string, int>, Acc> probe_rows_tok;
  std::map<std::pair<std::string, int>, Acc> noinput_rows;  // (row kind, hidden)
  std::map<int, Acc> gate_rows;                             // hidden
  std::vector<std::pair<uint64_t, double>> toy_rows;        // (seed, accuracy)

  for (const auto& a : artifacts) {
    const std::string kind = get_str(a.body, "kind");
    const std::string mode = get_str(a.body, "mode");
    const int hidden = get_int(a.body, "hidden");
    if (kind == "base") {
      const double em = a.body.value("exact_match", 0.0);
      if (mode == "noinput")
        noinput_rows[{"base", hidden}].add(em);
      else
        base_ar[{hidden, get_str(a.body, "feedback")}].add(em);
    } else if (kind == "intervention") {
      const std::string objective = get_str(a.body, "objective");
      const double acc = a.body.value("accuracy", 0.0);
      if (mode == "noinput")
        noinput_rows[{objective, hidden}].add(acc);
      else
        intervene_ar[{objective, hidden}].add(acc);
    } else if (kind == "probe") {
      probe_rows_seq[{get_str(a.body, "probe"), hidden}].add(a.body.value("seq_exact", 0.0));
      probe_rows_tok[{get_str(a.body, "probe"), hidden}].add(a.body.value("token_acc", 0.0));
    } else if (kind == "gates") {
      gate_rows[hidden].add(a.body.value("monotone_fraction", 0.0));
    } else if (kind == "toy") {
      toy_rows.emplace_back(a.body.value("seed", 0ULL), a.body.value("accuracy", 0.0));
    }
  }
  std::sort(toy_rows.begin(), toy_rows.end());

  std::ostringstream os;
  os << "onionlab report\n";
  os << "===============\n\n";

  os << "Table 1: repeat task, exact match (self-decoding models)\n";
  os << "hidden|feedback|exact_match|runs\n";
  for (const auto& [k, acc] : base_ar)
    os << k.first << '|' << k.second << '|' << fmt(acc.mean()) << '|' << acc.count << "\n";
  os << "\n";

  os << "Table 2: interchange interventions on self-decoding models\n";
  os << "objective|hidden|accuracy|runs\n";
  for (const auto& [k, acc] : intervene_ar)
    os << k.first << '|' << k.second << '|' << fmt(acc.mean()) << '|' << acc.count << "\n";
  os << "\n";

  os << "Table 3: probes (sequence exact match, token accuracy)\n";
  os << "probe|hidden|seq_exact|token_acc|runs\n";
  for (const auto& [k, acc] : probe_rows_seq) {
    const Acc& tok = probe_rows_tok[k];
    os << k.first << '|' << k.second << '|' << fmt(acc.mean()) << '|' << fmt(tok.mean())
       << '|' << acc.count << "\n";
  }
  os << "\n";

  os << "Table 4: no-input models (base task and interventions)\n";
  os << "row|hidden|value|runs\n";
  for (const auto& [k, acc] : noinput_rows)
    os << k.first << '|' << k.second << '|' << fmt(acc.mean()) << '|' << acc.count << "\n";
  os << "\n";

  os << "Gate signature (fraction of non-increasing input-phase steps)\n";
  os << "hidden|monotone_fraction|runs\n";
  for (const auto& [k, acc] : gate_rows)
    os << k << '|' << fmt(acc.mean()) << '|' << acc.count << "\n";
  os << "\n";

  os << "Toy model runs\n";
  os << "seed|accuracy\n";
  for (const auto& [seed, acc] : toy_rows) os << seed << '|' << fmt(acc) << "\n";
  os << "\n";

  os << "Summary\n";
  os << "-------\n";
  os << "artifacts: " << artifacts.size() << "\n";
  for (const auto& a : artifacts) os << "  " << a.path << "\n";
  return os.str();
}

}  // namespace onionlab
