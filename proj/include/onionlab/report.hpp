// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "onionlab/io.hpp"

namespace onionlab {

// One summary record loaded back from an artifact tree. Every subcommand
// writes its headline numbers to an eval.json next to its other outputs; the
// report is assembled purely from those files, so rebuilding it never reruns
// any model.
struct EvalArtifact {
  std::string path;  // relative to the scanned root, '/'-separated
  Json body;
};

std::vector<EvalArtifact> scan_artifacts(const std::string& root);

// Four delimited tables (base task, interventions, probes, no-input models)
// plus a plain-text summary. Output depends only on the eval.json contents
// and their sorted relative paths, so it is byte-stable across invocations.
std::string render_report(const std::vector<EvalArtifact>& artifacts);

}  // namespace onionlab
