// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "onionlab/gru.hpp"
#include "onionlab/taskgen.hpp"

namespace onionlab {

// Viridis color map, 256 entries of {r,g,b}.
const std::array<std::array<uint8_t, 3>, 256>& viridis_table();
std::array<uint8_t, 3> viridis(double v);  // v clamped to [0,1]

// Per-channel mean update-gate activity over a set of sequences, aligned on
// global step. Rows are hidden channels, columns are steps 1..2*l_max+1.
struct GateTrace {
  int n = 0;
  int steps = 0;
  std::vector<double> mean;  // [n x steps], row-major
  double at(int channel, int step) const {
    return mean[static_cast<size_t>(channel) * steps + step];
  }
};

GateTrace collect_gate_trace(const GruParams& p, const std::vector<Seq>& seqs,
                             DecodeMode mode);

// Fraction of adjacent input-phase step pairs (columns t and t+1 for
// t = 1..l_max, using rows averaged over sequences of full length) whose
// per-channel mean does not increase, measured over channels sorted by the
// step of their peak activity. A layered store sweeps channels in order, so
// this stays near 1.
double gate_monotone_fraction(const GateTrace& trace, int l_max, double tol = 1e-6);

void write_gate_csv(const std::string& path, const GateTrace& trace);

// PPM (P6) heatmap, channels on the y axis ordered by peak step, time on the
// x axis, each cell scaled up for visibility.
void write_gate_ppm(const std::string& path, const GateTrace& trace, int cell = 8);

}  // namespace onionlab
