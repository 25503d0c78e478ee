// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0

#include "onionlab/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "onionlab/errors.hpp"

namespace onionlab {

// ---------------------------------------------------------------------------
// viridis

const std::array<std::array<uint8_t, 3>, 256>& viridis_table() {
  static const std::array<std::array<uint8_t, 3>, 256> table = {{
    {68,1,84},{68,2,86},{69,4,87},{69,5,89},{70,7,90},{70,8,92},{70,10,93},{70,11,94},
    {71,13,96},{71,14,97},{71,16,99},{71,17,100},{71,19,101},{72,20,103},{72,22,104},{72,23,105},
    {72,24,106},{72,26,108},{72,27,109},{72,28,110},{72,29,111},{72,31,112},{72,32,113},{72,33,115},
    {72,35,116},{72,36,117},{72,37,118},{72,38,119},{72,40,120},{72,41,121},{71,42,122},{71,44,122},
    {71,45,123},{71,46,124},{71,47,125},{70,48,126},{70,50,126},{70,51,127},{70,52,128},{69,53,129},
    {69,55,129},{69,56,130},{68,57,131},{68,58,131},{68,59,132},{67,61,132},{67,62,133},{66,63,133},
    {66,64,134},{66,65,134},{65,66,135},{65,68,135},{64,69,136},{64,70,136},{63,71,136},{63,72,137},
    {62,73,137},{62,74,137},{62,76,138},{61,77,138},{61,78,138},{60,79,138},{60,80,139},{59,81,139},
    {59,82,139},{58,83,139},{58,84,140},{57,85,140},{57,86,140},{56,88,140},{56,89,140},{55,90,140},
    {55,91,141},{54,92,141},{54,93,141},{53,94,141},{53,95,141},{52,96,141},{52,97,141},{51,98,141},
    {51,99,141},{50,100,142},{50,101,142},{49,102,142},{49,103,142},{49,104,142},{48,105,142},{48,106,142},
    {47,107,142},{47,108,142},{46,109,142},{46,110,142},{46,111,142},{45,112,142},{45,113,142},{44,113,142},
    {44,114,142},{44,115,142},{43,116,142},{43,117,142},{42,118,142},{42,119,142},{42,120,142},{41,121,142},
    {41,122,142},{41,123,142},{40,124,142},{40,125,142},{39,126,142},{39,127,142},{39,128,142},{38,129,142},
    {38,130,142},{38,130,142},{37,131,142},{37,132,142},{37,133,142},{36,134,142},{36,135,142},{35,136,142},
    {35,137,142},{35,138,141},{34,139,141},{34,140,141},{34,141,141},{33,142,141},{33,143,141},{33,144,141},
    {33,145,140},{32,146,140},{32,146,140},{32,147,140},{31,148,140},{31,149,139},{31,150,139},{31,151,139},
    {31,152,139},{31,153,138},{31,154,138},{30,155,138},{30,156,137},{30,157,137},{31,158,137},{31,159,136},
    {31,160,136},{31,161,136},{31,161,135},{31,162,135},{32,163,134},{32,164,134},{33,165,133},{33,166,133},
    {34,167,133},{34,168,132},{35,169,131},{36,170,131},{37,171,130},{37,172,130},{38,173,129},{39,173,129},
    {40,174,128},{41,175,127},{42,176,127},{44,177,126},{45,178,125},{46,179,124},{47,180,124},{49,181,123},
    {50,182,122},{52,182,121},{53,183,121},{55,184,120},{56,185,119},{58,186,118},{59,187,117},{61,188,116},
    {63,188,115},{64,189,114},{66,190,113},{68,191,112},{70,192,111},{72,193,110},{74,193,109},{76,194,108},
    {78,195,107},{80,196,106},{82,197,105},{84,197,104},{86,198,103},{88,199,101},{90,200,100},{92,200,99},
    {94,201,98},{96,202,96},{99,203,95},{101,203,94},{103,204,92},{105,205,91},{108,205,90},{110,206,88},
    {112,207,87},{115,208,86},{117,208,84},{119,209,83},{122,209,81},{124,210,80},{127,211,78},{129,211,77},
    {132,212,75},{134,213,73},{137,213,72},{139,214,70},{142,214,69},{144,215,67},{147,215,65},{149,216,64},
    {152,216,62},{155,217,60},{157,217,59},{160,218,57},{162,218,55},{165,219,54},{168,219,52},{170,220,50},
    {173,220,48},{176,221,47},{178,221,45},{181,222,43},{184,222,41},{186,222,40},{189,223,38},{192,223,37},
    {194,223,35},{197,224,33},{200,224,32},{202,225,31},{205,225,29},{208,225,28},{210,226,27},{213,226,26},
    {216,226,25},{218,227,25},{221,227,24},{223,227,24},{226,228,24},{229,228,25},{231,228,25},{234,229,26},
    {236,229,27},{239,229,28},{241,229,29},{244,230,30},{246,230,32},{248,230,33},{251,231,35},{253,231,37},
  }};
  return table;
}

std::array<uint8_t, 3> viridis(double v) {
  if (!(v == v)) v = 0;
  v = std::min(1.0, std::max(0.0, v));
  const int idx = static_cast<int>(std::lround(v * 255.0));
  return viridis_table()[static_cast<size_t>(idx)];
}

// ---------------------------------------------------------------------------
// gate collection

GateTrace collect_gate_trace(const GruParams& p, const std::vector<Seq>& seqs,
                             DecodeMode mode) {
  const int n = p.n;
  const int vocab = p.task.vocab();
  GateTrace trace;
  trace.n = n;
  trace.steps = 2 * p.task.l_max + 1;
  trace.mean.assign(static_cast<size_t>(n) * trace.steps, 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(trace.steps), 0);

  const float* E = p.E->value.data();
  const float* Wz = p.Wz->value.data();
  const float* Uz = p.Uz->value.data();
  const float* bz = p.bz->value.data();
  const float* Wr = p.Wr->value.data();
  const float* Ur = p.Ur->value.data();
  const float* br = p.br->value.data();
  const float* Wh = p.Wh->value.data();
  const float* Uh = p.Uh->value.data();
  const float* bh = p.bh->value.data();
  const float* Wo = p.Wo->value.data();
  const float* bo = p.bo->value.data();

  std::vector<float> h(static_cast<size_t>(n));
  std::vector<float> hn(static_cast<size_t>(n));
  std::vector<float> z(static_cast<size_t>(n));
  std::vector<float> r(static_cast<size_t>(n));
  std::vector<float> logits(static_cast<size_t>(vocab));

  for (const Seq& seq : seqs) {
    const int L = static_cast<int>(seq.size());
    if (L < 1 || L > p.task.l_max)
      throw ContractError("collect_gate_trace: sequence length out of range");
    std::fill(h.begin(), h.end(), 0.0f);
    int feed_next = -1;
    for (int t = 1; t <= 2 * L + 1; ++t) {
      int tok;
      if (t <= L) tok = seq[static_cast<size_t>(t - 1)];
      else if (t == L + 1) tok = p.task.s_token();
      else tok = (mode == DecodeMode::Autoregressive) ? feed_next : p.task.pad_token();
      const float* x = E + static_cast<int64_t>(tok) * n;
      for (int k = 0; k < n; ++k) {
        double az = bz[k], ar = br[k];
        const float* wzr = Wz + static_cast<int64_t>(k) * n;
        const float* uzr = Uz + static_cast<int64_t>(k) * n;
        const float* wrr = Wr + static_cast<int64_t>(k) * n;
        const float* urr = Ur + static_cast<int64_t>(k) * n;
        for (int i = 0; i < n; ++i) {
          az += static_cast<double>(x[i]) * wzr[i] + static_cast<double>(h[static_cast<size_t>(i)]) * uzr[i];
          ar += static_cast<double>(x[i]) * wrr[i] + static_cast<double>(h[static_cast<size_t>(i)]) * urr[i];
        }
        z[static_cast<size_t>(k)] = static_cast<float>(1.0 / (1.0 + std::exp(-az)));
        r[static_cast<size_t>(k)] = static_cast<float>(1.0 / (1.0 + std::exp(-ar)));
      }
      for (int k = 0; k < n; ++k) {
        double ah = bh[k];
        const float* whr = Wh + static_cast<int64_t>(k) * n;
        const float* uhr = Uh + static_cast<int64_t>(k) * n;
        for (int i = 0; i < n; ++i)
          ah += static_cast<double>(x[i]) * whr[i] +
                static_cast<double>(r[static_cast<size_t>(i)] * h[static_cast<size_t>(i)]) * uhr[i];
        const double u = std::tanh(ah);
        hn[static_cast<size_t>(k)] =
            h[static_cast<size_t>(k)] +
            z[static_cast<size_t>(k)] * static_cast<float>(u - h[static_cast<size_t>(k)]);
      }
      h.swap(hn);
      for (int k = 0; k < n; ++k)
        trace.mean[static_cast<size_t>(k) * trace.steps + (t - 1)] += z[static_cast<size_t>(k)];
      ++counts[static_cast<size_t>(t - 1)];

      if (mode == DecodeMode::Autoregressive && t >= L + 1 && t <= 2 * L) {
        int best = 0;
        float best_v = 0;
        for (int v = 0; v < vocab; ++v) {
          double a = bo[v];
          for (int i = 0; i < n; ++i) a += static_cast<double>(h[static_cast<size_t>(i)]) * Wo[static_cast<int64_t>(i) * vocab + v];
          logits[static_cast<size_t>(v)] = static_cast<float>(a);
        }
        for (int v = 0; v < p.task.n_symbols; ++v)
          if (v == 0 || logits[static_cast<size_t>(v)] > best_v) {
            best = v;
            best_v = logits[static_cast<size_t>(v)];
          }
        feed_next = best;
      }
    }
  }

  for (int t = 0; t < trace.steps; ++t) {
    if (counts[static_cast<size_t>(t)] == 0) continue;
    for (int k = 0; k < n; ++k)
      trace.mean[static_cast<size_t>(k) * trace.steps + t] /=
          static_cast<double>(counts[static_cast<size_t>(t)]);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// signature and output

double gate_monotone_fraction(const GateTrace& trace, int l_max, double tol) {
  if (l_max < 2 || trace.steps < l_max) return 0.0;
  std::vector<double> series(static_cast<size_t>(l_max), 0.0);
  for (int t = 0; t < l_max; ++t) {
    double s = 0;
    for (int k = 0; k < trace.n; ++k) s += trace.at(k, t);
    series[static_cast<size_t>(t)] = s / trace.n;
  }
  int ok = 0;
  for (int t = 0; t + 1 < l_max; ++t)
    if (series[static_cast<size_t>(t + 1)] <= series[static_cast<size_t>(t)] + tol) ++ok;
  return static_cast<double>(ok) / static_cast<double>(l_max - 1);
}

void write_gate_csv(const std::string& path, const GateTrace& trace) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_gate_csv: cannot open " + path);
  f << "channel";
  for (int t = 1; t <= trace.steps; ++t) f << ",t" << t;
  f << "\n";
  char buf[32];
  for (int k = 0; k < trace.n; ++k) {
    f << k;
    for (int t = 0; t < trace.steps; ++t) {
      std::snprintf(buf, sizeof(buf), "%.9g", trace.at(k, t));
      f << ',' << buf;
    }
    f << "\n";
  }
  if (!f) throw IoError("write_gate_csv: write failed for " + path);
}

void write_gate_ppm(const std::string& path, const GateTrace& trace, int cell) {
  if (cell < 1) throw ContractError("write_gate_ppm: cell must be positive");
  // Sort channels by where their activity peaks so the layering reads as a
  // diagonal band.
  std::vector<int> order(static_cast<size_t>(trace.n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> peak(static_cast<size_t>(trace.n), 0);
  for (int k = 0; k < trace.n; ++k) {
    int best = 0;
    for (int t = 1; t < trace.steps; ++t)
      if (trace.at(k, t) > trace.at(k, best)) best = t;
    peak[static_cast<size_t>(k)] = best;
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return peak[static_cast<size_t>(a)] < peak[static_cast<size_t>(b)]; });

  const int W = trace.steps * cell;
  const int H = trace.n * cell;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_gate_ppm: cannot open " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(W) * 3);
  for (int y = 0; y < H; ++y) {
    const int k = order[static_cast<size_t>(y / cell)];
    for (int x = 0; x < W; ++x) {
      const auto rgb = viridis(trace.at(k, x / cell));
      row[static_cast<size_t>(x) * 3 + 0] = rgb[0];
      row[static_cast<size_t>(x) * 3 + 1] = rgb[1];
      row[static_cast<size_t>(x) * 3 + 2] = rgb[2];
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write_gate_ppm: write failed for " + path);
}

}  // namespace onionlab
