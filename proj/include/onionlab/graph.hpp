// Copyright (c) 2026 onionlab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "onionlab/errors.hpp"
#include "onionlab/kernels.hpp"
#include "onionlab/linalg.hpp"
#include "onionlab/rng.hpp"
#include "onionlab/tensor.hpp"

namespace onionlab {

// Named trainable (or frozen) array. Gradients accumulate across backward
// passes until zero_grads().
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()),
        trainable(train) {}
};

template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, bool trainable = true) {
    if (find(name)) throw ContractError("duplicate parameter: " + name);
    params_.emplace_back(std::move(name), std::move(value), trainable);
    return params_.back();
  }
  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ContractError("unknown parameter: " + name);
  }
  void zero_grads() {
    for (auto& p : params_) p.grad.zero();
  }
  size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::deque<Parameter<T>> params_;  // deque: stable addresses
};

// Eager tape autodiff over rank<=2 tensors. Ops execute immediately; backward
// replays the tape in reverse creation order (which is a topological order).
// Non-finite values are reported with the producing op's name, in forward and
// backward. Gradients flow only into subgraphs reaching a trainable parameter.
template <typename T>
class Graph {
 public:
  struct Val {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // ----------------------------------------------------------- leaves ----
  Val input(Tensor<T> v) {
    return push(std::move(v), {}, "input", nullptr, false, nullptr);
  }
  Val param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Val{it->second};
    Val v = push(p.value, {}, "param", nullptr, p.trainable, &p);
    param_nodes_[&p] = v.id;
    return v;
  }

  const Tensor<T>& value(Val v) const { return node(v).value; }
  T scalar_value(Val v) const {
    const Tensor<T>& t = node(v).value;
    if (t.numel() != 1) throw ContractError("scalar_value on non-scalar");
    return t[0];
  }
  const Tensor<T>& grad_of(Val v) const {
    const Node& n = node(v);
    if (!n.has_grad) throw ContractError("grad_of: no gradient at node");
    return n.grad;
  }
  size_t num_nodes() const { return nodes_.size(); }

  // --------------------------------------------------------- backward ----
  void backward(Val root) {
    Node& r = node_mut(root);
    if (r.value.numel() != 1) throw ContractError("backward root must be scalar");
    grad_buf(root.id)[0] = T(1);
    for (int32_t i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.has_grad) continue;
      if (!n.grad.all_finite())
        throw NumericError(std::string("non-finite gradient at op '") + n.op +
                           "' (node " + std::to_string(i) + ")");
      if (n.back) {
        cur_ = i;
        n.back(*this);
      }
      if (n.leaf && n.leaf->trainable) {
        kern::add(n.leaf->grad.data(), n.leaf->grad.data(), n.grad.data(),
                  static_cast<size_t>(n.grad.numel()));
      }
    }
  }

  // --------------------------------------------------------------- ops ----
  Val matmul(Val a, Val b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.rows(), "matmul",
            {&A, &B});
    Tensor<T> C({A.rows(), B.cols()});
    const int M = static_cast<int>(A.rows()), K = static_cast<int>(A.cols()),
              N = static_cast<int>(B.cols());
    kern::gemm_acc(C.data(), A.data(), B.data(), M, K, N);
    return push(std::move(C), {a, b}, "matmul", [=](Graph& g) {
      const Tensor<T>& dC = g.cur_grad();
      if (g.wants(a))
        kern::gemm_acc_bt(g.grad_buf(a.id).data(), dC.data(),
                          g.value(b).data(), M, N, K);
      if (g.wants(b))
        kern::gemm_acc_at(g.grad_buf(b.id).data(), g.value(a).data(),
                          dC.data(), K, M, N);
    });
  }

  // A * B^T without materializing the transpose.
  Val matmul_bt(Val a, Val b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.cols() == B.cols(), "matmul_bt",
            {&A, &B});
    Tensor<T> C({A.rows(), B.rows()});
    const int M = static_cast<int>(A.rows()), K = static_cast<int>(A.cols()),
              N = static_cast<int>(B.rows());
    kern::gemm_acc_bt(C.data(), A.data(), B.data(), M, K, N);
    return push(std::move(C), {a, b}, "matmul_bt", [=](Graph& g) {
      const Tensor<T>& dC = g.cur_grad();  // [M x N]
      if (g.wants(a))  // dA = dC * B
        kern::gemm_acc(g.grad_buf(a.id).data(), dC.data(), g.value(b).data(),
                       M, N, K);
      if (g.wants(b))  // dB = dC^T * A
        kern::gemm_acc_at(g.grad_buf(b.id).data(), dC.data(),
                          g.value(a).data(), N, M, K);
    });
  }

  Val add(Val a, Val b) { return ew2(a, b, "add"); }
  Val sub(Val a, Val b) { return ew2(a, b, "sub"); }
  Val mul(Val a, Val b) { return ew2(a, b, "mul"); }

  Val scale(Val a, double c) {
    const Tensor<T>& A = value(a);
    Tensor<T> Y(A.shape());
    kern::scale(Y.data(), static_cast<T>(c), A.data(),
                static_cast<size_t>(A.numel()));
    return push(std::move(Y), {a}, "scale", [=](Graph& g) {
      if (g.wants(a))
        kern::axpy(g.grad_buf(a.id).data(), static_cast<T>(c),
                   g.cur_grad().data(),
                   static_cast<size_t>(g.value(a).numel()));
    });
  }

  // X[BxN] + v[N] broadcast over rows.
  Val add_rowvec(Val x, Val v) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& V = value(v);
    require(X.rank() == 2 && V.rank() == 1 && V.cols() == X.cols(),
            "add_rowvec", {&X, &V});
    Tensor<T> Y(X.shape());
    const int64_t B = X.rows(), N = X.cols();
    for (int64_t r = 0; r < B; ++r)
      kern::add(Y.data() + r * N, X.data() + r * N, V.data(),
                static_cast<size_t>(N));
    return push(std::move(Y), {x, v}, "add_rowvec", [=](Graph& g) {
      const Tensor<T>& dY = g.cur_grad();
      if (g.wants(x))
        kern::add(g.grad_buf(x.id).data(), g.grad_buf(x.id).data(), dY.data(),
                  static_cast<size_t>(dY.numel()));
      if (g.wants(v)) {
        Tensor<T>& dv = g.grad_buf(v.id);
        for (int64_t r = 0; r < B; ++r)
          kern::add(dv.data(), dv.data(), dY.data() + r * N,
                    static_cast<size_t>(N));
      }
    });
  }

  // X[BxN] .* v[N] broadcast over rows.
  Val mul_rowvec(Val x, Val v) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& V = value(v);
    require(X.rank() == 2 && V.rank() == 1 && V.cols() == X.cols(),
            "mul_rowvec", {&X, &V});
    Tensor<T> Y(X.shape());
    const int64_t B = X.rows(), N = X.cols();
    for (int64_t r = 0; r < B; ++r)
      kern::mul(Y.data() + r * N, X.data() + r * N, V.data(),
                static_cast<size_t>(N));
    return push(std::move(Y), {x, v}, "mul_rowvec", [=](Graph& g) {
      const Tensor<T>& dY = g.cur_grad();
      if (g.wants(x)) {
        Tensor<T>& dx = g.grad_buf(x.id);
        for (int64_t r = 0; r < B; ++r)
          kern::mul_acc(dx.data() + r * N, dY.data() + r * N, g.value(v).data(),
                        static_cast<size_t>(N));
      }
      if (g.wants(v)) {
        Tensor<T>& dv = g.grad_buf(v.id);
        for (int64_t r = 0; r < B; ++r)
          kern::mul_acc(dv.data(), dY.data() + r * N, g.value(x).data() + r * N,
                        static_cast<size_t>(N));
      }
    });
  }

  // X[BxN] + c[Bx1] broadcast over columns.
  Val add_colvec(Val x, Val c) {
    const Tensor<T>& X = value(x);
    const Tensor<T>& C = value(c);
    require(X.rank() == 2 && C.rank() == 2 && C.cols() == 1 &&
                C.rows() == X.rows(),
            "add_colvec", {&X, &C});
    Tensor<T> Y(X.shape());
    const int64_t B = X.rows(), N = X.cols();
    for (int64_t r = 0; r < B; ++r)
      for (int64_t j = 0; j < N; ++j) Y.at(r, j) = X.at(r, j) + C[r];
    return push(std::move(Y), {x, c}, "add_colvec", [=](Graph& g) {
      const Tensor<T>& dY = g.cur_grad();
      if (g.wants(x))
        kern::add(g.grad_buf(x.id).data(), g.grad_buf(x.id).data(), dY.data(),
                  static_cast<size_t>(dY.numel()));
      if (g.wants(c)) {
        Tensor<T>& dc = g.grad_buf(c.id);
        for (int64_t r = 0; r < B; ++r)
          dc[r] += kern::sum(dY.data() + r * N, static_cast<size_t>(N));
      }
    });
  }

  Val sigmoid(Val a) {
    const Tensor<T>& A = value(a);
    Tensor<T> Y(A.shape());
    kern::sigmoid(Y.data(), A.data(), static_cast<size_t>(A.numel()));
    return push(std::move(Y), {a}, "sigmoid", [=](Graph& g) {
      if (g.wants(a))
        kern::sigmoid_grad_acc(g.grad_buf(a.id).data(),
                               g.cur_grad().data(),
                               g.cur_val().data(),
                               static_cast<size_t>(g.value(a).numel()));
    });
  }

  Val tanh_(Val a) {
    const Tensor<T>& A = value(a);
    Tensor<T> Y(A.shape());
    kern::tanh_(Y.data(), A.data(), static_cast<size_t>(A.numel()));
    return push(std::move(Y), {a}, "tanh", [=](Graph& g) {
      if (g.wants(a))
        kern::tanh_grad_acc(g.grad_buf(a.id).data(),
                            g.cur_grad().data(),
                            g.cur_val().data(),
                            static_cast<size_t>(g.value(a).numel()));
    });
  }

  Val relu(Val a) {
    const Tensor<T>& A = value(a);
    Tensor<T> Y(A.shape());
    for (int64_t i = 0; i < A.numel(); ++i) Y[i] = A[i] > T(0) ? A[i] : T(0);
    return push(std::move(Y), {a}, "relu", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& X = g.value(a);
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t i = 0; i < X.numel(); ++i)
        if (X[i] > T(0)) dx[i] += dY[i];
    });
  }

  Val softmax_rows(Val a) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2, "softmax_rows", {&A});
    Tensor<T> Y(A.shape());
    kern::softmax_rows(Y.data(), A.data(), static_cast<int>(A.rows()),
                       static_cast<int>(A.cols()));
    return push(std::move(Y), {a}, "softmax_rows", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& S = g.cur_val();
      Tensor<T>& dx = g.grad_buf(a.id);
      const int64_t R = S.rows(), C = S.cols();
      for (int64_t r = 0; r < R; ++r) {
        const T* s = S.data() + r * C;
        const T* dy = dY.data() + r * C;
        const T inner = kern::dot(s, dy, static_cast<size_t>(C));
        T* d = dx.data() + r * C;
        for (int64_t j = 0; j < C; ++j) d[j] += s[j] * (dy[j] - inner);
      }
    });
  }

  Val log_softmax_rows(Val a) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2, "log_softmax_rows", {&A});
    Tensor<T> Y(A.shape());
    kern::log_softmax_rows(Y.data(), A.data(), static_cast<int>(A.rows()),
                           static_cast<int>(A.cols()));
    return push(std::move(Y), {a}, "log_softmax_rows", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& Ylog = g.cur_val();
      Tensor<T>& dx = g.grad_buf(a.id);
      const int64_t R = Ylog.rows(), C = Ylog.cols();
      for (int64_t r = 0; r < R; ++r) {
        const T* y = Ylog.data() + r * C;
        const T* dy = dY.data() + r * C;
        const T dsum = kern::sum(dy, static_cast<size_t>(C));
        T* d = dx.data() + r * C;
        for (int64_t j = 0; j < C; ++j) d[j] += dy[j] - std::exp(y[j]) * dsum;
      }
    });
  }

  // Mean negative log-likelihood over masked rows of a log-probability
  // matrix. normalizer defaults to the mask count; pass an explicit value to
  // pool several calls into one global mean.
  Val masked_nll(Val logp, std::vector<int> targets, std::vector<uint8_t> mask,
                 double normalizer = -1.0) {
    const Tensor<T>& LP = value(logp);
    require(LP.rank() == 2, "masked_nll", {&LP});
    if (targets.size() != static_cast<size_t>(LP.rows()) ||
        mask.size() != targets.size())
      throw ContractError("masked_nll: targets/mask size mismatch");
    double cnt = 0;
    for (uint8_t m : mask) cnt += m ? 1 : 0;
    const double norm = normalizer > 0 ? normalizer : (cnt > 0 ? cnt : 1);
    double acc = 0;
    for (int64_t r = 0; r < LP.rows(); ++r) {
      if (!mask[static_cast<size_t>(r)]) continue;
      const int t = targets[static_cast<size_t>(r)];
      if (t < 0 || t >= LP.cols())
        throw ContractError("masked_nll: target out of range");
      acc -= static_cast<double>(LP.at(r, t));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / norm));
    return push(std::move(out), {logp}, "masked_nll",
                [=, targets = std::move(targets),
                 mask = std::move(mask)](Graph& g) {
                  if (!g.wants(logp)) return;
                  const T go = g.cur_grad()[0];
                  Tensor<T>& d = g.grad_buf(logp.id);
                  for (size_t r = 0; r < targets.size(); ++r)
                    if (mask[r])
                      d.at(static_cast<int64_t>(r), targets[r]) -=
                          go / static_cast<T>(norm);
                });
  }

  // Row-wise layer normalization without affine terms, epsilon inside sqrt.
  Val layer_norm_rows(Val a, double eps = 1e-5) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2, "layer_norm_rows", {&A});
    const int64_t R = A.rows(), C = A.cols();
    Tensor<T> Y(A.shape());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
      const T* x = A.data() + r * C;
      T mean = kern::sum(x, static_cast<size_t>(C)) / static_cast<T>(C);
      T var = 0;
      for (int64_t j = 0; j < C; ++j) {
        const T d = x[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T istd = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*inv_std)[static_cast<size_t>(r)] = istd;
      T* y = Y.data() + r * C;
      for (int64_t j = 0; j < C; ++j) y[j] = (x[j] - mean) * istd;
    }
    return push(std::move(Y), {a}, "layer_norm_rows", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& Yv = g.cur_val();
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t r = 0; r < R; ++r) {
        const T* dy = dY.data() + r * C;
        const T* y = Yv.data() + r * C;
        const T istd = (*inv_std)[static_cast<size_t>(r)];
        const T mdy = kern::sum(dy, static_cast<size_t>(C)) / static_cast<T>(C);
        const T mdyy = kern::dot(dy, y, static_cast<size_t>(C)) / static_cast<T>(C);
        T* d = dx.data() + r * C;
        for (int64_t j = 0; j < C; ++j)
          d[j] += istd * (dy[j] - mdy - y[j] * mdyy);
      }
    });
  }

  Val transpose(Val a) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2, "transpose", {&A});
    Tensor<T> Y({A.cols(), A.rows()});
    for (int64_t r = 0; r < A.rows(); ++r)
      for (int64_t c = 0; c < A.cols(); ++c) Y.at(c, r) = A.at(r, c);
    return push(std::move(Y), {a}, "transpose", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t r = 0; r < dY.rows(); ++r)
        for (int64_t c = 0; c < dY.cols(); ++c) dx.at(c, r) += dY.at(r, c);
    });
  }

  // Matrix inverse via LU with partial pivoting. d(A^-1) pullback:
  // dA = -Y^T dY Y^T with Y = A^-1.
  Val inverse(Val a) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2 && A.rows() == A.cols(), "inverse", {&A});
    Tensor<T> Y = A;
    lu_invert_inplace(Y);
    return push(std::move(Y), {a}, "inverse", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& Yv = g.cur_val();
      const int n = static_cast<int>(Yv.rows());
      Tensor<T> tmp({Yv.rows(), Yv.cols()});  // Y^T dY
      kern::gemm_acc_at(tmp.data(), Yv.data(), dY.data(), n, n, n);
      Tensor<T> res({Yv.rows(), Yv.cols()});  // (Y^T dY) Y^T
      kern::gemm_acc_bt(res.data(), tmp.data(), Yv.data(), n, n, n);
      kern::axpy(g.grad_buf(a.id).data(), T(-1), res.data(),
                 static_cast<size_t>(res.numel()));
    });
  }

  // Embedding lookup: rows of E[VxN] selected by ids. Backward scatter-adds.
  Val gather_rows(Val e, std::vector<int> ids) {
    const Tensor<T>& E = value(e);
    require(E.rank() == 2, "gather_rows", {&E});
    const int64_t N = E.cols();
    Tensor<T> Y({static_cast<int64_t>(ids.size()), N});
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= E.rows())
        throw ContractError("gather_rows: id out of range");
      kern::scale(Y.data() + static_cast<int64_t>(r) * N, T(1),
                  E.data() + static_cast<int64_t>(ids[r]) * N,
                  static_cast<size_t>(N));
    }
    return push(std::move(Y), {e}, "gather_rows",
                [=, ids = std::move(ids)](Graph& g) {
                  if (!g.wants(e)) return;
                  const Tensor<T>& dY = g.cur_grad();
                  Tensor<T>& dE = g.grad_buf(e.id);
                  for (size_t r = 0; r < ids.size(); ++r)
                    kern::add(dE.data() + static_cast<int64_t>(ids[r]) * N,
                              dE.data() + static_cast<int64_t>(ids[r]) * N,
                              dY.data() + static_cast<int64_t>(r) * N,
                              static_cast<size_t>(N));
                });
  }

  Val slice_cols(Val a, int64_t c0, int64_t c1) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= A.cols(),
            "slice_cols", {&A});
    Tensor<T> Y({A.rows(), c1 - c0});
    for (int64_t r = 0; r < A.rows(); ++r)
      for (int64_t c = c0; c < c1; ++c) Y.at(r, c - c0) = A.at(r, c);
    return push(std::move(Y), {a}, "slice_cols", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t r = 0; r < dY.rows(); ++r)
        for (int64_t c = 0; c < dY.cols(); ++c) dx.at(r, c0 + c) += dY.at(r, c);
    });
  }

  Val slice_rows(Val a, int64_t r0, int64_t r1) {
    const Tensor<T>& A = value(a);
    require(A.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= A.rows(),
            "slice_rows", {&A});
    const int64_t C = A.cols();
    Tensor<T> Y({r1 - r0, C});
    for (int64_t r = r0; r < r1; ++r)
      kern::scale(Y.data() + (r - r0) * C, T(1), A.data() + r * C,
                  static_cast<size_t>(C));
    return push(std::move(Y), {a}, "slice_rows", [=](Graph& g) {
      if (!g.wants(a)) return;
      const Tensor<T>& dY = g.cur_grad();
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t r = 0; r < dY.rows(); ++r)
        kern::add(dx.data() + (r0 + r) * C, dx.data() + (r0 + r) * C,
                  dY.data() + r * C, static_cast<size_t>(C));
    });
  }

  Val concat_cols(Val a, Val b) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.rows() == B.rows(),
            "concat_cols", {&A, &B});
    const int64_t R = A.rows(), CA = A.cols(), CB = B.cols();
    Tensor<T> Y({R, CA + CB});
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < CA; ++c) Y.at(r, c) = A.at(r, c);
      for (int64_t c = 0; c < CB; ++c) Y.at(r, CA + c) = B.at(r, c);
    }
    return push(std::move(Y), {a, b}, "concat_cols", [=](Graph& g) {
      const Tensor<T>& dY = g.cur_grad();
      if (g.wants(a)) {
        Tensor<T>& da = g.grad_buf(a.id);
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < CA; ++c) da.at(r, c) += dY.at(r, c);
      }
      if (g.wants(b)) {
        Tensor<T>& db = g.grad_buf(b.id);
        for (int64_t r = 0; r < R; ++r)
          for (int64_t c = 0; c < CB; ++c) db.at(r, c) += dY.at(r, CA + c);
      }
    });
  }

  Val sum_all(Val a) {
    const Tensor<T>& A = value(a);
    Tensor<T> out =
        Tensor<T>::scalar(kern::sum(A.data(), static_cast<size_t>(A.numel())));
    return push(std::move(out), {a}, "sum_all", [=](Graph& g) {
      if (!g.wants(a)) return;
      const T go = g.cur_grad()[0];
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += go;
    });
  }

  Val mean_all(Val a) {
    const int64_t n = value(a).numel();
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  // Elementwise integer power. k >= 0; derivative at k == 0 is zero.
  Val pow_int(Val a, int k) {
    if (k < 0) throw ContractError("pow_int: negative exponent");
    const Tensor<T>& A = value(a);
    Tensor<T> Y(A.shape());
    for (int64_t i = 0; i < A.numel(); ++i) Y[i] = ipow(A[i], k);
    return push(std::move(Y), {a}, "pow_int", [=](Graph& g) {
      if (!g.wants(a) || k == 0) return;
      const Tensor<T>& dY = g.cur_grad();
      const Tensor<T>& X = g.value(a);
      Tensor<T>& dx = g.grad_buf(a.id);
      for (int64_t i = 0; i < X.numel(); ++i)
        dx[i] += dY[i] * static_cast<T>(k) * ipow(X[i], k - 1);
    });
  }

  // Y[b,i] = base[i]^exps[b], integer exponents >= 0 per row. Used for
  // per-position geometric scale schedules.
  Val pow_int_rows(Val base, std::vector<int> exps) {
    const Tensor<T>& V = value(base);
    require(V.rank() == 1, "pow_int_rows", {&V});
    const int64_t N = V.cols();
    const int64_t B = static_cast<int64_t>(exps.size());
    Tensor<T> Y({B, N});
    for (int64_t b = 0; b < B; ++b) {
      const int k = exps[static_cast<size_t>(b)];
      if (k < 0) throw ContractError("pow_int_rows: negative exponent");
      for (int64_t i = 0; i < N; ++i) Y.at(b, i) = ipow(V[i], k);
    }
    return push(std::move(Y), {base}, "pow_int_rows",
                [=, exps = std::move(exps)](Graph& g) {
                  if (!g.wants(base)) return;
                  const Tensor<T>& dY = g.cur_grad();
                  const Tensor<T>& V2 = g.value(base);
                  Tensor<T>& dv = g.grad_buf(base.id);
                  for (int64_t b = 0; b < B; ++b) {
                    const int k = exps[static_cast<size_t>(b)];
                    if (k == 0) continue;
                    for (int64_t i = 0; i < N; ++i)
                      dv[i] += dY.at(b, i) * static_cast<T>(k) *
                               ipow(V2[i], k - 1);
                  }
                });
  }

  // Hard Gumbel-softmax rows with the straight-through estimator: the value
  // is one-hot per row (argmax of perturbed logits), the backward pass uses
  // the soft sample's Jacobian at the same noise.
  Val gumbel_hard_rows(Val logits, double tau, Rng& rng) {
    if (tau <= 0) throw ContractError("gumbel_hard_rows: tau must be > 0");
    const Tensor<T>& L = value(logits);
    require(L.rank() == 2, "gumbel_hard_rows", {&L});
    const int64_t R = L.rows(), C = L.cols();
    auto soft = std::make_shared<Tensor<T>>(L.shape());
    Tensor<T> hard(L.shape());
    Tensor<T> pert(L.shape());
    for (int64_t r = 0; r < R; ++r) {
      for (int64_t c = 0; c < C; ++c)
        pert.at(r, c) = (L.at(r, c) + static_cast<T>(rng.gumbel())) /
                        static_cast<T>(tau);
    }
    kern::softmax_rows(soft->data(), pert.data(), static_cast<int>(R),
                       static_cast<int>(C));
    for (int64_t r = 0; r < R; ++r) {
      int64_t best = 0;
      for (int64_t c = 1; c < C; ++c)
        if (pert.at(r, c) > pert.at(r, best)) best = c;
      hard.at(r, best) = T(1);
    }
    return push(std::move(hard), {logits}, "gumbel_hard_rows", [=](Graph& g) {
      if (!g.wants(logits)) return;
      const Tensor<T>& dY = g.cur_grad();
      Tensor<T>& dx = g.grad_buf(logits.id);
      for (int64_t r = 0; r < R; ++r) {
        const T* s = soft->data() + r * C;
        const T* dy = dY.data() + r * C;
        const T inner = kern::dot(s, dy, static_cast<size_t>(C));
        T* d = dx.data() + r * C;
        for (int64_t c = 0; c < C; ++c)
          d[c] += s[c] * (dy[c] - inner) / static_cast<T>(tau);
      }
    });
  }

  // ------------------------------------------------------------ helpers ----
  bool wants(Val v) const { return node(v).needs; }

  Tensor<T>& grad_buf(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs = false;
    Parameter<T>* leaf = nullptr;
    std::function<void(Graph&)> back;
    const char* op = "";
    std::vector<int32_t> inputs;
  };

  const Node& node(Val v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
      throw ContractError("invalid graph value handle");
    return nodes_[static_cast<size_t>(v.id)];
  }
  Node& node_mut(Val v) { return const_cast<Node&>(node(v)); }

  Val ew2(Val a, Val b, const char* opname) {
    const Tensor<T>& A = value(a);
    const Tensor<T>& B = value(b);
    require(A.same_shape(B), opname, {&A, &B});
    Tensor<T> Y(A.shape());
    const size_t n = static_cast<size_t>(A.numel());
    const char kind = opname[0];  // 'a'dd, 's'ub, 'm'ul
    if (kind == 'a') kern::add(Y.data(), A.data(), B.data(), n);
    else if (kind == 's') kern::sub(Y.data(), A.data(), B.data(), n);
    else kern::mul(Y.data(), A.data(), B.data(), n);
    return push(std::move(Y), {a, b}, opname, [=](Graph& g) {
      const Tensor<T>& dY = g.cur_grad();
      const size_t m = static_cast<size_t>(dY.numel());
      if (kind == 'a') {
        if (g.wants(a)) kern::add(g.grad_buf(a.id).data(), g.grad_buf(a.id).data(), dY.data(), m);
        if (g.wants(b)) kern::add(g.grad_buf(b.id).data(), g.grad_buf(b.id).data(), dY.data(), m);
      } else if (kind == 's') {
        if (g.wants(a)) kern::add(g.grad_buf(a.id).data(), g.grad_buf(a.id).data(), dY.data(), m);
        if (g.wants(b)) kern::axpy(g.grad_buf(b.id).data(), T(-1), dY.data(), m);
      } else {
        if (g.wants(a)) kern::mul_acc(g.grad_buf(a.id).data(), dY.data(), g.value(b).data(), m);
        if (g.wants(b)) kern::mul_acc(g.grad_buf(b.id).data(), dY.data(), g.value(a).data(), m);
      }
    });
  }

  static T ipow(T x, int k) {
    T r = T(1);
    for (int i = 0; i < k; ++i) r *= x;
    return r;
  }

  void require(bool ok, const char* op, std::initializer_list<const Tensor<T>*> ts) {
    if (ok) return;
    std::string msg = std::string("shape contract violated in op '") + op + "':";
    for (const auto* t : ts) msg += " " + t->shape_str();
    throw ContractError(msg);
  }

  Val push(Tensor<T> value, std::vector<int32_t> inputs, const char* op,
           std::function<void(Graph&)> back, bool needs_override = false,
           Parameter<T>* leaf = nullptr) {
    if (!value.all_finite())
      throw NumericError(std::string("non-finite values from op '") + op +
                         "' (node " + std::to_string(nodes_.size()) + ")");
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.leaf = leaf;
    n.inputs = std::move(inputs);
    n.needs = needs_override;
    for (int32_t in : n.inputs)
      n.needs = n.needs || nodes_[static_cast<size_t>(in)].needs;
    if (n.needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Val{static_cast<int32_t>(nodes_.size() - 1)};
  }

  // Overload taking Vals for input lists.
  Val push(Tensor<T> value, std::initializer_list<Val> inputs, const char* op,
           std::function<void(Graph&)> back, bool needs_override = false,
           Parameter<T>* leaf = nullptr) {
    std::vector<int32_t> ids;
    ids.reserve(inputs.size());
    for (Val v : inputs) {
      node(v);  // validates
      ids.push_back(v.id);
    }
    return push(std::move(value), std::move(ids), op, std::move(back),
                needs_override, leaf);
  }

  std::vector<Node> nodes_;
  std::map<Parameter<T>*, int32_t> param_nodes_;
  int32_t cur_ = -1;  // node whose backward closure is running

 public:
  // Accessors for backward closures (valid only while backward() runs).
  const Tensor<T>& cur_grad() const { return nodes_[static_cast<size_t>(cur_)].grad; }
  const Tensor<T>& cur_val() const { return nodes_[static_cast<size_t>(cur_)].value; }
};

}  // namespace onionlab
