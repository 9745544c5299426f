#include "dsr/autograd.h"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "dsr/image.h"

namespace dsr::nn {

namespace {

thread_local int g_no_grad_depth = 0;

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back) {
  bool track = g_no_grad_depth == 0;
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p->needs_grad) {
        track = true;
        break;
      }
  }
  auto n = std::make_shared<Node>(std::move(value));
  if (track) {
    n->needs_grad = true;
    n->parents = std::move(parents);
    n->back = std::move(back);
  }
  return n;
}

// C[M][N] += A[M][K] * B[K][N]. Rows of C are thread-private, so the result
// is bit-identical at any thread count.
void gemm(const double* A, const double* B, double* C, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    double* c = C + static_cast<int64_t>(m) * N;
    const double* a = A + static_cast<int64_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + static_cast<int64_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M][K] += A[M][N] * B[K][N]^T
void gemm_abt(const double* A, const double* B, double* C, int M, int N, int K) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < M; ++m) {
    const double* a = A + static_cast<int64_t>(m) * N;
    double* c = C + static_cast<int64_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const double* b = B + static_cast<int64_t>(k) * N;
      double acc = 0.0;
      for (int n = 0; n < N; ++n) acc += a[n] * b[n];
      c[k] += acc;
    }
  }
}

// C[K][N] += A[M][K]^T * B[M][N]
void gemm_atb(const double* A, const double* B, double* C, int M, int K, int N) {
#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    double* c = C + static_cast<int64_t>(k) * N;
    for (int m = 0; m < M; ++m) {
      const double av = A[static_cast<int64_t>(m) * K + k];
      if (av == 0.0) continue;
      const double* b = B + static_cast<int64_t>(m) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// cols[(c,u,v)][a] = src[c, ay*s - p + u, ax*s - p + v], 0 outside.
// Anchors live on a (aH x aW) grid, reads on a (rH x rW) grid.
void im2col(const double* src, int C, int rH, int rW, int k, int s, int p, int aH,
            int aW, double* cols) {
  const int64_t plane = static_cast<int64_t>(rH) * rW;
  const int64_t na = static_cast<int64_t>(aH) * aW;
  int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v, ++row) {
        double* out = cols + row * na;
        const double* sp = src + c * plane;
        int64_t a = 0;
        for (int ay = 0; ay < aH; ++ay) {
          const int y = ay * s - p + u;
          if (y < 0 || y >= rH) {
            for (int ax = 0; ax < aW; ++ax, ++a) out[a] = 0.0;
            continue;
          }
          const double* srow = sp + static_cast<int64_t>(y) * rW;
          for (int ax = 0; ax < aW; ++ax, ++a) {
            const int x = ax * s - p + v;
            out[a] = (x < 0 || x >= rW) ? 0.0 : srow[x];
          }
        }
      }
    }
  }
}

// dst[c, ay*s - p + u, ax*s - p + v] += cols[(c,u,v)][a]; out-of-range dropped.
void col2im(const double* cols, int C, int rH, int rW, int k, int s, int p, int aH,
            int aW, double* dst) {
  const int64_t plane = static_cast<int64_t>(rH) * rW;
  const int64_t na = static_cast<int64_t>(aH) * aW;
  int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v, ++row) {
        const double* in = cols + row * na;
        double* dp = dst + c * plane;
        int64_t a = 0;
        for (int ay = 0; ay < aH; ++ay) {
          const int y = ay * s - p + u;
          if (y < 0 || y >= rH) {
            a += aW;
            continue;
          }
          double* drow = dp + static_cast<int64_t>(y) * rW;
          for (int ax = 0; ax < aW; ++ax, ++a) {
            const int x = ax * s - p + v;
            if (x >= 0 && x < rW) drow[x] += in[a];
          }
        }
      }
    }
  }
}

void require_chw(const Tensor& t, const char* where) {
  if (t.rank() != 3) throw ShapeError(std::string(where) + ": expected CHW tensor, got " + t.shape_str());
}

}  // namespace

Var leaf(Tensor v, bool needs_grad) {
  auto n = std::make_shared<Node>(std::move(v));
  n->needs_grad = needs_grad;
  return n;
}

Var param(Tensor v) { return leaf(std::move(v), true); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var custom_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> back) {
  return make_op(std::move(value), std::move(parents), std::move(back));
}

void backward(const Var& root) {
  if (root->val.numel() != 1)
    throw ShapeError("backward: root must be scalar, got " + root->val.shape_str());
  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad_buf()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->back && n->grad.numel() != 0) n->back(*n);
  }
}

double scalar(const Var& v) {
  if (v->val.numel() != 1) throw ShapeError("scalar: tensor has " + v->val.shape_str());
  return v->val[0];
}

// ---- elementwise ----

Var add(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "add");
  Tensor out = a->val;
  out += b->val;
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->accum_grad(n.grad);
    if (n.parents[1]->needs_grad) n.parents[1]->accum_grad(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "sub");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    if (n.parents[0]->needs_grad) n.parents[0]->accum_grad(n.grad);
    if (n.parents[1]->needs_grad) {
      Tensor& g = n.parents[1]->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "mul");
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
  return make_op(std::move(out), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    if (n.parents[0]->needs_grad) {
      Tensor& g = n.parents[0]->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.parents[1]->needs_grad) {
      Tensor& g = n.parents[1]->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->val;
  out *= s;
  return make_op(std::move(out), {a}, [s](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += s;
  return make_op(std::move(out), {a},
                 [](Node& n) { n.parents[0]->accum_grad(n.grad); });
}

Var relu(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_op(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > 0.0) g[i] += n.grad[i];
  });
}

Var softplus(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double x = out[i];
    // stable: log(1 + e^x) = max(x,0) + log1p(e^{-|x|})
    out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
  }
  return make_op(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-x[i]));
      g[i] += n.grad[i] * s;
    }
  });
}

Var sigmoid(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * saved[i] * (1.0 - saved[i]);
  });
}

Var abs_val(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::fabs(out[i]);
  return make_op(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) {
      double s = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      g[i] += n.grad[i] * s;
    }
  });
}

Var square(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  return make_op(std::move(out), {a}, [](Node& n) {
    const Tensor& x = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * x[i] * n.grad[i];
  });
}

Var sqrt_val(const Var& a) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(out[i]);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (saved[i] > 0.0) g[i] += n.grad[i] * 0.5 / saved[i];
  });
}

Var log_clamped(const Var& a, double lo, double hi) {
  Tensor out = a->val;
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = std::log(std::clamp(out[i], lo, hi));
  return make_op(std::move(out), {a}, [lo, hi](Node& n) {
    const Tensor& x = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int64_t i = 0; i < g.numel(); ++i)
      if (x[i] > lo && x[i] < hi) g[i] += n.grad[i] / x[i];
  });
}

// ---- reductions / vectors ----

Var mean_all(const Var& a) {
  Tensor out({1}, a->val.mean());
  const double inv = 1.0 / static_cast<double>(a->val.numel());
  return make_op(std::move(out), {a}, [inv](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    const double gv = n.grad[0] * inv;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

Var sum_all(const Var& a) {
  Tensor out({1}, a->val.sum());
  return make_op(std::move(out), {a}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    const double gv = n.grad[0];
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
  });
}

Var dot(const Var& a, const Var& b) {
  check_same_shape(a->val, b->val, "dot");
  double acc = 0.0;
  for (int64_t i = 0; i < a->val.numel(); ++i) acc += a->val[i] * b->val[i];
  return make_op(Tensor({1}, acc), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->val;
    const Tensor& bv = n.parents[1]->val;
    const double gv = n.grad[0];
    if (n.parents[0]->needs_grad) {
      Tensor& g = n.parents[0]->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv * bv[i];
    }
    if (n.parents[1]->needs_grad) {
      Tensor& g = n.parents[1]->grad_buf();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += gv * av[i];
    }
  });
}

Var softmax_vec(const Var& a) {
  const int64_t n_el = a->val.numel();
  Tensor out = a->val;
  double mx = out.max();
  double z = 0.0;
  for (int64_t i = 0; i < n_el; ++i) {
    out[i] = std::exp(out[i] - mx);
    z += out[i];
  }
  for (int64_t i = 0; i < n_el; ++i) out[i] /= z;
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    double gy = 0.0;
    for (int64_t i = 0; i < saved.numel(); ++i) gy += n.grad[i] * saved[i];
    for (int64_t i = 0; i < saved.numel(); ++i)
      g[i] += saved[i] * (n.grad[i] - gy);
  });
}

Var matvec(const Var& m, const Var& v) {
  if (m->val.rank() != 2 || v->val.rank() != 1 || m->val.dim(1) != v->val.dim(0))
    throw ShapeError("matvec: " + m->val.shape_str() + " x " + v->val.shape_str());
  const int R = m->val.dim(0), C = m->val.dim(1);
  Tensor out({R});
  for (int r = 0; r < R; ++r) {
    double acc = 0.0;
    for (int c = 0; c < C; ++c) acc += m->val[static_cast<int64_t>(r) * C + c] * v->val[c];
    out[r] = acc;
  }
  return make_op(std::move(out), {m, v}, [R, C](Node& n) {
    const Tensor& mv = n.parents[0]->val;
    const Tensor& vv = n.parents[1]->val;
    if (n.parents[0]->needs_grad) {
      Tensor& g = n.parents[0]->grad_buf();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[static_cast<int64_t>(r) * C + c] += n.grad[r] * vv[c];
    }
    if (n.parents[1]->needs_grad) {
      Tensor& g = n.parents[1]->grad_buf();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g[c] += n.grad[r] * mv[static_cast<int64_t>(r) * C + c];
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matvec(w, x);
  return add(y, b);
}

// ---- structural ----

Var concat_ch(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_ch: empty input list");
  int H = xs[0]->val.dim(1), W = xs[0]->val.dim(2);
  int C = 0;
  for (const auto& x : xs) {
    require_chw(x->val, "concat_ch");
    if (x->val.dim(1) != H || x->val.dim(2) != W)
      throw ShapeError("concat_ch: spatial dims differ");
    C += x->val.dim(0);
  }
  Tensor out({C, H, W});
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->val.data(), x->val.data() + x->val.numel(), out.data() + off);
    off += x->val.numel();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_op(std::move(out), std::move(parents), [](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      if (p->needs_grad) {
        Tensor& g = p->grad_buf();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[off + i];
      }
      off += p->val.numel();
    }
  });
}

Var concat_flat(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_flat: empty input list");
  int64_t total = 0;
  for (const auto& x : xs) total += x->val.numel();
  Tensor out({static_cast<int>(total)});
  int64_t off = 0;
  for (const auto& x : xs) {
    std::copy(x->val.data(), x->val.data() + x->val.numel(), out.data() + off);
    off += x->val.numel();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make_op(std::move(out), std::move(parents), [](Node& n) {
    int64_t off = 0;
    for (auto& p : n.parents) {
      if (p->needs_grad) {
        Tensor& g = p->grad_buf();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[off + i];
      }
      off += p->val.numel();
    }
  });
}

Var pixel_shuffle(const Var& x, int r) {
  require_chw(x->val, "pixel_shuffle");
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  if (C % (r * r) != 0) throw ShapeError("pixel_shuffle: channels not divisible by r^2");
  const int Co = C / (r * r);
  Tensor out({Co, H * r, W * r});
  for (int c = 0; c < Co; ++c)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < r; ++j)
            out.at(c, h * r + i, w * r + j) = x->val.at(c * r * r + i * r + j, h, w);
  return make_op(std::move(out), {x}, [r, Co, H, W](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    for (int c = 0; c < Co; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < r; ++j) {
              g[((static_cast<int64_t>(c * r * r + i * r + j) * H) + h) * W + w] +=
                  n.grad.at(c, h * r + i, w * r + j);
            }
  });
}

Var global_avg_pool(const Var& x) {
  require_chw(x->val, "global_avg_pool");
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    const double* p = x->val.data() + static_cast<int64_t>(c) * H * W;
    for (int i = 0; i < H * W; ++i) acc += p[i];
    out[c] = acc * inv;
  }
  return make_op(std::move(out), {x}, [C, H, W, inv](Node& n) {
    Tensor& g = n.parents[0]->grad_buf();
    for (int c = 0; c < C; ++c) {
      const double gv = n.grad[c] * inv;
      double* p = g.data() + static_cast<int64_t>(c) * H * W;
      for (int i = 0; i < H * W; ++i) p[i] += gv;
    }
  });
}

Var channel_l2_pool(const Var& x) {
  require_chw(x->val, "channel_l2_pool");
  const int C = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  Tensor out({1, H, W});
  for (int h = 0; h < H; ++h)
    for (int w = 0; w < W; ++w) {
      double acc = 0.0;
      for (int c = 0; c < C; ++c) {
        double v = x->val.at(c, h, w);
        acc += v * v;
      }
      out.at(0, h, w) = std::sqrt(acc) / C;
    }
  Tensor saved = out;
  return make_op(std::move(out), {x}, [C, H, W, saved](Node& n) {
    const Tensor& xv = n.parents[0]->val;
    Tensor& g = n.parents[0]->grad_buf();
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        const double norm_c = saved.at(0, h, w);  // ||x||/C
        if (norm_c <= 0.0) continue;
        const double gv = n.grad.at(0, h, w) / (norm_c * C * C);
        for (int c = 0; c < C; ++c) g.at(c, h, w) += gv * xv.at(c, h, w);
      }
  });
}

Var bilinear_resize(const Var& x, int oh, int ow) {
  require_chw(x->val, "bilinear_resize");
  Tensor out = img::bilinear_resize(x->val, oh, ow);
  const int ih = x->val.dim(1), iw = x->val.dim(2);
  return make_op(std::move(out), {x}, [ih, iw, oh, ow](Node& n) {
    Tensor g = img::bilinear_resize_adjoint(n.grad, ih, iw);
    n.parents[0]->accum_grad(g);
  });
}

Var bicubic_resize_var(const Var& x, int oh, int ow) {
  require_chw(x->val, "bicubic_resize");
  Tensor out = img::bicubic_resize(x->val, oh, ow, /*clamp01=*/false);
  const int ih = x->val.dim(1), iw = x->val.dim(2);
  return make_op(std::move(out), {x}, [ih, iw](Node& n) {
    Tensor g = img::bicubic_resize_adjoint(n.grad, ih, iw);
    n.parents[0]->accum_grad(g);
  });
}

// ---- convolution ----

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  require_chw(x->val, "conv2d");
  if (w->val.rank() != 4) throw ShapeError("conv2d: weight must be [Cout,Cin,k,k]");
  const int Cin = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  const int Cout = w->val.dim(0), k = w->val.dim(2);
  if (w->val.dim(1) != Cin)
    throw ShapeError("conv2d: Cin mismatch " + x->val.shape_str() + " vs " + w->val.shape_str());
  const int Ho = (H + 2 * pad - k) / stride + 1;
  const int Wo = (W + 2 * pad - k) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: output would be empty");
  const int K = Cin * k * k;
  const int64_t N = static_cast<int64_t>(Ho) * Wo;

  std::vector<double> cols(static_cast<size_t>(K) * N);
  im2col(x->val.data(), Cin, H, W, k, stride, pad, Ho, Wo, cols.data());
  Tensor out({Cout, Ho, Wo});
  gemm(w->val.data(), cols.data(), out.data(), Cout, K, static_cast<int>(N));
  for (int c = 0; c < Cout; ++c) {
    double* p = out.data() + c * N;
    const double bv = b->val[c];
    for (int64_t i = 0; i < N; ++i) p[i] += bv;
  }

  return make_op(std::move(out), {x, w, b},
                 [Cin, H, W, Cout, k, stride, pad, Ho, Wo, K, N](Node& n) {
    const Tensor& xv = n.parents[0]->val;
    const Tensor& wv = n.parents[1]->val;
    if (n.parents[2]->needs_grad) {
      Tensor& gb = n.parents[2]->grad_buf();
      for (int c = 0; c < Cout; ++c) {
        const double* p = n.grad.data() + c * N;
        double acc = 0.0;
        for (int64_t i = 0; i < N; ++i) acc += p[i];
        gb[c] += acc;
      }
    }
    if (n.parents[1]->needs_grad) {
      std::vector<double> cols(static_cast<size_t>(K) * N);
      im2col(xv.data(), Cin, H, W, k, stride, pad, Ho, Wo, cols.data());
      Tensor& gw = n.parents[1]->grad_buf();
      gemm_abt(n.grad.data(), cols.data(), gw.data(), Cout, static_cast<int>(N), K);
    }
    if (n.parents[0]->needs_grad) {
      std::vector<double> dcols(static_cast<size_t>(K) * N, 0.0);
      gemm_atb(wv.data(), n.grad.data(), dcols.data(), Cout, K, static_cast<int>(N));
      Tensor& gx = n.parents[0]->grad_buf();
      col2im(dcols.data(), Cin, H, W, k, stride, pad, Ho, Wo, gx.data());
    }
  });
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
                     int out_pad) {
  require_chw(x->val, "conv_transpose2d");
  if (w->val.rank() != 4) throw ShapeError("conv_transpose2d: weight must be [Cin,Cout,k,k]");
  const int Cin = x->val.dim(0), H = x->val.dim(1), W = x->val.dim(2);
  const int Cout = w->val.dim(1), k = w->val.dim(2);
  if (w->val.dim(0) != Cin)
    throw ShapeError("conv_transpose2d: Cin mismatch " + x->val.shape_str() + " vs " +
                     w->val.shape_str());
  const int Ho = (H - 1) * stride - 2 * pad + k + out_pad;
  const int Wo = (W - 1) * stride - 2 * pad + k + out_pad;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv_transpose2d: output would be empty");
  const int R = Cout * k * k;
  const int64_t N = static_cast<int64_t>(H) * W;

  // rows of wmat2: (co,u,v); cols: ci
  std::vector<double> wmat(static_cast<size_t>(R) * Cin);
  for (int ci = 0; ci < Cin; ++ci)
    for (int r = 0; r < R; ++r)
      wmat[static_cast<size_t>(r) * Cin + ci] =
          w->val[static_cast<int64_t>(ci) * R + r];

  std::vector<double> cols(static_cast<size_t>(R) * N, 0.0);
  gemm(wmat.data(), x->val.data(), cols.data(), R, Cin, static_cast<int>(N));
  Tensor out({Cout, Ho, Wo});
  col2im(cols.data(), Cout, Ho, Wo, k, stride, pad, H, W, out.data());
  const int64_t No = static_cast<int64_t>(Ho) * Wo;
  for (int c = 0; c < Cout; ++c) {
    double* p = out.data() + c * No;
    const double bv = b->val[c];
    for (int64_t i = 0; i < No; ++i) p[i] += bv;
  }

  return make_op(std::move(out), {x, w, b},
                 [Cin, H, W, Cout, k, stride, pad, Ho, Wo, R, N, No](Node& n) {
    const Tensor& xv = n.parents[0]->val;
    const Tensor& wv = n.parents[1]->val;
    if (n.parents[2]->needs_grad) {
      Tensor& gb = n.parents[2]->grad_buf();
      for (int c = 0; c < Cout; ++c) {
        const double* p = n.grad.data() + c * No;
        double acc = 0.0;
        for (int64_t i = 0; i < No; ++i) acc += p[i];
        gb[c] += acc;
      }
    }
    std::vector<double> dcols(static_cast<size_t>(R) * N);
    im2col(n.grad.data(), Cout, Ho, Wo, k, stride, pad, H, W, dcols.data());
    if (n.parents[1]->needs_grad) {
      // gw2[r][ci] = sum_n dcols[r][n] * x[ci][n], then transpose into [Cin,Cout,k,k]
      std::vector<double> gw2(static_cast<size_t>(R) * Cin, 0.0);
      gemm_abt(dcols.data(), xv.data(), gw2.data(), R, static_cast<int>(N), Cin);
      Tensor& gw = n.parents[1]->grad_buf();
      for (int ci = 0; ci < Cin; ++ci)
        for (int r = 0; r < R; ++r)
          gw[static_cast<int64_t>(ci) * R + r] += gw2[static_cast<size_t>(r) * Cin + ci];
    }
    if (n.parents[0]->needs_grad) {
      // gx[ci][n] = sum_r wmat[r][ci] * dcols[r][n]
      std::vector<double> wmat(static_cast<size_t>(R) * Cin);
      for (int ci = 0; ci < Cin; ++ci)
        for (int r = 0; r < R; ++r)
          wmat[static_cast<size_t>(r) * Cin + ci] = wv[static_cast<int64_t>(ci) * R + r];
      Tensor& gx = n.parents[0]->grad_buf();
      gemm_atb(wmat.data(), dcols.data(), gx.data(), R, Cin, static_cast<int>(N));
    }
  });
}

}  // namespace dsr::nn
