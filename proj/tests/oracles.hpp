#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cardioquant/tensor.hpp"

// Reference implementations kept deliberately naive: plain loop nests with no
// shared code or data layout tricks, so they stay independent of the library's
// im2col/gemm path.
namespace oracle {

inline cq::Tensor conv2d_3x3(const cq::Tensor& x, const cq::Tensor& w, const cq::Tensor& b) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int K = w.dim(0);
  cq::Tensor out({N, K, H, W});
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      for (int y = 0; y < H; ++y) {
        for (int xq = 0; xq < W; ++xq) {
          double acc = b.at(k);
          for (int c = 0; c < C; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = y + ky - 1;
                const int sx = xq + kx - 1;
                if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
                acc += static_cast<double>(x.at(n, c, sy, sx)) * w.at(k, c, ky, kx);
              }
            }
          }
          out.at(n, k, y, xq) = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

inline cq::Tensor max_pool2(const cq::Tensor& x) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  cq::Tensor out({N, C, H / 2, W / 2});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H / 2; ++y) {
        for (int xq = 0; xq < W / 2; ++xq) {
          float best = x.at(n, c, 2 * y, 2 * xq);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              best = std::max(best, x.at(n, c, 2 * y + dy, 2 * xq + dx));
            }
          }
          out.at(n, c, y, xq) = best;
        }
      }
    }
  }
  return out;
}

inline cq::Tensor dense(const cq::Tensor& x, const cq::Tensor& w, const cq::Tensor& b) {
  const int N = x.dim(0), F = x.dim(1), G = w.dim(1);
  cq::Tensor out({N, G});
  for (int n = 0; n < N; ++n) {
    for (int g = 0; g < G; ++g) {
      double acc = b.at(g);
      for (int f = 0; f < F; ++f) acc += static_cast<double>(x.at(n, f)) * w.at(f, g);
      out.at(n, g) = static_cast<float>(acc);
    }
  }
  return out;
}

// Train-mode normalization with per-channel batch statistics.
inline cq::Tensor batch_norm_train(const cq::Tensor& x, const cq::Tensor& gamma,
                                   const cq::Tensor& beta, float eps = 1e-5f) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  cq::Tensor out(x.shape());
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
      for (int y = 0; y < H; ++y) {
        for (int xq = 0; xq < W; ++xq) sum += x.at(n, c, y, xq);
      }
    }
    const double mean = sum / (static_cast<double>(N) * H * W);
    double ss = 0.0;
    for (int n = 0; n < N; ++n) {
      for (int y = 0; y < H; ++y) {
        for (int xq = 0; xq < W; ++xq) {
          const double d = x.at(n, c, y, xq) - mean;
          ss += d * d;
        }
      }
    }
    const double var = ss / (static_cast<double>(N) * H * W);
    const double invstd = 1.0 / std::sqrt(var + eps);
    for (int n = 0; n < N; ++n) {
      for (int y = 0; y < H; ++y) {
        for (int xq = 0; xq < W; ++xq) {
          out.at(n, c, y, xq) = static_cast<float>(
              gamma.at(c) * (x.at(n, c, y, xq) - mean) * invstd + beta.at(c));
        }
      }
    }
  }
  return out;
}

inline std::vector<double> softmax_row(const std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> e(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    e[i] = std::exp(z[i] - mx);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

}  // namespace oracle
