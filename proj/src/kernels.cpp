#include "segdiff/kernels.hpp"

#include <omp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

namespace segdiff::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Rows of C handed to one task; below this the split costs more than it saves.
constexpr int kMinRowsPerTask = 32;

}  // namespace

int configured_threads() {
  if (const char* env = std::getenv("SEGDIFF_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return omp_get_max_threads();
}

void apply_thread_limit() {
  static std::once_flag once;
  std::call_once(once, [] { omp_set_num_threads(configured_threads()); });
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  if (m == 0 || n == 0) return;
  // op(A) rows [r0, r0+rows) times op(B) into C rows [r0, r0+rows).
  // Operands are copied into owned (aligned) matrices first: Eigen's
  // vectorised reductions peel differently depending on the address of a
  // mapped buffer, which would make results vary from run to run in the last
  // bits.
  auto block = [&](int r0, int rows) {
    MutMap cm(c + static_cast<std::ptrdiff_t>(r0) * ldc, rows, n, Eigen::OuterStride<>(ldc));
    if (beta == 0.0)
      cm.setZero();
    else if (beta != 1.0)
      cm *= beta;
    if (k == 0) return;
    RowMat am = trans_a ? RowMat(ConstMap(a + r0, k, rows, Eigen::OuterStride<>(lda)).transpose())
                        : RowMat(ConstMap(a + static_cast<std::ptrdiff_t>(r0) * lda, rows, k, Eigen::OuterStride<>(lda)));
    RowMat bm = trans_b ? RowMat(ConstMap(b, n, k, Eigen::OuterStride<>(ldb)).transpose())
                        : RowMat(ConstMap(b, k, n, Eigen::OuterStride<>(ldb)));
    RowMat prod(rows, n);
    prod.noalias() = am * bm;
    cm += alpha * prod;
  };
  const int threads = std::min(omp_get_max_threads(), std::max(1, m / kMinRowsPerTask));
  if (threads <= 1 || omp_in_parallel()) {
    block(0, m);
    return;
  }
  const int per = (m + threads - 1) / threads;
#pragma omp parallel for num_threads(threads) schedule(static)
  for (int t = 0; t < threads; ++t) {
    const int r0 = t * per;
    const int rows = std::min(per, m - r0);
    if (rows > 0) block(r0, rows);
  }
}

void im2col2d(const double* img, int channels, int height, int width, int kernel, int stride, int pad,
              double* cols) {
  const int oh = conv_out(height, kernel, stride, pad);
  const int ow = conv_out(width, kernel, stride, pad);
  const int rows = channels * kernel * kernel;
#pragma omp parallel for schedule(static) if (rows * oh * ow > 65536)
  for (int row = 0; row < rows; ++row) {
    const int kx = row % kernel;
    const int ky = (row / kernel) % kernel;
    const int c = row / (kernel * kernel);
    double* dst = cols + static_cast<std::ptrdiff_t>(row) * oh * ow;
    const double* plane = img + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int y = 0; y < oh; ++y) {
      const int iy = y * stride - pad + ky;
      double* drow = dst + y * ow;
      if (iy < 0 || iy >= height) {
        std::fill(drow, drow + ow, 0.0);
        continue;
      }
      const double* srow = plane + iy * width;
      for (int x = 0; x < ow; ++x) {
        const int ix = x * stride - pad + kx;
        drow[x] = (ix >= 0 && ix < width) ? srow[ix] : 0.0;
      }
    }
  }
}

void col2im2d(const double* cols, int channels, int height, int width, int kernel, int stride, int pad,
              double* img) {
  const int oh = conv_out(height, kernel, stride, pad);
  const int ow = conv_out(width, kernel, stride, pad);
  // One channel plane per task keeps writes disjoint.
#pragma omp parallel for schedule(static) if (channels * kernel * kernel * oh * ow > 65536)
  for (int c = 0; c < channels; ++c) {
    double* plane = img + static_cast<std::ptrdiff_t>(c) * height * width;
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const double* src = cols + static_cast<std::ptrdiff_t>((c * kernel + ky) * kernel + kx) * oh * ow;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          double* drow = plane + iy * width;
          const double* srow = src + y * ow;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride - pad + kx;
            if (ix >= 0 && ix < width) drow[ix] += srow[x];
          }
        }
      }
  }
}

void frames1d(const double* x, int count, int kernel, int stride, double* frames) {
#pragma omp parallel for schedule(static) if (count * kernel > 65536)
  for (int j = 0; j < kernel; ++j) {
    double* dst = frames + static_cast<std::ptrdiff_t>(j) * count;
    for (int t = 0; t < count; ++t) dst[t] = x[static_cast<std::ptrdiff_t>(t) * stride + j];
  }
}

void overlap_add1d(const double* frames, int count, int kernel, int stride, int n, double* out) {
  // Gather form: each output sample sums the frames covering it.
#pragma omp parallel for schedule(static) if (n > 65536)
  for (int s = 0; s < n; ++s) {
    const int t_hi = std::min(count - 1, s / stride);
    const int t_lo = std::max(0, (s - kernel + stride) / stride);
    double acc = 0.0;
    for (int t = t_lo; t <= t_hi; ++t) {
      const int j = s - t * stride;
      if (j >= 0 && j < kernel) acc += frames[static_cast<std::ptrdiff_t>(j) * count + t];
    }
    out[s] += acc;
  }
}

void softmax_rows(double* x, int rows, int cols) {
#pragma omp parallel for schedule(static) if (rows * cols > 65536)
  for (int r = 0; r < rows; ++r) {
    double* row = x + static_cast<std::ptrdiff_t>(r) * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
}

void attention_forward(const double* q, const double* k, const double* v, int seq, int heads, int head_dim,
                       double* probs, double* out) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for schedule(static) if (heads > 1 && seq > 32)
  for (int h = 0; h < heads; ++h) {
    const int off = h * head_dim;
    // Owned copies keep the reductions independent of buffer addresses.
    const RowMat qm = ConstMap(q + off, seq, head_dim, Eigen::OuterStride<>(d));
    const RowMat km = ConstMap(k + off, seq, head_dim, Eigen::OuterStride<>(d));
    const RowMat vm = ConstMap(v + off, seq, head_dim, Eigen::OuterStride<>(d));
    RowMat pm(seq, seq);
    pm.noalias() = qm * km.transpose();
    pm *= scale;
    for (int i = 0; i < seq; ++i) {
      auto row = pm.row(i);
      const double mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    RowMat om(seq, head_dim);
    om.noalias() = pm * vm;
    MutMap(probs + static_cast<std::ptrdiff_t>(h) * seq * seq, seq, seq, Eigen::OuterStride<>(seq)) = pm;
    MutMap(out + off, seq, head_dim, Eigen::OuterStride<>(d)) = om;
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, int seq, int heads, int head_dim, double* dq, double* dk,
                        double* dv) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for schedule(static) if (heads > 1 && seq > 32)
  for (int h = 0; h < heads; ++h) {
    const int off = h * head_dim;
    const RowMat qm = ConstMap(q + off, seq, head_dim, Eigen::OuterStride<>(d));
    const RowMat km = ConstMap(k + off, seq, head_dim, Eigen::OuterStride<>(d));
    const RowMat vm = ConstMap(v + off, seq, head_dim, Eigen::OuterStride<>(d));
    const RowMat pm = ConstMap(probs + static_cast<std::ptrdiff_t>(h) * seq * seq, seq, seq, Eigen::OuterStride<>(seq));
    const RowMat gm = ConstMap(dout + off, seq, head_dim, Eigen::OuterStride<>(d));
    RowMat dvm(seq, head_dim), dp(seq, seq), dqm(seq, head_dim), dkm(seq, head_dim);
    dvm.noalias() = pm.transpose() * gm;
    dp.noalias() = gm * vm.transpose();
    for (int i = 0; i < seq; ++i) {
      const double dot = dp.row(i).dot(pm.row(i));
      dp.row(i) = (pm.row(i).array() * (dp.row(i).array() - dot) * scale).matrix();
    }
    dqm.noalias() = dp * km;
    dkm.noalias() = dp.transpose() * qm;
    MutMap(dq + off, seq, head_dim, Eigen::OuterStride<>(d)) = dqm;
    MutMap(dk + off, seq, head_dim, Eigen::OuterStride<>(d)) = dkm;
    MutMap(dv + off, seq, head_dim, Eigen::OuterStride<>(d)) = dvm;
  }
}

namespace {

double resample_tap(double dt, double cutoff, double half) {
  const double arg = cutoff * dt;
  const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
  return cutoff * sinc * 0.5 * (1.0 + std::cos(std::numbers::pi * dt / half));
}

}  // namespace

void resample(const double* x, int n, double in_rate, double out_rate, int zero_crossings, double* out,
              int out_n) {
  const double cutoff = std::min(1.0, out_rate / in_rate);
  const double half = zero_crossings / cutoff;
  const auto in_i = static_cast<long>(in_rate), out_i = static_cast<long>(out_rate);
  const long g = (in_i == in_rate && out_i == out_rate && in_i > 0 && out_i > 0) ? std::gcd(in_i, out_i) : 0;
  const long up = g ? out_i / g : 0, down = g ? in_i / g : 0;
  if (up == 0 || up > 4096) {
    const double step = in_rate / out_rate;
#pragma omp parallel for schedule(static) if (out_n > 4096)
    for (int o = 0; o < out_n; ++o) {
      const double u = o * step;
      const int lo = std::max(0, static_cast<int>(std::ceil(u - half)));
      const int hi = std::min(n - 1, static_cast<int>(std::floor(u + half)));
      double acc = 0.0;
      for (int i = lo; i <= hi; ++i) acc += x[i] * resample_tap(u - i, cutoff, half);
      out[o] = acc;
    }
    return;
  }
  // Rational ratio: the fractional read position cycles through `up` phases,
  // so the windowed-sinc taps are tabulated once per phase.
  const int width = static_cast<int>(std::floor(2 * half)) + 2;
  std::vector<double> taps(static_cast<std::size_t>(up * width), 0.0);
  std::vector<int> first(static_cast<std::size_t>(up)), count(static_cast<std::size_t>(up));
  for (long p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    const int lo = static_cast<int>(std::ceil(frac - half));
    const int hi = static_cast<int>(std::floor(frac + half));
    first[static_cast<std::size_t>(p)] = lo;
    count[static_cast<std::size_t>(p)] = hi - lo + 1;
    for (int j = lo; j <= hi; ++j) taps[static_cast<std::size_t>(p * width + (j - lo))] = resample_tap(frac - j, cutoff, half);
  }
#pragma omp parallel for schedule(static) if (out_n > 4096)
  for (int o = 0; o < out_n; ++o) {
    const long pos = static_cast<long>(o) * down;
    const long base = pos / up, p = pos % up;
    const int lo = first[static_cast<std::size_t>(p)];
    const double* w = &taps[static_cast<std::size_t>(p * width)];
    double acc = 0.0;
    for (int j = 0; j < count[static_cast<std::size_t>(p)]; ++j) {
      const long i = base + lo + j;
      if (i >= 0 && i < n) acc += x[i] * w[j];
    }
    out[o] = acc;
  }
}

}  // namespace segdiff::kernels
