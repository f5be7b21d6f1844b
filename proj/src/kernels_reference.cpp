#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "segdiff/kernels.hpp"

namespace segdiff::kernels::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      double& out = c[i * ldc + j];
      out = (beta == 0.0 ? 0.0 : beta * out) + alpha * acc;
    }
  }
}

void im2col2d(const double* img, int channels, int height, int width, int kernel, int stride, int pad,
              double* cols) {
  const int oh = conv_out(height, kernel, stride, pad);
  const int ow = conv_out(width, kernel, stride, pad);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            const int iy = y * stride - pad + ky;
            const int ix = x * stride - pad + kx;
            const bool inside = iy >= 0 && iy < height && ix >= 0 && ix < width;
            cols[row * oh * ow + y * ow + x] = inside ? img[(c * height + iy) * width + ix] : 0.0;
          }
      }
}

void col2im2d(const double* cols, int channels, int height, int width, int kernel, int stride, int pad,
              double* img) {
  const int oh = conv_out(height, kernel, stride, pad);
  const int ow = conv_out(width, kernel, stride, pad);
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            const int iy = y * stride - pad + ky;
            const int ix = x * stride - pad + kx;
            if (iy >= 0 && iy < height && ix >= 0 && ix < width)
              img[(c * height + iy) * width + ix] += cols[row * oh * ow + y * ow + x];
          }
      }
}

void frames1d(const double* x, int count, int kernel, int stride, double* frames) {
  for (int j = 0; j < kernel; ++j)
    for (int t = 0; t < count; ++t) frames[j * count + t] = x[t * stride + j];
}

void overlap_add1d(const double* frames, int count, int kernel, int stride, int n, double* out) {
  for (int t = 0; t < count; ++t)
    for (int j = 0; j < kernel; ++j) {
      const int s = t * stride + j;
      if (s < n) out[s] += frames[j * count + t];
    }
}

void softmax_rows(double* x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double* row = x + static_cast<std::ptrdiff_t>(r) * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (int c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      sum += row[c];
    }
    for (int c = 0; c < cols; ++c) row[c] /= sum;
  }
}

void attention_forward(const double* q, const double* k, const double* v, int seq, int heads, int head_dim,
                       double* probs, double* out) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (int h = 0; h < heads; ++h) {
    double* p = probs + static_cast<std::ptrdiff_t>(h) * seq * seq;
    for (int i = 0; i < seq; ++i)
      for (int j = 0; j < seq; ++j) {
        double s = 0.0;
        for (int e = 0; e < head_dim; ++e) s += q[i * d + h * head_dim + e] * k[j * d + h * head_dim + e];
        p[i * seq + j] = s * scale;
      }
    softmax_rows(p, seq, seq);
    for (int i = 0; i < seq; ++i)
      for (int e = 0; e < head_dim; ++e) {
        double s = 0.0;
        for (int j = 0; j < seq; ++j) s += p[i * seq + j] * v[j * d + h * head_dim + e];
        out[i * d + h * head_dim + e] = s;
      }
  }
}

void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, int seq, int heads, int head_dim, double* dq, double* dk,
                        double* dv) {
  const int d = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<double> dp(static_cast<std::size_t>(seq) * seq);
  for (int h = 0; h < heads; ++h) {
    const double* p = probs + static_cast<std::ptrdiff_t>(h) * seq * seq;
    const int off = h * head_dim;
    for (int j = 0; j < seq; ++j)
      for (int e = 0; e < head_dim; ++e) {
        double s = 0.0;
        for (int i = 0; i < seq; ++i) s += p[i * seq + j] * dout[i * d + off + e];
        dv[j * d + off + e] = s;
      }
    for (int i = 0; i < seq; ++i)
      for (int j = 0; j < seq; ++j) {
        double s = 0.0;
        for (int e = 0; e < head_dim; ++e) s += dout[i * d + off + e] * v[j * d + off + e];
        dp[i * seq + j] = s;
      }
    for (int i = 0; i < seq; ++i) {
      double dot = 0.0;
      for (int j = 0; j < seq; ++j) dot += dp[i * seq + j] * p[i * seq + j];
      for (int j = 0; j < seq; ++j) dp[i * seq + j] = p[i * seq + j] * (dp[i * seq + j] - dot) * scale;
    }
    for (int i = 0; i < seq; ++i)
      for (int e = 0; e < head_dim; ++e) {
        double s = 0.0;
        for (int j = 0; j < seq; ++j) s += dp[i * seq + j] * k[j * d + off + e];
        dq[i * d + off + e] = s;
      }
    for (int j = 0; j < seq; ++j)
      for (int e = 0; e < head_dim; ++e) {
        double s = 0.0;
        for (int i = 0; i < seq; ++i) s += dp[i * seq + j] * q[i * d + off + e];
        dk[j * d + off + e] = s;
      }
  }
}

void resample(const double* x, int n, double in_rate, double out_rate, int zero_crossings, double* out,
              int out_n) {
  const double cutoff = std::min(1.0, out_rate / in_rate);
  const double half = zero_crossings / cutoff;
  const double step = in_rate / out_rate;
  for (int o = 0; o < out_n; ++o) {
    const double u = o * step;
    const int lo = std::max(0, static_cast<int>(std::ceil(u - half)));
    const int hi = std::min(n - 1, static_cast<int>(std::floor(u + half)));
    double acc = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double dt = u - i;
      const double arg = cutoff * dt;
      const double sinc = arg == 0.0 ? 1.0 : std::sin(std::numbers::pi * arg) / (std::numbers::pi * arg);
      const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * dt / half));
      acc += x[i] * cutoff * sinc * w;
    }
    out[o] = acc;
  }
}

}  // namespace segdiff::kernels::reference
