#pragma once

// Numeric inner loops. Every kernel exists twice: the OpenMP version used by
// the library, and a plain serial twin in `reference` kept for tests and the
// benchmark. Both write identical outputs up to floating-point reassociation
// in the GEMM blocks.
//
// Layout conventions: row-major everywhere, leading dimensions in elements.

#include <cstddef>

namespace segdiff::kernels {

/// Worker count from SEGDIFF_THREADS (unset or invalid -> OpenMP default).
int configured_threads();
/// Apply SEGDIFF_THREADS to the OpenMP runtime. Idempotent.
void apply_thread_limit();

/// C[m,n] = alpha * op(A) * op(B) + beta * C.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);

/// Unfold a [channels, height, width] image into columns
/// [channels*kernel*kernel, out_h*out_w] for a square kernel.
void im2col2d(const double* img, int channels, int height, int width, int kernel, int stride, int pad,
              double* cols);
/// Adjoint of im2col2d; accumulates into img.
void col2im2d(const double* cols, int channels, int height, int width, int kernel, int stride, int pad,
              double* img);

/// Frames of a 1-D signal as columns: frames[kernel, count] with frame t
/// starting at sample t*stride.
void frames1d(const double* x, int count, int kernel, int stride, double* frames);
/// Adjoint of frames1d (overlap-add); accumulates into out[n].
void overlap_add1d(const double* frames, int count, int kernel, int stride, int n, double* out);

/// Numerically stable in-place softmax of each row.
void softmax_rows(double* x, int rows, int cols);

/// Multi-head scaled dot-product attention over q, k, v of shape [seq, heads*head_dim].
/// probs receives [heads, seq, seq]; out receives [seq, heads*head_dim].
void attention_forward(const double* q, const double* k, const double* v, int seq, int heads, int head_dim,
                       double* probs, double* out);
/// Gradients w.r.t. q, k, v (overwritten, not accumulated).
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, int seq, int heads, int head_dim, double* dq, double* dk,
                        double* dv);

/// Bandlimited (Hann-windowed sinc) resampling; out has out_n samples.
void resample(const double* x, int n, double in_rate, double out_rate, int zero_crossings, double* out,
              int out_n);

namespace reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc);
void im2col2d(const double* img, int channels, int height, int width, int kernel, int stride, int pad,
              double* cols);
void col2im2d(const double* cols, int channels, int height, int width, int kernel, int stride, int pad,
              double* img);
void frames1d(const double* x, int count, int kernel, int stride, double* frames);
void overlap_add1d(const double* frames, int count, int kernel, int stride, int n, double* out);
void softmax_rows(double* x, int rows, int cols);
void attention_forward(const double* q, const double* k, const double* v, int seq, int heads, int head_dim,
                       double* probs, double* out);
void attention_backward(const double* q, const double* k, const double* v, const double* probs,
                        const double* dout, int seq, int heads, int head_dim, double* dq, double* dk,
                        double* dv);
void resample(const double* x, int n, double in_rate, double out_rate, int zero_crossings, double* out,
              int out_n);

}  // namespace reference

inline int conv_out(int in, int kernel, int stride, int pad) { return (in + 2 * pad - kernel) / stride + 1; }

}  // namespace segdiff::kernels
