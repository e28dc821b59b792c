#ifndef BOUNDARYLAB_KERNELS_H
#define BOUNDARYLAB_KERNELS_H

/* Hot loops of the conv/pool kernels.  Plain C so the compiler can
 * vectorize the contiguous inner rows (restrict: buffers never alias). */

void bl_conv2d_forward(const double *restrict x, const double *restrict w,
                       const double *restrict bias, double *restrict out,
                       long b, long ci, long h, long wd,
                       long co, long kh, long kw);

void bl_conv2d_input_grad(const double *restrict gy, const double *restrict w,
                          double *restrict gx,
                          long b, long ci, long h, long wd,
                          long co, long kh, long kw);

void bl_conv2d_param_grad(const double *restrict x, const double *restrict gy,
                          double *restrict gw, double *restrict gb,
                          long b, long ci, long h, long wd,
                          long co, long kh, long kw);

void bl_maxpool2_forward(const double *restrict x, double *restrict y,
                         unsigned char *restrict idx,
                         long b, long c, long h, long w);

void bl_maxpool2_backward(const double *restrict gy,
                          const unsigned char *restrict idx,
                          double *restrict gx,
                          long b, long c, long h, long w);

#endif
