#include <string.h>

#include "_kernels.h"

/* All tensors are C-contiguous float64.  Shapes:
 *   x   (b, ci, h, wd)          input
 *   w   (co, ci, kh, kw)        filters
 *   out (b, co, oh, ow)         oh = h-kh+1, ow = wd-kw+1 (valid conv)
 * The innermost loops run along contiguous output/input rows so the
 * compiler can vectorize them; reductions use four partial sums.
 */

void bl_conv2d_forward(const double *restrict x, const double *restrict w,
                       const double *restrict bias, double *restrict out,
                       long b, long ci, long h, long wd,
                       long co, long kh, long kw)
{
    const long oh = h - kh + 1;
    const long ow = wd - kw + 1;

    for (long ib = 0; ib < b; ib++) {
        for (long io = 0; io < co; io++) {
            double *obase = out + ((ib * co + io) * oh) * ow;
            const double bv = bias[io];
            for (long r = 0; r < oh; r++) {
                double *orow = obase + r * ow;
                for (long c = 0; c < ow; c++)
                    orow[c] = bv;
            }
            long ic = 0;
            /* 4 input channels per pass: 4 fused multiply-adds for each
             * load/store of the output row instead of 1 */
            for (; ic + 4 <= ci; ic += 4) {
                for (long i = 0; i < kh; i++) {
                    const double *w0 = w + ((io * ci + ic) * kh + i) * kw;
                    const double *w1 = w0 + kh * kw;
                    const double *w2 = w1 + kh * kw;
                    const double *w3 = w2 + kh * kw;
                    for (long r = 0; r < oh; r++) {
                        const long row = (ib * ci + ic) * h + r + i;
                        const double *x0 = x + row * wd;
                        const double *x1 = x0 + h * wd;
                        const double *x2 = x1 + h * wd;
                        const double *x3 = x2 + h * wd;
                        double *orow = obase + r * ow;
                        for (long j = 0; j < kw; j++) {
                            const double v0 = w0[j], v1 = w1[j];
                            const double v2 = w2[j], v3 = w3[j];
                            for (long c = 0; c < ow; c++)
                                orow[c] += v0 * x0[c + j] + v1 * x1[c + j]
                                         + v2 * x2[c + j] + v3 * x3[c + j];
                        }
                    }
                }
            }
            for (; ic < ci; ic++) {
                const double *wrow0 = w + ((io * ci + ic) * kh) * kw;
                for (long i = 0; i < kh; i++) {
                    const double *wrow = wrow0 + i * kw;
                    for (long r = 0; r < oh; r++) {
                        const double *xrow =
                            x + ((ib * ci + ic) * h + r + i) * wd;
                        double *orow = obase + r * ow;
                        for (long j = 0; j < kw; j++) {
                            const double wv = wrow[j];
                            for (long c = 0; c < ow; c++)
                                orow[c] += wv * xrow[c + j];
                        }
                    }
                }
            }
        }
    }
}

void bl_conv2d_input_grad(const double *restrict gy, const double *restrict w,
                          double *restrict gx,
                          long b, long ci, long h, long wd,
                          long co, long kh, long kw)
{
    const long oh = h - kh + 1;
    const long ow = wd - kw + 1;

    memset(gx, 0, (size_t)(b * ci * h * wd) * sizeof(double));

    for (long ib = 0; ib < b; ib++) {
        for (long ic = 0; ic < ci; ic++) {
            long io = 0;
            /* mirror of the forward blocking: drain 4 upstream channels
             * into each input-gradient row per pass */
            for (; io + 4 <= co; io += 4) {
                for (long i = 0; i < kh; i++) {
                    const double *w0 = w + ((io * ci + ic) * kh + i) * kw;
                    const double *w1 = w0 + ci * kh * kw;
                    const double *w2 = w1 + ci * kh * kw;
                    const double *w3 = w2 + ci * kh * kw;
                    for (long r = 0; r < oh; r++) {
                        const long row = (ib * co + io) * oh + r;
                        const double *g0 = gy + row * ow;
                        const double *g1 = g0 + oh * ow;
                        const double *g2 = g1 + oh * ow;
                        const double *g3 = g2 + oh * ow;
                        double *xrow =
                            gx + ((ib * ci + ic) * h + r + i) * wd;
                        for (long j = 0; j < kw; j++) {
                            const double v0 = w0[j], v1 = w1[j];
                            const double v2 = w2[j], v3 = w3[j];
                            for (long c = 0; c < ow; c++)
                                xrow[c + j] += v0 * g0[c] + v1 * g1[c]
                                             + v2 * g2[c] + v3 * g3[c];
                        }
                    }
                }
            }
            for (; io < co; io++) {
                const double *gbase = gy + ((ib * co + io) * oh) * ow;
                const double *wrow0 = w + ((io * ci + ic) * kh) * kw;
                for (long i = 0; i < kh; i++) {
                    const double *wrow = wrow0 + i * kw;
                    for (long r = 0; r < oh; r++) {
                        const double *grow = gbase + r * ow;
                        double *xrow =
                            gx + ((ib * ci + ic) * h + r + i) * wd;
                        for (long j = 0; j < kw; j++) {
                            const double wv = wrow[j];
                            for (long c = 0; c < ow; c++)
                                xrow[c + j] += wv * grow[c];
                        }
                    }
                }
            }
        }
    }
}

void bl_conv2d_param_grad(const double *restrict x, const double *restrict gy,
                          double *restrict gw, double *restrict gb,
                          long b, long ci, long h, long wd,
                          long co, long kh, long kw)
{
    const long oh = h - kh + 1;
    const long ow = wd - kw + 1;

    memset(gw, 0, (size_t)(co * ci * kh * kw) * sizeof(double));
    memset(gb, 0, (size_t)co * sizeof(double));

    for (long ib = 0; ib < b; ib++) {
        for (long io = 0; io < co; io++) {
            const double *gbase = gy + ((ib * co + io) * oh) * ow;
            {
                double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                for (long r = 0; r < oh; r++) {
                    const double *grow = gbase + r * ow;
                    long c = 0;
                    for (; c + 4 <= ow; c += 4) {
                        s0 += grow[c];
                        s1 += grow[c + 1];
                        s2 += grow[c + 2];
                        s3 += grow[c + 3];
                    }
                    for (; c < ow; c++)
                        s0 += grow[c];
                }
                gb[io] += (s0 + s1) + (s2 + s3);
            }
            for (long ic = 0; ic < ci; ic++) {
                double *wrow0 = gw + ((io * ci + ic) * kh) * kw;
                for (long i = 0; i < kh; i++) {
                    double *wrow = wrow0 + i * kw;
                    for (long j = 0; j < kw; j++) {
                        /* four independent chains; strict FP forbids a
                         * vector reduction, this at least fills the FMA
                         * pipeline */
                        double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
                        for (long r = 0; r < oh; r++) {
                            const double *grow = gbase + r * ow;
                            const double *xrow =
                                x + ((ib * ci + ic) * h + r + i) * wd + j;
                            long c = 0;
                            for (; c + 4 <= ow; c += 4) {
                                s0 += xrow[c] * grow[c];
                                s1 += xrow[c + 1] * grow[c + 1];
                                s2 += xrow[c + 2] * grow[c + 2];
                                s3 += xrow[c + 3] * grow[c + 3];
                            }
                            for (; c < ow; c++)
                                s0 += xrow[c] * grow[c];
                        }
                        wrow[j] += (s0 + s1) + (s2 + s3);
                    }
                }
            }
        }
    }
}

/* 2x2 max pool, stride 2, odd trailing row/column dropped.  idx stores
 * the argmax as 2*di+dj with first-max-wins ties in row-major order. */

void bl_maxpool2_forward(const double *restrict x, double *restrict y,
                         unsigned char *restrict idx,
                         long b, long c, long h, long w)
{
    const long oh = h / 2;
    const long ow = w / 2;
    const long planes = b * c;

    for (long p = 0; p < planes; p++) {
        const double *xp = x + p * h * w;
        double *yp = y + p * oh * ow;
        unsigned char *ip = idx + p * oh * ow;
        for (long r = 0; r < oh; r++) {
            const double *r0 = xp + (2 * r) * w;
            const double *r1 = r0 + w;
            double *yr = yp + r * ow;
            unsigned char *ir = ip + r * ow;
            for (long cc = 0; cc < ow; cc++) {
                double best = r0[2 * cc];
                unsigned char code = 0;
                if (r0[2 * cc + 1] > best) { best = r0[2 * cc + 1]; code = 1; }
                if (r1[2 * cc] > best)     { best = r1[2 * cc];     code = 2; }
                if (r1[2 * cc + 1] > best) { best = r1[2 * cc + 1]; code = 3; }
                yr[cc] = best;
                ir[cc] = code;
            }
        }
    }
}

void bl_maxpool2_backward(const double *restrict gy,
                          const unsigned char *restrict idx,
                          double *restrict gx,
                          long b, long c, long h, long w)
{
    const long oh = h / 2;
    const long ow = w / 2;
    const long planes = b * c;

    memset(gx, 0, (size_t)(planes * h * w) * sizeof(double));

    for (long p = 0; p < planes; p++) {
        const double *gp = gy + p * oh * ow;
        const unsigned char *ip = idx + p * oh * ow;
        double *xp = gx + p * h * w;
        for (long r = 0; r < oh; r++) {
            const double *gr = gp + r * ow;
            const unsigned char *ir = ip + r * ow;
            for (long cc = 0; cc < ow; cc++) {
                const unsigned char k = ir[cc];
                xp[(2 * r + (k >> 1)) * w + 2 * cc + (k & 1)] += gr[cc];
            }
        }
    }
}
