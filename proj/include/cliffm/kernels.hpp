#pragma once

// Raw forward/backward kernels on dense tensors. Every kernel assigns each
// output element to exactly one thread and keeps a fixed inner accumulation
// order, so results do not depend on the worker count.

#include <algorithm>
#include <cmath>
#include <optional>

#include "cliffm/parallel.hpp"
#include "cliffm/tensor.hpp"

namespace cliffm {

struct ConvSpec {
    int stride = 1;
    int pad = 0;
    int groups = 1;
};

inline i64 conv_out_extent(i64 in, int k, int stride, int pad) {
    i64 num = in + 2 * static_cast<i64>(pad) - k;
    if (num < 0) return 0;
    return num / stride + 1;
}

template <typename T>
inline T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

// Dot product with a fixed 16-lane accumulator layout. The summation order is
// a compile-time constant, so results are bit-reproducible run to run and
// independent of the worker count, while the lane loop still vectorizes
// under strict IEEE rules.
template <typename T>
inline T dot_lanes(const T* a, const T* b, i64 n) {
    constexpr i64 L = 16;
    T acc[L] = {};
    i64 k = 0;
    for (; k + L <= n; k += L)
        for (i64 j = 0; j < L; ++j) acc[j] += a[k + j] * b[k + j];
    T tail = T(0);
    for (; k < n; ++k) tail += a[k] * b[k];
    T s = tail;
    for (i64 j = 0; j < L; ++j) s += acc[j];
    return s;
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation, zero padding, grouped)
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_check(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                  const ConvSpec& cs) {
    if (x.rank() != 4 || w.rank() != 4) throw ConfigError("conv2d: rank-4 tensors required");
    i64 cin = x.dim(1), cout = w.dim(0);
    if (cs.groups < 1 || cin % cs.groups != 0 || cout % cs.groups != 0)
        throw ConfigError("conv2d: channels not divisible by groups");
    if (w.dim(1) != cin / cs.groups)
        throw ConfigError("conv2d: weight input channels " + std::to_string(w.dim(1)) +
                          " do not match " + std::to_string(cin / cs.groups));
    if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
        throw ConfigError("conv2d: bias shape mismatch");
    if (x.dim(2) + 2 * cs.pad < w.dim(2) || x.dim(3) + 2 * cs.pad < w.dim(3))
        throw ConfigError("conv2d: kernel larger than padded input");
    if (cs.stride < 1) throw ConfigError("conv2d: stride must be positive");
}

template <typename T>
TensorT<T> conv2d_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias,
                      const ConvSpec& cs) {
    conv2d_check(x, w, bias, cs);
    const i64 B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const i64 Ho = conv_out_extent(H, static_cast<int>(kh), cs.stride, cs.pad);
    const i64 Wo = conv_out_extent(W, static_cast<int>(kw), cs.stride, cs.pad);
    const i64 cin_g = Cin / cs.groups, cout_g = Cout / cs.groups;
    TensorT<T> out({B, Cout, Ho, Wo});

    const bool pointwise =
        kh == 1 && kw == 1 && cs.stride == 1 && cs.pad == 0 && cs.groups == 1;
    const bool depthwise = cs.groups == Cin && Cout == Cin && cin_g == 1;

    if (pointwise) {
        const i64 plane = H * W;
        parallel_for(B * Cout, [&](i64 lo, i64 hi) {
            for (i64 t = lo; t < hi; ++t) {
                const i64 b = t / Cout, o = t % Cout;
                T* op = out.data() + (b * Cout + o) * plane;
                const T init = bias ? (*bias)[o] : T(0);
                for (i64 p = 0; p < plane; ++p) op[p] = init;
                const T* wrow = w.data() + o * Cin;
                for (i64 i = 0; i < Cin; ++i) {
                    const T wv = wrow[i];
                    const T* xp = x.data() + (b * Cin + i) * plane;
                    for (i64 p = 0; p < plane; ++p) op[p] += wv * xp[p];
                }
            }
        });
        return out;
    }

    if (depthwise && cs.stride == 1) {
        // row-wise accumulation: unit-stride inner loops over x
        parallel_for(B * Cout, [&](i64 lo, i64 hi) {
            for (i64 t = lo; t < hi; ++t) {
                const i64 b = t / Cout, c = t % Cout;
                const T* xp = x.data() + (b * Cin + c) * H * W;
                const T* wp = w.data() + c * kh * kw;
                T* op = out.data() + (b * Cout + c) * Ho * Wo;
                const T init = bias ? (*bias)[c] : T(0);
                for (i64 p = 0; p < Ho * Wo; ++p) op[p] = init;
                for (i64 oy = 0; oy < Ho; ++oy) {
                    T* orow = op + oy * Wo;
                    for (i64 ky = 0; ky < kh; ++ky) {
                        const i64 y = oy - cs.pad + ky;
                        if (y < 0 || y >= H) continue;
                        const T* xrow = xp + y * W;
                        for (i64 kx = 0; kx < kw; ++kx) {
                            const T wv = wp[ky * kw + kx];
                            const i64 xlo = std::max<i64>(0, cs.pad - kx);
                            const i64 xhi = std::min<i64>(Wo - 1, W - 1 + cs.pad - kx);
                            const T* src = xrow - cs.pad + kx;
                            for (i64 ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * src[ox];
                        }
                    }
                }
            }
        });
        return out;
    }

    // general path: gather padded patches once per sample, then contiguous dots
    const i64 K = cin_g * kh * kw;
    parallel_for(B, [&](i64 blo, i64 bhi) {
        std::vector<T> patches(static_cast<size_t>(Ho * Wo * K));
        for (i64 b = blo; b < bhi; ++b) {
            for (i64 g = 0; g < cs.groups; ++g) {
                T* pat = patches.data();
                for (i64 oy = 0; oy < Ho; ++oy) {
                    for (i64 ox = 0; ox < Wo; ++ox) {
                        for (i64 ic = 0; ic < cin_g; ++ic) {
                            const T* xp = x.data() + ((b * Cin + g * cin_g + ic) * H) * W;
                            for (i64 ky = 0; ky < kh; ++ky) {
                                const i64 y = oy * cs.stride - cs.pad + ky;
                                for (i64 kx = 0; kx < kw; ++kx) {
                                    const i64 xx = ox * cs.stride - cs.pad + kx;
                                    *pat++ = (y < 0 || y >= H || xx < 0 || xx >= W)
                                                 ? T(0)
                                                 : xp[y * W + xx];
                                }
                            }
                        }
                    }
                }
                for (i64 oc = 0; oc < cout_g; ++oc) {
                    const i64 o = g * cout_g + oc;
                    const T* wrow = w.data() + o * K;
                    const T init = bias ? (*bias)[o] : T(0);
                    T* op = out.data() + (b * Cout + o) * Ho * Wo;
                    for (i64 p = 0; p < Ho * Wo; ++p)
                        op[p] = init + dot_lanes(wrow, patches.data() + p * K, K);
                }
            }
        }
    });
    return out;
}

template <typename T>
TensorT<T> conv2d_fwd(const TensorT<T>& x, const TensorT<T>& w, std::nullptr_t,
                      const ConvSpec& cs) {
    return conv2d_fwd(x, w, static_cast<const TensorT<T>*>(nullptr), cs);
}

template <typename T>
TensorT<T> conv2d_bwd_input(const Shape& xshape, const TensorT<T>& w, const TensorT<T>& dy,
                            const ConvSpec& cs) {
    const i64 B = xshape[0], Cin = xshape[1], H = xshape[2], W = xshape[3];
    const i64 Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const i64 Ho = dy.dim(2), Wo = dy.dim(3);
    const i64 cin_g = Cin / cs.groups, cout_g = Cout / cs.groups;
    TensorT<T> dx(xshape);

    const bool pointwise =
        kh == 1 && kw == 1 && cs.stride == 1 && cs.pad == 0 && cs.groups == 1;
    if (pointwise) {
        const i64 plane = H * W;
        parallel_for(B * Cin, [&](i64 lo, i64 hi) {
            for (i64 t = lo; t < hi; ++t) {
                const i64 b = t / Cin, i = t % Cin;
                T* dp = dx.data() + (b * Cin + i) * plane;
                for (i64 o = 0; o < Cout; ++o) {
                    const T wv = w[o * Cin + i];
                    const T* gp = dy.data() + (b * Cout + o) * plane;
                    for (i64 p = 0; p < plane; ++p) dp[p] += wv * gp[p];
                }
            }
        });
        return dx;
    }

    const bool depthwise = cs.groups == Cin && Cout == Cin && cin_g == 1;
    if (depthwise && cs.stride == 1) {
        parallel_for(B * Cin, [&](i64 lo, i64 hi) {
            for (i64 t = lo; t < hi; ++t) {
                const i64 b = t / Cin, c = t % Cin;
                const T* wp = w.data() + c * kh * kw;
                const T* gp = dy.data() + (b * Cout + c) * Ho * Wo;
                T* dp = dx.data() + (b * Cin + c) * H * W;
                for (i64 y = 0; y < H; ++y) {
                    T* drow = dp + y * W;
                    for (i64 ky = 0; ky < kh; ++ky) {
                        const i64 oy = y + cs.pad - ky;
                        if (oy < 0 || oy >= Ho) continue;
                        const T* grow = gp + oy * Wo;
                        for (i64 kx = 0; kx < kw; ++kx) {
                            const T wv = wp[ky * kw + kx];
                            const i64 xlo = std::max<i64>(0, kx - cs.pad);
                            const i64 xhi = std::min<i64>(W - 1, Wo - 1 + kx - cs.pad);
                            const T* src = grow + cs.pad - kx;
                            for (i64 xx = xlo; xx <= xhi; ++xx) drow[xx] += wv * src[xx];
                        }
                    }
                }
            }
        });
        return dx;
    }

    parallel_for(B * Cin, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / Cin, i = t % Cin;
            const i64 g = i / cin_g;
            const i64 obase = g * cout_g;
            for (i64 y = 0; y < H; ++y) {
                for (i64 xx = 0; xx < W; ++xx) {
                    T acc = T(0);
                    for (i64 oc = 0; oc < cout_g; ++oc) {
                        const i64 o = obase + oc;
                        const T* gp = dy.data() + ((b * Cout + o) * Ho) * Wo;
                        const T* wp = w.data() + ((o * cin_g + (i - g * cin_g)) * kh) * kw;
                        for (i64 ky = 0; ky < kh; ++ky) {
                            const i64 oy_num = y + cs.pad - ky;
                            if (oy_num < 0 || oy_num % cs.stride != 0) continue;
                            const i64 oy = oy_num / cs.stride;
                            if (oy >= Ho) continue;
                            for (i64 kx = 0; kx < kw; ++kx) {
                                const i64 ox_num = xx + cs.pad - kx;
                                if (ox_num < 0 || ox_num % cs.stride != 0) continue;
                                const i64 ox = ox_num / cs.stride;
                                if (ox >= Wo) continue;
                                acc += wp[ky * kw + kx] * gp[oy * Wo + ox];
                            }
                        }
                    }
                    dx.at(b, i, y, xx) = acc;
                }
            }
        }
    });
    return dx;
}

template <typename T>
TensorT<T> conv2d_bwd_weight(const TensorT<T>& x, const Shape& wshape, const TensorT<T>& dy,
                             const ConvSpec& cs) {
    const i64 B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 Cout = wshape[0], cin_g = wshape[1], kh = wshape[2], kw = wshape[3];
    const i64 Ho = dy.dim(2), Wo = dy.dim(3);
    const i64 cout_g = Cout / cs.groups;
    TensorT<T> dw(wshape);

    const bool pointwise =
        kh == 1 && kw == 1 && cs.stride == 1 && cs.pad == 0 && cs.groups == 1;
    if (pointwise) {
        const i64 plane = H * W;
        parallel_for(Cout * Cin, [&](i64 lo, i64 hi) {
            for (i64 t = lo; t < hi; ++t) {
                const i64 o = t / Cin, i = t % Cin;
                T acc = T(0);
                for (i64 b = 0; b < B; ++b)
                    acc += dot_lanes(x.data() + (b * Cin + i) * plane,
                                     dy.data() + (b * Cout + o) * plane, plane);
                dw[t] = acc;
            }
        });
        return dw;
    }

    // patch-gather formulation: dw[o,:] accumulates dy-weighted patch rows
    const i64 K = cin_g * kh * kw;
    std::vector<T> patches(static_cast<size_t>(B * cs.groups * Ho * Wo * K));
    parallel_for(B * cs.groups, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / cs.groups, g = t % cs.groups;
            T* pat = patches.data() + t * Ho * Wo * K;
            for (i64 oy = 0; oy < Ho; ++oy)
                for (i64 ox = 0; ox < Wo; ++ox)
                    for (i64 ic = 0; ic < cin_g; ++ic) {
                        const T* xp = x.data() + ((b * Cin + g * cin_g + ic) * H) * W;
                        for (i64 ky = 0; ky < kh; ++ky) {
                            const i64 y = oy * cs.stride - cs.pad + ky;
                            for (i64 kx = 0; kx < kw; ++kx) {
                                const i64 xx = ox * cs.stride - cs.pad + kx;
                                *pat++ = (y < 0 || y >= H || xx < 0 || xx >= W)
                                             ? T(0)
                                             : xp[y * W + xx];
                            }
                        }
                    }
        }
    });
    parallel_for(Cout, [&](i64 lo, i64 hi) {
        for (i64 o = lo; o < hi; ++o) {
            const i64 g = o / cout_g;
            T* wrow = dw.data() + o * K;
            for (i64 b = 0; b < B; ++b) {
                const T* pat = patches.data() + (b * cs.groups + g) * Ho * Wo * K;
                const T* gp = dy.data() + (b * Cout + o) * Ho * Wo;
                for (i64 p = 0; p < Ho * Wo; ++p) {
                    const T gv = gp[p];
                    const T* prow = pat + p * K;
                    for (i64 k = 0; k < K; ++k) wrow[k] += gv * prow[k];
                }
            }
        }
    });
    return dw;
}

template <typename T>
TensorT<T> conv2d_bwd_bias(const TensorT<T>& dy) {
    const i64 B = dy.dim(0), Cout = dy.dim(1), plane = dy.dim(2) * dy.dim(3);
    TensorT<T> db({Cout});
    parallel_for(Cout, [&](i64 lo, i64 hi) {
        for (i64 o = lo; o < hi; ++o) {
            T acc = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* gp = dy.data() + (b * Cout + o) * plane;
                for (i64 p = 0; p < plane; ++p) acc += gp[p];
            }
            db[o] = acc;
        }
    });
    return db;
}

// ---------------------------------------------------------------------------
// batch normalization (per channel over B,H,W)
// ---------------------------------------------------------------------------

template <typename T>
struct BnSaved {
    std::vector<T> mean;      // batch mean per channel
    std::vector<T> inv_std;   // 1/sqrt(var + eps), biased var
    std::vector<T> var;       // biased batch variance
};

template <typename T>
TensorT<T> bn_fwd_train(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                        T eps, BnSaved<T>& saved) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    const i64 n = B * plane;
    if (n < 2) throw ConfigError("batch_norm: train mode needs B*H*W >= 2");
    saved.mean.assign(static_cast<size_t>(C), T(0));
    saved.inv_std.assign(static_cast<size_t>(C), T(0));
    saved.var.assign(static_cast<size_t>(C), T(0));
    TensorT<T> y(x.shape);
    parallel_for(C, [&](i64 lo, i64 hi) {
        for (i64 c = lo; c < hi; ++c) {
            T sum = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) sum += xp[p];
            }
            const T mean = sum / static_cast<T>(n);
            T sq = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) {
                    const T d = xp[p] - mean;
                    sq += d * d;
                }
            }
            const T var = sq / static_cast<T>(n);
            const T istd = T(1) / std::sqrt(var + eps);
            saved.mean[static_cast<size_t>(c)] = mean;
            saved.var[static_cast<size_t>(c)] = var;
            saved.inv_std[static_cast<size_t>(c)] = istd;
            const T g = gamma[c], bt = beta[c];
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                T* yp = y.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) yp[p] = g * (xp[p] - mean) * istd + bt;
            }
        }
    });
    return y;
}

template <typename T>
TensorT<T> bn_fwd_eval(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                       const TensorT<T>& rmean, const TensorT<T>& rvar, T eps) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    TensorT<T> y(x.shape);
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 c = t % C;
            const T istd = T(1) / std::sqrt(rvar[c] + eps);
            const T g = gamma[c] * istd;
            const T bt = beta[c] - gamma[c] * rmean[c] * istd;
            const T* xp = x.data() + t * plane;
            T* yp = y.data() + t * plane;
            for (i64 p = 0; p < plane; ++p) yp[p] = g * xp[p] + bt;
        }
    });
    return y;
}

// Gradients through the batch statistics.
template <typename T>
void bn_bwd_train(const TensorT<T>& x, const TensorT<T>& dy, const TensorT<T>& gamma,
                  const BnSaved<T>& saved, TensorT<T>& dx, TensorT<T>& dgamma,
                  TensorT<T>& dbeta) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    const T n = static_cast<T>(B * plane);
    dx = TensorT<T>(x.shape);
    dgamma = TensorT<T>({C});
    dbeta = TensorT<T>({C});
    parallel_for(C, [&](i64 lo, i64 hi) {
        for (i64 c = lo; c < hi; ++c) {
            const T mean = saved.mean[static_cast<size_t>(c)];
            const T istd = saved.inv_std[static_cast<size_t>(c)];
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                const T* gp = dy.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) {
                    sum_dy += gp[p];
                    sum_dy_xhat += gp[p] * (xp[p] - mean) * istd;
                }
            }
            dgamma[c] = sum_dy_xhat;
            dbeta[c] = sum_dy;
            const T g = gamma[c];
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                const T* gp = dy.data() + (b * C + c) * plane;
                T* dp = dx.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) {
                    const T xhat = (xp[p] - mean) * istd;
                    dp[p] = g * istd * (gp[p] - sum_dy / n - xhat * sum_dy_xhat / n);
                }
            }
        }
    });
}

template <typename T>
void bn_bwd_eval(const TensorT<T>& x, const TensorT<T>& dy, const TensorT<T>& gamma,
                 const TensorT<T>& rmean, const TensorT<T>& rvar, T eps, TensorT<T>& dx,
                 TensorT<T>& dgamma, TensorT<T>& dbeta) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    dx = TensorT<T>(x.shape);
    dgamma = TensorT<T>({C});
    dbeta = TensorT<T>({C});
    parallel_for(C, [&](i64 lo, i64 hi) {
        for (i64 c = lo; c < hi; ++c) {
            const T istd = T(1) / std::sqrt(rvar[c] + eps);
            T sdg = T(0), sdb = T(0);
            const T g = gamma[c];
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                const T* gp = dy.data() + (b * C + c) * plane;
                T* dp = dx.data() + (b * C + c) * plane;
                for (i64 p = 0; p < plane; ++p) {
                    sdb += gp[p];
                    sdg += gp[p] * (xp[p] - rmean[c]) * istd;
                    dp[p] = gp[p] * g * istd;
                }
            }
            dgamma[c] = sdg;
            dbeta[c] = sdb;
        }
    });
}

// ---------------------------------------------------------------------------
// channel-wise layer norm: normalize the C-vector at each (b,h,w)
// ---------------------------------------------------------------------------

template <typename T>
struct LnSaved {
    std::vector<T> mean;     // per position
    std::vector<T> inv_std;  // per position
};

template <typename T>
TensorT<T> ln_fwd(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta, T eps,
                  LnSaved<T>& saved) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (C < 1) throw ConfigError("layer_norm: C >= 1 required");
    saved.mean.assign(static_cast<size_t>(B * plane), T(0));
    saved.inv_std.assign(static_cast<size_t>(B * plane), T(0));
    TensorT<T> y(x.shape);
    parallel_for(B * plane, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / plane, p = t % plane;
            const T* xp = x.data() + b * C * plane + p;
            T sum = T(0);
            for (i64 c = 0; c < C; ++c) sum += xp[c * plane];
            const T mean = sum / static_cast<T>(C);
            T sq = T(0);
            for (i64 c = 0; c < C; ++c) {
                const T d = xp[c * plane] - mean;
                sq += d * d;
            }
            const T istd = T(1) / std::sqrt(sq / static_cast<T>(C) + eps);
            saved.mean[static_cast<size_t>(t)] = mean;
            saved.inv_std[static_cast<size_t>(t)] = istd;
            T* yp = y.data() + b * C * plane + p;
            for (i64 c = 0; c < C; ++c)
                yp[c * plane] = gamma[c] * (xp[c * plane] - mean) * istd + beta[c];
        }
    });
    return y;
}

template <typename T>
void ln_bwd(const TensorT<T>& x, const TensorT<T>& dy, const TensorT<T>& gamma,
            const LnSaved<T>& saved, TensorT<T>& dx, TensorT<T>& dgamma, TensorT<T>& dbeta) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    dx = TensorT<T>(x.shape);
    dgamma = TensorT<T>({C});
    dbeta = TensorT<T>({C});
    // dgamma/dbeta reduce over positions; parallel per channel, contiguous rows.
    parallel_for(C, [&](i64 clo, i64 chi) {
        for (i64 c = clo; c < chi; ++c) {
            T dg = T(0), db = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* xp = x.data() + (b * C + c) * plane;
                const T* gp = dy.data() + (b * C + c) * plane;
                const T* mp = saved.mean.data() + b * plane;
                const T* ip = saved.inv_std.data() + b * plane;
                for (i64 p = 0; p < plane; ++p) {
                    dg += gp[p] * (xp[p] - mp[p]) * ip[p];
                    db += gp[p];
                }
            }
            dgamma[c] = dg;
            dbeta[c] = db;
        }
    });
    parallel_for(B * plane, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / plane, p = t % plane;
            const T mean = saved.mean[static_cast<size_t>(t)];
            const T istd = saved.inv_std[static_cast<size_t>(t)];
            const T* xp = x.data() + b * C * plane + p;
            const T* gp = dy.data() + b * C * plane + p;
            T* dp = dx.data() + b * C * plane + p;
            T sum_g = T(0), sum_gx = T(0);
            for (i64 c = 0; c < C; ++c) {
                const T gg = gp[c * plane] * gamma[c];
                const T xhat = (xp[c * plane] - mean) * istd;
                sum_g += gg;
                sum_gx += gg * xhat;
            }
            const T cinv = T(1) / static_cast<T>(C);
            for (i64 c = 0; c < C; ++c) {
                const T gg = gp[c * plane] * gamma[c];
                const T xhat = (xp[c * plane] - mean) * istd;
                dp[c * plane] = istd * (gg - cinv * sum_g - xhat * cinv * sum_gx);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T, typename F>
TensorT<T> map_unary(const TensorT<T>& x, F f) {
    TensorT<T> y(x.shape);
    const T* xp = x.data();
    T* yp = y.data();
    const i64 n = x.numel();
    parallel_for(n, [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) yp[i] = f(xp[i]);
    });
    return y;
}

template <typename T>
TensorT<T> silu_fwd(const TensorT<T>& x) {
    return map_unary(x, [](T v) { return v * sigmoid_scalar(v); });
}

template <typename T>
TensorT<T> silu_bwd(const TensorT<T>& x, const TensorT<T>& dy) {
    TensorT<T> dx(x.shape);
    parallel_for(x.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) {
            const T s = sigmoid_scalar(x[i]);
            dx[i] = dy[i] * s * (T(1) + x[i] * (T(1) - s));
        }
    });
    return dx;
}

template <typename T>
TensorT<T> sigmoid_fwd(const TensorT<T>& x) {
    return map_unary(x, [](T v) { return sigmoid_scalar(v); });
}

template <typename T>
TensorT<T> sigmoid_bwd(const TensorT<T>& y, const TensorT<T>& dy) {
    TensorT<T> dx(y.shape);
    parallel_for(y.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    });
    return dx;
}

template <typename T, typename F>
TensorT<T> map_binary(const TensorT<T>& a, const TensorT<T>& b, F f) {
    TensorT<T> y(a.shape);
    const T* ap = a.data();
    const T* bp = b.data();
    T* yp = y.data();
    parallel_for(a.numel(), [&](i64 lo, i64 hi) {
        for (i64 i = lo; i < hi; ++i) yp[i] = f(ap[i], bp[i]);
    });
    return y;
}

// ---------------------------------------------------------------------------
// channel roll: out[b,c] = x[b,(c-s) mod D]
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> channel_roll_fwd(const TensorT<T>& x, i64 s) {
    const i64 B = x.dim(0), D = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (s < 0 || s >= D) throw ConfigError("channel_roll: shift must satisfy 0 <= s < D");
    TensorT<T> y(x.shape);
    parallel_for(B * D, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const i64 b = t / D, c = t % D;
            const i64 src = (c - s + D) % D;
            std::copy_n(x.data() + (b * D + src) * plane, plane, y.data() + (b * D + c) * plane);
        }
    });
    return y;
}

// ---------------------------------------------------------------------------
// bilinear resize, half-pixel centers, edge clamp
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> bilinear_fwd(const TensorT<T>& x, i64 Ho, i64 Wo) {
    if (Ho < 1 || Wo < 1) throw ConfigError("bilinear_resize: target extents must be >= 1");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    TensorT<T> y({B, C, Ho, Wo});
    const double sy = static_cast<double>(H) / static_cast<double>(Ho);
    const double sx = static_cast<double>(W) / static_cast<double>(Wo);
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const T* xp = x.data() + t * H * W;
            T* yp = y.data() + t * Ho * Wo;
            for (i64 oy = 0; oy < Ho; ++oy) {
                double fy = (oy + 0.5) * sy - 0.5;
                fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
                const i64 y0 = static_cast<i64>(fy);
                const i64 y1 = std::min<i64>(y0 + 1, H - 1);
                const T wy = static_cast<T>(fy - static_cast<double>(y0));
                for (i64 ox = 0; ox < Wo; ++ox) {
                    double fx = (ox + 0.5) * sx - 0.5;
                    fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
                    const i64 x0 = static_cast<i64>(fx);
                    const i64 x1 = std::min<i64>(x0 + 1, W - 1);
                    const T wx = static_cast<T>(fx - static_cast<double>(x0));
                    const T a = xp[y0 * W + x0], b = xp[y0 * W + x1];
                    const T c = xp[y1 * W + x0], d = xp[y1 * W + x1];
                    const T top = a + wx * (b - a);
                    const T bot = c + wx * (d - c);
                    yp[oy * Wo + ox] = top + wy * (bot - top);
                }
            }
        }
    });
    return y;
}

template <typename T>
TensorT<T> bilinear_bwd(const Shape& xshape, const TensorT<T>& dy) {
    const i64 B = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
    const i64 Ho = dy.dim(2), Wo = dy.dim(3);
    TensorT<T> dx(xshape);
    const double sy = static_cast<double>(H) / static_cast<double>(Ho);
    const double sx = static_cast<double>(W) / static_cast<double>(Wo);
    // Scatter per (b,c) plane; planes are independent so this parallelizes safely.
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const T* gp = dy.data() + t * Ho * Wo;
            T* dp = dx.data() + t * H * W;
            for (i64 oy = 0; oy < Ho; ++oy) {
                double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
                const i64 y0 = static_cast<i64>(fy);
                const i64 y1 = std::min<i64>(y0 + 1, H - 1);
                const T wy = static_cast<T>(fy - static_cast<double>(y0));
                for (i64 ox = 0; ox < Wo; ++ox) {
                    double fx =
                        std::clamp((ox + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
                    const i64 x0 = static_cast<i64>(fx);
                    const i64 x1 = std::min<i64>(x0 + 1, W - 1);
                    const T wx = static_cast<T>(fx - static_cast<double>(x0));
                    const T g = gp[oy * Wo + ox];
                    dp[y0 * W + x0] += (T(1) - wy) * (T(1) - wx) * g;
                    dp[y0 * W + x1] += (T(1) - wy) * wx * g;
                    dp[y1 * W + x0] += wy * (T(1) - wx) * g;
                    dp[y1 * W + x1] += wy * wx * g;
                }
            }
        }
    });
    return dx;
}

// ---------------------------------------------------------------------------
// average pooling: exact factor and boundary-partition adaptive
// ---------------------------------------------------------------------------

inline std::vector<i64> pool_edges(i64 in, i64 out) {
    std::vector<i64> e(static_cast<size_t>(out) + 1);
    for (i64 i = 0; i <= out; ++i)
        e[static_cast<size_t>(i)] =
            static_cast<i64>(std::llround(static_cast<double>(i) * static_cast<double>(in) /
                                          static_cast<double>(out)));
    return e;
}

template <typename T>
TensorT<T> adaptive_avg_pool_fwd(const TensorT<T>& x, i64 Ho, i64 Wo) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (Ho < 1 || Wo < 1 || Ho > H || Wo > W)
        throw ConfigError("adaptive_avg_pool: target grid must satisfy 1 <= out <= in");
    const auto ey = pool_edges(H, Ho), ex = pool_edges(W, Wo);
    TensorT<T> y({B, C, Ho, Wo});
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const T* xp = x.data() + t * H * W;
            T* yp = y.data() + t * Ho * Wo;
            for (i64 oy = 0; oy < Ho; ++oy) {
                for (i64 ox = 0; ox < Wo; ++ox) {
                    T acc = T(0);
                    const i64 y0 = ey[oy], y1 = ey[oy + 1], x0 = ex[ox], x1 = ex[ox + 1];
                    for (i64 yy = y0; yy < y1; ++yy)
                        for (i64 xx = x0; xx < x1; ++xx) acc += xp[yy * W + xx];
                    yp[oy * Wo + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
                }
            }
        }
    });
    return y;
}

template <typename T>
TensorT<T> adaptive_avg_pool_bwd(const Shape& xshape, const TensorT<T>& dy) {
    const i64 B = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
    const i64 Ho = dy.dim(2), Wo = dy.dim(3);
    const auto ey = pool_edges(H, Ho), ex = pool_edges(W, Wo);
    TensorT<T> dx(xshape);
    parallel_for(B * C, [&](i64 lo, i64 hi) {
        for (i64 t = lo; t < hi; ++t) {
            const T* gp = dy.data() + t * Ho * Wo;
            T* dp = dx.data() + t * H * W;
            for (i64 oy = 0; oy < Ho; ++oy) {
                for (i64 ox = 0; ox < Wo; ++ox) {
                    const i64 y0 = ey[oy], y1 = ey[oy + 1], x0 = ex[ox], x1 = ex[ox + 1];
                    const T g = gp[oy * Wo + ox] / static_cast<T>((y1 - y0) * (x1 - x0));
                    for (i64 yy = y0; yy < y1; ++yy)
                        for (i64 xx = x0; xx < x1; ++xx) dp[yy * W + xx] += g;
                }
            }
        }
    });
    return dx;
}

template <typename T>
TensorT<T> avg_pool_fwd(const TensorT<T>& x, i64 k) {
    if (k < 1) throw ConfigError("avg_pool: k >= 1 required");
    if (x.dim(2) % k != 0 || x.dim(3) % k != 0)
        throw ConfigError("avg_pool: extents " + std::to_string(x.dim(2)) + "x" +
                          std::to_string(x.dim(3)) + " not divisible by k=" + std::to_string(k));
    return adaptive_avg_pool_fwd(x, x.dim(2) / k, x.dim(3) / k);
}

// ---------------------------------------------------------------------------
// linear: out = x W^T + b
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> linear_fwd(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>* bias) {
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1))
        throw ConfigError("linear: shape mismatch");
    const i64 B = x.dim(0), F = x.dim(1), O = w.dim(0);
    TensorT<T> y({B, O});
    for (i64 b = 0; b < B; ++b) {
        for (i64 o = 0; o < O; ++o) {
            T acc = bias ? (*bias)[o] : T(0);
            const T* xp = x.data() + b * F;
            const T* wp = w.data() + o * F;
            for (i64 f = 0; f < F; ++f) acc += xp[f] * wp[f];
            y.at(b, o) = acc;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// concat along channels / spatial broadcast
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> concat_channels_fwd(const std::vector<const TensorT<T>*>& xs) {
    if (xs.empty()) throw ConfigError("concat_channels: empty input list");
    const i64 B = xs[0]->dim(0), H = xs[0]->dim(2), W = xs[0]->dim(3);
    i64 Ctot = 0;
    for (auto* x : xs) {
        if (x->dim(0) != B || x->dim(2) != H || x->dim(3) != W)
            throw ConfigError("concat_channels: incompatible shapes");
        Ctot += x->dim(1);
    }
    TensorT<T> y({B, Ctot, H, W});
    const i64 plane = H * W;
    parallel_for(B, [&](i64 lo, i64 hi) {
        for (i64 b = lo; b < hi; ++b) {
            i64 coff = 0;
            for (auto* x : xs) {
                const i64 C = x->dim(1);
                std::copy_n(x->data() + b * C * plane, C * plane,
                            y.data() + (b * Ctot + coff) * plane);
                coff += C;
            }
        }
    });
    return y;
}

template <typename T>
TensorT<T> slice_channels(const TensorT<T>& x, i64 c0, i64 c1) {
    const i64 B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
    TensorT<T> y({B, c1 - c0, x.dim(2), x.dim(3)});
    for (i64 b = 0; b < B; ++b)
        std::copy_n(x.data() + (b * C + c0) * plane, (c1 - c0) * plane,
                    y.data() + b * (c1 - c0) * plane);
    return y;
}

template <typename T>
TensorT<T> broadcast_hw_fwd(const TensorT<T>& x, i64 H, i64 W) {
    if (x.dim(2) != 1 || x.dim(3) != 1) throw ConfigError("broadcast_hw: input must be BxCx1x1");
    const i64 B = x.dim(0), C = x.dim(1);
    TensorT<T> y({B, C, H, W});
    for (i64 t = 0; t < B * C; ++t) {
        const T v = x[t];
        T* yp = y.data() + t * H * W;
        for (i64 p = 0; p < H * W; ++p) yp[p] = v;
    }
    return y;
}

}  // namespace cliffm
