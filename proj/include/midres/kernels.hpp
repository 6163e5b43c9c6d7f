#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <thread>
#include <vector>

#include "midres/tensor.hpp"

namespace midres {

/// Number of worker threads conv2d may split its output channels across.
/// The split is over disjoint channel ranges, so results are bit-identical
/// to the sequential path. Default 1.
inline int& conv_threads() {
    static int n = 1;
    return n;
}

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t pad, std::size_t stride) {
    return (in + 2 * pad - k) / stride + 1;
}

// C[i,:] += A[i,:] * B for rows in [row_begin, row_end). Row-major, C preseeded.
template <typename T>
void gemm_rows(const T* a, const T* b, T* c, std::size_t k_dim, std::size_t n_cols,
               std::size_t row_begin, std::size_t row_end) {
    for (std::size_t i = row_begin; i < row_end; ++i) {
        T* crow = c + i * n_cols;
        const T* arow = a + i * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const T av = arow[k];
            if (av == T(0)) continue;
            const T* brow = b + k * n_cols;
            for (std::size_t j = 0; j < n_cols; ++j) crow[j] += av * brow[j];
        }
    }
}

// Lowers one sample of x into a [cin*kh*kw, ho*wo] patch matrix, zero padded.
template <typename T>
void im2col(const Tensor<T>& x, std::size_t n, std::size_t kh, std::size_t kw, std::size_t pad,
            std::size_t stride, std::size_t ho, std::size_t wo, T* col) {
    const std::size_t cin = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t plane = ho * wo;
    std::size_t row = 0;
    for (std::size_t c = 0; c < cin; ++c) {
        const T* xc = x.data.data() + (n * cin + c) * h * w;
        for (std::size_t i = 0; i < kh; ++i) {
            for (std::size_t j = 0; j < kw; ++j, ++row) {
                T* dst = col + row * plane;
                for (std::size_t y = 0; y < ho; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst + y * wo, dst + (y + 1) * wo, T(0));
                        continue;
                    }
                    const T* xrow = xc + static_cast<std::size_t>(iy) * w;
                    for (std::size_t xo = 0; xo < wo; ++xo) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + j) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        dst[y * wo + xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                                               ? T(0)
                                               : xrow[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

// Forward convolution. col receives the lowered input, [n, cin*kh*kw, ho*wo],
// kept for the backward pass.
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad,
                    std::size_t stride, Tensor<T>& out, Tensor<T>& col) {
    const std::size_t batch = x.shape[0];
    const std::size_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const std::size_t ho = out.shape[2], wo = out.shape[3];
    const std::size_t k_dim = w.shape[1] * kh * kw;
    const std::size_t plane = ho * wo;

    const int threads = std::max(1, conv_threads());
    for (std::size_t n = 0; n < batch; ++n) {
        T* coln = col.data.data() + n * k_dim * plane;
        im2col(x, n, kh, kw, pad, stride, ho, wo, coln);
        T* outn = out.data.data() + n * cout * plane;
        for (std::size_t o = 0; o < cout; ++o) std::fill(outn + o * plane, outn + (o + 1) * plane, b.data[o]);
        if (threads == 1 || cout == 1) {
            gemm_rows(w.data.data(), coln, outn, k_dim, plane, 0, cout);
        } else {
            const std::size_t nt = std::min<std::size_t>(threads, cout);
            std::vector<std::thread> pool;
            pool.reserve(nt);
            for (std::size_t t = 0; t < nt; ++t) {
                const std::size_t lo = cout * t / nt, hi = cout * (t + 1) / nt;
                pool.emplace_back([&, lo, hi] { gemm_rows(w.data.data(), coln, outn, k_dim, plane, lo, hi); });
            }
            for (auto& th : pool) th.join();
        }
    }
}

// Accumulates input/weight/bias gradients from the upstream gradient and the
// saved patch matrix.
template <typename T>
void conv2d_backward(const Tensor<T>& gout, const Tensor<T>& w, const Tensor<T>& col,
                     const Shape& xshape, std::size_t pad, std::size_t stride, Tensor<T>* gx,
                     Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t batch = gout.shape[0], cout = gout.shape[1];
    const std::size_t ho = gout.shape[2], wo = gout.shape[3];
    const std::size_t cin = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    const std::size_t k_dim = cin * kh * kw;
    const std::size_t plane = ho * wo;
    const std::size_t h = xshape[2], wd = xshape[3];

    std::vector<T> gcol;
    if (gx) gcol.resize(k_dim * plane);

    for (std::size_t n = 0; n < batch; ++n) {
        const T* gyn = gout.data.data() + n * cout * plane;
        const T* coln = col.data.data() + n * k_dim * plane;

        if (gw) {
            for (std::size_t o = 0; o < cout; ++o) {
                const T* gy = gyn + o * plane;
                T* gwrow = gw->data.data() + o * k_dim;
                for (std::size_t k = 0; k < k_dim; ++k) {
                    const T* cr = coln + k * plane;
                    T acc = 0;
                    for (std::size_t p = 0; p < plane; ++p) acc += gy[p] * cr[p];
                    gwrow[k] += acc;
                }
            }
        }
        if (gb) {
            for (std::size_t o = 0; o < cout; ++o) {
                const T* gy = gyn + o * plane;
                T acc = 0;
                for (std::size_t p = 0; p < plane; ++p) acc += gy[p];
                gb->data[o] += acc;
            }
        }
        if (gx) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            for (std::size_t o = 0; o < cout; ++o) {
                const T* gy = gyn + o * plane;
                const T* wrow = w.data.data() + o * k_dim;
                for (std::size_t k = 0; k < k_dim; ++k) {
                    const T wv = wrow[k];
                    if (wv == T(0)) continue;
                    T* gc = gcol.data() + k * plane;
                    for (std::size_t p = 0; p < plane; ++p) gc[p] += wv * gy[p];
                }
            }
            // col2im scatter-add
            std::size_t row = 0;
            for (std::size_t c = 0; c < cin; ++c) {
                T* gxc = gx->data.data() + (n * cin + c) * h * wd;
                for (std::size_t i = 0; i < kh; ++i) {
                    for (std::size_t j = 0; j < kw; ++j, ++row) {
                        const T* gc = gcol.data() + row * plane;
                        for (std::size_t y = 0; y < ho; ++y) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * stride + i) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            for (std::size_t xo = 0; xo < wo; ++xo) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + j) -
                                                          static_cast<std::ptrdiff_t>(pad);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                                gxc[static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix)] +=
                                    gc[y * wo + xo];
                            }
                        }
                    }
                }
            }
        }
    }
}

// 2x2/stride-2 max pooling; argmax (when given) holds the flat input index
// that won each window, ties broken by row-major scan order.
template <typename T>
void maxpool2d_forward(const Tensor<T>& x, Tensor<T>& out, std::uint32_t* argmax) {
    const std::size_t batch = x.shape[0], ch = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::size_t ho = h / 2, wo = w / 2;
    std::size_t oi = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (n * ch + c) * h * w;
            for (std::size_t y = 0; y < ho; ++y) {
                for (std::size_t xo = 0; xo < wo; ++xo, ++oi) {
                    const std::size_t i00 = base + (2 * y) * w + 2 * xo;
                    std::size_t best = i00;
                    T bv = x.data[i00];
                    const std::size_t cand[3] = {i00 + 1, i00 + w, i00 + w + 1};
                    for (std::size_t idx : cand) {
                        if (x.data[idx] > bv) {
                            bv = x.data[idx];
                            best = idx;
                        }
                    }
                    out.data[oi] = bv;
                    if (argmax) argmax[oi] = static_cast<std::uint32_t>(best);
                }
            }
        }
    }
}

template <typename T>
void maxpool2d_backward(const Tensor<T>& gout, const std::vector<std::uint32_t>& argmax, Tensor<T>& gx) {
    for (std::size_t i = 0; i < gout.data.size(); ++i) gx.data[argmax[i]] += gout.data[i];
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& out) {
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

// subgradient 0 at exactly 0
template <typename T>
void relu_backward(const Tensor<T>& gout, const Tensor<T>& x, Tensor<T>& gx) {
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        if (x.data[i] > T(0)) gx.data[i] += gout.data[i];
    }
}

template <typename T>
void dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tensor<T>& out) {
    const std::size_t batch = x.shape[0], f = x.shape[1], m = w.shape[1];
    for (std::size_t n = 0; n < batch; ++n) {
        T* orow = out.data.data() + n * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] = b.data[j];
        const T* xrow = x.data.data() + n * f;
        for (std::size_t k = 0; k < f; ++k) {
            const T xv = xrow[k];
            if (xv == T(0)) continue;
            const T* wrow = w.data.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += xv * wrow[j];
        }
    }
}

template <typename T>
void dense_backward(const Tensor<T>& gout, const Tensor<T>& x, const Tensor<T>& w, Tensor<T>* gx,
                    Tensor<T>* gw, Tensor<T>* gb) {
    const std::size_t batch = x.shape[0], f = x.shape[1], m = w.shape[1];
    for (std::size_t n = 0; n < batch; ++n) {
        const T* gy = gout.data.data() + n * m;
        const T* xrow = x.data.data() + n * f;
        if (gx) {
            T* gxr = gx->data.data() + n * f;
            for (std::size_t k = 0; k < f; ++k) {
                const T* wrow = w.data.data() + k * m;
                T acc = 0;
                for (std::size_t j = 0; j < m; ++j) acc += gy[j] * wrow[j];
                gxr[k] += acc;
            }
        }
        if (gw) {
            for (std::size_t k = 0; k < f; ++k) {
                const T xv = xrow[k];
                if (xv == T(0)) continue;
                T* gwr = gw->data.data() + k * m;
                for (std::size_t j = 0; j < m; ++j) gwr[j] += xv * gy[j];
            }
        }
        if (gb) {
            for (std::size_t j = 0; j < m; ++j) gb->data[j] += gy[j];
        }
    }
}

// Softmax with per-row max subtraction, fused with the cross-entropy loss.
// Returns mean( -log p[n, label_n] ); probs receives the softmax rows.
template <typename T>
T softmax_cross_entropy_forward(const Tensor<T>& logits, const std::vector<int>& labels,
                                Tensor<T>& probs) {
    const std::size_t batch = logits.shape[0], k = logits.shape[1];
    T loss = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        const T* row = logits.data.data() + n * k;
        T* prow = probs.data.data() + n * k;
        T mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (std::size_t j = 0; j < k; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (std::size_t j = 0; j < k; ++j) prow[j] /= sum;
        loss -= std::log(prow[static_cast<std::size_t>(labels[n])]);
    }
    return loss / static_cast<T>(batch);
}

// d loss / d logits = (p - onehot) / N, scaled by the upstream scalar grad.
template <typename T>
void softmax_cross_entropy_backward(T gup, const Tensor<T>& probs, const std::vector<int>& labels,
                                    Tensor<T>& glogits) {
    const std::size_t batch = probs.shape[0], k = probs.shape[1];
    const T scale = gup / static_cast<T>(batch);
    for (std::size_t n = 0; n < batch; ++n) {
        const T* prow = probs.data.data() + n * k;
        T* grow = glogits.data.data() + n * k;
        for (std::size_t j = 0; j < k; ++j) {
            T g = prow[j];
            if (j == static_cast<std::size_t>(labels[n])) g -= T(1);
            grow[j] += scale * g;
        }
    }
}

}  // namespace detail
}  // namespace midres
