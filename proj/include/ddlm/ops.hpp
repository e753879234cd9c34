#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ddlm/tensor.hpp"

namespace ddlm {

// ----------------------------------------------------------------------------
// gemm kernels. All loops run in a fixed order so results never depend on
// thread count or call site; inner loops are unit-stride for vectorization.
// ----------------------------------------------------------------------------
namespace kernel {

// C[m,n] (+)= A[m,k] * B[k,n]
inline void gemm_ab(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        Real* crow = c + size_t(i) * n;
        if (!accumulate) std::fill(crow, crow + n, Real(0));
        const Real* arow = a + size_t(i) * k;
        for (int l = 0; l < k; ++l) {
            const Real av = arow[l];
            const Real* brow = b + size_t(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T  (rows of A dotted with rows of B)
inline void gemm_abt(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + size_t(i) * k;
        Real* crow = c + size_t(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + size_t(j) * k;
            Real acc = 0;
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
inline void gemm_atb(const Real* a, const Real* b, Real* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + size_t(k) * n, Real(0));
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + size_t(i) * k;
        const Real* brow = b + size_t(i) * n;
        for (int l = 0; l < k; ++l) {
            const Real av = arow[l];
            Real* crow = c + size_t(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace kernel

namespace detail {

inline size_t batch_numel(const Shape& s) {
    size_t n = 1;
    for (size_t i = 0; i + 2 < s.size(); ++i) n *= size_t(s[i]);
    return n;
}

inline Shape batch_dims(const Shape& s) {
    return Shape(s.begin(), s.end() - 2);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// matmul: a [.., m, k] x b [.., k, n] -> [.., m, n].
// Batch extents must match exactly, or b may be rank-2 (a shared weight,
// broadcast over a's batch; its gradient accumulates across the batch).
// ----------------------------------------------------------------------------
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: need rank >= 2, got " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.dim(-2), k = a.dim(-1);
    const int kb = b.dim(-2), n = b.dim(-1);
    const bool shared_b = (b.rank() == 2 && a.rank() > 2);
    if (k != kb || (!shared_b && detail::batch_dims(a.shape()) != detail::batch_dims(b.shape())))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    const size_t nb = detail::batch_numel(a.shape());
    Shape out_shape = detail::batch_dims(a.shape());
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(std::move(out_shape));

    const Real* ap = a.data().data();
    const Real* bp = b.data().data();
    Real* cp = out.data().data();
    const size_t a_stride = size_t(m) * k, b_stride = shared_b ? 0 : size_t(k) * n,
                 c_stride = size_t(m) * n;
    for (size_t bi = 0; bi < nb; ++bi)
        kernel::gemm_ab(ap + bi * a_stride, bp + bi * b_stride, cp + bi * c_stride, m, k, n, false);

    detail::record(out, {a, b}, [ai = a.impl(), bi_ = b.impl(), m, k, n, nb, shared_b](TensorImpl& self) {
        const Real* dc = self.grad.data();
        const size_t a_stride = size_t(m) * k, b_stride = shared_b ? 0 : size_t(k) * n,
                     c_stride = size_t(m) * n;
        if (ai->requires_grad) {
            Real* da = ai->ensure_grad().data();
            const Real* bp = bi_->data.data();
            for (size_t bb = 0; bb < nb; ++bb)
                kernel::gemm_abt(dc + bb * c_stride, bp + bb * b_stride, da + bb * a_stride, m, n, k,
                                 true);
        }
        if (bi_->requires_grad) {
            Real* db = bi_->ensure_grad().data();
            const Real* ap = ai->data.data();
            // Shared weights accumulate over the batch in index order.
            for (size_t bb = 0; bb < nb; ++bb)
                kernel::gemm_atb(ap + bb * a_stride, dc + bb * c_stride,
                                 db + (shared_b ? 0 : bb * size_t(k) * n), m, k, n, true);
        }
    });
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    detail::record(out, {a, b}, [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
        const size_t n = self.grad.size();
        if (ai->requires_grad) {
            Real* da = ai->ensure_grad().data();
            for (size_t i = 0; i < n; ++i) da[i] += self.grad[i];
        }
        if (bi->requires_grad) {
            Real* db = bi->ensure_grad().data();
            for (size_t i = 0; i < n; ++i) db[i] += self.grad[i];
        }
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    detail::record(out, {a, b}, [ai = a.impl(), bi = b.impl()](TensorImpl& self) {
        const size_t n = self.grad.size();
        if (ai->requires_grad) {
            Real* da = ai->ensure_grad().data();
            for (size_t i = 0; i < n; ++i) da[i] += self.grad[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            Real* db = bi->ensure_grad().data();
            for (size_t i = 0; i < n; ++i) db[i] += self.grad[i] * ai->data[i];
        }
    });
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) out.data()[i] = Real(double(a.data()[i]) * c);
    if (a.numel() == 1 && a.impl()->has_scalar_f64) {
        out.impl()->scalar_f64 = a.impl()->scalar_f64 * c;
        out.impl()->has_scalar_f64 = true;
    }
    detail::record(out, {a}, [ai = a.impl(), c](TensorImpl& self) {
        Real* da = ai->ensure_grad().data();
        for (size_t i = 0; i < self.grad.size(); ++i) da[i] += Real(double(self.grad[i]) * c);
    });
    return out;
}

inline Tensor silu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const size_t n = a.numel();
    for (size_t i = 0; i < n; ++i) {
        const Real x = a.data()[i];
        const Real s = Real(1) / (Real(1) + std::exp(-x));
        out.data()[i] = x * s;
    }
    detail::record(out, {a}, [ai = a.impl()](TensorImpl& self) {
        Real* da = ai->ensure_grad().data();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const Real x = ai->data[i];
            const Real s = Real(1) / (Real(1) + std::exp(-x));
            da[i] += self.grad[i] * s * (Real(1) + x * (Real(1) - s));
        }
    });
    return out;
}

// ----------------------------------------------------------------------------
// rmsnorm over the last dimension: y = gain * x / sqrt(mean(x^2) + eps).
// ----------------------------------------------------------------------------
inline Tensor rmsnorm(const Tensor& x, const Tensor& gain) {
    constexpr double kEps = 1e-6;
    const int d = x.dim(-1);
    if (gain.rank() != 1 || gain.dim(0) != d)
        throw ShapeError("rmsnorm: gain " + shape_str(gain.shape()) + " does not match last extent of " +
                         shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape());
    const size_t rows = x.numel() / size_t(d);
    const Real* xp = x.data().data();
    const Real* gp = gain.data().data();
    Real* yp = out.data().data();
    for (size_t r = 0; r < rows; ++r) {
        const Real* xr = xp + r * d;
        Real* yr = yp + r * d;
        double ss = 0;
        for (int i = 0; i < d; ++i) ss += double(xr[i]) * double(xr[i]);
        const Real inv = Real(1.0 / std::sqrt(ss / d + kEps));
        for (int i = 0; i < d; ++i) yr[i] = gp[i] * xr[i] * inv;
    }
    detail::record(out, {x, gain}, [xi = x.impl(), gi = gain.impl(), d](TensorImpl& self) {
        const size_t rows = self.grad.size() / size_t(d);
        const Real* xp = xi->data.data();
        const Real* gp = gi->data.data();
        const Real* dy = self.grad.data();
        Real* dx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
        Real* dg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
        for (size_t r = 0; r < rows; ++r) {
            const Real* xr = xp + r * d;
            const Real* dyr = dy + r * d;
            double ss = 0;
            for (int i = 0; i < d; ++i) ss += double(xr[i]) * double(xr[i]);
            const double inv = 1.0 / std::sqrt(ss / d + 1e-6);
            if (dx) {
                double dot = 0;  // sum_i dy_i * g_i * x_i
                for (int i = 0; i < d; ++i) dot += double(dyr[i]) * double(gp[i]) * double(xr[i]);
                const double coef = dot * inv * inv * inv / d;
                for (int i = 0; i < d; ++i)
                    dx[r * d + i] += Real(double(dyr[i]) * double(gp[i]) * inv - coef * double(xr[i]));
            }
            if (dg)
                for (int i = 0; i < d; ++i) dg[i] += Real(double(dyr[i]) * double(xr[i]) * inv);
        }
    });
    return out;
}

// ----------------------------------------------------------------------------
// softmax over the last dimension, stabilized by max subtraction.
// ----------------------------------------------------------------------------
inline Tensor softmax_lastdim(const Tensor& x) {
    const int d = x.dim(-1);
    if (d < 1) throw ShapeError("softmax_lastdim: empty last extent in " + shape_str(x.shape()));
    for (Real v : x.data())
        if (!std::isfinite(v)) throw NumericError("softmax_lastdim: non-finite input");
    Tensor out = Tensor::zeros(x.shape());
    const size_t rows = x.numel() / size_t(d);
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    for (size_t r = 0; r < rows; ++r) {
        const Real* xr = xp + r * d;
        Real* yr = yp + r * d;
        Real m = xr[0];
        for (int i = 1; i < d; ++i) m = std::max(m, xr[i]);
        double z = 0;
        for (int i = 0; i < d; ++i) {
            const Real e = std::exp(xr[i] - m);
            yr[i] = e;
            z += double(e);
        }
        const Real invz = Real(1.0 / z);
        for (int i = 0; i < d; ++i) yr[i] *= invz;
    }
    detail::record(out, {x}, [xi = x.impl(), d](TensorImpl& self) {
        if (!xi->requires_grad) return;
        const size_t rows = self.grad.size() / size_t(d);
        const Real* y = self.data.data();
        const Real* dy = self.grad.data();
        Real* dx = xi->ensure_grad().data();
        for (size_t r = 0; r < rows; ++r) {
            const Real* yr = y + r * d;
            const Real* dyr = dy + r * d;
            double dot = 0;
            for (int i = 0; i < d; ++i) dot += double(dyr[i]) * double(yr[i]);
            for (int i = 0; i < d; ++i) dx[r * d + i] += Real(double(yr[i]) * (double(dyr[i]) - dot));
        }
    });
    return out;
}

// ----------------------------------------------------------------------------
// embedding: out[b,l,:] = table[ids[b*L+l], :], ids bounds-checked.
// ----------------------------------------------------------------------------
inline Tensor embedding(const Tensor& table, const std::vector<int>& ids, int batch, int length) {
    if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
    if (ids.size() != size_t(batch) * size_t(length))
        throw ShapeError("embedding: ids size " + std::to_string(ids.size()) + " != batch*length");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw DataError("embedding: token id " + std::to_string(id) + " out of range [0," +
                            std::to_string(v) + ")");
    Tensor out = Tensor::zeros({batch, length, d});
    const Real* tp = table.data().data();
    Real* op = out.data().data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(tp + size_t(ids[i]) * d, tp + size_t(ids[i]) * d + d, op + i * d);
    detail::record(out, {table}, [ti = table.impl(), ids, d](TensorImpl& self) {
        if (!ti->requires_grad) return;
        Real* dt = ti->ensure_grad().data();
        const Real* dy = self.grad.data();
        for (size_t i = 0; i < ids.size(); ++i) {
            Real* row = dt + size_t(ids[i]) * d;
            const Real* g = dy + i * d;
            for (int j = 0; j < d; ++j) row[j] += g[j];
        }
    });
    return out;
}

// ----------------------------------------------------------------------------
// Rotary position encoding on [B, H, L, Dh], rotate-half pairing
// (x_j, x_{j+Dh/2}) with angle pos * base^(-2j/Dh). The map is orthogonal,
// so the backward pass is the inverse rotation.
// ----------------------------------------------------------------------------
inline Tensor rope(const Tensor& x, double base) {
    if (x.rank() != 4) throw ShapeError("rope: expected [B,H,L,Dh], got " + shape_str(x.shape()));
    const int b = x.dim(0), h = x.dim(1), l = x.dim(2), dh = x.dim(3);
    if (dh % 2 != 0) throw ShapeError("rope: head dim must be even, got " + shape_str(x.shape()));
    const int half = dh / 2;
    std::vector<Real> cos_t(size_t(l) * half), sin_t(size_t(l) * half);
    for (int pos = 0; pos < l; ++pos)
        for (int j = 0; j < half; ++j) {
            const double theta = pos * std::pow(base, -2.0 * j / dh);
            cos_t[size_t(pos) * half + j] = Real(std::cos(theta));
            sin_t[size_t(pos) * half + j] = Real(std::sin(theta));
        }
    Tensor out = Tensor::zeros(x.shape());
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    const size_t rows = size_t(b) * h;
    for (size_t r = 0; r < rows; ++r)
        for (int pos = 0; pos < l; ++pos) {
            const Real* xr = xp + (r * l + pos) * dh;
            Real* yr = yp + (r * l + pos) * dh;
            const Real* cr = cos_t.data() + size_t(pos) * half;
            const Real* sr = sin_t.data() + size_t(pos) * half;
            for (int j = 0; j < half; ++j) {
                yr[j] = xr[j] * cr[j] - xr[j + half] * sr[j];
                yr[j + half] = xr[j] * sr[j] + xr[j + half] * cr[j];
            }
        }
    detail::record(out, {x}, [xi = x.impl(), cos_t, sin_t, b, h, l, dh, half](TensorImpl& self) {
        if (!xi->requires_grad) return;
        Real* dx = xi->ensure_grad().data();
        const Real* dy = self.grad.data();
        const size_t rows = size_t(b) * h;
        for (size_t r = 0; r < rows; ++r)
            for (int pos = 0; pos < l; ++pos) {
                const Real* dyr = dy + (r * l + pos) * dh;
                Real* dxr = dx + (r * l + pos) * dh;
                const Real* cr = cos_t.data() + size_t(pos) * half;
                const Real* sr = sin_t.data() + size_t(pos) * half;
                for (int j = 0; j < half; ++j) {
                    dxr[j] += dyr[j] * cr[j] + dyr[j + half] * sr[j];
                    dxr[j + half] += -dyr[j] * sr[j] + dyr[j + half] * cr[j];
                }
            }
    });
    return out;
}

// [B, L, H*Dh] -> [B, H, L, Dh]
inline Tensor split_heads(const Tensor& x, int heads) {
    if (x.rank() != 3) throw ShapeError("split_heads: expected [B,L,D], got " + shape_str(x.shape()));
    const int b = x.dim(0), l = x.dim(1), d = x.dim(2);
    if (d % heads != 0)
        throw ShapeError("split_heads: " + shape_str(x.shape()) + " not divisible into " +
                         std::to_string(heads) + " heads");
    const int dh = d / heads;
    Tensor out = Tensor::zeros({b, heads, l, dh});
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    for (int bb = 0; bb < b; ++bb)
        for (int hh = 0; hh < heads; ++hh)
            for (int ll = 0; ll < l; ++ll) {
                const Real* src = xp + (size_t(bb) * l + ll) * d + size_t(hh) * dh;
                Real* dst = yp + ((size_t(bb) * heads + hh) * l + ll) * dh;
                std::copy(src, src + dh, dst);
            }
    detail::record(out, {x}, [xi = x.impl(), b, l, d, heads, dh](TensorImpl& self) {
        if (!xi->requires_grad) return;
        Real* dx = xi->ensure_grad().data();
        const Real* dy = self.grad.data();
        for (int bb = 0; bb < b; ++bb)
            for (int hh = 0; hh < heads; ++hh)
                for (int ll = 0; ll < l; ++ll) {
                    Real* dst = dx + (size_t(bb) * l + ll) * d + size_t(hh) * dh;
                    const Real* src = dy + ((size_t(bb) * heads + hh) * l + ll) * dh;
                    for (int j = 0; j < dh; ++j) dst[j] += src[j];
                }
    });
    return out;
}

// [B, H, L, Dh] -> [B, L, H*Dh]
inline Tensor merge_heads(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("merge_heads: expected [B,H,L,Dh], got " + shape_str(x.shape()));
    const int b = x.dim(0), h = x.dim(1), l = x.dim(2), dh = x.dim(3);
    const int d = h * dh;
    Tensor out = Tensor::zeros({b, l, d});
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    for (int bb = 0; bb < b; ++bb)
        for (int hh = 0; hh < h; ++hh)
            for (int ll = 0; ll < l; ++ll) {
                const Real* src = xp + ((size_t(bb) * h + hh) * l + ll) * dh;
                Real* dst = yp + (size_t(bb) * l + ll) * d + size_t(hh) * dh;
                std::copy(src, src + dh, dst);
            }
    detail::record(out, {x}, [xi = x.impl(), b, h, l, dh, d](TensorImpl& self) {
        if (!xi->requires_grad) return;
        Real* dx = xi->ensure_grad().data();
        const Real* dy = self.grad.data();
        for (int bb = 0; bb < b; ++bb)
            for (int hh = 0; hh < h; ++hh)
                for (int ll = 0; ll < l; ++ll) {
                    Real* dst = dx + ((size_t(bb) * h + hh) * l + ll) * dh;
                    const Real* src = dy + (size_t(bb) * l + ll) * d + size_t(hh) * dh;
                    for (int j = 0; j < dh; ++j) dst[j] += src[j];
                }
    });
    return out;
}

// [.., m, n] -> [.., n, m]
inline Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2 in " + shape_str(x.shape()));
    const int m = x.dim(-2), n = x.dim(-1);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    Tensor out = Tensor::zeros(std::move(out_shape));
    const size_t nb = detail::batch_numel(x.shape());
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    for (size_t bb = 0; bb < nb; ++bb) {
        const Real* xb = xp + bb * size_t(m) * n;
        Real* yb = yp + bb * size_t(m) * n;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) yb[size_t(j) * m + i] = xb[size_t(i) * n + j];
    }
    detail::record(out, {x}, [xi = x.impl(), m, n, nb](TensorImpl& self) {
        if (!xi->requires_grad) return;
        Real* dx = xi->ensure_grad().data();
        const Real* dy = self.grad.data();
        for (size_t bb = 0; bb < nb; ++bb) {
            Real* dxb = dx + bb * size_t(m) * n;
            const Real* dyb = dy + bb * size_t(m) * n;
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) dxb[size_t(i) * n + j] += dyb[size_t(j) * m + i];
        }
    });
    return out;
}

// Additive causal mask on score tensors [.., L, L]: entries with column > row
// get a large negative offset so their softmax weight underflows to zero.
inline Tensor add_causal_mask(const Tensor& x) {
    const int m = x.dim(-2), n = x.dim(-1);
    if (m != n) throw ShapeError("add_causal_mask: scores must be square, got " + shape_str(x.shape()));
    constexpr Real kNegInf = Real(-1e30);
    Tensor out = Tensor::zeros(x.shape());
    const size_t nb = detail::batch_numel(x.shape());
    const Real* xp = x.data().data();
    Real* yp = out.data().data();
    for (size_t bb = 0; bb < nb; ++bb)
        for (int i = 0; i < m; ++i) {
            const Real* xr = xp + (bb * m + i) * size_t(n);
            Real* yr = yp + (bb * m + i) * size_t(n);
            for (int j = 0; j <= i; ++j) yr[j] = xr[j];
            for (int j = i + 1; j < n; ++j) yr[j] = xr[j] + kNegInf;
        }
    detail::record(out, {x}, [xi = x.impl()](TensorImpl& self) {
        if (!xi->requires_grad) return;
        Real* dx = xi->ensure_grad().data();
        for (size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    });
    return out;
}

// ----------------------------------------------------------------------------
// masked_cross_entropy: sum_n weights[n] * (-log softmax(logits[n])[targets[n]]).
// Zero-weight rows contribute exactly 0 and receive zero gradient. The
// reduction runs in double and the accumulator is kept on the scalar output.
// ----------------------------------------------------------------------------
inline Tensor masked_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                                   const std::vector<double>& weights) {
    if (logits.rank() != 2)
        throw ShapeError("masked_cross_entropy: logits must be [N,V], got " + shape_str(logits.shape()));
    const int n = logits.dim(0), v = logits.dim(1);
    if (targets.size() != size_t(n) || weights.size() != size_t(n))
        throw ShapeError("masked_cross_entropy: need " + std::to_string(n) + " targets/weights, got " +
                         std::to_string(targets.size()) + "/" + std::to_string(weights.size()));
    const Real* lp = logits.data().data();
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const double w = weights[i];
        if (w == 0.0) continue;
        if (w < 0.0) throw UsageError("masked_cross_entropy: negative weight at row " + std::to_string(i));
        const int t = targets[i];
        if (t < 0 || t >= v)
            throw DataError("masked_cross_entropy: target id " + std::to_string(t) + " out of range [0," +
                            std::to_string(v) + ") at row " + std::to_string(i));
        const Real* row = lp + size_t(i) * v;
        Real m = row[0];
        for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
        double z = 0;
        for (int j = 0; j < v; ++j) z += std::exp(double(row[j]) - double(m));
        total += w * (double(m) + std::log(z) - double(row[t]));
    }
    Tensor out = Tensor::from_data({1}, {Real(total)});
    out.impl()->scalar_f64 = total;
    out.impl()->has_scalar_f64 = true;
    detail::record(out, {logits}, [li = logits.impl(), targets, weights, n, v](TensorImpl& self) {
        if (!li->requires_grad) return;
        const double up = double(self.grad[0]);
        Real* dl = li->ensure_grad().data();
        const Real* lp = li->data.data();
        for (int i = 0; i < n; ++i) {
            const double w = weights[i];
            if (w == 0.0) continue;
            const Real* row = lp + size_t(i) * v;
            Real* drow = dl + size_t(i) * v;
            Real m = row[0];
            for (int j = 1; j < v; ++j) m = std::max(m, row[j]);
            double z = 0;
            for (int j = 0; j < v; ++j) z += std::exp(double(row[j]) - double(m));
            const double c = up * w;
            for (int j = 0; j < v; ++j) {
                double p = std::exp(double(row[j]) - double(m)) / z;
                drow[j] += Real(c * (p - (j == targets[i] ? 1.0 : 0.0)));
            }
        }
    });
    return out;
}

inline Tensor sum(const Tensor& a) {
    double total = 0;
    for (Real v : a.data()) total += double(v);
    Tensor out = Tensor::from_data({1}, {Real(total)});
    out.impl()->scalar_f64 = total;
    out.impl()->has_scalar_f64 = true;
    detail::record(out, {a}, [ai = a.impl()](TensorImpl& self) {
        Real* da = ai->ensure_grad().data();
        const Real g = self.grad[0];
        for (size_t i = 0; i < ai->data.size(); ++i) da[i] += g;
    });
    return out;
}

inline Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw UsageError("mean: empty tensor");
    return scale(sum(a), 1.0 / double(a.numel()));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape), a.data());
    detail::record(out, {a}, [ai = a.impl()](TensorImpl& self) {
        Real* da = ai->ensure_grad().data();
        for (size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i];
    });
    return out;
}

}  // namespace ddlm
