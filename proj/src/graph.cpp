#include "ficd/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ficd/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ficd::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Conv3d: return "conv3d";
        case Op::ConvTranspose3d: return "conv_transpose3d";
        case Op::Linear: return "linear";
        case Op::GroupNorm: return "group_norm";
        case Op::Silu: return "silu";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::ChannelBias: return "channel_bias";
        case Op::Scale: return "scale";
        case Op::Shift: return "shift";
        case Op::ConcatChannels: return "concat_channels";
        case Op::SoftmaxLastDim: return "softmax_lastdim";
        case Op::Bmm: return "bmm";
        case Op::MeanAll: return "mean_all";
        case Op::SumAll: return "sum_all";
        case Op::AbsVal: return "abs";
        case Op::Square: return "square";
        case Op::Reshape: return "reshape";
        case Op::Permute: return "permute";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_fail(Op op, const Shape& a, const Shape& b, const char* detail) {
    throw ShapeError(std::string(op_name(op)) + ": " + detail + " (got " + shape_str(a) +
                     " vs " + shape_str(b) + ")");
}

void require(bool cond, Op op, const std::string& msg) {
    if (!cond) throw ShapeError(std::string(op_name(op)) + ": " + msg);
}

inline int64_t conv_out_dim(int64_t in, int k, int s, int p) {
    return (in + 2 * p - k) / s + 1;
}

inline int64_t tconv_out_dim(int64_t in, int k, int s, int p) {
    return (in - 1) * s - 2 * p + k;
}

struct Dims5 {
    int64_t n, c, d, h, w;
};

Dims5 as5(const Shape& s, Op op) {
    if (s.size() != 5) {
        throw ShapeError(std::string(op_name(op)) + ": expected a 5-d (N,C,D,H,W) tensor, got " +
                         shape_str(s));
    }
    return {s[0], s[1], s[2], s[3], s[4]};
}

// ------------------------------------------------------------------
// conv3d kernels; all loops write disjoint output slices per thread so
// results are bitwise independent of thread count.
// ------------------------------------------------------------------

void conv3d_forward(const double* x, const Dims5& xd, const double* w, int64_t oc_n, int k,
                    int s, int p, double* out, const Dims5& od) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t noc = 0; noc < xd.n * oc_n; ++noc) {
        const int64_t n = noc / oc_n, oc = noc % oc_n;
        double* o = out + (n * oc_n + oc) * out_sp;
        for (int64_t ic = 0; ic < xd.c; ++ic) {
            const double* xi = x + (n * xd.c + ic) * in_sp;
            const double* wk = w + (oc * xd.c + ic) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                const int64_t oz_lo = std::max<int64_t>(0, (p - kz + s - 1) / s);
                const int64_t oz_hi = std::min<int64_t>(od.d - 1, (xd.d - 1 - kz + p) / s);
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t oy_lo = std::max<int64_t>(0, (p - ky + s - 1) / s);
                    const int64_t oy_hi = std::min<int64_t>(od.h - 1, (xd.h - 1 - ky + p) / s);
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        if (wv == 0.0) continue;
                        const int64_t ox_lo = std::max<int64_t>(0, (p - kx + s - 1) / s);
                        const int64_t ox_hi = std::min<int64_t>(od.w - 1, (xd.w - 1 - kx + p) / s);
                        for (int64_t oz = oz_lo; oz <= oz_hi; ++oz) {
                            const int64_t iz = oz * s + kz - p;
                            for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                                const int64_t iy = oy * s + ky - p;
                                double* orow = o + (oz * od.h + oy) * od.w;
                                const double* irow = xi + (iz * xd.h + iy) * xd.w;
                                const int64_t xoff = kx - p;
                                if (s == 1) {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        orow[ox] += wv * irow[ox + xoff];
                                } else {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        orow[ox] += wv * irow[ox * s + xoff];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_backward_x(const double* gy, const Dims5& od, const double* w, int64_t oc_n, int k,
                       int s, int p, double* gx, const Dims5& xd) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t nic = 0; nic < xd.n * xd.c; ++nic) {
        const int64_t n = nic / xd.c, ic = nic % xd.c;
        double* g = gx + (n * xd.c + ic) * in_sp;
        for (int64_t oc = 0; oc < oc_n; ++oc) {
            const double* go = gy + (n * oc_n + oc) * out_sp;
            const double* wk = w + (oc * xd.c + ic) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                const int64_t oz_lo = std::max<int64_t>(0, (p - kz + s - 1) / s);
                const int64_t oz_hi = std::min<int64_t>(od.d - 1, (xd.d - 1 - kz + p) / s);
                for (int ky = 0; ky < k; ++ky) {
                    const int64_t oy_lo = std::max<int64_t>(0, (p - ky + s - 1) / s);
                    const int64_t oy_hi = std::min<int64_t>(od.h - 1, (xd.h - 1 - ky + p) / s);
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        if (wv == 0.0) continue;
                        const int64_t ox_lo = std::max<int64_t>(0, (p - kx + s - 1) / s);
                        const int64_t ox_hi = std::min<int64_t>(od.w - 1, (xd.w - 1 - kx + p) / s);
                        for (int64_t oz = oz_lo; oz <= oz_hi; ++oz) {
                            const int64_t iz = oz * s + kz - p;
                            for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                                const int64_t iy = oy * s + ky - p;
                                const double* grow = go + (oz * od.h + oy) * od.w;
                                double* xrow = g + (iz * xd.h + iy) * xd.w;
                                const int64_t xoff = kx - p;
                                if (s == 1) {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        xrow[ox + xoff] += wv * grow[ox];
                                } else {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        xrow[ox * s + xoff] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv3d_backward_w(const double* x, const Dims5& xd, const double* gy, const Dims5& od,
                       int64_t oc_n, int k, int s, int p, double* gw) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t pair = 0; pair < oc_n * xd.c; ++pair) {
        const int64_t oc = pair / xd.c, ic = pair % xd.c;
        double* gwk = gw + (oc * xd.c + ic) * k * k * k;
        for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < xd.n; ++n) {
                        const double* xi = x + (n * xd.c + ic) * in_sp;
                        const double* go = gy + (n * oc_n + oc) * out_sp;
                        const int64_t oz_lo = std::max<int64_t>(0, (p - kz + s - 1) / s);
                        const int64_t oz_hi = std::min<int64_t>(od.d - 1, (xd.d - 1 - kz + p) / s);
                        const int64_t oy_lo = std::max<int64_t>(0, (p - ky + s - 1) / s);
                        const int64_t oy_hi = std::min<int64_t>(od.h - 1, (xd.h - 1 - ky + p) / s);
                        const int64_t ox_lo = std::max<int64_t>(0, (p - kx + s - 1) / s);
                        const int64_t ox_hi = std::min<int64_t>(od.w - 1, (xd.w - 1 - kx + p) / s);
                        for (int64_t oz = oz_lo; oz <= oz_hi; ++oz) {
                            const int64_t iz = oz * s + kz - p;
                            for (int64_t oy = oy_lo; oy <= oy_hi; ++oy) {
                                const int64_t iy = oy * s + ky - p;
                                const double* grow = go + (oz * od.h + oy) * od.w;
                                const double* irow = xi + (iz * xd.h + iy) * xd.w;
                                const int64_t xoff = kx - p;
                                if (s == 1) {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        acc += grow[ox] * irow[ox + xoff];
                                } else {
                                    for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                                        acc += grow[ox] * irow[ox * s + xoff];
                                }
                            }
                        }
                    }
                    gwk[(kz * k + ky) * k + kx] = acc;
                }
            }
        }
    }
}

// Transposed convolution: scatter form of conv3d with in/out roles swapped.
void tconv3d_forward(const double* x, const Dims5& xd, const double* w, int64_t oc_n, int k,
                     int s, int p, double* out, const Dims5& od) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t noc = 0; noc < xd.n * oc_n; ++noc) {
        const int64_t n = noc / oc_n, oc = noc % oc_n;
        double* o = out + (n * oc_n + oc) * out_sp;
        for (int64_t ic = 0; ic < xd.c; ++ic) {
            const double* xi = x + (n * xd.c + ic) * in_sp;
            const double* wk = w + (ic * oc_n + oc) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        if (wv == 0.0) continue;
                        for (int64_t iz = 0; iz < xd.d; ++iz) {
                            const int64_t oz = iz * s + kz - p;
                            if (oz < 0 || oz >= od.d) continue;
                            for (int64_t iy = 0; iy < xd.h; ++iy) {
                                const int64_t oy = iy * s + ky - p;
                                if (oy < 0 || oy >= od.h) continue;
                                const double* irow = xi + (iz * xd.h + iy) * xd.w;
                                double* orow = o + (oz * od.h + oy) * od.w;
                                for (int64_t ix = 0; ix < xd.w; ++ix) {
                                    const int64_t ox = ix * s + kx - p;
                                    if (ox < 0 || ox >= od.w) continue;
                                    orow[ox] += wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void tconv3d_backward_x(const double* gy, const Dims5& od, const double* w, int64_t oc_n, int k,
                        int s, int p, double* gx, const Dims5& xd) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t nic = 0; nic < xd.n * xd.c; ++nic) {
        const int64_t n = nic / xd.c, ic = nic % xd.c;
        double* g = gx + (n * xd.c + ic) * in_sp;
        for (int64_t oc = 0; oc < oc_n; ++oc) {
            const double* go = gy + (n * oc_n + oc) * out_sp;
            const double* wk = w + (ic * oc_n + oc) * k * k * k;
            for (int kz = 0; kz < k; ++kz) {
                for (int ky = 0; ky < k; ++ky) {
                    for (int kx = 0; kx < k; ++kx) {
                        const double wv = wk[(kz * k + ky) * k + kx];
                        if (wv == 0.0) continue;
                        for (int64_t iz = 0; iz < xd.d; ++iz) {
                            const int64_t oz = iz * s + kz - p;
                            if (oz < 0 || oz >= od.d) continue;
                            for (int64_t iy = 0; iy < xd.h; ++iy) {
                                const int64_t oy = iy * s + ky - p;
                                if (oy < 0 || oy >= od.h) continue;
                                double* grow = g + (iz * xd.h + iy) * xd.w;
                                const double* orow = go + (oz * od.h + oy) * od.w;
                                for (int64_t ix = 0; ix < xd.w; ++ix) {
                                    const int64_t ox = ix * s + kx - p;
                                    if (ox < 0 || ox >= od.w) continue;
                                    grow[ix] += wv * orow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

void tconv3d_backward_w(const double* x, const Dims5& xd, const double* gy, const Dims5& od,
                        int64_t oc_n, int k, int s, int p, double* gw) {
    const int64_t in_sp = xd.d * xd.h * xd.w;
    const int64_t out_sp = od.d * od.h * od.w;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t pair = 0; pair < xd.c * oc_n; ++pair) {
        const int64_t ic = pair / oc_n, oc = pair % oc_n;
        double* gwk = gw + (ic * oc_n + oc) * k * k * k;
        for (int kz = 0; kz < k; ++kz) {
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (int64_t n = 0; n < xd.n; ++n) {
                        const double* xi = x + (n * xd.c + ic) * in_sp;
                        const double* go = gy + (n * oc_n + oc) * out_sp;
                        for (int64_t iz = 0; iz < xd.d; ++iz) {
                            const int64_t oz = iz * s + kz - p;
                            if (oz < 0 || oz >= od.d) continue;
                            for (int64_t iy = 0; iy < xd.h; ++iy) {
                                const int64_t oy = iy * s + ky - p;
                                if (oy < 0 || oy >= od.h) continue;
                                const double* irow = xi + (iz * xd.h + iy) * xd.w;
                                const double* orow = go + (oz * od.h + oy) * od.w;
                                for (int64_t ix = 0; ix < xd.w; ++ix) {
                                    const int64_t ox = ix * s + kx - p;
                                    if (ox < 0 || ox >= od.w) continue;
                                    acc += irow[ix] * orow[ox];
                                }
                            }
                        }
                    }
                    gwk[(kz * k + ky) * k + kx] = acc;
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Value Graph::record(Op op, std::vector<int> inputs, Tensor value, OpAttrs attrs,
                    std::vector<double> saved) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    n.attrs = std::move(attrs);
    n.saved = std::move(saved);
    for (int i : n.inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(i)].needs_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::leaf(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.needs_grad = t.requires_grad;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Graph::constant(Tensor t) {
    t.requires_grad = false;
    return leaf(std::move(t));
}

std::span<const double> Graph::grad(Value v) const {
    const Node& n = node(v);
    return {n.grad.data(), n.grad.size()};
}

Value Graph::conv3d(Value xv, Value wv, int stride, int padding) {
    const Tensor& x = value(xv);
    const Tensor& w = value(wv);
    Dims5 xd = as5(x.shape(), Op::Conv3d);
    if (w.ndim() != 5 || w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4))
        throw ShapeError("conv3d: weight must be (OC,IC,k,k,k), got " + shape_str(w.shape()));
    if (w.dim(1) != xd.c) shape_fail(Op::Conv3d, x.shape(), w.shape(), "input channels mismatch");
    require(stride >= 1 && padding >= 0, Op::Conv3d, "stride must be >=1 and padding >=0");
    const int k = static_cast<int>(w.dim(2));
    Dims5 od{xd.n, w.dim(0), conv_out_dim(xd.d, k, stride, padding),
             conv_out_dim(xd.h, k, stride, padding), conv_out_dim(xd.w, k, stride, padding)};
    require(od.d > 0 && od.h > 0 && od.w > 0, Op::Conv3d, "kernel larger than padded input");
    Tensor out({od.n, od.c, od.d, od.h, od.w});
    conv3d_forward(x.data().data(), xd, w.data().data(), od.c, k, stride, padding,
                   out.mutable_data().data(), od);
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    return record(Op::Conv3d, {xv.id, wv.id}, std::move(out), a);
}

Value Graph::conv_transpose3d(Value xv, Value wv, int stride, int padding) {
    const Tensor& x = value(xv);
    const Tensor& w = value(wv);
    Dims5 xd = as5(x.shape(), Op::ConvTranspose3d);
    if (w.ndim() != 5 || w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4))
        throw ShapeError("conv_transpose3d: weight must be (IC,OC,k,k,k), got " + shape_str(w.shape()));
    if (w.dim(0) != xd.c)
        shape_fail(Op::ConvTranspose3d, x.shape(), w.shape(), "input channels mismatch");
    require(stride >= 1 && padding >= 0, Op::ConvTranspose3d, "stride must be >=1 and padding >=0");
    const int k = static_cast<int>(w.dim(2));
    Dims5 od{xd.n, w.dim(1), tconv_out_dim(xd.d, k, stride, padding),
             tconv_out_dim(xd.h, k, stride, padding), tconv_out_dim(xd.w, k, stride, padding)};
    require(od.d > 0 && od.h > 0 && od.w > 0, Op::ConvTranspose3d, "degenerate output size");
    Tensor out({od.n, od.c, od.d, od.h, od.w});
    tconv3d_forward(x.data().data(), xd, w.data().data(), od.c, k, stride, padding,
                    out.mutable_data().data(), od);
    OpAttrs a;
    a.stride = stride;
    a.padding = padding;
    return record(Op::ConvTranspose3d, {xv.id, wv.id}, std::move(out), a);
}

Value Graph::linear(Value xv, Value wv, Value bv) {
    const Tensor& x = value(xv);
    const Tensor& w = value(wv);
    const Tensor& b = value(bv);
    if (w.ndim() != 2) throw ShapeError("linear: weight must be 2-d, got " + shape_str(w.shape()));
    const int64_t kdim = w.dim(0), odim = w.dim(1);
    if (x.ndim() < 1 || x.shape().back() != kdim)
        shape_fail(Op::Linear, x.shape(), w.shape(), "inner dimensions mismatch");
    if (b.numel() != odim) shape_fail(Op::Linear, b.shape(), w.shape(), "bias size mismatch");
    const int64_t rows = x.numel() / kdim;
    Shape out_shape(x.shape());
    out_shape.back() = odim;
    Tensor out(out_shape);
    auto od = out.mutable_data();
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* bp = b.data().data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xp + r * kdim;
        double* orow = od.data() + r * odim;
        for (int64_t o = 0; o < odim; ++o) orow[o] = bp[o];
        for (int64_t i = 0; i < kdim; ++i) {
            const double xi = xr[i];
            if (xi == 0.0) continue;
            const double* wrow = wp + i * odim;
            for (int64_t o = 0; o < odim; ++o) orow[o] += xi * wrow[o];
        }
    }
    return record(Op::Linear, {xv.id, wv.id, bv.id}, std::move(out));
}

Value Graph::group_norm(Value xv, Value gv, Value bv, int groups, double eps) {
    const Tensor& x = value(xv);
    const Tensor& gamma = value(gv);
    const Tensor& beta = value(bv);
    if (x.ndim() < 2) throw ShapeError("group_norm: input must have (N,C,...) layout");
    const int64_t n_n = x.dim(0), c_n = x.dim(1);
    require(groups >= 1 && c_n % groups == 0, Op::GroupNorm,
            "channel count " + std::to_string(c_n) + " not divisible by groups " +
                std::to_string(groups));
    if (gamma.numel() != c_n || beta.numel() != c_n)
        shape_fail(Op::GroupNorm, gamma.shape(), x.shape(), "scale/shift must have C elements");
    const int64_t sp = x.numel() / (n_n * c_n);
    const int64_t cpg = c_n / groups;
    const int64_t m = cpg * sp;
    Tensor out(x.shape());
    auto od = out.mutable_data();
    std::vector<double> saved(static_cast<size_t>(2 * n_n * groups));
    const double* xp = x.data().data();
    const double* gp = gamma.data().data();
    const double* bp = beta.data().data();
    for (int64_t n = 0; n < n_n; ++n) {
        for (int64_t g = 0; g < groups; ++g) {
            const double* base = xp + (n * c_n + g * cpg) * sp;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += base[i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                const double d = base[i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double rstd = 1.0 / std::sqrt(var + eps);
            saved[static_cast<size_t>(2 * (n * groups + g))] = mean;
            saved[static_cast<size_t>(2 * (n * groups + g) + 1)] = rstd;
            double* obase = od.data() + (n * c_n + g * cpg) * sp;
            for (int64_t cc = 0; cc < cpg; ++cc) {
                const int64_t c = g * cpg + cc;
                const double* xr = base + cc * sp;
                double* orow = obase + cc * sp;
                for (int64_t i = 0; i < sp; ++i)
                    orow[i] = (xr[i] - mean) * rstd * gp[c] + bp[c];
            }
        }
    }
    OpAttrs a;
    a.groups = groups;
    a.eps = eps;
    return record(Op::GroupNorm, {xv.id, gv.id, bv.id}, std::move(out), a, std::move(saved));
}

Value Graph::silu(Value xv) {
    const Tensor& x = value(xv);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-xd[static_cast<size_t>(i)]));
        od[static_cast<size_t>(i)] = xd[static_cast<size_t>(i)] * s;
    }
    return record(Op::Silu, {xv.id}, std::move(out));
}

Value Graph::add(Value av, Value bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.shape() != b.shape()) shape_fail(Op::Add, a.shape(), b.shape(), "operand shapes differ");
    Tensor out(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    return record(Op::Add, {av.id, bv.id}, std::move(out));
}

Value Graph::mul(Value av, Value bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.shape() != b.shape()) shape_fail(Op::Mul, a.shape(), b.shape(), "operand shapes differ");
    Tensor out(a.shape());
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    return record(Op::Mul, {av.id, bv.id}, std::move(out));
}

Value Graph::channel_bias(Value xv, Value bv) {
    const Tensor& x = value(xv);
    const Tensor& b = value(bv);
    if (x.ndim() < 2 || b.numel() != x.dim(1))
        shape_fail(Op::ChannelBias, x.shape(), b.shape(), "bias must have C elements");
    const int64_t n_n = x.dim(0), c_n = x.dim(1), sp = x.numel() / (x.dim(0) * x.dim(1));
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    auto bd = b.data();
    for (int64_t n = 0; n < n_n; ++n)
        for (int64_t c = 0; c < c_n; ++c) {
            const double bias = bd[static_cast<size_t>(c)];
            const int64_t off = (n * c_n + c) * sp;
            for (int64_t i = 0; i < sp; ++i)
                od[static_cast<size_t>(off + i)] = xd[static_cast<size_t>(off + i)] + bias;
        }
    return record(Op::ChannelBias, {xv.id, bv.id}, std::move(out));
}

Value Graph::scale(Value xv, double s) {
    const Tensor& x = value(xv);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * s;
    OpAttrs a;
    a.scalar = s;
    return record(Op::Scale, {xv.id}, std::move(out), a);
}

Value Graph::shift(Value xv, double s) {
    const Tensor& x = value(xv);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] + s;
    OpAttrs a;
    a.scalar = s;
    return record(Op::Shift, {xv.id}, std::move(out), a);
}

Value Graph::concat_channels(Value av, Value bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.ndim() != b.ndim() || a.ndim() < 2)
        shape_fail(Op::ConcatChannels, a.shape(), b.shape(), "rank mismatch");
    for (int64_t i = 0; i < a.ndim(); ++i) {
        if (i != 1 && a.dim(i) != b.dim(i))
            shape_fail(Op::ConcatChannels, a.shape(), b.shape(), "non-channel dims differ");
    }
    Shape os(a.shape());
    os[1] = a.dim(1) + b.dim(1);
    const int64_t n_n = a.dim(0);
    const int64_t sp = a.numel() / (a.dim(0) * a.dim(1));
    Tensor out(os);
    auto od = out.mutable_data();
    const int64_t a_blk = a.dim(1) * sp, b_blk = b.dim(1) * sp;
    for (int64_t n = 0; n < n_n; ++n) {
        std::memcpy(od.data() + n * (a_blk + b_blk), a.data().data() + n * a_blk,
                    static_cast<size_t>(a_blk) * sizeof(double));
        std::memcpy(od.data() + n * (a_blk + b_blk) + a_blk, b.data().data() + n * b_blk,
                    static_cast<size_t>(b_blk) * sizeof(double));
    }
    return record(Op::ConcatChannels, {av.id, bv.id}, std::move(out));
}

Value Graph::softmax_lastdim(Value xv) {
    const Tensor& x = value(xv);
    const int64_t l = x.shape().back();
    const int64_t rows = x.numel() / l;
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * l;
        double* orow = od.data() + r * l;
        double mx = xr[0];
        for (int64_t i = 1; i < l; ++i) mx = std::max(mx, xr[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < l; ++i) {
            orow[i] = std::exp(xr[i] - mx);
            sum += orow[i];
        }
        const double inv = 1.0 / sum;
        for (int64_t i = 0; i < l; ++i) orow[i] *= inv;
    }
    return record(Op::SoftmaxLastDim, {xv.id}, std::move(out));
}

Value Graph::bmm(Value av, Value bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        shape_fail(Op::Bmm, a.shape(), b.shape(), "expected (B,M,K) x (B,K,N)");
    const int64_t bn = a.dim(0), m = a.dim(1), kk = a.dim(2), n = b.dim(2);
    Tensor out({bn, m, n});
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int64_t bi = 0; bi < bn; ++bi) {
        const double* ab = ad.data() + bi * m * kk;
        const double* bb = bd.data() + bi * kk * n;
        double* ob = od.data() + bi * m * n;
        for (int64_t i = 0; i < m; ++i) {
            double* orow = ob + i * n;
            for (int64_t j = 0; j < n; ++j) orow[j] = 0.0;
            for (int64_t k2 = 0; k2 < kk; ++k2) {
                const double av2 = ab[i * kk + k2];
                if (av2 == 0.0) continue;
                const double* brow = bb + k2 * n;
                for (int64_t j = 0; j < n; ++j) orow[j] += av2 * brow[j];
            }
        }
    }
    return record(Op::Bmm, {av.id, bv.id}, std::move(out));
}

Value Graph::mean_all(Value xv) {
    const Tensor& x = value(xv);
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return record(Op::MeanAll, {xv.id}, Tensor::scalar(acc / static_cast<double>(x.numel())));
}

Value Graph::sum_all(Value xv) {
    const Tensor& x = value(xv);
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    return record(Op::SumAll, {xv.id}, Tensor::scalar(acc));
}

Value Graph::abs_val(Value xv) {
    const Tensor& x = value(xv);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = std::fabs(xd[i]);
    return record(Op::AbsVal, {xv.id}, std::move(out));
}

Value Graph::square(Value xv) {
    const Tensor& x = value(xv);
    Tensor out(x.shape());
    auto od = out.mutable_data();
    auto xd = x.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * xd[i];
    return record(Op::Square, {xv.id}, std::move(out));
}

Value Graph::reshape(Value xv, Shape shape) {
    const Tensor& x = value(xv);
    return record(Op::Reshape, {xv.id}, x.with_shape(std::move(shape)));
}

Value Graph::permute(Value xv, std::vector<int> perm) {
    const Tensor& x = value(xv);
    const int64_t nd = x.ndim();
    require(static_cast<int64_t>(perm.size()) == nd, Op::Permute, "perm rank mismatch");
    Shape os(static_cast<size_t>(nd));
    for (int64_t i = 0; i < nd; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    // strides of the source, reordered by perm
    std::vector<int64_t> src_strides(static_cast<size_t>(nd), 1);
    for (int64_t i = nd - 2; i >= 0; --i)
        src_strides[static_cast<size_t>(i)] = src_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
    std::vector<int64_t> strides(static_cast<size_t>(nd));
    for (int64_t i = 0; i < nd; ++i)
        strides[static_cast<size_t>(i)] = src_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
    Tensor out(os);
    auto od = out.mutable_data();
    auto xd = x.data();
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
        int64_t src = 0;
        for (int64_t i = 0; i < nd; ++i) src += idx[static_cast<size_t>(i)] * strides[static_cast<size_t>(i)];
        od[static_cast<size_t>(flat)] = xd[static_cast<size_t>(src)];
        for (int64_t i = nd - 1; i >= 0; --i) {
            if (++idx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    OpAttrs a;
    a.perm = std::move(perm);
    return record(Op::Permute, {xv.id}, std::move(out), a);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace {
void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.value.numel()), 0.0);
}
}  // namespace

void Graph::backward(Value output) {
    Node& out = node(output);
    if (out.value.numel() != 1)
        throw ShapeError("backward: output must be a single-element tensor, got " +
                         shape_str(out.value.shape()));
    ensure_grad(out);
    out.grad[0] = 1.0;
    for (int id = output.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op == Op::Leaf || n.grad.empty() || !n.needs_grad) continue;
        backward_node(id);
        if (id != output.id) n.grad.clear();  // free memory as the sweep proceeds
    }
    for (auto& n : nodes_) {
        if (n.op == Op::Leaf && n.value.requires_grad) {
            ensure_grad(n);
            n.value.grad = std::make_shared<std::vector<double>>(n.grad);
        }
    }
}

void Graph::backward_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const double* gy = n.grad.data();
    auto in = [&](size_t i) -> Node& { return nodes_[static_cast<size_t>(n.inputs[i])]; };
    auto want = [&](size_t i) -> bool { return in(i).needs_grad; };
    auto gbuf = [&](size_t i) -> double* {
        ensure_grad(in(i));
        return in(i).grad.data();
    };

    switch (n.op) {
        case Op::Leaf:
            return;
        case Op::Conv3d: {
            const Tensor& x = in(0).value;
            const Tensor& w = in(1).value;
            Dims5 xd = as5(x.shape(), n.op);
            Dims5 od = as5(n.value.shape(), n.op);
            const int k = static_cast<int>(w.dim(2));
            if (want(0))
                conv3d_backward_x(gy, od, w.data().data(), od.c, k, n.attrs.stride,
                                  n.attrs.padding, gbuf(0), xd);
            if (want(1)) {
                std::vector<double> gw(static_cast<size_t>(w.numel()));
                conv3d_backward_w(x.data().data(), xd, gy, od, od.c, k, n.attrs.stride,
                                  n.attrs.padding, gw.data());
                double* acc = gbuf(1);
                for (size_t i = 0; i < gw.size(); ++i) acc[i] += gw[i];
            }
            return;
        }
        case Op::ConvTranspose3d: {
            const Tensor& x = in(0).value;
            const Tensor& w = in(1).value;
            Dims5 xd = as5(x.shape(), n.op);
            Dims5 od = as5(n.value.shape(), n.op);
            const int k = static_cast<int>(w.dim(2));
            if (want(0))
                tconv3d_backward_x(gy, od, w.data().data(), od.c, k, n.attrs.stride,
                                   n.attrs.padding, gbuf(0), xd);
            if (want(1)) {
                std::vector<double> gw(static_cast<size_t>(w.numel()));
                tconv3d_backward_w(x.data().data(), xd, gy, od, od.c, k, n.attrs.stride,
                                   n.attrs.padding, gw.data());
                double* acc = gbuf(1);
                for (size_t i = 0; i < gw.size(); ++i) acc[i] += gw[i];
            }
            return;
        }
        case Op::Linear: {
            const Tensor& x = in(0).value;
            const Tensor& w = in(1).value;
            const int64_t kdim = w.dim(0), odim = w.dim(1);
            const int64_t rows = x.numel() / kdim;
            const double* xp = x.data().data();
            const double* wp = w.data().data();
            if (want(0)) {
                double* gx = gbuf(0);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < kdim; ++i) {
                        const double* wrow = wp + i * odim;
                        const double* grow = gy + r * odim;
                        double acc = 0.0;
                        for (int64_t o = 0; o < odim; ++o) acc += wrow[o] * grow[o];
                        gx[r * kdim + i] += acc;
                    }
            }
            if (want(1)) {
                double* gw = gbuf(1);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t i = 0; i < kdim; ++i) {
                        const double xi = xp[r * kdim + i];
                        if (xi == 0.0) continue;
                        const double* grow = gy + r * odim;
                        double* gwrow = gw + i * odim;
                        for (int64_t o = 0; o < odim; ++o) gwrow[o] += xi * grow[o];
                    }
            }
            if (want(2)) {
                double* gb = gbuf(2);
                for (int64_t r = 0; r < rows; ++r)
                    for (int64_t o = 0; o < odim; ++o) gb[o] += gy[r * odim + o];
            }
            return;
        }
        case Op::GroupNorm: {
            const Tensor& x = in(0).value;
            const Tensor& gamma = in(1).value;
            const int64_t n_n = x.dim(0), c_n = x.dim(1);
            const int64_t sp = x.numel() / (n_n * c_n);
            const int groups = n.attrs.groups;
            const int64_t cpg = c_n / groups;
            const int64_t m = cpg * sp;
            const double* xp = x.data().data();
            const double* gp = gamma.data().data();
            double* gx = want(0) ? gbuf(0) : nullptr;
            double* gg = want(1) ? gbuf(1) : nullptr;
            double* gb = want(2) ? gbuf(2) : nullptr;
            for (int64_t nn = 0; nn < n_n; ++nn) {
                for (int64_t g = 0; g < groups; ++g) {
                    const double mean = n.saved[static_cast<size_t>(2 * (nn * groups + g))];
                    const double rstd = n.saved[static_cast<size_t>(2 * (nn * groups + g) + 1)];
                    const int64_t base = (nn * c_n + g * cpg) * sp;
                    if (gg || gb) {
                        for (int64_t cc = 0; cc < cpg; ++cc) {
                            const int64_t c = g * cpg + cc;
                            double sg = 0.0, sb = 0.0;
                            for (int64_t i = 0; i < sp; ++i) {
                                const int64_t j = base + cc * sp + i;
                                const double xhat = (xp[j] - mean) * rstd;
                                sg += gy[j] * xhat;
                                sb += gy[j];
                            }
                            if (gg) gg[c] += sg;
                            if (gb) gb[c] += sb;
                        }
                    }
                    if (gx) {
                        double s1 = 0.0, s2 = 0.0;
                        for (int64_t cc = 0; cc < cpg; ++cc) {
                            const int64_t c = g * cpg + cc;
                            for (int64_t i = 0; i < sp; ++i) {
                                const int64_t j = base + cc * sp + i;
                                const double gi = gy[j] * gp[c];
                                s1 += gi;
                                s2 += gi * (xp[j] - mean) * rstd;
                            }
                        }
                        const double inv_m = 1.0 / static_cast<double>(m);
                        for (int64_t cc = 0; cc < cpg; ++cc) {
                            const int64_t c = g * cpg + cc;
                            for (int64_t i = 0; i < sp; ++i) {
                                const int64_t j = base + cc * sp + i;
                                const double xhat = (xp[j] - mean) * rstd;
                                gx[j] += rstd * (gy[j] * gp[c] - s1 * inv_m - xhat * s2 * inv_m);
                            }
                        }
                    }
                }
            }
            return;
        }
        case Op::Silu: {
            if (!want(0)) return;
            const Tensor& x = in(0).value;
            const double* xp = x.data().data();
            double* gx = gbuf(0);
            for (int64_t i = 0; i < x.numel(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-xp[i]));
                gx[i] += gy[i] * s * (1.0 + xp[i] * (1.0 - s));
            }
            return;
        }
        case Op::Add: {
            for (size_t k2 = 0; k2 < 2; ++k2) {
                if (!want(k2)) continue;
                double* g = gbuf(k2);
                for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i];
            }
            return;
        }
        case Op::Mul: {
            const double* a = in(0).value.data().data();
            const double* b = in(1).value.data().data();
            if (want(0)) {
                double* g = gbuf(0);
                for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i] * b[i];
            }
            if (want(1)) {
                double* g = gbuf(1);
                for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i] * a[i];
            }
            return;
        }
        case Op::ChannelBias: {
            const Tensor& x = in(0).value;
            const int64_t n_n = x.dim(0), c_n = x.dim(1), sp = x.numel() / (x.dim(0) * x.dim(1));
            if (want(0)) {
                double* g = gbuf(0);
                for (int64_t i = 0; i < x.numel(); ++i) g[i] += gy[i];
            }
            if (want(1)) {
                double* g = gbuf(1);
                for (int64_t nn = 0; nn < n_n; ++nn)
                    for (int64_t c = 0; c < c_n; ++c) {
                        const int64_t off = (nn * c_n + c) * sp;
                        double acc = 0.0;
                        for (int64_t i = 0; i < sp; ++i) acc += gy[off + i];
                        g[c] += acc;
                    }
            }
            return;
        }
        case Op::Scale: {
            if (!want(0)) return;
            double* g = gbuf(0);
            for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i] * n.attrs.scalar;
            return;
        }
        case Op::Shift: {
            if (!want(0)) return;
            double* g = gbuf(0);
            for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i];
            return;
        }
        case Op::ConcatChannels: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            const int64_t n_n = a.dim(0);
            const int64_t sp = a.numel() / (a.dim(0) * a.dim(1));
            const int64_t a_blk = a.dim(1) * sp, b_blk = b.dim(1) * sp;
            if (want(0)) {
                double* g = gbuf(0);
                for (int64_t nn = 0; nn < n_n; ++nn)
                    for (int64_t i = 0; i < a_blk; ++i)
                        g[nn * a_blk + i] += gy[nn * (a_blk + b_blk) + i];
            }
            if (want(1)) {
                double* g = gbuf(1);
                for (int64_t nn = 0; nn < n_n; ++nn)
                    for (int64_t i = 0; i < b_blk; ++i)
                        g[nn * b_blk + i] += gy[nn * (a_blk + b_blk) + a_blk + i];
            }
            return;
        }
        case Op::SoftmaxLastDim: {
            if (!want(0)) return;
            const int64_t l = n.value.shape().back();
            const int64_t rows = n.value.numel() / l;
            const double* y = n.value.data().data();
            double* g = gbuf(0);
            for (int64_t r = 0; r < rows; ++r) {
                const double* yr = y + r * l;
                const double* gr = gy + r * l;
                double dot = 0.0;
                for (int64_t i = 0; i < l; ++i) dot += yr[i] * gr[i];
                for (int64_t i = 0; i < l; ++i) g[r * l + i] += yr[i] * (gr[i] - dot);
            }
            return;
        }
        case Op::Bmm: {
            const Tensor& a = in(0).value;
            const Tensor& b = in(1).value;
            const int64_t bn = a.dim(0), m = a.dim(1), kk = a.dim(2), nn2 = b.dim(2);
            const double* ap = a.data().data();
            const double* bp = b.data().data();
            if (want(0)) {
                double* g = gbuf(0);
                for (int64_t bi = 0; bi < bn; ++bi)
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t k2 = 0; k2 < kk; ++k2) {
                            const double* brow = bp + bi * kk * nn2 + k2 * nn2;
                            const double* grow = gy + bi * m * nn2 + i * nn2;
                            double acc = 0.0;
                            for (int64_t j = 0; j < nn2; ++j) acc += grow[j] * brow[j];
                            g[bi * m * kk + i * kk + k2] += acc;
                        }
            }
            if (want(1)) {
                double* g = gbuf(1);
                for (int64_t bi = 0; bi < bn; ++bi)
                    for (int64_t k2 = 0; k2 < kk; ++k2)
                        for (int64_t i = 0; i < m; ++i) {
                            const double av2 = ap[bi * m * kk + i * kk + k2];
                            if (av2 == 0.0) continue;
                            const double* grow = gy + bi * m * nn2 + i * nn2;
                            double* gbrow = g + bi * kk * nn2 + k2 * nn2;
                            for (int64_t j = 0; j < nn2; ++j) gbrow[j] += av2 * grow[j];
                        }
            }
            return;
        }
        case Op::MeanAll: {
            if (!want(0)) return;
            const int64_t m = in(0).value.numel();
            const double gv = gy[0] / static_cast<double>(m);
            double* g = gbuf(0);
            for (int64_t i = 0; i < m; ++i) g[i] += gv;
            return;
        }
        case Op::SumAll: {
            if (!want(0)) return;
            const int64_t m = in(0).value.numel();
            double* g = gbuf(0);
            for (int64_t i = 0; i < m; ++i) g[i] += gy[0];
            return;
        }
        case Op::AbsVal: {
            if (!want(0)) return;
            const double* xp = in(0).value.data().data();
            double* g = gbuf(0);
            for (int64_t i = 0; i < n.value.numel(); ++i) {
                const double s = xp[i] > 0.0 ? 1.0 : (xp[i] < 0.0 ? -1.0 : 0.0);
                g[i] += gy[i] * s;
            }
            return;
        }
        case Op::Square: {
            if (!want(0)) return;
            const double* xp = in(0).value.data().data();
            double* g = gbuf(0);
            for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i] * 2.0 * xp[i];
            return;
        }
        case Op::Reshape: {
            if (!want(0)) return;
            double* g = gbuf(0);
            for (int64_t i = 0; i < n.value.numel(); ++i) g[i] += gy[i];
            return;
        }
        case Op::Permute: {
            if (!want(0)) return;
            const Tensor& x = in(0).value;
            const int64_t nd = x.ndim();
            const auto& perm = n.attrs.perm;
            std::vector<int64_t> src_strides(static_cast<size_t>(nd), 1);
            for (int64_t i = nd - 2; i >= 0; --i)
                src_strides[static_cast<size_t>(i)] = src_strides[static_cast<size_t>(i + 1)] * x.dim(i + 1);
            std::vector<int64_t> strides(static_cast<size_t>(nd));
            for (int64_t i = 0; i < nd; ++i)
                strides[static_cast<size_t>(i)] =
                    src_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];
            double* g = gbuf(0);
            const Shape& os = n.value.shape();
            std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
            for (int64_t flat = 0; flat < n.value.numel(); ++flat) {
                int64_t src = 0;
                for (int64_t i = 0; i < nd; ++i)
                    src += idx[static_cast<size_t>(i)] * strides[static_cast<size_t>(i)];
                g[src] += gy[flat];
                for (int64_t i = nd - 1; i >= 0; --i) {
                    if (++idx[static_cast<size_t>(i)] < os[static_cast<size_t>(i)]) break;
                    idx[static_cast<size_t>(i)] = 0;
                }
            }
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// gradient_check
// ---------------------------------------------------------------------------

GradCheckReport gradient_check(const ScalarFn& f, const AnalyticGradFn& analytic,
                               const std::vector<Tensor>& point, double h, double tol) {
    GradCheckReport rep;
    if (h <= 0.0) throw std::invalid_argument("gradient_check: h must be positive");
    std::vector<std::vector<double>> grads = analytic(point);
    if (grads.size() != point.size())
        throw std::invalid_argument("gradient_check: analytic gradient count mismatch");

    std::vector<Tensor> work = point;
    for (size_t i = 0; i < work.size(); ++i) {
        auto data = work[i].mutable_data();
        for (int64_t j = 0; j < work[i].numel(); ++j) {
            const double orig = data[static_cast<size_t>(j)];
            data[static_cast<size_t>(j)] = orig + h;
            const double fp = f(work);
            data[static_cast<size_t>(j)] = orig - h;
            const double fm = f(work);
            data[static_cast<size_t>(j)] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic_v = grads[i][static_cast<size_t>(j)];
            if (!std::isfinite(numeric) || !std::isfinite(analytic_v)) {
                rep.finite = false;
                rep.pass = false;
                rep.worst_input = static_cast<int>(i);
                rep.worst_coord = j;
                rep.message = "non-finite gradient at input " + std::to_string(i) + " coord " +
                              std::to_string(j);
                return rep;
            }
            const double rel = std::fabs(analytic_v - numeric) / std::max(1.0, std::fabs(numeric));
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_input = static_cast<int>(i);
                rep.worst_coord = j;
            }
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    return rep;
}

GradCheckReport gradient_check(const GraphFn& fn, const std::vector<Tensor>& point, double h,
                               double tol) {
    ScalarFn f = [&fn](const std::vector<Tensor>& p) {
        Graph g;
        std::vector<Value> leaves;
        leaves.reserve(p.size());
        for (const Tensor& t : p) {
            Tensor c = t;
            c.requires_grad = false;
            leaves.push_back(g.leaf(std::move(c)));
        }
        return g.value(fn(g, leaves)).item();
    };
    AnalyticGradFn a = [&fn](const std::vector<Tensor>& p) {
        Graph g;
        std::vector<Value> leaves;
        leaves.reserve(p.size());
        for (const Tensor& t : p) {
            Tensor c = t;
            c.requires_grad = true;
            leaves.push_back(g.leaf(std::move(c)));
        }
        Value out = fn(g, leaves);
        g.backward(out);
        std::vector<std::vector<double>> grads;
        grads.reserve(leaves.size());
        for (Value v : leaves) {
            auto s = g.grad(v);
            grads.emplace_back(s.begin(), s.end());
        }
        return grads;
    };
    return gradient_check(f, a, point, h, tol);
}

}  // namespace ficd::ad
