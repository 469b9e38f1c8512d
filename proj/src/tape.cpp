#include "sagan/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sagan/common.hpp"

namespace sagan::ad {

void Node::accumulate(const Tensor& g) {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    const size_t n = grad.data.size();
    for (size_t i = 0; i < n; ++i) grad.data[i] += g.data[i];
}

Tensor& Node::grad_buffer() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
    return grad;
}

Var Tape::make(Tensor value, std::vector<Var> inputs,
               std::function<void(Node&)> backward_fn) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->inputs = std::move(inputs);
    for (Var in : node->inputs)
        if (in->requires_grad) node->requires_grad = true;
    if (node->requires_grad) node->backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
}

Var Tape::constant(Tensor t) {
    return make(std::move(t), {}, nullptr);
}

Var Tape::input(Tensor t, bool requires_grad) {
    auto node = std::make_unique<Node>();
    node->value = std::move(t);
    node->requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
}

Var Tape::param(Tensor* storage) {
    auto it = param_nodes_.find(storage);
    if (it != param_nodes_.end()) return it->second;
    Var node = input(*storage, true);
    param_nodes_.emplace(storage, node);
    return node;
}

const Tensor* Tape::grad_of(const Tensor* storage) const {
    auto it = param_nodes_.find(storage);
    if (it == param_nodes_.end()) return nullptr;
    if (it->second->grad.data.empty()) return nullptr;
    return &it->second->grad;
}

void Tape::backward(Var root) {
    if (root->value.numel() != 1)
        throw ShapeError("backward root must be a scalar");
    root->grad_buffer().data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (!node.requires_grad || node.grad.data.empty() || !node.backward_fn)
            continue;
        node.backward_fn(node);
    }
}

// ============================================================================
// Elementwise
// ============================================================================

namespace {

void check_same_shape(Var a, Var b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw ShapeError(std::string(op) + ": shape mismatch " +
                         a->value.shape_str() + " vs " + b->value.shape_str());
}

}  // namespace

Var Tape::add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad);
    });
}

Var Tape::sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
        if (n.inputs[1]->requires_grad) {
            Tensor& g = n.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var Tape::mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        Node *a = n.inputs[0], *b = n.inputs[1];
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buffer();
            for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * a->value[i];
        }
    });
}

Var Tape::scale(Var a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= s;
    return make(std::move(out), {a}, [s](Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += s * n.grad[i];
    });
}

Var Tape::add_scalar(Var a, double s) {
    Tensor out = a->value;
    for (auto& v : out.data) v += s;
    return make(std::move(out), {a}, [](Node& n) {
        n.inputs[0]->accumulate(n.grad);
    });
}

Var Tape::neg(Var a) { return scale(a, -1.0); }

Var Tape::abs(Var a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::abs(v);
    return make(std::move(out), {a}, [](Node& n) {
        Node* a = n.inputs[0];
        Tensor& g = a->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double x = a->value[i];
            double sign = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            g[i] += sign * n.grad[i];
        }
    });
}

Var Tape::square(Var a) {
    Tensor out = a->value;
    for (auto& v : out.data) v *= v;
    return make(std::move(out), {a}, [](Node& n) {
        Node* a = n.inputs[0];
        Tensor& g = a->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += 2.0 * a->value[i] * n.grad[i];
    });
}

Var Tape::sqrt(Var a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::sqrt(v);
    return make(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double y = n.value[i];
            if (y > 0.0) g[i] += 0.5 / y * n.grad[i];
        }
    });
}

Var Tape::tanh(Var a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = std::tanh(v);
    return make(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) {
            double y = n.value[i];
            g[i] += (1.0 - y * y) * n.grad[i];
        }
    });
}

Var Tape::relu(Var a) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return make(std::move(out), {a}, [](Node& n) {
        Node* a = n.inputs[0];
        Tensor& g = a->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i)
            if (a->value[i] > 0.0) g[i] += n.grad[i];
    });
}

Var Tape::leaky_relu(Var a, double slope) {
    Tensor out = a->value;
    for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
    return make(std::move(out), {a}, [slope](Node& n) {
        Node* a = n.inputs[0];
        Tensor& g = a->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i)
            g[i] += (a->value[i] > 0.0 ? 1.0 : slope) * n.grad[i];
    });
}

// ============================================================================
// Reductions / shaping
// ============================================================================

Var Tape::mean_all(Var a) {
    if (a->value.numel() == 0) throw ValueError("mean_all: empty tensor");
    double s = 0.0;
    for (double v : a->value.data) s += v;
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    return make(Tensor::scalar(s * inv), {a}, [inv](Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        const double go = n.grad[0] * inv;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var Tape::sum_all(Var a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    return make(Tensor::scalar(s), {a}, [](Node& n) {
        Tensor& g = n.inputs[0]->grad_buffer();
        const double go = n.grad[0];
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += go;
    });
}

Var Tape::row_sum(Var a) {
    if (a->value.rank() != 2) throw ShapeError("row_sum expects (N,M)");
    const int64_t n = a->value.dim(0), m = a->value.dim(1);
    Tensor out({n, 1});
    for (int64_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < m; ++j) s += a->value[i * m + j];
        out[i] = s;
    }
    return make(std::move(out), {a}, [n, m](Node& nd) {
        Tensor& g = nd.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < m; ++j) g[i * m + j] += nd.grad[i];
    });
}

Var Tape::reshape(Var a, std::vector<int64_t> shape) {
    Tensor out = a->value.reshaped(shape);
    return make(std::move(out), {a}, [](Node& n) {
        Tensor g = n.grad;
        g.shape = n.inputs[0]->value.shape;
        n.inputs[0]->accumulate(g);
    });
}

Var Tape::flatten_images(Var a) {
    const auto& s = a->value.shape;
    if (s.size() != 4) throw ShapeError("flatten_images expects NCHW");
    return reshape(a, {s[0], s[1] * s[2] * s[3]});
}

Var Tape::concat_cols(Var a, Var b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(0) != b->value.dim(0))
        throw ShapeError("concat_cols expects (N,P),(N,Q)");
    const int64_t n = a->value.dim(0), p = a->value.dim(1), q = b->value.dim(1);
    Tensor out({n, p + q});
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(&out[i * (p + q)], &a->value[i * p], sizeof(double) * static_cast<size_t>(p));
        std::memcpy(&out[i * (p + q) + p], &b->value[i * q], sizeof(double) * static_cast<size_t>(q));
    }
    return make(std::move(out), {a, b}, [n, p, q](Node& nd) {
        Node *a = nd.inputs[0], *b = nd.inputs[1];
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < p; ++j) g[i * p + j] += nd.grad[i * (p + q) + j];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < q; ++j) g[i * q + j] += nd.grad[i * (p + q) + p + j];
        }
    });
}

Var Tape::concat_channels(Var a, Var b) {
    const auto& sa = a->value.shape;
    const auto& sb = b->value.shape;
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ShapeError("concat_channels: incompatible shapes");
    const int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(&out[i * (ca + cb) * hw], &a->value[i * ca * hw],
                    sizeof(double) * static_cast<size_t>(ca * hw));
        std::memcpy(&out[(i * (ca + cb) + ca) * hw], &b->value[i * cb * hw],
                    sizeof(double) * static_cast<size_t>(cb * hw));
    }
    return make(std::move(out), {a, b}, [n, ca, cb, hw](Node& nd) {
        Node *a = nd.inputs[0], *b = nd.inputs[1];
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < ca * hw; ++j)
                    g[i * ca * hw + j] += nd.grad[i * (ca + cb) * hw + j];
        }
        if (b->requires_grad) {
            Tensor& g = b->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < cb * hw; ++j)
                    g[i * cb * hw + j] += nd.grad[(i * (ca + cb) + ca) * hw + j];
        }
    });
}

Var Tape::detach(Var a) {
    return constant(a->value);
}

Var Tape::tile_code(Var code, int64_t n, int64_t h, int64_t w) {
    if (code->value.rank() != 1) throw ShapeError("tile_code expects a vector");
    const int64_t d = code->value.dim(0);
    Tensor out({n, d, h, w});
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < d; ++c) {
            double v = code->value[c];
            double* dst = &out[(i * d + c) * h * w];
            for (int64_t k = 0; k < h * w; ++k) dst[k] = v;
        }
    return make(std::move(out), {code}, [n, d, h, w](Node& nd) {
        Tensor& g = nd.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < d; ++c) {
                const double* src = &nd.grad[(i * d + c) * h * w];
                double s = 0.0;
                for (int64_t k = 0; k < h * w; ++k) s += src[k];
                g[c] += s;
            }
    });
}

Var Tape::repeat_rows(Var code, int64_t n) {
    if (code->value.rank() != 1) throw ShapeError("repeat_rows expects a vector");
    const int64_t d = code->value.dim(0);
    Tensor out({n, d});
    for (int64_t i = 0; i < n; ++i)
        std::memcpy(&out[i * d], code->value.data.data(), sizeof(double) * static_cast<size_t>(d));
    return make(std::move(out), {code}, [n, d](Node& nd) {
        Tensor& g = nd.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < d; ++c) g[c] += nd.grad[i * d + c];
    });
}

Var Tape::mul_mask(Var a, Var mask) {
    const auto& sa = a->value.shape;
    const auto& sm = mask->value.shape;
    if (sa.size() != 4 || sm.size() != 4 || sm[1] != 1 || sa[0] != sm[0] ||
        sa[2] != sm[2] || sa[3] != sm[3])
        throw ShapeError("mul_mask: expects (N,C,H,W) and (N,1,H,W)");
    const int64_t n = sa[0], c = sa[1], hw = sa[2] * sa[3];
    Tensor out = a->value;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t ch = 0; ch < c; ++ch) {
            double* dst = &out[(i * c + ch) * hw];
            const double* m = &mask->value[i * hw];
            for (int64_t k = 0; k < hw; ++k) dst[k] *= m[k];
        }
    return make(std::move(out), {a, mask}, [n, c, hw](Node& nd) {
        Node *a = nd.inputs[0], *mask = nd.inputs[1];
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double* dst = &g[(i * c + ch) * hw];
                    const double* gm = &nd.grad[(i * c + ch) * hw];
                    const double* m = &mask->value[i * hw];
                    for (int64_t k = 0; k < hw; ++k) dst[k] += gm[k] * m[k];
                }
        }
        if (mask->requires_grad) {
            Tensor& g = mask->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* gm = &nd.grad[(i * c + ch) * hw];
                    const double* av = &a->value[(i * c + ch) * hw];
                    double* dst = &g[i * hw];
                    for (int64_t k = 0; k < hw; ++k) dst[k] += gm[k] * av[k];
                }
        }
    });
}

// ============================================================================
// Linear algebra / conv
// ============================================================================

Var Tape::matmul(Var a, Var w) {
    if (a->value.rank() != 2 || w->value.rank() != 2 || a->value.dim(1) != w->value.dim(0))
        throw ShapeError("matmul: incompatible shapes " + a->value.shape_str() +
                         " x " + w->value.shape_str());
    const int64_t n = a->value.dim(0), k = a->value.dim(1), m = w->value.dim(1);
    Tensor out({n, m});
    for (int64_t i = 0; i < n; ++i) {
        const double* arow = &a->value[i * k];
        double* orow = &out[i * m];
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* wrow = &w->value[kk * m];
            for (int64_t j = 0; j < m; ++j) orow[j] += av * wrow[j];
        }
    }
    return make(std::move(out), {a, w}, [n, k, m](Node& nd) {
        Node *a = nd.inputs[0], *w = nd.inputs[1];
        if (a->requires_grad) {
            Tensor& g = a->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double* wrow = &w->value[kk * m];
                    const double* grow = &nd.grad[i * m];
                    double s = 0.0;
                    for (int64_t j = 0; j < m; ++j) s += grow[j] * wrow[j];
                    g[i * k + kk] += s;
                }
        }
        if (w->requires_grad) {
            Tensor& g = w->grad_buffer();
            for (int64_t i = 0; i < n; ++i) {
                const double* arow = &a->value[i * k];
                const double* grow = &nd.grad[i * m];
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double av = arow[kk];
                    double* gw = &g[kk * m];
                    for (int64_t j = 0; j < m; ++j) gw[j] += av * grow[j];
                }
            }
        }
    });
}

Var Tape::add_rowvec(Var a, Var bias) {
    if (a->value.rank() != 2 || bias->value.rank() != 1 || a->value.dim(1) != bias->value.dim(0))
        throw ShapeError("add_rowvec: incompatible shapes");
    const int64_t n = a->value.dim(0), m = a->value.dim(1);
    Tensor out = a->value;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j) out[i * m + j] += bias->value[j];
    return make(std::move(out), {a, bias}, [n, m](Node& nd) {
        if (nd.inputs[0]->requires_grad) nd.inputs[0]->accumulate(nd.grad);
        if (nd.inputs[1]->requires_grad) {
            Tensor& g = nd.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < m; ++j) g[j] += nd.grad[i * m + j];
        }
    });
}

Var Tape::conv2d(Var x, Var w, Var bias, int stride, int pad) {
    const auto& xs = x->value.shape;
    const auto& ws = w->value.shape;
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw ShapeError("conv2d: incompatible shapes");
    if (bias->value.rank() != 1 || bias->value.dim(0) != ws[0])
        throw ShapeError("conv2d: bias length must equal out channels");
    const int64_t n = xs[0], ci = xs[1], h = xs[2], wd = xs[3];
    const int64_t co = ws[0], kh = ws[2], kw = ws[3];
    const int64_t oh = (h + 2 * pad - kh) / stride + 1;
    const int64_t ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("conv2d: output would be empty");

    Tensor out({n, co, oh, ow});
    const double* xd = x->value.data.data();
    const double* wv = w->value.data.data();
    const double* bv = bias->value.data.data();
    double* od = out.data.data();

    auto forward_item = [&](int64_t b) {
        for (int64_t c = 0; c < co; ++c) {
            double* oplane = od + (b * co + c) * oh * ow;
            for (int64_t i = 0; i < oh * ow; ++i) oplane[i] = bv[c];
            for (int64_t ic = 0; ic < ci; ++ic) {
                const double* iplane = xd + (b * ci + ic) * h * wd;
                const double* wk = wv + (c * ci + ic) * kh * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const double wval = wk[ky * kw + kx];
                        if (wval == 0.0) continue;
                        for (int64_t oy = 0; oy < oh; ++oy) {
                            const int64_t iy = oy * stride + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            // valid ox range for this kx
                            int64_t ox_lo = 0, ox_hi = ow;
                            while (ox_lo < ow && ox_lo * stride + kx - pad < 0) ++ox_lo;
                            while (ox_hi > ox_lo && (ox_hi - 1) * stride + kx - pad >= wd) --ox_hi;
                            double* orow = oplane + oy * ow;
                            const double* irow = iplane + iy * wd + (ox_lo * stride + kx - pad);
                            if (stride == 1) {
                                for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += wval * irow[ox - ox_lo];
                            } else {
                                for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                                    orow[ox] += wval * irow[(ox - ox_lo) * stride];
                            }
                        }
                    }
                }
            }
        }
    };
    parallel_for(n, forward_item);

    const int s = stride, p = pad;
    return make(std::move(out), {x, w, bias},
                [n, ci, h, wd, co, kh, kw, oh, ow, s, p](Node& nd) {
        Node *x = nd.inputs[0], *w = nd.inputs[1], *bias = nd.inputs[2];
        const double* go = nd.grad.data.data();
        const double* xd = x->value.data.data();
        const double* wv = w->value.data.data();

        if (bias->requires_grad) {
            Tensor& gb = bias->grad_buffer();
            for (int64_t b = 0; b < n; ++b)
                for (int64_t c = 0; c < co; ++c) {
                    const double* gplane = go + (b * co + c) * oh * ow;
                    double sum = 0.0;
                    for (int64_t i = 0; i < oh * ow; ++i) sum += gplane[i];
                    gb[c] += sum;
                }
        }

        if (x->requires_grad) {
            Tensor& gx = x->grad_buffer();
            double* gxd = gx.data.data();
            parallel_for(n, [&](int64_t b) {
                for (int64_t c = 0; c < co; ++c) {
                    const double* gplane = go + (b * co + c) * oh * ow;
                    for (int64_t ic = 0; ic < ci; ++ic) {
                        double* giplane = gxd + (b * ci + ic) * h * wd;
                        const double* wk = wv + (c * ci + ic) * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const double wval = wk[ky * kw + kx];
                                if (wval == 0.0) continue;
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    const int64_t iy = oy * s + ky - p;
                                    if (iy < 0 || iy >= h) continue;
                                    const double* grow = gplane + oy * ow;
                                    for (int64_t ox = 0; ox < ow; ++ox) {
                                        const int64_t ix = ox * s + kx - p;
                                        if (ix < 0 || ix >= wd) continue;
                                        giplane[iy * wd + ix] += wval * grow[ox];
                                    }
                                }
                            }
                    }
                }
            });
        }

        if (w->requires_grad) {
            // Per-item buffers summed in item order keep the reduction
            // deterministic for any worker count.
            std::vector<Tensor> gw_items(static_cast<size_t>(n),
                                         Tensor::zeros(w->value.shape));
            parallel_for(n, [&](int64_t b) {
                Tensor& gw = gw_items[static_cast<size_t>(b)];
                for (int64_t c = 0; c < co; ++c) {
                    const double* gplane = go + (b * co + c) * oh * ow;
                    for (int64_t ic = 0; ic < ci; ++ic) {
                        const double* iplane = xd + (b * ci + ic) * h * wd;
                        double* gwk = gw.data.data() + (c * ci + ic) * kh * kw;
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                double sum = 0.0;
                                for (int64_t oy = 0; oy < oh; ++oy) {
                                    const int64_t iy = oy * s + ky - p;
                                    if (iy < 0 || iy >= h) continue;
                                    const double* grow = gplane + oy * ow;
                                    const double* irow = iplane + iy * wd;
                                    for (int64_t ox = 0; ox < ow; ++ox) {
                                        const int64_t ix = ox * s + kx - p;
                                        if (ix < 0 || ix >= wd) continue;
                                        sum += grow[ox] * irow[ix];
                                    }
                                }
                                gwk[ky * kw + kx] += sum;
                            }
                    }
                }
            });
            Tensor& gw = w->grad_buffer();
            for (int64_t b = 0; b < n; ++b) {
                const Tensor& gi = gw_items[static_cast<size_t>(b)];
                for (int64_t i = 0; i < gw.numel(); ++i) gw[i] += gi[i];
            }
        }
    });
}

Var Tape::upsample_nearest2(Var x) {
    const auto& xs = x->value.shape;
    if (xs.size() != 4) throw ShapeError("upsample_nearest2 expects NCHW");
    const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    Tensor out({n, c, 2 * h, 2 * w});
    for (int64_t i = 0; i < n * c; ++i) {
        const double* ip = &x->value[i * h * w];
        double* op = &out[i * 4 * h * w];
        for (int64_t y = 0; y < h; ++y)
            for (int64_t xx = 0; xx < w; ++xx) {
                double v = ip[y * w + xx];
                op[(2 * y) * 2 * w + 2 * xx] = v;
                op[(2 * y) * 2 * w + 2 * xx + 1] = v;
                op[(2 * y + 1) * 2 * w + 2 * xx] = v;
                op[(2 * y + 1) * 2 * w + 2 * xx + 1] = v;
            }
    }
    return make(std::move(out), {x}, [n, c, h, w](Node& nd) {
        Tensor& g = nd.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < n * c; ++i) {
            double* gp = &g[i * h * w];
            const double* gop = &nd.grad[i * 4 * h * w];
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx)
                    gp[y * w + xx] += gop[(2 * y) * 2 * w + 2 * xx] +
                                      gop[(2 * y) * 2 * w + 2 * xx + 1] +
                                      gop[(2 * y + 1) * 2 * w + 2 * xx] +
                                      gop[(2 * y + 1) * 2 * w + 2 * xx + 1];
        }
    });
}

// ============================================================================
// Geometry ops
// ============================================================================

namespace {

// Jacobian of the mapped source point w.r.t. one parameter row, chained with
// the incoming pixel-space gradients (g_px, g_py already include the
// normalized->pixel scale).
struct MappedPoint {
    double us, vs;      // normalized source coords
    double w;           // homography denominator (1 for affine)
};

MappedPoint map_point(geometry::TransformKind kind, const double* p,
                      double u0, double v0, const double* psi) {
    MappedPoint m{0, 0, 1};
    switch (kind) {
        case geometry::TransformKind::Affine:
            m.us = p[0] * u0 + p[1] * v0 + p[2];
            m.vs = p[3] * u0 + p[4] * v0 + p[5];
            return m;
        case geometry::TransformKind::Homography: {
            m.w = p[6] * u0 + p[7] * v0 + 1.0;
            m.us = (p[0] * u0 + p[1] * v0 + p[2]) / m.w;
            m.vs = (p[3] * u0 + p[4] * v0 + p[5]) / m.w;
            return m;
        }
        case geometry::TransformKind::Tps: {
            double du = 0.0, dv = 0.0;
            for (int k = 0; k < geometry::kTpsPoints; ++k) {
                du += psi[k] * p[2 * k];
                dv += psi[k] * p[2 * k + 1];
            }
            m.us = u0 + du;
            m.vs = v0 + dv;
            return m;
        }
    }
    throw ValueError("unknown transform kind");
}

void accumulate_param_grad(geometry::TransformKind kind, const double* p,
                           double u0, double v0, const MappedPoint& m,
                           double g_us, double g_vs, const double* psi,
                           double* gp) {
    switch (kind) {
        case geometry::TransformKind::Affine:
            gp[0] += g_us * u0;
            gp[1] += g_us * v0;
            gp[2] += g_us;
            gp[3] += g_vs * u0;
            gp[4] += g_vs * v0;
            gp[5] += g_vs;
            return;
        case geometry::TransformKind::Homography: {
            const double invw = 1.0 / m.w;
            gp[0] += g_us * u0 * invw;
            gp[1] += g_us * v0 * invw;
            gp[2] += g_us * invw;
            gp[3] += g_vs * u0 * invw;
            gp[4] += g_vs * v0 * invw;
            gp[5] += g_vs * invw;
            gp[6] += -(g_us * m.us + g_vs * m.vs) * u0 * invw;
            gp[7] += -(g_us * m.us + g_vs * m.vs) * v0 * invw;
            return;
        }
        case geometry::TransformKind::Tps:
            for (int k = 0; k < geometry::kTpsPoints; ++k) {
                gp[2 * k] += g_us * psi[k];
                gp[2 * k + 1] += g_vs * psi[k];
            }
            return;
    }
    (void)p;
}

}  // namespace

Var Tape::warp_by_transform(Var img, Var params, geometry::TransformKind kind,
                            int64_t out_h, int64_t out_w, double fill) {
    const auto& is = img->value.shape;
    const auto& ps = params->value.shape;
    const int np = geometry::param_count(kind);
    if (is.size() != 4) throw ShapeError("warp_by_transform expects NCHW image");
    if (ps.size() != 2 || ps[0] != is[0] || ps[1] != np)
        throw ShapeError("warp_by_transform: params must be (N," + std::to_string(np) + ")");
    const int64_t n = is[0], c = is[1], h = is[2], w = is[3];
    const double sx = static_cast<double>(w - 1) / 2.0;
    const double sy = static_cast<double>(h - 1) / 2.0;

    // Output meshgrid in normalized coords; TPS basis is shared by all items.
    std::vector<double> mesh_u(static_cast<size_t>(out_w)), mesh_v(static_cast<size_t>(out_h));
    for (int64_t j = 0; j < out_w; ++j)
        mesh_u[static_cast<size_t>(j)] = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(out_w - 1);
    for (int64_t i = 0; i < out_h; ++i)
        mesh_v[static_cast<size_t>(i)] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(out_h - 1);
    auto psi_table = std::make_shared<std::vector<double>>();
    if (kind == geometry::TransformKind::Tps) {
        psi_table->resize(static_cast<size_t>(out_h * out_w * geometry::kTpsPoints));
        for (int64_t i = 0; i < out_h; ++i)
            for (int64_t j = 0; j < out_w; ++j) {
                auto psi = geometry::tps_basis(mesh_u[static_cast<size_t>(j)], mesh_v[static_cast<size_t>(i)]);
                std::copy(psi.begin(), psi.end(),
                          psi_table->begin() + (i * out_w + j) * geometry::kTpsPoints);
            }
    }

    Tensor out({n, c, out_h, out_w});
    const double* id = img->value.data.data();
    const double* pd = params->value.data.data();
    double* od = out.data.data();
    auto forward_item = [&](int64_t b) {
        const double* prow = pd + b * np;
        for (int64_t i = 0; i < out_h; ++i)
            for (int64_t j = 0; j < out_w; ++j) {
                const double* psi = psi_table->empty()
                                        ? nullptr
                                        : psi_table->data() + (i * out_w + j) * geometry::kTpsPoints;
                MappedPoint m = map_point(kind, prow, mesh_u[static_cast<size_t>(j)],
                                          mesh_v[static_cast<size_t>(i)], psi);
                const double px = (m.us + 1.0) * sx;
                const double py = (m.vs + 1.0) * sy;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* plane = id + (b * c + ch) * h * w;
                    od[((b * c + ch) * out_h + i) * out_w + j] =
                        geometry::detail::bilinear_sample(plane, h, w, px, py, fill);
                }
            }
    };
    parallel_for(n, forward_item);

    return make(std::move(out), {img, params},
                [n, c, h, w, out_h, out_w, kind, np, fill, sx, sy,
                 mesh_u = std::move(mesh_u), mesh_v = std::move(mesh_v),
                 psi_table](Node& nd) {
        Node *img = nd.inputs[0], *params = nd.inputs[1];
        const double* id = img->value.data.data();
        const double* pd = params->value.data.data();
        const double* go = nd.grad.data.data();
        double* gx = nullptr;
        double* gp = nullptr;
        if (img->requires_grad) gx = img->grad_buffer().data.data();
        if (params->requires_grad) gp = params->grad_buffer().data.data();
        if (!gx && !gp) return;
        parallel_for(n, [&](int64_t b) {
            const double* prow = pd + b * np;
            double* gprow = gp ? gp + b * np : nullptr;
            for (int64_t i = 0; i < out_h; ++i)
                for (int64_t j = 0; j < out_w; ++j) {
                    const double* psi = (kind == geometry::TransformKind::Tps)
                                            ? psi_table->data() + (i * out_w + j) * geometry::kTpsPoints
                                            : nullptr;
                    MappedPoint m = map_point(kind, prow, mesh_u[static_cast<size_t>(j)],
                                              mesh_v[static_cast<size_t>(i)], psi);
                    const double px = (m.us + 1.0) * sx;
                    const double py = (m.vs + 1.0) * sy;
                    double g_px = 0.0, g_py = 0.0;
                    for (int64_t ch = 0; ch < c; ++ch) {
                        const double gout = go[((b * c + ch) * out_h + i) * out_w + j];
                        if (gout == 0.0) continue;
                        const double* plane = id + (b * c + ch) * h * w;
                        auto sg = geometry::detail::bilinear_sample_grad(plane, h, w, px, py, fill);
                        if (gx) {
                            double* gplane = gx + (b * c + ch) * h * w;
                            auto scatter = [&](int64_t x, int64_t y, double wgt) {
                                if (x >= 0 && x < w && y >= 0 && y < h)
                                    gplane[y * w + x] += wgt * gout;
                            };
                            scatter(sg.x0, sg.y0, sg.w00);
                            scatter(sg.x0 + 1, sg.y0, sg.w10);
                            scatter(sg.x0, sg.y0 + 1, sg.w01);
                            scatter(sg.x0 + 1, sg.y0 + 1, sg.w11);
                        }
                        g_px += sg.d_px * gout;
                        g_py += sg.d_py * gout;
                    }
                    if (gprow && (g_px != 0.0 || g_py != 0.0)) {
                        accumulate_param_grad(kind, prow, mesh_u[static_cast<size_t>(j)],
                                              mesh_v[static_cast<size_t>(i)], m,
                                              g_px * sx, g_py * sy, psi, gprow);
                    }
                }
        });
    });
}

Var Tape::invert_transform(Var params, geometry::TransformKind kind) {
    if (kind == geometry::TransformKind::Tps)
        throw UnsupportedKindError("invert_transform: tps not supported");
    const int np = geometry::param_count(kind);
    const auto& ps = params->value.shape;
    if (ps.size() != 2 || ps[1] != np)
        throw ShapeError("invert_transform: params must be (N,P)");
    const int64_t n = ps[0];
    Tensor out({n, np});
    for (int64_t b = 0; b < n; ++b) {
        std::vector<double> row(params->value.data.begin() + b * np,
                                params->value.data.begin() + (b + 1) * np);
        geometry::Transform inv = geometry::invert(geometry::Transform{kind, std::move(row)});
        std::copy(inv.params.begin(), inv.params.end(), out.data.begin() + b * np);
    }
    return make(std::move(out), {params}, [n, np, kind](Node& nd) {
        Node* params = nd.inputs[0];
        Tensor& gparams = params->grad_buffer();
        for (int64_t b = 0; b < n; ++b) {
            // A = forward matrix, B = A^-1 (true inverse), N = B / B33.
            std::vector<double> row(params->value.data.begin() + b * np,
                                    params->value.data.begin() + (b + 1) * np);
            geometry::Transform t{kind, row};
            auto a = geometry::as_matrix3(t);
            // true inverse
            double det = a[0] * (a[4] * a[8] - a[5] * a[7]) -
                         a[1] * (a[3] * a[8] - a[5] * a[6]) +
                         a[2] * (a[3] * a[7] - a[4] * a[6]);
            std::array<double, 9> adj = {
                a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8], a[1] * a[5] - a[2] * a[4],
                a[5] * a[6] - a[3] * a[8], a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
                a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7], a[0] * a[4] - a[1] * a[3]};
            std::array<double, 9> bm{};
            for (int i = 0; i < 9; ++i) bm[static_cast<size_t>(i)] = adj[static_cast<size_t>(i)] / det;
            const double b33 = bm[8];
            std::array<double, 9> nm{};
            for (int i = 0; i < 9; ++i) nm[static_cast<size_t>(i)] = bm[static_cast<size_t>(i)] / b33;
            // upstream gradient into 3x3 (pinned entry carries none)
            std::array<double, 9> g{};
            for (int i = 0; i < np; ++i) g[static_cast<size_t>(i)] = nd.grad[b * np + i];
            double s = 0.0;
            for (int i = 0; i < 9; ++i) s += g[static_cast<size_t>(i)] * nm[static_cast<size_t>(i)];
            // grad_A = -(1/B33) * B^T (G - s*E33) B^T
            std::array<double, 9> m = g;
            m[8] -= s;
            std::array<double, 9> bt{};
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) bt[static_cast<size_t>(i * 3 + j)] = bm[static_cast<size_t>(j * 3 + i)];
            auto mm = [&](const std::array<double, 9>& x, const std::array<double, 9>& y) {
                std::array<double, 9> r{};
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double acc = 0.0;
                        for (int k = 0; k < 3; ++k)
                            acc += x[static_cast<size_t>(i * 3 + k)] * y[static_cast<size_t>(k * 3 + j)];
                        r[static_cast<size_t>(i * 3 + j)] = acc;
                    }
                return r;
            };
            auto ga = mm(mm(bt, m), bt);
            const double scale = -1.0 / b33;
            for (int i = 0; i < np; ++i)
                gparams[b * np + i] += scale * ga[static_cast<size_t>(i)];
        }
    });
}

}  // namespace sagan::ad
