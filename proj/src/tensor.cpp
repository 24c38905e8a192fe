#include "pf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pf {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw Error("tensor: shape extents must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::size_t flat_index(const std::vector<int>& shape, std::initializer_list<int> idx) {
    if (idx.size() != shape.size()) throw Error("flat_index: rank mismatch");
    std::size_t f = 0;
    int axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[axis]) throw Error("flat_index: out of range");
        f = f * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return f;
}

TensorPtr Tensor::leaf(std::vector<int> shape, double fill, bool needs_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.assign(numel(t->shape), fill);
    t->grad.assign(t->values.size(), 0.0);
    t->needs_grad = needs_grad;
    return t;
}

TensorPtr Tensor::leaf(std::vector<int> shape, std::vector<double> values, bool needs_grad) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    if (values.size() != numel(t->shape)) throw Error("tensor: value count does not match shape");
    t->values = std::move(values);
    t->grad.assign(t->values.size(), 0.0);
    t->needs_grad = needs_grad;
    return t;
}

TensorPtr Tensor::scalar(double v) { return leaf({}, {v}, false); }

TensorPtr Tensor::random_uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                                 bool needs_grad) {
    auto t = leaf(std::move(shape), 0.0, needs_grad);
    for (double& v : t->values) v = rng.uniform(lo, hi);
    return t;
}

double Tensor::item() const {
    if (values.size() != 1) throw Error("Tensor::item: tensor is not a scalar");
    return values[0];
}

static TensorPtr make_node(std::vector<int> shape, std::vector<TensorPtr> parents) {
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values.assign(numel(t->shape), 0.0);
    t->grad.assign(t->values.size(), 0.0);
    for (const auto& p : parents)
        if (p->needs_grad) t->needs_grad = true;
    t->parents = std::move(parents);
    return t;
}

// ---- elementwise ----

enum class EwKind { Add, Sub, Mul, Div };

static TensorPtr elementwise(EwKind kind, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw Error("elementwise: shape mismatch");
    auto out = make_node(a->shape, {a, b});
    const std::size_t n = out->size();
    for (std::size_t i = 0; i < n; ++i) {
        double x = a->values[i], y = b->values[i];
        switch (kind) {
            case EwKind::Add: out->values[i] = x + y; break;
            case EwKind::Sub: out->values[i] = x - y; break;
            case EwKind::Mul: out->values[i] = x * y; break;
            case EwKind::Div: out->values[i] = x / y; break;
        }
    }
    out->pull = [kind](const Tensor& self) {
        Tensor& a = *self.parents[0];
        Tensor& b = *self.parents[1];
        const std::size_t n = self.size();
        for (std::size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            if (g == 0.0) continue;
            switch (kind) {
                case EwKind::Add:
                    if (a.needs_grad) a.grad[i] += g;
                    if (b.needs_grad) b.grad[i] += g;
                    break;
                case EwKind::Sub:
                    if (a.needs_grad) a.grad[i] += g;
                    if (b.needs_grad) b.grad[i] -= g;
                    break;
                case EwKind::Mul:
                    if (a.needs_grad) a.grad[i] += g * b.values[i];
                    if (b.needs_grad) b.grad[i] += g * a.values[i];
                    break;
                case EwKind::Div:
                    if (a.needs_grad) a.grad[i] += g / b.values[i];
                    if (b.needs_grad) b.grad[i] -= g * a.values[i] / (b.values[i] * b.values[i]);
                    break;
            }
        }
    };
    return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Add, a, b); }
TensorPtr sub(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Sub, a, b); }
TensorPtr mul(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Mul, a, b); }
TensorPtr div(const TensorPtr& a, const TensorPtr& b) { return elementwise(EwKind::Div, a, b); }

static TensorPtr scalar_map(const TensorPtr& a, double (*fwd)(double, double), double s,
                            double (*dfdx)(double, double)) {
    auto out = make_node(a->shape, {a});
    const std::size_t n = out->size();
    for (std::size_t i = 0; i < n; ++i) out->values[i] = fwd(a->values[i], s);
    out->pull = [s, dfdx](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i)
            a.grad[i] += self.grad[i] * dfdx(a.values[i], s);
    };
    return out;
}

TensorPtr add(const TensorPtr& a, double s) {
    return scalar_map(a, [](double x, double c) { return x + c; }, s,
                      [](double, double) { return 1.0; });
}
TensorPtr sub(const TensorPtr& a, double s) { return add(a, -s); }
TensorPtr mul(const TensorPtr& a, double s) {
    return scalar_map(a, [](double x, double c) { return x * c; }, s,
                      [](double, double c) { return c; });
}
TensorPtr div(const TensorPtr& a, double s) {
    if (s == 0.0) throw Error("div: scalar divisor is zero");
    return mul(a, 1.0 / s);
}
TensorPtr neg(const TensorPtr& a) { return mul(a, -1.0); }

TensorPtr sqrt_op(const TensorPtr& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = std::sqrt(a->values[i]);
    out->pull = [](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i)
            a.grad[i] += self.grad[i] * 0.5 / self.values[i];
    };
    return out;
}

TensorPtr log_op(const TensorPtr& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = std::log(a->values[i]);
    out->pull = [](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i] / a.values[i];
    };
    return out;
}

TensorPtr clamp(const TensorPtr& a, double lo, double hi) {
    if (!(lo <= hi)) throw Error("clamp: lo must not exceed hi");
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = std::min(hi, std::max(lo, a->values[i]));
    out->pull = [lo, hi](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i)
            if (a.values[i] > lo && a.values[i] < hi) a.grad[i] += self.grad[i];
    };
    return out;
}

TensorPtr leaky_relu(const TensorPtr& a, double slope) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->size(); ++i) {
        double x = a->values[i];
        out->values[i] = x > 0.0 ? x : slope * x;
    }
    out->pull = [slope](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i)
            a.grad[i] += self.grad[i] * (a.values[i] > 0.0 ? 1.0 : slope);
    };
    return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
    auto out = make_node(a->shape, {a});
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = 1.0 / (1.0 + std::exp(-a->values[i]));
    out->pull = [](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i) {
            double s = self.values[i];
            a.grad[i] += self.grad[i] * s * (1.0 - s);
        }
    };
    return out;
}

// Lines along `axis` get a max-subtracted softmax each.
TensorPtr softmax(const TensorPtr& a, int axis) {
    const int rank = static_cast<int>(a->shape.size());
    if (axis < 0 || axis >= rank) throw Error("softmax: axis out of range");
    auto out = make_node(a->shape, {a});

    std::size_t inner = 1, outer = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a->shape[d]);
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a->shape[d]);
    const std::size_t len = static_cast<std::size_t>(a->shape[axis]);

    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double m = a->values[base];
            for (std::size_t j = 1; j < len; ++j)
                m = std::max(m, a->values[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                double e = std::exp(a->values[base + j * inner] - m);
                out->values[base + j * inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < len; ++j) out->values[base + j * inner] /= sum;
        }
    }

    out->pull = [inner, outer, len](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t f = base + j * inner;
                    dot += self.grad[f] * self.values[f];
                }
                for (std::size_t j = 0; j < len; ++j) {
                    std::size_t f = base + j * inner;
                    a.grad[f] += self.values[f] * (self.grad[f] - dot);
                }
            }
        }
    };
    return out;
}

// ---- convolution ----

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, int stride, int padding) {
    if (x->shape.size() != 3) throw Error("conv2d: input must be [C,H,W]");
    if (kernel->shape.size() != 4) throw Error("conv2d: kernel must be [Cout,Cin,kh,kw]");
    if (kernel->shape[1] != x->shape[0]) throw Error("conv2d: channel mismatch");
    if (stride < 1) throw Error("conv2d: stride must be >= 1");
    if (padding < 0) throw Error("conv2d: padding must be >= 0");

    const int Cin = x->shape[0], H = x->shape[1], W = x->shape[2];
    const int Cout = kernel->shape[0], kh = kernel->shape[2], kw = kernel->shape[3];
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw Error("conv2d: kernel larger than padded input");

    auto out = make_node({Cout, Ho, Wo}, {x, kernel});
    const double* xv = x->values.data();
    const double* kv = kernel->values.data();
    double* ov = out->values.data();

    for (int co = 0; co < Cout; ++co) {
        for (int ci = 0; ci < Cin; ++ci) {
            const double* kbase = kv + (static_cast<std::size_t>(co) * Cin + ci) * kh * kw;
            for (int r = 0; r < kh; ++r) {
                for (int ho = 0; ho < Ho; ++ho) {
                    const int hi = ho * stride - padding + r;
                    if (hi < 0 || hi >= H) continue;
                    const double* xrow = xv + (static_cast<std::size_t>(ci) * H + hi) * W;
                    double* orow = ov + (static_cast<std::size_t>(co) * Ho + ho) * Wo;
                    for (int s = 0; s < kw; ++s) {
                        const double kval = kbase[r * kw + s];
                        if (kval == 0.0) continue;
                        int wo = 0;
                        while (wo < Wo && wo * stride - padding + s < 0) ++wo;
                        for (; wo < Wo; ++wo) {
                            const int wi = wo * stride - padding + s;
                            if (wi >= W) break;
                            orow[wo] += kval * xrow[wi];
                        }
                    }
                }
            }
        }
    }

    out->pull = [stride, padding, Cin, H, W, Cout, kh, kw, Ho, Wo](const Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& k = *self.parents[1];
        const double* gv = self.grad.data();
        const double* xv = x.values.data();
        const double* kv = k.values.data();
        const bool gx = x.needs_grad, gk = k.needs_grad;
        if (!gx && !gk) return;
        for (int co = 0; co < Cout; ++co) {
            for (int ci = 0; ci < Cin; ++ci) {
                const std::size_t kbase = (static_cast<std::size_t>(co) * Cin + ci) * kh * kw;
                for (int r = 0; r < kh; ++r) {
                    for (int ho = 0; ho < Ho; ++ho) {
                        const int hi = ho * stride - padding + r;
                        if (hi < 0 || hi >= H) continue;
                        const std::size_t xrow = (static_cast<std::size_t>(ci) * H + hi) * W;
                        const double* grow = gv + (static_cast<std::size_t>(co) * Ho + ho) * Wo;
                        for (int s = 0; s < kw; ++s) {
                            const std::size_t kf = kbase + r * kw + s;
                            double dk_acc = 0.0;
                            int wo = 0;
                            while (wo < Wo && wo * stride - padding + s < 0) ++wo;
                            for (; wo < Wo; ++wo) {
                                const int wi = wo * stride - padding + s;
                                if (wi >= W) break;
                                const double g = grow[wo];
                                if (g == 0.0) continue;
                                if (gx) x.grad[xrow + wi] += kv[kf] * g;
                                if (gk) dk_acc += xv[xrow + wi] * g;
                            }
                            if (gk) k.grad[kf] += dk_acc;
                        }
                    }
                }
            }
        }
    };
    return out;
}

TensorPtr channel_bias(const TensorPtr& x, const TensorPtr& bias) {
    if (x->shape.size() != 3) throw Error("channel_bias: input must be [C,H,W]");
    if (bias->shape.size() != 1 || bias->shape[0] != x->shape[0])
        throw Error("channel_bias: bias must be [C]");
    const int C = x->shape[0];
    const std::size_t hw = static_cast<std::size_t>(x->shape[1]) * x->shape[2];
    auto out = make_node(x->shape, {x, bias});
    for (int c = 0; c < C; ++c) {
        const double b = bias->values[c];
        for (std::size_t i = 0; i < hw; ++i) out->values[c * hw + i] = x->values[c * hw + i] + b;
    }
    out->pull = [C, hw](const Tensor& self) {
        Tensor& x = *self.parents[0];
        Tensor& b = *self.parents[1];
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
                double g = self.grad[c * hw + i];
                if (x.needs_grad) x.grad[c * hw + i] += g;
                acc += g;
            }
            if (b.needs_grad) b.grad[c] += acc;
        }
    };
    return out;
}

// ---- shape ops ----

TensorPtr reshape(const TensorPtr& a, std::vector<int> shape) {
    if (numel(shape) != a->size()) throw Error("reshape: element count mismatch");
    auto out = make_node(std::move(shape), {a});
    out->values = a->values;
    out->pull = [](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t i = 0; i < self.size(); ++i) a.grad[i] += self.grad[i];
    };
    return out;
}

static std::vector<std::size_t> row_major_strides(const std::vector<int>& shape) {
    std::vector<std::size_t> st(shape.size(), 1);
    for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d)
        st[d] = st[d + 1] * static_cast<std::size_t>(shape[d + 1]);
    return st;
}

TensorPtr permute(const TensorPtr& a, const std::vector<int>& axes) {
    const int rank = static_cast<int>(a->shape.size());
    if (static_cast<int>(axes.size()) != rank) throw Error("permute: axes rank mismatch");
    std::vector<bool> seen(rank, false);
    for (int ax : axes) {
        if (ax < 0 || ax >= rank || seen[ax]) throw Error("permute: invalid axes");
        seen[ax] = true;
    }
    std::vector<int> oshape(rank);
    for (int d = 0; d < rank; ++d) oshape[d] = a->shape[axes[d]];
    auto out = make_node(oshape, {a});

    const auto in_st = row_major_strides(a->shape);
    const auto out_st = row_major_strides(oshape);
    // map: out flat -> in flat
    std::vector<std::size_t> src(out->size());
    for (std::size_t of = 0; of < out->size(); ++of) {
        std::size_t rem = of, inf = 0;
        for (int d = 0; d < rank; ++d) {
            std::size_t i = rem / out_st[d];
            rem %= out_st[d];
            inf += i * in_st[axes[d]];
        }
        src[of] = inf;
        out->values[of] = a->values[inf];
    }
    out->pull = [src](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t of = 0; of < self.size(); ++of) a.grad[src[of]] += self.grad[of];
    };
    return out;
}

TensorPtr slice(const TensorPtr& a, int axis, int start, int len) {
    const int rank = static_cast<int>(a->shape.size());
    if (axis < 0 || axis >= rank) throw Error("slice: axis out of range");
    if (start < 0 || len <= 0 || start + len > a->shape[axis]) throw Error("slice: range out of bounds");

    std::vector<int> oshape = a->shape;
    oshape[axis] = len;
    auto out = make_node(oshape, {a});

    std::size_t inner = 1, outer = 1;
    for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(a->shape[d]);
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a->shape[d]);
    const std::size_t alen = static_cast<std::size_t>(a->shape[axis]);

    for (std::size_t o = 0; o < outer; ++o)
        for (int j = 0; j < len; ++j)
            std::copy_n(a->values.begin() + (o * alen + start + j) * inner, inner,
                        out->values.begin() + (o * static_cast<std::size_t>(len) + j) * inner);

    out->pull = [axis, start, len, inner, outer, alen](const Tensor& self) {
        Tensor& a = *self.parents[0];
        if (!a.needs_grad) return;
        for (std::size_t o = 0; o < outer; ++o)
            for (int j = 0; j < len; ++j) {
                const std::size_t src = (o * static_cast<std::size_t>(len) + j) * inner;
                const std::size_t dst = (o * alen + start + j) * inner;
                for (std::size_t i = 0; i < inner; ++i) a.grad[dst + i] += self.grad[src + i];
            }
    };
    return out;
}

// ---- reductions ----

TensorPtr reduce(const TensorPtr& a, ReduceKind kind, const std::vector<int>& axes) {
    const int rank = static_cast<int>(a->shape.size());
    if (axes.empty()) throw Error("reduce: empty reduction");
    std::vector<bool> reduced(rank, false);
    for (int ax : axes) {
        if (ax < 0 || ax >= rank) throw Error("reduce: axis out of range");
        if (reduced[ax]) throw Error("reduce: duplicate axis");
        reduced[ax] = true;
    }

    std::vector<int> oshape;
    std::size_t group = 1;
    for (int d = 0; d < rank; ++d) {
        if (reduced[d])
            group *= static_cast<std::size_t>(a->shape[d]);
        else
            oshape.push_back(a->shape[d]);
    }

    auto out = make_node(oshape, {a});
    const auto in_st = row_major_strides(a->shape);
    const auto out_st = row_major_strides(oshape);

    // in flat -> out flat
    std::vector<std::size_t> omap(a->size());
    for (std::size_t f = 0; f < a->size(); ++f) {
        std::size_t rem = f, of = 0;
        int od = 0;
        for (int d = 0; d < rank; ++d) {
            std::size_t i = rem / in_st[d];
            rem %= in_st[d];
            if (!reduced[d]) of += i * out_st[od++];
        }
        omap[f] = of;
    }

    if (kind == ReduceKind::Max) {
        std::vector<std::size_t> argmax(out->size());
        std::vector<bool> init(out->size(), false);
        for (std::size_t f = 0; f < a->size(); ++f) {
            std::size_t of = omap[f];
            if (!init[of] || a->values[f] > out->values[of]) {
                out->values[of] = a->values[f];
                argmax[of] = f;
                init[of] = true;
            }
        }
        out->pull = [argmax](const Tensor& self) {
            Tensor& a = *self.parents[0];
            if (!a.needs_grad) return;
            for (std::size_t of = 0; of < self.size(); ++of) a.grad[argmax[of]] += self.grad[of];
        };
    } else {
        for (std::size_t f = 0; f < a->size(); ++f) out->values[omap[f]] += a->values[f];
        const double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(group) : 1.0;
        if (kind == ReduceKind::Mean)
            for (double& v : out->values) v *= scale;
        out->pull = [omap, scale](const Tensor& self) {
            Tensor& a = *self.parents[0];
            if (!a.needs_grad) return;
            for (std::size_t f = 0; f < a.size(); ++f) a.grad[f] += self.grad[omap[f]] * scale;
        };
    }
    return out;
}

static std::vector<int> all_axes(const TensorPtr& a) {
    std::vector<int> axes(a->shape.size());
    for (std::size_t d = 0; d < axes.size(); ++d) axes[d] = static_cast<int>(d);
    return axes;
}

TensorPtr reduce_sum(const TensorPtr& a) { return reduce(a, ReduceKind::Sum, all_axes(a)); }
TensorPtr reduce_mean(const TensorPtr& a) { return reduce(a, ReduceKind::Mean, all_axes(a)); }
TensorPtr reduce_max(const TensorPtr& a) { return reduce(a, ReduceKind::Max, all_axes(a)); }

// ---- backward ----

void backward(const TensorPtr& root) {
    if (root->size() != 1) throw Error("backward: root must be a scalar");

    // iterative post-order DFS: parents come before their consumers
    std::vector<Tensor*> topo;
    std::unordered_set<const Tensor*> visited;
    std::vector<std::pair<Tensor*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Tensor* p = node->parents[next++].get();
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Tensor* t : topo)
        if (!t->is_leaf()) t->zero_grad();
    root->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it)
        if ((*it)->pull) (*it)->pull(**it);
}

} // namespace pf
