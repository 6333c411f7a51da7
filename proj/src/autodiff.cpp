#include "scribseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "scribseg/error.hpp"
#include "scribseg/kernels.hpp"

namespace scribseg::ad {

namespace {

std::size_t product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw ConfigError("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Var make(Tensor value, std::string op, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = std::move(op);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(backward);
    }
    return Var(std::move(n));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ConfigError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                          b.value().shape_string());
}

void require_rank4(const Var& a, const char* op) {
    if (a.value().rank() != 4) throw ConfigError(std::string(op) + ": expected an (N,C,H,W) tensor");
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), values_(product(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != product(shape_)) throw ConfigError("tensor value count does not match shape");
}

double Tensor::item() const {
    if (values_.size() != 1) throw ConfigError("item() on a tensor of shape " + shape_string());
    return values_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

std::string Tensor::shape_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << ')';
    return os.str();
}

Tensor& Node::grad_buffer() {
    if (grad.numel() != value.numel() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->op = "parameter";
    return Var(std::move(n));
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = "constant";
    return Var(std::move(n));
}

void backward(const Var& loss) {
    if (!loss) throw ConfigError("backward on an empty Var");
    if (loss.numel() != 1) throw ConfigError("backward needs a scalar loss, got shape " + loss.value().shape_string());
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS; parent order fixes the traversal order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->grad_buffer().fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.numel() != 0) n->backward(*n);
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make(std::move(out), "add", {a.node(), b.node()}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            Node& p = parent(self, k);
            if (!p.requires_grad) continue;
            auto& g = p.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make(std::move(out), "sub", {a.node(), b.node()}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make(std::move(out), "mul", {a.node(), b.node()}, [](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * s;
    return make(std::move(out), "scale", {a.node()}, [s](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + s;
    return make(std::move(out), "add_scalar", {a.node()}, [](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

Var mul_const(const Var& a, const Tensor& m) {
    if (!a.value().same_shape(m))
        throw ConfigError("mul_const: shape mismatch " + a.value().shape_string() + " vs " + m.shape_string());
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * m[i];
    return make(std::move(out), "mul_const", {a.node()}, [m](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * m[i];
    });
}

Var log(const Var& a, double eps) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(a.value()[i] + eps);
    return make(std::move(out), "log", {a.node()}, [eps](Node& self) {
        Node& p = parent(self, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] / (p.value[i] + eps);
    });
}

Var relu(const Var& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    return make(std::move(out), "relu", {a.node()}, [](Node& self) {
        Node& p = parent(self, 0);
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (p.value[i] > 0.0) g[i] += self.grad[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    return make(Tensor::scalar(s), "sum", {a.node()}, [](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        const double up = self.grad[0];
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up;
    });
}

Var dot(const Var& a, const Var& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.value()[i] * b.value()[i];
    return make(Tensor::scalar(s), "dot", {a.node(), b.node()}, [](Node& self) {
        const double up = self.grad[0];
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up * pb.value[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.grad_buffer();
            for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up * pa.value[i];
        }
    });
}

Var sum_items(const Var& a) {
    if (a.value().rank() < 1) throw ConfigError("sum_items on a rank-0 tensor");
    const int n = a.value().dim(0);
    const std::size_t per = a.numel() / static_cast<std::size_t>(n);
    Tensor out({n});
    for (int b = 0; b < n; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < per; ++i) s += a.value()[b * per + i];
        out[b] = s;
    }
    return make(std::move(out), "sum_items", {a.node()}, [n, per](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int b = 0; b < n; ++b)
            for (std::size_t i = 0; i < per; ++i) g[b * per + i] += self.grad[b];
    });
}

Var channel(const Var& a, int c) {
    require_rank4(a, "channel");
    const auto& s = a.shape();
    const int n = s[0], ch = s[1];
    if (c < 0 || c >= ch) throw ConfigError("channel index out of range");
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    Tensor out({n, 1, s[2], s[3]});
    for (int b = 0; b < n; ++b)
        std::copy_n(a.value().data() + (static_cast<std::size_t>(b) * ch + c) * plane, plane, out.data() + b * plane);
    return make(std::move(out), "channel", {a.node()}, [n, ch, c, plane](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int b = 0; b < n; ++b) {
            double* dst = g.data() + (static_cast<std::size_t>(b) * ch + c) * plane;
            const double* src = self.grad.data() + b * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) throw ConfigError("concat_channels: incompatible shapes");
    const int n = sa[0], ca = sa[1], cb = sb[1];
    const std::size_t plane = static_cast<std::size_t>(sa[2]) * sa[3];
    Tensor out({n, ca + cb, sa[2], sa[3]});
    for (int k = 0; k < n; ++k) {
        std::copy_n(a.value().data() + k * ca * plane, ca * plane, out.data() + k * (ca + cb) * plane);
        std::copy_n(b.value().data() + k * cb * plane, cb * plane, out.data() + (k * (ca + cb) + ca) * plane);
    }
    return make(std::move(out), "concat", {a.node(), b.node()}, [n, ca, cb, plane](Node& self) {
        Node& pa = parent(self, 0);
        Node& pb = parent(self, 1);
        for (int k = 0; k < n; ++k) {
            const double* g = self.grad.data() + k * (ca + cb) * plane;
            if (pa.requires_grad) {
                double* d = pa.grad_buffer().data() + k * ca * plane;
                for (std::size_t i = 0; i < ca * plane; ++i) d[i] += g[i];
            }
            if (pb.requires_grad) {
                double* d = pb.grad_buffer().data() + k * cb * plane;
                for (std::size_t i = 0; i < cb * plane; ++i) d[i] += g[ca * plane + i];
            }
        }
    });
}

Var softmax_channels(const Var& a) {
    require_rank4(a, "softmax_channels");
    const auto& s = a.shape();
    const int n = s[0], ch = s[1];
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    Tensor out(s);
    for (int b = 0; b < n; ++b) {
        const double* x = a.value().data() + static_cast<std::size_t>(b) * ch * plane;
        double* y = out.data() + static_cast<std::size_t>(b) * ch * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            double mx = x[p];
            for (int c = 1; c < ch; ++c) mx = std::max(mx, x[c * plane + p]);
            double z = 0.0;
            for (int c = 0; c < ch; ++c) {
                const double e = std::exp(x[c * plane + p] - mx);
                y[c * plane + p] = e;
                z += e;
            }
            for (int c = 0; c < ch; ++c) y[c * plane + p] /= z;
        }
    }
    return make(std::move(out), "softmax", {a.node()}, [n, ch, plane](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (int b = 0; b < n; ++b) {
            const double* y = self.value.data() + static_cast<std::size_t>(b) * ch * plane;
            const double* dy = self.grad.data() + static_cast<std::size_t>(b) * ch * plane;
            double* dx = g.data() + static_cast<std::size_t>(b) * ch * plane;
            for (std::size_t p = 0; p < plane; ++p) {
                double inner = 0.0;
                for (int c = 0; c < ch; ++c) inner += y[c * plane + p] * dy[c * plane + p];
                for (int c = 0; c < ch; ++c) dx[c * plane + p] += y[c * plane + p] * (dy[c * plane + p] - inner);
            }
        }
    });
}

Var cosine_distance_items(const Var& a, const Var& b, double eps) {
    require_same_shape(a, b, "cosine_distance_items");
    const int n = a.value().dim(0);
    const std::size_t per = a.numel() / static_cast<std::size_t>(n);
    struct Stats {
        double dot, na, nb;
    };
    std::vector<Stats> st(static_cast<std::size_t>(n));
    Tensor out({n});
    for (int k = 0; k < n; ++k) {
        const double* x = a.value().data() + k * per;
        const double* y = b.value().data() + k * per;
        double d = 0.0, xx = 0.0, yy = 0.0;
        for (std::size_t i = 0; i < per; ++i) {
            d += x[i] * y[i];
            xx += x[i] * x[i];
            yy += y[i] * y[i];
        }
        st[k] = {d, std::sqrt(xx), std::sqrt(yy)};
        out[k] = 1.0 - d / (st[k].na * st[k].nb + eps);
    }
    return make(std::move(out), "cosine_distance", {a.node(), b.node()}, [n, per, eps, st](Node& self) {
        // d/dx [d / (|x||y| + eps)] = y/D - d |y| x / (|x| D^2),  D = |x||y| + eps
        for (int side = 0; side < 2; ++side) {
            Node& p = parent(self, static_cast<std::size_t>(side));
            if (!p.requires_grad) continue;
            const Node& q = parent(self, static_cast<std::size_t>(1 - side));
            auto& g = p.grad_buffer();
            for (int k = 0; k < n; ++k) {
                const double nself = side == 0 ? st[k].na : st[k].nb;
                const double nother = side == 0 ? st[k].nb : st[k].na;
                if (nself == 0.0) continue;
                const double denom = st[k].na * st[k].nb + eps;
                const double up = -self.grad[k];
                const double c1 = up / denom;
                const double c2 = up * st[k].dot * nother / (nself * denom * denom);
                const double* x = p.value.data() + k * per;
                const double* y = q.value.data() + k * per;
                double* d = g.data() + k * per;
                for (std::size_t i = 0; i < per; ++i) d[i] += c1 * y[i] - c2 * x[i];
            }
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
    require_rank4(x, "conv2d");
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
        throw ConfigError("conv2d: weight " + weight.value().shape_string() + " incompatible with input " +
                          x.value().shape_string());
    if (bias.numel() != static_cast<std::size_t>(ws[0])) throw ConfigError("conv2d: bias size mismatch");
    const kernels::ConvShape s{xs[0], xs[1], ws[0], xs[2], xs[3], ws[2]};
    Tensor out({s.batch, s.out_channels, s.height, s.width});
    kernels::conv2d_forward(s, x.value().values(), weight.value().values(), bias.value().values(), out.values());
    return make(std::move(out), "conv2d", {x.node(), weight.node(), bias.node()}, [s](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        if (pw.requires_grad || pb.requires_grad)
            kernels::conv2d_backward_weight(s, px.value.values(), self.grad.values(), pw.grad_buffer().values(),
                                            pb.grad_buffer().values());
        if (px.requires_grad) {
            std::vector<double> dx(s.in_size());
            kernels::conv2d_backward_input(s, self.grad.values(), pw.value.values(), dx);
            auto& g = px.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) g[i] += dx[i];
        }
    });
}

Var upconv2x2(const Var& x, const Var& weight, const Var& bias) {
    require_rank4(x, "upconv2x2");
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (ws.size() != 4 || ws[0] != xs[1] || ws[2] != 2 || ws[3] != 2)
        throw ConfigError("upconv2x2: weight " + weight.value().shape_string() + " incompatible with input " +
                          x.value().shape_string());
    if (bias.numel() != static_cast<std::size_t>(ws[1])) throw ConfigError("upconv2x2: bias size mismatch");
    const kernels::ConvShape s{xs[0], xs[1], ws[1], xs[2], xs[3], 2};
    Tensor out({s.batch, s.out_channels, 2 * s.height, 2 * s.width});
    kernels::upconv2x2_forward(s, x.value().values(), weight.value().values(), bias.value().values(), out.values());
    return make(std::move(out), "upconv2x2", {x.node(), weight.node(), bias.node()}, [s](Node& self) {
        Node& px = parent(self, 0);
        Node& pw = parent(self, 1);
        Node& pb = parent(self, 2);
        std::vector<double> dx(s.in_size());
        kernels::upconv2x2_backward(s, px.value.values(), pw.value.values(), self.grad.values(), dx,
                                    pw.grad_buffer().values(), pb.grad_buffer().values());
        if (px.requires_grad) {
            auto& g = px.grad_buffer();
            for (std::size_t i = 0; i < dx.size(); ++i) g[i] += dx[i];
        }
    });
}

Var maxpool2(const Var& x) {
    require_rank4(x, "maxpool2");
    const auto& s = x.shape();
    if (s[2] % 2 || s[3] % 2) throw ConfigError("maxpool2: spatial dims must be even, got " + x.value().shape_string());
    const int planes = s[0] * s[1], h = s[2] / 2, w = s[3] / 2;
    Tensor out({s[0], s[1], h, w});
    std::vector<std::size_t> argmax(out.numel());
    const std::size_t in_plane = static_cast<std::size_t>(s[2]) * s[3];
    for (int pl = 0; pl < planes; ++pl)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                std::size_t best = pl * in_plane + static_cast<std::size_t>(2 * r) * s[3] + 2 * c;
                for (std::size_t cand : {best + 1, best + s[3], best + s[3] + 1})
                    if (x.value()[cand] > x.value()[best]) best = cand;
                const std::size_t o = (static_cast<std::size_t>(pl) * h + r) * w + c;
                out[o] = x.value()[best];
                argmax[o] = best;
            }
    return make(std::move(out), "maxpool2", {x.node()}, [argmax = std::move(argmax)](Node& self) {
        auto& g = parent(self, 0).grad_buffer();
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    require_rank4(x, "group_norm");
    const auto& s = x.shape();
    const int n = s[0], ch = s[1];
    if (groups <= 0 || ch % groups) throw ConfigError("group_norm: channels not divisible by groups");
    if (gamma.numel() != static_cast<std::size_t>(ch) || beta.numel() != static_cast<std::size_t>(ch))
        throw ConfigError("group_norm: affine parameter size mismatch");
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    const int cpg = ch / groups;
    const std::size_t gsize = cpg * plane;

    Tensor out(s);
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(static_cast<std::size_t>(n) * groups);
    for (int b = 0; b < n; ++b)
        for (int g = 0; g < groups; ++g) {
            const std::size_t base = (static_cast<std::size_t>(b) * ch + g * cpg) * plane;
            const double* xv = x.value().data() + base;
            double mean = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) mean += xv[i];
            mean /= static_cast<double>(gsize);
            double var = 0.0;
            for (std::size_t i = 0; i < gsize; ++i) var += (xv[i] - mean) * (xv[i] - mean);
            var /= static_cast<double>(gsize);
            const double r = 1.0 / std::sqrt(var + eps);
            rstd[b * groups + g] = r;
            for (int c = 0; c < cpg; ++c) {
                const int cc = g * cpg + c;
                for (std::size_t p = 0; p < plane; ++p) {
                    const std::size_t i = base + c * plane + p;
                    xhat[i] = (x.value()[i] - mean) * r;
                    out[i] = xhat[i] * gamma.value()[cc] + beta.value()[cc];
                }
            }
        }
    return make(std::move(out), "group_norm", {x.node(), gamma.node(), beta.node()},
                [n, ch, groups, cpg, plane, gsize, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                    Node& px = parent(self, 0);
                    Node& pg = parent(self, 1);
                    Node& pb = parent(self, 2);
                    const double* dy = self.grad.data();
                    if (pg.requires_grad || pb.requires_grad) {
                        auto& dg = pg.grad_buffer();
                        auto& db = pb.grad_buffer();
                        for (int b = 0; b < n; ++b)
                            for (int c = 0; c < ch; ++c) {
                                const std::size_t base = (static_cast<std::size_t>(b) * ch + c) * plane;
                                double sg = 0.0, sb = 0.0;
                                for (std::size_t p = 0; p < plane; ++p) {
                                    sg += dy[base + p] * xhat[base + p];
                                    sb += dy[base + p];
                                }
                                dg[c] += sg;
                                db[c] += sb;
                            }
                    }
                    if (!px.requires_grad) return;
                    auto& dx = px.grad_buffer();
                    const double* gm = pg.value.data();
                    for (int b = 0; b < n; ++b)
                        for (int g = 0; g < groups; ++g) {
                            const std::size_t base = (static_cast<std::size_t>(b) * ch + g * cpg) * plane;
                            double m1 = 0.0, m2 = 0.0;
                            for (int c = 0; c < cpg; ++c)
                                for (std::size_t p = 0; p < plane; ++p) {
                                    const std::size_t i = base + c * plane + p;
                                    const double dxh = dy[i] * gm[g * cpg + c];
                                    m1 += dxh;
                                    m2 += dxh * xhat[i];
                                }
                            m1 /= static_cast<double>(gsize);
                            m2 /= static_cast<double>(gsize);
                            const double r = rstd[b * groups + g];
                            for (int c = 0; c < cpg; ++c)
                                for (std::size_t p = 0; p < plane; ++p) {
                                    const std::size_t i = base + c * plane + p;
                                    const double dxh = dy[i] * gm[g * cpg + c];
                                    dx[i] += r * (dxh - m1 - xhat[i] * m2);
                                }
                        }
                });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, bool training, double eps) {
    require_rank4(x, "batch_norm");
    const auto& s = x.shape();
    const int n = s[0], ch = s[1];
    const std::size_t plane = static_cast<std::size_t>(s[2]) * s[3];
    const std::size_t count = plane * n;
    if (stats.running_mean.numel() != static_cast<std::size_t>(ch)) {
        stats.running_mean = Tensor({ch}, 0.0);
        stats.running_var = Tensor({ch}, 1.0);
    }

    std::vector<double> mean(ch), rstd(ch);
    for (int c = 0; c < ch; ++c) {
        if (training) {
            double m = 0.0;
            for (int b = 0; b < n; ++b)
                for (std::size_t p = 0; p < plane; ++p) m += x.value()[(static_cast<std::size_t>(b) * ch + c) * plane + p];
            m /= static_cast<double>(count);
            double v = 0.0;
            for (int b = 0; b < n; ++b)
                for (std::size_t p = 0; p < plane; ++p) {
                    const double d = x.value()[(static_cast<std::size_t>(b) * ch + c) * plane + p] - m;
                    v += d * d;
                }
            v /= static_cast<double>(count);
            mean[c] = m;
            rstd[c] = 1.0 / std::sqrt(v + eps);
            const double unbiased = count > 1 ? v * count / (count - 1) : v;
            stats.running_mean[c] = (1 - stats.momentum) * stats.running_mean[c] + stats.momentum * m;
            stats.running_var[c] = (1 - stats.momentum) * stats.running_var[c] + stats.momentum * unbiased;
        } else {
            mean[c] = stats.running_mean[c];
            rstd[c] = 1.0 / std::sqrt(stats.running_var[c] + eps);
        }
    }

    Tensor out(s);
    std::vector<double> xhat(x.numel());
    for (int b = 0; b < n; ++b)
        for (int c = 0; c < ch; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = (static_cast<std::size_t>(b) * ch + c) * plane + p;
                xhat[i] = (x.value()[i] - mean[c]) * rstd[c];
                out[i] = xhat[i] * gamma.value()[c] + beta.value()[c];
            }
    return make(std::move(out), "batch_norm", {x.node(), gamma.node(), beta.node()},
                [n, ch, plane, count, training, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                    Node& px = parent(self, 0);
                    Node& pg = parent(self, 1);
                    Node& pb = parent(self, 2);
                    const double* dy = self.grad.data();
                    std::vector<double> sg(ch, 0.0), sb(ch, 0.0);
                    for (int b = 0; b < n; ++b)
                        for (int c = 0; c < ch; ++c)
                            for (std::size_t p = 0; p < plane; ++p) {
                                const std::size_t i = (static_cast<std::size_t>(b) * ch + c) * plane + p;
                                sg[c] += dy[i] * xhat[i];
                                sb[c] += dy[i];
                            }
                    if (pg.requires_grad || pb.requires_grad) {
                        auto& dg = pg.grad_buffer();
                        auto& db = pb.grad_buffer();
                        for (int c = 0; c < ch; ++c) {
                            dg[c] += sg[c];
                            db[c] += sb[c];
                        }
                    }
                    if (!px.requires_grad) return;
                    auto& dx = px.grad_buffer();
                    for (int b = 0; b < n; ++b)
                        for (int c = 0; c < ch; ++c) {
                            const double gm = pg.value[c];
                            for (std::size_t p = 0; p < plane; ++p) {
                                const std::size_t i = (static_cast<std::size_t>(b) * ch + c) * plane + p;
                                if (training) {
                                    const double m1 = sb[c] * gm / static_cast<double>(count);
                                    const double m2 = sg[c] * gm / static_cast<double>(count);
                                    dx[i] += rstd[c] * (dy[i] * gm - m1 - xhat[i] * m2);
                                } else {
                                    dx[i] += rstd[c] * dy[i] * gm;
                                }
                            }
                        }
                });
}

}  // namespace scribseg::ad
