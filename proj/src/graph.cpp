#include "ovhhir/graph.hpp"

#include <cmath>

namespace ovhhir {

namespace {

void check_2d(const Tensor & t, const char * who) {
    if (t.rank() != 2) {
        throw config_error(std::string(who) + ": expected a 2-D tensor, got rank " +
                           std::to_string(t.rank()));
    }
}

constexpr double GELU_C = 0.7978845608028654; // sqrt(2/pi)
constexpr double GELU_A = 0.044715;

} // namespace

std::string shape_str(const std::vector<int64_t> & s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); i++) {
        if (i) {
            out += ", ";
        }
        out += std::to_string(s[i]);
    }
    return out + "]";
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Graph::Node * Graph::make(Tensor value, std::vector<Node *> parents, std::function<void()> bw) {
    nodes_.emplace_back();
    Node * n = &nodes_.back();
    n->value = std::move(value);
    for (Node * p : parents) {
        if (p->needs_grad) {
            n->needs_grad = true;
        }
    }
    if (n->needs_grad) {
        n->grad = Tensor::zeros(n->value.shape);
        n->backward = std::move(bw);
    }
    return n;
}

Graph::Node * Graph::input(Tensor v, bool needs_grad) {
    nodes_.emplace_back();
    Node * n = &nodes_.back();
    n->value = std::move(v);
    n->needs_grad = needs_grad;
    if (needs_grad) {
        n->grad = Tensor::zeros(n->value.shape);
    }
    return n;
}

Graph::Node * Graph::param(Parameter & p) {
    nodes_.emplace_back();
    Node * n = &nodes_.back();
    n->value = p.value;
    n->needs_grad = p.trainable;
    if (p.trainable) {
        n->grad = Tensor::zeros(n->value.shape);
        Parameter * pp = &p;
        n->backward = [n, pp]() {
            for (size_t i = 0; i < pp->grad.data.size(); i++) {
                pp->grad.data[i] += n->grad.data[i];
            }
        };
    }
    return n;
}

Graph::Node * Graph::matmul(Node * a, Node * b) {
    check_2d(a->value, "matmul lhs");
    check_2d(b->value, "matmul rhs");
    int64_t m = a->value.rows();
    int64_t k = a->value.cols();
    int64_t n = b->value.cols();
    if (b->value.rows() != k) {
        throw config_error("matmul: inner dimensions " + std::to_string(k) + " vs " +
                           std::to_string(b->value.rows()));
    }
    Tensor c({m, n});
    const double * pa = a->value.data.data();
    const double * pb = b->value.data.data();
    double * pc = c.data.data();
    for (int64_t i = 0; i < m; i++) {
        for (int64_t p = 0; p < k; p++) {
            double av = pa[i * k + p];
            const double * brow = pb + p * n;
            double * crow = pc + i * n;
            for (int64_t j = 0; j < n; j++) {
                crow[j] += av * brow[j];
            }
        }
    }
    Node * out = make(std::move(c), {a, b}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, b, m, k, n]() {
            const double * g = out->grad.data.data();
            if (a->needs_grad) {
                double * da = a->grad.data.data();
                const double * pb = b->value.data.data();
                for (int64_t i = 0; i < m; i++) {
                    for (int64_t j = 0; j < n; j++) {
                        double gv = g[i * n + j];
                        const double * brow = pb + j; // column j, stride n
                        for (int64_t p = 0; p < k; p++) {
                            da[i * k + p] += gv * brow[p * n];
                        }
                    }
                }
            }
            if (b->needs_grad) {
                double * db = b->grad.data.data();
                const double * pa = a->value.data.data();
                for (int64_t i = 0; i < m; i++) {
                    for (int64_t p = 0; p < k; p++) {
                        double av = pa[i * k + p];
                        const double * grow = g + i * n;
                        double * drow = db + p * n;
                        for (int64_t j = 0; j < n; j++) {
                            drow[j] += av * grow[j];
                        }
                    }
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::add(Node * a, Node * b) {
    if (!a->value.same_shape(b->value)) {
        throw config_error("add: shape " + shape_str(a->value.shape) + " vs " +
                           shape_str(b->value.shape));
    }
    Tensor c = a->value;
    for (size_t i = 0; i < c.data.size(); i++) {
        c.data[i] += b->value.data[i];
    }
    Node * out = make(std::move(c), {a, b}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, b]() {
            if (a->needs_grad) {
                for (size_t i = 0; i < a->grad.data.size(); i++) {
                    a->grad.data[i] += out->grad.data[i];
                }
            }
            if (b->needs_grad) {
                for (size_t i = 0; i < b->grad.data.size(); i++) {
                    b->grad.data[i] += out->grad.data[i];
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::mul(Node * a, Node * b) {
    if (!a->value.same_shape(b->value)) {
        throw config_error("mul: shape " + shape_str(a->value.shape) + " vs " +
                           shape_str(b->value.shape));
    }
    Tensor c = a->value;
    for (size_t i = 0; i < c.data.size(); i++) {
        c.data[i] *= b->value.data[i];
    }
    Node * out = make(std::move(c), {a, b}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, b]() {
            if (a->needs_grad) {
                for (size_t i = 0; i < a->grad.data.size(); i++) {
                    a->grad.data[i] += out->grad.data[i] * b->value.data[i];
                }
            }
            if (b->needs_grad) {
                for (size_t i = 0; i < b->grad.data.size(); i++) {
                    b->grad.data[i] += out->grad.data[i] * a->value.data[i];
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::add_bias(Node * a, Node * bias) {
    check_2d(a->value, "add_bias");
    int64_t n = a->value.cols();
    if (bias->value.numel() != n) {
        throw config_error("add_bias: bias length " + std::to_string(bias->value.numel()) +
                           " vs " + std::to_string(n) + " columns");
    }
    Tensor c = a->value;
    int64_t m = c.rows();
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            c.data[static_cast<size_t>(i * n + j)] += bias->value.data[static_cast<size_t>(j)];
        }
    }
    Node * out = make(std::move(c), {a, bias}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, bias, m, n]() {
            if (a->needs_grad) {
                for (size_t i = 0; i < a->grad.data.size(); i++) {
                    a->grad.data[i] += out->grad.data[i];
                }
            }
            if (bias->needs_grad) {
                for (int64_t i = 0; i < m; i++) {
                    for (int64_t j = 0; j < n; j++) {
                        bias->grad.data[static_cast<size_t>(j)] +=
                            out->grad.data[static_cast<size_t>(i * n + j)];
                    }
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::mul_row(Node * a, Node * w) {
    check_2d(a->value, "mul_row");
    int64_t n = a->value.cols();
    if (w->value.numel() != n) {
        throw config_error("mul_row: weight length mismatch");
    }
    Tensor c = a->value;
    int64_t m = c.rows();
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            c.data[static_cast<size_t>(i * n + j)] *= w->value.data[static_cast<size_t>(j)];
        }
    }
    Node * out = make(std::move(c), {a, w}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, w, m, n]() {
            for (int64_t i = 0; i < m; i++) {
                for (int64_t j = 0; j < n; j++) {
                    size_t ix = static_cast<size_t>(i * n + j);
                    if (a->needs_grad) {
                        a->grad.data[ix] += out->grad.data[ix] * w->value.data[static_cast<size_t>(j)];
                    }
                    if (w->needs_grad) {
                        w->grad.data[static_cast<size_t>(j)] += out->grad.data[ix] * a->value.data[ix];
                    }
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::scale(Node * a, double c) {
    Tensor v = a->value;
    for (auto & x : v.data) {
        x *= c;
    }
    Node * out = make(std::move(v), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, c]() {
            for (size_t i = 0; i < a->grad.data.size(); i++) {
                a->grad.data[i] += c * out->grad.data[i];
            }
        };
    }
    return out;
}

Graph::Node * Graph::transpose(Node * a) {
    check_2d(a->value, "transpose");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    Tensor c({n, m});
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < n; j++) {
            c(j, i) = a->value(i, j);
        }
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, m, n]() {
            for (int64_t i = 0; i < m; i++) {
                for (int64_t j = 0; j < n; j++) {
                    a->grad(i, j) += out->grad(j, i);
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::reshape(Node * a, std::vector<int64_t> shape) {
    if (Tensor::numel_of(shape) != a->value.numel()) {
        throw config_error("reshape: element count mismatch " + shape_str(a->value.shape) +
                           " -> " + shape_str(shape));
    }
    Tensor c = a->value;
    c.shape = std::move(shape);
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a]() {
            for (size_t i = 0; i < a->grad.data.size(); i++) {
                a->grad.data[i] += out->grad.data[i];
            }
        };
    }
    return out;
}

Graph::Node * Graph::slice_rows(Node * a, int64_t r0, int64_t r1) {
    check_2d(a->value, "slice_rows");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    if (r0 < 0 || r1 > m || r0 >= r1) {
        throw config_error("slice_rows: bad range [" + std::to_string(r0) + ", " +
                           std::to_string(r1) + ") of " + std::to_string(m));
    }
    Tensor c({r1 - r0, n});
    std::copy(a->value.data.begin() + r0 * n, a->value.data.begin() + r1 * n, c.data.begin());
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, r0, n]() {
            for (size_t i = 0; i < out->grad.data.size(); i++) {
                a->grad.data[static_cast<size_t>(r0 * n) + i] += out->grad.data[i];
            }
        };
    }
    return out;
}

Graph::Node * Graph::slice_cols(Node * a, int64_t c0, int64_t c1) {
    check_2d(a->value, "slice_cols");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    if (c0 < 0 || c1 > n || c0 >= c1) {
        throw config_error("slice_cols: bad range");
    }
    int64_t w = c1 - c0;
    Tensor c({m, w});
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = 0; j < w; j++) {
            c(i, j) = a->value(i, c0 + j);
        }
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, m, w, c0]() {
            for (int64_t i = 0; i < m; i++) {
                for (int64_t j = 0; j < w; j++) {
                    a->grad(i, c0 + j) += out->grad(i, j);
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::concat_rows(const std::vector<Node *> & parts) {
    if (parts.empty()) {
        throw config_error("concat_rows: no parts");
    }
    int64_t n = parts[0]->value.cols();
    int64_t m = 0;
    for (Node * p : parts) {
        check_2d(p->value, "concat_rows");
        if (p->value.cols() != n) {
            throw config_error("concat_rows: column mismatch");
        }
        m += p->value.rows();
    }
    Tensor c({m, n});
    int64_t r = 0;
    for (Node * p : parts) {
        std::copy(p->value.data.begin(), p->value.data.end(), c.data.begin() + r * n);
        r += p->value.rows();
    }
    Node * out = make(std::move(c), parts, nullptr);
    if (out->needs_grad) {
        std::vector<Node *> ps = parts;
        out->backward = [out, ps, n]() {
            int64_t r = 0;
            for (Node * p : ps) {
                if (p->needs_grad) {
                    for (size_t i = 0; i < p->grad.data.size(); i++) {
                        p->grad.data[i] += out->grad.data[static_cast<size_t>(r * n) + i];
                    }
                }
                r += p->value.rows();
            }
        };
    }
    return out;
}

Graph::Node * Graph::concat_cols(const std::vector<Node *> & parts) {
    if (parts.empty()) {
        throw config_error("concat_cols: no parts");
    }
    int64_t m = parts[0]->value.rows();
    int64_t n = 0;
    for (Node * p : parts) {
        check_2d(p->value, "concat_cols");
        if (p->value.rows() != m) {
            throw config_error("concat_cols: row mismatch");
        }
        n += p->value.cols();
    }
    Tensor c({m, n});
    int64_t off = 0;
    for (Node * p : parts) {
        int64_t w = p->value.cols();
        for (int64_t i = 0; i < m; i++) {
            for (int64_t j = 0; j < w; j++) {
                c(i, off + j) = p->value(i, j);
            }
        }
        off += w;
    }
    Node * out = make(std::move(c), parts, nullptr);
    if (out->needs_grad) {
        std::vector<Node *> ps = parts;
        out->backward = [out, ps, m]() {
            int64_t off = 0;
            for (Node * p : ps) {
                int64_t w = p->value.cols();
                if (p->needs_grad) {
                    for (int64_t i = 0; i < m; i++) {
                        for (int64_t j = 0; j < w; j++) {
                            p->grad(i, j) += out->grad(i, off + j);
                        }
                    }
                }
                off += w;
            }
        };
    }
    return out;
}

Graph::Node * Graph::gather_rows(Node * a, std::vector<int64_t> idx) {
    check_2d(a->value, "gather_rows");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    for (int64_t i : idx) {
        if (i < 0 || i >= m) {
            throw config_error("gather_rows: index " + std::to_string(i) + " out of " +
                               std::to_string(m));
        }
    }
    Tensor c({static_cast<int64_t>(idx.size()), n});
    for (size_t r = 0; r < idx.size(); r++) {
        std::copy(a->value.data.begin() + idx[r] * n, a->value.data.begin() + (idx[r] + 1) * n,
                  c.data.begin() + static_cast<int64_t>(r) * n);
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, idx = std::move(idx), n]() {
            for (size_t r = 0; r < idx.size(); r++) {
                for (int64_t j = 0; j < n; j++) {
                    a->grad(idx[r], j) += out->grad(static_cast<int64_t>(r), j);
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::softmax_rows(Node * a) {
    check_2d(a->value, "softmax_rows");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    Tensor c({m, n});
    for (int64_t i = 0; i < m; i++) {
        double mx = a->value(i, 0);
        for (int64_t j = 1; j < n; j++) {
            mx = std::max(mx, a->value(i, j));
        }
        double s = 0.0;
        for (int64_t j = 0; j < n; j++) {
            double e = std::exp(a->value(i, j) - mx);
            c(i, j) = e;
            s += e;
        }
        for (int64_t j = 0; j < n; j++) {
            c(i, j) /= s;
        }
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, m, n]() {
            for (int64_t i = 0; i < m; i++) {
                double dot = 0.0;
                for (int64_t j = 0; j < n; j++) {
                    dot += out->grad(i, j) * out->value(i, j);
                }
                for (int64_t j = 0; j < n; j++) {
                    a->grad(i, j) += out->value(i, j) * (out->grad(i, j) - dot);
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::causal_mask(Node * a) {
    check_2d(a->value, "causal_mask");
    if (a->value.rows() != a->value.cols()) {
        throw config_error("causal_mask: square input required");
    }
    int64_t m = a->value.rows();
    Tensor c = a->value;
    for (int64_t i = 0; i < m; i++) {
        for (int64_t j = i + 1; j < m; j++) {
            c(i, j) += -1e9;
        }
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a]() {
            for (size_t i = 0; i < a->grad.data.size(); i++) {
                a->grad.data[i] += out->grad.data[i];
            }
        };
    }
    return out;
}

Graph::Node * Graph::layernorm(Node * a, Node * gain, Node * bias, double eps) {
    check_2d(a->value, "layernorm");
    int64_t m = a->value.rows();
    int64_t n = a->value.cols();
    if (gain->value.numel() != n || bias->value.numel() != n) {
        throw config_error("layernorm: gain/bias length mismatch");
    }
    Tensor c({m, n});
    Tensor xhat({m, n});
    std::vector<double> inv_sigma(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; i++) {
        double mu = 0.0;
        for (int64_t j = 0; j < n; j++) {
            mu += a->value(i, j);
        }
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; j++) {
            double d = a->value(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < n; j++) {
            double xh = (a->value(i, j) - mu) * inv;
            xhat(i, j) = xh;
            c(i, j) = xh * gain->value.data[static_cast<size_t>(j)] +
                      bias->value.data[static_cast<size_t>(j)];
        }
    }
    Node * out = make(std::move(c), {a, gain, bias}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a, gain, bias, m, n, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma)]() {
            for (int64_t i = 0; i < m; i++) {
                if (gain->needs_grad || bias->needs_grad) {
                    for (int64_t j = 0; j < n; j++) {
                        if (gain->needs_grad) {
                            gain->grad.data[static_cast<size_t>(j)] += out->grad(i, j) * xhat(i, j);
                        }
                        if (bias->needs_grad) {
                            bias->grad.data[static_cast<size_t>(j)] += out->grad(i, j);
                        }
                    }
                }
                if (a->needs_grad) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (int64_t j = 0; j < n; j++) {
                        double dxh = out->grad(i, j) * gain->value.data[static_cast<size_t>(j)];
                        m1 += dxh;
                        m2 += dxh * xhat(i, j);
                    }
                    m1 /= static_cast<double>(n);
                    m2 /= static_cast<double>(n);
                    double inv = inv_sigma[static_cast<size_t>(i)];
                    for (int64_t j = 0; j < n; j++) {
                        double dxh = out->grad(i, j) * gain->value.data[static_cast<size_t>(j)];
                        a->grad(i, j) += inv * (dxh - m1 - xhat(i, j) * m2);
                    }
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::gelu(Node * a) {
    Tensor c = a->value;
    for (auto & x : c.data) {
        double u = GELU_C * (x + GELU_A * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(u));
    }
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a]() {
            for (size_t i = 0; i < a->grad.data.size(); i++) {
                double x = a->value.data[i];
                double u = GELU_C * (x + GELU_A * x * x * x);
                double t = std::tanh(u);
                double du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                a->grad.data[i] += out->grad.data[i] * d;
            }
        };
    }
    return out;
}

Graph::Node * Graph::add_time_rows(Node * x, Node * table, int64_t t_count, int64_t p_count) {
    check_2d(x->value, "add_time_rows input");
    check_2d(table->value, "add_time_rows table");
    int64_t n = x->value.cols();
    if (x->value.rows() != t_count * p_count) {
        throw config_error("add_time_rows: rows " + std::to_string(x->value.rows()) +
                           " != T*P = " + std::to_string(t_count * p_count));
    }
    if (table->value.cols() != n) {
        throw config_error("add_time_rows: width mismatch");
    }
    if (t_count > table->value.rows()) {
        throw config_error("add_time_rows: T = " + std::to_string(t_count) +
                           " exceeds table capacity " + std::to_string(table->value.rows()));
    }
    Tensor c = x->value;
    for (int64_t t = 0; t < t_count; t++) {
        for (int64_t p = 0; p < p_count; p++) {
            for (int64_t j = 0; j < n; j++) {
                c((t * p_count + p), j) += table->value(t, j);
            }
        }
    }
    Node * out = make(std::move(c), {x, table}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, x, table, t_count, p_count, n]() {
            if (x->needs_grad) {
                for (size_t i = 0; i < x->grad.data.size(); i++) {
                    x->grad.data[i] += out->grad.data[i];
                }
            }
            if (table->needs_grad) {
                for (int64_t t = 0; t < t_count; t++) {
                    for (int64_t p = 0; p < p_count; p++) {
                        for (int64_t j = 0; j < n; j++) {
                            table->grad(t, j) += out->grad(t * p_count + p, j);
                        }
                    }
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::mean_cross_entropy(Node * logits, std::vector<int64_t> ids) {
    check_2d(logits->value, "mean_cross_entropy");
    int64_t m = logits->value.rows();
    int64_t v = logits->value.cols();
    if (static_cast<int64_t>(ids.size()) != m) {
        throw config_error("mean_cross_entropy: " + std::to_string(ids.size()) + " ids for " +
                           std::to_string(m) + " rows");
    }
    if (m == 0) {
        throw config_error("mean_cross_entropy: empty batch");
    }
    for (int64_t id : ids) {
        if (id < 0 || id >= v) {
            throw config_error("mean_cross_entropy: id out of vocabulary");
        }
    }
    // keep softmax rows for backward
    Tensor probs({m, v});
    double total = 0.0;
    for (int64_t i = 0; i < m; i++) {
        double mx = logits->value(i, 0);
        for (int64_t j = 1; j < v; j++) {
            mx = std::max(mx, logits->value(i, j));
        }
        double s = 0.0;
        for (int64_t j = 0; j < v; j++) {
            double e = std::exp(logits->value(i, j) - mx);
            probs(i, j) = e;
            s += e;
        }
        for (int64_t j = 0; j < v; j++) {
            probs(i, j) /= s;
        }
        total += std::log(s) + mx - logits->value(i, ids[static_cast<size_t>(i)]);
    }
    Tensor c({1});
    c.data[0] = total / static_cast<double>(m);
    Node * out = make(std::move(c), {logits}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, logits, m, v, ids = std::move(ids), probs = std::move(probs)]() {
            double g = out->grad.data[0] / static_cast<double>(m);
            for (int64_t i = 0; i < m; i++) {
                for (int64_t j = 0; j < v; j++) {
                    double ind = (j == ids[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                    logits->grad(i, j) += g * (probs(i, j) - ind);
                }
            }
        };
    }
    return out;
}

Graph::Node * Graph::sum_all(Node * a) {
    Tensor c({1});
    double s = 0.0;
    for (double x : a->value.data) {
        s += x;
    }
    c.data[0] = s;
    Node * out = make(std::move(c), {a}, nullptr);
    if (out->needs_grad) {
        out->backward = [out, a]() {
            for (auto & g : a->grad.data) {
                g += out->grad.data[0];
            }
        };
    }
    return out;
}

Graph::Node * Graph::attend(Node * q, Node * k, Node * v, int heads, bool causal) {
    check_2d(q->value, "attend q");
    check_2d(k->value, "attend k");
    check_2d(v->value, "attend v");
    int64_t d = q->value.cols();
    if (k->value.cols() != d || v->value.cols() != d) {
        throw config_error("attend: q/k/v width mismatch");
    }
    if (k->value.rows() != v->value.rows()) {
        throw config_error("attend: k/v length mismatch");
    }
    if (heads < 1 || d % heads != 0) {
        throw config_error("attend: width " + std::to_string(d) + " not divisible by " +
                           std::to_string(heads) + " heads");
    }
    if (causal && q->value.rows() != k->value.rows()) {
        throw config_error("attend: causal attention needs equal q/k lengths");
    }
    int64_t dh = d / heads;
    double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Node *> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; h++) {
        Node * qh = slice_cols(q, h * dh, (h + 1) * dh);
        Node * kh = slice_cols(k, h * dh, (h + 1) * dh);
        Node * vh = slice_cols(v, h * dh, (h + 1) * dh);
        Node * s = scale(matmul(qh, transpose(kh)), inv_scale);
        if (causal) {
            s = causal_mask(s);
        }
        outs.push_back(matmul(softmax_rows(s), vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

void Graph::backward(Node * loss) {
    if (loss->value.numel() != 1) {
        throw config_error("backward: loss must be scalar");
    }
    if (!loss->needs_grad) {
        return; // nothing trainable upstream
    }
    loss->grad.data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->needs_grad && it->backward) {
            it->backward();
        }
    }
}

} // namespace ovhhir
