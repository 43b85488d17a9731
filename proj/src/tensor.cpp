#include "clare/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace clare {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor tensor(Shape shape, double fill, bool requires_grad) {
    auto t = std::make_shared<TensorData>();
    t->shape = std::move(shape);
    t->value.assign(static_cast<std::size_t>(numel(t->shape)), fill);
    t->requires_grad = requires_grad;
    return t;
}

Tensor tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (static_cast<std::int64_t>(values.size()) != numel(shape))
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
    auto t = std::make_shared<TensorData>();
    t->shape = std::move(shape);
    t->value = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

Tensor gaussian_tensor(Shape shape, Rng& rng, double stddev, bool requires_grad,
                       std::string name) {
    auto t = tensor(std::move(shape), 0.0, requires_grad);
    for (auto& v : t->value) v = stddev * rng.gaussian();
    t->name = std::move(name);
    return t;
}

bool all_finite(const TensorData& t) {
    for (double v : t.value)
        if (!std::isfinite(v)) return false;
    return true;
}

void check_finite(const Tensor& t, const char* context) {
    if (!all_finite(*t))
        throw NumericsError(std::string("non-finite value in ") + context);
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
    if (loss->size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss->shape));
    if (records_.empty()) throw std::logic_error("Tape::backward: empty tape");
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
    consumed_ = true;
}

namespace {

// ---- raw kernels -----------------------------------------------------------

// C[m,n] (+)= A[m,k] * B[k,n]
void mm_nn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        double* c_row = C + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            const double* b_row = B + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T. Four independent accumulators per dot
// product; the reduction order is fixed, so results are reproducible.
void mm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    const int k4 = k - (k % 4);
    for (int i = 0; i < m; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        double* c_row = C + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b_row = B + static_cast<std::size_t>(j) * k;
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            for (int p = 0; p < k4; p += 4) {
                s0 += a_row[p] * b_row[p];
                s1 += a_row[p + 1] * b_row[p + 1];
                s2 += a_row[p + 2] * b_row[p + 2];
                s3 += a_row[p + 3] * b_row[p + 3];
            }
            double acc = (s0 + s1) + (s2 + s3);
            for (int p = k4; p < k; ++p) acc += a_row[p] * b_row[p];
            c_row[j] = accumulate ? c_row[j] + acc : acc;
        }
    }
}

// C[k,n] (+)= A[m,k]^T * B[m,n]
void mm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<std::size_t>(k) * n);
    for (int i = 0; i < m; ++i) {
        const double* a_row = A + static_cast<std::size_t>(i) * k;
        const double* b_row = B + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = a_row[p];
            if (a == 0.0) continue;
            double* c_row = C + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

bool want_grad(const Tape& tape, std::initializer_list<const Tensor*> ins) {
    if (!tape.recording) return false;
    for (const Tensor* t : ins)
        if ((*t)->requires_grad) return true;
    return false;
}

bool has_grad(const Tensor& t) { return !t->grad.empty(); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    // Normalize to 2-D: 1-D lhs is a row, 1-D rhs is a column.
    const bool a_vec = a->shape.size() == 1;
    const bool b_vec = b->shape.size() == 1;
    if (a->shape.size() > 2 || b->shape.size() > 2 || a->shape.empty() || b->shape.empty())
        throw ShapeError("matmul: unsupported ranks " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    const int m = a_vec ? 1 : a->shape[0];
    const int k = a_vec ? a->shape[0] : a->shape[1];
    const int k2 = b_vec ? b->shape[0] : b->shape[0];
    const int n = b_vec ? 1 : b->shape[1];
    if (k != k2)
        throw ShapeError("matmul: inner dimension mismatch " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));

    Shape out_shape;
    if (a_vec && b_vec) out_shape = {1};
    else if (a_vec) out_shape = {n};
    else if (b_vec) out_shape = {m};
    else out_shape = {m, n};
    Tensor out = tensor(out_shape);
    mm_nn(a->value.data(), b->value.data(), out->value.data(), m, k, n, false);

    if (want_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        Tensor av = a, bv = b, ov = out;
        tape.record([av, bv, ov, m, k, n]() {
            if (!has_grad(ov)) return;
            const double* g = ov->grad.data();
            if (av->requires_grad) {
                av->ensure_grad();
                mm_nt(g, bv->value.data(), av->grad.data(), m, n, k, true);
            }
            if (bv->requires_grad) {
                bv->ensure_grad();
                mm_tn(av->value.data(), g, bv->grad.data(), m, k, n, true);
            }
        });
    }
    return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& W, const Tensor& bias) {
    const bool x_vec = x->shape.size() == 1;
    const int B = x_vec ? 1 : x->shape[0];
    const int k = x_vec ? x->shape[0] : x->shape[1];
    if (W->shape.size() != 2 || W->shape[1] != k || bias->shape.size() != 1 ||
        bias->shape[0] != W->shape[0])
        throw ShapeError("linear: x " + shape_str(x->shape) + ", W " + shape_str(W->shape) +
                         ", bias " + shape_str(bias->shape));
    const int n = W->shape[0];

    Tensor out = tensor(x_vec ? Shape{n} : Shape{B, n});
    mm_nt(x->value.data(), W->value.data(), out->value.data(), B, k, n, false);
    for (int i = 0; i < B; ++i) {
        double* row = out->value.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) row[j] += bias->value[j];
    }

    if (want_grad(tape, {&x, &W, &bias})) {
        out->requires_grad = true;
        Tensor xv = x, Wv = W, bv = bias, ov = out;
        tape.record([xv, Wv, bv, ov, B, k, n]() {
            if (!has_grad(ov)) return;
            const double* g = ov->grad.data();
            if (xv->requires_grad) {
                xv->ensure_grad();
                mm_nn(g, Wv->value.data(), xv->grad.data(), B, n, k, true);
            }
            if (Wv->requires_grad) {
                Wv->ensure_grad();
                mm_tn(g, xv->value.data(), Wv->grad.data(), B, n, k, true);
            }
            if (bv->requires_grad) {
                bv->ensure_grad();
                for (int i = 0; i < B; ++i) {
                    const double* row = g + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) bv->grad[j] += row[j];
                }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const char* op, Tape& tape, const Tensor& a, const Tensor& b, Fwd fwd,
                          Bwd bwd) {
    require_same_shape(op, a, b);
    Tensor out = tensor(a->shape);
    const std::size_t n = out->value.size();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = fwd(a->value[i], b->value[i]);
    if (want_grad(tape, {&a, &b})) {
        out->requires_grad = true;
        Tensor av = a, bv = b, ov = out;
        tape.record([av, bv, ov, n, bwd]() {
            if (!has_grad(ov)) return;
            for (std::size_t i = 0; i < n; ++i) {
                double da, db;
                bwd(av->value[i], bv->value[i], ov->grad[i], da, db);
                if (av->requires_grad) {
                    av->ensure_grad();
                    av->grad[i] += da;
                }
                if (bv->requires_grad) {
                    bv->ensure_grad();
                    bv->grad[i] += db;
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "add", tape, a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "sub", tape, a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        "mul", tape, a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
    Tensor out = tensor(a->shape);
    const std::size_t n = out->value.size();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = c * a->value[i];
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov, n, c]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) av->grad[i] += c * ov->grad[i];
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
    Tensor out = tensor(a->shape);
    const std::size_t n = out->value.size();
    for (std::size_t i = 0; i < n; ++i) out->value[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov, n]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                if (av->value[i] > 0.0) av->grad[i] += ov->grad[i];
        });
    }
    return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    const bool x_vec = x->shape.size() == 1;
    const int B = x_vec ? 1 : x->shape[0];
    const int d = x_vec ? x->shape[0] : x->shape[1];
    if (gain->shape != Shape{d} || bias->shape != Shape{d})
        throw ShapeError("layer_norm: x " + shape_str(x->shape) + ", gain " +
                         shape_str(gain->shape) + ", bias " + shape_str(bias->shape));

    Tensor out = tensor(x->shape);
    // Saved for backward: normalized rows and the inverse stddevs.
    auto xhat = std::make_shared<std::vector<double>>(x->value.size());
    auto inv = std::make_shared<std::vector<double>>(B);
    for (int i = 0; i < B; ++i) {
        const double* row = x->value.data() + static_cast<std::size_t>(i) * d;
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += row[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= d;
        const double s = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = s;
        double* xh = xhat->data() + static_cast<std::size_t>(i) * d;
        double* o = out->value.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (row[j] - mu) * s;
            o[j] = gain->value[j] * xh[j] + bias->value[j];
        }
    }

    if (want_grad(tape, {&x, &gain, &bias})) {
        out->requires_grad = true;
        Tensor xv = x, gv = gain, bv = bias, ov = out;
        tape.record([xv, gv, bv, ov, xhat, inv, B, d]() {
            if (!has_grad(ov)) return;
            for (int i = 0; i < B; ++i) {
                const double* g = ov->grad.data() + static_cast<std::size_t>(i) * d;
                const double* xh = xhat->data() + static_cast<std::size_t>(i) * d;
                if (gv->requires_grad) {
                    gv->ensure_grad();
                    for (int j = 0; j < d; ++j) gv->grad[j] += g[j] * xh[j];
                }
                if (bv->requires_grad) {
                    bv->ensure_grad();
                    for (int j = 0; j < d; ++j) bv->grad[j] += g[j];
                }
                if (xv->requires_grad) {
                    xv->ensure_grad();
                    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double dxh = g[j] * gv->value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= d;
                    mean_dxh_xh /= d;
                    double* gx = xv->grad.data() + static_cast<std::size_t>(i) * d;
                    const double s = (*inv)[i];
                    for (int j = 0; j < d; ++j) {
                        const double dxh = g[j] * gv->value[j];
                        gx[j] += s * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
    }
    return out;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const bool vec = parts[0]->shape.size() == 1;
    const int B = vec ? 1 : parts[0]->shape[0];
    int total = 0;
    for (const auto& p : parts) {
        const bool pv = p->shape.size() == 1;
        if (pv != vec || (!pv && p->shape[0] != B))
            throw ShapeError("concat: incompatible input " + shape_str(p->shape) + " with " +
                             shape_str(parts[0]->shape));
        total += pv ? p->shape[0] : p->shape[1];
    }
    Tensor out = tensor(vec ? Shape{total} : Shape{B, total});
    int off = 0;
    for (const auto& p : parts) {
        const int w = vec ? p->shape[0] : p->shape[1];
        for (int i = 0; i < B; ++i)
            std::memcpy(out->value.data() + static_cast<std::size_t>(i) * total + off,
                        p->value.data() + static_cast<std::size_t>(i) * w, sizeof(double) * w);
        off += w;
    }

    bool need = tape.recording;
    if (need) {
        need = false;
        for (const auto& p : parts) need = need || p->requires_grad;
    }
    if (need) {
        out->requires_grad = true;
        std::vector<Tensor> held = parts;
        Tensor ov = out;
        tape.record([held, ov, B, total, vec]() {
            if (!has_grad(ov)) return;
            int off = 0;
            for (const auto& p : held) {
                const int w = vec ? p->shape[0] : p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < B; ++i) {
                        const double* g = ov->grad.data() + static_cast<std::size_t>(i) * total + off;
                        double* pg = p->grad.data() + static_cast<std::size_t>(i) * w;
                        for (int j = 0; j < w; ++j) pg[j] += g[j];
                    }
                }
                off += w;
            }
        });
    }
    return out;
}

Tensor sum_all(Tape& tape, const Tensor& a) {
    Tensor out = tensor(Shape{1});
    double s = 0.0;
    for (double v : a->value) s += v;
    out->value[0] = s;
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            const double g = ov->grad[0];
            for (auto& gi : av->grad) gi += g;
        });
    }
    return out;
}

Tensor mean_all(Tape& tape, const Tensor& a) {
    if (a->size() == 0) throw ShapeError("mean_all: empty tensor");
    const double n = static_cast<double>(a->size());
    Tensor out = tensor(Shape{1});
    double s = 0.0;
    for (double v : a->value) s += v;
    out->value[0] = s / n;
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov, n]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            const double g = ov->grad[0] / n;
            for (auto& gi : av->grad) gi += g;
        });
    }
    return out;
}

Tensor l2_norm(Tape& tape, const Tensor& a) {
    Tensor out = tensor(Shape{1});
    double s = 0.0;
    for (double v : a->value) s += v * v;
    out->value[0] = std::sqrt(s);
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            // Subgradient 0 at the origin.
            const double nrm = ov->value[0];
            if (nrm < 1e-300) return;
            const double g = ov->grad[0] / nrm;
            for (std::size_t i = 0; i < av->value.size(); ++i) av->grad[i] += g * av->value[i];
        });
    }
    return out;
}

Tensor rows_l2_norm(Tape& tape, const Tensor& a) {
    if (a->shape.size() != 2)
        throw ShapeError("rows_l2_norm: expected 2-D input, got " + shape_str(a->shape));
    const int B = a->shape[0], d = a->shape[1];
    Tensor out = tensor(Shape{B});
    for (int i = 0; i < B; ++i) {
        const double* row = a->value.data() + static_cast<std::size_t>(i) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += row[j] * row[j];
        out->value[i] = std::sqrt(s);
    }
    if (want_grad(tape, {&a})) {
        out->requires_grad = true;
        Tensor av = a, ov = out;
        tape.record([av, ov, B, d]() {
            if (!has_grad(ov) || !av->requires_grad) return;
            av->ensure_grad();
            for (int i = 0; i < B; ++i) {
                const double nrm = ov->value[i];
                if (nrm < 1e-300) continue;
                const double g = ov->grad[i] / nrm;
                const double* row = av->value.data() + static_cast<std::size_t>(i) * d;
                double* grow = av->grad.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) grow[j] += g * row[j];
            }
        });
    }
    return out;
}

}  // namespace clare
