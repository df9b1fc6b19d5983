#pragma once

// Minimal reverse-mode differentiation over row-major matrices. A Tape records
// every op; backward() walks it in reverse. Frozen parameters enter the tape
// as leaves that never require gradients, so their gradient buffers stay zero.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dreamvvt {

template <typename T>
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int r, int c, T fill = T(0)) : rows(r), cols(c), v(std::size_t(r) * c, fill) {}

    T& operator()(int r, int c) { return v[std::size_t(r) * cols + c]; }
    T operator()(int r, int c) const { return v[std::size_t(r) * cols + c]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    void fill(T x) { std::fill(v.begin(), v.end(), x); }
    bool operator==(const Tensor&) const = default;
};

template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = false;
    std::string group;

    Param(std::string n, Tensor<T> init, bool train, std::string g = {})
        : name(std::move(n)), value(std::move(init)), grad(value.rows, value.cols), trainable(train), group(std::move(g)) {}
    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParamPtr = std::shared_ptr<Param<T>>;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    const Tensor<T>& value(Var x) const { return nodes_[x.id].value; }
    const Tensor<T>& grad(Var x) const { return nodes_[x.id].grad; }
    int rows(Var x) const { return nodes_[x.id].value.rows; }
    int cols(Var x) const { return nodes_[x.id].value.cols; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Tensor<T> t) { return push(std::move(t), false); }

    Var param(const ParamPtr<T>& p) {
        Var out = push(p->value, p->trainable);
        if (p->trainable) {
            std::weak_ptr<Param<T>> weak = p;
            node(out).backward = [this, out, weak] {
                if (auto sp = weak.lock()) {
                    const auto& g = node(out).grad.v;
                    for (std::size_t i = 0; i < g.size(); ++i) sp->grad.v[i] += g[i];
                }
            };
        }
        return out;
    }

    // a (n x k) * b (k x m)
    Var matmul(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols != B.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
        Tensor<T> C(A.rows, B.cols);
        gemm(A, B, C);
        Var out = push(std::move(C), needs(a) || needs(b));
        if (needs(out))
            node(out).backward = [this, a, b, out] {
                const auto& G = node(out).grad;
                const auto& A = value(a);
                const auto& B = value(b);
                if (needs(a))
                    for (int i = 0; i < A.rows; ++i)
                        for (int j = 0; j < B.cols; ++j) {
                            const T g = G(i, j);
                            if (g == T(0)) continue;
                            T* ga = &node(a).grad.v[std::size_t(i) * A.cols];
                            for (int k = 0; k < A.cols; ++k) ga[k] += g * B(k, j);
                        }
                if (needs(b))
                    for (int i = 0; i < A.rows; ++i)
                        for (int k = 0; k < A.cols; ++k) {
                            const T av = A(i, k);
                            T* gb = &node(b).grad.v[std::size_t(k) * B.cols];
                            const T* g = &G.v[std::size_t(i) * B.cols];
                            for (int j = 0; j < B.cols; ++j) gb[j] += av * g[j];
                        }
            };
        return out;
    }

    // a (n x k) * b^T, b is (m x k)
    Var matmul_nt(Var a, Var b) {
        const auto& A = value(a);
        const auto& B = value(b);
        if (A.cols != B.cols) throw std::invalid_argument("matmul_nt: dimension mismatch");
        Tensor<T> C(A.rows, B.rows);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < B.rows; ++j) {
                T acc = T(0);
                for (int k = 0; k < A.cols; ++k) acc += A(i, k) * B(j, k);
                C(i, j) = acc;
            }
        Var out = push(std::move(C), needs(a) || needs(b));
        if (needs(out))
            node(out).backward = [this, a, b, out] {
                const auto& G = node(out).grad;
                const auto& A = value(a);
                const auto& B = value(b);
                for (int i = 0; i < A.rows; ++i)
                    for (int j = 0; j < B.rows; ++j) {
                        const T g = G(i, j);
                        if (g == T(0)) continue;
                        if (needs(a))
                            for (int k = 0; k < A.cols; ++k) node(a).grad(i, k) += g * B(j, k);
                        if (needs(b))
                            for (int k = 0; k < A.cols; ++k) node(b).grad(j, k) += g * A(i, k);
                    }
            };
        return out;
    }

    Var add(Var a, Var b) {
        if (!value(a).same_shape(value(b))) throw std::invalid_argument("add: shape mismatch");
        Tensor<T> C = value(a);
        for (std::size_t i = 0; i < C.v.size(); ++i) C.v[i] += value(b).v[i];
        Var out = push(std::move(C), needs(a) || needs(b));
        if (needs(out))
            node(out).backward = [this, a, b, out] {
                accumulate(a, node(out).grad, T(1));
                accumulate(b, node(out).grad, T(1));
            };
        return out;
    }

    Var sub(Var a, Var b) {
        if (!value(a).same_shape(value(b))) throw std::invalid_argument("sub: shape mismatch");
        Tensor<T> C = value(a);
        for (std::size_t i = 0; i < C.v.size(); ++i) C.v[i] -= value(b).v[i];
        Var out = push(std::move(C), needs(a) || needs(b));
        if (needs(out))
            node(out).backward = [this, a, b, out] {
                accumulate(a, node(out).grad, T(1));
                accumulate(b, node(out).grad, T(-1));
            };
        return out;
    }

    Var scale(Var a, T s) {
        Tensor<T> C = value(a);
        for (auto& x : C.v) x *= s;
        Var out = push(std::move(C), needs(a));
        if (needs(out)) node(out).backward = [this, a, out, s] { accumulate(a, node(out).grad, s); };
        return out;
    }

    // a (n x m) + row (1 x m) broadcast over rows
    Var add_row(Var a, Var row) {
        const auto& A = value(a);
        const auto& R = value(row);
        if (R.rows != 1 || R.cols != A.cols) throw std::invalid_argument("add_row: shape mismatch");
        Tensor<T> C = A;
        for (int i = 0; i < C.rows; ++i)
            for (int j = 0; j < C.cols; ++j) C(i, j) += R(0, j);
        Var out = push(std::move(C), needs(a) || needs(row));
        if (needs(out))
            node(out).backward = [this, a, row, out] {
                const auto& G = node(out).grad;
                accumulate(a, G, T(1));
                if (needs(row))
                    for (int i = 0; i < G.rows; ++i)
                        for (int j = 0; j < G.cols; ++j) node(row).grad(0, j) += G(i, j);
            };
        return out;
    }

    // x * (1 + scale) + shift, scale / shift are 1 x m rows
    Var modulate(Var x, Var shift, Var scale_row) {
        const auto& X = value(x);
        const auto& Sh = value(shift);
        const auto& Sc = value(scale_row);
        if (Sh.rows != 1 || Sc.rows != 1 || Sh.cols != X.cols || Sc.cols != X.cols)
            throw std::invalid_argument("modulate: shape mismatch");
        Tensor<T> C = X;
        for (int i = 0; i < C.rows; ++i)
            for (int j = 0; j < C.cols; ++j) C(i, j) = X(i, j) * (T(1) + Sc(0, j)) + Sh(0, j);
        Var out = push(std::move(C), needs(x) || needs(shift) || needs(scale_row));
        if (needs(out))
            node(out).backward = [this, x, shift, scale_row, out] {
                const auto& G = node(out).grad;
                const auto& X = value(x);
                const auto& Sc = value(scale_row);
                for (int i = 0; i < G.rows; ++i)
                    for (int j = 0; j < G.cols; ++j) {
                        const T g = G(i, j);
                        if (needs(x)) node(x).grad(i, j) += g * (T(1) + Sc(0, j));
                        if (needs(shift)) node(shift).grad(0, j) += g;
                        if (needs(scale_row)) node(scale_row).grad(0, j) += g * X(i, j);
                    }
            };
        return out;
    }

    // Row-wise normalization without affine parameters.
    Var layer_norm(Var x, T eps = T(1e-6)) {
        const auto& X = value(x);
        Tensor<T> Y(X.rows, X.cols);
        std::vector<T> inv_std(X.rows);
        for (int i = 0; i < X.rows; ++i) {
            T mean = 0, var = 0;
            for (int j = 0; j < X.cols; ++j) mean += X(i, j);
            mean /= X.cols;
            for (int j = 0; j < X.cols; ++j) var += (X(i, j) - mean) * (X(i, j) - mean);
            var /= X.cols;
            inv_std[i] = T(1) / std::sqrt(var + eps);
            for (int j = 0; j < X.cols; ++j) Y(i, j) = (X(i, j) - mean) * inv_std[i];
        }
        Var out = push(std::move(Y), needs(x));
        if (needs(out))
            node(out).backward = [this, x, out, inv_std] {
                const auto& G = node(out).grad;
                const auto& Y = value(out);
                const int n = Y.cols;
                for (int i = 0; i < Y.rows; ++i) {
                    T gsum = 0, gysum = 0;
                    for (int j = 0; j < n; ++j) {
                        gsum += G(i, j);
                        gysum += G(i, j) * Y(i, j);
                    }
                    for (int j = 0; j < n; ++j)
                        node(x).grad(i, j) += inv_std[i] * (G(i, j) - gsum / n - Y(i, j) * gysum / n);
                }
            };
        return out;
    }

    Var silu(Var x) {
        const auto& X = value(x);
        Tensor<T> Y(X.rows, X.cols);
        for (std::size_t i = 0; i < X.v.size(); ++i) Y.v[i] = X.v[i] / (T(1) + std::exp(-X.v[i]));
        Var out = push(std::move(Y), needs(x));
        if (needs(out))
            node(out).backward = [this, x, out] {
                const auto& X = value(x);
                const auto& G = node(out).grad;
                for (std::size_t i = 0; i < X.v.size(); ++i) {
                    const T s = T(1) / (T(1) + std::exp(-X.v[i]));
                    node(x).grad.v[i] += G.v[i] * (s + X.v[i] * s * (T(1) - s));
                }
            };
        return out;
    }

    // tanh approximation of GELU
    Var gelu(Var x) {
        constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
        const auto& X = value(x);
        Tensor<T> Y(X.rows, X.cols);
        for (std::size_t i = 0; i < X.v.size(); ++i) {
            const T u = X.v[i];
            Y.v[i] = T(0.5) * u * (T(1) + std::tanh(c * (u + T(0.044715) * u * u * u)));
        }
        Var out = push(std::move(Y), needs(x));
        if (needs(out))
            node(out).backward = [this, x, out] {
                const auto& X = value(x);
                const auto& G = node(out).grad;
                for (std::size_t i = 0; i < X.v.size(); ++i) {
                    const T u = X.v[i];
                    const T th = std::tanh(c * (u + T(0.044715) * u * u * u));
                    const T d = T(0.5) * (T(1) + th) +
                                T(0.5) * u * (T(1) - th * th) * c * (T(1) + T(3) * T(0.044715) * u * u);
                    node(x).grad.v[i] += G.v[i] * d;
                }
            };
        return out;
    }

    Var softmax_rows(Var x) {
        const auto& X = value(x);
        Tensor<T> Y(X.rows, X.cols);
        for (int i = 0; i < X.rows; ++i) {
            T m = X(i, 0);
            for (int j = 1; j < X.cols; ++j) m = std::max(m, X(i, j));
            T z = 0;
            for (int j = 0; j < X.cols; ++j) z += (Y(i, j) = std::exp(X(i, j) - m));
            for (int j = 0; j < X.cols; ++j) Y(i, j) /= z;
        }
        Var out = push(std::move(Y), needs(x));
        if (needs(out))
            node(out).backward = [this, x, out] {
                const auto& Y = value(out);
                const auto& G = node(out).grad;
                for (int i = 0; i < Y.rows; ++i) {
                    T dot = 0;
                    for (int j = 0; j < Y.cols; ++j) dot += G(i, j) * Y(i, j);
                    for (int j = 0; j < Y.cols; ++j) node(x).grad(i, j) += Y(i, j) * (G(i, j) - dot);
                }
            };
        return out;
    }

    Var concat_rows(const std::vector<Var>& parts) {
        int rows = 0, cols = -1;
        bool req = false;
        for (Var p : parts) {
            if (cols < 0) cols = this->cols(p);
            if (this->cols(p) != cols) throw std::invalid_argument("concat_rows: column mismatch");
            rows += this->rows(p);
            req = req || needs(p);
        }
        Tensor<T> C(rows, std::max(cols, 0));
        std::size_t off = 0;
        for (Var p : parts) {
            std::copy(value(p).v.begin(), value(p).v.end(), C.v.begin() + off);
            off += value(p).v.size();
        }
        Var out = push(std::move(C), req);
        if (needs(out))
            node(out).backward = [this, parts, out] {
                std::size_t off = 0;
                for (Var p : parts) {
                    const std::size_t n = value(p).v.size();
                    if (needs(p))
                        for (std::size_t i = 0; i < n; ++i) node(p).grad.v[i] += node(out).grad.v[off + i];
                    off += n;
                }
            };
        return out;
    }

    Var slice_rows(Var a, int begin, int count) {
        const auto& A = value(a);
        if (begin < 0 || count < 0 || begin + count > A.rows) throw std::out_of_range("slice_rows");
        Tensor<T> C(count, A.cols);
        std::copy(A.v.begin() + std::size_t(begin) * A.cols, A.v.begin() + std::size_t(begin + count) * A.cols,
                  C.v.begin());
        Var out = push(std::move(C), needs(a));
        if (needs(out))
            node(out).backward = [this, a, out, begin] {
                const auto& G = node(out).grad;
                const std::size_t off = std::size_t(begin) * G.cols;
                for (std::size_t i = 0; i < G.v.size(); ++i) node(a).grad.v[off + i] += G.v[i];
            };
        return out;
    }

    Var slice_cols(Var a, int begin, int count) {
        const auto& A = value(a);
        if (begin < 0 || count < 0 || begin + count > A.cols) throw std::out_of_range("slice_cols");
        Tensor<T> C(A.rows, count);
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < count; ++j) C(i, j) = A(i, begin + j);
        Var out = push(std::move(C), needs(a));
        if (needs(out))
            node(out).backward = [this, a, out, begin] {
                const auto& G = node(out).grad;
                for (int i = 0; i < G.rows; ++i)
                    for (int j = 0; j < G.cols; ++j) node(a).grad(i, begin + j) += G(i, j);
            };
        return out;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        int rows = this->rows(parts.front()), cols = 0;
        bool req = false;
        for (Var p : parts) {
            if (this->rows(p) != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += this->cols(p);
            req = req || needs(p);
        }
        Tensor<T> C(rows, cols);
        int off = 0;
        for (Var p : parts) {
            const auto& P = value(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < P.cols; ++j) C(i, off + j) = P(i, j);
            off += P.cols;
        }
        Var out = push(std::move(C), req);
        if (needs(out))
            node(out).backward = [this, parts, out] {
                int off = 0;
                const auto& G = node(out).grad;
                for (Var p : parts) {
                    const int pc = this->cols(p);
                    if (needs(p))
                        for (int i = 0; i < G.rows; ++i)
                            for (int j = 0; j < pc; ++j) node(p).grad(i, j) += G(i, off + j);
                    off += pc;
                }
            };
        return out;
    }

    // mean((a - target)^2) as a 1x1 value
    Var mse(Var a, const Tensor<T>& target) {
        const auto& A = value(a);
        if (!A.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
        T acc = 0;
        for (std::size_t i = 0; i < A.v.size(); ++i) acc += (A.v[i] - target.v[i]) * (A.v[i] - target.v[i]);
        Tensor<T> L(1, 1, acc / T(A.v.size()));
        Var out = push(std::move(L), needs(a));
        if (needs(out))
            node(out).backward = [this, a, out, target] {
                const auto& A = value(a);
                const T g = node(out).grad.v[0] * T(2) / T(A.v.size());
                for (std::size_t i = 0; i < A.v.size(); ++i) node(a).grad.v[i] += g * (A.v[i] - target.v[i]);
            };
        return out;
    }

    void backward(Var loss) {
        if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
        if (!needs(loss)) return;
        node(loss).grad.v[0] = T(1);
        for (int i = loss.id; i >= 0; --i)
            if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward();
    }

    bool needs(Var x) const { return nodes_[x.id].requires_grad; }

private:
    Node& node(Var x) { return nodes_[x.id]; }

    Var push(Tensor<T> value, bool requires_grad) {
        Node n;
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad = Tensor<T>(value.rows, value.cols);
        n.value = std::move(value);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accumulate(Var x, const Tensor<T>& g, T s) {
        if (!needs(x)) return;
        auto& dst = node(x).grad.v;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * g.v[i];
    }

    static void gemm(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C) {
        for (int i = 0; i < A.rows; ++i) {
            T* c = &C.v[std::size_t(i) * B.cols];
            for (int k = 0; k < A.cols; ++k) {
                const T a = A(i, k);
                if (a == T(0)) continue;
                const T* b = &B.v[std::size_t(k) * B.cols];
                for (int j = 0; j < B.cols; ++j) c[j] += a * b[j];
            }
        }
    }

    std::vector<Node> nodes_;
};

}  // namespace dreamvvt
