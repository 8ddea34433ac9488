#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "physiowave/autodiff.hpp"

// Differentiable kernel ops. Conventions:
//   - 2-d tensors are row-major [rows, cols]; 1-d tensors are plain vectors.
//   - every op validates shapes up front and registers a backward closure
//     that accumulates (+=) into parent grads.
//   - targets/masks enter as plain Tensors, not graph nodes.

namespace pwv {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op<T>("add", std::move(out), {a, b}, [](Node<T>& n) {
        for (std::size_t p = 0; p < 2; ++p)
            if (n.parents[p]->needs_grad)
                for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[p]->grad[i] += n.grad[i];
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op<T>("sub", std::move(out), {a, b}, [](Node<T>& n) {
        if (n.parents[0]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
        if (n.parents[1]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[1]->grad[i] -= n.grad[i];
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op<T>("mul", std::move(out), {a, b}, [](Node<T>& n) {
        const Tensor<T>& av = n.parents[0]->value;
        const Tensor<T>& bv = n.parents[1]->value;
        if (n.parents[0]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * bv[i];
        if (n.parents[1]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[1]->grad[i] += n.grad[i] * av[i];
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= c;
    return make_op<T>("scale", std::move(out), {a}, [c](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * c;
    });
}

// x * s where s is a scalar graph variable (shape [1]).
template <typename T>
Var<T> scale_var(const Var<T>& x, const Var<T>& s) {
    if (s.value().size() != 1) throw ShapeError("scale_var: scale must be scalar");
    T c = s.value()[0];
    Tensor<T> out = x.value();
    for (auto& v : out.data) v *= c;
    return make_op<T>("scale_var", std::move(out), {x, s}, [c](Node<T>& n) {
        const Tensor<T>& xv = n.parents[0]->value;
        if (n.parents[0]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i] * c;
        if (n.parents[1]->needs_grad) {
            T acc = T(0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i] * xv[i];
            n.parents[1]->grad[0] += acc;
        }
    });
}

template <typename T>
Var<T> one_minus(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = T(1) - v;
    return make_op<T>("one_minus", std::move(out), {a}, [](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] -= n.grad[i];
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<std::size_t> shape) {
    if (Tensor<T>::count(shape) != a.value().size()) throw ShapeError("reshape: element count mismatch");
    Tensor<T> out(shape, a.value().data);
    return make_op<T>("reshape", std::move(out), {a}, [](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
    });
}

// ---------------------------------------------------------------- linalg

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.ndim() != 2 || bv.ndim() != 2 || av.shape[1] != bv.shape[0])
        throw ShapeError("matmul: " + av.shape_str() + " x " + bv.shape_str());
    std::size_t m = av.shape[0], k = av.shape[1], p = bv.shape[1];
    Tensor<T> out({m, p});
    parallel_for(m, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i)
            for (std::size_t t = 0; t < k; ++t) {
                T x = av.data[i * k + t];
                const T* brow = &bv.data[t * p];
                T* orow = &out.data[i * p];
                for (std::size_t j = 0; j < p; ++j) orow[j] += x * brow[j];
            }
    });
    return make_op<T>("matmul", std::move(out), {a, b}, [m, k, p](Node<T>& n) {
        const Tensor<T>& A = n.parents[0]->value;
        const Tensor<T>& B = n.parents[1]->value;
        if (n.parents[0]->needs_grad) {
            Tensor<T>& dA = n.parents[0]->grad;
            parallel_for(m, [&](std::size_t i0, std::size_t i1) {
                for (std::size_t i = i0; i < i1; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        T acc = T(0);
                        const T* grow = &n.grad.data[i * p];
                        const T* brow = &B.data[t * p];
                        for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                        dA.data[i * k + t] += acc;
                    }
            });
        }
        if (n.parents[1]->needs_grad) {
            Tensor<T>& dB = n.parents[1]->grad;
            parallel_for(k, [&](std::size_t t0, std::size_t t1) {
                for (std::size_t t = t0; t < t1; ++t)
                    for (std::size_t i = 0; i < m; ++i) {
                        T x = A.data[i * k + t];
                        const T* grow = &n.grad.data[i * p];
                        T* drow = &dB.data[t * p];
                        for (std::size_t j = 0; j < p; ++j) drow[j] += x * grow[j];
                    }
            });
        }
    });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2) throw ShapeError("transpose: need 2-d tensor");
    std::size_t r = av.shape[0], c = av.shape[1];
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[j * r + i] = av.data[i * c + j];
    return make_op<T>("transpose", std::move(out), {a}, [r, c](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) n.parents[0]->grad[i * c + j] += n.grad[j * r + i];
    });
}

// y = x W + b, x:[n,din] W:[din,dout] b:[dout]
template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& wv = w.value();
    const Tensor<T>& bv = b.value();
    if (xv.ndim() != 2 || wv.ndim() != 2 || xv.shape[1] != wv.shape[0] || bv.size() != wv.shape[1])
        throw ShapeError("affine: " + xv.shape_str() + " x " + wv.shape_str() + " + " + bv.shape_str());
    std::size_t n = xv.shape[0], din = xv.shape[1], dout = wv.shape[1];
    Tensor<T> out({n, dout});
    parallel_for(n, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            T* orow = &out.data[i * dout];
            for (std::size_t j = 0; j < dout; ++j) orow[j] = bv.data[j];
            for (std::size_t t = 0; t < din; ++t) {
                T xi = xv.data[i * din + t];
                const T* wrow = &wv.data[t * dout];
                for (std::size_t j = 0; j < dout; ++j) orow[j] += xi * wrow[j];
            }
        }
    });
    return make_op<T>("affine", std::move(out), {x, w, b}, [n, din, dout](Node<T>& nd) {
        const Tensor<T>& X = nd.parents[0]->value;
        const Tensor<T>& W = nd.parents[1]->value;
        if (nd.parents[0]->needs_grad) {
            Tensor<T>& dX = nd.parents[0]->grad;
            parallel_for(n, [&](std::size_t i0, std::size_t i1) {
                for (std::size_t i = i0; i < i1; ++i)
                    for (std::size_t t = 0; t < din; ++t) {
                        T acc = T(0);
                        const T* grow = &nd.grad.data[i * dout];
                        const T* wrow = &W.data[t * dout];
                        for (std::size_t j = 0; j < dout; ++j) acc += grow[j] * wrow[j];
                        dX.data[i * din + t] += acc;
                    }
            });
        }
        if (nd.parents[1]->needs_grad) {
            Tensor<T>& dW = nd.parents[1]->grad;
            parallel_for(din, [&](std::size_t t0, std::size_t t1) {
                for (std::size_t t = t0; t < t1; ++t)
                    for (std::size_t i = 0; i < n; ++i) {
                        T xi = X.data[i * din + t];
                        const T* grow = &nd.grad.data[i * dout];
                        T* drow = &dW.data[t * dout];
                        for (std::size_t j = 0; j < dout; ++j) drow[j] += xi * grow[j];
                    }
            });
        }
        if (nd.parents[2]->needs_grad) {
            Tensor<T>& dB = nd.parents[2]->grad;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < dout; ++j) dB.data[j] += nd.grad.data[i * dout + j];
        }
    });
}

// -------------------------------------------------------- shape plumbing

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    std::size_t cols = parts[0].value().cols(), rows = 0;
    for (const auto& p : parts) {
        if (p.value().ndim() != 2 || p.value().cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += p.value().rows();
    }
    Tensor<T> out({rows, cols});
    std::size_t r = 0;
    for (const auto& p : parts) {
        std::copy(p.value().data.begin(), p.value().data.end(), out.data.begin() + r * cols);
        r += p.value().rows();
    }
    return make_op<T>("concat_rows", std::move(out), parts, [cols](Node<T>& n) {
        std::size_t r = 0;
        for (auto& par : n.parents) {
            std::size_t pr = par->value.rows();
            if (par->needs_grad)
                for (std::size_t i = 0; i < pr * cols; ++i) par->grad[i] += n.grad[r * cols + i];
            r += pr;
        }
    });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, std::size_t r0, std::size_t r1) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2 || r1 > av.shape[0] || r0 >= r1) throw ShapeError("slice_rows: bad range");
    std::size_t cols = av.shape[1];
    Tensor<T> out({r1 - r0, cols});
    std::copy(av.data.begin() + r0 * cols, av.data.begin() + r1 * cols, out.data.begin());
    return make_op<T>("slice_rows", std::move(out), {a}, [r0, cols](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[r0 * cols + i] += n.grad[i];
    });
}

// Repeat each row `times` consecutive times: [r,c] -> [r*times, c].
template <typename T>
Var<T> repeat_rows(const Var<T>& a, std::size_t times) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2 || times == 0) throw ShapeError("repeat_rows");
    std::size_t r = av.shape[0], c = av.shape[1];
    Tensor<T> out({r * times, c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t t = 0; t < times; ++t)
            std::copy(&av.data[i * c], &av.data[(i + 1) * c], &out.data[(i * times + t) * c]);
    return make_op<T>("repeat_rows", std::move(out), {a}, [r, c, times](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t t = 0; t < times; ++t)
                for (std::size_t j = 0; j < c; ++j)
                    n.parents[0]->grad[i * c + j] += n.grad[(i * times + t) * c + j];
    });
}

// Broadcast vector v:[d] across rows -> [rows, d].
template <typename T>
Var<T> bcast_row(const Var<T>& v, std::size_t rows) {
    std::size_t d = v.value().size();
    Tensor<T> out({rows, d});
    for (std::size_t i = 0; i < rows; ++i)
        std::copy(v.value().data.begin(), v.value().data.end(), &out.data[i * d]);
    return make_op<T>("bcast_row", std::move(out), {v}, [rows, d](Node<T>& n) {
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < d; ++j) n.parents[0]->grad[j] += n.grad[i * d + j];
    });
}

// Broadcast vector v:[r] across columns -> [r, cols].
template <typename T>
Var<T> bcast_col(const Var<T>& v, std::size_t cols) {
    std::size_t r = v.value().size();
    Tensor<T> out({r, cols});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < cols; ++j) out.data[i * cols + j] = v.value()[i];
    return make_op<T>("bcast_col", std::move(out), {v}, [r, cols](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < cols; ++j) acc += n.grad[i * cols + j];
            n.parents[0]->grad[i] += acc;
        }
    });
}

// x + s where s is a scalar graph variable (shape [1]).
template <typename T>
Var<T> shift_var(const Var<T>& x, const Var<T>& s) {
    if (s.value().size() != 1) throw ShapeError("shift_var: shift must be scalar");
    T c = s.value()[0];
    Tensor<T> out = x.value();
    for (auto& v : out.data) v += c;
    return make_op<T>("shift_var", std::move(out), {x, s}, [](Node<T>& n) {
        if (n.parents[0]->needs_grad)
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.parents[0]->grad[i] += n.grad[i];
        if (n.parents[1]->needs_grad) {
            T acc = T(0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) acc += n.grad[i];
            n.parents[1]->grad[0] += acc;
        }
    });
}

template <typename T>
Var<T> rows_sum(const Var<T>& a) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2) throw ShapeError("rows_sum: need 2-d tensor");
    std::size_t r = av.shape[0], c = av.shape[1];
    Tensor<T> out({r});
    for (std::size_t i = 0; i < r; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < c; ++j) acc += av.data[i * c + j];
        out[i] = acc;
    }
    return make_op<T>("rows_sum", std::move(out), {a}, [r, c](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) n.parents[0]->grad[i * c + j] += n.grad[i];
    });
}

template <typename T>
Var<T> rows_mean(const Var<T>& a) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2) throw ShapeError("rows_mean: need 2-d tensor");
    std::size_t r = av.shape[0], c = av.shape[1];
    Tensor<T> out({r});
    for (std::size_t i = 0; i < r; ++i) {
        T acc = T(0);
        for (std::size_t j = 0; j < c; ++j) acc += av.data[i * c + j];
        out[i] = acc / T(c);
    }
    return make_op<T>("rows_mean", std::move(out), {a}, [r, c](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i) {
            T g = n.grad[i] / T(c);
            for (std::size_t j = 0; j < c; ++j) n.parents[0]->grad[i * c + j] += g;
        }
    });
}

template <typename T>
Var<T> cols_mean(const Var<T>& a) {
    const Tensor<T>& av = a.value();
    if (av.ndim() != 2) throw ShapeError("cols_mean: need 2-d tensor");
    std::size_t r = av.shape[0], c = av.shape[1];
    Tensor<T> out({c});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += av.data[i * c + j] / T(r);
    return make_op<T>("cols_mean", std::move(out), {a}, [r, c](Node<T>& n) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) n.parents[0]->grad[i * c + j] += n.grad[j] / T(r);
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
    std::size_t n = a.value().size();
    T acc = T(0);
    for (T v : a.value().data) acc += v;
    Tensor<T> out({1});
    out[0] = acc / T(n);
    return make_op<T>("mean_all", std::move(out), {a}, [n](Node<T>& nd) {
        T g = nd.grad[0] / T(n);
        for (std::size_t i = 0; i < n; ++i) nd.parents[0]->grad[i] += g;
    });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
    T acc = T(0);
    for (T v : a.value().data) acc += v;
    Tensor<T> out({1});
    out[0] = acc;
    return make_op<T>("sum_all", std::move(out), {a}, [](Node<T>& nd) {
        for (std::size_t i = 0; i < nd.parents[0]->grad.size(); ++i) nd.parents[0]->grad[i] += nd.grad[0];
    });
}

// ------------------------------------------------------------ nonlinear

// Numerically stabilized softmax over the last axis.
template <typename T>
Var<T> softmax(const Var<T>& a) {
    const Tensor<T>& av = a.value();
    if (av.ndim() == 0 || av.shape.empty()) throw ShapeError("softmax: empty tensor");
    std::size_t c = av.shape.back();
    std::size_t r = av.size() / c;
    Tensor<T> out = av;
    for (std::size_t i = 0; i < r; ++i) {
        T* row = &out.data[i * c];
        T mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
    }
    return make_op<T>("softmax", std::move(out), {a}, [r, c](Node<T>& n) {
        const Tensor<T>& p = n.value;
        for (std::size_t i = 0; i < r; ++i) {
            T dot = T(0);
            for (std::size_t j = 0; j < c; ++j) dot += n.grad[i * c + j] * p[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                n.parents[0]->grad[i * c + j] += p[i * c + j] * (n.grad[i * c + j] - dot);
        }
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return make_op<T>("sigmoid", std::move(out), {a}, [](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            T s = n.value[i];
            n.parents[0]->grad[i] += n.grad[i] * s * (T(1) - s);
        }
    });
}

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename T>
Var<T> gelu(const Var<T>& a) {
    Tensor<T> out = a.value();
    for (auto& v : out.data) {
        double x = static_cast<double>(v);
        v = T(0.5 * x * (1.0 + std::erf(x * 0.7071067811865476)));
    }
    return make_op<T>("gelu", std::move(out), {a}, [](Node<T>& n) {
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            double x = static_cast<double>(n.parents[0]->value[i]);
            double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865476));
            double pdf = 0.3989422804014327 * std::exp(-0.5 * x * x);
            n.parents[0]->grad[i] += n.grad[i] * T(cdf + x * pdf);
        }
    });
}

// Per-slice normalization over the last axis; eps = 1e-5 in the denominator.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& delta) {
    const Tensor<T>& xv = x.value();
    std::size_t d = xv.shape.back();
    if (d < 2) throw ShapeError("layer_norm: last axis must be >= 2");
    if (gamma.value().size() != d || delta.value().size() != d)
        throw ShapeError("layer_norm: gamma/delta must have last-axis length");
    std::size_t r = xv.size() / d;
    const double eps = 1e-5;
    Tensor<T> out(xv.shape);
    auto xhat = std::make_shared<std::vector<T>>(xv.size());
    auto istd = std::make_shared<std::vector<T>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = &xv.data[i * d];
        double mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        (*istd)[i] = T(is);
        for (std::size_t j = 0; j < d; ++j) {
            T h = T((row[j] - mean) * is);
            (*xhat)[i * d + j] = h;
            out.data[i * d + j] = h * gamma.value()[j] + delta.value()[j];
        }
    }
    return make_op<T>("layer_norm", std::move(out), {x, gamma, delta}, [r, d, xhat, istd](Node<T>& n) {
        const Tensor<T>& g = n.parents[1]->value;
        for (std::size_t i = 0; i < r; ++i) {
            T m1 = T(0), m2 = T(0);
            for (std::size_t j = 0; j < d; ++j) {
                T dy = n.grad[i * d + j] * g[j];
                m1 += dy;
                m2 += dy * (*xhat)[i * d + j];
            }
            m1 /= T(d);
            m2 /= T(d);
            if (n.parents[0]->needs_grad)
                for (std::size_t j = 0; j < d; ++j) {
                    T dy = n.grad[i * d + j] * g[j];
                    n.parents[0]->grad[i * d + j] += (dy - m1 - (*xhat)[i * d + j] * m2) * (*istd)[i];
                }
            if (n.parents[1]->needs_grad)
                for (std::size_t j = 0; j < d; ++j)
                    n.parents[1]->grad[j] += n.grad[i * d + j] * (*xhat)[i * d + j];
            if (n.parents[2]->needs_grad)
                for (std::size_t j = 0; j < d; ++j) n.parents[2]->grad[j] += n.grad[i * d + j];
        }
    });
}

// --------------------------------------------------------- signal kernels

// out[c][n] = sum_u x[c][2n+u] k[c][u], n < floor(T/2); x right zero-padded.
template <typename T>
Var<T> conv1d_depthwise_down2(const Var<T>& x, const Var<T>& k) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = k.value();
    if (xv.ndim() != 2 || kv.ndim() != 2 || xv.shape[0] != kv.shape[0])
        throw ShapeError("conv1d_depthwise_down2: channel mismatch");
    std::size_t C = xv.shape[0], Tn = xv.shape[1], K = kv.shape[1];
    if (K < 2) throw ShapeError("conv1d_depthwise_down2: kernel too short");
    if (Tn < 2) throw ShapeError("conv1d_depthwise_down2: input too short");
    std::size_t N = Tn / 2;
    Tensor<T> out({C, N});
    parallel_for(C, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                T acc = T(0);
                std::size_t base = 2 * n;
                std::size_t umax = std::min(K, Tn - base);
                for (std::size_t u = 0; u < umax; ++u) acc += xv.data[c * Tn + base + u] * kv.data[c * K + u];
                out.data[c * N + n] = acc;
            }
    });
    return make_op<T>("conv1d_depthwise_down2", std::move(out), {x, k}, [C, Tn, K, N](Node<T>& nd) {
        const Tensor<T>& X = nd.parents[0]->value;
        const Tensor<T>& Kk = nd.parents[1]->value;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                T g = nd.grad[c * N + n];
                std::size_t base = 2 * n;
                std::size_t umax = std::min(K, Tn - base);
                if (nd.parents[0]->needs_grad)
                    for (std::size_t u = 0; u < umax; ++u)
                        nd.parents[0]->grad[c * Tn + base + u] += g * Kk.data[c * K + u];
                if (nd.parents[1]->needs_grad)
                    for (std::size_t u = 0; u < umax; ++u)
                        nd.parents[1]->grad[c * K + u] += g * X.data[c * Tn + base + u];
            }
    });
}

// Same-length depthwise convolution, odd kernel, zero padding.
template <typename T>
Var<T> conv1d_depthwise_same(const Var<T>& x, const Var<T>& k) {
    const Tensor<T>& xv = x.value();
    const Tensor<T>& kv = k.value();
    if (xv.ndim() != 2 || kv.ndim() != 2 || xv.shape[0] != kv.shape[0])
        throw ShapeError("conv1d_depthwise_same: channel mismatch");
    std::size_t C = xv.shape[0], Tn = xv.shape[1], K = kv.shape[1];
    if (K % 2 == 0) throw ShapeError("conv1d_depthwise_same: kernel must be odd");
    std::ptrdiff_t half = K / 2;
    Tensor<T> out({C, Tn});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < Tn; ++t) {
            T acc = T(0);
            for (std::size_t u = 0; u < K; ++u) {
                std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(u) - half;
                if (src >= 0 && src < static_cast<std::ptrdiff_t>(Tn))
                    acc += xv.data[c * Tn + src] * kv.data[c * K + u];
            }
            out.data[c * Tn + t] = acc;
        }
    return make_op<T>("conv1d_depthwise_same", std::move(out), {x, k}, [C, Tn, K, half](Node<T>& nd) {
        const Tensor<T>& X = nd.parents[0]->value;
        const Tensor<T>& Kk = nd.parents[1]->value;
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < Tn; ++t) {
                T g = nd.grad[c * Tn + t];
                for (std::size_t u = 0; u < K; ++u) {
                    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(u) - half;
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(Tn)) continue;
                    if (nd.parents[0]->needs_grad) nd.parents[0]->grad[c * Tn + src] += g * Kk.data[c * K + u];
                    if (nd.parents[1]->needs_grad) nd.parents[1]->grad[c * K + u] += g * X.data[c * Tn + src];
                }
            }
    });
}

// out[c][n] = x[c][floor(n/s)], length scaled by s.
template <typename T>
Var<T> repeat_cols(const Var<T>& x, std::size_t s) {
    const Tensor<T>& xv = x.value();
    if (xv.ndim() != 2 || s == 0) throw ShapeError("repeat_cols");
    std::size_t C = xv.shape[0], Tn = xv.shape[1];
    Tensor<T> out({C, Tn * s});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < Tn * s; ++n) out.data[c * Tn * s + n] = xv.data[c * Tn + n / s];
    return make_op<T>("repeat_cols", std::move(out), {x, }, [C, Tn, s](Node<T>& nd) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < Tn * s; ++n)
                nd.parents[0]->grad[c * Tn + n / s] += nd.grad[c * Tn * s + n];
    });
}

template <typename T>
Var<T> upsample_nearest2(const Var<T>& x) {
    return repeat_cols(x, 2);
}

// Non-overlapping mean over segments of length s along time.
template <typename T>
Var<T> segment_mean(const Var<T>& x, std::size_t s) {
    const Tensor<T>& xv = x.value();
    if (xv.ndim() != 2 || s == 0 || xv.shape[1] % s != 0)
        throw ShapeError("segment_mean: time axis not divisible by segment");
    std::size_t C = xv.shape[0], Tn = xv.shape[1], M = Tn / s;
    Tensor<T> out({C, M});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < M; ++m) {
            T acc = T(0);
            for (std::size_t u = 0; u < s; ++u) acc += xv.data[c * Tn + m * s + u];
            out.data[c * M + m] = acc / T(s);
        }
    return make_op<T>("segment_mean", std::move(out), {x}, [C, Tn, s, M](Node<T>& nd) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t m = 0; m < M; ++m) {
                T g = nd.grad[c * M + m] / T(s);
                for (std::size_t u = 0; u < s; ++u) nd.parents[0]->grad[c * Tn + m * s + u] += g;
            }
    });
}

// Slice each row into floor(T/w) patches of width w: [R,T] -> [R*N, w].
template <typename T>
Var<T> patchify_rows(const Var<T>& x, std::size_t w) {
    const Tensor<T>& xv = x.value();
    if (xv.ndim() != 2 || w < 2) throw ShapeError("patchify_rows: need 2-d input, w >= 2");
    std::size_t R = xv.shape[0], Tn = xv.shape[1];
    if (w > Tn) throw ShapeError("patchify_rows: patch wider than signal");
    std::size_t N = Tn / w;
    Tensor<T> out({R * N, w});
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t n = 0; n < N; ++n)
            std::copy(&xv.data[r * Tn + n * w], &xv.data[r * Tn + (n + 1) * w], &out.data[(r * N + n) * w]);
    return make_op<T>("patchify_rows", std::move(out), {x}, [R, Tn, w, N](Node<T>& nd) {
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t u = 0; u < w; ++u)
                    nd.parents[0]->grad[r * Tn + n * w + u] += nd.grad[(r * N + n) * w + u];
    });
}

// ------------------------------------------------------------- attention

namespace detail {

// Rotate consecutive pairs of a row vector by pos * theta_j,
// theta_j = 10000^(-2j/d). sign=-1 applies the inverse rotation.
template <typename T>
void rope_apply_row(T* row, std::size_t d, double pos, int sign) {
    for (std::size_t j = 0; j + 1 < d; j += 2) {
        double theta = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
        double a = sign * pos * theta;
        double ca = std::cos(a), sa = std::sin(a);
        T x0 = row[j], x1 = row[j + 1];
        row[j] = T(ca * x0 - sa * x1);
        row[j + 1] = T(sa * x0 + ca * x1);
    }
}

}  // namespace detail

// Standalone rotary embedding over [n, d_head]; positions default to 0..n-1.
template <typename T>
Var<T> rope_rotate(const Var<T>& x, std::vector<double> positions = {}) {
    const Tensor<T>& xv = x.value();
    if (xv.ndim() != 2 || xv.shape[1] % 2 != 0) throw ShapeError("rope_rotate: head dim must be even");
    std::size_t n = xv.shape[0], d = xv.shape[1];
    if (positions.empty()) {
        positions.resize(n);
        for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<double>(i);
    }
    if (positions.size() != n) throw ShapeError("rope_rotate: positions length mismatch");
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < n; ++i) detail::rope_apply_row(&out.data[i * d], d, positions[i], +1);
    auto pos = std::make_shared<std::vector<double>>(std::move(positions));
    return make_op<T>("rope_rotate", std::move(out), {x}, [n, d, pos](Node<T>& nd) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<T> g(&nd.grad.data[i * d], &nd.grad.data[(i + 1) * d]);
            detail::rope_apply_row(g.data(), d, (*pos)[i], -1);
            for (std::size_t j = 0; j < d; ++j) nd.parents[0]->grad[i * d + j] += g[j];
        }
    });
}

// Multi-head scaled dot-product attention over already-projected Q:[nq,d],
// K,V:[nk,d]. Scale is 1/sqrt(d/heads); with `rope` set, per-head query/key
// sub-vectors are rotated by token position before the dot product.
template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                 bool rope = false, std::vector<double> pos_q = {}, std::vector<double> pos_k = {}) {
    const Tensor<T>& qv = q.value();
    const Tensor<T>& kv = k.value();
    const Tensor<T>& vv = v.value();
    if (qv.ndim() != 2 || kv.ndim() != 2 || !kv.same_shape(vv) || qv.shape[1] != kv.shape[1])
        throw ShapeError("attention: Q [nq,d], K and V [nk,d] required");
    std::size_t nq = qv.shape[0], nk = kv.shape[0], d = qv.shape[1];
    if (heads == 0 || d % heads != 0) throw ShapeError("attention: d not divisible by heads");
    std::size_t dh = d / heads;
    if (rope && dh % 2 != 0) throw ShapeError("attention: rope needs even per-head dim");
    auto iota = [](std::vector<double>& p, std::size_t n) {
        if (p.empty()) {
            p.resize(n);
            for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<double>(i);
        }
        if (p.size() != n) throw ShapeError("attention: positions length mismatch");
    };
    iota(pos_q, nq);
    iota(pos_k, nk);
    T sc = T(1.0 / std::sqrt(static_cast<double>(dh)));

    // rotated copies of Q and K (plain copies when rope is off)
    auto qr = std::make_shared<Tensor<T>>(qv);
    auto kr = std::make_shared<Tensor<T>>(kv);
    if (rope)
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < nq; ++i)
                detail::rope_apply_row(&qr->data[i * d + h * dh], dh, pos_q[i], +1);
            for (std::size_t j = 0; j < nk; ++j)
                detail::rope_apply_row(&kr->data[j * d + h * dh], dh, pos_k[j], +1);
        }

    auto probs = std::make_shared<Tensor<T>>(std::vector<std::size_t>{heads, nq, nk});
    Tensor<T> out({nq, d});
    parallel_for(heads, [&](std::size_t h0, std::size_t h1) {
        for (std::size_t h = h0; h < h1; ++h) {
            std::size_t off = h * dh;
            for (std::size_t i = 0; i < nq; ++i) {
                T* prow = &probs->data[(h * nq + i) * nk];
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < nk; ++j) {
                    T acc = T(0);
                    for (std::size_t t = 0; t < dh; ++t)
                        acc += qr->data[i * d + off + t] * kr->data[j * d + off + t];
                    prow[j] = acc * sc;
                    mx = std::max(mx, prow[j]);
                }
                T sum = T(0);
                for (std::size_t j = 0; j < nk; ++j) {
                    prow[j] = std::exp(prow[j] - mx);
                    sum += prow[j];
                }
                T* orow = &out.data[i * d + off];
                for (std::size_t j = 0; j < nk; ++j) {
                    prow[j] /= sum;
                    const T* vrow = &vv.data[j * d + off];
                    for (std::size_t t = 0; t < dh; ++t) orow[t] += prow[j] * vrow[t];
                }
            }
        }
    });

    auto pq = std::make_shared<std::vector<double>>(std::move(pos_q));
    auto pk = std::make_shared<std::vector<double>>(std::move(pos_k));
    return make_op<T>("attention", std::move(out), {q, k, v},
                      [nq, nk, d, dh, heads, sc, rope, qr, kr, probs, pq, pk](Node<T>& nd) {
        const Tensor<T>& V = nd.parents[2]->value;
        Tensor<T> dqr({nq, d}), dkr({nk, d});
        parallel_for(heads, [&](std::size_t h0, std::size_t h1) {
            for (std::size_t h = h0; h < h1; ++h) {
                std::size_t off = h * dh;
                std::vector<T> dp(nk);
                for (std::size_t i = 0; i < nq; ++i) {
                    const T* prow = &probs->data[(h * nq + i) * nk];
                    const T* grow = &nd.grad.data[i * d + off];
                    T dot = T(0);
                    for (std::size_t j = 0; j < nk; ++j) {
                        T acc = T(0);
                        const T* vrow = &V.data[j * d + off];
                        for (std::size_t t = 0; t < dh; ++t) acc += grow[t] * vrow[t];
                        dp[j] = acc;
                        dot += acc * prow[j];
                    }
                    for (std::size_t j = 0; j < nk; ++j) {
                        T ds = prow[j] * (dp[j] - dot) * sc;
                        for (std::size_t t = 0; t < dh; ++t) {
                            dqr.data[i * d + off + t] += ds * kr->data[j * d + off + t];
                            dkr.data[j * d + off + t] += ds * qr->data[i * d + off + t];
                        }
                    }
                }
            }
        });
        if (nd.parents[2]->needs_grad) {
            Tensor<T>& dV = nd.parents[2]->grad;
            for (std::size_t h = 0; h < heads; ++h) {
                std::size_t off = h * dh;
                for (std::size_t i = 0; i < nq; ++i) {
                    const T* prow = &probs->data[(h * nq + i) * nk];
                    const T* grow = &nd.grad.data[i * d + off];
                    for (std::size_t j = 0; j < nk; ++j)
                        for (std::size_t t = 0; t < dh; ++t) dV.data[j * d + off + t] += prow[j] * grow[t];
                }
            }
        }
        if (rope)
            for (std::size_t h = 0; h < heads; ++h) {
                for (std::size_t i = 0; i < nq; ++i)
                    detail::rope_apply_row(&dqr.data[i * d + h * dh], dh, (*pq)[i], -1);
                for (std::size_t j = 0; j < nk; ++j)
                    detail::rope_apply_row(&dkr.data[j * d + h * dh], dh, (*pk)[j], -1);
            }
        if (nd.parents[0]->needs_grad)
            for (std::size_t i = 0; i < nq * d; ++i) nd.parents[0]->grad[i] += dqr[i];
        if (nd.parents[1]->needs_grad)
            for (std::size_t i = 0; i < nk * d; ++i) nd.parents[1]->grad[i] += dkr[i];
    });
}

// ---------------------------------------------------------------- losses

namespace detail {

template <typename T>
inline T smooth_l1_term(T u) {
    T au = std::fabs(u);
    return au < T(1) ? T(0.5) * u * u : au - T(0.5);
}

template <typename T>
inline T smooth_l1_slope(T u) {
    return std::fabs(u) < T(1) ? u : (u > T(0) ? T(1) : T(-1));
}

}  // namespace detail

// Mean elementwise Smooth-L1 (transition at |u| = 1) against a fixed target.
template <typename T>
Var<T> smooth_l1(const Var<T>& pred, const Tensor<T>& target) {
    require_same_shape(pred.value(), target, "smooth_l1");
    std::size_t n = pred.value().size();
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) acc += detail::smooth_l1_term(pred.value()[i] - target[i]);
    Tensor<T> out({1});
    out[0] = acc / T(n);
    auto tgt = std::make_shared<Tensor<T>>(target);
    return make_op<T>("smooth_l1", std::move(out), {pred}, [n, tgt](Node<T>& nd) {
        T g = nd.grad[0] / T(n);
        for (std::size_t i = 0; i < n; ++i)
            nd.parents[0]->grad[i] += g * detail::smooth_l1_slope(nd.parents[0]->value[i] - (*tgt)[i]);
    });
}

// Eq-style masked patch loss: mean Smooth-L1 over rows with counted[r] != 0;
// rows outside the mask contribute exactly zero, including to the gradient.
template <typename T>
Var<T> smooth_l1_masked_rows(const Var<T>& pred, const Tensor<T>& target,
                             const std::vector<std::uint8_t>& counted) {
    require_same_shape(pred.value(), target, "smooth_l1_masked_rows");
    if (pred.value().ndim() != 2 || counted.size() != pred.value().shape[0])
        throw ShapeError("smooth_l1_masked_rows: mask/row mismatch");
    std::size_t rows = pred.value().shape[0], w = pred.value().shape[1];
    std::size_t m = 0;
    for (auto c : counted) m += c != 0;
    if (m == 0) throw ShapeError("smooth_l1_masked_rows: empty mask set");
    T acc = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!counted[r]) continue;
        for (std::size_t u = 0; u < w; ++u)
            acc += detail::smooth_l1_term(pred.value()[r * w + u] - target[r * w + u]);
    }
    Tensor<T> out({1});
    out[0] = acc / T(m * w);
    auto tgt = std::make_shared<Tensor<T>>(target);
    auto cnt = std::make_shared<std::vector<std::uint8_t>>(counted);
    return make_op<T>("smooth_l1_masked_rows", std::move(out), {pred}, [rows, w, m, tgt, cnt](Node<T>& nd) {
        T g = nd.grad[0] / T(m * w);
        for (std::size_t r = 0; r < rows; ++r) {
            if (!(*cnt)[r]) continue;
            for (std::size_t u = 0; u < w; ++u)
                nd.parents[0]->grad[r * w + u] +=
                    g * detail::smooth_l1_slope(nd.parents[0]->value[r * w + u] - (*tgt)[r * w + u]);
        }
    });
}

// Softmax cross-entropy with label smoothing, mean over rows.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int>& labels, double smoothing = 0.0) {
    const Tensor<T>& lv = logits.value();
    if (lv.ndim() != 2 || labels.size() != lv.shape[0]) throw ShapeError("cross_entropy: label/row mismatch");
    std::size_t b = lv.shape[0], n = lv.shape[1];
    if (n < 2) throw ShapeError("cross_entropy: need >= 2 classes");
    T off = T(smoothing / n);
    T on = T(1.0 - smoothing + smoothing / n);
    auto probs = std::make_shared<Tensor<T>>(lv.shape);
    T loss = T(0);
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n)
            throw ShapeError("cross_entropy: label out of range");
        const T* row = &lv.data[i * n];
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) sum += std::exp(row[j] - mx);
        T lse = mx + std::log(sum);
        for (std::size_t j = 0; j < n; ++j) {
            probs->data[i * n + j] = std::exp(row[j] - lse);
            T y = (static_cast<int>(j) == labels[i]) ? on : off;
            loss -= y * (row[j] - lse);
        }
    }
    Tensor<T> out({1});
    out[0] = loss / T(b);
    auto lab = std::make_shared<std::vector<int>>(labels);
    return make_op<T>("cross_entropy", std::move(out), {logits}, [b, n, on, off, probs, lab](Node<T>& nd) {
        T g = nd.grad[0] / T(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                T y = (static_cast<int>(j) == (*lab)[i]) ? on : off;
                nd.parents[0]->grad[i * n + j] += g * (probs->data[i * n + j] - y);
            }
    });
}

}  // namespace pwv
