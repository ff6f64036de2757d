#include "capsnav/layers.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace capsnav {

Tensor init_uniform(Shape shape, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.value()) v = rng.uniform(-bound, bound);
    t.set_requires_grad(true);
    return t;
}

// ---- conv2d ----

ConvParams make_conv(int in_ch, int out_ch, int kh, int kw, int stride, int padding, Rng& rng) {
    if (kh < 1 || kw < 1 || stride < 1 || padding < 0)
        throw ConfigError("make_conv: invalid kernel/stride/padding");
    int fan_in = in_ch * kh * kw;
    ConvParams p;
    p.weights = init_uniform({out_ch, in_ch, kh, kw}, fan_in, rng);
    p.bias = init_uniform({out_ch}, fan_in, rng);
    p.stride = stride;
    p.padding = padding;
    return p;
}

namespace {

struct ConvDims {
    int in_ch, h, w, out_ch, kh, kw, stride, pad, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const ConvParams& p) {
    if (x.rank() != 3) throw ShapeError("conv2d: input must be [ch, h, w], got " + shape_str(x.shape()));
    ConvDims d;
    d.in_ch = x.shape()[0];
    d.h = x.shape()[1];
    d.w = x.shape()[2];
    d.out_ch = p.weights.shape()[0];
    d.kh = p.weights.shape()[2];
    d.kw = p.weights.shape()[3];
    d.stride = p.stride;
    d.pad = p.padding;
    if (p.weights.shape()[1] != d.in_ch)
        throw ShapeError("conv2d: weight in_ch " + std::to_string(p.weights.shape()[1]) +
                         " does not match input channels " + std::to_string(d.in_ch));
    d.oh = (d.h + 2 * d.pad - d.kh) / d.stride + 1;
    d.ow = (d.w + 2 * d.pad - d.kw) / d.stride + 1;
    if (d.h + 2 * d.pad < d.kh || d.w + 2 * d.pad < d.kw || d.oh < 1 || d.ow < 1)
        throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()));
    return d;
}

// col: [in_ch*kh*kw, oh*ow], one column per output pixel.
void im2col(const std::vector<double>& x, const ConvDims& d, std::vector<double>& col) {
    const int P = d.oh * d.ow;
    col.assign(static_cast<std::size_t>(d.in_ch) * d.kh * d.kw * P, 0.0);
    for (int c = 0; c < d.in_ch; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                double* row = col.data() + (static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx)) * P;
                for (int oy = 0; oy < d.oh; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        row[oy * d.ow + ox] = x[(static_cast<std::size_t>(c) * d.h + iy) * d.w + ix];
                    }
                }
            }
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, std::vector<double>& x) {
    const int P = d.oh * d.ow;
    for (int c = 0; c < d.in_ch; ++c)
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* row =
                    col.data() + (static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx)) * P;
                for (int oy = 0; oy < d.oh; ++oy) {
                    int iy = oy * d.stride + ky - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int ox = 0; ox < d.ow; ++ox) {
                        int ix = ox * d.stride + kx - d.pad;
                        if (ix < 0 || ix >= d.w) continue;
                        x[(static_cast<std::size_t>(c) * d.h + iy) * d.w + ix] += row[oy * d.ow + ox];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
    ConvDims d = conv_dims(x, p);
    const int K = d.in_ch * d.kh * d.kw;
    const int P = d.oh * d.ow;

    std::vector<double> col;
    im2col(x.value(), d, col);

    Tensor out({d.out_ch, d.oh, d.ow});
    // y = W_mat [out_ch, K] * col [K, P]
    kernels::dgemm(false, false, d.out_ch, P, K, 1.0, p.weights.value().data(), K, col.data(), P,
                   0.0, out.value().data(), P);
    for (int c = 0; c < d.out_ch; ++c) {
        double b = p.bias.value()[c];
        double* row = out.value().data() + static_cast<std::size_t>(c) * P;
        for (int i = 0; i < P; ++i) row[i] += b;
    }

    if (Tape* tape = Tape::active();
        tape && (x.requires_grad() || p.weights.requires_grad() || p.bias.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [xn = x.node(), wn = p.weights.node(), bn = p.bias.node(),
                           on = out.node(), d, K, P, col = std::move(col)] {
            const double* g = on->grad.data();
            if (bn->requires_grad) {
                for (int c = 0; c < d.out_ch; ++c) {
                    double s = 0.0;
                    for (int i = 0; i < P; ++i) s += g[static_cast<std::size_t>(c) * P + i];
                    bn->grad[c] += s;
                }
            }
            if (wn->requires_grad)  // dW += g [out_ch, P] * col^T [P, K]
                kernels::dgemm(false, true, d.out_ch, K, P, 1.0, g, P, col.data(), P, 1.0,
                               wn->grad.data(), K);
            if (xn->requires_grad) {  // dcol = W^T [K, out_ch] * g [out_ch, P]
                std::vector<double> dcol(static_cast<std::size_t>(K) * P);
                kernels::dgemm(true, false, K, P, d.out_ch, 1.0, wn->value.data(), K, g, P, 0.0,
                               dcol.data(), P);
                col2im_add(dcol, d, xn->grad);
            }
        });
    }
    return out;
}

// ---- batch norm ----

BatchNormParams make_batch_norm(int channels) {
    BatchNormParams p;
    p.gamma = Tensor({channels}, 1.0);
    p.gamma.set_requires_grad(true);
    p.beta = Tensor({channels}, 0.0);
    p.beta.set_requires_grad(true);
    p.running_mean = Tensor({channels}, 0.0);
    p.running_var = Tensor({channels}, 1.0);
    return p;
}

Tensor batch_norm(const Tensor& x, BatchNormParams& p, bool update_running_stats) {
    if (x.rank() != 3) throw ShapeError("batch_norm: input must be [ch, h, w]");
    const int ch = x.shape()[0];
    const int m = x.shape()[1] * x.shape()[2];
    if (ch != p.gamma.shape()[0])
        throw ShapeError("batch_norm: channel extent " + std::to_string(ch) +
                         " does not match params " + shape_str(p.gamma.shape()));
    if (m == 0) throw ContractError("batch_norm: zero-element batch");

    Tensor out(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    std::vector<double> mean_c(ch), var_c(ch);

    if (p.train_mode) {
        for (int c = 0; c < ch; ++c) {
            const double* xc = xv.data() + static_cast<std::size_t>(c) * m;
            double mu = 0.0;
            for (int i = 0; i < m; ++i) mu += xc[i];
            mu /= m;
            double var = 0.0;
            for (int i = 0; i < m; ++i) var += (xc[i] - mu) * (xc[i] - mu);
            var /= m;
            mean_c[c] = mu;
            var_c[c] = var;
        }
        if (update_running_stats) {
            for (int c = 0; c < ch; ++c) {
                p.running_mean.value()[c] =
                    (1.0 - p.momentum) * p.running_mean.value()[c] + p.momentum * mean_c[c];
                p.running_var.value()[c] =
                    (1.0 - p.momentum) * p.running_var.value()[c] + p.momentum * var_c[c];
            }
        }
    } else {
        mean_c = p.running_mean.value();
        var_c = p.running_var.value();
    }

    for (int c = 0; c < ch; ++c) {
        const double* xc = xv.data() + static_cast<std::size_t>(c) * m;
        double* oc = ov.data() + static_cast<std::size_t>(c) * m;
        double inv = 1.0 / std::sqrt(var_c[c] + p.eps);
        double gam = p.gamma.value()[c], bet = p.beta.value()[c];
        for (int i = 0; i < m; ++i) oc[i] = gam * (xc[i] - mean_c[c]) * inv + bet;
    }

    if (Tape* tape = Tape::active();
        tape && (x.requires_grad() || p.gamma.requires_grad() || p.beta.requires_grad())) {
        out.set_requires_grad(true);
        bool train = p.train_mode;
        double eps = p.eps;
        tape->record(out, [xn = x.node(), gn = p.gamma.node(), bn = p.beta.node(),
                           on = out.node(), mean_c = std::move(mean_c), var_c = std::move(var_c),
                           ch, m, train, eps] {
            for (int c = 0; c < ch; ++c) {
                const double* g = on->grad.data() + static_cast<std::size_t>(c) * m;
                const double* xc = xn->value.data() + static_cast<std::size_t>(c) * m;
                double inv = 1.0 / std::sqrt(var_c[c] + eps);
                double gam = gn->value[c];
                double dgamma = 0.0, dbeta = 0.0;
                for (int i = 0; i < m; ++i) {
                    dgamma += g[i] * (xc[i] - mean_c[c]) * inv;
                    dbeta += g[i];
                }
                if (gn->requires_grad) gn->grad[c] += dgamma;
                if (bn->requires_grad) bn->grad[c] += dbeta;
                if (!xn->requires_grad) continue;
                double* dx = xn->grad.data() + static_cast<std::size_t>(c) * m;
                if (!train) {
                    for (int i = 0; i < m; ++i) dx[i] += g[i] * gam * inv;
                    continue;
                }
                // dxhat_i = g_i * gamma; fold mean/var paths in one pass
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int i = 0; i < m; ++i) {
                    double dxhat = g[i] * gam;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * (xc[i] - mean_c[c]) * inv;
                }
                for (int i = 0; i < m; ++i) {
                    double xhat = (xc[i] - mean_c[c]) * inv;
                    double dxhat = g[i] * gam;
                    dx[i] += inv * (dxhat - sum_dxhat / m - xhat * sum_dxhat_xhat / m);
                }
            }
        });
    }
    return out;
}

// ---- elu ----

Tensor elu(const Tensor& x, double alpha) {
    Tensor out(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = xv[i] > 0.0 ? xv[i] : alpha * (std::exp(xv[i]) - 1.0);
    if (Tape* tape = Tape::active(); tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record(out, [xn = x.node(), on = out.node(), alpha] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                double d = xn->value[i] >= 0.0 ? 1.0 : on->value[i] + alpha;  // alpha*e^x
                xn->grad[i] += on->grad[i] * d;
            }
        });
    }
    return out;
}

// ---- linear ----

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (x.rank() != 1 || W.rank() != 2 || b.rank() != 1)
        throw ShapeError("linear: expects x[n], W[m,n], b[m]");
    const int m = W.shape()[0], n = W.shape()[1];
    if (x.shape()[0] != n || b.shape()[0] != m)
        throw ShapeError("linear: extents disagree: x" + shape_str(x.shape()) + " W" +
                         shape_str(W.shape()) + " b" + shape_str(b.shape()));
    Tensor out({m});
    kernels::dgemm(false, false, m, 1, n, 1.0, W.value().data(), n, x.value().data(), 1, 0.0,
                   out.value().data(), 1);
    for (int i = 0; i < m; ++i) out.value()[i] += b.value()[i];
    if (Tape* tape = Tape::active();
        tape && (x.requires_grad() || W.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [xn = x.node(), wn = W.node(), bn = b.node(), on = out.node(), m, n] {
            const double* g = on->grad.data();
            if (bn->requires_grad) kernels::axpy(static_cast<std::size_t>(m), 1.0, g, bn->grad.data());
            if (wn->requires_grad)  // dW += g [m,1] * x^T [1,n]
                kernels::dgemm(false, false, m, n, 1, 1.0, g, 1, xn->value.data(), n, 1.0,
                               wn->grad.data(), n);
            if (xn->requires_grad)  // dx += W^T [n,m] * g [m,1]
                kernels::dgemm(true, false, n, 1, m, 1.0, wn->value.data(), n, g, 1, 1.0,
                               xn->grad.data(), 1);
        });
    }
    return out;
}

// ---- softmax ----

std::vector<double> softmax_values(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1 || logits.shape()[0] < 1) throw ShapeError("softmax: expects rank-1");
    Tensor out({logits.shape()[0]}, softmax_values(logits.value()));
    if (Tape* tape = Tape::active(); tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        tape->record(out, [ln = logits.node(), on = out.node()] {
            // dlogits = p .* (g - <g, p>)
            double dot = 0.0;
            for (std::size_t i = 0; i < on->grad.size(); ++i) dot += on->grad[i] * on->value[i];
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                ln->grad[i] += on->value[i] * (on->grad[i] - dot);
        });
    }
    return out;
}

Tensor log_softmax(const Tensor& logits) {
    if (logits.rank() != 1 || logits.shape()[0] < 1) throw ShapeError("log_softmax: expects rank-1");
    const auto& lv = logits.value();
    double mx = *std::max_element(lv.begin(), lv.end());
    double z = 0.0;
    for (double v : lv) z += std::exp(v - mx);
    double logz = mx + std::log(z);
    Tensor out({logits.shape()[0]});
    for (std::size_t i = 0; i < lv.size(); ++i) out.value()[i] = lv[i] - logz;
    if (Tape* tape = Tape::active(); tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        tape->record(out, [ln = logits.node(), on = out.node()] {
            // dlogits = g - softmax * sum(g)
            double gsum = 0.0;
            for (double g : on->grad) gsum += g;
            for (std::size_t i = 0; i < on->grad.size(); ++i)
                ln->grad[i] += on->grad[i] - std::exp(on->value[i]) * gsum;
        });
    }
    return out;
}

// ---- LSTM ----

LstmParams make_lstm(int input_size, int hidden_size, Rng& rng) {
    LstmParams p;
    p.input_size = input_size;
    p.hidden_size = hidden_size;
    int fan_in = input_size + hidden_size;
    p.W = init_uniform({4 * hidden_size, fan_in}, fan_in, rng);
    p.b = init_uniform({4 * hidden_size}, fan_in, rng);
    // forget gate bias starts at 1
    for (int i = hidden_size; i < 2 * hidden_size; ++i) p.b.value()[i] = 1.0;
    return p;
}

LstmState lstm_zero_state(int hidden_size) {
    return LstmState{Tensor({hidden_size}, 0.0), Tensor({hidden_size}, 0.0)};
}

LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p) {
    if (x.shape() != Shape{p.input_size} || state.h.shape() != Shape{p.hidden_size} ||
        state.c.shape() != Shape{p.hidden_size})
        throw ShapeError("lstm_step: shapes disagree with params");
    const int H = p.hidden_size;
    Tensor xh = concat(x, state.h);
    Tensor gates = linear(xh, p.W, p.b);
    Tensor i = sigmoid(slice(gates, 0, H));
    Tensor f = sigmoid(slice(gates, H, 2 * H));
    Tensor g = tanh(slice(gates, 2 * H, 3 * H));
    Tensor o = sigmoid(slice(gates, 3 * H, 4 * H));
    Tensor c_new = add(mul(f, state.c), mul(i, g));
    Tensor h_new = mul(o, tanh(c_new));
    return LstmState{h_new, c_new};
}

}  // namespace capsnav
