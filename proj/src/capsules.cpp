#include "capsnav/capsules.hpp"

#include <cmath>

namespace capsnav {

CapsuleBank make_bank(Tensor poses) {
    if (poses.rank() != 2) throw ShapeError("capsule bank poses must be [count, dim]");
    CapsuleBank b;
    b.count = poses.shape()[0];
    b.dim = poses.shape()[1];
    b.poses = std::move(poses);
    return b;
}

DenseCapsParams make_dense_caps(int in_count, int in_dim, int out_count, int out_dim,
                                int routing_iters, Rng& rng) {
    if (routing_iters < 1) throw ConfigError("routing_iters must be >= 1");
    DenseCapsParams p;
    p.W = init_uniform({in_count, out_count, out_dim, in_dim}, in_dim, rng);
    p.routing_iters = routing_iters;
    return p;
}

// ---- squash ----

namespace {

// Rows of [count, dim]; rank-1 input is one row.
void squash_forward(const std::vector<double>& s, int count, int dim, std::vector<double>& v) {
    for (int r = 0; r < count; ++r) {
        const double* sr = s.data() + static_cast<std::size_t>(r) * dim;
        double* vr = v.data() + static_cast<std::size_t>(r) * dim;
        double n2 = 0.0;
        for (int k = 0; k < dim; ++k) n2 += sr[k] * sr[k];
        double n = std::sqrt(n2);
        double f = n > 0.0 ? n / (1.0 + n2) : 0.0;  // v = s * |s|/(1+|s|^2)
        for (int k = 0; k < dim; ++k) vr[k] = sr[k] * f;
    }
}

}  // namespace

Tensor squash(const Tensor& s) {
    if (s.rank() != 1 && s.rank() != 2) throw ShapeError("squash: expects rank-1 or rank-2");
    const int count = s.rank() == 2 ? s.shape()[0] : 1;
    const int dim = s.rank() == 2 ? s.shape()[1] : s.shape()[0];
    Tensor out(s.shape());
    squash_forward(s.value(), count, dim, out.value());
    if (Tape* tape = Tape::active(); tape && s.requires_grad()) {
        out.set_requires_grad(true);
        tape->record(out, [sn = s.node(), on = out.node(), count, dim] {
            // v = f(n) s with f = n/(1+n^2):
            // ds = f g + (f'(n)/n) (g . s) s,  f' = (1-n^2)/(1+n^2)^2
            for (int r = 0; r < count; ++r) {
                const double* sr = sn->value.data() + static_cast<std::size_t>(r) * dim;
                const double* gr = on->grad.data() + static_cast<std::size_t>(r) * dim;
                double* dr = sn->grad.data() + static_cast<std::size_t>(r) * dim;
                double n2 = 0.0, dot = 0.0;
                for (int k = 0; k < dim; ++k) {
                    n2 += sr[k] * sr[k];
                    dot += gr[k] * sr[k];
                }
                if (n2 == 0.0) continue;  // gradient of squash at 0 is 0
                double n = std::sqrt(n2);
                double denom = 1.0 + n2;
                double f = n / denom;
                double fp = (1.0 - n2) / (denom * denom);
                double coef = fp / n * dot;
                for (int k = 0; k < dim; ++k) dr[k] += f * gr[k] + coef * sr[k];
            }
        });
    }
    return out;
}

// ---- predict ----

Tensor predict(const CapsuleBank& u, const DenseCapsParams& p) {
    if (u.dim != p.in_dim())
        throw ShapeError("predict: capsule dim " + std::to_string(u.dim) +
                         " does not match W in_dim " + std::to_string(p.in_dim()));
    if (u.count != p.in_count())
        throw ShapeError("predict: capsule count " + std::to_string(u.count) +
                         " does not match W in_count " + std::to_string(p.in_count()));
    const int I = p.in_count(), J = p.out_count(), D = p.out_dim(), K = p.in_dim();
    Tensor out({I, J, D});
    const auto& wv = p.W.value();
    const auto& uv = u.poses.value();
    auto& ov = out.value();
    for (int i = 0; i < I; ++i) {
        const double* ui = uv.data() + static_cast<std::size_t>(i) * K;
        for (int j = 0; j < J; ++j) {
            const double* wij = wv.data() + (static_cast<std::size_t>(i) * J + j) * D * K;
            double* oij = ov.data() + (static_cast<std::size_t>(i) * J + j) * D;
            for (int d = 0; d < D; ++d) {
                double acc = 0.0;
                const double* wrow = wij + static_cast<std::size_t>(d) * K;
                for (int k = 0; k < K; ++k) acc += wrow[k] * ui[k];
                oij[d] = acc;
            }
        }
    }
    if (Tape* tape = Tape::active(); tape && (u.poses.requires_grad() || p.W.requires_grad())) {
        out.set_requires_grad(true);
        tape->record(out, [un = u.poses.node(), wn = p.W.node(), on = out.node(), I, J, D, K] {
            for (int i = 0; i < I; ++i) {
                const double* ui = un->value.data() + static_cast<std::size_t>(i) * K;
                double* dui = un->requires_grad ? un->grad.data() + static_cast<std::size_t>(i) * K
                                                : nullptr;
                for (int j = 0; j < J; ++j) {
                    std::size_t base = (static_cast<std::size_t>(i) * J + j) * D;
                    const double* gij = on->grad.data() + base;
                    const double* wij = wn->value.data() + base * K;
                    double* dwij = wn->requires_grad ? wn->grad.data() + base * K : nullptr;
                    for (int d = 0; d < D; ++d) {
                        double g = gij[d];
                        const double* wrow = wij + static_cast<std::size_t>(d) * K;
                        for (int k = 0; k < K; ++k) {
                            if (dwij) dwij[static_cast<std::size_t>(d) * K + k] += g * ui[k];
                            if (dui) dui[k] += g * wrow[k];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- routing ----

namespace {

// s[j, :] = sum_i c[i, j] * u_hat[i, j, :], with c held constant.
Tensor routing_aggregate(const Tensor& u_hat, const std::vector<double>& c, int I, int J, int D) {
    Tensor s({J, D}, 0.0);
    const auto& uv = u_hat.value();
    auto& sv = s.value();
    for (int i = 0; i < I; ++i)
        for (int j = 0; j < J; ++j) {
            double cij = c[static_cast<std::size_t>(i) * J + j];
            const double* uij = uv.data() + (static_cast<std::size_t>(i) * J + j) * D;
            double* sj = sv.data() + static_cast<std::size_t>(j) * D;
            for (int d = 0; d < D; ++d) sj[d] += cij * uij[d];
        }
    if (Tape* tape = Tape::active(); tape && u_hat.requires_grad()) {
        s.set_requires_grad(true);
        tape->record(s, [un = u_hat.node(), sn = s.node(), c, I, J, D] {
            for (int i = 0; i < I; ++i)
                for (int j = 0; j < J; ++j) {
                    double cij = c[static_cast<std::size_t>(i) * J + j];
                    double* duij = un->grad.data() + (static_cast<std::size_t>(i) * J + j) * D;
                    const double* gj = sn->grad.data() + static_cast<std::size_t>(j) * D;
                    for (int d = 0; d < D; ++d) duij[d] += cij * gj[d];
                }
        });
    }
    return s;
}

}  // namespace

std::pair<CapsuleBank, RoutingState> dynamic_routing(const Tensor& u_hat, int iters) {
    if (u_hat.rank() != 3) throw ShapeError("dynamic_routing: u_hat must be [in, out, out_dim]");
    if (iters < 1) throw ContractError("dynamic_routing: iters must be >= 1");
    const int I = u_hat.shape()[0], J = u_hat.shape()[1], D = u_hat.shape()[2];

    RoutingState state;
    state.logits = Tensor({I, J}, 0.0);
    auto& b = state.logits.value();
    const auto& uv = u_hat.value();

    std::vector<double> c(static_cast<std::size_t>(I) * J);
    std::vector<double> v_det(static_cast<std::size_t>(J) * D);

    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < I; ++i) {
            std::vector<double> row(b.begin() + static_cast<std::size_t>(i) * J,
                                    b.begin() + static_cast<std::size_t>(i + 1) * J);
            std::vector<double> sm = softmax_values(row);
            std::copy(sm.begin(), sm.end(), c.begin() + static_cast<std::size_t>(i) * J);
        }
        state.couplings.push_back(Tensor({I, J}, c));
        if (it + 1 == iters) break;

        // detached aggregation + squash, then agreement update
        std::vector<double> s(static_cast<std::size_t>(J) * D, 0.0);
        for (int i = 0; i < I; ++i)
            for (int j = 0; j < J; ++j) {
                double cij = c[static_cast<std::size_t>(i) * J + j];
                const double* uij = uv.data() + (static_cast<std::size_t>(i) * J + j) * D;
                for (int d = 0; d < D; ++d) s[static_cast<std::size_t>(j) * D + d] += cij * uij[d];
            }
        squash_forward(s, J, D, v_det);
        for (int i = 0; i < I; ++i)
            for (int j = 0; j < J; ++j) {
                const double* uij = uv.data() + (static_cast<std::size_t>(i) * J + j) * D;
                double dot = 0.0;
                for (int d = 0; d < D; ++d) dot += uij[d] * v_det[static_cast<std::size_t>(j) * D + d];
                b[static_cast<std::size_t>(i) * J + j] += dot;
            }
    }

    // final pass on the tape with the last couplings as constants
    Tensor s = routing_aggregate(u_hat, c, I, J, D);
    Tensor v = squash(s);
    return {make_bank(v), std::move(state)};
}

// ---- capsule layers ----

CapsuleBank primary_capsules(const Tensor& features, const ConvParams& conv, int caps_dim) {
    Tensor y = conv2d(features, conv);
    const int out_ch = y.shape()[0], oh = y.shape()[1], ow = y.shape()[2];
    if (caps_dim < 1 || out_ch % caps_dim != 0)
        throw ConfigError("primary_capsules: output channels " + std::to_string(out_ch) +
                          " not divisible by capsule dim " + std::to_string(caps_dim));
    const int groups = out_ch / caps_dim;
    const int count = groups * oh * ow;

    // capsule (g, y, x) takes components from channels [g*dim, (g+1)*dim)
    std::vector<std::int64_t> map(static_cast<std::size_t>(count) * caps_dim);
    std::size_t idx = 0;
    for (int g = 0; g < groups; ++g)
        for (int py = 0; py < oh; ++py)
            for (int px = 0; px < ow; ++px)
                for (int d = 0; d < caps_dim; ++d)
                    map[idx++] = (static_cast<std::int64_t>(g * caps_dim + d) * oh + py) * ow + px;

    Tensor poses = gather(y, std::move(map), {count, caps_dim});
    return make_bank(squash(poses));
}

CapsuleBank dense_capsules(const CapsuleBank& u, const DenseCapsParams& p) {
    Tensor u_hat = predict(u, p);
    return dynamic_routing(u_hat, p.routing_iters).first;
}

}  // namespace capsnav
